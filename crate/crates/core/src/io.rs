//! File formats: F32R float rasters, PNG frame stacks, the calibration
//! bundle, ASCII PLY point clouds and flat key/value pipeline configs.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cam_lca::CamLcaModel;
use crate::eval::{CalibrationBundle, Mode};
use crate::geometry::StereoCalibration;
use crate::noise::RgbNoise;
use crate::prj_lca::{AlphaBeta, PrjLcaMaps};
use crate::raster::{Image, Raster, Sample};
use crate::simulator::{CaptureImages, ChannelCapture};
use crate::Channel;

const F32R_MAGIC: &[u8; 4] = b"F32R";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, msg: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, IoError>;

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| IoError::io(path, e))?))
}

/// Encodes a raster as `F32R`: magic, LE u32 width and height, u8 mask flag,
/// row-major f32 samples, then the u8 mask if the flag is set. The mask is
/// written only when some pixel is invalid.
pub fn encode_f32r<T: Sample>(r: &Raster<T>) -> Vec<u8> {
    let has_mask = r.mask().iter().any(|&m| !m);
    let mut out = Vec::with_capacity(13 + r.len() * 5);
    out.extend_from_slice(F32R_MAGIC);
    out.extend_from_slice(&(r.width() as u32).to_le_bytes());
    out.extend_from_slice(&(r.height() as u32).to_le_bytes());
    out.push(u8::from(has_mask));
    for (&v, &m) in r.data().iter().zip(r.mask()) {
        let v = if m { v.to_f64() as f32 } else { 0.0 };
        out.extend_from_slice(&v.to_le_bytes());
    }
    if has_mask {
        out.extend(r.mask().iter().map(|&m| u8::from(m)));
    }
    out
}

pub fn decode_f32r<T: Sample>(bytes: &[u8]) -> std::result::Result<Raster<T>, String> {
    if bytes.len() < 13 || &bytes[..4] != F32R_MAGIC {
        return Err("not an F32R raster".into());
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let has_mask = match bytes[12] {
        0 => false,
        1 => true,
        f => return Err(format!("bad mask flag {f}")),
    };
    let n = w.checked_mul(h).ok_or("dimensions overflow")?;
    let expected = 13 + n * 4 + if has_mask { n } else { 0 };
    if bytes.len() != expected {
        return Err(format!("expected {expected} bytes, found {}", bytes.len()));
    }
    let data: Vec<T> = bytes[13..13 + 4 * n]
        .chunks_exact(4)
        .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    let mask = if has_mask {
        bytes[13 + 4 * n..].iter().map(|&b| b != 0).collect()
    } else {
        vec![true; n]
    };
    Ok(Raster::from_parts(w, h, data, mask))
}

pub fn write_f32r<T: Sample>(path: &Path, r: &Raster<T>) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(&encode_f32r(r)).map_err(|e| IoError::io(path, e))?;
    f.flush().map_err(|e| IoError::io(path, e))
}

pub fn read_f32r<T: Sample>(path: &Path) -> Result<Raster<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| IoError::io(path, e))?;
    decode_f32r(&bytes).map_err(|m| IoError::format(path, m))
}

/// PNG sample depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Writes a grayscale PNG. Values are on the 8-bit scale; 16-bit files store
/// `value * 257` so that both depths share it. Invalid pixels are written as 0.
pub fn write_png(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let sample = |i: usize| if img.mask()[i] { img.data()[i] as f64 } else { 0.0 };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    let res = match depth {
        BitDepth::Eight => {
            let buf: Vec<u8> = (0..img.len()).map(|i| sample(i).round().clamp(0.0, 255.0) as u8).collect();
            image::GrayImage::from_raw(w, h, buf).expect("buffer size").save(path)
        }
        BitDepth::Sixteen => {
            let buf: Vec<u16> = (0..img.len())
                .map(|i| (sample(i) * 257.0).round().clamp(0.0, 65535.0) as u16)
                .collect();
            image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, buf)
                .expect("buffer size")
                .save(path)
        }
    };
    res.map_err(|e| IoError::format(path, e.to_string()))
}

/// Reads an 8- or 16-bit grayscale PNG onto the 8-bit intensity scale.
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| IoError::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match img {
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f32::from).collect(),
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| v as f32 / 257.0).collect(),
        other => {
            return Err(IoError::format(
                path,
                format!("expected a grayscale PNG, found {:?}", other.color()),
            ))
        }
    };
    Ok(Raster::from_vec(w, h, data))
}

fn frame_name(kind: &str, i: usize) -> String {
    format!("{kind}_{i:02}.png")
}

/// Writes `dir/{R,G,B}/fringe_NN.png` and `gray_NN.png`.
pub fn write_capture(dir: &Path, images: &CaptureImages, depth: BitDepth) -> Result<()> {
    for ch in Channel::ALL {
        let sub = dir.join(ch.name());
        let cap = images.channel(ch);
        for (i, img) in cap.fringes.iter().enumerate() {
            write_png(&sub.join(frame_name("fringe", i)), img, depth)?;
        }
        for (i, img) in cap.gray.iter().enumerate() {
            write_png(&sub.join(frame_name("gray", i)), img, depth)?;
        }
    }
    Ok(())
}

fn read_sequence(dir: &Path, kind: &str) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    loop {
        let p = dir.join(frame_name(kind, out.len()));
        if !p.exists() {
            break;
        }
        out.push(read_png(&p)?);
    }
    Ok(out)
}

/// Reads a capture directory written by [`write_capture`].
pub fn read_capture(dir: &Path) -> Result<CaptureImages> {
    let mut channels = Vec::with_capacity(3);
    for ch in Channel::ALL {
        let sub = dir.join(ch.name());
        let fringes = read_sequence(&sub, "fringe")?;
        if fringes.is_empty() {
            return Err(IoError::format(&sub, "no fringe_00.png found"));
        }
        channels.push(ChannelCapture {
            fringes,
            gray: read_sequence(&sub, "gray")?,
        });
    }
    Ok(CaptureImages {
        channels: channels.try_into().expect("three channels"),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| IoError::format(path, e.to_string()))?;
    f.write_all(b"\n").and_then(|_| f.flush()).map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct MapPaths {
    pub alpha: String,
    pub beta: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct PrjLcaPaths {
    #[serde(rename = "R")]
    pub r: MapPaths,
    #[serde(rename = "B")]
    pub b: MapPaths,
}

/// On-disk calibration bundle. Projector LCA maps live in F32R files whose
/// paths are relative to the bundle file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleDoc {
    pub stereo: StereoCalibration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_c: Option<CamLcaModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_p: Option<PrjLcaPaths>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<RgbNoise>,
}

fn map_file(stem: &str, ch: Channel, which: &str) -> String {
    format!("{stem}.theta_p.{}.{which}.f32r", ch.name())
}

/// Writes the bundle JSON plus its projector maps next to it.
pub fn save_bundle(path: &Path, bundle: &CalibrationBundle) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new(""));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("calib");
    let theta_p = match &bundle.prj_lca {
        Some(maps) => {
            let mut paths = PrjLcaPaths::default();
            for (ch, ab, slot) in [(Channel::R, &maps.r, &mut paths.r), (Channel::B, &maps.b, &mut paths.b)] {
                slot.alpha = map_file(stem, ch, "alpha");
                slot.beta = map_file(stem, ch, "beta");
                write_f32r(&dir.join(&slot.alpha), &ab.alpha)?;
                write_f32r(&dir.join(&slot.beta), &ab.beta)?;
            }
            Some(paths)
        }
        None => None,
    };
    write_json(
        path,
        &BundleDoc {
            stereo: bundle.stereo.clone(),
            theta_c: bundle.cam_lca,
            theta_p,
            k: bundle.noise,
        },
    )
}

pub fn load_bundle(path: &Path) -> Result<CalibrationBundle> {
    let doc: BundleDoc = read_json(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let prj_lca = match doc.theta_p {
        Some(p) => {
            let load = |m: &MapPaths| -> Result<AlphaBeta> {
                let mut alpha = read_f32r(&dir.join(&m.alpha))?;
                let beta = read_f32r(&dir.join(&m.beta))?;
                if !alpha.same_size(&beta) {
                    return Err(IoError::format(&dir.join(&m.beta), "alpha and beta sizes differ"));
                }
                alpha.restrict_to(&beta);
                Ok(AlphaBeta { alpha, beta })
            };
            Some(PrjLcaMaps {
                r: load(&p.r)?,
                b: load(&p.b)?,
            })
        }
        None => None,
    };
    Ok(CalibrationBundle {
        stereo: doc.stereo,
        cam_lca: doc.theta_c,
        prj_lca,
        noise: doc.k,
    })
}

/// ASCII PLY with `x y z red green blue` per vertex.
pub fn write_ply(path: &Path, points: &[(Vector3<f64>, [u8; 3])]) -> Result<()> {
    let mut f = create(path)?;
    let mut body = String::with_capacity(points.len() * 48 + 256);
    body.push_str("ply\nformat ascii 1.0\n");
    body.push_str(&format!("element vertex {}\n", points.len()));
    body.push_str("property float x\nproperty float y\nproperty float z\n");
    body.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    use std::fmt::Write as _;
    for (p, c) in points {
        let _ = writeln!(body, "{:.6} {:.6} {:.6} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
    }
    f.write_all(body.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| IoError::io(path, e))
}

/// Reads the vertices of an ASCII PLY written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<Vec<(Vector3<f64>, [u8; 3])>> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let (_, body) = text
        .split_once("end_header\n")
        .ok_or_else(|| IoError::format(path, "missing end_header"))?;
    body.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 6 {
                return Err(IoError::format(path, format!("bad vertex line '{l}'")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| IoError::format(path, e.to_string()));
            let byte = |s: &str| s.parse::<u8>().map_err(|e| IoError::format(path, e.to_string()));
            Ok((
                Vector3::new(num(f[0])?, num(f[1])?, num(f[2])?),
                [byte(f[3])?, byte(f[4])?, byte(f[5])?],
            ))
        })
        .collect()
}

/// Corner correspondences for camera LCA calibration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CornerFile {
    pub reference: Vec<[f64; 2]>,
    #[serde(rename = "R")]
    pub r: Vec<[f64; 2]>,
    #[serde(rename = "B")]
    pub b: Vec<[f64; 2]>,
}

/// Flat `key = value` pipeline settings; every key is optional and command
/// line flags take precedence.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub mode: Option<Mode>,
    pub ci_multiplier: Option<f64>,
    pub min_modulation: Option<f64>,
    pub repair_radius: Option<usize>,
    pub wavelength: Option<f64>,
    pub periods: Option<usize>,
    pub steps: Option<usize>,
    pub calib: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub threads: Option<usize>,
}

pub fn parse_config(text: &str) -> std::result::Result<ConfigFile, String> {
    toml::from_str(text).map_err(|e| e.to_string())
}

pub fn read_config(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_config(&text).map_err(|m| IoError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::ChannelRaster;

    #[test]
    fn f32r_roundtrip_with_mask() {
        let mut r = Raster::from_fn(5, 3, |x, y| Some((x * 10 + y) as f64 * 0.25));
        r.invalidate(2, 1);
        let back: ChannelRaster = decode_f32r(&encode_f32r(&r)).unwrap();
        assert_eq!(back.size(), (5, 3));
        assert!(!back.is_valid(2, 1));
        for (x, y, v) in r.iter_valid() {
            assert_eq!(back.get(x, y), Some(v));
        }
    }

    #[test]
    fn f32r_layout() {
        let r = ChannelRaster::filled(2, 1, 1.5);
        let b = encode_f32r(&r);
        assert_eq!(&b[..4], b"F32R");
        assert_eq!(&b[4..8], &2u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(b[12], 0);
        assert_eq!(b.len(), 13 + 8);
        assert!(decode_f32r::<f64>(&b[..20]).is_err());
        assert!(decode_f32r::<f64>(b"NOPE0000000000000").is_err());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(7, 4, |x, y| Some((x * 30 + y) as f32));
        let p8 = dir.path().join("a.png");
        write_png(&p8, &img, BitDepth::Eight).unwrap();
        assert_eq!(read_png(&p8).unwrap(), img);
        let frac = Image::from_fn(7, 4, |x, y| Some(x as f32 * 12.3 + y as f32));
        let p16 = dir.path().join("b.png");
        write_png(&p16, &frac, BitDepth::Sixteen).unwrap();
        let back = read_png(&p16).unwrap();
        for (x, y, v) in frac.iter_valid() {
            assert!((back.at(x, y) - v).abs() <= 0.5 / 257.0 + 1e-6);
        }
    }

    #[test]
    fn ply_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ply");
        let pts = vec![(Vector3::new(1.0, -2.5, 300.125), [255, 0, 7])];
        write_ply(&p, &pts).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 1\n"));
        assert!(text.ends_with("1.000000 -2.500000 300.125000 255 0 7\n"));
        assert_eq!(read_ply(&p).unwrap(), pts);
    }

    #[test]
    fn config_parsing() {
        let c = parse_config("mode = \"lcamv\"\nci_multiplier = 3.0\nsteps = 18\n").unwrap();
        assert_eq!(c.mode, Some(Mode::Lcamv));
        assert_eq!(c.steps, Some(18));
        assert!(parse_config("colour = 1").is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_f32r::<f64>(Path::new("/nonexistent/x.f32r")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.f32r"));
    }
}
