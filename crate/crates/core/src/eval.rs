//! Reconstruction pipeline variants and plane-fit metrics.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cam_lca::{correct_image, CamLcaModel};
use crate::fusion::{attach_variance, fuse_fields, FusionError, DEFAULT_CI_MULTIPLIER};
use crate::geometry::{triangulate, PixelCoord, StereoCalibration};
use crate::noise::RgbNoise;
use crate::phase::{
    decode_channel, phase_shift_decode_with, phase_to_pixel, DecodeOptions, FringeConfig, PhaseError, PhaseField,
    DEFAULT_MIN_MODULATION,
};
use crate::prj_lca::{correct_up, PrjLcaMaps, ProjectorPixelField};
use crate::raster::{pairwise_sum, ChannelRaster, Image, Raster, Roi};
use crate::simulator::{CaptureImages, ChannelCapture};
use crate::Channel;

/// Radius of the neighbourhood used to repair isolated fringe-order slips.
pub const DEFAULT_REPAIR_RADIUS: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("missing calibration for stage {0}")]
    MissingCalibration(&'static str),
    #[error(transparent)]
    Phase(#[from] PhaseError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("invalid pipeline input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Camera and projector LCA correction, then gated MVU fusion.
    Lcamv,
    /// LCA correction, channels averaged without weights.
    LcaOnly,
    /// No LCA correction, gated MVU fusion.
    MvOnly,
    /// Channels averaged before decoding.
    Mean,
    /// Luma-weighted channels before decoding.
    Yuv,
    /// Green channel only.
    Green,
}

impl Mode {
    pub const ALL: [Mode; 6] = [Mode::Lcamv, Mode::LcaOnly, Mode::MvOnly, Mode::Mean, Mode::Yuv, Mode::Green];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Lcamv => "lcamv",
            Mode::LcaOnly => "lca-only",
            Mode::MvOnly => "mv-only",
            Mode::Mean => "mean",
            Mode::Yuv => "yuv",
            Mode::Green => "green",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == key || (key == "lca" && *m == Mode::LcaOnly) || (key == "mv" && *m == Mode::MvOnly))
            .ok_or_else(|| format!("unknown mode '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub fringe: FringeConfig,
    pub mode: Mode,
    pub ci_multiplier: f64,
    pub min_modulation: f64,
    /// Fringe-order slip repair window radius; `None` disables repair.
    pub repair_radius: Option<usize>,
}

impl PipelineConfig {
    pub fn new(fringe: FringeConfig, mode: Mode) -> Self {
        Self {
            fringe,
            mode,
            ci_multiplier: DEFAULT_CI_MULTIPLIER,
            min_modulation: DEFAULT_MIN_MODULATION,
            repair_radius: Some(DEFAULT_REPAIR_RADIUS),
        }
    }

    fn decode_options(&self) -> DecodeOptions {
        DecodeOptions {
            min_modulation: self.min_modulation,
        }
    }
}

/// Everything the pipeline may need beyond the images.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBundle {
    pub stereo: StereoCalibration,
    pub cam_lca: Option<CamLcaModel>,
    pub prj_lca: Option<PrjLcaMaps>,
    pub noise: Option<RgbNoise>,
}

impl CalibrationBundle {
    pub fn geometry_only(stereo: StereoCalibration) -> Self {
        Self {
            stereo,
            cam_lca: None,
            prj_lca: None,
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Camera-axis depth `s_c` (mm).
    pub depth: ChannelRaster,
    /// Final projector column per camera pixel.
    pub u_p: ChannelRaster,
    /// Fused column variance (px^2) for modes that fuse by noise model.
    pub variance: Option<ChannelRaster>,
    /// Per-channel weights (R, G, B) for modes that fuse by noise model.
    pub weights: Option<[ChannelRaster; 3]>,
    /// `I_A + I_B` per channel (R, G, B).
    pub texture: [ChannelRaster; 3],
}

impl PipelineOutput {
    /// Camera-frame points with 8-bit colours, row-major over valid pixels.
    pub fn colored_points(&self, calib: &StereoCalibration) -> Vec<(Vector3<f64>, [u8; 3])> {
        self.depth
            .iter_valid()
            .map(|(x, y, s)| {
                let p = calib.camera_ray(PixelCoord::new(x as f64, y as f64)) * s;
                let rgb = [0, 1, 2].map(|c| {
                    self.texture[c].get(x, y).map_or(0, |v| v.round().clamp(0.0, 255.0) as u8)
                });
                (p, rgb)
            })
            .collect()
    }
}

fn check_images(images: &CaptureImages, config: &PipelineConfig) -> Result<(), PipelineError> {
    let size = images.size();
    for ch in &images.channels {
        if ch.fringes.len() != config.fringe.steps || ch.gray.len() != config.fringe.graycode_bits() {
            return Err(PipelineError::InvalidInput(format!(
                "expected {} fringe and {} gray-code frames per channel, got {} and {}",
                config.fringe.steps,
                config.fringe.graycode_bits(),
                ch.fringes.len(),
                ch.gray.len()
            )));
        }
        if ch.fringes.iter().chain(&ch.gray).any(|i| i.size() != size) {
            return Err(PipelineError::InvalidInput("frame sizes differ".into()));
        }
    }
    Ok(())
}

fn corrected(capture: &ChannelCapture, cam_lca: Option<&CamLcaModel>, ch: Channel) -> Option<ChannelCapture> {
    let params = cam_lca?.for_channel(ch)?;
    if params.is_identity() {
        return None;
    }
    Some(ChannelCapture {
        fringes: capture.fringes.iter().map(|i| correct_image(i, params)).collect(),
        gray: capture.gray.iter().map(|i| correct_image(i, params)).collect(),
    })
}

struct Decoded {
    phase: PhaseField,
    field: ProjectorPixelField,
}

fn decode(capture: &ChannelCapture, config: &PipelineConfig, ch: Channel) -> Result<Decoded, PipelineError> {
    let (phase, _) = decode_channel(
        &capture.fringes,
        &capture.gray,
        &config.fringe,
        config.decode_options(),
        config.repair_radius,
    )?;
    let field = phase_to_pixel(&phase, config.fringe.wavelength, ch);
    Ok(Decoded { phase, field })
}

fn decode_channels(
    images: &CaptureImages,
    config: &PipelineConfig,
    cam_lca: Option<&CamLcaModel>,
) -> Result<Vec<Decoded>, PipelineError> {
    Channel::ALL
        .iter()
        .map(|&ch| {
            let src = images.channel(ch);
            match corrected(src, cam_lca, ch) {
                Some(c) => decode(&c, config, ch),
                None => decode(src, config, ch),
            }
        })
        .collect()
}

fn blend(images: &CaptureImages, weights: [f64; 3]) -> ChannelCapture {
    let mix = |pick: &dyn Fn(&ChannelCapture) -> &Vec<Image>| -> Vec<Image> {
        let count = pick(&images.channels[0]).len();
        (0..count)
            .map(|i| {
                let frames = [0, 1, 2].map(|c| &pick(&images.channels[c])[i]);
                let (w, h) = frames[0].size();
                Raster::from_fn(w, h, |x, y| {
                    let mut acc = 0.0;
                    for c in 0..3 {
                        acc += weights[c] * frames[c].get(x, y)? as f64;
                    }
                    Some(acc as f32)
                })
            })
            .collect()
    };
    ChannelCapture {
        fringes: mix(&|c| &c.fringes),
        gray: mix(&|c| &c.gray),
    }
}

fn texture_of(images: &CaptureImages, config: &PipelineConfig) -> Result<[ChannelRaster; 3], PipelineError> {
    let mut out = Vec::with_capacity(3);
    for ch in &images.channels {
        out.push(phase_shift_decode_with(&ch.fringes, config.fringe.steps, config.decode_options())?.texture());
    }
    Ok(out.try_into().expect("three channels"))
}

fn triangulate_field(u_p: &ChannelRaster, calib: &StereoCalibration) -> ChannelRaster {
    Raster::from_fn(u_p.width(), u_p.height(), |x, y| {
        let u = u_p.get(x, y)?;
        let t = triangulate(PixelCoord::new(x as f64, y as f64), u, calib).ok()?;
        t.in_front().then_some(t.s_c)
    })
}

fn unweighted_mean(fields: &[ProjectorPixelField]) -> ChannelRaster {
    let (w, h) = fields[0].size();
    Raster::from_fn(w, h, |x, y| {
        let vals: Vec<f64> = fields.iter().filter_map(|f| f.u_p.get(x, y)).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    })
}

/// Runs one reconstruction variant on R, G, B capture stacks.
///
/// Stage order for the full method: camera LCA correction, phase decoding,
/// scaling to projector columns, projector LCA correction, noise-weighted
/// fusion with outlier gating, triangulation.
pub fn run_pipeline(
    images: &CaptureImages,
    bundle: &CalibrationBundle,
    config: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    check_images(images, config)?;
    let calib = &bundle.stereo;
    if images.size() != calib.cam_size() {
        return Err(PipelineError::InvalidInput(format!(
            "frames are {:?} but the camera is {:?}",
            images.size(),
            calib.cam_size()
        )));
    }
    let need_lca = matches!(config.mode, Mode::Lcamv | Mode::LcaOnly);
    let need_noise = matches!(config.mode, Mode::Lcamv | Mode::MvOnly);
    let cam_lca = if need_lca {
        Some(bundle.cam_lca.as_ref().ok_or(PipelineError::MissingCalibration("camera LCA (theta_c)"))?)
    } else {
        None
    };
    let prj_lca = if need_lca {
        Some(bundle.prj_lca.as_ref().ok_or(PipelineError::MissingCalibration("projector LCA (theta_p)"))?)
    } else {
        None
    };
    let noise = if need_noise {
        Some(bundle.noise.as_ref().ok_or(PipelineError::MissingCalibration("noise model (k)"))?)
    } else {
        None
    };

    let single = |capture: ChannelCapture| -> Result<PipelineOutput, PipelineError> {
        let d = decode(&capture, config, Channel::G)?;
        Ok(PipelineOutput {
            depth: triangulate_field(&d.field.u_p, calib),
            u_p: d.field.u_p,
            variance: None,
            weights: None,
            texture: texture_of(images, config)?,
        })
    };
    match config.mode {
        Mode::Green => return single(images.channel(Channel::G).clone()),
        Mode::Mean => return single(blend(images, [1.0 / 3.0; 3])),
        Mode::Yuv => return single(blend(images, [0.299, 0.587, 0.114])),
        _ => {}
    }

    let decoded = decode_channels(images, config, cam_lca)?;
    let texture: [ChannelRaster; 3] = [0, 1, 2].map(|i| decoded[i].phase.texture());
    let mut fields: Vec<ProjectorPixelField> = decoded.iter().map(|d| d.field.clone()).collect();
    if let Some(maps) = prj_lca {
        for f in fields.iter_mut() {
            if let Some(ab) = maps.for_channel(f.channel) {
                *f = correct_up(f, ab, calib);
            }
        }
    }
    if config.mode == Mode::LcaOnly {
        let u_p = unweighted_mean(&fields);
        return Ok(PipelineOutput {
            depth: triangulate_field(&u_p, calib),
            u_p,
            variance: None,
            weights: None,
            texture,
        });
    }
    let noise = noise.expect("checked above");
    let with_var: Vec<ProjectorPixelField> = fields
        .iter()
        .zip(&decoded)
        .map(|(f, d)| attach_variance(f, &d.phase, config.fringe.steps, &noise.get(f.channel), config.fringe.wavelength))
        .collect();
    let fused = fuse_fields([&with_var[0], &with_var[1], &with_var[2]], config.ci_multiplier)?;
    Ok(PipelineOutput {
        depth: triangulate_field(&fused.u_p, calib),
        u_p: fused.u_p,
        variance: Some(fused.variance),
        weights: Some(fused.weights),
        texture,
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("points are collinear, coincident or fewer than three")]
    DegenerateGeometry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneFitReport {
    /// Unit normal with non-negative z.
    pub normal: [f64; 3],
    /// Plane offset: `normal . x = distance`.
    pub distance: f64,
    /// Mean squared orthogonal distance over all points (mm^2).
    pub mse: f64,
    pub n_total: usize,
    pub n_subsampled: usize,
}

impl PlaneFitReport {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        Vector3::from(self.normal).dot(p) - self.distance
    }
}

/// Total-least-squares plane through a seeded random subsample of the
/// points; the error is reported over every point.
pub fn fit_plane(points: &[Vector3<f64>], subsample: usize, seed: u64) -> Result<PlaneFitReport, EvalError> {
    if points.len() < 3 {
        return Err(EvalError::DegenerateGeometry);
    }
    let chosen: Vec<Vector3<f64>> = if subsample > 0 && subsample < points.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, points.len(), subsample).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| points[i]).collect()
    } else {
        points.to_vec()
    };
    if chosen.len() < 3 {
        return Err(EvalError::DegenerateGeometry);
    }
    let n = chosen.len() as f64;
    let coord = |k: usize| pairwise_sum(&chosen.iter().map(|p| p[k]).collect::<Vec<_>>()) / n;
    let centroid = Vector3::new(coord(0), coord(1), coord(2));
    let mut cov = Matrix3::zeros();
    for i in 0..3 {
        for j in i..3 {
            let v = pairwise_sum(
                &chosen
                    .iter()
                    .map(|p| (p[i] - centroid[i]) * (p[j] - centroid[j]))
                    .collect::<Vec<_>>(),
            ) / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (mid, hi) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(hi > 0.0) || mid <= 1e-12 * hi {
        return Err(EvalError::DegenerateGeometry);
    }
    let mut normal: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned().normalize();
    if normal.z < 0.0 {
        normal = -normal;
    }
    let distance = normal.dot(&centroid);
    let sq: Vec<f64> = points.iter().map(|p| (normal.dot(p) - distance).powi(2)).collect();
    Ok(PlaneFitReport {
        normal: [normal.x, normal.y, normal.z],
        distance,
        mse: pairwise_sum(&sq) / points.len() as f64,
        n_total: points.len(),
        n_subsampled: chosen.len(),
    })
}

/// Camera-frame points of the valid depth pixels inside `roi`.
pub fn roi_points(depth: &ChannelRaster, calib: &StereoCalibration, roi: Roi) -> Vec<Vector3<f64>> {
    let roi = roi.clamp(depth.width(), depth.height());
    depth
        .iter_valid()
        .filter(|&(x, y, _)| roi.contains(x, y))
        .map(|(x, y, s)| calib.camera_ray(PixelCoord::new(x as f64, y as f64)) * s)
        .collect()
}

/// Signed orthogonal distance to a fitted plane per valid depth pixel.
pub fn plane_error_map(depth: &ChannelRaster, calib: &StereoCalibration, plane: &PlaneFitReport) -> ChannelRaster {
    Raster::from_fn(depth.width(), depth.height(), |x, y| {
        let p = calib.camera_ray(PixelCoord::new(x as f64, y as f64)) * depth.get(x, y)?;
        Some(plane.signed_distance(&p))
    })
}

/// Mean squared depth error over pixels valid in both rasters (and `roi`).
pub fn depth_mse(depth: &ChannelRaster, truth: &ChannelRaster, roi: Option<Roi>) -> Option<(f64, usize)> {
    let roi = roi.unwrap_or(Roi::full(depth.width(), depth.height()));
    let sq: Vec<f64> = depth
        .iter_valid()
        .filter(|&(x, y, _)| roi.contains(x, y))
        .filter_map(|(x, y, d)| truth.get(x, y).map(|t| (d - t) * (d - t)))
        .collect();
    (!sq.is_empty()).then(|| (pairwise_sum(&sq) / sq.len() as f64, sq.len()))
}
