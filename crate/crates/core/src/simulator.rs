//! Synthetic camera/projector rig.
//!
//! Renders per-channel fringe and gray-code captures of planar or depth-map
//! scenes with injected camera LCA, projector LCA, channel cross-talk and
//! Poisson–Gaussian noise, and keeps the noiseless ground truth needed to
//! check every calibration and reconstruction stage.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cam_lca::{CamLcaModel, CamLcaParams};
use crate::geometry::{intrinsics, rotation_y, PixelCoord, StereoCalibration};
use crate::noise::{NoiseParams, RgbNoise};
use crate::phase::{graycode_lit, phase_shifts, FringeConfig, FRINGE_AMPLITUDE, FRINGE_OFFSET};
use crate::raster::{ChannelRaster, Image, Roi};
use crate::eval::CalibrationBundle;
use crate::prj_lca::{AlphaBeta, PrjLcaMaps};
use crate::Channel;

/// Full-scale value of a lit gray-code stripe.
pub const GRAY_LEVEL: f64 = 255.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("no camera pixel sees lit scene geometry")]
    SceneNotVisible,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Camera 1920x1200 (f = 1600 px) and projector 912x1140 (f = 1400 px), with
/// an 80 mm baseline toed in to converge 320 mm in front of the camera.
pub fn default_rig() -> StereoCalibration {
    rig((1920, 1200), 1600.0, (912, 1140), 1400.0)
}

/// Quarter-scale version of [`default_rig`] for quick experiments.
pub fn compact_rig() -> StereoCalibration {
    rig((480, 300), 400.0, (228, 285), 350.0)
}

fn rig(cam: (usize, usize), f_c: f64, prj: (usize, usize), f_p: f64) -> StereoCalibration {
    let baseline: f64 = 80.0;
    let converge: f64 = 320.0;
    let r = rotation_y((baseline / converge).atan());
    let centre = Vector3::new(baseline, 0.0, 0.0);
    StereoCalibration::new(
        intrinsics(f_c, cam.0 as f64 / 2.0, cam.1 as f64 / 2.0),
        intrinsics(f_p, prj.0 as f64 / 2.0, prj.1 as f64 / 2.0),
        r,
        -(r * centre),
        cam,
        prj,
    )
    .expect("preset rig is valid")
}

/// Fringe settings matched to a rig: 36 px wavelength and 32 periods for the
/// full-size projector, 18 px and 16 periods for the compact one.
pub fn fringe_for(calib: &StereoCalibration, steps: usize) -> FringeConfig {
    let prj = calib.prj_size();
    let (wavelength, periods) = if prj.0 > 512 { (36.0, 32) } else { (18.0, 16) };
    FringeConfig::new(wavelength, periods, steps, prj).expect("preset fringe config is valid")
}

/// A typical camera LCA for the given sensor size, about 0.3 px at the
/// corners. `sign` flips the direction (red and blue usually disagree).
pub fn typical_cam_lca(cam_size: (usize, usize), sign: f64) -> CamLcaParams {
    let (cx, cy) = (cam_size.0 as f64 / 2.0, cam_size.1 as f64 / 2.0);
    let r = cx.hypot(cy);
    CamLcaParams {
        a: 1.0,
        du: -cx,
        dv: -cy,
        c: [
            sign * 0.15 / r,
            sign * 0.06 / (r * r * r),
            -0.04 / (r * r),
            -0.01 / (r * r),
        ],
    }
}

pub fn typical_cam_lca_model(cam_size: (usize, usize)) -> CamLcaModel {
    CamLcaModel {
        r: typical_cam_lca(cam_size, 1.0),
        b: typical_cam_lca(cam_size, -0.8),
    }
}

/// Projector LCA of one channel as `delta = alpha z_p + beta` with `alpha`
/// and `beta` affine in normalized projector coordinates
/// `x = (u - W/2) / (W/2)`, `y = (v - H/2) / (H/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearPrjLca {
    /// `[a0, ax, ay]`, px/mm.
    pub alpha: [f64; 3],
    /// `[b0, bx, by]`, px.
    pub beta: [f64; 3],
}

impl LinearPrjLca {
    pub fn constant(delta: f64) -> Self {
        Self {
            alpha: [0.0; 3],
            beta: [delta, 0.0, 0.0],
        }
    }

    fn normalized(u: f64, v: f64, prj: (usize, usize)) -> (f64, f64) {
        let (hw, hh) = (prj.0 as f64 / 2.0, prj.1 as f64 / 2.0);
        ((u - hw) / hw, (v - hh) / hh)
    }

    pub fn alpha_at(&self, u: f64, v: f64, prj: (usize, usize)) -> f64 {
        let (x, y) = Self::normalized(u, v, prj);
        self.alpha[0] + self.alpha[1] * x + self.alpha[2] * y
    }

    pub fn beta_at(&self, u: f64, v: f64, prj: (usize, usize)) -> f64 {
        let (x, y) = Self::normalized(u, v, prj);
        self.beta[0] + self.beta[1] * x + self.beta[2] * y
    }

    #[inline]
    pub fn delta(&self, u: f64, v: f64, z: f64, prj: (usize, usize)) -> f64 {
        self.alpha_at(u, v, prj) * z + self.beta_at(u, v, prj)
    }

    /// Samples the model at every projector pixel.
    pub fn to_maps(&self, prj: (usize, usize)) -> AlphaBeta {
        let at = |f: fn(&Self, f64, f64, (usize, usize)) -> f64| {
            ChannelRaster::from_fn(prj.0, prj.1, |x, y| Some(f(self, x as f64, y as f64, prj)))
        };
        AlphaBeta {
            alpha: at(Self::alpha_at),
            beta: at(Self::beta_at),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrjLcaTruth {
    #[serde(rename = "R")]
    pub r: LinearPrjLca,
    #[serde(rename = "B")]
    pub b: LinearPrjLca,
}

impl PrjLcaTruth {
    /// Red shifted by about +0.2..0.3 px with a negative depth slope; blue
    /// varying across the field from -0.2 to +0.2 px with a row-dependent slope.
    pub fn typical() -> Self {
        let a_r = [-0.0006, -0.00018, 0.0];
        Self {
            r: LinearPrjLca {
                alpha: a_r,
                beta: [0.23 - 260.0 * a_r[0], -260.0 * a_r[1], 0.0],
            },
            b: LinearPrjLca {
                alpha: [0.0, 0.0, -0.0005],
                beta: [0.0, 0.2, 0.13],
            },
        }
    }

    pub fn for_channel(&self, ch: Channel) -> Option<&LinearPrjLca> {
        match ch {
            Channel::R => Some(&self.r),
            Channel::G => None,
            Channel::B => Some(&self.b),
        }
    }

    pub fn to_maps(&self, prj: (usize, usize)) -> PrjLcaMaps {
        PrjLcaMaps {
            r: self.r.to_maps(prj),
            b: self.b.to_maps(prj),
        }
    }

    #[inline]
    fn delta(&self, k: usize, u: f64, v: f64, z: f64, prj: (usize, usize)) -> f64 {
        match k {
            0 => self.r.delta(u, v, z, prj),
            2 => self.b.delta(u, v, z, prj),
            _ => 0.0,
        }
    }
}

/// The calibration a perfect calibration procedure would produce for `scene`.
pub fn truth_bundle(scene: &Scene, calib: &StereoCalibration) -> CalibrationBundle {
    CalibrationBundle {
        stereo: calib.clone(),
        cam_lca: Some(scene.cam_lca),
        prj_lca: Some(scene.prj_lca.to_maps(calib.prj_size())),
        noise: Some(scene.noise),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneGeometry {
    /// `normal . x = distance` in camera coordinates (mm).
    Plane { normal: Vector3<f64>, distance: f64 },
    /// Camera-axis depth per camera pixel (mm); sampled bilinearly.
    DepthMap(ChannelRaster),
}

impl SceneGeometry {
    pub fn fronto_parallel(depth: f64) -> Self {
        Self::Plane {
            normal: Vector3::z(),
            distance: depth,
        }
    }

    /// Camera-axis depth of the surface along the ray through a pixel.
    fn depth_along(&self, ray: &Vector3<f64>, pixel: PixelCoord) -> Option<f64> {
        let s = match self {
            Self::Plane { normal, distance } => {
                let den = normal.dot(ray);
                if den.abs() < 1e-12 {
                    return None;
                }
                distance / den
            }
            Self::DepthMap(d) => d.bilinear(pixel.u, pixel.v)?,
        };
        (s > 0.0 && s.is_finite()).then_some(s)
    }
}

/// Per-channel reflectance in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Reflectance {
    Uniform([f64; 3]),
    /// A `rows x cols` board of square patches (camera-frame mm), its top-left
    /// corner at `origin`; `outside` elsewhere. Patches are row-major.
    Patches {
        origin: [f64; 2],
        patch: f64,
        rows: usize,
        cols: usize,
        colors: Vec<[f64; 3]>,
        outside: [f64; 3],
    },
}

impl Reflectance {
    pub fn at(&self, point: &Vector3<f64>) -> [f64; 3] {
        match self {
            Self::Uniform(c) => *c,
            Self::Patches {
                origin,
                patch,
                rows,
                cols,
                colors,
                outside,
            } => {
                let cx = ((point.x - origin[0]) / patch).floor();
                let cy = ((point.y - origin[1]) / patch).floor();
                if cx < 0.0 || cy < 0.0 || cx >= *cols as f64 || cy >= *rows as f64 {
                    *outside
                } else {
                    colors[cy as usize * cols + cx as usize]
                }
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        match self {
            Self::Uniform(c) if ok(c) => Ok(()),
            Self::Patches {
                rows,
                cols,
                colors,
                outside,
                patch,
                ..
            } if colors.len() == rows * cols && colors.iter().all(ok) && ok(outside) && *patch > 0.0 => Ok(()),
            _ => Err(SimError::InvalidScene("reflectance must lie in [0, 1]".into())),
        }
    }
}

/// Flips the least significant gray-code bit of one channel inside a camera
/// rectangle, producing one-period unwrapping errors there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderFault {
    pub channel: Channel,
    pub roi: Roi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub geometry: SceneGeometry,
    pub reflectance: Reflectance,
    pub cam_lca: CamLcaModel,
    pub prj_lca: PrjLcaTruth,
    pub noise: RgbNoise,
    /// `crosstalk[c][k]`: response of camera channel `c` to projector light `k`.
    pub crosstalk: [[f64; 3]; 3],
    pub quantize: bool,
    pub seed: u64,
    pub fault: Option<OrderFault>,
}

pub const IDENTITY_CROSSTALK: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Scene {
    /// Noiseless white plane with no aberrations.
    pub fn plane(depth: f64) -> Self {
        Self {
            geometry: SceneGeometry::fronto_parallel(depth),
            reflectance: Reflectance::Uniform([1.0; 3]),
            cam_lca: CamLcaModel::identity(),
            prj_lca: PrjLcaTruth::default(),
            noise: RgbNoise::zero(),
            crosstalk: IDENTITY_CROSSTALK,
            quantize: false,
            seed: 0,
            fault: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.reflectance.validate()?;
        if self.crosstalk.iter().flatten().any(|&m| !(0.0..=1.0).contains(&m))
            || self.crosstalk.iter().any(|row| row.iter().sum::<f64>() > 1.0 + 1e-12)
        {
            return Err(SimError::InvalidScene("cross-talk rows must be non-negative and sum to at most 1".into()));
        }
        self.cam_lca.r.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
        self.cam_lca.b.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
        Ok(())
    }
}

/// `rows x cols` patches of seeded random colour on a plane 320 mm away,
/// 24 mm patches centred on the optical axis.
pub fn make_colorboard_scene(rows: usize, cols: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colors = (0..rows * cols)
        .map(|_| [0, 1, 2].map(|_| rng.gen_range(0.05..=1.0)))
        .collect();
    let patch = 24.0;
    Scene {
        reflectance: Reflectance::Patches {
            origin: [-patch * cols as f64 / 2.0, -patch * rows as f64 / 2.0],
            patch,
            rows,
            cols,
            colors,
            outside: [1.0; 3],
        },
        seed,
        ..Scene::plane(320.0)
    }
}

/// Captured frames of one camera channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCapture {
    pub fringes: Vec<Image>,
    pub gray: Vec<Image>,
}

/// Frames for R, G, B.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureImages {
    pub channels: [ChannelCapture; 3],
}

impl CaptureImages {
    pub fn channel(&self, ch: Channel) -> &ChannelCapture {
        &self.channels[ch.index()]
    }

    pub fn size(&self) -> (usize, usize) {
        self.channels[1].fringes.first().map_or((0, 0), |i| i.size())
    }
}

/// Noiseless truth in the green (reference) camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Camera-axis depth `s_c`.
    pub depth: ChannelRaster,
    pub u_p: ChannelRaster,
    pub v_p: ChannelRaster,
    /// Projector-axis depth `s_p`.
    pub z_p: ChannelRaster,
    /// Injected `u_p(G) - u_p(R)` and `u_p(G) - u_p(B)`.
    pub delta_r: ChannelRaster,
    pub delta_b: ChannelRaster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureStack {
    pub config: FringeConfig,
    pub images: CaptureImages,
    pub truth: GroundTruth,
}

#[derive(Clone, Copy)]
struct Hit {
    point: Vector3<f64>,
    u_p: f64,
    v_p: f64,
    z_p: f64,
    lit: bool,
}

fn trace(scene: &Scene, calib: &StereoCalibration, pixel: PixelCoord) -> Option<Hit> {
    let ray = calib.camera_ray(pixel);
    let s = scene.geometry.depth_along(&ray, pixel)?;
    let point = ray * s;
    let p = calib.project(&point);
    if !(p.s_p > 0.0) {
        return None;
    }
    let (pw, ph) = calib.prj_size();
    let lit = p.prj.u >= 0.0 && p.prj.v >= 0.0 && p.prj.u < pw as f64 && p.prj.v < ph as f64;
    Some(Hit {
        point,
        u_p: p.prj.u,
        v_p: p.prj.v,
        z_p: p.s_p,
        lit,
    })
}

fn noise_stream(channel: usize, image: usize, row: usize) -> u64 {
    ((channel as u64) << 56) | ((image as u64) << 32) | row as u64
}

fn noisy_row(clean: &[f64], noise: &NoiseParams, seed: u64, stream: u64, quantize: bool) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let noiseless = noise.k0 == 0.0 && noise.k1 == 0.0;
    clean
        .iter()
        .map(|&mu| {
            let v = if noiseless {
                mu
            } else {
                let z: f64 = StandardNormal.sample(&mut rng);
                mu + noise.variance(mu).sqrt() * z
            };
            if quantize {
                v.round().clamp(0.0, 255.0) as f32
            } else {
                v as f32
            }
        })
        .collect()
}

/// Renders the full capture stack.
///
/// Camera channel `c` at pixel `q` sees the surface point behind `p`, where
/// `p + delta_c(p) = q` under the channel's camera LCA. Projector light `k`
/// reaches that point from column `u_p - delta_k(u_p, v_p, z_p)`, so the
/// decoded green-minus-channel difference equals the injected projector LCA.
pub fn render(scene: &Scene, calib: &StereoCalibration, config: &FringeConfig) -> Result<CaptureStack, SimError> {
    scene.validate()?;
    config.validate().map_err(|e| SimError::InvalidScene(e.to_string()))?;
    if calib.prj_size() != config.prj_size {
        return Err(SimError::InvalidScene("fringe config and rig disagree on projector size".into()));
    }
    let truth = ground_truth(scene, calib);
    if truth.u_p.valid_count() == 0 {
        return Err(SimError::SceneNotVisible);
    }
    let channels = [0, 1, 2].map(|c| render_channel(scene, calib, config, c));
    Ok(CaptureStack {
        config: *config,
        images: CaptureImages { channels },
        truth,
    })
}

fn ground_truth(scene: &Scene, calib: &StereoCalibration) -> GroundTruth {
    let (w, h) = calib.cam_size();
    let prj = calib.prj_size();
    let hits = crate::raster::Raster::<(f64, f64, f64, f64)>::from_fn(w, h, |x, y| {
        let hit = trace(scene, calib, PixelCoord::new(x as f64, y as f64))?;
        hit.lit.then_some((hit.point.z, hit.u_p, hit.v_p, hit.z_p))
    });
    let delta = |k: usize| hits.map(|p| scene.prj_lca.delta(k, p.1, p.2, p.3, prj));
    GroundTruth {
        depth: hits.map(|p| p.0),
        u_p: hits.map(|p| p.1),
        v_p: hits.map(|p| p.2),
        z_p: hits.map(|p| p.3),
        delta_r: delta(0),
        delta_b: delta(2),
    }
}

fn render_channel(scene: &Scene, calib: &StereoCalibration, config: &FringeConfig, c: usize) -> ChannelCapture {
    let (w, h) = calib.cam_size();
    let prj = calib.prj_size();
    let shifts = phase_shifts(config.steps);
    let bits = config.graycode_bits();
    let n_img = shifts.len() + bits;
    let lca = scene.cam_lca.for_channel(Channel::ALL[c]).copied();
    let weights = scene.crosstalk[c];
    let noise = scene.noise.get(Channel::ALL[c]);
    let fault = scene.fault.filter(|f| f.channel.index() == c);

    let rows: Vec<Vec<Vec<f32>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut clean = vec![vec![0.0f64; w]; n_img];
            for x in 0..w {
                let (qu, qv) = (x as f64, y as f64);
                let (pu, pv) = match &lca {
                    Some(p) => p.undistort(qu, qv),
                    None => (qu, qv),
                };
                let Some(hit) = trace(scene, calib, PixelCoord::new(pu, pv)) else {
                    continue;
                };
                if !hit.lit {
                    continue;
                }
                let rho = scene.reflectance.at(&hit.point);
                let flip = fault.is_some_and(|f| f.roi.contains(x, y));
                for k in 0..3 {
                    let gain = weights[k] * rho[k];
                    if gain == 0.0 {
                        continue;
                    }
                    let u_k = hit.u_p - scene.prj_lca.delta(k, hit.u_p, hit.v_p, hit.z_p, prj);
                    let theta = crate::phase::carrier_phase(u_k, config.wavelength);
                    for (i, &d) in shifts.iter().enumerate() {
                        clean[i][x] += gain * (FRINGE_OFFSET + FRINGE_AMPLITUDE * (theta - d).cos());
                    }
                    for b in 0..bits {
                        let mut lit = graycode_lit(u_k, b, bits, config.wavelength);
                        if flip && b + 1 == bits {
                            lit = !lit;
                        }
                        if lit {
                            clean[shifts.len() + b][x] += gain * GRAY_LEVEL;
                        }
                    }
                }
            }
            clean
                .iter()
                .enumerate()
                .map(|(i, row)| noisy_row(row, &noise, scene.seed, noise_stream(c, i, y), scene.quantize))
                .collect()
        })
        .collect();

    let mut images: Vec<Vec<f32>> = (0..n_img).map(|_| Vec::with_capacity(w * h)).collect();
    for row in rows {
        for (img, r) in images.iter_mut().zip(row) {
            img.extend_from_slice(&r);
        }
    }
    let mut images = images.into_iter().map(|d| Image::from_vec(w, h, d));
    let fringes = images.by_ref().take(shifts.len()).collect();
    let gray = images.collect();
    ChannelCapture { fringes, gray }
}

/// Two independently noised captures of a uniform projection at `level`,
/// per channel `[R, G, B]`.
pub fn render_flat_pair(scene: &Scene, calib: &StereoCalibration, level: f64, index: usize) -> [[Image; 2]; 3] {
    let (w, h) = calib.cam_size();
    [0, 1, 2].map(|c| {
        let noise = scene.noise.get(Channel::ALL[c]);
        let weights = scene.crosstalk[c];
        [0, 1].map(|member| {
            let rows: Vec<Vec<f32>> = (0..h)
                .into_par_iter()
                .map(|y| {
                    let clean: Vec<f64> = (0..w)
                        .map(|x| {
                            let pixel = PixelCoord::new(x as f64, y as f64);
                            let rho = match trace(scene, calib, pixel) {
                                Some(hit) => scene.reflectance.at(&hit.point),
                                None => [0.0; 3],
                            };
                            (0..3).map(|k| weights[k] * rho[k] * level).sum()
                        })
                        .collect();
                    // Image ids above 2^16 keep flat-field streams apart from fringe streams.
                    let image = (1 << 16) + 2 * index + member;
                    noisy_row(&clean, &noise, scene.seed, noise_stream(c, image, y), scene.quantize)
                })
                .collect();
            Image::from_vec(w, h, rows.concat())
        })
    })
}

/// Flat-field pairs at every level.
pub fn render_flat_pairs(scene: &Scene, calib: &StereoCalibration, levels: &[f64]) -> Vec<[[Image; 2]; 3]> {
    levels
        .iter()
        .enumerate()
        .map(|(i, &l)| render_flat_pair(scene, calib, l, i))
        .collect()
}

/// `P` levels spread evenly over `[lo, hi]`.
pub fn flat_levels(count: usize, lo: f64, hi: f64) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

/// Checkerboard corners on a grid over the sensor and their positions in a
/// channel with the given LCA, optionally jittered.
pub fn synthetic_corners(
    cam_size: (usize, usize),
    grid: (usize, usize),
    params: &CamLcaParams,
    jitter: f64,
    seed: u64,
) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cam_size.0 as f64, cam_size.1 as f64);
    let (cols, rows) = grid;
    let mut reference = Vec::with_capacity(cols * rows);
    let mut observed = Vec::with_capacity(cols * rows);
    for j in 0..rows {
        for i in 0..cols {
            let u = w * (i as f64 + 0.5) / cols as f64;
            let v = h * (j as f64 + 0.5) / rows as f64;
            let (dx, dy) = params.delta(u, v);
            let (jx, jy): (f64, f64) = if jitter > 0.0 {
                (
                    jitter * Distribution::<f64>::sample(&StandardNormal, &mut rng),
                    jitter * Distribution::<f64>::sample(&StandardNormal, &mut rng),
                )
            } else {
                (0.0, 0.0)
            };
            reference.push((u, v));
            observed.push((u + dx + jx, v + dy + jy));
        }
    }
    (reference, observed)
}

/// Fronto-parallel plane depths for projector-LCA calibration poses.
pub fn calibration_depths(count: usize, near: f64, far: f64) -> Vec<f64> {
    flat_levels(count, near, far)
}

/// Serializable record of how a dataset was produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimManifest {
    pub preset: String,
    pub seed: u64,
    pub fringe: FringeConfig,
    pub stereo: StereoCalibration,
    pub geometry: String,
    pub reflectance: Reflectance,
    pub cam_lca: CamLcaModel,
    pub prj_lca: PrjLcaTruth,
    pub noise: RgbNoise,
    pub crosstalk: [[f64; 3]; 3],
    pub quantize: bool,
    pub fault: Option<OrderFault>,
}

impl SimManifest {
    pub fn new(preset: &str, scene: &Scene, calib: &StereoCalibration, fringe: &FringeConfig) -> Self {
        let geometry = match &scene.geometry {
            SceneGeometry::Plane { normal, distance } => {
                format!("plane n=[{}, {}, {}] d={}", normal.x, normal.y, normal.z, distance)
            }
            SceneGeometry::DepthMap(d) => format!("depth map {}x{}", d.width(), d.height()),
        };
        Self {
            preset: preset.to_string(),
            seed: scene.seed,
            fringe: *fringe,
            stereo: calib.clone(),
            geometry,
            reflectance: scene.reflectance.clone(),
            cam_lca: scene.cam_lca,
            prj_lca: scene.prj_lca,
            noise: scene.noise,
            crosstalk: scene.crosstalk,
            quantize: scene.quantize,
            fault: scene.fault,
        }
    }
}
