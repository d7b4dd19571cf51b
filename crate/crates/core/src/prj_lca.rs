//! Projector lateral chromatic aberration as a per-projector-pixel linear
//! function of projector depth: `delta = alpha * z_p + beta`.
//!
//! `delta` is measured as `u_p(G) - u_p(channel)`, so adding it to a channel's
//! column estimate moves that channel onto the green reference.

use serde::{Deserialize, Serialize};

use crate::geometry::{triangulate, PixelCoord, StereoCalibration};
use crate::raster::{ChannelRaster, Raster};
use crate::Channel;

/// Minimum projector-depth variance (mm^2) for a fitted pixel.
pub const MIN_DEPTH_VARIANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PrjLcaError {
    #[error("raster sizes differ")]
    SizeMismatch,
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("the green reference channel has no projector LCA map")]
    ReferenceChannel,
}

/// Camera-indexed projector column estimates for one channel.
///
/// `variance` is attached once a noise model is known; it shares the mask of
/// `u_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorPixelField {
    pub channel: Channel,
    pub u_p: ChannelRaster,
    pub variance: Option<ChannelRaster>,
}

impl ProjectorPixelField {
    pub fn new(channel: Channel, u_p: ChannelRaster) -> Self {
        Self {
            channel,
            u_p,
            variance: None,
        }
    }

    pub fn size(&self) -> (usize, usize) {
        self.u_p.size()
    }
}

/// Projector-sized `alpha` (px/mm) and `beta` (px) maps for one channel. The
/// mask of `alpha` is the map's validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBeta {
    pub alpha: ChannelRaster,
    pub beta: ChannelRaster,
}

impl AlphaBeta {
    /// All-zero maps over the whole projector (no correction).
    pub fn zero(prj_size: (usize, usize)) -> Self {
        Self {
            alpha: ChannelRaster::filled(prj_size.0, prj_size.1, 0.0),
            beta: ChannelRaster::filled(prj_size.0, prj_size.1, 0.0),
        }
    }

    pub fn size(&self) -> (usize, usize) {
        self.alpha.size()
    }

    /// Bilinear lookup of `(alpha, beta)`; `None` if any tap is invalid.
    pub fn lookup(&self, u_p: f64, v_p: f64) -> Option<(f64, f64)> {
        Some((self.alpha.bilinear(u_p, v_p)?, self.beta.bilinear(u_p, v_p)?))
    }

    /// Predicted `delta` at a projector pixel and depth.
    pub fn predict(&self, u_p: f64, v_p: f64, z_p: f64) -> Option<f64> {
        self.lookup(u_p, v_p).map(|(a, b)| a * z_p + b)
    }
}

/// Maps for the two correcting channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PrjLcaMaps {
    pub r: AlphaBeta,
    pub b: AlphaBeta,
}

impl PrjLcaMaps {
    pub fn zero(prj_size: (usize, usize)) -> Self {
        Self {
            r: AlphaBeta::zero(prj_size),
            b: AlphaBeta::zero(prj_size),
        }
    }

    pub fn for_channel(&self, ch: Channel) -> Option<&AlphaBeta> {
        match ch {
            Channel::R => Some(&self.r),
            Channel::G => None,
            Channel::B => Some(&self.b),
        }
    }
}

/// One pose of projector-indexed `(delta, z_p)` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePose {
    pub delta: ChannelRaster,
    pub z_p: ChannelRaster,
}

/// Per-pose samples for one channel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlaneSampleSet {
    pub poses: Vec<PlanePose>,
}

impl PlaneSampleSet {
    pub fn push(&mut self, delta: ChannelRaster, z_p: ChannelRaster) -> Result<(), PrjLcaError> {
        if !delta.same_size(&z_p) || self.poses.first().is_some_and(|p| !p.delta.same_size(&delta)) {
            return Err(PrjLcaError::SizeMismatch);
        }
        self.poses.push(PlanePose { delta, z_p });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Folds every pose into a moment accumulator.
    pub fn accumulate(&self) -> Result<MomentAccumulator, PrjLcaError> {
        let first = self.poses.first().ok_or(PrjLcaError::TooFewPoses { needed: 1, got: 0 })?;
        let mut acc = MomentAccumulator::new(first.delta.width(), first.delta.height());
        for pose in &self.poses {
            acc.add_pose(&pose.delta, &pose.z_p)?;
        }
        Ok(acc)
    }
}

/// Running per-pixel co-moments of `(z, delta)`, so poses need not be kept in
/// memory. Updates are Welford-style; two accumulators merge exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    width: usize,
    height: usize,
    cells: Vec<Moments>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: u32,
    mean_z: f64,
    mean_d: f64,
    m2_z: f64,
    m2_d: f64,
    c_zd: f64,
}

impl Moments {
    fn push(&mut self, z: f64, d: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dz = z - self.mean_z;
        let dd = d - self.mean_d;
        self.mean_z += dz / n;
        self.mean_d += dd / n;
        self.m2_z += dz * (z - self.mean_z);
        self.m2_d += dd * (d - self.mean_d);
        self.c_zd += dz * (d - self.mean_d);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        let dz = o.mean_z - self.mean_z;
        let dd = o.mean_d - self.mean_d;
        self.m2_z += o.m2_z + dz * dz * na * nb / n;
        self.m2_d += o.m2_d + dd * dd * na * nb / n;
        self.c_zd += o.c_zd + dz * dd * na * nb / n;
        self.mean_z += dz * nb / n;
        self.mean_d += dd * nb / n;
        self.n += o.n;
    }
}

impl MomentAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![Moments::default(); width * height],
        }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Adds one pose; pixels invalid in either raster are skipped.
    pub fn add_pose(&mut self, delta: &ChannelRaster, z_p: &ChannelRaster) -> Result<(), PrjLcaError> {
        if delta.size() != self.size() || z_p.size() != self.size() {
            return Err(PrjLcaError::SizeMismatch);
        }
        for (i, cell) in self.cells.iter_mut().enumerate() {
            if delta.mask()[i] && z_p.mask()[i] {
                cell.push(z_p.data()[i], delta.data()[i]);
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentAccumulator) -> Result<(), PrjLcaError> {
        if other.size() != self.size() {
            return Err(PrjLcaError::SizeMismatch);
        }
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            a.merge(b);
        }
        Ok(())
    }

    /// Number of samples per pixel.
    pub fn counts(&self) -> Raster<u32> {
        Raster::from_vec(self.width, self.height, self.cells.iter().map(|c| c.n).collect())
    }

    /// Least-squares line per pixel: `alpha = Cov/Var`, `beta = mean(delta) - alpha mean(z)`.
    pub fn fit(&self) -> AlphaBeta {
        let mut alpha = ChannelRaster::invalid(self.width, self.height);
        let mut beta = ChannelRaster::invalid(self.width, self.height);
        for (i, c) in self.cells.iter().enumerate() {
            if c.n < 2 {
                continue;
            }
            let var_z = c.m2_z / (c.n - 1) as f64;
            if var_z < MIN_DEPTH_VARIANCE {
                continue;
            }
            let a = c.c_zd / c.m2_z;
            alpha.data_mut()[i] = a;
            alpha.mask_mut()[i] = true;
            beta.data_mut()[i] = c.mean_d - a * c.mean_z;
            beta.mask_mut()[i] = true;
        }
        AlphaBeta { alpha, beta }
    }

    /// Pearson correlation of `delta` against `z` per pixel (needs 3 samples).
    pub fn correlation(&self) -> ChannelRaster {
        let mut rho = ChannelRaster::invalid(self.width, self.height);
        for (i, c) in self.cells.iter().enumerate() {
            if c.n < 3 || c.m2_z <= 0.0 || c.m2_d <= 0.0 {
                continue;
            }
            let r = c.c_zd / (c.m2_z.sqrt() * c.m2_d.sqrt());
            rho.data_mut()[i] = r.clamp(-1.0, 1.0);
            rho.mask_mut()[i] = true;
        }
        rho
    }
}

/// `delta = u_p(G) - u_p(channel)` per camera pixel, on the intersection of
/// both masks.
pub fn observe_delta(up_ref: &ProjectorPixelField, up_ch: &ProjectorPixelField) -> Result<ChannelRaster, PrjLcaError> {
    if !up_ref.u_p.same_size(&up_ch.u_p) {
        return Err(PrjLcaError::SizeMismatch);
    }
    let (w, h) = up_ref.size();
    Ok(Raster::from_fn(w, h, |x, y| {
        Some(up_ref.u_p.get(x, y)? - up_ch.u_p.get(x, y)?)
    }))
}

/// Scatters camera-indexed values to their nearest projector pixel, averaging
/// collisions, then fills gaps by linear interpolation between samples that
/// bracket them along the row and, failing that, along the column. Gaps with
/// no bracketing samples stay invalid, so nothing is extrapolated.
pub fn scatter_to_projector(
    values: &[&ChannelRaster],
    u_p: &ChannelRaster,
    v_p: &ChannelRaster,
    prj_size: (usize, usize),
) -> Vec<ChannelRaster> {
    let (pw, ph) = prj_size;
    let mut sums = vec![vec![0.0; pw * ph]; values.len()];
    let mut counts = vec![0u32; pw * ph];
    for (x, y, u) in u_p.iter_valid() {
        let Some(v) = v_p.get(x, y) else { continue };
        let (iu, iv) = (u.round(), v.round());
        if iu < 0.0 || iv < 0.0 || iu >= pw as f64 || iv >= ph as f64 {
            continue;
        }
        let samples: Option<Vec<f64>> = values.iter().map(|r| r.get(x, y)).collect();
        let Some(samples) = samples else { continue };
        let idx = iv as usize * pw + iu as usize;
        counts[idx] += 1;
        for (s, val) in sums.iter_mut().zip(samples) {
            s[idx] += val;
        }
    }
    sums.into_iter()
        .map(|s| {
            let data: Vec<f64> = s.iter().zip(&counts).map(|(&v, &n)| if n > 0 { v / n as f64 } else { 0.0 }).collect();
            let mask: Vec<bool> = counts.iter().map(|&n| n > 0).collect();
            fill_bracketed(Raster::from_parts(pw, ph, data, mask))
        })
        .collect()
}

fn fill_bracketed(src: ChannelRaster) -> ChannelRaster {
    let (w, h) = src.size();
    let mut out = src.clone();
    let fill_line = |get: &dyn Fn(usize) -> Option<f64>, len: usize, put: &mut dyn FnMut(usize, f64)| {
        let mut prev: Option<(usize, f64)> = None;
        for i in 0..len {
            if let Some(v) = get(i) {
                if let Some((j, pv)) = prev {
                    for k in j + 1..i {
                        let t = (k - j) as f64 / (i - j) as f64;
                        put(k, pv + t * (v - pv));
                    }
                }
                prev = Some((i, v));
            }
        }
    };
    for y in 0..h {
        let mut row_fill = Vec::new();
        fill_line(&|x| src.get(x, y), w, &mut |x, v| row_fill.push((x, v)));
        for (x, v) in row_fill {
            out.set(x, y, v);
        }
    }
    let rows_done = out.clone();
    for x in 0..w {
        let mut col_fill = Vec::new();
        fill_line(&|y| src.get(x, y), h, &mut |y, v| col_fill.push((y, v)));
        for (y, v) in col_fill {
            if !rows_done.is_valid(x, y) {
                out.set(x, y, v);
            }
        }
    }
    out
}

/// Remaps camera-indexed `delta` and `z_p` into projector pixel space.
pub fn remap_to_projector(
    delta: &ChannelRaster,
    u_p: &ChannelRaster,
    v_p: &ChannelRaster,
    z_p: &ChannelRaster,
    prj_size: (usize, usize),
) -> (ChannelRaster, ChannelRaster) {
    let mut out = scatter_to_projector(&[delta, z_p], u_p, v_p, prj_size).into_iter();
    let d = out.next().unwrap();
    let z = out.next().unwrap();
    (d, z)
}

/// Triangulated projector row and depth for every valid pixel of a field.
pub fn projector_coordinates(
    field: &ProjectorPixelField,
    calib: &StereoCalibration,
) -> (ChannelRaster, ChannelRaster) {
    let (w, h) = field.size();
    let tri = Raster::<(f64, f64)>::from_fn(w, h, |x, y| {
        let u = field.u_p.get(x, y)?;
        let t = triangulate(PixelCoord::new(x as f64, y as f64), u, calib).ok()?;
        t.in_front().then_some((t.v_p, t.s_p))
    });
    (tri.map(|p| p.0), tri.map(|p| p.1))
}

/// Projector-indexed `(delta, z_p)` for one calibration pose, using the green
/// field for projector coordinates and depth.
pub fn pose_samples(
    up_ref: &ProjectorPixelField,
    up_ch: &ProjectorPixelField,
    calib: &StereoCalibration,
) -> Result<PlanePose, PrjLcaError> {
    let delta = observe_delta(up_ref, up_ch)?;
    let (v_p, z_p) = projector_coordinates(up_ref, calib);
    let (delta, z_p) = remap_to_projector(&delta, &up_ref.u_p, &v_p, &z_p, calib.prj_size());
    Ok(PlanePose { delta, z_p })
}

/// Fits `(alpha, beta)` per projector pixel over the poses.
pub fn fit_alpha_beta(samples: &PlaneSampleSet) -> Result<AlphaBeta, PrjLcaError> {
    if samples.len() < 2 {
        return Err(PrjLcaError::TooFewPoses {
            needed: 2,
            got: samples.len(),
        });
    }
    Ok(samples.accumulate()?.fit())
}

/// Pixel-wise Pearson correlation between `delta` and `z_p`.
pub fn correlation_map(samples: &PlaneSampleSet) -> Result<ChannelRaster, PrjLcaError> {
    if samples.len() < 3 {
        return Err(PrjLcaError::TooFewPoses {
            needed: 3,
            got: samples.len(),
        });
    }
    Ok(samples.accumulate()?.correlation())
}

/// Corrects one channel's column estimate with its own plug-in depth:
/// `u' = u + alpha(u, v_p) z_p + beta(u, v_p)`, where `(v_p, z_p)` come from
/// triangulating that channel's `u`. Pixels that fail to triangulate or touch
/// an invalid map entry are masked.
pub fn correct_up(
    field: &ProjectorPixelField,
    maps: &AlphaBeta,
    calib: &StereoCalibration,
) -> ProjectorPixelField {
    let (w, h) = field.size();
    let u_p = Raster::from_fn(w, h, |x, y| {
        let u = field.u_p.get(x, y)?;
        let t = triangulate(PixelCoord::new(x as f64, y as f64), u, calib).ok()?;
        if !t.in_front() {
            return None;
        }
        let delta = maps.predict(u, t.v_p, t.s_p)?;
        Some(u + delta)
    });
    let variance = field.variance.as_ref().map(|v| {
        let mut v = v.clone();
        v.restrict_to(&u_p);
        v
    });
    ProjectorPixelField {
        channel: field.channel,
        u_p,
        variance,
    }
}

/// Serializable summary of a fit, used in calibration reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapStats {
    pub valid: usize,
    pub alpha_mean: f64,
    pub beta_mean: f64,
}

impl AlphaBeta {
    pub fn stats(&self) -> MapStats {
        let a: Vec<f64> = self.alpha.iter_valid().map(|p| p.2).collect();
        let b: Vec<f64> = self.beta.iter_valid().map(|p| p.2).collect();
        let n = a.len().max(1) as f64;
        MapStats {
            valid: a.len(),
            alpha_mean: crate::raster::pairwise_sum(&a) / n,
            beta_mean: crate::raster::pairwise_sum(&b) / n,
        }
    }
}
