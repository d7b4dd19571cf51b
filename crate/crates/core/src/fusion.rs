//! Minimum-variance fusion of per-channel projector columns, with a
//! confidence-interval gate against the least noisy channel.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::noise::{phase_variance, NoiseParams, RgbNoise};
use crate::phase::{decode_pixel, phase_shifts, wrap_phase, PhaseField};
use crate::prj_lca::ProjectorPixelField;
use crate::raster::{pairwise_sum, ChannelRaster, Raster};
use crate::Channel;

/// Default gate width in anchor standard deviations.
pub const DEFAULT_CI_MULTIPLIER: f64 = 2.72;

/// Anchor priority when variances tie.
const ANCHOR_ORDER: [usize; 3] = [1, 0, 2];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("every channel has infinite variance")]
    AllChannelsInvalid,
    #[error("resultant length is zero; circular statistics undefined")]
    ZeroResultant,
    #[error("need at least one sample")]
    Empty,
    #[error("fields differ in size")]
    SizeMismatch,
    #[error("channel {0} has no variance attached")]
    MissingVariance(Channel),
    #[error("invalid Monte-Carlo configuration: {0}")]
    InvalidConfig(String),
}

/// Column variance from phase variance: `(lambda / 2 pi)^2 var_phi`.
#[inline]
pub fn pixel_variance(phase_var: f64, wavelength: f64) -> f64 {
    let s = wavelength / TAU;
    s * s * phase_var
}

/// Inverse-variance weights in R, G, B order. Infinite variances get zero
/// weight; if some variances are exactly zero they share the weight equally.
pub fn mvu_weights(variances: [f64; 3]) -> Result<[f64; 3], FusionError> {
    let zeros = variances.iter().filter(|&&v| v == 0.0).count();
    if zeros > 0 {
        let w = 1.0 / zeros as f64;
        return Ok(variances.map(|v| if v == 0.0 { w } else { 0.0 }));
    }
    let inv = variances.map(|v| if v.is_finite() && v > 0.0 { 1.0 / v } else { 0.0 });
    let total = inv[0] + inv[1] + inv[2];
    if total == 0.0 {
        return Err(FusionError::AllChannelsInvalid);
    }
    Ok(inv.map(|i| i / total))
}

/// Index of the lowest-variance channel, preferring G, then R, then B on ties.
pub fn anchor_channel(variances: [f64; 3]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &i in &ANCHOR_ORDER {
        let v = variances[i];
        if v.is_nan() || v == f64::INFINITY {
            continue;
        }
        if best.map_or(true, |b| v < variances[b]) {
            best = Some(i);
        }
    }
    best
}

/// Sets the variance of every non-anchor channel whose column lies outside
/// `anchor +- multiplier * sigma_anchor` to infinity.
pub fn filter_outliers(u_p: [f64; 3], variances: [f64; 3], multiplier: f64) -> [f64; 3] {
    let Some(a) = anchor_channel(variances) else {
        return variances;
    };
    let gate = multiplier * variances[a].sqrt();
    let mut out = variances;
    for i in 0..3 {
        if i != a && (u_p[i] - u_p[a]).abs() > gate {
            out[i] = f64::INFINITY;
        }
    }
    out
}

/// Weighted column and its variance `sum w_i^2 var_i`.
pub fn fuse(u_p: [f64; 3], weights: [f64; 3], variances: [f64; 3]) -> (f64, f64) {
    let mut u = 0.0;
    let mut var = 0.0;
    for i in 0..3 {
        if weights[i] != 0.0 {
            u += weights[i] * u_p[i];
            var += weights[i] * weights[i] * variances[i];
        }
    }
    (u, var)
}

/// One pixel through gate, weights and fusion. Channels given as `None` are
/// treated as infinitely uncertain.
pub fn fuse_pixel(samples: [Option<(f64, f64)>; 3], multiplier: f64) -> Result<(f64, f64, [f64; 3]), FusionError> {
    let u = samples.map(|s| s.map_or(0.0, |p| p.0));
    let var = samples.map(|s| s.map_or(f64::INFINITY, |p| p.1));
    let gated = filter_outliers(u, var, multiplier);
    let w = mvu_weights(gated)?;
    let (fu, fv) = fuse(u, w, gated);
    Ok((fu, fv, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularStats {
    pub mean: f64,
    pub std: f64,
    pub resultant: f64,
}

/// Circular mean and standard deviation, `sqrt(-2 ln |R|)`.
pub fn circular_stats(samples: &[f64]) -> Result<CircularStats, FusionError> {
    if samples.is_empty() {
        return Err(FusionError::Empty);
    }
    let n = samples.len() as f64;
    let c = pairwise_sum(&samples.iter().map(|p| p.cos()).collect::<Vec<_>>()) / n;
    let s = pairwise_sum(&samples.iter().map(|p| p.sin()).collect::<Vec<_>>()) / n;
    let r = c.hypot(s);
    if r < 1e-12 {
        return Err(FusionError::ZeroResultant);
    }
    let r = r.min(1.0);
    Ok(CircularStats {
        mean: s.atan2(c),
        std: (-2.0 * r.ln()).max(0.0).sqrt(),
        resultant: r,
    })
}

/// Monte-Carlo study of the decoded-phase error distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCiConfig {
    pub noise: NoiseParams,
    pub i_a: f64,
    pub i_b: f64,
    pub steps: usize,
    pub samples: usize,
    pub grid: usize,
    pub seed: u64,
    /// Two-sided coverage of the interval, e.g. 0.99.
    pub coverage: f64,
}

impl Default for McCiConfig {
    fn default() -> Self {
        Self {
            noise: NoiseParams { k0: 0.0133, k1: 0.1212 },
            i_a: 8.0,
            i_b: 4.0,
            steps: 3,
            samples: 10_000,
            grid: 64,
            seed: 0,
            coverage: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McCiRow {
    pub phase: f64,
    pub analytic_sigma: f64,
    pub empirical_sigma: f64,
    pub ci_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCiReport {
    pub rows: Vec<McCiRow>,
    /// Phase-domain mean of `ci_half_width / analytic_sigma`.
    pub mean_multiplier: f64,
}

impl McCiReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("phase,analytic_sigma,empirical_sigma,ci_half_width\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:.9},{:.9e},{:.9e},{:.9e}\n",
                r.phase, r.analytic_sigma, r.empirical_sigma, r.ci_half_width
            ));
        }
        out
    }
}

/// For each phase on a uniform grid over `[-pi, pi)`, synthesizes noisy
/// N-step intensities, decodes them and measures the circular spread and the
/// symmetric interval of the wrapped error that holds `coverage` of samples.
pub fn monte_carlo_ci(cfg: &McCiConfig) -> Result<McCiReport, FusionError> {
    if cfg.samples < 2 || cfg.grid == 0 || cfg.steps < 3 {
        return Err(FusionError::InvalidConfig("need samples >= 2, grid >= 1, steps >= 3".into()));
    }
    if !(cfg.coverage > 0.0 && cfg.coverage < 1.0) {
        return Err(FusionError::InvalidConfig("coverage must lie in (0, 1)".into()));
    }
    let shifts = phase_shifts(cfg.steps);
    let analytic = phase_variance(cfg.i_a, cfg.i_b, cfg.steps, &cfg.noise).sqrt();
    let mut rows = Vec::with_capacity(cfg.grid);
    let mut buf = vec![0.0; cfg.steps];
    let mut errors = vec![0.0; cfg.samples];
    let mut decoded = vec![0.0; cfg.samples];
    for g in 0..cfg.grid {
        let phi = -std::f64::consts::PI + TAU * g as f64 / cfg.grid as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(g as u64);
        let clean: Vec<f64> = shifts.iter().map(|&d| cfg.i_a + cfg.i_b * (phi - d).cos()).collect();
        let sigma: Vec<f64> = clean.iter().map(|&i| cfg.noise.variance(i).sqrt()).collect();
        for k in 0..cfg.samples {
            for j in 0..cfg.steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                buf[j] = clean[j] + sigma[j] * z;
            }
            let (p, _, _) = decode_pixel(&buf, &shifts);
            decoded[k] = p;
            errors[k] = wrap_phase(p - phi).abs();
        }
        let stats = circular_stats(&decoded)?;
        let idx = ((cfg.coverage * cfg.samples as f64).ceil() as usize).clamp(1, cfg.samples) - 1;
        let (_, q, _) = errors.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
        rows.push(McCiRow {
            phase: phi,
            analytic_sigma: analytic,
            empirical_sigma: stats.std,
            ci_half_width: *q,
        });
    }
    let mean_multiplier = if analytic > 0.0 {
        pairwise_sum(&rows.iter().map(|r| r.ci_half_width / analytic).collect::<Vec<_>>()) / rows.len() as f64
    } else {
        0.0
    };
    Ok(McCiReport { rows, mean_multiplier })
}

/// Attaches the column variance implied by the noise model to a decoded field.
pub fn attach_variance(
    field: &ProjectorPixelField,
    phase: &PhaseField,
    steps: usize,
    noise: &NoiseParams,
    wavelength: f64,
) -> ProjectorPixelField {
    let (w, h) = field.size();
    let variance = Raster::from_fn(w, h, |x, y| {
        field.u_p.get(x, y)?;
        let pv = phase_variance(phase.i_a.get(x, y)?, phase.i_b.get(x, y)?, steps, noise);
        Some(pixel_variance(pv, wavelength))
    });
    let mut u_p = field.u_p.clone();
    u_p.restrict_to(&variance);
    ProjectorPixelField {
        channel: field.channel,
        u_p,
        variance: Some(variance),
    }
}

/// Fused column field with its variance and per-channel weights (R, G, B).
#[derive(Debug, Clone, PartialEq)]
pub struct FusedField {
    pub u_p: ChannelRaster,
    pub variance: ChannelRaster,
    pub weights: [ChannelRaster; 3],
}

/// Gated MVU fusion of three co-registered fields in R, G, B order, each with
/// variance attached. A channel invalid at a pixel counts as infinitely
/// uncertain there.
pub fn fuse_fields(fields: [&ProjectorPixelField; 3], multiplier: f64) -> Result<FusedField, FusionError> {
    let size = fields[0].size();
    let mut vars = Vec::with_capacity(3);
    for f in fields {
        if f.size() != size {
            return Err(FusionError::SizeMismatch);
        }
        vars.push(f.variance.as_ref().ok_or(FusionError::MissingVariance(f.channel))?);
    }
    let (w, h) = size;
    let px = Raster::<(f64, f64, [f64; 3])>::from_fn(w, h, |x, y| {
        let s = [0, 1, 2].map(|i| Some((fields[i].u_p.get(x, y)?, vars[i].get(x, y)?)));
        fuse_pixel(s, multiplier).ok()
    });
    Ok(FusedField {
        u_p: px.map(|p| p.0),
        variance: px.map(|p| p.1),
        weights: [0, 1, 2].map(|i| px.map(|p| p.2[i])),
    })
}

/// Noise-model variances for three decoded channels, then [`fuse_fields`].
pub fn fuse_decoded(
    fields: [&ProjectorPixelField; 3],
    phases: [&PhaseField; 3],
    noise: &RgbNoise,
    steps: usize,
    wavelength: f64,
    multiplier: f64,
) -> Result<FusedField, FusionError> {
    let with_var: Vec<ProjectorPixelField> = (0..3)
        .map(|i| attach_variance(fields[i], phases[i], steps, &noise.get(Channel::ALL[i]), wavelength))
        .collect();
    fuse_fields([&with_var[0], &with_var[1], &with_var[2]], multiplier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::Normal;

    #[test]
    fn pixel_variance_examples() {
        assert_eq!(pixel_variance(0.0, 36.0), 0.0);
        assert!((pixel_variance(0.01, TAU) - 0.01).abs() < 1e-18);
        let v = pixel_variance(3.889e-4, 36.0);
        let oracle = 36.0 * 36.0 / (4.0 * std::f64::consts::PI * std::f64::consts::PI) * 3.889e-4;
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 1.277e-2).abs() < 1e-5);
    }

    #[test]
    fn weight_examples() {
        let w = mvu_weights([2.0, 2.0, 2.0]).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = mvu_weights([1.0, 4.0, 4.0]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 6.0).abs() < 1e-15);
        let inf = f64::INFINITY;
        assert_eq!(mvu_weights([inf, 0.3, inf]).unwrap(), [0.0, 1.0, 0.0]);
        assert_eq!(mvu_weights([inf; 3]), Err(FusionError::AllChannelsInvalid));
        assert_eq!(mvu_weights([0.0, 1.0, 0.0]).unwrap(), [0.5, 0.0, 0.5]);
    }

    #[test]
    fn outlier_examples() {
        let var = [0.04, 0.01, 0.04];
        let out = filter_outliers([101.0, 100.0, 100.1], var, DEFAULT_CI_MULTIPLIER);
        assert_eq!(out[0], f64::INFINITY);
        assert_eq!(&out[1..], &var[1..]);
        assert_eq!(filter_outliers([100.2, 100.0, 99.8], var, DEFAULT_CI_MULTIPLIER), var);
        // Ties go to green, then red.
        assert_eq!(anchor_channel([1.0, 1.0, 1.0]), Some(1));
        assert_eq!(anchor_channel([1.0, 2.0, 1.0]), Some(0));
        assert_eq!(anchor_channel([f64::INFINITY; 3]), None);
    }

    #[test]
    fn fuse_examples() {
        let (u, _) = fuse([10.0, 12.0, 14.0], [1.0 / 3.0; 3], [1.0; 3]);
        assert!((u - 12.0).abs() < 1e-12);
        let w = mvu_weights([1.0, 4.0, 4.0]).unwrap();
        let (u, v) = fuse([5.0; 3], w, [1.0, 4.0, 4.0]);
        assert!((u - 5.0).abs() < 1e-12);
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn circular_examples() {
        let s = circular_stats(&[0.7; 5]).unwrap();
        assert!((s.mean - 0.7).abs() < 1e-12 && s.std < 1e-7);
        assert_eq!(circular_stats(&[0.0, std::f64::consts::PI]), Err(FusionError::ZeroResultant));
        assert_eq!(circular_stats(&[]), Err(FusionError::Empty));
    }

    #[test]
    fn wrapped_gaussian_spread() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(3.0, 0.1).unwrap();
        let samples: Vec<f64> = (0..100_000).map(|_| wrap_phase(n.sample(&mut rng))).collect();
        let s = circular_stats(&samples).unwrap();
        assert!((s.std - 0.1).abs() < 0.005, "{}", s.std);
        assert!((s.mean - 3.0).abs() < 0.01);
    }

    #[test]
    fn monte_carlo_noiseless() {
        let cfg = McCiConfig {
            noise: NoiseParams::zero(),
            samples: 1000,
            grid: 8,
            ..Default::default()
        };
        let r = monte_carlo_ci(&cfg).unwrap();
        assert_eq!(r.mean_multiplier, 0.0);
        for row in &r.rows {
            assert!(row.empirical_sigma < 1e-7);
            assert!(row.ci_half_width < 1e-12);
        }
    }

    #[test]
    fn monte_carlo_high_snr_is_gaussian() {
        let cfg = McCiConfig {
            noise: NoiseParams { k0: 0.5, k1: 0.0 },
            i_a: 100.0,
            i_b: 50.0,
            samples: 20_000,
            grid: 16,
            ..Default::default()
        };
        let r = monte_carlo_ci(&cfg).unwrap();
        // Gaussian 99% two-sided quantile.
        assert!((r.mean_multiplier - 2.5758).abs() < 0.05, "{}", r.mean_multiplier);
        for row in &r.rows {
            assert!((row.empirical_sigma / row.analytic_sigma - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let cfg = McCiConfig { samples: 2000, grid: 4, seed: 9, ..Default::default() };
        assert_eq!(monte_carlo_ci(&cfg).unwrap(), monte_carlo_ci(&cfg).unwrap());
        let csv = monte_carlo_ci(&cfg).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn fuse_fields_single_and_mean() {
        let u = |v: f64| ChannelRaster::filled(3, 2, v);
        let mk = |ch, val: f64, var: ChannelRaster| ProjectorPixelField { channel: ch, u_p: u(val), variance: Some(var) };
        let r = mk(Channel::R, 50.0, ChannelRaster::invalid(3, 2));
        let g = mk(Channel::G, 50.01, u(0.01));
        let b = mk(Channel::B, 49.99, ChannelRaster::invalid(3, 2));
        let f = fuse_fields([&r, &g, &b], DEFAULT_CI_MULTIPLIER).unwrap();
        assert_eq!(f.u_p.at(1, 1), 50.01);
        let r = mk(Channel::R, 50.0, u(0.01));
        let b = mk(Channel::B, 49.99, u(0.01));
        let f = fuse_fields([&r, &g, &b], DEFAULT_CI_MULTIPLIER).unwrap();
        assert!((f.u_p.at(0, 0) - 50.0).abs() < 1e-12);
        assert!((f.variance.at(0, 0) - 0.01 / 3.0).abs() < 1e-15);
        let none = ProjectorPixelField::new(Channel::R, u(1.0));
        assert_eq!(fuse_fields([&none, &g, &b], 2.72).unwrap_err(), FusionError::MissingVariance(Channel::R));
    }

    #[test]
    fn fused_mean_is_unbiased() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let var = [0.04, 0.01, 0.09];
        let w = mvu_weights(var).unwrap();
        let trials = 100_000;
        let mut acc = Vec::with_capacity(trials);
        for _ in 0..trials {
            let u = [0, 1, 2].map(|i| 7.0 + var[i].sqrt() * rng.sample::<f64, _>(StandardNormal));
            acc.push(fuse(u, w, var).0);
        }
        let mean = pairwise_sum(&acc) / trials as f64;
        let se = (1.0 / (1.0 / 0.04 + 1.0 / 0.01 + 1.0 / 0.09) / trials as f64).sqrt();
        assert!((mean - 7.0).abs() < 3.0 * se);
    }

    fn random_simplex(rng: &mut ChaCha8Rng) -> [f64; 3] {
        let e = [0, 1, 2].map(|_| -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln());
        let s = e[0] + e[1] + e[2];
        e.map(|x| x / s)
    }

    proptest! {
        #[test]
        fn mvu_beats_random_weights(a in 1e-4f64..10.0, b in 1e-4f64..10.0, c in 1e-4f64..10.0, seed in 0u64..1000) {
            let var = [a, b, c];
            let w = mvu_weights(var).unwrap();
            let (_, best) = fuse([0.0; 3], w, var);
            let harmonic = 1.0 / (1.0 / a + 1.0 / b + 1.0 / c);
            prop_assert!((best - harmonic).abs() <= 1e-12 * harmonic.max(1.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let (_, other) = fuse([0.0; 3], random_simplex(&mut rng), var);
                prop_assert!(best <= other * (1.0 + 1e-12));
            }
        }

        #[test]
        fn weights_scale_invariant(a in 1e-4f64..10.0, b in 1e-4f64..10.0, c in 1e-4f64..10.0, k in 1e-3f64..1e3) {
            let w1 = mvu_weights([a, b, c]).unwrap();
            let w2 = mvu_weights([k * a, k * b, k * c]).unwrap();
            for i in 0..3 {
                prop_assert!((w1[i] - w2[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn outlier_filter_idempotent(u in proptest::array::uniform3(99.0f64..101.0), v in proptest::array::uniform3(1e-4f64..0.5)) {
            let once = filter_outliers(u, v, DEFAULT_CI_MULTIPLIER);
            prop_assert_eq!(filter_outliers(u, once, DEFAULT_CI_MULTIPLIER), once);
        }
    }
}
