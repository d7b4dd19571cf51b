//! Poisson–Gaussian intensity noise, `var(I) = k0 + k1 I`, its calibration
//! from flat-field image pairs, and the phase variance it implies.

use serde::{Deserialize, Serialize};

use crate::raster::{pairwise_sum, ChannelRaster, Raster, Roi, Sample};
use crate::Channel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NoiseError {
    #[error("noise domain needs at least 2 valid pixels, got {0}")]
    DomainTooSmall(usize),
    #[error("image pair sizes differ")]
    SizeMismatch,
    #[error("noise fit needs at least two distinct intensity levels")]
    DegenerateLevels,
    #[error("invalid noise parameters: {0}")]
    InvalidParams(String),
}

/// Noise coefficients for one channel (8-bit intensity scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct NoiseParams {
    /// Read noise variance.
    pub k0: f64,
    /// Shot-noise slope.
    pub k1: f64,
}

impl From<NoiseParams> for [f64; 2] {
    fn from(p: NoiseParams) -> Self {
        [p.k0, p.k1]
    }
}

impl TryFrom<[f64; 2]> for NoiseParams {
    type Error = NoiseError;

    fn try_from(v: [f64; 2]) -> Result<Self, Self::Error> {
        NoiseParams::new(v[0], v[1])
    }
}

impl NoiseParams {
    pub fn new(k0: f64, k1: f64) -> Result<Self, NoiseError> {
        if !(k0.is_finite() && k1.is_finite()) || k0 < 0.0 || k1 < 0.0 {
            return Err(NoiseError::InvalidParams(format!("k0={k0}, k1={k1}")));
        }
        Ok(Self { k0, k1 })
    }

    pub const fn zero() -> Self {
        Self { k0: 0.0, k1: 0.0 }
    }

    /// Intensity variance at clean level `i`.
    #[inline]
    pub fn variance(&self, i: f64) -> f64 {
        self.k0 + self.k1 * i.max(0.0)
    }
}

/// Per-channel coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbNoise {
    #[serde(rename = "R")]
    pub r: NoiseParams,
    #[serde(rename = "G")]
    pub g: NoiseParams,
    #[serde(rename = "B")]
    pub b: NoiseParams,
}

impl RgbNoise {
    /// Coefficients of the reference hardware (read noise, shot slope).
    pub const TABLE: RgbNoise = RgbNoise {
        r: NoiseParams { k0: 0.1333, k1: 0.0215 },
        g: NoiseParams { k0: 0.1184, k1: 0.0134 },
        b: NoiseParams { k0: 0.1500, k1: 0.0170 },
    };

    pub const fn zero() -> Self {
        Self {
            r: NoiseParams::zero(),
            g: NoiseParams::zero(),
            b: NoiseParams::zero(),
        }
    }

    pub fn uniform(p: NoiseParams) -> Self {
        Self { r: p, g: p, b: p }
    }

    pub fn get(&self, ch: Channel) -> NoiseParams {
        match ch {
            Channel::R => self.r,
            Channel::G => self.g,
            Channel::B => self.b,
        }
    }

    pub fn set(&mut self, ch: Channel, p: NoiseParams) {
        match ch {
            Channel::R => self.r = p,
            Channel::G => self.g = p,
            Channel::B => self.b = p,
        }
    }
}

/// Mean and noise variance of a flat-field pair over a domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    pub mu_hat: f64,
    pub var_hat: f64,
    pub n_pixels: usize,
}

/// Estimates one `(mean, variance)` point from two captures of the same flat
/// illumination. Differencing the pair cancels fixed-pattern structure; the
/// variance of `I1 - I2` is twice the per-image noise variance.
pub fn estimate_pixel_noise<T: Sample>(img1: &Raster<T>, img2: &Raster<T>, roi: Roi) -> Result<NoiseSample, NoiseError> {
    if !img1.same_size(img2) {
        return Err(NoiseError::SizeMismatch);
    }
    let roi = roi.clamp(img1.width(), img1.height());
    let mut means = Vec::with_capacity(roi.area());
    let mut diffs = Vec::with_capacity(roi.area());
    for (x, y) in roi.pixels() {
        if let (Some(a), Some(b)) = (img1.get(x, y), img2.get(x, y)) {
            let (a, b) = (a.to_f64(), b.to_f64());
            means.push(0.5 * (a + b));
            diffs.push(a - b);
        }
    }
    let n = diffs.len();
    if n < 2 {
        return Err(NoiseError::DomainTooSmall(n));
    }
    let mu_hat = pairwise_sum(&means) / n as f64;
    let mu_delta = pairwise_sum(&diffs) / n as f64;
    let sq: Vec<f64> = diffs.iter().map(|d| (d - mu_delta) * (d - mu_delta)).collect();
    let var_hat = pairwise_sum(&sq) / (2.0 * (n - 1) as f64);
    Ok(NoiseSample { mu_hat, var_hat, n_pixels: n })
}

/// Fitted coefficients plus whether either was clamped at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFit {
    pub params: NoiseParams,
    pub clamped: bool,
}

/// Weighted straight-line fit of `var_hat` against `mu_hat`.
///
/// Each point is weighted by the inverse of the sampling variance of a
/// variance estimate, `2 var^2 / (n - 1)`. A floor on the weight denominator
/// keeps noise-free points from dominating with infinite weight; if all
/// points are noise-free the fit reduces to ordinary least squares.
pub fn fit_noise_model(samples: &[NoiseSample]) -> Result<NoiseFit, NoiseError> {
    if samples.len() < 2 {
        return Err(NoiseError::DegenerateLevels);
    }
    let floor = samples.iter().map(|s| s.var_hat.abs()).fold(0.0, f64::max) * 1e-6;
    let weights: Vec<f64> = samples
        .iter()
        .map(|s| {
            let v = s.var_hat.abs().max(floor);
            if v > 0.0 {
                (s.n_pixels.max(2) - 1) as f64 / (2.0 * v * v)
            } else {
                1.0
            }
        })
        .collect();
    let sum = |f: &dyn Fn(usize) -> f64| pairwise_sum(&(0..samples.len()).map(f).collect::<Vec<_>>());
    let sw = sum(&|i| weights[i]);
    let mx = sum(&|i| weights[i] * samples[i].mu_hat) / sw;
    let my = sum(&|i| weights[i] * samples[i].var_hat) / sw;
    let sxx = sum(&|i| weights[i] * (samples[i].mu_hat - mx).powi(2));
    let sxy = sum(&|i| weights[i] * (samples[i].mu_hat - mx) * (samples[i].var_hat - my));
    if !(sxx > 1e-12 * sw * (1.0 + mx * mx)) {
        return Err(NoiseError::DegenerateLevels);
    }
    let k1 = sxy / sxx;
    let k0 = my - k1 * mx;
    let clamped = k0 < 0.0 || k1 < 0.0;
    if clamped {
        log::warn!("noise fit produced negative coefficients (k0={k0}, k1={k1}); clamping to zero");
    }
    Ok(NoiseFit {
        params: NoiseParams {
            k0: k0.max(0.0),
            k1: k1.max(0.0),
        },
        clamped,
    })
}

/// Wrapped-phase variance, `2 (k0 + k1 I_A) / (N I_B^2)`; infinite without
/// modulation.
#[inline]
pub fn phase_variance(i_a: f64, i_b: f64, steps: usize, params: &NoiseParams) -> f64 {
    if !(i_b > 0.0) {
        return f64::INFINITY;
    }
    2.0 * params.variance(i_a) / (steps as f64 * i_b * i_b)
}

/// Raster form of [`phase_variance`] over pixels valid in both inputs.
pub fn phase_variance_map(i_a: &ChannelRaster, i_b: &ChannelRaster, steps: usize, params: &NoiseParams) -> ChannelRaster {
    Raster::from_fn(i_a.width(), i_a.height(), |x, y| {
        Some(phase_variance(i_a.get(x, y)?, i_b.get(x, y)?, steps, params))
    })
}
