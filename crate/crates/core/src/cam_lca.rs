//! Camera lateral chromatic aberration.
//!
//! Each correcting channel (R, B) is described relative to the green reference
//! by seven parameters `[a, du, dv, c1, c2, c3, c4]`. With
//! `(x, y) = (a u + du, v + dv)` and `r^2 = x^2 + y^2` the lateral shift is
//!
//! ```text
//! dx = c1 x + c2 x r^2 + c3 (3x^2 + y^2) + 2 c4 x y
//! dy = c1 y + c2 y r^2 + 2 c3 x y + c4 (3y^2 + x^2)
//! ```
//!
//! A green-frame pixel `(u, v)` appears at `(u + dx, v + dy)` in the channel's
//! image, so correction resamples the channel there.

use nalgebra::{DMatrix, DVector, SVector};
use serde::{Deserialize, Serialize};

use crate::raster::{Raster, Sample};

pub const PARAM_COUNT: usize = 7;
const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CamLcaError {
    #[error("need at least {PARAM_COUNT} corner pairs, got {0}")]
    InsufficientPoints(usize),
    #[error("reference and observed corner lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no convergence after {0} iterations")]
    NoConvergence(usize),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Seven-parameter LCA model for one correcting channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 7]", try_from = "[f64; 7]")]
pub struct CamLcaParams {
    /// Horizontal aspect.
    pub a: f64,
    /// Decentering (pixels).
    pub du: f64,
    pub dv: f64,
    /// Polynomial coefficients `c1..c4`.
    pub c: [f64; 4],
}

impl Default for CamLcaParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl From<CamLcaParams> for [f64; 7] {
    fn from(p: CamLcaParams) -> Self {
        p.to_array()
    }
}

impl TryFrom<[f64; 7]> for CamLcaParams {
    type Error = CamLcaError;

    fn try_from(v: [f64; 7]) -> Result<Self, Self::Error> {
        let p = Self::from_array(v);
        p.validate()?;
        Ok(p)
    }
}

impl CamLcaParams {
    pub fn identity() -> Self {
        Self {
            a: 1.0,
            du: 0.0,
            dv: 0.0,
            c: [0.0; 4],
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.a, self.du, self.dv, self.c[0], self.c[1], self.c[2], self.c[3]]
    }

    pub fn from_array(v: [f64; 7]) -> Self {
        Self {
            a: v[0],
            du: v[1],
            dv: v[2],
            c: [v[3], v[4], v[5], v[6]],
        }
    }

    pub fn validate(&self) -> Result<(), CamLcaError> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(CamLcaError::InvalidParams("non-finite value".into()));
        }
        if self.a <= 0.0 {
            return Err(CamLcaError::InvalidParams("aspect must be positive".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.c == [0.0; 4]
    }

    /// Lateral shift `(dx, dy)` in pixels at green-frame pixel `(u, v)`.
    #[inline]
    pub fn delta(&self, u: f64, v: f64) -> (f64, f64) {
        cam_lca_delta(u, v, self)
    }

    /// Inverts `p + delta(p) = q` by fixed-point iteration; converges for
    /// shifts with a small spatial gradient.
    pub fn undistort(&self, qu: f64, qv: f64) -> (f64, f64) {
        if self.is_identity() {
            return (qu, qv);
        }
        let (mut pu, mut pv) = (qu, qv);
        for _ in 0..20 {
            let (dx, dy) = self.delta(pu, pv);
            let (nu, nv) = (qu - dx, qv - dy);
            let step = (nu - pu).abs().max((nv - pv).abs());
            pu = nu;
            pv = nv;
            if step < 1e-13 {
                break;
            }
        }
        (pu, pv)
    }
}

/// Evaluates the seven-parameter LCA polynomial.
#[inline]
pub fn cam_lca_delta(u: f64, v: f64, p: &CamLcaParams) -> (f64, f64) {
    let x = p.a * u + p.du;
    let y = v + p.dv;
    let r2 = x * x + y * y;
    let [c1, c2, c3, c4] = p.c;
    let dx = c1 * x + c2 * x * r2 + c3 * (3.0 * x * x + y * y) + 2.0 * c4 * x * y;
    let dy = c1 * y + c2 * y * r2 + 2.0 * c3 * x * y + c4 * (3.0 * y * y + x * x);
    (dx, dy)
}

/// Camera LCA for both correcting channels; green is the identity reference.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CamLcaModel {
    #[serde(rename = "R")]
    pub r: CamLcaParams,
    #[serde(rename = "B")]
    pub b: CamLcaParams,
}

impl CamLcaModel {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Parameters for a channel; `None` for the green reference.
    pub fn for_channel(&self, ch: crate::Channel) -> Option<&CamLcaParams> {
        match ch {
            crate::Channel::R => Some(&self.r),
            crate::Channel::G => None,
            crate::Channel::B => Some(&self.b),
        }
    }
}

/// Calibration result for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CamLcaFit {
    pub params: CamLcaParams,
    /// RMS of the 2D corner residual (pixels).
    pub rms: f64,
    pub iterations: usize,
}

/// Jacobian of `delta` with respect to the seven parameters (rows dx, dy).
fn jacobian(u: f64, v: f64, p: &CamLcaParams) -> [[f64; PARAM_COUNT]; 2] {
    let x = p.a * u + p.du;
    let y = v + p.dv;
    let r2 = x * x + y * y;
    let [c1, c2, c3, c4] = p.c;
    let dxdx = c1 + c2 * (r2 + 2.0 * x * x) + 6.0 * c3 * x + 2.0 * c4 * y;
    let cross = 2.0 * c2 * x * y + 2.0 * c3 * y + 2.0 * c4 * x;
    let dydy = c1 + c2 * (r2 + 2.0 * y * y) + 2.0 * c3 * x + 6.0 * c4 * y;
    [
        [
            dxdx * u,
            dxdx,
            cross,
            x,
            x * r2,
            3.0 * x * x + y * y,
            2.0 * x * y,
        ],
        [
            cross * u,
            cross,
            dydy,
            y,
            y * r2,
            2.0 * x * y,
            3.0 * y * y + x * x,
        ],
    ]
}

fn residuals(reference: &[(f64, f64)], observed: &[(f64, f64)], p: &CamLcaParams) -> DVector<f64> {
    let mut r = DVector::zeros(2 * reference.len());
    for (i, (&(ru, rv), &(ou, ov))) in reference.iter().zip(observed).enumerate() {
        let (dx, dy) = cam_lca_delta(ru, rv, p);
        r[2 * i] = (ou - ru) - dx;
        r[2 * i + 1] = (ov - rv) - dy;
    }
    r
}

/// Fits one channel's parameters to matched corner locations.
///
/// Minimises `sum |(obs - ref) - delta(ref)|^2` with a damped Gauss–Newton
/// (Levenberg–Marquardt) iteration started with the centre at the corner centroid. Columns are scaled to
/// unit norm and each step is solved through an SVD, since the monomials span
/// about nine orders of magnitude in pixel units.
pub fn calibrate_cam_lca(reference: &[(f64, f64)], observed: &[(f64, f64)]) -> Result<CamLcaFit, CamLcaError> {
    if reference.len() != observed.len() {
        return Err(CamLcaError::LengthMismatch(reference.len(), observed.len()));
    }
    if reference.len() < PARAM_COUNT {
        return Err(CamLcaError::InsufficientPoints(reference.len()));
    }
    let n = reference.len();
    if reference == observed {
        return Ok(finish(CamLcaParams::identity(), 0.0, n, 0));
    }
    // Start the distortion centre at the corner centroid.
    let (su, sv) = reference.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let mut params = CamLcaParams {
        du: -su / n as f64,
        dv: -sv / n as f64,
        ..CamLcaParams::identity()
    };
    let mut res = residuals(reference, observed, &params);
    let mut cost = res.norm_squared();
    let mut lambda = 1e-3;

    for iteration in 1..=MAX_ITERATIONS {
        let mut jac = DMatrix::<f64>::zeros(2 * n, PARAM_COUNT);
        for (i, &(u, v)) in reference.iter().enumerate() {
            let j = jacobian(u, v, &params);
            for k in 0..PARAM_COUNT {
                jac[(2 * i, k)] = j[0][k];
                jac[(2 * i + 1, k)] = j[1][k];
            }
        }
        let mut scale = SVector::<f64, PARAM_COUNT>::zeros();
        for k in 0..PARAM_COUNT {
            let norm = jac.column(k).norm();
            scale[k] = if norm > 0.0 { norm } else { 1.0 };
            jac.column_mut(k).unscale_mut(scale[k]);
        }
        let svd = jac.svd(true, true);
        let (u_mat, v_t) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let utr = u_mat.transpose() * &res;
        let sigma_max = svd.singular_values.max();
        let tiny = sigma_max * 1e-14;

        let theta_norm: f64 = (0..PARAM_COUNT)
            .map(|k| (params.to_array()[k] * scale[k]).powi(2))
            .sum::<f64>()
            .sqrt();
        let gradient = (0..svd.singular_values.len())
            .map(|i| (svd.singular_values[i] * utr[i]).abs())
            .fold(0.0, f64::max);
        if cost == 0.0 || gradient <= 1e-14 * cost.sqrt().max(1e-300) * sigma_max {
            return Ok(finish(params, cost, n, iteration));
        }
        loop {
            let mut coeff = DVector::zeros(svd.singular_values.len());
            for (i, &s) in svd.singular_values.iter().enumerate() {
                if s > tiny {
                    coeff[i] = s * utr[i] / (s * s + lambda * sigma_max * sigma_max);
                }
            }
            let step_scaled = v_t.transpose() * coeff;
            let step_norm = step_scaled.norm();
            let mut candidate = params.to_array();
            for k in 0..PARAM_COUNT {
                candidate[k] += step_scaled[k] / scale[k];
            }
            let cand = CamLcaParams::from_array(candidate);
            let cand_res = residuals(reference, observed, &cand);
            let cand_cost = cand_res.norm_squared();
            let small_step = step_norm <= STEP_TOLERANCE * (theta_norm + STEP_TOLERANCE);
            if cand_cost <= cost {
                let rel_drop = (cost - cand_cost) / cost;
                params = cand;
                res = cand_res;
                cost = cand_cost;
                lambda = (lambda * 0.3).max(1e-15);
                if small_step || rel_drop < 1e-12 {
                    return Ok(finish(params, cost, n, iteration));
                }
                break;
            }
            lambda *= 10.0;
            if small_step || lambda > 1e16 {
                return Ok(finish(params, cost, n, iteration));
            }
        }
    }
    Err(CamLcaError::NoConvergence(MAX_ITERATIONS))
}

fn finish(params: CamLcaParams, cost: f64, n: usize, iterations: usize) -> CamLcaFit {
    CamLcaFit {
        params,
        rms: (cost / n as f64).sqrt(),
        iterations,
    }
}

/// Resamples a channel onto the green frame: output `(u, v)` takes the
/// bilinear sample of the input at `(u + dx, v + dy)`. Samples that fall
/// outside the input, or touch invalid input pixels, are masked.
pub fn correct_image<T: Sample>(img: &Raster<T>, params: &CamLcaParams) -> Raster<T> {
    if params.is_identity() {
        return img.clone();
    }
    Raster::from_fn(img.width(), img.height(), |x, y| {
        let (u, v) = (x as f64, y as f64);
        let (dx, dy) = params.delta(u, v);
        img.bilinear(u + dx, v + dy).map(T::from_f64)
    })
}
