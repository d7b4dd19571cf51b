//! Fringe and gray-code pattern generation, N-step phase-shift decoding,
//! gray-code unwrapping and phase-to-projector-column scaling.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::prj_lca::ProjectorPixelField;
use crate::raster::{ChannelRaster, OrderRaster, Raster, Sample};
use crate::Channel;

/// Mean level of the projected fringes (8-bit scale).
pub const FRINGE_OFFSET: f64 = 127.5;
/// Modulation of the projected fringes (8-bit scale).
pub const FRINGE_AMPLITUDE: f64 = 127.5;
/// Pixels whose decoded modulation falls below this are masked.
pub const DEFAULT_MIN_MODULATION: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PhaseError {
    #[error("invalid fringe configuration: {0}")]
    InvalidConfig(String),
    #[error("gray-code unwrapping needs a power-of-two period count, got {0}")]
    NonPowerOfTwoPeriods(usize),
    #[error("expected {expected} images, got {got}")]
    WrongImageCount { expected: usize, got: usize },
    #[error("raster sizes differ")]
    SizeMismatch,
    #[error("fringe order {order} at ({x}, {y}) is outside 0..{periods}")]
    OrderOutOfRange { x: usize, y: usize, order: u32, periods: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeConfig {
    /// Fringe period in projector pixels.
    pub wavelength: f64,
    /// Number of fringe periods.
    pub periods: usize,
    /// Phase shifts per period.
    pub steps: usize,
    /// Projector (width, height).
    pub prj_size: (usize, usize),
}

impl FringeConfig {
    pub fn new(wavelength: f64, periods: usize, steps: usize, prj_size: (usize, usize)) -> Result<Self, PhaseError> {
        let c = Self {
            wavelength,
            periods,
            steps,
            prj_size,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), PhaseError> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(PhaseError::InvalidConfig("wavelength must be positive".into()));
        }
        if self.periods < 1 {
            return Err(PhaseError::InvalidConfig("need at least one period".into()));
        }
        if self.steps < 3 {
            return Err(PhaseError::InvalidConfig("need at least three phase steps".into()));
        }
        if (self.periods as f64) * self.wavelength < self.prj_size.0 as f64 {
            return Err(PhaseError::InvalidConfig(format!(
                "{} periods of {} px do not cover {} projector columns",
                self.periods, self.wavelength, self.prj_size.0
            )));
        }
        Ok(())
    }

    /// Number of gray-code patterns, `ceil(log2(L))`.
    pub fn graycode_bits(&self) -> usize {
        graycode_bits(self.periods)
    }
}

pub(crate) fn graycode_bits(periods: usize) -> usize {
    (usize::BITS - (periods.max(1) - 1).leading_zeros()) as usize
}

/// Phase shifts `delta_i` with pattern `I_i = A + B cos(theta - delta_i)`.
///
/// Three steps follow the classic `(theta - 2pi/3, theta, theta + 2pi/3)`
/// ordering; other counts use `delta_i = 2 pi i / N`.
pub fn phase_shifts(steps: usize) -> Vec<f64> {
    if steps == 3 {
        vec![TAU / 3.0, 0.0, -TAU / 3.0]
    } else {
        (0..steps).map(|i| TAU * i as f64 / steps as f64).collect()
    }
}

/// Carrier phase of the fringe pattern at projector column `u`.
///
/// Each period starts at a wrapped phase of `-pi`, which is what lets
/// `phi = phi_w + 2 pi l + pi` recover `2 pi u / lambda` with `l = floor(u / lambda)`.
#[inline]
pub fn carrier_phase(u: f64, wavelength: f64) -> f64 {
    TAU * u / wavelength - PI
}

/// Wraps an angle into `[-pi, pi)`.
#[inline]
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi - TAU * ((phi + PI) / TAU).floor();
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Binary-reflected gray code.
#[inline]
pub fn gray_encode(n: u32) -> u32 {
    n ^ (n >> 1)
}

#[inline]
pub fn gray_decode(mut g: u32) -> u32 {
    let mut n = g;
    while g > 1 {
        g >>= 1;
        n ^= g;
    }
    n
}

/// Fringe period index of a (possibly fractional) projector column.
#[inline]
pub fn period_index(u: f64, wavelength: f64) -> i64 {
    (u.floor() / wavelength).floor() as i64
}

/// Value of fringe pattern `i` at a continuous projector column.
#[inline]
pub fn fringe_value(u: f64, delta: f64, wavelength: f64) -> f64 {
    FRINGE_OFFSET + FRINGE_AMPLITUDE * (carrier_phase(u, wavelength) - delta).cos()
}

/// Whether gray-code pattern `bit` (0 = most significant) is lit at column `u`.
#[inline]
pub fn graycode_lit(u: f64, bit: usize, bits: usize, wavelength: f64) -> bool {
    let l = period_index(u, wavelength).max(0) as u32;
    (gray_encode(l) >> (bits - 1 - bit)) & 1 == 1
}

/// Projector-space fringe stack; pattern `i` is `A + B cos(theta(u) - delta_i)`.
pub fn generate_fringe_patterns(config: &FringeConfig) -> Result<Vec<ChannelRaster>, PhaseError> {
    config.validate()?;
    let (w, h) = config.prj_size;
    Ok(phase_shifts(config.steps)
        .into_iter()
        .map(|delta| {
            let row: Vec<f64> = (0..w)
                .map(|u| fringe_value(u as f64, delta, config.wavelength))
                .collect();
            let data = (0..h).flat_map(|_| row.iter().copied()).collect();
            Raster::from_vec(w, h, data)
        })
        .collect())
}

/// Projector-space gray-code stack (0 or 255), most significant bit first.
pub fn generate_graycode_patterns(config: &FringeConfig) -> Result<Vec<ChannelRaster>, PhaseError> {
    if !config.periods.is_power_of_two() {
        return Err(PhaseError::NonPowerOfTwoPeriods(config.periods));
    }
    config.validate()?;
    let (w, h) = config.prj_size;
    let bits = config.graycode_bits();
    Ok((0..bits)
        .map(|bit| {
            let row: Vec<f64> = (0..w)
                .map(|u| {
                    if graycode_lit(u as f64, bit, bits, config.wavelength) {
                        255.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let data = (0..h).flat_map(|_| row.iter().copied()).collect();
            Raster::from_vec(w, h, data)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseKind {
    Wrapped,
    Unwrapped,
}

/// Phase plus the fringe background and modulation recovered with it.
///
/// The phase raster's mask is the field's validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub phi: ChannelRaster,
    pub kind: PhaseKind,
    pub i_a: ChannelRaster,
    pub i_b: ChannelRaster,
}

impl PhaseField {
    pub fn size(&self) -> (usize, usize) {
        self.phi.size()
    }

    /// Texture under uniform full illumination, `I_A + I_B`.
    pub fn texture(&self) -> ChannelRaster {
        Raster::from_fn(self.i_a.width(), self.i_a.height(), |x, y| {
            Some(self.i_a.at(x, y) + self.i_b.at(x, y))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub min_modulation: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            min_modulation: DEFAULT_MIN_MODULATION,
        }
    }
}

fn check_stack<T>(images: &[Raster<T>], expected: usize) -> Result<(usize, usize), PhaseError>
where
    T: Copy + Default + Send + Sync,
{
    if images.len() != expected {
        return Err(PhaseError::WrongImageCount {
            expected,
            got: images.len(),
        });
    }
    let size = images.first().map(|i| i.size()).unwrap_or((0, 0));
    if images.iter().any(|i| i.size() != size) {
        return Err(PhaseError::SizeMismatch);
    }
    Ok(size)
}

/// Decodes one pixel's intensity samples into `(phi_w, I_A, I_B)`.
#[inline]
pub fn decode_pixel(samples: &[f64], shifts: &[f64]) -> (f64, f64, f64) {
    let n = samples.len();
    if n == 3 {
        let (i1, i2, i3) = (samples[0], samples[1], samples[2]);
        let num = 3f64.sqrt() * (i1 - i3);
        let den = 2.0 * i2 - i1 - i3;
        let i_a = (i1 + i2 + i3) / 3.0;
        let i_b = (3.0 * (i1 - i3) * (i1 - i3) + den * den).sqrt() / 3.0;
        return (wrap_phase(num.atan2(den)), i_a, i_b);
    }
    let (mut s, mut c, mut sum) = (0.0, 0.0, 0.0);
    for (&i, &d) in samples.iter().zip(shifts) {
        let (sd, cd) = d.sin_cos();
        s += i * sd;
        c += i * cd;
        sum += i;
    }
    let nf = n as f64;
    (wrap_phase(s.atan2(c)), sum / nf, 2.0 / nf * s.hypot(c))
}

/// N-step phase-shift decoding with the default modulation threshold.
pub fn phase_shift_decode<T: Sample>(images: &[Raster<T>], steps: usize) -> Result<PhaseField, PhaseError> {
    phase_shift_decode_with(images, steps, DecodeOptions::default())
}

/// N-step phase-shift decoding.
///
/// Pixels invalid in any input or with modulation below the threshold are
/// masked in the phase raster; `I_A`/`I_B` are still reported where inputs
/// are valid.
pub fn phase_shift_decode_with<T: Sample>(
    images: &[Raster<T>],
    steps: usize,
    opts: DecodeOptions,
) -> Result<PhaseField, PhaseError> {
    if steps < 3 {
        return Err(PhaseError::InvalidConfig("need at least three phase steps".into()));
    }
    let (w, h) = check_stack(images, steps)?;
    let shifts = phase_shifts(steps);
    let mut phi = ChannelRaster::invalid(w, h);
    let mut i_a = ChannelRaster::invalid(w, h);
    let mut i_b = ChannelRaster::invalid(w, h);
    {
        use rayon::prelude::*;
        let rows: Vec<_> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut buf = vec![0.0; steps];
                let mut out = Vec::with_capacity(w);
                for x in 0..w {
                    let mut ok = true;
                    for (k, img) in images.iter().enumerate() {
                        match img.get(x, y) {
                            Some(v) => buf[k] = v.to_f64(),
                            None => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    out.push(ok.then(|| decode_pixel(&buf, &shifts)));
                }
                out
            })
            .collect();
        for (y, row) in rows.into_iter().enumerate() {
            for (x, px) in row.into_iter().enumerate() {
                if let Some((p, a, b)) = px {
                    i_a.set(x, y, a);
                    i_b.set(x, y, b);
                    if b >= opts.min_modulation {
                        phi.set(x, y, p);
                    } else {
                        phi.data_mut()[y * w + x] = p;
                    }
                }
            }
        }
    }
    Ok(PhaseField {
        phi,
        kind: PhaseKind::Wrapped,
        i_a,
        i_b,
    })
}

/// Per-pixel fringe order from gray-code captures, thresholded against `I_A`.
pub fn graycode_decode<T: Sample>(images: &[Raster<T>], i_a: &ChannelRaster) -> Result<OrderRaster, PhaseError> {
    let (w, h) = i_a.size();
    if images.iter().any(|i| i.size() != (w, h)) {
        return Err(PhaseError::SizeMismatch);
    }
    let bits = images.len();
    Ok(Raster::from_fn(w, h, |x, y| {
        let threshold = i_a.get(x, y)?;
        let mut code = 0u32;
        for img in images.iter().take(bits) {
            let v = img.get(x, y)?.to_f64();
            code = (code << 1) | u32::from(v > threshold);
        }
        Some(gray_decode(code))
    }))
}

/// `phi = phi_w + 2 pi l + pi`, giving a phase in `[0, 2 L pi)`.
pub fn unwrap(phase: &PhaseField, order: &OrderRaster, periods: usize) -> Result<PhaseField, PhaseError> {
    if !phase.phi.same_size(order) {
        return Err(PhaseError::SizeMismatch);
    }
    let (w, h) = phase.size();
    let mut phi = ChannelRaster::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let (Some(pw), Some(l)) = (phase.phi.get(x, y), order.get(x, y)) else {
                continue;
            };
            if l as usize >= periods {
                return Err(PhaseError::OrderOutOfRange {
                    x,
                    y,
                    order: l,
                    periods,
                });
            }
            phi.set(x, y, pw + TAU * l as f64 + PI);
        }
    }
    Ok(PhaseField {
        phi,
        kind: PhaseKind::Unwrapped,
        i_a: phase.i_a.clone(),
        i_b: phase.i_b.clone(),
    })
}

/// Repairs isolated +-2pi fringe-order slips in an unwrapped phase.
///
/// Each valid pixel is compared against the median of its valid neighbours in
/// a `(2 radius + 1)^2` window; if they disagree by more than pi the pixel is
/// shifted by the nearest multiple of 2 pi. Slips occur where noise or
/// resampling pushes `phi_w` across the wrap while the gray code holds.
pub fn repair_order_slips(phase: &PhaseField, radius: usize, periods: usize) -> PhaseField {
    let src = &phase.phi;
    let (w, h) = src.size();
    let upper = TAU * periods as f64;
    let phi = Raster::from_fn(w, h, |x, y| {
        let v = src.get(x, y)?;
        let mut window = Vec::with_capacity((2 * radius + 1).pow(2));
        for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
            for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                if let Some(n) = src.get(xx, yy) {
                    window.push(n);
                }
            }
        }
        if window.len() < 3 {
            return Some(v);
        }
        let mid = window.len() / 2;
        let (_, median, _) = window.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        let k = ((v - *median) / TAU).round();
        let fixed = v - TAU * k;
        // Half a period of slack: columns at the projector border sit on the
        // wrap point and may land just outside the coded range.
        if k != 0.0 && (-PI..upper + PI).contains(&fixed) {
            Some(fixed)
        } else {
            Some(v)
        }
    });
    PhaseField {
        phi,
        kind: phase.kind,
        i_a: phase.i_a.clone(),
        i_b: phase.i_b.clone(),
    }
}

/// `u_p = phi lambda / 2 pi`; the field carries no variance yet.
pub fn phase_to_pixel(phase: &PhaseField, wavelength: f64, channel: Channel) -> ProjectorPixelField {
    let scale = wavelength / TAU;
    ProjectorPixelField {
        channel,
        u_p: phase.phi.map(|p| p * scale),
        variance: None,
    }
}

/// Convenience: decode fringes, gray code, unwrap (with slip repair) and scale.
pub fn decode_channel<T: Sample>(
    fringes: &[Raster<T>],
    gray: &[Raster<T>],
    config: &FringeConfig,
    opts: DecodeOptions,
    repair_radius: Option<usize>,
) -> Result<(PhaseField, OrderRaster), PhaseError> {
    let wrapped = phase_shift_decode_with(fringes, config.steps, opts)?;
    if gray.len() != config.graycode_bits() {
        return Err(PhaseError::WrongImageCount {
            expected: config.graycode_bits(),
            got: gray.len(),
        });
    }
    let mut order = graycode_decode(gray, &wrapped.i_a)?;
    let periods = config.periods;
    // A misread bit can produce a code past the last period.
    for i in 0..order.len() {
        if order.data()[i] as usize >= periods {
            order.mask_mut()[i] = false;
        }
    }
    let mut unwrapped = unwrap(&wrapped, &order, periods)?;
    if let Some(r) = repair_radius {
        unwrapped = repair_order_slips(&unwrapped, r, periods);
    }
    Ok((unwrapped, order))
}

/// Samples a projector-space pattern stack at camera-pixel projector columns;
/// used by tests and the browser demo.
pub fn sample_patterns_at(columns: &[f64], shifts: &[f64], wavelength: f64) -> Vec<Vec<f64>> {
    shifts
        .iter()
        .map(|&d| columns.iter().map(|&u| fringe_value(u, d, wavelength)).collect())
        .collect()
}
