//! WebAssembly bindings for the browser demo. Every export returns a JSON
//! string so the page needs no generated type glue beyond the function calls.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use lcamv::fusion::{anchor_channel, filter_outliers, fuse, monte_carlo_ci, mvu_weights, pixel_variance, McCiConfig};
use lcamv::noise::{phase_variance, NoiseParams, RgbNoise};
use lcamv::phase::{carrier_phase, decode_pixel, phase_shifts, wrap_phase};
use lcamv::Channel;

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).unwrap_or_else(|e| error_json(&e.to_string()))
}

fn error_json(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

#[derive(Serialize)]
struct DecodedRow {
    columns: Vec<f64>,
    true_phase: Vec<f64>,
    decoded_phase: Vec<f64>,
    /// Column error of each decoded sample (projector pixels).
    error_px: Vec<f64>,
    analytic_sigma_px: f64,
    empirical_sigma_px: f64,
}

/// Projects `steps` shifted fringes of the given offset and modulation onto
/// `count` projector columns, adds signal-dependent noise and decodes the
/// wrapped phase of each column.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn decode_fringe_row(
    steps: usize,
    wavelength: f64,
    i_a: f64,
    i_b: f64,
    k0: f64,
    k1: f64,
    count: usize,
    seed: u64,
) -> String {
    if steps < 3 || !(wavelength > 0.0) || count == 0 || count > 100_000 {
        return error_json("need steps >= 3, wavelength > 0 and 1..=100000 columns");
    }
    let noise = match NoiseParams::new(k0, k1) {
        Ok(n) => n,
        Err(e) => return error_json(&e.to_string()),
    };
    let shifts = phase_shifts(steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = wavelength / std::f64::consts::TAU;
    let mut row = DecodedRow {
        columns: Vec::with_capacity(count),
        true_phase: Vec::with_capacity(count),
        decoded_phase: Vec::with_capacity(count),
        error_px: Vec::with_capacity(count),
        analytic_sigma_px: phase_variance(i_a, i_b, steps, &noise).sqrt() * scale,
        empirical_sigma_px: 0.0,
    };
    let mut samples = vec![0.0; steps];
    for i in 0..count {
        let u = 3.0 * wavelength * i as f64 / count as f64;
        let theta = wrap_phase(carrier_phase(u, wavelength));
        for (s, &d) in samples.iter_mut().zip(&shifts) {
            let clean = i_a + i_b * (theta - d).cos();
            let z: f64 = StandardNormal.sample(&mut rng);
            *s = clean + noise.variance(clean.max(0.0)).sqrt() * z;
        }
        let (phi, _, _) = decode_pixel(&samples, &shifts);
        row.columns.push(u);
        row.true_phase.push(theta);
        row.decoded_phase.push(phi);
        row.error_px.push(wrap_phase(phi - theta) * scale);
    }
    row.empirical_sigma_px = (row.error_px.iter().map(|e| e * e).sum::<f64>() / count as f64).sqrt();
    to_json(&row)
}

#[derive(Serialize)]
struct FusionResult {
    variances: [f64; 3],
    anchor: Option<&'static str>,
    gated: [bool; 3],
    weights: [f64; 3],
    fused_column: f64,
    fused_variance: f64,
}

/// Fuses three per-channel column estimates. Channel variances follow from
/// each channel's offset and modulation under the default sensor noise
/// coefficients; channels outside the anchor's interval are dropped.
#[wasm_bindgen]
pub fn fuse_channels(columns: &[f64], i_a: &[f64], i_b: &[f64], steps: usize, wavelength: f64, multiplier: f64) -> String {
    if columns.len() != 3 || i_a.len() != 3 || i_b.len() != 3 {
        return error_json("expected three values per argument (R, G, B)");
    }
    if steps < 3 || !(wavelength > 0.0) || !(multiplier > 0.0) {
        return error_json("need steps >= 3 and positive wavelength and multiplier");
    }
    let u = [columns[0], columns[1], columns[2]];
    let variances: [f64; 3] = std::array::from_fn(|c| {
        let k = RgbNoise::TABLE.get(Channel::ALL[c]);
        pixel_variance(phase_variance(i_a[c], i_b[c], steps, &k), wavelength)
    });
    let gated_var = filter_outliers(u, variances, multiplier);
    let weights = match mvu_weights(gated_var) {
        Ok(w) => w,
        Err(e) => return error_json(&e.to_string()),
    };
    let (fused_column, fused_variance) = fuse(u, weights, gated_var);
    to_json(&FusionResult {
        variances,
        anchor: anchor_channel(variances).map(|i| Channel::ALL[i].name()),
        gated: std::array::from_fn(|c| gated_var[c].is_infinite() && variances[c].is_finite()),
        weights,
        fused_column,
        fused_variance,
    })
}

/// Monte-Carlo confidence-interval study; returns the per-phase rows and the
/// mean half-width in units of the analytic sigma.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn confidence_interval(
    k0: f64,
    k1: f64,
    i_a: f64,
    i_b: f64,
    steps: usize,
    samples: usize,
    grid: usize,
    seed: u64,
) -> String {
    let noise = match NoiseParams::new(k0, k1) {
        Ok(n) => n,
        Err(e) => return error_json(&e.to_string()),
    };
    if samples > 200_000 || grid > 512 {
        return error_json("at most 200000 samples and 512 grid phases");
    }
    let cfg = McCiConfig {
        noise,
        i_a,
        i_b,
        steps,
        samples,
        grid,
        seed,
        ..McCiConfig::default()
    };
    match monte_carlo_ci(&cfg) {
        Ok(report) => to_json(&report),
        Err(e) => error_json(&e.to_string()),
    }
}
