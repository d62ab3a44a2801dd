//! Browser bindings for a few fast closed-form evaluations.
//! The plain functions are usable natively; the `#[wasm_bindgen]` wrappers
//! convert errors to JS exceptions.

use nalgebra::Vector3;
use wasm_bindgen::prelude::*;

use recoil_core::fock::{auto_cutoff, detuning_grid, emission_spectrum_1d, thermal_density};
use recoil_core::protocols::closed_forms::{geometry_contrast, two_photon_zero_na_timing, ZeroNaMode};

/// Uncorrected two-photon infidelity `1 - F` at zero NA for each `n̄`,
/// exact timing integral followed by the closed form, interleaved.
pub fn timing_errors(eta: f64, mu: f64, nbars: &[f64]) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(2 * nbars.len());
    for &n in nbars {
        let modes = ZeroNaMode::isotropic(eta, mu, n, Vector3::z(), Vector3::x());
        let t = two_photon_zero_na_timing(&modes).map_err(|e| e.to_string())?;
        out.push(0.5 * t.exact_error);
        out.push(0.5 * t.closed_form_error);
    }
    Ok(out)
}

/// Split-collection contrast for each tilt angle in degrees: one-sided then two-sided, interleaved.
pub fn geometry_contrasts(eta: f64, nbar: f64, xi_deg: &[f64]) -> Result<Vec<f64>, String> {
    let mut out = Vec::with_capacity(2 * xi_deg.len());
    for &xi in xi_deg {
        let r = xi.to_radians();
        out.push(geometry_contrast(eta, r, nbar, false).map_err(|e| e.to_string())?.0);
        out.push(geometry_contrast(eta, r, nbar, true).map_err(|e| e.to_string())?.0);
    }
    Ok(out)
}

/// One-dimensional emission spectrum from a thermal state on `points` detunings in `[min, max]`.
pub fn spectrum(eta: f64, mu: f64, nbar: f64, min: f64, max: f64, points: usize) -> Result<Vec<f64>, String> {
    if points > 20_000 {
        return Err("at most 20000 points".into());
    }
    let initial = thermal_density(nbar, auto_cutoff(nbar, eta)).map_err(|e| e.to_string())?;
    let r = emission_spectrum_1d(eta, mu, &initial, &detuning_grid(min, max, points)).map_err(|e| e.to_string())?;
    Ok(r.density)
}

#[wasm_bindgen(js_name = timingErrors)]
pub fn timing_errors_js(eta: f64, mu: f64, nbars: Vec<f64>) -> Result<Vec<f64>, JsValue> {
    timing_errors(eta, mu, &nbars).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = geometryContrasts)]
pub fn geometry_contrasts_js(eta: f64, nbar: f64, xi_deg: Vec<f64>) -> Result<Vec<f64>, JsValue> {
    geometry_contrasts(eta, nbar, &xi_deg).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = spectrum)]
pub fn spectrum_js(eta: f64, mu: f64, nbar: f64, min: f64, max: f64, points: usize) -> Result<Vec<f64>, JsValue> {
    spectrum(eta, mu, nbar, min, max, points).map_err(|e| JsValue::from_str(&e))
}
