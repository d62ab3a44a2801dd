//! π/σ decays collected perpendicular to the quantization axis through one
//! high-NA lens into a single-mode fibre, ignoring temporal effects.
//!
//! The σ dipole `-(x̂ + iẑ)/√2` carries a longitudinal `ẑ` part that only
//! cancels in the fibre overlap for an emitter at rest on the axis.

use nalgebra::Vector3;
use num_complex::Complex64;
use std::f64::consts::FRAC_PI_2;

use super::two_photon::two_photon_fidelity;
use super::{FidelityResult, HeraldWindow, NodeConfig, Settings};
use crate::collection::{optimal_waist, CollectionGeometry, DipoleChannel, GaussianLens};
use crate::error::Result;
use crate::phase_space::{ThermalState, TrapModel};

#[derive(Debug, Clone, PartialEq)]
pub struct PiSigmaResult {
    pub total: FidelityResult,
    /// With the longitudinal dipole component removed.
    pub transverse_only: FidelityResult,
    /// `(1 - F_total) - (1 - F_transverse)`.
    pub longitudinal_error: f64,
    pub waist_ratio: f64,
}

/// σ (`H`, weight √(2/3)) and π (`V`, weight 1/√3) channels, magnetic field along y.
pub fn pi_sigma_channels(longitudinal: bool) -> Result<Vec<DipoleChannel>> {
    let c = |x: f64| Complex64::new(x, 0.0);
    let sigma = if longitudinal {
        DipoleChannel::new(
            "H",
            Vector3::new(c(-1.0), c(0.0), Complex64::new(0.0, -1.0)) * c(std::f64::consts::FRAC_1_SQRT_2),
            (2.0f64 / 3.0).sqrt(),
        )?
    } else {
        DipoleChannel::new("H", Vector3::new(c(-1.0), c(0.0), c(0.0)), 1.0 / 3f64.sqrt())?
    };
    let pi = DipoleChannel::new("V", Vector3::new(c(0.0), c(1.0), c(0.0)), 1.0 / 3f64.sqrt())?;
    Ok(vec![sigma, pi])
}

fn node(eta: f64, nbar: f64, lens: &GaussianLens, longitudinal: bool) -> Result<NodeConfig> {
    let trap = TrapModel::isotropic(1.0, eta)?;
    let motion = ThermalState::for_trap(&trap, nbar)?;
    NodeConfig::new(trap, motion, CollectionGeometry::GaussianLens(lens.clone()), pi_sigma_channels(longitudinal)?)
}

/// Errors for collection along z at numerical aperture `na` and focal
/// length `fk` (in wavelengths over 2π) into an optimally sized Gaussian mode,
/// or a given waist ratio.
pub fn pi_sigma_high_na_fidelity(eta: f64, na: f64, nbar: f64, fk: f64, waist_ratio: Option<f64>, settings: &Settings) -> Result<PiSigmaResult> {
    let mut lens = GaussianLens::new(na, fk, 1.0, Vector3::z(), vec![0.0, FRAC_PI_2])?;
    let waist = match waist_ratio {
        Some(w) => w,
        None => optimal_waist(&lens, &pi_sigma_channels(true)?)?,
    };
    lens.waist_ratio = waist;
    let s = Settings {
        instantaneous: true,
        ..*settings
    };
    let w = HeraldWindow::default();
    let full = node(eta, nbar, &lens, true)?;
    let trans = node(eta, nbar, &lens, false)?;
    let total = two_photon_fidelity(&full, &full, &w, false, &s)?;
    let transverse_only = two_photon_fidelity(&trans, &trans, &w, false, &s)?;
    Ok(PiSigmaResult {
        longitudinal_error: total.error() - transverse_only.error(),
        total,
        transverse_only,
        waist_ratio: waist,
    })
}
