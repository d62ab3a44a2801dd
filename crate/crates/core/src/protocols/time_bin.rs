//! Time-bin encoding: one channel excited twice, `τ` apart, with the early
//! bin heralding qubit 0 and the late bin qubit 1.

use super::two_photon::Link;
use super::{with_optional_correction, Emitter, FidelityResult, HeraldWindow, NodeConfig, Settings};
use crate::error::Result;

/// Fidelity for two identical nodes with time-bin spacing `tau` (units 1/Γ).
///
/// Detection times are measured from the start of each bin. The correction
/// undoes the laser kick of each bin and the mean emission kick together.
pub fn time_bin_fidelity(node: &NodeConfig, tau: f64, window: &HeraldWindow, corrected: bool, settings: &Settings) -> Result<FidelityResult> {
    window.validate()?;
    let fine = Link::new(Emitter::time_bin(node, tau, &settings.quadrature)?, None);
    let seeds = fine.seeds();
    let search = if corrected {
        Some(Link::new(Emitter::time_bin(node, tau, &settings.search)?, None))
    } else {
        None
    };
    let eval = |k: Option<&[f64]>, cheap: bool| -> Result<FidelityResult> {
        let (link, q) = match (&search, cheap) {
            (Some(s), true) => (s, &settings.search),
            _ => (&fine, &settings.quadrature),
        };
        let m = link.integrate(window, settings.instantaneous, k, q)?;
        FidelityResult::from_unnormalized(m, k.map(<[f64]>::to_vec))
    };
    with_optional_correction(corrected, seeds, &eval)
}
