//! Split collection: the two photon modes leave through different couplers
//! tilted by `ξ` in orthogonal directions, optionally each paired with its
//! mirror image into a standing wave.

use nalgebra::Vector3;

use super::two_photon::two_photon_fidelity;
use super::{FidelityResult, HeraldWindow, NodeConfig, Settings};
use crate::collection::{CollectionGeometry, DipoleChannel, StandingWavePair};
use crate::error::Result;
use crate::phase_space::{ThermalState, TrapModel};

/// Node with H collected from `(sin ξ, 0, cos ξ)` and V from `(0, sin ξ, cos ξ)`,
/// with dipoles chosen so neither channel leaks into the other coupler.
pub fn split_node(trap: TrapModel, motion: ThermalState, xi: f64, two_sided: bool) -> Result<NodeConfig> {
    let pair = |tilt: Vector3<f64>, pol: Vector3<f64>| {
        CollectionGeometry::StandingWavePair(StandingWavePair {
            axis: Vector3::z(),
            tilt_direction: tilt,
            xi,
            relative_phase: 0.0,
            polarizations: vec![pol],
            one_sided: !two_sided,
        })
    };
    let channels = vec![
        DipoleChannel::linear("H", Vector3::y())?,
        DipoleChannel::linear("V", Vector3::x())?,
    ];
    NodeConfig::new(trap, motion, pair(Vector3::x(), Vector3::y()), channels)?.with_split_geometry(pair(Vector3::y(), Vector3::x()))
}

/// Geometry-only fidelity (`Γ → ∞`) for identical isotropic nodes.
pub fn geometry_fidelity(eta: f64, xi: f64, nbar: f64, two_sided: bool, settings: &Settings) -> Result<FidelityResult> {
    let trap = TrapModel::isotropic(1.0, eta)?;
    let motion = ThermalState::for_trap(&trap, nbar)?;
    let node = split_node(trap, motion, xi, two_sided)?;
    let s = Settings {
        instantaneous: true,
        ..*settings
    };
    two_photon_fidelity(&node, &node, &HeraldWindow::default(), false, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::closed_forms::geometry_contrast;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn matches_closed_forms() {
        for two in [false, true] {
            for xi in [0.0, 0.3, PI / 4.0, 1.2] {
                let r = geometry_fidelity(0.07, xi, 10.0, two, &Settings::default()).unwrap();
                let (c, _) = geometry_contrast(0.07, xi, 10.0, two).unwrap();
                assert!((r.contrast - c).abs() < 1e-12, "{two} {xi}: {} {c}", r.contrast);
                assert!((r.fidelity - 0.5 * (1.0 + c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_sided_efficiency_drop() {
        let s = Settings::default();
        let base = geometry_fidelity(0.07, 0.0, 10.0, true, &s).unwrap().efficiency;
        let r = geometry_fidelity(0.07, PI / 4.0, 10.0, true, &s).unwrap();
        let (_, e) = geometry_contrast(0.07, PI / 4.0, 10.0, true).unwrap();
        // two photons, each reduced by the same factor
        assert!((r.efficiency / base - e * e).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn two_sided_never_worse(eta in 0.0f64..0.3, xi in 0.0f64..1.5, n in 0.0f64..30.0) {
            let s = Settings::default();
            let one = geometry_fidelity(eta, xi, n, false, &s).unwrap();
            let two = geometry_fidelity(eta, xi, n, true, &s).unwrap();
            prop_assert!(two.fidelity >= one.fidelity - 1e-14);
        }
    }
}
