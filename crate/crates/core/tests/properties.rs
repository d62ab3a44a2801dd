use std::f64::consts::FRAC_PI_2;

use nalgebra::Vector3;
use proptest::prelude::*;

use recoil_core::collection::{build_weight_grid, CollectionGeometry, DipoleChannel, GaussianLens};
use recoil_core::kick::{pair_moment, KickOperator, LaserKick, MomentBackend};
use recoil_core::phase_space::{ThermalState, TrapModel};
use recoil_core::protocols::two_photon::two_photon_fidelity;
use recoil_core::protocols::{HeraldWindow, NodeConfig, Settings};

fn lens_grid(na: f64, n_polar: usize, n_az: usize) -> recoil_core::collection::WeightGrid {
    let lens = GaussianLens::new(na, 1e5, 1.0, Vector3::z(), vec![0.0]).unwrap();
    let ch = DipoleChannel::linear("e", Vector3::x()).unwrap();
    build_weight_grid(&CollectionGeometry::GaussianLens(lens), &[ch], n_polar, n_az).unwrap()
}

fn zero_na(eta: f64, mu: f64, nbar: f64) -> NodeConfig {
    let trap = TrapModel::isotropic(mu, eta).unwrap();
    let motion = ThermalState::for_trap(&trap, nbar).unwrap();
    let geom = CollectionGeometry::ZeroNA {
        direction: Vector3::z(),
        polarizations: vec![Vector3::x(), Vector3::y()],
    };
    let ch = vec![
        DipoleChannel::linear("H", Vector3::x()).unwrap(),
        DipoleChannel::linear("V", Vector3::y()).unwrap(),
    ];
    NodeConfig::new(trap, motion, geom, ch).unwrap().with_excitation(Vector3::x()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn backends_agree(
        eta in 0.0..0.3f64,
        mu in 0.05..2.0f64,
        nbar in 0.0..2.0f64,
        na in 0.2..0.9f64,
        ta in 0.0..3.0f64,
        tb in 0.0..3.0f64,
        laser in any::<bool>(),
    ) {
        let trap = TrapModel::isotropic(mu, eta).unwrap();
        let rho = ThermalState::for_trap(&trap, nbar).unwrap();
        let grid = lens_grid(na, 3, 6);
        let l = LaserKick::new(Vector3::new(0.6, 0.0, 0.8), 0.3).unwrap();
        let l = laser.then_some(&l);
        let a = KickOperator::new(&trap, &grid, 0, 0, ta, l).unwrap();
        let b = KickOperator::new(&trap, &grid, 0, 0, tb, l).unwrap();
        let x = pair_moment(&a, &b, &rho, MomentBackend::Analytic).unwrap();
        let y = pair_moment(&a, &b, &rho, MomentBackend::Direct).unwrap();
        let z = pair_moment(&a, &b, &rho, MomentBackend::Fock).unwrap();
        prop_assert!((x - y).norm() < 1e-12);
        prop_assert!((x - z).norm() < 1e-8);
    }

    #[test]
    fn pair_moment_is_hermitian_in_its_arguments(eta in 0.0..0.3f64, nbar in 0.0..5.0f64, ta in 0.0..3.0f64, tb in 0.0..3.0f64) {
        let trap = TrapModel::isotropic(0.3, eta).unwrap();
        let rho = ThermalState::for_trap(&trap, nbar).unwrap();
        let grid = lens_grid(0.5, 3, 6);
        let a = KickOperator::new(&trap, &grid, 0, 0, ta, None).unwrap();
        let b = KickOperator::new(&trap, &grid, 0, 0, tb, None).unwrap();
        let ab = pair_moment(&a, &b, &rho, MomentBackend::Analytic).unwrap();
        let ba = pair_moment(&b, &a, &rho, MomentBackend::Analytic).unwrap();
        prop_assert!((ab - ba.conj()).norm() < 1e-13);
        let aa = pair_moment(&a, &a, &rho, MomentBackend::Analytic).unwrap();
        prop_assert!(aa.im.abs() < 1e-14 && aa.re >= 0.0);
        prop_assert!(ab.norm_sqr() <= aa.re * pair_moment(&b, &b, &rho, MomentBackend::Analytic).unwrap().re + 1e-14);
    }

    #[test]
    fn zero_na_link_is_physical_and_correctable(eta in 0.0..0.2f64, mu in 0.02..0.5f64, nbar in 0.0..50.0f64) {
        let node = zero_na(eta, mu, nbar);
        let mut s = Settings::default();
        s.quadrature.time_nodes = 16;
        let w = HeraldWindow::default();
        let raw = two_photon_fidelity(&node, &node, &w, false, &s).unwrap();
        let fixed = two_photon_fidelity(&node, &node, &w, true, &s).unwrap();
        raw.check_physical(1e-10).unwrap();
        fixed.check_physical(1e-10).unwrap();
        prop_assert!(fixed.fidelity >= raw.fidelity - 1e-12);
        prop_assert!(fixed.error() < 1e-10);
    }
}

#[test]
fn tilted_excitation_still_ideal_without_recoil() {
    let node = zero_na(0.0, 0.1, 30.0).with_excitation(Vector3::new(FRAC_PI_2.sin(), 0.0, FRAC_PI_2.cos())).unwrap();
    let r = two_photon_fidelity(&node, &node, &HeraldWindow::default(), false, &Settings::default()).unwrap();
    assert!(r.error().abs() < 1e-12);
}
