//! Single-photon heralding: each node is weakly excited with probability `p`
//! and a single click behind the central beamsplitter heralds the state.

use nalgebra::Matrix4;
use num_complex::Complex64;

use super::{single_times, time_nodes, try_map, with_optional_correction, Emitter, FidelityResult, HeraldWindow, NodeConfig, Quadrature, Settings};
use crate::error::Result;
use crate::kick::{first_moment, pair_moment};

/// Per-time quantities of one node: `tr(K ρ K†)` and `tr(K ρ)`.
fn moments(em: &Emitter, t: f64, k_avg: Option<&[f64]>, q: &Quadrature) -> Result<(f64, Complex64)> {
    let corr = k_avg.map(|k| em.correction(1, t, k)).transpose()?;
    let k = em.kick(1, 1, t, corr.as_ref())?.expect("single-photon emitter has its source");
    Ok((pair_moment(&k, &k, em.motion(), q.backend)?.re, first_moment(&k, em.motion(), q.backend)?))
}

struct Pair<'a> {
    a: Emitter<'a>,
    b: Option<Emitter<'a>>,
    /// Total collection efficiencies, zero in the idealized zero-NA limit.
    e: [f64; 2],
    ideal: bool,
}

impl<'a> Pair<'a> {
    fn new(a: &'a NodeConfig, b: &'a NodeConfig, q: &Quadrature) -> Result<Self> {
        let ea = Emitter::single(a, q)?;
        let eb = if a == b { None } else { Some(Emitter::single(b, q)?) };
        let ideal = a.idealized() || b.idealized();
        let e = if ideal {
            [0.0, 0.0]
        } else {
            let ta = ea.efficiency(1, 1, time_nodes(q, &a.trap), q.backend)?;
            let tb = match &eb {
                Some(e) => e.efficiency(1, 1, time_nodes(q, &b.trap), q.backend)?,
                None => ta,
            };
            [ta, tb]
        };
        Ok(Self { a: ea, b: eb, e, ideal })
    }

    fn b(&self) -> &Emitter<'a> {
        self.b.as_ref().unwrap_or(&self.a)
    }

    /// Time-integrated post-herald state for a click in the `+` output.
    fn integrate(&self, window: &HeraldWindow, instantaneous: bool, k_avg: Option<&[f64]>, q: &Quadrature) -> Result<Matrix4<Complex64>> {
        let (na, nb) = (self.a.node, self.b().node);
        let nodes = if instantaneous {
            vec![(0.0, 1.0)]
        } else {
            single_times(window, time_nodes(q, &na.trap).max(time_nodes(q, &nb.trap)))?
        };
        let (pa, pb) = (na.p, nb.p);
        let coh = (pa * pb * (1.0 - pa) * (1.0 - pb)).sqrt() * Complex64::from_polar(1.0, nb.link_phase - na.link_phase);
        let parts = try_map(&nodes, |&(t, w)| {
            let (aa, fa) = moments(&self.a, t, k_avg, q)?;
            let (ab, fb) = match &self.b {
                Some(b) => moments(b, t, k_avg, q)?,
                None => (aa, fa),
            };
            let double = if self.ideal {
                aa + ab
            } else {
                let envelope = if instantaneous { 1.0 } else { (-t).exp() };
                (1.0 - self.e[0]) * ab + (1.0 - self.e[1]) * aa + 0.5 * envelope * aa * ab
            };
            let mut m = Matrix4::<Complex64>::zeros();
            m[(1, 1)] = Complex64::new((1.0 - pa) * pb * ab, 0.0);
            m[(2, 2)] = Complex64::new(pa * (1.0 - pb) * aa, 0.0);
            m[(1, 2)] = coh * fa.conj() * fb;
            m[(2, 1)] = m[(1, 2)].conj();
            m[(3, 3)] = Complex64::new(pa * pb * double, 0.0);
            Ok(m * Complex64::new(0.5 * w, 0.0))
        })?;
        Ok(parts.into_iter().fold(Matrix4::zeros(), |acc, m| acc + m))
    }
}

/// Post-herald state and fidelity, including the double-excitation term.
///
/// Zero-NA and standing-wave geometries are idealizations with vanishing
/// collection efficiency and use that limit of the double-excitation term.
pub fn single_photon_result(a: &NodeConfig, b: &NodeConfig, window: &HeraldWindow, corrected: bool, settings: &Settings) -> Result<FidelityResult> {
    window.validate()?;
    a.validate()?;
    b.validate()?;
    let fine = Pair::new(a, b, &settings.quadrature)?;
    let seeds = fine.a.kavg_seeds();
    let search = if corrected {
        Some(Pair::new(a, b, &settings.search)?)
    } else {
        None
    };
    let eval = |k: Option<&[f64]>, cheap: bool| -> Result<FidelityResult> {
        let (pair, q) = match (&search, cheap) {
            (Some(s), true) => (s, &settings.search),
            _ => (&fine, &settings.quadrature),
        };
        let m = pair.integrate(window, settings.instantaneous, k, q)?;
        FidelityResult::from_unnormalized(m, k.map(<[f64]>::to_vec))
    };
    with_optional_correction(corrected, seeds, &eval)
}

/// Low-efficiency approximation `(1 - p)(1 + C)/2` for identical nodes.
pub fn low_efficiency_fidelity(p: f64, contrast: f64) -> f64 {
    (1.0 - p) * 0.5 * (1.0 + contrast)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collection::{CollectionGeometry, DipoleChannel, GaussianLens};
    use crate::error::RecoilError;
    use crate::kick::MomentBackend;
    use crate::phase_space::{ThermalState, TrapModel};
    use crate::protocols::closed_forms::single_photon_zero_na;
    use nalgebra::Vector3;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn zero_na(eta: f64, mu: f64, nbar: f64, chi: f64, p: f64) -> NodeConfig {
        let trap = TrapModel::isotropic(mu, eta).unwrap();
        let motion = ThermalState::for_trap(&trap, nbar).unwrap();
        let geom = CollectionGeometry::ZeroNA {
            direction: Vector3::z(),
            polarizations: vec![Vector3::x()],
        };
        NodeConfig::new(trap, motion, geom, vec![DipoleChannel::linear("e", Vector3::x()).unwrap()])
            .unwrap()
            .with_excitation(Vector3::new(chi.sin(), 0.0, chi.cos()))
            .unwrap()
            .with_p(p)
            .unwrap()
    }

    fn lens(eta: f64, mu: f64, nbar: f64, p: f64) -> NodeConfig {
        let trap = TrapModel::isotropic(mu, eta).unwrap();
        let motion = ThermalState::for_trap(&trap, nbar).unwrap();
        let l = GaussianLens::new(0.5, 1e5, 1.0, Vector3::z(), vec![0.0]).unwrap();
        NodeConfig::new(trap, motion, CollectionGeometry::GaussianLens(l), vec![DipoleChannel::linear("e", Vector3::x()).unwrap()])
            .unwrap()
            .with_excitation(Vector3::x())
            .unwrap()
            .with_p(p)
            .unwrap()
    }

    fn settings(n: usize) -> Settings {
        let mut s = Settings::default();
        s.quadrature.time_nodes = n;
        s.quadrature.n_polar = 6;
        s.quadrature.n_azimuthal = 12;
        s.search.n_polar = 4;
        s.search.n_azimuthal = 8;
        s
    }

    #[test]
    fn recoil_free_and_separable_limits() {
        let a = zero_na(0.0, 0.1, 3.0, PI / 2.0, 0.1);
        let r = single_photon_result(&a, &a, &HeraldWindow::default(), false, &settings(8)).unwrap();
        assert!((r.fidelity - 0.9).abs() < 1e-14);
        assert!((r.contrast - 1.0).abs() < 1e-14);
        let b = zero_na(0.0, 0.1, 3.0, PI / 2.0, 0.0);
        let r = single_photon_result(&a, &b, &HeraldWindow::default(), false, &settings(8)).unwrap();
        assert!((r.fidelity - 0.5).abs() < 1e-14);
        let none = single_photon_result(&b, &b, &HeraldWindow::default(), false, &settings(8));
        assert!(matches!(none, Err(RecoilError::NoHerald)));
    }

    #[test]
    fn perpendicular_excitation_matches_closed_form() {
        let a = zero_na(0.07, 0.1, 0.0, PI / 2.0, 1e-6);
        let r = single_photon_result(&a, &a, &HeraldWindow::default(), false, &settings(32)).unwrap();
        let c = (-2.0 * 0.0049f64).exp();
        assert!((r.contrast - c).abs() < 1e-12, "{}", r.contrast);
        assert!((r.fidelity - low_efficiency_fidelity(1e-6, c)).abs() < 1e-12);
        assert!((c - 0.990248).abs() < 1e-6);
    }

    #[test]
    fn general_angle_matches_closed_form() {
        let a = zero_na(0.1, 0.4, 2.0, 0.6, 0.05);
        let r = single_photon_result(&a, &a, &HeraldWindow::default(), false, &settings(48)).unwrap();
        let c = single_photon_zero_na(0.6, 0.1, 0.4, 2.0).unwrap();
        assert!((r.contrast - c).abs() < 1e-9, "{} {c}", r.contrast);
        r.check_physical(1e-10).unwrap();
    }

    #[test]
    fn correction_helps_on_axis_excitation() {
        let a = zero_na(0.07, 0.1, 10.0, 0.0, 0.01);
        let s = settings(24);
        let u = single_photon_result(&a, &a, &HeraldWindow::default(), false, &s).unwrap();
        let c = single_photon_result(&a, &a, &HeraldWindow::default(), true, &s).unwrap();
        assert!(c.contrast > u.contrast);
        assert!(1.0 - c.contrast < 1e-12);
    }

    #[test]
    fn finite_efficiency_double_click() {
        let a = lens(0.0, 0.1, 1.0, 0.3);
        let r = single_photon_result(&a, &a, &HeraldWindow::default(), false, &settings(16)).unwrap();
        // recoil-free and identical, the trace of the matrix gives F = (1-p) / (1 - 7pE/8)
        let e = Emitter::single(&a, &settings(16).quadrature).unwrap().efficiency(1, 1, 16, MomentBackend::Analytic).unwrap();
        let p = 0.3;
        let expect = (1.0 - p) / (1.0 - 7.0 * p * e / 8.0);
        assert!((r.fidelity - expect).abs() < 1e-12, "{} {expect}", r.fidelity);
        assert!(r.fidelity > low_efficiency_fidelity(p, 1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn asymmetric_nodes_physical(eta in 0.0f64..0.3, mu in 0.0f64..1.0, n in 0.0f64..5.0, pa in 0.01f64..1.0, pb in 0.01f64..1.0, phase in -PI..PI) {
            let a = lens(eta, mu, n, pa).with_link_phase(phase);
            let b = zero_na(eta, mu, n, 1.0, pb);
            let mut s = settings(6);
            s.quadrature.n_polar = 3;
            s.quadrature.n_azimuthal = 6;
            for (x, y) in [(&a, &b), (&a, &a)] {
                let r = single_photon_result(x, y, &HeraldWindow::new(4.0, None).unwrap(), false, &s).unwrap();
                r.check_physical(1e-10).unwrap();
                prop_assert!(r.fidelity <= 1.0);
            }
        }
    }
}
