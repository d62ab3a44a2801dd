//! Zero-NA contrasts as one- and two-dimensional quadratures, plus the
//! small-`μ/Γ` and `Γ → ∞` closed forms.

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::quadrature::{adaptive, adaptive_exp};

/// One motional mode seen from a zero-NA collection direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroNaMode {
    pub eta: f64,
    pub mu: f64,
    pub nbar: f64,
    /// `k̂_coll · ê_j`.
    pub k_coll: f64,
    /// `k̂_ex · ê_j`.
    pub k_ex: f64,
}

impl ZeroNaMode {
    /// Three modes along x, y, z sharing `η`, `μ/Γ` and `n̄`.
    pub fn isotropic(eta: f64, mu: f64, nbar: f64, k_coll: Vector3<f64>, k_ex: Vector3<f64>) -> Vec<Self> {
        (0..3)
            .map(|j| Self {
                eta,
                mu,
                nbar,
                k_coll: k_coll[j],
                k_ex: k_ex[j],
            })
            .collect()
    }

    fn thermal(&self) -> f64 {
        self.eta * self.eta * (1.0 + 2.0 * self.nbar)
    }
}

fn check(modes: &[ZeroNaMode]) -> Result<()> {
    for m in modes {
        if m.nbar < 0.0 || !m.nbar.is_finite() {
            return Err(invalid("nbar", "must be finite and >= 0"));
        }
        if !(m.mu >= 0.0) || !m.eta.is_finite() {
            return Err(invalid("mode", "needs finite η and μ/Γ >= 0"));
        }
    }
    Ok(())
}

/// `2 sin²(x/2) = 1 - cos x` without cancellation.
fn one_minus_cos(x: f64) -> f64 {
    let s = (0.5 * x).sin();
    2.0 * s * s
}

/// Single-photon contrast `∫ e^{-t} exp(-2η²(1 - cos χ cos μt)(1+2n̄)) dt`.
pub fn single_photon_zero_na(chi: f64, eta: f64, mu: f64, nbar: f64) -> Result<f64> {
    if nbar < 0.0 {
        return Err(invalid("nbar", "must be >= 0"));
    }
    let a = 2.0 * eta * eta * (1.0 + 2.0 * nbar);
    let c = chi.cos();
    if c == 0.0 || mu == 0.0 {
        return Ok((-a * (1.0 - c)).exp());
    }
    adaptive_exp(&|t: f64| (-a * (1.0 - c * (mu * t).cos())).exp(), 1e-13)
}

/// Exact zero-NA timing contrast and its small-`μ/Γ` approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingContrast {
    pub exact: f64,
    /// `1 - exact`, computed without cancellation.
    pub exact_error: f64,
    /// `exp(-Σ 2 k² η² μ² (1+2n̄))`.
    pub closed_form: f64,
    pub closed_form_error: f64,
}

/// Two-photon timing contrast for identical zero-NA channels.
///
/// The nested form `∫ e^{-t} ∫_0^t f(Δ) dΔ dt` is reduced to `∫ e^{-Δ} f(Δ) dΔ`
/// by exchanging the order of integration.
pub fn two_photon_zero_na_timing(modes: &[ZeroNaMode]) -> Result<TimingContrast> {
    check(modes)?;
    let exponent = |d: f64| -> f64 {
        modes
            .iter()
            .map(|m| 2.0 * m.k_coll * m.k_coll * m.thermal() * one_minus_cos(m.mu * d))
            .sum()
    };
    let err = adaptive_exp(&|d: f64| -(-exponent(d)).exp_m1(), 1e-13)?;
    let s: f64 = modes.iter().map(|m| 2.0 * m.k_coll * m.k_coll * m.thermal() * m.mu * m.mu).sum();
    Ok(TimingContrast {
        exact: 1.0 - err,
        exact_error: err,
        closed_form: (-s).exp(),
        closed_form_error: -(-s).exp_m1(),
    })
}

/// The same contrast as the literal nested double integral, for cross-checks.
pub fn two_photon_zero_na_timing_nested(modes: &[ZeroNaMode]) -> Result<f64> {
    check(modes)?;
    let f = |d: f64| -> f64 {
        let e: f64 = modes
            .iter()
            .map(|m| 2.0 * m.k_coll * m.k_coll * m.thermal() * one_minus_cos(m.mu * d))
            .sum();
        (-e).exp()
    };
    let inner = |t: f64| adaptive(&f, 0.0, t, 1e-12).unwrap_or(f64::NAN);
    let v = adaptive_exp(&inner, 1e-11)?;
    if v.is_nan() {
        return Err(invalid("modes", "inner integral did not converge"));
    }
    Ok(v)
}

/// `(C, efficiency factor)` for split collection tilted by `ξ` in orthogonal
/// directions, one coupler per mode or a mirrored pair.
pub fn geometry_contrast(eta: f64, xi: f64, nbar: f64, two_sided: bool) -> Result<(f64, f64)> {
    if nbar < 0.0 {
        return Err(invalid("nbar", "must be >= 0"));
    }
    let gamma = eta * eta * xi.sin().powi(2) * (1.0 + 2.0 * nbar);
    if two_sided {
        let s = 1.0 / gamma.cosh();
        Ok((s * s, 0.5 * (1.0 + (-2.0 * gamma).exp())))
    } else {
        Ok(((-2.0 * gamma).exp(), 1.0))
    }
}

/// Residual early/late displacement `β_j(t_e, t_l)` for spacing `τ`.
pub fn time_bin_residual(m: &ZeroNaMode, tau: f64, te: f64, tl: f64) -> Complex64 {
    let e = |x: f64| Complex64::from_polar(1.0, m.mu * x);
    m.k_ex * (1.0 - e(tau)) - m.k_coll * (e(te) - e(tl + tau))
}

/// Time-bin contrast `∫∫ e^{-t_e-t_l} Π exp(-η²|β_j|²(1+2n̄))`; with
/// `instantaneous` both photons are taken at the start of their bins.
pub fn time_bin_zero_na(modes: &[ZeroNaMode], tau: f64, instantaneous: bool) -> Result<f64> {
    check(modes)?;
    if !(tau > 0.0) {
        return Err(invalid("tau", "must be > 0"));
    }
    let f = |te: f64, tl: f64| -> f64 {
        let e: f64 = modes.iter().map(|m| m.thermal() * time_bin_residual(m, tau, te, tl).norm_sqr()).sum();
        (-e).exp()
    };
    if instantaneous {
        return Ok(f(0.0, 0.0));
    }
    let outer = |te: f64| adaptive_exp(&|tl: f64| f(te, tl), 1e-11).unwrap_or(f64::NAN);
    let v = adaptive_exp(&outer, 1e-10)?;
    if v.is_nan() {
        return Err(invalid("modes", "inner integral did not converge"));
    }
    Ok(v)
}

/// Extra loss from the two excitation kicks alone, `exp(-Σ 2η²k_ex²(1 - cos μτ)(1+2n̄))`.
pub fn time_bin_excitation_factor(modes: &[ZeroNaMode], tau: f64) -> f64 {
    let s: f64 = modes
        .iter()
        .map(|m| 2.0 * m.k_ex * m.k_ex * m.thermal() * one_minus_cos(m.mu * tau))
        .sum();
    (-s).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn aligned(eta: f64, mu: f64, nbar: f64) -> Vec<ZeroNaMode> {
        ZeroNaMode::isotropic(eta, mu, nbar, Vector3::x(), Vector3::z())
    }

    #[test]
    fn single_photon_limits() {
        assert!((single_photon_zero_na(PI / 2.0, 0.0, 0.1, 3.0).unwrap() - 1.0).abs() < 1e-14);
        let c = single_photon_zero_na(PI / 2.0, 0.07, 0.1, 0.0).unwrap();
        assert!((c - (-0.0098f64).exp()).abs() < 1e-15);
        assert!((c - 0.990248).abs() < 1e-6);
        // numerical path at χ slightly off π/2 approaches the same value
        let near = single_photon_zero_na(PI / 2.0 - 1e-9, 0.07, 0.1, 0.0).unwrap();
        assert!((near - c).abs() < 1e-10);
        let small_mu = single_photon_zero_na(0.0, 0.07, 1e-6, 10.0).unwrap();
        assert!((1.0 - small_mu) < 1e-9);
    }

    #[test]
    fn timing_contrast_quoted_values() {
        let t = two_photon_zero_na_timing(&aligned(0.07, 0.1, 100.0)).unwrap();
        assert!((t.closed_form - 0.98049).abs() < 1e-5);
        assert!((0.5 * t.closed_form_error - 0.98e-2).abs() < 0.01e-2);
        let t = two_photon_zero_na_timing(&aligned(0.07, 0.1, 20.0)).unwrap();
        assert!((0.5 * t.closed_form_error - 2.0e-3).abs() < 0.01e-3);
        assert!((t.exact - t.closed_form).abs() < 1e-4);
        assert_eq!(two_photon_zero_na_timing(&aligned(0.07, 0.0, 20.0)).unwrap().exact, 1.0);
    }

    #[test]
    fn reduced_matches_nested() {
        let m = aligned(0.07, 0.3, 5.0);
        let a = two_photon_zero_na_timing(&m).unwrap().exact;
        let b = two_photon_zero_na_timing_nested(&m).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} {b}");
    }

    #[test]
    fn geometry_closed_forms() {
        assert_eq!(geometry_contrast(0.07, 0.0, 10.0, false).unwrap(), (1.0, 1.0));
        assert_eq!(geometry_contrast(0.07, 0.0, 10.0, true).unwrap(), (1.0, 1.0));
        let g = 0.07f64.powi(2) * 0.5 * 21.0;
        assert!((g - 0.051450).abs() < 1e-6);
        let (c1, _) = geometry_contrast(0.07, PI / 4.0, 10.0, false).unwrap();
        assert!(((1.0 - c1) / 2.0 - 0.04889).abs() < 1e-5);
        let (c2, e2) = geometry_contrast(0.07, PI / 4.0, 10.0, true).unwrap();
        assert!(((1.0 - c2) / 2.0 - 1.32e-3).abs() < 0.01e-3);
        assert!((c2 - 4.0 * (-2.0 * g).exp() / (1.0 + (-2.0 * g).exp()).powi(2)).abs() < 1e-15);
        assert!((e2 - (1.0 + (-2.0 * g).exp()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn time_bin_worst_and_best_spacing() {
        let m = aligned(0.07, 0.1, 20.0);
        let c = time_bin_zero_na(&m, PI / 0.1, true).unwrap();
        assert!((c - (-8.0 * 0.0049 * 41.0f64).exp()).abs() < 1e-12);
        assert!((c - 0.2005).abs() < 1e-4);
        assert!((0.5 * (1.0 + c) - 0.600).abs() < 1e-3);
        assert!((time_bin_excitation_factor(&m, 2.0 * PI / 0.1) - 1.0).abs() < 1e-12);
        // at a full trap period the time-bin contrast equals the plain timing contrast
        let tb = time_bin_zero_na(&m, 2.0 * PI / 0.1, false).unwrap();
        let tp = two_photon_zero_na_timing(&m).unwrap().exact;
        assert!((tb - tp).abs() < 1e-9, "{tb} {tp}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn contrasts_decrease_with_temperature(eta in 0.0f64..0.3, mu in 0.01f64..1.0, n in 0.0f64..50.0, dn in 0.1f64..20.0, chi in 0.0f64..PI) {
            let a = two_photon_zero_na_timing(&aligned(eta, mu, n)).unwrap();
            let b = two_photon_zero_na_timing(&aligned(eta, mu, n + dn)).unwrap();
            prop_assert!(b.exact <= a.exact + 1e-14);
            prop_assert!(b.closed_form <= a.closed_form);
            prop_assert!(a.exact <= 1.0 && a.exact > 0.0);
            let s1 = single_photon_zero_na(chi, eta, mu, n).unwrap();
            let s2 = single_photon_zero_na(chi, eta, mu, n + dn).unwrap();
            prop_assert!(s2 <= s1 + 1e-12);
            let (g1, _) = geometry_contrast(eta, chi, n, true).unwrap();
            let (g2, _) = geometry_contrast(eta, chi, n + dn, true).unwrap();
            prop_assert!(g2 <= g1);
        }

        #[test]
        fn error_scales_with_thermal_factor(mu in 0.005f64..0.02, n in 0.0f64..5.0) {
            // for a small exponent, 1 - C is linear in (1+2n̄)
            let e0 = two_photon_zero_na_timing(&aligned(0.07, mu, 0.0)).unwrap().exact_error;
            let en = two_photon_zero_na_timing(&aligned(0.07, mu, n)).unwrap().exact_error;
            let ratio = en / e0 / (1.0 + 2.0 * n);
            prop_assert!((ratio - 1.0).abs() < 1e-3, "ratio {}", ratio);
        }
    }
}
