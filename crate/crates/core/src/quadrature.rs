//! Quadrature rules: fixed Gauss–Legendre and Gauss–Laguerre node sets and a
//! globally adaptive Gauss–Legendre integrator for smooth 1-D integrands.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::{GaussLaguerre, GaussLegendre};

use crate::error::{invalid, RecoilError, Result};

/// Gauss–Legendre nodes and weights mapped to `[a, b]`.
pub fn legendre(n: usize, a: f64, b: f64) -> Result<Vec<(f64, f64)>> {
    let n = NonZeroUsize::new(n).ok_or_else(|| invalid("n_nodes", "must be >= 1"))?;
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Ok(GaussLegendre::new(n)
        .as_node_weight_pairs()
        .iter()
        .map(|(x, w)| (mid + half * x, half * w))
        .collect())
}

/// Gauss–Laguerre nodes and weights for `∫_0^∞ e^{-x} f(x) dx`.
pub fn laguerre(n: usize) -> Result<Vec<(f64, f64)>> {
    let n = NonZeroUsize::new(n).ok_or_else(|| invalid("n_nodes", "must be >= 1"))?;
    let alpha = 0.0.try_into().expect("zero is a valid Laguerre parameter");
    Ok(GaussLaguerre::new(n, alpha).as_node_weight_pairs().to_vec())
}

struct Pair {
    lo: Vec<(f64, f64)>,
    hi: Vec<(f64, f64)>,
}

fn pair() -> &'static Pair {
    static P: OnceLock<Pair> = OnceLock::new();
    P.get_or_init(|| Pair {
        lo: legendre(10, -1.0, 1.0).expect("static order"),
        hi: legendre(21, -1.0, 1.0).expect("static order"),
    })
}

fn rule(nodes: &[(f64, f64)], f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    half * nodes.iter().map(|(x, w)| w * f(mid + half * x)).sum::<f64>()
}

/// Adaptive integral of `f` over `[a, b]` to relative tolerance `rel`
/// (with an absolute floor of `rel * 1e-3`), by bisecting the worst panel.
pub fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> Result<f64> {
    if !(b > a) {
        return if a == b { Ok(0.0) } else { Err(invalid("interval", "needs a <= b")) };
    }
    let p = pair();
    let eval = |lo: f64, hi: f64| {
        let coarse = rule(&p.lo, f, lo, hi);
        let fine = rule(&p.hi, f, lo, hi);
        (lo, hi, fine, (fine - coarse).abs())
    };
    let mut panels = vec![eval(a, b)];
    for _ in 0..4000 {
        let total: f64 = panels.iter().map(|x| x.2).sum();
        let err: f64 = panels.iter().map(|x| x.3).sum();
        if err <= rel * total.abs().max(1e-3) {
            return Ok(total);
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, x)| if x.3 > best.1 { (i, x.3) } else { best });
        let (lo, hi, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        panels.push(eval(lo, mid));
        panels.push(eval(mid, hi));
    }
    Err(RecoilError::NotConverged {
        check: "adaptive quadrature",
        detail: format!("no convergence to rel {rel:e} on [{a}, {b}]"),
    })
}

/// `∫_0^∞ e^{-t} f(t) dt`, split at `t = 40` where the tail is below 1e-17.
pub fn adaptive_exp(f: &dyn Fn(f64) -> f64, rel: f64) -> Result<f64> {
    let g = |t: f64| (-t).exp() * f(t);
    adaptive(&g, 0.0, 40.0, rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let nodes = legendre(8, 0.0, 2.0).unwrap();
        let sum: f64 = nodes.iter().map(|(x, w)| w * x.powi(7)).sum();
        assert!((sum - 2f64.powi(8) / 8.0).abs() < 1e-12);
        let wsum: f64 = nodes.iter().map(|(_, w)| w).sum();
        assert!((wsum - 2.0).abs() < 1e-14);
    }

    #[test]
    fn laguerre_moments() {
        let nodes = laguerre(20).unwrap();
        let m3: f64 = nodes.iter().map(|(x, w)| w * x.powi(3)).sum();
        assert!((m3 - 6.0).abs() < 1e-10);
        assert!(laguerre(0).is_err());
    }

    #[test]
    fn adaptive_handles_oscillation() {
        let v = adaptive(&|x: f64| (50.0 * x).cos(), 0.0, 3.0, 1e-12).unwrap();
        assert!((v - (150.0f64).sin() / 50.0).abs() < 1e-13);
        let v = adaptive_exp(&|t: f64| (0.3 * t).cos(), 1e-12).unwrap();
        assert!((v - 1.0 / 1.09).abs() < 1e-12);
    }
}
