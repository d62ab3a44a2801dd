//! Gaussian phase-space algebra for multi-mode displacement operators acting
//! on product thermal states.
//!
//! Everything is expressed in units of the excited-state decay rate: mode
//! frequencies enter only as the ratio `mu / Gamma`.

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{invalid, RecoilError, Result};

/// One harmonic mode of the emitter's centre-of-mass motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionalMode {
    /// Mode frequency in units of the decay rate.
    pub frequency_ratio: f64,
    /// Lamb-Dicke parameter of the emitted photon for this mode.
    pub lamb_dicke: f64,
    /// Unit vector along the mode's oscillation direction.
    pub axis: Vector3<f64>,
}

impl MotionalMode {
    pub fn new(frequency_ratio: f64, lamb_dicke: f64, axis: Vector3<f64>) -> Result<Self> {
        if !(frequency_ratio > 0.0) || !frequency_ratio.is_finite() {
            return Err(invalid("frequency_ratio", format!("must be > 0, got {frequency_ratio}")));
        }
        if !(lamb_dicke >= 0.0) || !lamb_dicke.is_finite() {
            return Err(invalid("lamb_dicke", format!("must be >= 0, got {lamb_dicke}")));
        }
        if (axis.norm() - 1.0).abs() > 1e-12 {
            return Err(invalid("axis", format!("must be a unit vector, |axis| = {}", axis.norm())));
        }
        Ok(Self {
            frequency_ratio,
            lamb_dicke,
            axis,
        })
    }
}

/// The set of motional modes of one trapped emitter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapModel {
    modes: Vec<MotionalMode>,
}

impl TrapModel {
    pub fn new(modes: Vec<MotionalMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(invalid("modes", "a trap needs at least one motional mode"));
        }
        for (i, a) in modes.iter().enumerate() {
            for b in &modes[i + 1..] {
                let overlap = a.axis.dot(&b.axis);
                if overlap.abs() > 1e-10 {
                    return Err(invalid(
                        "modes",
                        format!("mode axes must be pairwise orthogonal (overlap {overlap:e})"),
                    ));
                }
            }
        }
        Ok(Self { modes })
    }

    /// Three degenerate modes along x, y, z.
    pub fn isotropic(frequency_ratio: f64, lamb_dicke: f64) -> Result<Self> {
        let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
        let modes = axes
            .into_iter()
            .map(|axis| MotionalMode::new(frequency_ratio, lamb_dicke, axis))
            .collect::<Result<Vec<_>>>()?;
        Self::new(modes)
    }

    pub fn modes(&self) -> &[MotionalMode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Projections of a direction onto every mode axis.
    pub fn project(&self, direction: &Vector3<f64>) -> Vec<f64> {
        self.modes.iter().map(|m| m.axis.dot(direction)).collect()
    }

    /// Largest `mu_j / Gamma` over all modes.
    pub fn max_frequency_ratio(&self) -> f64 {
        self.modes.iter().map(|m| m.frequency_ratio).fold(0.0, f64::max)
    }
}

/// Product thermal state with one mean occupation per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalState {
    nbar: Vec<f64>,
}

impl ThermalState {
    pub fn new(nbar: Vec<f64>) -> Result<Self> {
        if let Some(bad) = nbar.iter().find(|n| !(**n >= 0.0) || !n.is_finite()) {
            return Err(invalid("nbar", format!("occupations must be finite and >= 0, got {bad}")));
        }
        Ok(Self { nbar })
    }

    pub fn uniform(nbar: f64, modes: usize) -> Result<Self> {
        Self::new(vec![nbar; modes])
    }

    pub fn for_trap(trap: &TrapModel, nbar: f64) -> Result<Self> {
        Self::uniform(nbar, trap.len())
    }

    pub fn nbar(&self) -> &[f64] {
        &self.nbar
    }

    pub fn len(&self) -> usize {
        self.nbar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nbar.is_empty()
    }

    pub(crate) fn check_modes(&self, modes: usize) -> Result<()> {
        if self.nbar.len() != modes {
            return Err(RecoilError::ModeMismatch {
                expected: modes,
                got: self.nbar.len(),
            });
        }
        Ok(())
    }
}

/// `phase * (D_1(beta_1) ⊗ D_2(beta_2) ⊗ ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiDisplacement {
    pub beta: Vec<Complex64>,
    pub global_phase: Complex64,
}

/// Symplectic form `Im(a conj(b))`, summed over modes.
pub fn symplectic(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x * y.conj()).im).sum()
}

impl MultiDisplacement {
    pub fn new(beta: Vec<Complex64>, global_phase: Complex64) -> Result<Self> {
        if (global_phase.norm() - 1.0).abs() > 1e-12 {
            return Err(invalid(
                "global_phase",
                format!("must have unit modulus, got {}", global_phase.norm()),
            ));
        }
        Ok(Self { beta, global_phase })
    }

    pub fn from_beta(beta: Vec<Complex64>) -> Self {
        Self {
            beta,
            global_phase: Complex64::new(1.0, 0.0),
        }
    }

    pub fn identity(modes: usize) -> Self {
        Self::from_beta(vec![Complex64::new(0.0, 0.0); modes])
    }

    pub fn modes(&self) -> usize {
        self.beta.len()
    }

    pub fn is_identity(&self) -> bool {
        self.beta.iter().all(|b| b.norm_sqr() == 0.0) && self.global_phase == Complex64::new(1.0, 0.0)
    }

    /// The adjoint `conj(phase) D(-beta)`.
    pub fn adjoint(&self) -> Self {
        Self {
            beta: self.beta.iter().map(|b| -b).collect(),
            global_phase: self.global_phase.conj(),
        }
    }

    /// Multiplies the global phase by `exp(i theta)`.
    pub fn with_phase(mut self, theta: f64) -> Self {
        self.global_phase *= Complex64::from_polar(1.0, theta);
        self
    }

    fn check_modes(&self, other: usize) -> Result<()> {
        if self.beta.len() != other {
            return Err(RecoilError::ModeMismatch {
                expected: self.beta.len(),
                got: other,
            });
        }
        Ok(())
    }
}

/// Operator product `a · b`, using `D(x)D(y) = exp((x y* - x* y)/2) D(x + y)` per mode.
pub fn compose(a: &MultiDisplacement, b: &MultiDisplacement) -> Result<MultiDisplacement> {
    a.check_modes(b.modes())?;
    let theta = symplectic(&a.beta, &b.beta);
    Ok(MultiDisplacement {
        beta: a.beta.iter().zip(&b.beta).map(|(x, y)| x + y).collect(),
        global_phase: a.global_phase * b.global_phase * Complex64::from_polar(1.0, theta),
    })
}

/// Left-to-right operator product of a sequence of displacements.
pub fn compose_all<'a, I>(modes: usize, ops: I) -> Result<MultiDisplacement>
where
    I: IntoIterator<Item = &'a MultiDisplacement>,
{
    ops.into_iter()
        .try_fold(MultiDisplacement::identity(modes), |acc, op| compose(&acc, op))
}

/// `tr(D rho)` for a product thermal state: `phase * prod_j exp(-|beta_j|^2 (nbar_j + 1/2))`.
pub fn thermal_char(d: &MultiDisplacement, rho: &ThermalState) -> Result<Complex64> {
    rho.check_modes(d.modes())?;
    let exponent: f64 = d
        .beta
        .iter()
        .zip(rho.nbar())
        .map(|(b, n)| -b.norm_sqr() * (n + 0.5))
        .sum();
    Ok(d.global_phase * exponent.exp())
}

/// `tr(D · F rho F†)` where `F = D(frame)`:
/// the thermal value times `prod_j exp(beta_j frame_j* - beta_j* frame_j)`.
pub fn displaced_thermal_char(
    d: &MultiDisplacement,
    frame: &MultiDisplacement,
    rho: &ThermalState,
) -> Result<Complex64> {
    d.check_modes(frame.modes())?;
    let base = thermal_char(d, rho)?;
    let theta = 2.0 * symplectic(&d.beta, &frame.beta);
    Ok(base * Complex64::from_polar(1.0, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn identity_is_neutral() {
        let x = MultiDisplacement::from_beta(vec![c(0.3, -0.2), c(1.1, 0.4)]);
        let id = MultiDisplacement::identity(2);
        let r = compose(&id, &x).unwrap();
        assert_eq!(r, x);
    }

    #[test]
    fn compose_single_mode_phase() {
        let a = MultiDisplacement::from_beta(vec![c(0.0, 1.0)]);
        let b = MultiDisplacement::from_beta(vec![c(1.0, 0.0)]);
        let r = compose(&a, &b).unwrap();
        assert!((r.beta[0] - c(1.0, 1.0)).norm() < 1e-15);
        // (i·1 - (-i)·1)/2 = i
        assert!((r.global_phase - Complex64::from_polar(1.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let a = MultiDisplacement::from_beta(vec![c(0.7, -0.1), c(-0.2, 0.9)]);
        let r = compose(&a, &a.adjoint()).unwrap();
        assert!(r.beta.iter().all(|b| b.norm() < 1e-15));
        assert!((r.global_phase - 1.0).norm() < 1e-15);
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let a = MultiDisplacement::identity(2);
        let b = MultiDisplacement::identity(3);
        assert!(matches!(compose(&a, &b), Err(RecoilError::ModeMismatch { .. })));
        let rho = ThermalState::uniform(0.0, 3).unwrap();
        assert!(thermal_char(&a, &rho).is_err());
    }

    #[test]
    fn non_unit_phase_rejected() {
        assert!(MultiDisplacement::new(vec![c(0.0, 0.0)], c(2.0, 0.0)).is_err());
    }

    #[test]
    fn thermal_char_values() {
        let rho0 = ThermalState::uniform(0.0, 1).unwrap();
        let rho2 = ThermalState::uniform(2.0, 1).unwrap();
        let d = MultiDisplacement::from_beta(vec![c(0.1, 0.0)]);
        assert!((thermal_char(&d, &rho0).unwrap().re - 0.995_012_479_192_682_3).abs() < 1e-12);
        let d = MultiDisplacement::from_beta(vec![c(0.2, 0.0)]);
        assert!((thermal_char(&d, &rho2).unwrap().re - (-0.1f64).exp()).abs() < 1e-12);
        let id = MultiDisplacement::identity(1);
        assert_eq!(thermal_char(&id, &rho2).unwrap(), c(1.0, 0.0));
    }

    #[test]
    fn displaced_char_limits() {
        let rho = ThermalState::uniform(1.3, 2).unwrap();
        let d = MultiDisplacement::from_beta(vec![c(0.2, 0.1), c(-0.3, 0.05)]);
        let zero = MultiDisplacement::identity(2);
        assert_eq!(
            displaced_thermal_char(&d, &zero, &rho).unwrap(),
            thermal_char(&d, &rho).unwrap()
        );
        let frame = MultiDisplacement::from_beta(vec![c(0.5, -0.4), c(0.1, 0.2)]);
        let one = displaced_thermal_char(&zero, &frame, &rho).unwrap();
        assert!((one - 1.0).norm() < 1e-15);
    }

    #[test]
    fn trap_validation() {
        assert!(MotionalMode::new(0.0, 0.1, Vector3::x()).is_err());
        assert!(MotionalMode::new(0.1, -0.1, Vector3::x()).is_err());
        assert!(MotionalMode::new(0.1, 0.1, Vector3::new(1.0, 1.0, 0.0)).is_err());
        let a = MotionalMode::new(0.1, 0.1, Vector3::x()).unwrap();
        let b = MotionalMode::new(0.1, 0.1, Vector3::new(1.0, 1.0, 0.0).normalize()).unwrap();
        assert!(TrapModel::new(vec![a, b]).is_err());
        assert!(TrapModel::new(vec![]).is_err());
        assert!(ThermalState::new(vec![-1.0]).is_err());
    }

    fn beta_strategy(modes: usize) -> impl Strategy<Value = Vec<Complex64>> {
        proptest::collection::vec((-1.4f64..1.4, -1.4f64..1.4), modes)
            .prop_map(|v| v.into_iter().map(|(r, i)| c(r, i)).collect())
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in beta_strategy(3), b in beta_strategy(3), cc in beta_strategy(3)) {
            let (a, b, cc) = (
                MultiDisplacement::from_beta(a),
                MultiDisplacement::from_beta(b),
                MultiDisplacement::from_beta(cc),
            );
            let left = compose(&compose(&a, &b).unwrap(), &cc).unwrap();
            let right = compose(&a, &compose(&b, &cc).unwrap()).unwrap();
            prop_assert!((left.global_phase - right.global_phase).norm() < 1e-12);
            for (x, y) in left.beta.iter().zip(&right.beta) {
                prop_assert!((x - y).norm() < 1e-12);
            }
        }

        #[test]
        fn thermal_char_bounded_and_monotone(b in beta_strategy(2), n in 0.0f64..5.0, dn in 0.01f64..3.0) {
            let d = MultiDisplacement::from_beta(b.clone());
            let lo = thermal_char(&d, &ThermalState::uniform(n, 2).unwrap()).unwrap().norm();
            let hi = thermal_char(&d, &ThermalState::new(vec![n + dn, n]).unwrap()).unwrap().norm();
            prop_assert!(lo <= 1.0);
            if b.iter().any(|x| x.norm() > 1e-6) {
                prop_assert!(lo < 1.0);
            }
            if b[0].norm() > 1e-3 {
                prop_assert!(hi < lo);
            }
        }
    }
}
