//! Post-herald two-qubit states, Bell fidelities and efficiencies for the
//! single-photon, two-photon, split-geometry and time-bin protocols.
//!
//! Qubit basis order is `|00⟩, |01⟩, |10⟩, |11⟩` with node A as the first factor.

use nalgebra::{Matrix4, Vector3};
use num_complex::Complex64;

use crate::collection::{build_weight_grid, CollectionGeometry, DipoleChannel, WeightGrid};
use crate::error::{invalid, RecoilError, Result};
use crate::kick::{correction_displacement, optimize_kavg, pair_moment, weighted_mean_projection, KickOperator, LaserKick, MomentBackend};
use crate::phase_space::{MultiDisplacement, ThermalState, TrapModel};
use crate::quadrature;

pub mod closed_forms;
pub mod geometry;
pub mod pi_sigma;
pub mod single_photon;
pub mod time_bin;
pub mod two_photon;

pub(crate) const C0: Complex64 = Complex64::new(0.0, 0.0);

/// One network node: trap, motional state, collection optics and excitation.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeConfig {
    pub trap: TrapModel,
    pub motion: ThermalState,
    pub geometry: CollectionGeometry,
    /// Separate collection path for the second photon mode (output 0 of this
    /// geometry). Without it, photon mode `m` is output `m` of `geometry`.
    pub split_geometry: Option<CollectionGeometry>,
    pub channels: Vec<DipoleChannel>,
    /// Excitation laser direction; `None` means no excitation recoil.
    pub excitation: Option<Vector3<f64>>,
    /// Excitation probability, single-photon protocol only.
    pub p: f64,
    /// Optical path phase to the heralding station, single-photon protocol only.
    pub link_phase: f64,
}

impl NodeConfig {
    pub fn new(trap: TrapModel, motion: ThermalState, geometry: CollectionGeometry, channels: Vec<DipoleChannel>) -> Result<Self> {
        let node = Self {
            trap,
            motion,
            geometry,
            split_geometry: None,
            channels,
            excitation: None,
            p: 0.0,
            link_phase: 0.0,
        };
        node.validate()?;
        Ok(node)
    }

    pub fn with_excitation(mut self, direction: Vector3<f64>) -> Result<Self> {
        LaserKick::new(direction, 0.0)?;
        self.excitation = Some(direction);
        Ok(self)
    }

    pub fn with_p(mut self, p: f64) -> Result<Self> {
        self.p = p;
        self.validate()?;
        Ok(self)
    }

    pub fn with_link_phase(mut self, phase: f64) -> Self {
        self.link_phase = phase;
        self
    }

    pub fn with_split_geometry(mut self, geometry: CollectionGeometry) -> Result<Self> {
        geometry.validate()?;
        self.split_geometry = Some(geometry);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid("p", format!("excitation probability must lie in [0, 1], got {}", self.p)));
        }
        if self.channels.is_empty() {
            return Err(invalid("channels", "need at least one decay channel"));
        }
        self.motion.check_modes(self.trap.len())?;
        self.geometry.validate()?;
        if let Some(g) = &self.split_geometry {
            g.validate()?;
        }
        Ok(())
    }

    /// Angle between excitation and the mean collection direction.
    pub fn chi(&self) -> Option<f64> {
        self.excitation
            .map(|k| k.dot(&self.geometry.collection_axis()).clamp(-1.0, 1.0).acos())
    }

    pub(crate) fn laser(&self, time: f64) -> Option<LaserKick> {
        self.excitation.map(|direction| LaserKick { direction, time })
    }

    /// Collection geometry is an idealized zero-NA limit with vanishing efficiency.
    pub(crate) fn idealized(&self) -> bool {
        !matches!(self.geometry, CollectionGeometry::GaussianLens(_))
    }
}

/// Accepted detection times, in units of the inverse decay rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeraldWindow {
    pub t_max: f64,
    /// Largest accepted `|t_V - t_H|` (two-photon protocols).
    pub dt_max: Option<f64>,
}

impl Default for HeraldWindow {
    fn default() -> Self {
        Self {
            t_max: f64::INFINITY,
            dt_max: None,
        }
    }
}

impl HeraldWindow {
    pub fn new(t_max: f64, dt_max: Option<f64>) -> Result<Self> {
        let w = Self { t_max, dt_max };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0) {
            return Err(invalid("t_max", "must be > 0"));
        }
        if let Some(d) = self.dt_max {
            if !(d >= 0.0) {
                return Err(invalid("dt_max", "must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Collection-grid and time-quadrature sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub n_polar: usize,
    pub n_azimuthal: usize,
    /// Gauss nodes per time axis; doubled when any `μ/Γ > 0.5`.
    pub time_nodes: usize,
    pub backend: MomentBackend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub quadrature: Quadrature,
    /// Cheaper sizes used inside the correction search.
    pub search: Quadrature,
    /// `Γ → ∞`: every photon is detected at `t = 0` and there is no time integral.
    pub instantaneous: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            quadrature: Quadrature {
                n_polar: 16,
                n_azimuthal: 32,
                time_nodes: 64,
                backend: MomentBackend::Analytic,
            },
            search: Quadrature {
                n_polar: 6,
                n_azimuthal: 12,
                time_nodes: 6,
                backend: MomentBackend::Analytic,
            },
            instantaneous: false,
        }
    }
}

/// Normalized post-herald two-qubit state and its figures of merit.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityResult {
    pub rho: Matrix4<Complex64>,
    pub fidelity: f64,
    pub contrast: f64,
    /// Trace of the unnormalized post-herald state (relative herald probability).
    pub efficiency: f64,
    /// Mean projections used by the correction, if one was applied.
    pub k_avg: Option<Vec<f64>>,
}

impl FidelityResult {
    pub fn from_unnormalized(m: Matrix4<Complex64>, k_avg: Option<Vec<f64>>) -> Result<Self> {
        let tr = m.trace().re;
        if !(tr > 1e-300) {
            return Err(RecoilError::NoHerald);
        }
        let rho = m / Complex64::new(tr, 0.0);
        Ok(Self {
            fidelity: bell_fidelity(&rho),
            contrast: contrast(&rho),
            rho,
            efficiency: tr,
            k_avg,
        })
    }

    pub fn error(&self) -> f64 {
        1.0 - self.fidelity
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (self.rho + self.rho.adjoint()) * Complex64::new(0.5, 0.0);
        h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Hermitian, unit trace and positive semidefinite to `tol`.
    pub fn check_physical(&self, tol: f64) -> Result<()> {
        let herm = (self.rho - self.rho.adjoint()).camax();
        let tr = (self.rho.trace() - Complex64::new(1.0, 0.0)).norm();
        let min = self.min_eigenvalue();
        if herm > tol || tr > tol || min < -tol {
            return Err(RecoilError::NotConverged {
                check: "post-herald state",
                detail: format!("hermiticity {herm:e}, trace {tr:e}, min eigenvalue {min:e}"),
            });
        }
        Ok(())
    }
}

/// Overlap with the closest of `(|01⟩ + e^{iφ}|10⟩)/√2`, `(|00⟩ + e^{iφ}|11⟩)/√2`.
pub fn bell_fidelity(rho: &Matrix4<Complex64>) -> f64 {
    let odd = 0.5 * (rho[(1, 1)].re + rho[(2, 2)].re) + rho[(1, 2)].norm();
    let even = 0.5 * (rho[(0, 0)].re + rho[(3, 3)].re) + rho[(0, 3)].norm();
    odd.max(even)
}

/// Normalized `|01⟩`–`|10⟩` coherence `2|ρ₀₁,₁₀| / (ρ₀₁,₀₁ + ρ₁₀,₁₀)`.
pub fn contrast(rho: &Matrix4<Complex64>) -> f64 {
    let pop = rho[(1, 1)].re + rho[(2, 2)].re;
    if pop <= 0.0 {
        return 0.0;
    }
    2.0 * rho[(1, 2)].norm() / pop
}

fn time_nodes(q: &Quadrature, trap: &TrapModel) -> usize {
    if trap.max_frequency_ratio() > 0.5 {
        2 * q.time_nodes
    } else {
        q.time_nodes
    }
}

/// Nodes for `∫_0^{t_max} e^{-t} f(t) dt`, weight including the exponential.
pub(crate) fn single_times(window: &HeraldWindow, n: usize) -> Result<Vec<(f64, f64)>> {
    window.validate()?;
    if window.t_max.is_infinite() {
        quadrature::laguerre(n)
    } else {
        Ok(quadrature::legendre(n, 0.0, window.t_max)?
            .into_iter()
            .map(|(t, w)| (t, w * (-t).exp()))
            .collect())
    }
}

/// Nodes `(t_0, t_1, w)` for `∫∫ e^{-t_0-t_1} f` over the accepted window.
///
/// Integrates in `t = min(t_0, t_1)` and `Δ = |t_1 - t_0|`, so a `Δ` cutoff is an
/// integration limit rather than a discontinuity.
pub(crate) fn pair_times(window: &HeraldWindow, n: usize) -> Result<Vec<(f64, f64, f64)>> {
    window.validate()?;
    if window.dt_max == Some(0.0) {
        return Err(RecoilError::EmptyWindow);
    }
    let mut out = Vec::new();
    let mut push = |t: f64, d: f64, w: f64| {
        out.push((t, t + d, w));
        out.push((t + d, t, w));
    };
    if window.t_max.is_infinite() {
        let outer: Vec<(f64, f64)> = quadrature::laguerre(n)?.into_iter().map(|(u, w)| (0.5 * u, 0.5 * w)).collect();
        let inner = match window.dt_max {
            None => quadrature::laguerre(n)?,
            Some(d) => quadrature::legendre(n, 0.0, d)?
                .into_iter()
                .map(|(x, w)| (x, w * (-x).exp()))
                .collect(),
        };
        for (t, wt) in &outer {
            for (d, wd) in &inner {
                push(*t, *d, wt * wd);
            }
        }
    } else {
        for (t, wt) in quadrature::legendre(n, 0.0, window.t_max)? {
            let span = (window.t_max - t).min(window.dt_max.unwrap_or(f64::INFINITY));
            for (d, wd) in quadrature::legendre(n, 0.0, span)? {
                push(t, d, wt * (-2.0 * t).exp() * wd * (-d).exp());
            }
        }
    }
    Ok(out)
}

#[cfg(feature = "parallel")]
pub(crate) fn try_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn try_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
    items.iter().map(f).collect()
}

/// Where the amplitude for qubit state `i` and photon mode `m` comes from.
#[derive(Debug, Clone)]
pub(crate) struct Source {
    grid: usize,
    channel: usize,
    output: usize,
    /// Added to the mode's detection time to give the wavepacket time.
    offset: f64,
    laser: Option<LaserKick>,
}

/// A node with its weight grids built, exposing kick operators by
/// `(qubit state, photon mode)`.
pub(crate) struct Emitter<'a> {
    pub node: &'a NodeConfig,
    grids: Vec<WeightGrid>,
    sources: [[Option<Source>; 2]; 2],
}

impl<'a> Emitter<'a> {
    fn grids(node: &NodeConfig, q: &Quadrature) -> Result<Vec<WeightGrid>> {
        let mut grids = vec![build_weight_grid(&node.geometry, &node.channels, q.n_polar, q.n_azimuthal)?];
        if let Some(g) = &node.split_geometry {
            grids.push(build_weight_grid(g, &node.channels, q.n_polar, q.n_azimuthal)?);
        }
        Ok(grids)
    }

    /// Two decay channels labelled `H` (qubit 0) and `V` (qubit 1), collected
    /// into photon modes H and V including any cross-coupling.
    pub fn polarization(node: &'a NodeConfig, q: &Quadrature) -> Result<Self> {
        let grids = Self::grids(node, q)?;
        let channel = [grids[0].channel_index("H")?, grids[0].channel_index("V")?];
        let route = |m: usize| if grids.len() > 1 { (m, 0) } else { (0, m) };
        if grids.len() == 1 && grids[0].outputs() < 2 {
            return Err(invalid("geometry", "two-photon protocols need two collected outputs"));
        }
        let mut sources: [[Option<Source>; 2]; 2] = Default::default();
        for (i, row) in sources.iter_mut().enumerate() {
            for (m, slot) in row.iter_mut().enumerate() {
                let (g, output) = route(m);
                if grids[g].power(channel[i], output) > 0.0 {
                    *slot = Some(Source {
                        grid: g,
                        channel: channel[i],
                        output,
                        offset: 0.0,
                        laser: node.laser(0.0),
                    });
                }
            }
        }
        for (i, l) in ["H", "V"].iter().enumerate() {
            if sources[i][i].is_none() {
                return Err(RecoilError::MissingChannel(format!("channel {l} does not couple into mode {l}")));
            }
        }
        Ok(Self { node, grids, sources })
    }

    /// One channel excited twice, `tau` apart: early bin is qubit 0, late bin qubit 1.
    pub fn time_bin(node: &'a NodeConfig, tau: f64, q: &Quadrature) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(invalid("tau", "time-bin spacing must be finite and > 0"));
        }
        if node.channels.len() != 1 {
            return Err(invalid("channels", "time-bin encoding uses exactly one decay channel"));
        }
        let grids = Self::grids(node, q)?;
        let src = |offset: f64| Source {
            grid: 0,
            channel: 0,
            output: 0,
            offset,
            laser: node.laser(offset),
        };
        Ok(Self {
            node,
            grids,
            sources: [[Some(src(0.0)), None], [None, Some(src(tau))]],
        })
    }

    /// Single emitting channel into output 0, as qubit 1 / mode 1.
    pub fn single(node: &'a NodeConfig, q: &Quadrature) -> Result<Self> {
        if node.channels.len() != 1 {
            return Err(invalid("channels", "the single-photon protocol uses exactly one emitting channel"));
        }
        let grids = Self::grids(node, q)?;
        let s = Source {
            grid: 0,
            channel: 0,
            output: 0,
            offset: 0.0,
            laser: node.laser(0.0),
        };
        Ok(Self {
            node,
            grids,
            sources: [[None, None], [None, Some(s)]],
        })
    }

    pub fn trap(&self) -> &TrapModel {
        &self.node.trap
    }

    pub fn motion(&self) -> &ThermalState {
        &self.node.motion
    }

    /// Inverse of the mean kick of qubit state `i` at its own mode time.
    pub fn correction(&self, state: usize, t: f64, k_avg: &[f64]) -> Result<MultiDisplacement> {
        match &self.sources[state][state] {
            Some(s) => correction_displacement(self.trap(), s.offset + t, s.laser.as_ref(), k_avg),
            None => Ok(MultiDisplacement::identity(self.trap().len())),
        }
    }

    pub fn kick(&self, state: usize, mode: usize, t: f64, correction: Option<&MultiDisplacement>) -> Result<Option<KickOperator>> {
        let Some(s) = &self.sources[state][mode] else {
            return Ok(None);
        };
        let k = KickOperator::new(self.trap(), &self.grids[s.grid], s.channel, s.output, s.offset + t, s.laser.as_ref())?;
        Ok(Some(match correction {
            Some(m) => k.with_correction(m)?,
            None => k,
        }))
    }

    /// Projections to seed the correction search: each designated source's
    /// weighted mean direction, and their average.
    pub fn kavg_seeds(&self) -> Vec<Vec<f64>> {
        let mut seeds: Vec<Vec<f64>> = (0..2)
            .filter_map(|i| self.sources[i][i].as_ref())
            .map(|s| weighted_mean_projection(&self.grids[s.grid], s.channel, s.output, self.trap()))
            .collect();
        if seeds.len() == 2 && seeds[0] != seeds[1] {
            let avg = seeds[0].iter().zip(&seeds[1]).map(|(a, b)| 0.5 * (a + b)).collect();
            seeds.insert(0, avg);
        }
        seeds
    }

    /// Total probability that a photon from qubit state `i` lands in mode `m`:
    /// `∫ e^{-t} tr(K ρ K†) dt`.
    pub fn efficiency(&self, state: usize, mode: usize, n: usize, backend: MomentBackend) -> Result<f64> {
        let mut acc = 0.0;
        for (t, w) in quadrature::laguerre(n)? {
            if let Some(k) = self.kick(state, mode, t, None)? {
                acc += w * pair_moment(&k, &k, self.motion(), backend)?.re;
            }
        }
        Ok(acc)
    }
}

/// Runs `eval` uncorrected, or searches the correction's mean projection with
/// `eval(_, true)` (cheap settings) and then evaluates it with the full ones.
pub(crate) fn with_optional_correction(
    corrected: bool,
    seeds: Vec<Vec<f64>>,
    eval: &dyn Fn(Option<&[f64]>, bool) -> Result<FidelityResult>,
) -> Result<FidelityResult> {
    if !corrected {
        return eval(None, false);
    }
    let objective = |k: &[f64]| eval(Some(k), true).map(|r| r.fidelity);
    let k = optimize_kavg(&seeds, &objective)?;
    eval(Some(&k), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn bell_state_fidelities() {
        let mut m = Matrix4::<Complex64>::zeros();
        m[(1, 1)] = c(0.5);
        m[(2, 2)] = c(0.5);
        m[(1, 2)] = Complex64::new(0.0, -0.5);
        m[(2, 1)] = Complex64::new(0.0, 0.5);
        let r = FidelityResult::from_unnormalized(m * c(3.0), None).unwrap();
        assert!((r.fidelity - 1.0).abs() < 1e-15);
        assert!((r.contrast - 1.0).abs() < 1e-15);
        assert!((r.efficiency - 3.0).abs() < 1e-15);
        r.check_physical(1e-12).unwrap();

        let mut s = Matrix4::<Complex64>::zeros();
        s[(2, 2)] = c(1.0);
        let r = FidelityResult::from_unnormalized(s, None).unwrap();
        assert!((r.fidelity - 0.5).abs() < 1e-15);
        assert_eq!(r.contrast, 0.0);
        assert!(matches!(FidelityResult::from_unnormalized(Matrix4::zeros(), None), Err(RecoilError::NoHerald)));
    }

    #[test]
    fn pair_times_integrate_product_and_window() {
        let nodes = pair_times(&HeraldWindow::default(), 24).unwrap();
        let total: f64 = nodes.iter().map(|x| x.2).sum();
        assert!((total - 1.0).abs() < 1e-13);
        // ∫∫ e^{-a-b} a b = 1
        let m: f64 = nodes.iter().map(|(a, b, w)| w * a * b).sum();
        assert!((m - 1.0).abs() < 1e-12);
        // P(|Δ| < d) = 1 - e^{-d}
        let win = HeraldWindow::new(f64::INFINITY, Some(0.7)).unwrap();
        let p: f64 = pair_times(&win, 16).unwrap().iter().map(|x| x.2).sum();
        assert!((p - (1.0 - (-0.7f64).exp())).abs() < 1e-13);
        // both times below 2: (1 - e^{-2})^2
        let win = HeraldWindow::new(2.0, None).unwrap();
        let p: f64 = pair_times(&win, 16).unwrap().iter().map(|x| x.2).sum();
        assert!((p - (1.0 - (-2.0f64).exp()).powi(2)).abs() < 1e-13);
        assert!(matches!(pair_times(&HeraldWindow::new(1.0, Some(0.0)).unwrap(), 4), Err(RecoilError::EmptyWindow)));
    }

    #[test]
    fn single_times_weights() {
        let s: f64 = single_times(&HeraldWindow::new(3.0, None).unwrap(), 20).unwrap().iter().map(|x| x.1).sum();
        assert!((s - (1.0 - (-3.0f64).exp())).abs() < 1e-14);
        assert!(HeraldWindow::new(0.0, None).is_err());
        assert!(HeraldWindow::new(1.0, Some(-1.0)).is_err());
    }

    proptest! {
        #[test]
        fn bell_fidelity_bounded_for_states(a in prop::collection::vec(-1.0f64..1.0, 32)) {
            let g = nalgebra::Matrix4::from_fn(|i, j| Complex64::new(a[4 * i + j], a[16 + 4 * i + j]));
            let m = g * g.adjoint();
            let r = FidelityResult::from_unnormalized(m, None).unwrap();
            prop_assert!(r.fidelity <= 1.0 + 1e-12);
            prop_assert!(r.fidelity >= 0.0);
            prop_assert!(r.contrast <= 1.0 + 1e-12);
            r.check_physical(1e-10).unwrap();
        }
    }
}
