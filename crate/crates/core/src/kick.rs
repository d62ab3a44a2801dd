//! Kick operators `K(t) = M · Σ_q w_q D(k̂_q; t) · L` and their thermal moments.
//!
//! `L` is the excitation-laser kick (applied first), the sum runs over the
//! collection nodes, and `M` is an optional post-herald correction.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

use crate::collection::WeightGrid;
use crate::error::{invalid, RecoilError, Result};
use crate::fock;
use crate::phase_space::{compose_all, symplectic, thermal_char, MultiDisplacement, ThermalState, TrapModel};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Time offset within the photonic wavepacket, in units of the inverse decay rate.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HeraldTime(f64);

impl HeraldTime {
    pub fn new(t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid("t", format!("herald time must be finite and >= 0, got {t}")));
        }
        Ok(Self(t))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Impulsive plane-wave excitation along `direction` at time `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaserKick {
    pub direction: Vector3<f64>,
    pub time: f64,
}

impl LaserKick {
    pub fn new(direction: Vector3<f64>, time: f64) -> Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-12 {
            return Err(invalid("excitation_direction", "must be a unit vector"));
        }
        Ok(Self { direction, time })
    }

    /// `β_j = i η_j e^{iμ_j t_L} (k̂_ex·ê_j)`.
    pub fn displacement(&self, trap: &TrapModel) -> MultiDisplacement {
        MultiDisplacement::from_beta(
            trap.modes()
                .iter()
                .map(|m| I * m.lamb_dicke * Complex64::from_polar(1.0, m.frequency_ratio * self.time) * m.axis.dot(&self.direction))
                .collect(),
        )
    }
}

/// Displacement imprinted by emitting along `k` at wavepacket time `t`:
/// `β_j = -i e^{iμ_j t} η_j (k̂·ê_j)`.
pub fn emission_displacement(k: &Vector3<f64>, t: f64, trap: &TrapModel) -> Result<MultiDisplacement> {
    if (k.norm() - 1.0).abs() > 1e-12 {
        return Err(invalid("k", "must be a unit vector"));
    }
    let s = emission_scale(trap, t);
    Ok(MultiDisplacement::from_beta(
        trap.modes().iter().zip(&s).map(|(m, sj)| sj * m.axis.dot(k)).collect(),
    ))
}

fn emission_scale(trap: &TrapModel, t: f64) -> Vec<Complex64> {
    trap.modes()
        .iter()
        .map(|m| -I * m.lamb_dicke * Complex64::from_polar(1.0, m.frequency_ratio * t))
        .collect()
}

/// Which collected amplitude a kick operator is built from.
#[derive(Debug, Clone, Copy)]
pub struct KickSpec<'a> {
    pub grid: &'a WeightGrid,
    pub channel: usize,
    pub output: usize,
    pub laser: Option<LaserKick>,
}

impl<'a> KickSpec<'a> {
    pub fn new(grid: &'a WeightGrid, channel: &str, output: usize, laser: Option<LaserKick>) -> Result<Self> {
        let channel = grid.channel_index(channel)?;
        if output >= grid.outputs() {
            return Err(invalid("output", format!("grid has {} outputs, asked for {output}", grid.outputs())));
        }
        Ok(Self {
            grid,
            channel,
            output,
            laser,
        })
    }

    pub fn at(&self, trap: &TrapModel, t: HeraldTime) -> Result<KickOperator> {
        KickOperator::new(trap, self.grid, self.channel, self.output, t.value(), self.laser.as_ref())
    }
}

/// A kick operator at a fixed wavepacket time.
#[derive(Debug, Clone, PartialEq)]
pub struct KickOperator {
    /// Collected amplitude times quadrature weight, per retained node.
    weights: Vec<Complex64>,
    /// `k̂_q · ê_j`, node-major.
    proj: Vec<f64>,
    /// `s_j = -i η_j e^{iμ_j t}`; node displacements are `k_qj s_j`.
    scale: Vec<Complex64>,
    pre: MultiDisplacement,
    post: MultiDisplacement,
}

impl KickOperator {
    pub fn new(
        trap: &TrapModel,
        grid: &WeightGrid,
        channel: usize,
        output: usize,
        t: f64,
        laser: Option<&LaserKick>,
    ) -> Result<Self> {
        let modes = trap.len();
        let amps = grid.amplitudes(channel, output);
        let mut weights = Vec::new();
        let mut proj = Vec::new();
        for (a, node) in amps.iter().zip(&grid.nodes) {
            if a.norm_sqr() == 0.0 {
                continue;
            }
            weights.push(*a);
            proj.extend(trap.project(&node.direction));
        }
        Ok(Self {
            weights,
            proj,
            scale: emission_scale(trap, t),
            pre: laser.map_or_else(|| MultiDisplacement::identity(modes), |l| l.displacement(trap)),
            post: MultiDisplacement::identity(modes),
        })
    }

    /// Directly from nodes, for callers that assemble their own sums.
    pub fn from_parts(
        trap: &TrapModel,
        weights: Vec<Complex64>,
        directions: &[Vector3<f64>],
        t: f64,
        laser: Option<&LaserKick>,
    ) -> Result<Self> {
        if weights.len() != directions.len() {
            return Err(RecoilError::DimensionMismatch("one weight per direction".into()));
        }
        let modes = trap.len();
        Ok(Self {
            weights,
            proj: directions.iter().flat_map(|d| trap.project(d)).collect(),
            scale: emission_scale(trap, t),
            pre: laser.map_or_else(|| MultiDisplacement::identity(modes), |l| l.displacement(trap)),
            post: MultiDisplacement::identity(modes),
        })
    }

    /// Zero operator with the same mode structure.
    pub fn zero(trap: &TrapModel) -> Self {
        Self {
            weights: Vec::new(),
            proj: Vec::new(),
            scale: vec![C0; trap.len()],
            pre: MultiDisplacement::identity(trap.len()),
            post: MultiDisplacement::identity(trap.len()),
        }
    }

    /// `M · K`.
    pub fn with_correction(mut self, m: &MultiDisplacement) -> Result<Self> {
        self.post = compose_all(self.modes(), [m, &self.post])?;
        Ok(self)
    }

    /// `c · K`.
    pub fn scaled(mut self, c: Complex64) -> Self {
        self.weights.iter_mut().for_each(|w| *w *= c);
        self
    }

    pub fn modes(&self) -> usize {
        self.scale.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    fn k(&self, q: usize) -> &[f64] {
        let d = self.modes();
        &self.proj[q * d..(q + 1) * d]
    }

    fn e(&self, q: usize) -> Vec<Complex64> {
        self.k(q).iter().zip(&self.scale).map(|(k, s)| s * k).collect()
    }

    /// Emission displacement of node `q`.
    pub fn node_displacement(&self, q: usize) -> MultiDisplacement {
        MultiDisplacement::from_beta(self.e(q))
    }

    pub fn pre(&self) -> &MultiDisplacement {
        &self.pre
    }

    pub fn post(&self) -> &MultiDisplacement {
        &self.post
    }

    /// Largest displacement amplitude appearing in any factor, per mode.
    fn max_beta(&self) -> Vec<f64> {
        (0..self.modes())
            .map(|j| {
                let e = (0..self.len()).map(|q| (self.k(q)[j] * self.scale[j]).norm()).fold(0.0, f64::max);
                e + self.pre.beta[j].norm() + self.post.beta[j].norm()
            })
            .collect()
    }
}

/// How moments are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentBackend {
    /// Gaussian characteristic functions with a factorized node double sum.
    #[default]
    Analytic,
    /// Gaussian characteristic functions, explicit double sum over node pairs.
    Direct,
    /// Truncated Fock space, cutoff doubled until converged.
    Fock,
}

fn check_modes(a: &KickOperator, rho: &ThermalState) -> Result<()> {
    if a.modes() != rho.len() {
        return Err(RecoilError::ModeMismatch {
            expected: a.modes(),
            got: rho.len(),
        });
    }
    Ok(())
}

/// `tr(K ρ)`.
pub fn first_moment(k: &KickOperator, rho: &ThermalState, backend: MomentBackend) -> Result<Complex64> {
    check_modes(k, rho)?;
    match backend {
        MomentBackend::Analytic | MomentBackend::Direct => {
            let mut acc = C0;
            for q in 0..k.len() {
                let chain = compose_all(k.modes(), [&k.post, &k.node_displacement(q), &k.pre])?;
                acc += k.weights[q] * thermal_char(&chain, rho)?;
            }
            Ok(acc)
        }
        MomentBackend::Fock => {
            let id = KickOperator {
                weights: vec![Complex64::new(1.0, 0.0)],
                proj: vec![0.0; k.modes()],
                scale: vec![C0; k.modes()],
                pre: MultiDisplacement::identity(k.modes()),
                post: MultiDisplacement::identity(k.modes()),
            };
            fock_pair_moment(&id, k, rho)
        }
    }
}

/// `tr(A† B ρ)`. With `A = K_y`, `B = K_x` this is `tr(K_x ρ K_y†)`.
pub fn pair_moment(a: &KickOperator, b: &KickOperator, rho: &ThermalState, backend: MomentBackend) -> Result<Complex64> {
    check_modes(a, rho)?;
    check_modes(b, rho)?;
    if a.is_empty() || b.is_empty() {
        return Ok(C0);
    }
    match backend {
        MomentBackend::Analytic => Ok(analytic_pair_moment(a, b, rho, false)),
        MomentBackend::Direct => direct_pair_moment(a, b, rho),
        MomentBackend::Fock => fock_pair_moment(a, b, rho),
    }
}

/// First moment `tr(K(t) ρ)`.
pub fn kick_first_moment(spec: &KickSpec, t: HeraldTime, trap: &TrapModel, rho: &ThermalState) -> Result<Complex64> {
    first_moment(&spec.at(trap, t)?, rho, MomentBackend::Analytic)
}

/// Pair moment `tr(K_a(t_a)† K_b(t_b) ρ)`.
pub fn kick_pair_moment(
    ka: &KickSpec,
    ta: HeraldTime,
    kb: &KickSpec,
    tb: HeraldTime,
    trap: &TrapModel,
    rho: &ThermalState,
) -> Result<Complex64> {
    pair_moment(&ka.at(trap, ta)?, &kb.at(trap, tb)?, rho, MomentBackend::Analytic)
}

fn direct_pair_moment(a: &KickOperator, b: &KickOperator, rho: &ThermalState) -> Result<Complex64> {
    let d = a.modes();
    let pre_a = a.pre.adjoint();
    let post_a = a.post.adjoint();
    let mut acc = C0;
    for p in 0..a.len() {
        let dp = a.node_displacement(p).adjoint();
        let left = compose_all(d, [&pre_a, &dp, &post_a, &b.post])?;
        for q in 0..b.len() {
            let chain = compose_all(d, [&left, &b.node_displacement(q), &b.pre])?;
            acc += a.weights[p].conj() * b.weights[q] * thermal_char(&chain, rho)?;
        }
    }
    Ok(acc)
}

/// All multi-indices with total degree `<= order` in `d` variables, flattened.
fn multi_indices(d: usize, order: usize) -> Vec<u8> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; d];
    fn rec(j: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<u8>) {
        if j == cur.len() {
            out.extend_from_slice(cur);
            return;
        }
        for m in 0..=left {
            cur[j] = m as u8;
            rec(j + 1, left - m, cur, out);
        }
        cur[j] = 0;
    }
    rec(0, order, &mut cur, &mut out);
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// Smallest order whose exponential-series tail lies below 1e-17 for `|z| <= r`.
fn taylor_order(r: f64) -> Option<usize> {
    for m in 0..=60usize {
        let tail = r.powi(m as i32 + 1) / factorial(m + 1) * r.exp();
        if tail < 1e-17 {
            return Some(m);
        }
    }
    None
}

fn polar_norm(k: &[f64]) -> f64 {
    k.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Factorized evaluation of
/// `Σ_pq conj(w_p) w_q tr(L_a† D(e_p)† M_a† M_b D(e_q) L_b ρ)`.
///
/// Every term is Gaussian in the node displacements; only the cross term
/// `exp(Σ_j c_j k_pj k_qj)` couples `p` and `q`, and it is expanded in a
/// truncated multivariate Taylor series so the double sum splits into
/// products of single sums. Falls back to the explicit double sum when that
/// is cheaper or the series would need too many terms.
pub(crate) fn analytic_pair_moment(a: &KickOperator, b: &KickOperator, rho: &ThermalState, force_direct: bool) -> Complex64 {
    let d = a.modes();
    let nu: Vec<f64> = rho.nbar().iter().map(|n| n + 0.5).collect();
    let (la, lb) = (&a.pre.beta, &b.pre.beta);
    // G = M_a† M_b = g̃ D(g)
    let g: Vec<Complex64> = (0..d).map(|j| b.post.beta[j] - a.post.beta[j]).collect();
    let neg_ma: Vec<Complex64> = a.post.beta.iter().map(|x| -x).collect();
    let g_phase = a.post.global_phase.conj() * b.post.global_phase * Complex64::from_polar(1.0, symplectic(&neg_ma, &b.post.beta));
    let l_phase = a.pre.global_phase.conj() * b.pre.global_phase;
    let s0: Vec<Complex64> = (0..d).map(|j| g[j] - la[j] + lb[j]).collect();
    let p_shift: Vec<Complex64> = (0..d).map(|j| la[j] + g[j] + lb[j]).collect();
    let q_shift: Vec<Complex64> = (0..d).map(|j| la[j] - g[j] + lb[j]).collect();

    let fixed_exp = Complex64::new(-(0..d).map(|j| nu[j] * s0[j].norm_sqr()).sum::<f64>(), 0.0)
        + I * (-symplectic(la, &g) + symplectic(&g, lb) - symplectic(la, lb));
    let fixed = g_phase * l_phase * fixed_exp.exp();

    let single = |k: &KickOperator, q: usize, sign: f64, shift: &[Complex64]| -> Complex64 {
        let e = k.e(q);
        let mut re = 0.0;
        for j in 0..d {
            re += -nu[j] * e[j].norm_sqr() + sign * 2.0 * nu[j] * (s0[j] * e[j].conj()).re;
        }
        // sign = +1 (p side): -ω(e, shift); sign = -1 (q side): +ω(e, shift)
        let im = -sign * symplectic(&e, shift);
        Complex64::new(re, im).exp()
    };
    let u: Vec<Complex64> = (0..a.len()).map(|p| a.weights[p].conj() * single(a, p, 1.0, &p_shift)).collect();
    let v: Vec<Complex64> = (0..b.len()).map(|q| b.weights[q] * single(b, q, -1.0, &q_shift)).collect();

    let c: Vec<Complex64> = (0..d)
        .map(|j| {
            let x = a.scale[j] * b.scale[j].conj();
            Complex64::new(2.0 * nu[j] * x.re, -x.im)
        })
        .collect();

    let cmax = c.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let kmax_a = (0..a.len()).map(|p| polar_norm(a.k(p))).fold(0.0, f64::max);
    let kmax_b = (0..b.len()).map(|q| polar_norm(b.k(q))).fold(0.0, f64::max);
    let r = cmax * kmax_a * kmax_b;
    let order = taylor_order(r);
    let n_terms = order.map(|m| {
        // C(m + d, d)
        (1..=d).fold(1usize, |acc, i| acc * (m + i) / i)
    });
    let use_direct = force_direct
        || match n_terms {
            None => true,
            Some(n) => a.len() * b.len() <= (a.len() + b.len()) * n,
        };

    let sum = if use_direct {
        let mut acc = C0;
        for p in 0..a.len() {
            let kp = a.k(p);
            let mut row = C0;
            for q in 0..b.len() {
                let kq = b.k(q);
                let z: Complex64 = (0..d).map(|j| c[j] * (kp[j] * kq[j])).sum();
                row += v[q] * z.exp();
            }
            acc += u[p] * row;
        }
        acc
    } else {
        let m = order.expect("order exists when not direct");
        let idx = multi_indices(d, m);
        let n = idx.len() / d;
        let moments = |k: &KickOperator, w: &[Complex64]| -> Vec<Complex64> {
            let mut out = vec![C0; n];
            let mut pw = vec![0.0; d * (m + 1)];
            for (q, wq) in w.iter().enumerate() {
                let kq = k.k(q);
                for j in 0..d {
                    let row = &mut pw[j * (m + 1)..(j + 1) * (m + 1)];
                    row[0] = 1.0;
                    for e in 1..=m {
                        row[e] = row[e - 1] * kq[j];
                    }
                }
                for (t, mi) in idx.chunks_exact(d).enumerate() {
                    let mut prod = 1.0;
                    for (j, e) in mi.iter().enumerate() {
                        prod *= pw[j * (m + 1) + *e as usize];
                    }
                    out[t] += wq * prod;
                }
            }
            out
        };
        let ua = moments(a, &u);
        let vb = moments(b, &v);
        let mut cpow = vec![Complex64::new(1.0, 0.0); d * (m + 1)];
        for j in 0..d {
            for e in 1..=m {
                cpow[j * (m + 1) + e] = cpow[j * (m + 1) + e - 1] * c[j] / e as f64;
            }
        }
        let mut acc = C0;
        for (t, mi) in idx.chunks_exact(d).enumerate() {
            let mut coef = Complex64::new(1.0, 0.0);
            for (j, e) in mi.iter().enumerate() {
                coef *= cpow[j * (m + 1) + *e as usize];
            }
            acc += coef * ua[t] * vb[t];
        }
        acc
    };
    fixed * sum
}

/// Per-mode Fock matrices: `A_p = M_a D(e_p) L_a`, `B_q = M_b D(e_q) L_b`,
/// then `tr(A_p† B_q ρ)` factorizes over modes.
fn fock_pair_moment(a: &KickOperator, b: &KickOperator, rho: &ThermalState) -> Result<Complex64> {
    let d = a.modes();
    let ba = a.max_beta();
    let bb = b.max_beta();
    let cutoffs: Vec<usize> = (0..d)
        .map(|j| fock::auto_cutoff(rho.nbar()[j], ba[j].max(bb[j])))
        .collect();
    let mut prev = fock_pair_moment_at(a, b, rho, &cutoffs)?;
    for level in 1..=4 {
        let cut: Vec<usize> = cutoffs.iter().map(|c| c << level).collect();
        let next = fock_pair_moment_at(a, b, rho, &cut)?;
        if (next - prev).norm() < 1e-9 {
            return Ok(next);
        }
        prev = next;
    }
    Err(RecoilError::NotConverged {
        check: "fock cutoff doubling",
        detail: "trace still changing by more than 1e-9 after four doublings".into(),
    })
}

fn fock_pair_moment_at(a: &KickOperator, b: &KickOperator, rho: &ThermalState, cutoffs: &[usize]) -> Result<Complex64> {
    let d = a.modes();
    let node_ops = |k: &KickOperator, j: usize, cut: usize| -> Result<Vec<DMatrix<Complex64>>> {
        let pre = fock::displacement_matrix(k.pre.beta[j], cut)?;
        let post = fock::displacement_matrix(k.post.beta[j], cut)?;
        let post_m = post.matrix();
        let pre_m = pre.matrix();
        (0..k.len())
            .map(|q| {
                let dq = fock::displacement_matrix(k.k(q)[j] * k.scale[j], cut)?;
                Ok(post_m * dq.matrix() * pre_m)
            })
            .collect()
    };
    let mut per_mode: Vec<DMatrix<Complex64>> = Vec::with_capacity(d);
    for j in 0..d {
        let cut = cutoffs[j];
        let p = fock::thermal_populations(rho.nbar()[j], cut)?;
        let ops_a = node_ops(a, j, cut)?;
        let ops_b = node_ops(b, j, cut)?;
        let mut t = DMatrix::from_element(a.len(), b.len(), C0);
        for (pi, ap) in ops_a.iter().enumerate() {
            for (qi, bq) in ops_b.iter().enumerate() {
                t[(pi, qi)] = fock::trace_adjoint_product(ap, bq, &p);
            }
        }
        per_mode.push(t);
    }
    let scalar = (a.post.global_phase * a.pre.global_phase).conj() * b.post.global_phase * b.pre.global_phase;
    let mut acc = C0;
    for p in 0..a.len() {
        for q in 0..b.len() {
            let prod: Complex64 = per_mode.iter().map(|t| t[(p, q)]).product();
            acc += a.weights[p].conj() * b.weights[q] * prod;
        }
    }
    Ok(acc * scalar)
}

/// Inverse of the kick `D(emission along k_avg at t_emit) · L`:
/// `M = e^{iΣ η_j² k_ex,j k_avg,j sin(μ_j(t_E - t_L))} D(-iη(k_ex e^{iμ t_L} - e^{iμ t_E} k_avg))`.
/// Without a laser kick this is just `D(iη e^{iμ t_E} k_avg)`.
pub fn correction_displacement(
    trap: &TrapModel,
    t_emit: f64,
    laser: Option<&LaserKick>,
    k_avg: &[f64],
) -> Result<MultiDisplacement> {
    if k_avg.len() != trap.len() {
        return Err(RecoilError::ModeMismatch {
            expected: trap.len(),
            got: k_avg.len(),
        });
    }
    let (k_ex, t_l) = laser.map_or((vec![0.0; trap.len()], 0.0), |l| (trap.project(&l.direction), l.time));
    let mut phase = 0.0;
    let beta = trap
        .modes()
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let (eta, mu) = (m.lamb_dicke, m.frequency_ratio);
            phase += eta * eta * k_ex[j] * k_avg[j] * (mu * (t_emit - t_l)).sin();
            -I * eta * (k_ex[j] * Complex64::from_polar(1.0, mu * t_l) - Complex64::from_polar(1.0, mu * t_emit) * k_avg[j])
        })
        .collect();
    Ok(MultiDisplacement::from_beta(beta).with_phase(phase))
}

/// Recoil-weighted mean collection direction `Re(Σ w k̂ / Σ w)`, normalized by the mean weight.
pub fn weighted_mean_projection(grid: &WeightGrid, channel: usize, output: usize, trap: &TrapModel) -> Vec<f64> {
    let amps = grid.amplitudes(channel, output);
    let total: Complex64 = amps.iter().sum();
    if total.norm() == 0.0 {
        return vec![0.0; trap.len()];
    }
    let mut acc = vec![C0; trap.len()];
    for (a, n) in amps.iter().zip(&grid.nodes) {
        for (j, k) in trap.project(&n.direction).into_iter().enumerate() {
            acc[j] += a * k;
        }
    }
    acc.into_iter().map(|x| (x / total).re.clamp(-1.0, 1.0)).collect()
}

/// Coordinate-wise golden-section maximization of `objective` over `k_avg ∈ [-1, 1]^d`.
///
/// All seeds are scored and sweeps start from the best one. If nothing beats
/// `seeds[0]` by more than 1e-14 (flat objective, or the seed is already optimal),
/// `seeds[0]` is returned unchanged.
pub fn optimize_kavg(seeds: &[Vec<f64>], objective: &dyn Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let first = seeds.first().ok_or_else(|| invalid("seeds", "need at least one seed"))?;
    let f0 = objective(first)?;
    let mut best = first.clone();
    let mut fbest = f0;
    for s in &seeds[1..] {
        let f = objective(s)?;
        if f > fbest {
            best = s.clone();
            fbest = f;
        }
    }
    let error = std::cell::RefCell::new(None);
    for _sweep in 0..2 {
        let start = fbest;
        for j in 0..best.len() {
            let line = |x: f64| -> f64 {
                let mut trial = best.clone();
                trial[j] = x;
                match objective(&trial) {
                    Ok(v) => v,
                    Err(e) => {
                        error.borrow_mut().get_or_insert(e);
                        f64::NEG_INFINITY
                    }
                }
            };
            let x = crate::collection::golden_max(&line, -1.0, 1.0, 1e-4);
            let fx = line(x);
            if fx > fbest {
                best[j] = x;
                fbest = fx;
            }
        }
        if fbest - start < 1e-15 {
            break;
        }
    }
    if let Some(e) = error.into_inner() {
        return Err(e);
    }
    if fbest <= f0 + 1e-14 {
        return Ok(first.clone());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collection::{build_weight_grid, CollectionGeometry, DipoleChannel, GaussianLens};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn iso(eta: f64, mu: f64) -> TrapModel {
        TrapModel::isotropic(mu, eta).unwrap()
    }

    fn zero_na_grid(dir: Vector3<f64>) -> WeightGrid {
        let (e1, _) = crate::collection::polarization_basis(&dir).unwrap();
        build_weight_grid(
            &CollectionGeometry::ZeroNA {
                direction: dir,
                polarizations: vec![e1],
            },
            &[DipoleChannel::linear("0", e1).unwrap()],
            1,
            1,
        )
        .unwrap()
    }

    fn lens_grid(na: f64, np: usize, naz: usize) -> WeightGrid {
        let l = GaussianLens::new(na, 1e5, 0.6, Vector3::z(), vec![0.0]).unwrap();
        build_weight_grid(&CollectionGeometry::GaussianLens(l), &[DipoleChannel::linear("0", Vector3::x()).unwrap()], np, naz).unwrap()
    }

    #[test]
    fn emission_examples() {
        let trap = iso(0.07, 0.1);
        let d = emission_displacement(&Vector3::x(), 0.0, &trap).unwrap();
        assert!((d.beta[0] - c(0.0, -0.07)).norm() < 1e-15);
        assert!(d.beta[1].norm() < 1e-15 && d.beta[2].norm() < 1e-15);
        let d = emission_displacement(&Vector3::x(), PI / 0.1, &trap).unwrap();
        assert!((d.beta[0] - c(0.0, 0.07)).norm() < 1e-14);
        let d = emission_displacement(&Vector3::x(), 1.3, &iso(0.0, 0.1)).unwrap();
        assert!(d.is_identity());
    }

    #[test]
    fn first_moment_zero_na_cases() {
        let trap = iso(0.07, 0.1);
        let rho = ThermalState::uniform(0.0, 3).unwrap();
        let grid = zero_na_grid(Vector3::z());
        let perp = LaserKick::new(Vector3::x(), 0.0).unwrap();
        let k = KickOperator::new(&trap, &grid, 0, 0, 0.0, Some(&perp)).unwrap();
        let m = first_moment(&k, &rho, MomentBackend::Analytic).unwrap();
        assert!((m.norm_sqr() - (-2.0 * 0.0049f64).exp()).abs() < 1e-14);
        let along = LaserKick::new(Vector3::z(), 0.0).unwrap();
        let k = KickOperator::new(&trap, &grid, 0, 0, 0.0, Some(&along)).unwrap();
        let m = first_moment(&k, &rho, MomentBackend::Analytic).unwrap();
        assert!((m.norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn recoil_free_moments_are_bare_amplitudes() {
        let trap = iso(0.0, 0.1);
        let rho = ThermalState::uniform(3.0, 3).unwrap();
        let grid = lens_grid(0.6, 6, 12);
        let k = KickOperator::new(&trap, &grid, 0, 0, 0.7, None).unwrap();
        let bare: Complex64 = grid.amplitudes(0, 0).iter().sum();
        assert!((first_moment(&k, &rho, MomentBackend::Analytic).unwrap() - bare).norm() < 1e-14);
        let p = pair_moment(&k, &k, &rho, MomentBackend::Analytic).unwrap();
        assert!((p - bare.norm_sqr()).norm() < 1e-14);
    }

    #[test]
    fn zero_na_pair_moment_matches_timing_formula() {
        let trap = iso(0.07, 0.1);
        let nbar = 20.0;
        let rho = ThermalState::uniform(nbar, 3).unwrap();
        let grid = zero_na_grid(Vector3::z());
        let (th, tv) = (0.4, 2.9);
        let kh = KickOperator::new(&trap, &grid, 0, 0, th, None).unwrap();
        let kv = KickOperator::new(&trap, &grid, 0, 0, tv, None).unwrap();
        let x = pair_moment(&kv, &kh, &rho, MomentBackend::Analytic).unwrap();
        let n = pair_moment(&kh, &kh, &rho, MomentBackend::Analytic).unwrap();
        let expect = (-2.0 * 0.0049 * (1.0 - (0.1f64 * (tv - th)).cos()) * (1.0 + 2.0 * nbar)).exp();
        assert!((x.norm_sqr() / n.re.powi(2) - expect).abs() < 1e-13);
    }

    #[test]
    fn correction_cancels_zero_na_kick() {
        let trap = iso(0.07, 0.1);
        let grid = zero_na_grid(Vector3::z());
        let laser = LaserKick::new(Vector3::x(), 0.0).unwrap();
        let rho = ThermalState::uniform(10.0, 3).unwrap();
        for t in [0.0, 0.8, 5.0] {
            let m = correction_displacement(&trap, t, Some(&laser), &[0.0, 0.0, 1.0]).unwrap();
            let k = KickOperator::new(&trap, &grid, 0, 0, t, Some(&laser)).unwrap().with_correction(&m).unwrap();
            let chain = compose_all(3, [k.post(), &k.node_displacement(0), k.pre()]).unwrap();
            assert!(chain.beta.iter().all(|b| b.norm() < 1e-15));
            let f = first_moment(&k, &rho, MomentBackend::Analytic).unwrap();
            assert!((f.norm() - 1.0).abs() < 1e-14);
        }
        let m = correction_displacement(&iso(0.0, 0.1), 1.0, Some(&laser), &[0.3, 0.1, 0.9]).unwrap();
        assert!(m.is_identity());
    }

    #[test]
    fn optimizer_keeps_optimal_seed() {
        let f = |k: &[f64]| -> Result<f64> { Ok(-(k[0] - 0.3).powi(2) - (k[1] + 0.2).powi(2)) };
        let out = optimize_kavg(&[vec![0.0, 0.0], vec![0.5, 0.5]], &f).unwrap();
        assert!((out[0] - 0.3).abs() < 1e-4 && (out[1] + 0.2).abs() < 1e-4);
        let flat = |_: &[f64]| -> Result<f64> { Ok(1.0) };
        assert_eq!(optimize_kavg(&[vec![0.1, 0.9]], &flat).unwrap(), vec![0.1, 0.9]);
    }

    #[test]
    fn taylor_and_direct_sums_agree_on_large_grid() {
        let trap = iso(0.07, 0.1);
        let rho = ThermalState::uniform(100.0, 3).unwrap();
        let grid = lens_grid(0.6, 16, 32);
        let laser = LaserKick::new(Vector3::x(), 0.0).unwrap();
        let m = correction_displacement(&trap, 1.1, Some(&laser), &[0.0, 0.0, 0.9]).unwrap();
        let a = KickOperator::new(&trap, &grid, 0, 0, 1.1, Some(&laser)).unwrap().with_correction(&m).unwrap();
        let b = KickOperator::new(&trap, &grid, 0, 0, 3.5, Some(&laser)).unwrap();
        let fact = analytic_pair_moment(&a, &b, &rho, false);
        let dir = analytic_pair_moment(&a, &b, &rho, true);
        assert!((fact - dir).norm() < 1e-12 * dir.norm().max(1e-3), "{fact} vs {dir}");
    }

    #[test]
    fn periodic_in_trap_period() {
        let trap = iso(0.1, 0.4);
        let rho = ThermalState::uniform(1.5, 3).unwrap();
        let grid = lens_grid(0.5, 4, 8);
        let period = 2.0 * PI / 0.4;
        let m = |ta: f64, tb: f64| {
            let a = KickOperator::new(&trap, &grid, 0, 0, ta, None).unwrap();
            let b = KickOperator::new(&trap, &grid, 0, 0, tb, None).unwrap();
            pair_moment(&a, &b, &rho, MomentBackend::Analytic).unwrap()
        };
        assert!((m(0.3, 1.7) - m(0.3 + period, 1.7 + period)).norm() < 1e-12);
    }

    fn random_kick(trap: &TrapModel, grid: &WeightGrid, t: f64, laser: Option<&LaserKick>, corr: Option<&[f64]>) -> KickOperator {
        let k = KickOperator::new(trap, grid, 0, 0, t, laser).unwrap();
        match corr {
            Some(kavg) => k.with_correction(&correction_displacement(trap, t, laser, kavg).unwrap()).unwrap(),
            None => k,
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn backends_agree(
            eta in 0.0f64..0.3, mu in 0.05f64..1.0, nbar in 0.0f64..2.0,
            ta in 0.0f64..3.0, tb in 0.0f64..3.0, na in 0.2f64..0.9,
            kx in -1.0f64..1.0, kz in -1.0f64..1.0, with_laser in any::<bool>(),
        ) {
            let trap = iso(eta, mu);
            let rho = ThermalState::uniform(nbar, 3).unwrap();
            let grid = lens_grid(na, 2, 4);
            let laser = LaserKick::new(Vector3::new(1.0, 0.0, 1.0).normalize(), 0.0).unwrap();
            let laser = if with_laser { Some(&laser) } else { None };
            let kavg = [kx, 0.0, kz];
            let a = random_kick(&trap, &grid, ta, laser, Some(&kavg));
            let b = random_kick(&trap, &grid, tb, laser, None);
            let ana = pair_moment(&a, &b, &rho, MomentBackend::Analytic).unwrap();
            let dir = pair_moment(&a, &b, &rho, MomentBackend::Direct).unwrap();
            let fock = pair_moment(&a, &b, &rho, MomentBackend::Fock).unwrap();
            prop_assert!((ana - dir).norm() < 1e-12, "{ana} {dir}");
            prop_assert!((ana - fock).norm() < 1e-8, "{ana} {fock}");
            let back = pair_moment(&b, &a, &rho, MomentBackend::Analytic).unwrap();
            prop_assert!((back - ana.conj()).norm() < 1e-13);
            let f_ana = first_moment(&a, &rho, MomentBackend::Analytic).unwrap();
            let f_fock = first_moment(&a, &rho, MomentBackend::Fock).unwrap();
            prop_assert!((f_ana - f_fock).norm() < 1e-8);
        }

        #[test]
        fn self_moment_real_positive_and_cauchy_schwarz(
            eta in 0.0f64..0.3, mu in 0.05f64..1.0, nbar in 0.0f64..5.0, t in 0.0f64..6.0,
        ) {
            let trap = iso(eta, mu);
            let rho = ThermalState::uniform(nbar, 3).unwrap();
            let grid = lens_grid(0.7, 5, 10);
            let laser = LaserKick::new(Vector3::x(), 0.0).unwrap();
            let k = KickOperator::new(&trap, &grid, 0, 0, t, Some(&laser)).unwrap();
            let p = pair_moment(&k, &k, &rho, MomentBackend::Analytic).unwrap();
            prop_assert!(p.im.abs() < 1e-14 && p.re > 0.0);
            let f = first_moment(&k, &rho, MomentBackend::Analytic).unwrap();
            prop_assert!(f.norm_sqr() <= p.re * (1.0 + 1e-12));
        }
    }
}
