//! Two-photon heralding: one photon from each node, detected in modes H and V.
//!
//! For qubit states `i, j` of nodes A, B the conditional motional operator is
//! `X_ij = K_AiH ⊗ K_BjV ± K_AiV ⊗ K_BjH`, so after tracing out the motion
//! `ρ_(ij),(kl) = Σ_{a,b} s_a s_b P_A(i a_A; k b_A) P_B(j a_B; l b_B)` with
//! `P(x; y) = tr(K_x ρ K_y†)` and `a, b` ranging over the two photon assignments.

use nalgebra::Matrix4;
use num_complex::Complex64;

use super::{pair_times, try_map, with_optional_correction, Emitter, FidelityResult, HeraldWindow, NodeConfig, Quadrature, Settings, C0};
use crate::error::{invalid, Result};
use crate::kick::{pair_moment, KickOperator, MomentBackend};
use crate::phase_space::MultiDisplacement;

/// Which two detectors clicked: both on the same side of the central
/// beamsplitter, or on opposite sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectorParity {
    #[default]
    Same,
    Opposite,
}

impl DetectorParity {
    fn sign(self) -> f64 {
        match self {
            Self::Same => 1.0,
            Self::Opposite => -1.0,
        }
    }
}

/// `P[2i+m][2k+n] = tr(K_im ρ K_kn†)` at mode times `times`.
pub(crate) type MomentTable = [[Complex64; 4]; 4];

pub(crate) fn moment_table(em: &Emitter, times: [f64; 2], k_avg: Option<&[f64]>, backend: MomentBackend) -> Result<MomentTable> {
    let corr: Vec<Option<MultiDisplacement>> = (0..2)
        .map(|i| k_avg.map(|k| em.correction(i, times[i], k)).transpose())
        .collect::<Result<_>>()?;
    let mut kicks: Vec<Option<KickOperator>> = Vec::with_capacity(4);
    for i in 0..2 {
        for m in 0..2 {
            kicks.push(em.kick(i, m, times[m], corr[i].as_ref())?);
        }
    }
    let mut p = [[C0; 4]; 4];
    for x in 0..4 {
        for y in x..4 {
            if let (Some(kx), Some(ky)) = (&kicks[x], &kicks[y]) {
                let v = pair_moment(ky, kx, em.motion(), backend)?;
                p[x][y] = v;
                p[y][x] = v.conj();
            }
        }
    }
    Ok(p)
}

pub(crate) fn assemble(pa: &MomentTable, pb: &MomentTable, sign: f64) -> Matrix4<Complex64> {
    // photon assignments (mode at A, mode at B, sign)
    let assign = [(0usize, 1usize, 1.0), (1, 0, sign)];
    Matrix4::from_fn(|r, c| {
        let (i, j) = (r >> 1, r & 1);
        let (k, l) = (c >> 1, c & 1);
        let mut acc = C0;
        for &(a0, a1, sa) in &assign {
            for &(b0, b1, sb) in &assign {
                acc += sa * sb * pa[2 * i + a0][2 * k + b0] * pb[2 * j + a1][2 * l + b1];
            }
        }
        acc
    })
}

/// Two nodes ready for evaluation; an identical pair shares one emitter.
pub(crate) struct Link<'a> {
    a: Emitter<'a>,
    b: Option<Emitter<'a>>,
}

impl<'a> Link<'a> {
    pub fn new(a: Emitter<'a>, b: Option<Emitter<'a>>) -> Self {
        Self { a, b }
    }

    pub fn polarization(a: &'a NodeConfig, b: &'a NodeConfig, q: &Quadrature) -> Result<Self> {
        let ea = Emitter::polarization(a, q)?;
        let eb = if a == b { None } else { Some(Emitter::polarization(b, q)?) };
        Ok(Self::new(ea, eb))
    }

    /// Unnormalized state for detection times `(t_0, t_1)` without the
    /// `e^{-(t_0+t_1)}` envelope.
    pub fn matrix(&self, times: [f64; 2], k_avg: Option<&[f64]>, sign: f64, backend: MomentBackend) -> Result<Matrix4<Complex64>> {
        let pa = moment_table(&self.a, times, k_avg, backend)?;
        let pb = match &self.b {
            Some(b) => moment_table(b, times, k_avg, backend)?,
            None => pa,
        };
        Ok(assemble(&pa, &pb, sign))
    }

    pub fn integrate(&self, window: &HeraldWindow, instantaneous: bool, k_avg: Option<&[f64]>, q: &Quadrature) -> Result<Matrix4<Complex64>> {
        if instantaneous {
            return self.matrix([0.0, 0.0], k_avg, 1.0, q.backend);
        }
        let trap = self.a.trap();
        let mut n = super::time_nodes(q, trap);
        if let Some(b) = &self.b {
            n = n.max(super::time_nodes(q, b.trap()));
        }
        let nodes = pair_times(window, n)?;
        let parts = try_map(&nodes, |&(t0, t1, w)| {
            Ok(self.matrix([t0, t1], k_avg, 1.0, q.backend)? * Complex64::new(w, 0.0))
        })?;
        Ok(parts.into_iter().fold(Matrix4::zeros(), |acc, m| acc + m))
    }

    pub fn seeds(&self) -> Vec<Vec<f64>> {
        self.a.kavg_seeds()
    }
}

/// Unnormalized post-herald state for detections at `t_h` (mode H) and `t_v`
/// (mode V), including the `e^{-(t_H+t_V)}` envelope.
pub fn two_photon_post_herald(
    a: &NodeConfig,
    b: &NodeConfig,
    t_h: f64,
    t_v: f64,
    parity: DetectorParity,
    q: &Quadrature,
) -> Result<Matrix4<Complex64>> {
    if !(t_h >= 0.0 && t_v >= 0.0) {
        return Err(invalid("t", "detection times must be >= 0"));
    }
    let link = Link::polarization(a, b, q)?;
    let m = link.matrix([t_h, t_v], None, parity.sign(), q.backend)?;
    Ok(m * Complex64::new((-(t_h + t_v)).exp(), 0.0))
}

/// Time-averaged two-photon post-herald state and fidelity.
pub fn two_photon_fidelity(a: &NodeConfig, b: &NodeConfig, window: &HeraldWindow, corrected: bool, settings: &Settings) -> Result<FidelityResult> {
    window.validate()?;
    let fine = Link::polarization(a, b, &settings.quadrature)?;
    let seeds = fine.seeds();
    let search = if corrected {
        Some(Link::polarization(a, b, &settings.search)?)
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
