//! Collection-mode weights `w(k̂)` for each decay channel and output mode,
//! and the sphere-cap quadrature grids they live on.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;

use crate::error::{invalid, RecoilError, Result};
use crate::quadrature;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Below this `sin(theta)` the stationary-phase overlap is replaced by the direct integral.
pub const AXIS_EPSILON: f64 = 1e-3;

/// A decay channel `|e> -> |i>` with its normalized dipole matrix element.
#[derive(Debug, Clone, PartialEq)]
pub struct DipoleChannel {
    pub label: String,
    pub dipole: Vector3<Complex64>,
    pub channel_weight: f64,
}

impl DipoleChannel {
    pub fn new(label: impl Into<String>, dipole: Vector3<Complex64>, channel_weight: f64) -> Result<Self> {
        if (dipole.norm() - 1.0).abs() > 1e-12 {
            return Err(invalid("dipole", format!("must be normalized, |d| = {}", dipole.norm())));
        }
        if !(channel_weight >= 0.0) || !channel_weight.is_finite() {
            return Err(invalid("channel_weight", "must be finite and >= 0"));
        }
        Ok(Self {
            label: label.into(),
            dipole,
            channel_weight,
        })
    }

    /// Linear dipole along a real direction, unit branching amplitude.
    pub fn linear(label: impl Into<String>, axis: Vector3<f64>) -> Result<Self> {
        Self::new(label, axis.map(|x| Complex64::new(x, 0.0)), 1.0)
    }
}

fn check_unit(name: &'static str, v: &Vector3<f64>) -> Result<()> {
    if (v.norm() - 1.0).abs() > 1e-12 {
        return Err(invalid(name, format!("must be a unit vector, norm {}", v.norm())));
    }
    Ok(())
}

/// Orthonormal frame `(u, v, axis)`; `axis = z` gives `(x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub axis: Vector3<f64>,
}

impl Frame {
    pub fn about(axis: Vector3<f64>) -> Self {
        let axis = axis.normalize();
        if (axis - Vector3::z()).norm() < 1e-15 {
            return Self {
                u: Vector3::x(),
                v: Vector3::y(),
                axis,
            };
        }
        let helper = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let v = axis.cross(&helper).normalize();
        let u = v.cross(&axis);
        Self { u, v, axis }
    }

    fn local(&self, k: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(k.dot(&self.u), k.dot(&self.v), k.dot(&self.axis))
    }

    fn global(&self, l: &Vector3<f64>) -> Vector3<f64> {
        self.u * l.x + self.v * l.y + self.axis * l.z
    }

    /// Polar and azimuthal angle of `k` in this frame.
    fn angles(&self, k: &Vector3<f64>) -> (f64, f64) {
        let l = self.local(k);
        let rho = (l.x * l.x + l.y * l.y).sqrt();
        let phi = if rho < 1e-15 { 0.0 } else { l.y.atan2(l.x) };
        (rho.atan2(l.z), phi)
    }

    /// `(theta_hat, phi_hat)` at `k`, with `phi -> 0` at the poles.
    pub fn basis(&self, k: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let (theta, phi) = self.angles(k);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let e1 = Vector3::new(ct * cp, ct * sp, -st);
        let e2 = Vector3::new(-sp, cp, 0.0);
        (self.global(&e1), self.global(&e2))
    }
}

/// Transverse basis at `k` in the spherical convention about the lab z axis.
pub fn polarization_basis(k: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>)> {
    check_unit("k", k)?;
    Ok(Frame::about(Vector3::z()).basis(k))
}

/// `channel_weight * (d · conj(eps))` for emission into polarization `eps`.
pub fn dipole_coupling(channel: &DipoleChannel, eps: &Vector3<Complex64>) -> Complex64 {
    channel.dipole.dot(&eps.map(|x| x.conj())) * channel.channel_weight
}

/// High-NA lens coupling into a Gaussian fibre mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLens {
    pub na: f64,
    pub fk: f64,
    pub waist_ratio: f64,
    pub axis: Vector3<f64>,
    /// Fibre polarization angles, one collected output mode each.
    pub fibre_angles: Vec<f64>,
    /// Below this `sin ϑ` the field comes from the direct polar integral.
    pub axis_epsilon: f64,
}

impl GaussianLens {
    pub fn new(na: f64, fk: f64, waist_ratio: f64, axis: Vector3<f64>, fibre_angles: Vec<f64>) -> Result<Self> {
        let lens = Self {
            na,
            fk,
            waist_ratio,
            axis,
            fibre_angles,
            axis_epsilon: AXIS_EPSILON,
        };
        lens.validate()?;
        Ok(lens)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.na > 0.0 && self.na <= 1.0) {
            return Err(invalid("na", format!("must lie in (0, 1], got {}", self.na)));
        }
        if !(self.fk >= 100.0) || !self.fk.is_finite() {
            return Err(invalid("fk", format!("must be finite and >= 100, got {}", self.fk)));
        }
        if !(self.waist_ratio > 0.0) || !self.waist_ratio.is_finite() {
            return Err(invalid("waist_ratio", "must be finite and > 0"));
        }
        check_unit("axis", &self.axis)?;
        if !(0.0..0.5).contains(&self.axis_epsilon) {
            return Err(invalid("axis_epsilon", "must lie in [0, 0.5)"));
        }
        if self.fibre_angles.is_empty() {
            return Err(invalid("fibre_angles", "need at least one fibre polarization"));
        }
        Ok(())
    }

    pub fn theta_max(&self) -> f64 {
        self.na.asin()
    }

    pub fn frame(&self) -> Frame {
        Frame::about(self.axis)
    }
}

/// Two mirrored collection directions summed coherently.
#[derive(Debug, Clone, PartialEq)]
pub struct StandingWavePair {
    /// Shared axis the two directions are tilted away from.
    pub axis: Vector3<f64>,
    /// Direction of the tilt, orthogonal to `axis`; the second coupler is mirrored across it.
    pub tilt_direction: Vector3<f64>,
    pub xi: f64,
    pub relative_phase: f64,
    /// Polarization references, projected transverse at each direction.
    pub polarizations: Vec<Vector3<f64>>,
    /// Single coupler only (the first direction, unit amplitude).
    pub one_sided: bool,
}

impl StandingWavePair {
    pub fn directions(&self) -> (Vector3<f64>, Vector3<f64>) {
        let k1 = self.axis * self.xi.cos() + self.tilt_direction * self.xi.sin();
        (k1, self.mirror(&k1))
    }

    fn mirror(&self, v: &Vector3<f64>) -> Vector3<f64> {
        v - self.tilt_direction * (2.0 * v.dot(&self.tilt_direction))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CollectionGeometry {
    ZeroNA {
        direction: Vector3<f64>,
        polarizations: Vec<Vector3<f64>>,
    },
    GaussianLens(GaussianLens),
    StandingWavePair(StandingWavePair),
}

impl CollectionGeometry {
    /// Zero-NA collection with the two spherical-basis polarizations as outputs.
    pub fn zero_na(direction: Vector3<f64>) -> Result<Self> {
        let (e1, e2) = polarization_basis(&direction)?;
        Ok(Self::ZeroNA {
            direction,
            polarizations: vec![e1, e2],
        })
    }

    pub fn outputs(&self) -> usize {
        match self {
            Self::ZeroNA { polarizations, .. } => polarizations.len(),
            Self::GaussianLens(l) => l.fibre_angles.len(),
            Self::StandingWavePair(p) => p.polarizations.len(),
        }
    }

    /// Mean collection direction.
    pub fn collection_axis(&self) -> Vector3<f64> {
        match self {
            Self::ZeroNA { direction, .. } => *direction,
            Self::GaussianLens(l) => l.axis,
            Self::StandingWavePair(p) => {
                if p.one_sided {
                    p.directions().0
                } else {
                    p.axis
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::ZeroNA { direction, polarizations } => {
                check_unit("direction", direction)?;
                if polarizations.is_empty() {
                    return Err(invalid("polarizations", "need at least one output polarization"));
                }
                Ok(())
            }
            Self::GaussianLens(l) => l.validate(),
            Self::StandingWavePair(p) => {
                check_unit("axis", &p.axis)?;
                check_unit("tilt_direction", &p.tilt_direction)?;
                if p.axis.dot(&p.tilt_direction).abs() > 1e-10 {
                    return Err(invalid("tilt_direction", "must be orthogonal to the axis"));
                }
                if p.polarizations.is_empty() {
                    return Err(invalid("polarizations", "need at least one output polarization"));
                }
                Ok(())
            }
        }
    }
}

/// Stationary-phase fibre-mode field on the reference sphere, in units where
/// `|sum w dOmega|^2` is the collected fraction of a unit dipole's emission.
/// Zero outside the aperture.
pub fn fiber_mode_vector(k: &Vector3<f64>, lens: &GaussianLens, sigma_f: f64) -> Vector3<Complex64> {
    let frame = lens.frame();
    let (theta, phi) = frame.angles(k);
    if theta > lens.theta_max() + 1e-15 {
        return Vector3::zeros();
    }
    if theta.sin() < lens.axis_epsilon {
        return fiber_mode_vector_direct(k, lens, sigma_f);
    }
    let (e_theta, e_phi) = frame.basis(k);
    let amp = (2.0 / PI).sqrt() / lens.waist_ratio
        * theta.cos().max(0.0).sqrt()
        * (-(theta.sin() / lens.waist_ratio).powi(2)).exp()
        / (8.0 * PI / 3.0).sqrt();
    let phase = -I * Complex64::from_polar(1.0, lens.fk);
    let pol = e_theta * (sigma_f - phi).cos() + e_phi * (sigma_f - phi).sin();
    pol.map(|x| phase * amp * x)
}

/// The same field from the oscillatory polar-angle integral, without the
/// stationary-phase approximation.
pub fn fiber_mode_vector_direct(k: &Vector3<f64>, lens: &GaussianLens, sigma_f: f64) -> Vector3<Complex64> {
    let frame = lens.frame();
    let (e_theta, e_phi) = frame.basis(k);
    let scale = lens.fk / (2.0 * PI) / (8.0 * PI / 3.0).sqrt();
    let a1 = gaussian_fiber_overlap_direct(k, &e_theta, lens, sigma_f);
    let a2 = gaussian_fiber_overlap_direct(k, &e_phi, lens, sigma_f);
    (e_theta.map(|x| a1 * x) + e_phi.map(|x| a2 * x)) * Complex64::new(scale, 0.0)
}

/// Fibre overlap coefficient for a plane wave along `k` with real polarization `eps`,
/// leading stationary-phase order.
pub fn gaussian_fiber_overlap(k: &Vector3<f64>, eps: &Vector3<f64>, lens: &GaussianLens, sigma_f: f64) -> Complex64 {
    let scale = (2.0 * PI / lens.fk) * (8.0 * PI / 3.0).sqrt();
    let a = fiber_mode_vector(k, lens, sigma_f);
    a.dot(&eps.map(|x| Complex64::new(x, 0.0))) * scale
}

/// Fibre overlap coefficient by direct quadrature of the oscillatory integral.
pub fn gaussian_fiber_overlap_direct(k: &Vector3<f64>, eps: &Vector3<f64>, lens: &GaussianLens, sigma_f: f64) -> Complex64 {
    let frame = lens.frame();
    let (vartheta, varphi) = frame.angles(k);
    let eps_l = frame.local(eps);
    let (svt, cvt) = vartheta.sin_cos();
    let fk = lens.fk;
    let wr = lens.waist_ratio;
    let tmax = lens.theta_max();
    let integrand = |theta: f64| -> Complex64 {
        let (st, ct) = theta.sin_cos();
        let xi = fk * svt * st;
        let (j0, j1, j2) = (libm::j0(xi), libm::j1(xi), libm::jn(2, xi));
        let c2 = (theta / 2.0).cos().powi(2);
        let s2 = (theta / 2.0).sin().powi(2);
        let x = c2 * sigma_f.cos() * j0 + s2 * (2.0 * varphi - sigma_f).cos() * j2;
        let y = c2 * sigma_f.sin() * j0 + s2 * (2.0 * varphi - sigma_f).sin() * j2;
        let z = -I * st * (varphi - sigma_f).cos() * j1;
        let dot = eps_l.x * x + eps_l.y * y + z * eps_l.z;
        let env = st * ct.max(0.0).sqrt() * (-(st / wr).powi(2)).exp();
        dot * env * Complex64::from_polar(1.0, fk * cvt * ct)
    };
    // Keep each panel below about half a radian of phase.
    let panels = (4.0 * fk * tmax).ceil() as usize + 64;
    let nodes = quadrature::legendre(6, -1.0, 1.0).expect("static order");
    let h = tmax / panels as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let mid = (p as f64 + 0.5) * h;
        for (x, w) in &nodes {
            acc += integrand(mid + 0.5 * h * x) * (0.5 * h * w);
        }
    }
    acc * (8.0 * PI).sqrt() / wr
}

/// One quadrature node on the collection cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridNode {
    pub direction: Vector3<f64>,
    pub weight: f64,
}

/// Per-node complex weights for every (channel, output) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGrid {
    pub nodes: Vec<GridNode>,
    labels: Vec<String>,
    outputs: usize,
    /// `values[channel][output][node]`
    values: Vec<Vec<Vec<Complex64>>>,
}

impl WeightGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| RecoilError::MissingChannel(label.to_string()))
    }

    /// Raw weights `w(k̂)` at each node.
    pub fn values(&self, channel: usize, output: usize) -> &[Complex64] {
        &self.values[channel][output]
    }

    /// Weights multiplied by the quadrature weight.
    pub fn amplitudes(&self, channel: usize, output: usize) -> Vec<Complex64> {
        self.values[channel][output]
            .iter()
            .zip(&self.nodes)
            .map(|(v, n)| v * n.weight)
            .collect()
    }

    /// `|∫ w dΩ|²`, the collected power without recoil.
    pub fn efficiency(&self, channel: usize, output: usize) -> f64 {
        self.amplitudes(channel, output).iter().sum::<Complex64>().norm_sqr()
    }

    /// `∫ |w|² dΩ`.
    pub fn power(&self, channel: usize, output: usize) -> f64 {
        self.values[channel][output]
            .iter()
            .zip(&self.nodes)
            .map(|(v, n)| v.norm_sqr() * n.weight)
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight).sum()
    }
}

fn transverse(p: &Vector3<f64>, k: &Vector3<f64>) -> Result<Vector3<f64>> {
    let t = p - k * p.dot(k);
    if t.norm() < 1e-12 {
        return Err(invalid("polarizations", "reference polarization is parallel to the collection direction"));
    }
    Ok(t.normalize())
}

fn complexify(v: &Vector3<f64>) -> Vector3<Complex64> {
    v.map(|x| Complex64::new(x, 0.0))
}

/// Gauss–Legendre(cos theta) × trapezoid(phi) nodes covering the lens aperture.
pub fn cap_nodes(lens: &GaussianLens, n_polar: usize, n_azimuthal: usize) -> Result<Vec<GridNode>> {
    if n_polar == 0 || n_azimuthal == 0 {
        return Err(invalid("grid", "n_polar and n_azimuthal must be >= 1"));
    }
    let frame = lens.frame();
    let cos_max = lens.theta_max().cos();
    let polar = quadrature::legendre(n_polar, cos_max, 1.0)?;
    let dphi = 2.0 * PI / n_azimuthal as f64;
    let mut nodes = Vec::with_capacity(n_polar * n_azimuthal);
    for (c, wc) in &polar {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for j in 0..n_azimuthal {
            let (sp, cp) = (j as f64 * dphi).sin_cos();
            let l = Vector3::new(s * cp, s * sp, *c);
            nodes.push(GridNode {
                direction: frame.global(&l).normalize(),
                weight: wc * dphi,
            });
        }
    }
    Ok(nodes)
}

pub fn build_weight_grid(
    geometry: &CollectionGeometry,
    channels: &[DipoleChannel],
    n_polar: usize,
    n_azimuthal: usize,
) -> Result<WeightGrid> {
    geometry.validate()?;
    if channels.is_empty() {
        return Err(invalid("channels", "need at least one decay channel"));
    }
    let outputs = geometry.outputs();
    let (nodes, values): (Vec<GridNode>, Vec<Vec<Vec<Complex64>>>) = match geometry {
        CollectionGeometry::ZeroNA { direction, polarizations } => {
            let eps = polarizations
                .iter()
                .map(|p| transverse(p, direction).map(|e| complexify(&e)))
                .collect::<Result<Vec<_>>>()?;
            let values = channels
                .iter()
                .map(|ch| eps.iter().map(|e| vec![dipole_coupling(ch, e)]).collect())
                .collect();
            (
                vec![GridNode {
                    direction: *direction,
                    weight: 1.0,
                }],
                values,
            )
        }
        CollectionGeometry::GaussianLens(lens) => {
            let nodes = cap_nodes(lens, n_polar, n_azimuthal)?;
            let fields: Vec<Vec<Vector3<Complex64>>> = lens
                .fibre_angles
                .iter()
                .map(|s| nodes.iter().map(|n| fiber_mode_vector(&n.direction, lens, *s)).collect())
                .collect();
            let values = channels
                .iter()
                .map(|ch| {
                    fields
                        .iter()
                        .map(|f| f.iter().map(|a| ch.dipole.dot(a) * ch.channel_weight).collect())
                        .collect()
                })
                .collect();
            (nodes, values)
        }
        CollectionGeometry::StandingWavePair(pair) => {
            let (k1, k2) = pair.directions();
            let mut nodes = vec![GridNode {
                direction: k1,
                weight: 1.0,
            }];
            if !pair.one_sided {
                nodes.push(GridNode {
                    direction: k2,
                    weight: 1.0,
                });
            }
            let eps1 = pair
                .polarizations
                .iter()
                .map(|p| transverse(p, &k1))
                .collect::<Result<Vec<_>>>()?;
            let rel = Complex64::from_polar(1.0, pair.relative_phase);
            let a = if pair.one_sided { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
            let values = channels
                .iter()
                .map(|ch| {
                    eps1.iter()
                        .map(|e| {
                            let mut v = vec![dipole_coupling(ch, &complexify(e)) * a];
                            if !pair.one_sided {
                                v.push(dipole_coupling(ch, &complexify(&pair.mirror(e))) * a * rel);
                            }
                            v
                        })
                        .collect()
                })
                .collect();
            (nodes, values)
        }
    };
    let grid = WeightGrid {
        nodes,
        labels: channels.iter().map(|c| c.label.clone()).collect(),
        outputs,
        values,
    };
    let any = (0..channels.len()).any(|c| (0..outputs).any(|o| grid.power(c, o) > 0.0));
    if !any {
        return Err(invalid("channels", "no channel couples into any collected output"));
    }
    Ok(grid)
}

/// Waist ratio maximizing the summed recoil-free efficiency over all channels and outputs.
pub fn optimal_waist(lens: &GaussianLens, channels: &[DipoleChannel]) -> Result<f64> {
    optimal_waist_with_grid(lens, channels, 32, 64)
}

pub fn optimal_waist_with_grid(
    lens: &GaussianLens,
    channels: &[DipoleChannel],
    n_polar: usize,
    n_azimuthal: usize,
) -> Result<f64> {
    lens.validate()?;
    let nodes = cap_nodes(lens, n_polar, n_azimuthal)?;
    let objective = |log_w: f64| -> f64 {
        let trial = GaussianLens {
            waist_ratio: log_w.exp(),
            ..lens.clone()
        };
        let mut total = 0.0;
        for s in &trial.fibre_angles {
            let fields: Vec<Vector3<Complex64>> = nodes.iter().map(|n| fiber_mode_vector(&n.direction, &trial, *s)).collect();
            for ch in channels {
                let amp: Complex64 = fields
                    .iter()
                    .zip(&nodes)
                    .map(|(a, n)| ch.dipole.dot(a) * (ch.channel_weight * n.weight))
                    .sum();
                total += amp.norm_sqr();
            }
        }
        total
    };
    let best = golden_max(&objective, 0.05f64.ln(), 5.0f64.ln(), 1e-6);
    Ok(best.exp())
}

/// Golden-section maximizer on `[a, b]` down to an interval of width `tol`.
pub(crate) fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
