//! Truncated Fock-space oracle for single-mode displacement algebra and the
//! one-dimensional emission spectrum.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{invalid, RecoilError, Result};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Operator on the span of `|0>, ..., |cutoff>`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockMatrix {
    cutoff: usize,
    data: DMatrix<Complex64>,
}

impl FockMatrix {
    pub fn from_matrix(data: DMatrix<Complex64>) -> Result<Self> {
        if data.nrows() != data.ncols() || data.nrows() < 2 {
            return Err(RecoilError::DimensionMismatch(format!(
                "Fock matrix must be square with cutoff >= 1, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self {
            cutoff: data.nrows() - 1,
            data,
        })
    }

    pub fn identity(cutoff: usize) -> Self {
        Self {
            cutoff,
            data: DMatrix::identity(cutoff + 1, cutoff + 1),
        }
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.cutoff + 1
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        self.data[(m, n)]
    }

    pub fn adjoint(&self) -> Self {
        Self {
            cutoff: self.cutoff,
            data: self.data.adjoint(),
        }
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            cutoff: self.cutoff,
            data: &self.data * s,
        }
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        check_same(self, other)?;
        Ok(Self {
            cutoff: self.cutoff,
            data: &self.data * &other.data,
        })
    }

    pub fn trace(&self) -> Complex64 {
        self.data.trace()
    }

    /// Embeds into a larger space, padding with zeros.
    pub fn embed(&self, cutoff: usize) -> Result<Self> {
        if cutoff < self.cutoff {
            return Err(RecoilError::DimensionMismatch(format!(
                "cannot embed cutoff {} into {}",
                self.cutoff, cutoff
            )));
        }
        let mut data = DMatrix::from_element(cutoff + 1, cutoff + 1, C0);
        data.view_mut((0, 0), (self.dim(), self.dim()))
            .copy_from(&self.data);
        Ok(Self { cutoff, data })
    }

    /// Largest `|(A†A - 1)_{mn}|` over the leading `block x block` corner.
    pub fn unitarity_defect(&self, block: usize) -> f64 {
        let block = block.clamp(1, self.dim());
        let g = self.data.adjoint() * &self.data;
        let mut worst = 0.0f64;
        for m in 0..block {
            for n in 0..block {
                let target = if m == n { C1 } else { C0 };
                worst = worst.max((g[(m, n)] - target).norm());
            }
        }
        worst
    }
}

fn check_same(a: &FockMatrix, b: &FockMatrix) -> Result<()> {
    if a.cutoff != b.cutoff {
        return Err(RecoilError::DimensionMismatch(format!(
            "cutoffs differ: {} vs {}",
            a.cutoff, b.cutoff
        )));
    }
    Ok(())
}

fn ln_factorial(n: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0)
}

/// Generalized Laguerre values `L_0^{(k)}(x), ..., L_n^{(k)}(x)`.
fn laguerre_table(n: usize, k: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(1.0 + k as f64 - x);
    }
    for i in 2..=n {
        let i_f = i as f64;
        let k_f = k as f64;
        let v = ((2.0 * i_f - 1.0 + k_f - x) * out[i - 1] - (i_f - 1.0 + k_f) * out[i - 2]) / i_f;
        out.push(v);
    }
    out
}

/// Closed-form matrix elements without the truncation check.
fn displacement_entries(beta: Complex64, cutoff: usize) -> DMatrix<Complex64> {
    let dim = cutoff + 1;
    let x = beta.norm_sqr();
    let mut d = DMatrix::from_element(dim, dim, C0);
    if x == 0.0 {
        return DMatrix::identity(dim, dim);
    }
    let ln_r = beta.norm().ln();
    let arg = beta.arg();
    for k in 0..dim {
        // m = n + k below the diagonal, and its mirror above it.
        let lag = laguerre_table(dim - 1 - k, k, x);
        for (n, l) in lag.iter().enumerate() {
            let m = n + k;
            let ln_mag = 0.5 * (ln_factorial(n) - ln_factorial(m)) + k as f64 * ln_r - 0.5 * x;
            let mag = ln_mag.exp() * l;
            let lower = Complex64::from_polar(mag, k as f64 * arg);
            d[(m, n)] = lower;
            if k > 0 {
                // <n|D|m> = conj of (-beta)^k form
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                d[(n, m)] = lower.conj() * sign;
            }
        }
    }
    d
}

/// Size of the block on which truncation effects should be negligible.
///
/// `D|n>` spreads over `n +- k` with amplitudes of order `x^k / k!`,
/// `x = |beta| sqrt(cutoff)`; the margin is the first `k` where that drops below 1e-5.
fn inner_block(beta: Complex64, cutoff: usize) -> usize {
    let x = beta.norm() * (cutoff as f64).sqrt();
    let mut term = 1.0;
    let mut margin = 0usize;
    while term >= 1e-5 && margin <= cutoff {
        margin += 1;
        term *= x / margin as f64;
    }
    cutoff.saturating_sub(margin).max(1)
}

/// `<m|D(beta)|n>` from the associated-Laguerre closed form.
pub fn displacement_matrix(beta: Complex64, cutoff: usize) -> Result<FockMatrix> {
    if cutoff < 1 {
        return Err(invalid("cutoff", "must be >= 1"));
    }
    if !beta.re.is_finite() || !beta.im.is_finite() {
        return Err(invalid("beta", "must be finite"));
    }
    let m = FockMatrix {
        cutoff,
        data: displacement_entries(beta, cutoff),
    };
    let block = inner_block(beta, cutoff);
    let defect = m.unitarity_defect(block);
    if defect > 1e-8 {
        return Err(RecoilError::CutoffTooSmall {
            cutoff,
            detail: format!("unitarity defect {defect:.3e} on inner {block}x{block} block for |beta|={:.3}", beta.norm()),
        });
    }
    Ok(m)
}

/// Thermal populations `p_n ∝ (nbar/(nbar+1))^n`, renormalized on the truncated space.
pub fn thermal_populations(nbar: f64, cutoff: usize) -> Result<Vec<f64>> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(invalid("nbar", format!("must be finite and >= 0, got {nbar}")));
    }
    let q = nbar / (nbar + 1.0);
    let mut p: Vec<f64> = (0..=cutoff).map(|n| q.powi(n as i32)).collect();
    if nbar == 0.0 {
        p.iter_mut().skip(1).for_each(|x| *x = 0.0);
        p[0] = 1.0;
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(p)
}

pub fn thermal_density(nbar: f64, cutoff: usize) -> Result<FockMatrix> {
    let p = thermal_populations(nbar, cutoff)?;
    let diag = nalgebra::DVector::from_iterator(p.len(), p.into_iter().map(|x| Complex64::new(x, 0.0)));
    FockMatrix::from_matrix(DMatrix::from_diagonal(&diag))
}

/// Cutoff covering a thermal state of occupation `nbar` displaced by up to `max_beta`.
pub fn auto_cutoff(nbar: f64, max_beta: f64) -> usize {
    ((nbar + 1.0) * 8.0 + 10.0 * max_beta * max_beta + 10.0).ceil() as usize
}

/// `tr(ops[0] · ops[1] · ... · rho)`.
pub fn trace_product(ops: &[FockMatrix], rho: &FockMatrix) -> Result<Complex64> {
    let mut acc = rho.clone();
    for op in ops.iter().rev() {
        acc = op.mul(&acc)?;
    }
    Ok(acc.trace())
}

/// `tr(A† B rho)` for diagonal `rho` with populations `p`.
pub fn trace_adjoint_product(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>, p: &[f64]) -> Complex64 {
    let mut acc = C0;
    for (n, pn) in p.iter().enumerate() {
        if *pn == 0.0 {
            continue;
        }
        let col: Complex64 = a.column(n).iter().zip(b.column(n).iter()).map(|(x, y)| x.conj() * y).sum();
        acc += col * *pn;
    }
    acc
}

/// One-dimensional emission spectrum after decay from the given motional state.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub detunings: Vec<f64>,
    pub density: Vec<f64>,
}

impl SpectrumResult {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.detunings, &self.density)
    }

    /// Detuning of the largest density value.
    pub fn peak(&self) -> f64 {
        let (i, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, v)| if *v > best.1 { (i, *v) } else { best });
        self.detunings[i]
    }

    /// Full width at half maximum of the global peak, by linear interpolation.
    pub fn fwhm(&self) -> f64 {
        let (imax, vmax) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |best, (i, v)| if *v > best.1 { (i, *v) } else { best });
        let half = vmax / 2.0;
        let cross = |range: &mut dyn Iterator<Item = usize>, step: isize| -> f64 {
            for i in range {
                let j = (i as isize + step) as usize;
                if self.density[j] < half {
                    let (x0, y0, x1, y1) = (self.detunings[i], self.density[i], self.detunings[j], self.density[j]);
                    return x0 + (half - y0) * (x1 - x0) / (y1 - y0);
                }
            }
            f64::NAN
        };
        let right = cross(&mut (imax..self.density.len() - 1), 1);
        let left = cross(&mut (1..=imax).rev(), -1);
        right - left
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Evenly spaced detuning grid.
pub fn detuning_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    let points = points.max(2);
    (0..points)
        .map(|i| min + (max - min) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Emission spectrum for one motional dimension with recoil `eta` and trap
/// frequency `mu_over_gamma`, on the detuning grid `grid` (units of the decay rate).
pub fn emission_spectrum_1d(
    eta: f64,
    mu_over_gamma: f64,
    initial: &FockMatrix,
    grid: &[f64],
) -> Result<SpectrumResult> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("grid", "needs at least two strictly increasing detunings"));
    }
    if !(mu_over_gamma > 0.0) {
        return Err(invalid("mu_over_gamma", "must be > 0"));
    }
    let rho = initial.matrix();
    let tr = rho.trace();
    if (tr - C1).norm() > 1e-8 || (rho - rho.adjoint()).iter().any(|x| x.norm() > 1e-10) {
        return Err(invalid("initial", "must be a Hermitian, unit-trace density matrix"));
    }
    let eig = nalgebra::SymmetricEigen::new(rho.clone());
    let components: Vec<(f64, nalgebra::DVector<Complex64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 1e-14)
        .map(|(k, p)| (*p, eig.eigenvectors.column(k).into_owned()))
        .collect();
    if eig.eigenvalues.iter().any(|p| *p < -1e-10) {
        return Err(invalid("initial", "must be positive semidefinite"));
    }
    let mean_n: f64 = (0..initial.dim()).map(|n| n as f64 * rho[(n, n)].re).sum();
    let cutoff = auto_cutoff(mean_n, eta).max(initial.cutoff() + auto_cutoff(0.0, eta));
    let d = displacement_entries(Complex64::new(0.0, -eta), cutoff);

    // Final-state amplitudes per spectral component: c_{n,l} = <n|D|l><l|zeta>.
    let mut boundary = 0.0;
    let mut terms: Vec<(f64, usize, Vec<(usize, Complex64)>)> = Vec::new();
    for (p, zeta) in &components {
        for n in 0..=cutoff {
            let amps: Vec<(usize, Complex64)> = (0..initial.dim())
                .map(|l| (l, d[(n, l)] * zeta[l]))
                .filter(|(_, a)| a.norm_sqr() > 0.0)
                .collect();
            if n == cutoff {
                boundary += p * amps.iter().map(|(_, a)| a.norm_sqr()).sum::<f64>();
            }
            terms.push((*p, n, amps));
        }
    }
    if boundary > 1e-6 {
        return Err(RecoilError::CutoffTooSmall {
            cutoff,
            detail: format!("boundary population {boundary:.3e} exceeds 1e-6"),
        });
    }

    let mut density: Vec<f64> = grid
        .iter()
        .map(|delta| {
            terms
                .iter()
                .map(|(p, n, amps)| {
                    let s: Complex64 = amps
                        .iter()
                        .map(|(l, a)| a / Complex64::new(0.5, mu_over_gamma * (*l as f64 - *n as f64) - delta))
                        .sum();
                    p * s.norm_sqr()
                })
                .sum()
        })
        .collect();
    let norm = trapezoid(grid, &density);
    if !(norm > 0.0) {
        return Err(RecoilError::EmptyWindow);
    }
    density.iter_mut().for_each(|v| *v /= norm);
    Ok(SpectrumResult {
        detunings: grid.to_vec(),
        density,
    })
}
