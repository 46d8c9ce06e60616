//! Finite-horizon Gramians of the signature SDE.
//!
//! With the Lyapunov operator `ℒ(Z) = AZ + ZAᵀ + Σ_{i,j≥2} N_i Z N_jᵀ k_ij`,
//! the second moment `E[X_t X_tᵀ]` solves `Ż = ℒ(Z)`, so
//!
//! ```text
//! P = ∫_0^T e^{tℒ}(zzᵀ) dt = Σ_{j=0}^{2m} T^{j+1}/(j+1)! ℒ^j(zzᵀ)
//! ```
//!
//! and the series is finite because `ℒ` raises the combined word length of
//! row and column by at least one. `Q` is the same with `ℒ*` and `LᵀL`.

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg;
use crate::system::SignatureSde;

/// Relative PSD slack on Gramian eigenvalues.
pub const GRAMIAN_PSD_TOL: f64 = 1e-10;

/// `ℒ(Z)`.
pub fn lyapunov_apply(sys: &SignatureSde, z: &Mat<f64>) -> Result<Mat<f64>> {
    check_square(sys, z)?;
    let n = sys.n();
    let mut out = Mat::zeros(n, n);
    sys.drift().mul_dense_add(z, &mut out, 1.0);
    sys.drift().dense_mul_transpose_add(z, &mut out, 1.0);
    let d = sys.d();
    for i in 2..=d {
        if (2..=d).all(|j| sys.cov().k(i, j) == 0.0) {
            continue;
        }
        let left = sys.n_mat(i).mul_dense(z);
        for j in 2..=d {
            let k = sys.cov().k(i, j);
            if k != 0.0 {
                sys.n_mat(j).dense_mul_transpose_add(&left, &mut out, k);
            }
        }
    }
    Ok(out)
}

/// `ℒ*(Z) = AᵀZ + ZA + Σ N_iᵀ Z N_j k_ij`.
pub fn lyapunov_adjoint_apply(sys: &SignatureSde, z: &Mat<f64>) -> Result<Mat<f64>> {
    check_square(sys, z)?;
    let n = sys.n();
    let mut out = Mat::zeros(n, n);
    let at = sys.drift().transpose();
    at.mul_dense_add(z, &mut out, 1.0);
    at.dense_mul_transpose_add(z, &mut out, 1.0);
    let d = sys.d();
    let transposed: Vec<_> = (2..=d).map(|i| sys.n_mat(i).transpose()).collect();
    for i in 2..=d {
        if (2..=d).all(|j| sys.cov().k(i, j) == 0.0) {
            continue;
        }
        let left = transposed[i - 2].mul_dense(z);
        for j in 2..=d {
            let k = sys.cov().k(i, j);
            if k != 0.0 {
                transposed[j - 2].dense_mul_transpose_add(&left, &mut out, k);
            }
        }
    }
    Ok(out)
}

fn check_square(sys: &SignatureSde, z: &Mat<f64>) -> Result<()> {
    if z.nrows() != sys.n() || z.ncols() != sys.n() {
        return Err(Error::Shape(format!(
            "Lyapunov operator on a {}x{} matrix, system has n = {}",
            z.nrows(),
            z.ncols(),
            sys.n()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Forward,
    Adjoint,
}

fn apply_flow(sys: &SignatureSde, flow: Flow, z: &Mat<f64>) -> Result<Mat<f64>> {
    match flow {
        Flow::Forward => lyapunov_apply(sys, z),
        Flow::Adjoint => lyapunov_adjoint_apply(sys, z),
    }
}

/// The terms `ℒ^j(M)` (or `(ℒ*)^j(M)`) for `j < count`, each symmetrized.
pub fn lyapunov_powers(sys: &SignatureSde, init: &Mat<f64>, flow: Flow, count: usize) -> Result<Vec<Mat<f64>>> {
    let mut out = Vec::with_capacity(count);
    let mut term = init.clone();
    linalg::symmetrize(&mut term);
    for _ in 0..count {
        let next = apply_flow(sys, flow, &term)?;
        out.push(std::mem::replace(&mut term, next));
        linalg::symmetrize(&mut term);
    }
    Ok(out)
}

/// `Σ_{j=0}^{2m} T^{j+1}/(j+1)! Λ^j(M)` with compensated summation.
pub fn lyapunov_series(sys: &SignatureSde, init: &Mat<f64>, flow: Flow, horizon: f64) -> Result<Mat<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    check_square(sys, init)?;
    let n = sys.n();
    let mut sum = Mat::<f64>::zeros(n, n);
    let mut comp = Mat::<f64>::zeros(n, n);
    let mut term = init.clone();
    linalg::symmetrize(&mut term);
    let mut coeff = horizon;
    let terms = 2 * sys.m() + 1;
    for j in 0..terms {
        kahan_add(&mut sum, &mut comp, &term, coeff);
        if j + 1 < terms {
            term = apply_flow(sys, flow, &term)?;
            linalg::symmetrize(&mut term);
            coeff *= horizon / (j + 2) as f64;
        }
    }
    linalg::symmetrize(&mut sum);
    Ok(sum)
}

fn kahan_add(sum: &mut Mat<f64>, comp: &mut Mat<f64>, term: &Mat<f64>, coeff: f64) {
    for j in 0..sum.ncols() {
        let s = sum.col_mut(j).try_as_col_major_mut().expect("contiguous").as_slice_mut();
        let c = comp.col_mut(j).try_as_col_major_mut().expect("contiguous").as_slice_mut();
        let t = term.col(j).try_as_col_major().expect("contiguous").as_slice();
        for ((s, c), &t) in s.iter_mut().zip(c.iter_mut()).zip(t) {
            let y = coeff * t - *c;
            let next = *s + y;
            *c = (next - *s) - y;
            *s = next;
        }
    }
}

/// Reachability Gramian from the initial state `z`.
#[allow(non_snake_case)]
pub fn gramian_P(sys: &SignatureSde, horizon: f64) -> Result<Mat<f64>> {
    let z = sys.z();
    let init = Mat::from_fn(z.len(), z.len(), |i, j| z[i] * z[j]);
    lyapunov_series(sys, &init, Flow::Forward, horizon)
}

/// Observability Gramian from the output matrix `L`.
#[allow(non_snake_case)]
pub fn gramian_Q(sys: &SignatureSde, horizon: f64) -> Result<Mat<f64>> {
    let l = sys.output_matrix();
    if linalg::max_abs(l) == 0.0 {
        return Err(Error::InvalidArgument("output matrix is zero".into()));
    }
    let init = l.transpose() * l;
    lyapunov_series(sys, &init, Flow::Adjoint, horizon)
}

/// Dense `𝒦` with `vec ℒ(Z) = 𝒦 vec Z` (column-major vec). Test-sized only.
pub fn kronecker_generator(sys: &SignatureSde) -> Result<Mat<f64>> {
    let n = sys.n();
    if n > 64 {
        return Err(Error::InvalidArgument(format!("refusing to build an {0}²x{0}² generator", n)));
    }
    let a = sys.drift().to_dense();
    let eye = Mat::<f64>::identity(n, n);
    let mut k = kron(&a, &eye) + kron(&eye, &a);
    for i in 2..=sys.d() {
        for j in 2..=sys.d() {
            let kij = sys.cov().k(i, j);
            if kij != 0.0 {
                k += kron(&sys.n_mat(j).to_dense(), &sys.n_mat(i).to_dense()) * faer::Scale(kij);
            }
        }
    }
    Ok(k)
}

pub fn kron(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    Mat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn vec_col_major(z: &Mat<f64>) -> Vec<f64> {
    (0..z.ncols()).flat_map(|j| (0..z.nrows()).map(move |i| z[(i, j)])).collect()
}

pub fn unvec_col_major(v: &[f64], n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| v[j * n + i])
}

/// Local error tolerance of the oracle integrator.
pub const ORACLE_TOL: f64 = 1e-10;

// Dormand–Prince 5(4) tableau; the flow is autonomous so the nodes are unused
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration of `Ż = ℒ(Z)` (or `ℒ*`).
pub struct LyapunovOde<'a> {
    sys: &'a SignatureSde,
    flow: Flow,
    t: f64,
    state: Mat<f64>,
    h: f64,
}

impl<'a> LyapunovOde<'a> {
    pub fn new(sys: &'a SignatureSde, flow: Flow, init: Mat<f64>) -> Result<Self> {
        check_square(sys, &init)?;
        Ok(LyapunovOde { sys, flow, t: 0.0, state: init, h: 1e-2 })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn state(&self) -> &Mat<f64> {
        &self.state
    }

    pub fn advance_to(&mut self, target: f64) -> Result<()> {
        if target < self.t {
            return Err(Error::InvalidArgument(format!("cannot integrate backwards to {target}")));
        }
        while self.t < target {
            let remaining = target - self.t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            if h < 1e-14 * self.t.abs().max(1.0) && !last {
                return Err(Error::StepUnderflow { t: self.t });
            }
            let mut k: Vec<Mat<f64>> = Vec::with_capacity(7);
            for s in 0..7 {
                let mut y = self.state.clone();
                for (r, kr) in k.iter().enumerate() {
                    if A[s][r] != 0.0 {
                        y += kr * faer::Scale(h * A[s][r]);
                    }
                }
                k.push(apply_flow(self.sys, self.flow, &y)?);
            }
            let mut y5 = self.state.clone();
            let mut err = Mat::<f64>::zeros(self.state.nrows(), self.state.ncols());
            for s in 0..7 {
                if B5[s] != 0.0 {
                    y5 += &k[s] * faer::Scale(h * B5[s]);
                }
                err += &k[s] * faer::Scale(h * (B5[s] - B4[s]));
            }
            let mut ratio = 0.0f64;
            for j in 0..err.ncols() {
                for i in 0..err.nrows() {
                    let scale = ORACLE_TOL * (1.0 + self.state[(i, j)].abs().max(y5[(i, j)].abs()));
                    ratio = ratio.max(err[(i, j)].abs() / scale);
                }
            }
            if ratio <= 1.0 {
                self.t = if last { target } else { self.t + h };
                self.state = y5;
            }
            let factor = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            let proposed = h * factor;
            if ratio > 1.0 && proposed < 1e-14 * self.t.abs().max(1.0) {
                return Err(Error::StepUnderflow { t: self.t });
            }
            if !(last && ratio <= 1.0) {
                self.h = proposed;
            }
        }
        Ok(())
    }
}

/// `Z(t)` with `Ż = ℒ(Z)`, `Z(0) = M`: the second moment `E[Φ M Φᵀ]`.
pub fn lyapunov_ode_oracle(sys: &SignatureSde, m: &Mat<f64>, t: f64, flow: Flow) -> Result<Mat<f64>> {
    if t < 0.0 {
        return Err(Error::InvalidArgument(format!("negative time {t}")));
    }
    let mut ode = LyapunovOde::new(sys, flow, m.clone())?;
    ode.advance_to(t)?;
    Ok(ode.state)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for i in 0..count {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (count as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=count {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if count == 0 { 1.0 } else { p1 };
            let pm1 = if count == 1 { 1.0 } else { p0 };
            dp = count as f64 * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// `∫_0^T Z(u) du` from the oracle flow, by composite Gauss–Legendre.
pub fn oracle_gramian(sys: &SignatureSde, init: &Mat<f64>, flow: Flow, horizon: f64, panels: usize) -> Result<Mat<f64>> {
    let nodes_per_panel = sys.m() + 2;
    let (x, w) = gauss_legendre(nodes_per_panel);
    let mut order: Vec<usize> = (0..nodes_per_panel).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ode = LyapunovOde::new(sys, flow, init.clone())?;
    let mut acc = Mat::<f64>::zeros(sys.n(), sys.n());
    let width = horizon / panels as f64;
    for p in 0..panels {
        let a = p as f64 * width;
        for &q in &order {
            ode.advance_to(a + 0.5 * width * (x[q] + 1.0))?;
            acc += ode.state() * faer::Scale(0.5 * width * w[q]);
        }
    }
    linalg::symmetrize(&mut acc);
    Ok(acc)
}

/// Eigenpairs of both Gramians, nonincreasing.
#[derive(Clone, Debug)]
pub struct GramianSpectra {
    pub lambda: Vec<f64>,
    pub p_vectors: Mat<f64>,
    pub mu: Vec<f64>,
    pub q_vectors: Mat<f64>,
}

#[derive(Clone, Debug)]
pub struct GramianPair {
    p: Mat<f64>,
    q: Mat<f64>,
    horizon: f64,
    spectra: GramianSpectra,
}

impl GramianPair {
    pub fn compute(sys: &SignatureSde, horizon: f64) -> Result<Self> {
        let p = gramian_P(sys, horizon)?;
        let q = gramian_Q(sys, horizon)?;
        GramianPair::new(p, q, horizon)
    }

    /// Symmetrizes and checks `P, Q ⪰ 0` to the relative slack.
    pub fn new(mut p: Mat<f64>, mut q: Mat<f64>, horizon: f64) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n || q.nrows() != n || q.ncols() != n {
            return Err(Error::Shape("Gramians must be square of equal size".into()));
        }
        if !(horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        for (name, g) in [("P", &mut p), ("Q", &mut q)] {
            let asym = linalg::asymmetry(g);
            let scale = linalg::max_abs(g).max(f64::MIN_POSITIVE);
            if asym > 1e-8 * scale {
                return Err(Error::Invariant(format!("{name} is not symmetric (asymmetry {asym:e})")));
            }
            linalg::symmetrize(g);
        }
        let spectra = spectra_of(&p, &q)?;
        for vals in [&spectra.lambda, &spectra.mu] {
            if let (Some(&top), Some(&bottom)) = (vals.first(), vals.last()) {
                let tol = GRAMIAN_PSD_TOL * top.max(0.0);
                if bottom < -tol {
                    return Err(Error::NotPsd { eigenvalue: bottom, tolerance: tol });
                }
            }
        }
        Ok(GramianPair { p, q, horizon, spectra })
    }

    pub fn p(&self) -> &Mat<f64> {
        &self.p
    }

    pub fn q(&self) -> &Mat<f64> {
        &self.q
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn spectra(&self) -> &GramianSpectra {
        &self.spectra
    }
}

fn spectra_of(p: &Mat<f64>, q: &Mat<f64>) -> Result<GramianSpectra> {
    let (lambda, p_vectors) = linalg::sym_eigen(p)?;
    let (mu, q_vectors) = linalg::sym_eigen(q)?;
    Ok(GramianSpectra { lambda, p_vectors, mu, q_vectors })
}

pub fn gramian_spectra(gp: &GramianPair) -> &GramianSpectra {
    gp.spectra()
}
