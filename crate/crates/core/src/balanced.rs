//! Square-root balanced truncation.
//!
//! With `P = L_P L_Pᵀ`, `Q = L_Q L_Qᵀ` and the SVD `L_Qᵀ L_P = U Σ V̂ᵀ`, the
//! projections `V = L_P V̂ Σ^{-1/2}` and `W = L_Q U Σ^{-1/2}` satisfy
//! `WᵀV = I` and `VᵀQV = WᵀPW = Σ`. This works for singular Gramians, where
//! the explicit balancing transformation does not exist.

use faer::Mat;

use crate::error::{Error, Result};
use crate::gramians::GramianPair;
use crate::linalg;
use crate::system::{LinearSde, NoiseCovariance, SignatureSde};

/// Default relative cut-off for numerical rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-12;

/// Relative slack for indefiniteness of matrices handed to [`factor_psd`].
pub const PSD_SLACK: f64 = 1e-10;

/// `F` (n×r) with `M ≈ F Fᵀ`, keeping eigenvalues above `rank_tol·λ_max`.
pub fn factor_psd(m: &Mat<f64>, rank_tol: f64) -> Result<Mat<f64>> {
    if linalg::asymmetry(m) > 1e-8 * linalg::max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument("factor_psd needs a symmetric matrix".into()));
    }
    let (vals, vecs) = linalg::sym_eigen(m)?;
    factor_from_eigen(&vals, &vecs, rank_tol)
}

fn factor_from_eigen(vals: &[f64], vecs: &Mat<f64>, rank_tol: f64) -> Result<Mat<f64>> {
    let top = vals.first().copied().unwrap_or(0.0);
    if let Some(&bottom) = vals.last() {
        if bottom < -PSD_SLACK * top.max(0.0) {
            return Err(Error::NotPsd { eigenvalue: bottom, tolerance: PSD_SLACK * top.max(0.0) });
        }
    }
    if top <= 0.0 {
        return Ok(Mat::zeros(vecs.nrows(), 0));
    }
    let r = vals.iter().take_while(|&&v| v > rank_tol * top).count();
    Ok(Mat::from_fn(vecs.nrows(), r, |i, j| vecs[(i, j)] * vals[j].sqrt()))
}

#[derive(Clone, Debug)]
pub struct BalancingResult {
    /// `σ_1..σ_r` above the rank cut.
    pub sigma: Vec<f64>,
    /// Every singular value of `L_Qᵀ L_P`, including those below the cut.
    pub spectrum: Vec<f64>,
    pub v_proj: Mat<f64>,
    pub w_proj: Mat<f64>,
    pub rank_tol: f64,
}

impl BalancingResult {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// First index `k` (1-based) with `σ_k < rel_tol · σ_1`, counting the
    /// values beyond the computed spectrum as zero.
    pub fn cutoff_index(&self, rel_tol: f64) -> usize {
        let top = self.spectrum[0];
        self.spectrum.iter().position(|&s| s < rel_tol * top).unwrap_or(self.spectrum.len()) + 1
    }

    /// `‖W_ñᵀ V_ñ − I‖_F` on the leading block.
    pub fn biorthogonality_defect(&self, n_tilde: usize) -> f64 {
        let v = self.v_proj.subcols(0, n_tilde);
        let w = self.w_proj.subcols(0, n_tilde);
        let g = w.transpose() * v;
        linalg::frobenius(&(g - Mat::<f64>::identity(n_tilde, n_tilde)))
    }
}

pub fn balance(p: &Mat<f64>, q: &Mat<f64>, rank_tol: f64) -> Result<BalancingResult> {
    let lp = factor_psd(p, rank_tol)?;
    let lq = factor_psd(q, rank_tol)?;
    balance_factors(&lp, &lq, rank_tol)
}

/// As [`balance`], reusing the eigendecompositions held by the pair.
pub fn balance_pair(gp: &GramianPair, rank_tol: f64) -> Result<BalancingResult> {
    let sp = gp.spectra();
    let lp = factor_from_eigen(&sp.lambda, &sp.p_vectors, rank_tol)?;
    let lq = factor_from_eigen(&sp.mu, &sp.q_vectors, rank_tol)?;
    balance_factors(&lp, &lq, rank_tol)
}

pub fn balance_factors(lp: &Mat<f64>, lq: &Mat<f64>, rank_tol: f64) -> Result<BalancingResult> {
    if !(rank_tol > 0.0 && rank_tol < 1.0) {
        return Err(Error::InvalidArgument(format!("rank tolerance must lie in (0, 1), got {rank_tol}")));
    }
    if lp.ncols() == 0 || lq.ncols() == 0 {
        return Err(Error::ZeroRank);
    }
    let cross = lq.transpose() * lp;
    let (u, s, vhat) = linalg::thin_svd(&cross)?;
    let top = s.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Err(Error::ZeroRank);
    }
    let r = s.iter().take_while(|&&v| v > rank_tol * top).count();
    let sigma: Vec<f64> = s[..r].to_vec();
    let inv_sqrt: Vec<f64> = sigma.iter().map(|v| 1.0 / v.sqrt()).collect();
    let v_proj = lp * Mat::from_fn(vhat.nrows(), r, |i, j| vhat[(i, j)] * inv_sqrt[j]);
    let w_proj = lq * Mat::from_fn(u.nrows(), r, |i, j| u[(i, j)] * inv_sqrt[j]);
    Ok(BalancingResult { sigma, spectrum: s, v_proj, w_proj, rank_tol })
}

/// `σ_k = √eig_k(PQ)`, all `n` of them, nonincreasing.
///
/// Computed as the spectrum of the symmetric `L_Pᵀ Q L_P`, which is similar
/// to `PQ`, with `L_P` the unclipped eigen-factor of `P`.
pub fn hankel_spectrum(p: &Mat<f64>, q: &Mat<f64>) -> Result<Vec<f64>> {
    let n = p.nrows();
    if p.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::Shape("Gramians must be square of equal size".into()));
    }
    let (vals, vecs) = linalg::sym_eigen(p)?;
    let top_p = vals.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&bottom) = vals.last() {
        if bottom < -PSD_SLACK * top_p {
            return Err(Error::NotPsd { eigenvalue: bottom, tolerance: PSD_SLACK * top_p });
        }
    }
    let lp = Mat::from_fn(n, n, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt());
    let mut core = lp.transpose() * q * &lp;
    linalg::symmetrize(&mut core);
    let (eig, _) = linalg::sym_eigen(&core)?;
    let top = eig.first().copied().unwrap_or(0.0).max(0.0);
    if let Some(&bottom) = eig.last() {
        if bottom < -PSD_SLACK * top {
            return Err(Error::Invariant(format!(
                "PQ has eigenvalue {bottom:e}, below −{PSD_SLACK:e}·{top:e}; the Gramians are inconsistent"
            )));
        }
    }
    Ok(eig.iter().map(|v| v.max(0.0).sqrt()).collect())
}

/// The Petrov–Galerkin projection of a signature SDE.
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    a: Mat<f64>,
    n_mats: Vec<Mat<f64>>,
    z: Vec<f64>,
    output: Mat<f64>,
    cov: NoiseCovariance,
}

impl ReducedSystem {
    pub fn new(a: Mat<f64>, n_mats: Vec<Mat<f64>>, z: Vec<f64>, output: Mat<f64>, cov: NoiseCovariance) -> Result<Self> {
        let k = a.nrows();
        if k == 0 {
            return Err(Error::InvalidArgument("reduced dimension must be at least 1".into()));
        }
        let square = |m: &Mat<f64>| m.nrows() == k && m.ncols() == k;
        if !square(&a) || !n_mats.iter().all(square) || z.len() != k || output.ncols() != k || output.nrows() == 0 {
            return Err(Error::Shape(format!("inconsistent reduced system of order {k}")));
        }
        if n_mats.is_empty() || cov.size() != n_mats.len() - 1 {
            return Err(Error::Shape(format!(
                "{} letters with a {}x{} covariance",
                n_mats.len(),
                cov.size(),
                cov.size()
            )));
        }
        Ok(ReducedSystem { a, n_mats, z, output, cov })
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &Mat<f64> {
        &self.a
    }

    /// `Ñ_letter`, letters 1-based.
    pub fn n_mat(&self, letter: usize) -> &Mat<f64> {
        &self.n_mats[letter - 1]
    }

    pub fn n_mats(&self) -> &[Mat<f64>] {
        &self.n_mats
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn output_matrix(&self) -> &Mat<f64> {
        &self.output
    }

    pub fn cov(&self) -> &NoiseCovariance {
        &self.cov
    }
}

fn dense_mul_add(m: &Mat<f64>, x: &[f64], out: &mut [f64], alpha: f64) {
    for (j, &xj) in x.iter().enumerate() {
        let s = alpha * xj;
        if s == 0.0 {
            continue;
        }
        let col = m.col(j).try_as_col_major().expect("contiguous").as_slice();
        for (o, &v) in out.iter_mut().zip(col) {
            *o += v * s;
        }
    }
}

impl LinearSde for ReducedSystem {
    fn state_dim(&self) -> usize {
        self.order()
    }

    fn letters(&self) -> usize {
        self.n_mats.len()
    }

    fn output_dim(&self) -> usize {
        self.output.nrows()
    }

    fn covariance(&self) -> &NoiseCovariance {
        &self.cov
    }

    fn initial_state(&self) -> &[f64] {
        &self.z
    }

    fn drift_add(&self, x: &[f64], out: &mut [f64], alpha: f64) {
        dense_mul_add(&self.a, x, out, alpha);
    }

    fn letter_add(&self, letter: usize, x: &[f64], out: &mut [f64], alpha: f64) {
        dense_mul_add(&self.n_mats[letter - 1], x, out, alpha);
    }

    fn output(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        dense_mul_add(&self.output, x, out, 1.0);
    }
}

/// `Ã = WᵀAV`, `Ñ_i = WᵀN_iV`, `z̃ = Wᵀz`, `L̃ = LV` on the leading `ñ`
/// balanced coordinates.
pub fn reduce(sys: &SignatureSde, bal: &BalancingResult, n_tilde: usize) -> Result<ReducedSystem> {
    if n_tilde == 0 || n_tilde > bal.rank() {
        return Err(Error::InvalidArgument(format!(
            "reduced order {n_tilde} outside 1..={}",
            bal.rank()
        )));
    }
    if bal.v_proj.nrows() != sys.n() {
        return Err(Error::Shape(format!(
            "projection has {} rows, system has n = {}",
            bal.v_proj.nrows(),
            sys.n()
        )));
    }
    let v = bal.v_proj.subcols(0, n_tilde).to_owned();
    let w = bal.w_proj.subcols(0, n_tilde).to_owned();
    let project = |sparse: &crate::sparse::SparseMatrix| w.transpose() * sparse.mul_dense(&v);
    let a = project(sys.drift());
    let n_mats = sys.n_mats().iter().map(project).collect();
    let z = linalg::mat_vec(&w.transpose().to_owned(), sys.z());
    let output = sys.output_matrix() * &v;
    ReducedSystem::new(a, n_mats, z, output, sys.cov().clone())
}

/// `L exp(tA) z` for the full system; the series stops at `A^m` by nilpotency.
pub fn deterministic_output(sys: &SignatureSde, t: f64) -> Vec<f64> {
    let mut term = sys.z().to_vec();
    let mut state = term.clone();
    for k in 1..=sys.m() {
        let mut next = vec![0.0; sys.n()];
        sys.drift().mul_vec_add(&term, &mut next, t / k as f64);
        term = next;
        for (s, t) in state.iter_mut().zip(&term) {
            *s += t;
        }
    }
    linalg::mat_vec(sys.output_matrix(), &state)
}

/// `L̃ exp(tÃ) z̃`.
pub fn reduced_deterministic_output(red: &ReducedSystem, t: f64) -> Vec<f64> {
    let e = linalg::expm(red.a(), t);
    linalg::mat_vec(red.output_matrix(), &linalg::mat_vec(&e, red.z()))
}
