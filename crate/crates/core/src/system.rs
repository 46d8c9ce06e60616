//! The linear Itô SDE solved by the truncated signature of a time-extended
//! Brownian motion:
//!
//! ```text
//! dX = A X dt + Σ_{i≥2} N_i X dB^i,   X_0 = z,   Y = L X
//! ```
//!
//! `N_i` is the matrix of `a ↦ a ⊗ e_i` in the length-first coordinates and
//! `A = N_1 + ½ Σ_{i,j≥2} N_i N_j k_ij`. Letter 1 is time; letters `2..=d`
//! are driven by a Brownian motion with covariance `K = (k_ij)`.

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg;
use crate::sparse::SparseMatrix;
use crate::words::{BasisOrder, LinearFunctional};

/// Tolerance of the PSD test on `K`.
pub const COVARIANCE_PSD_TOL: f64 = 1e-12;

/// Covariance `K` of the Brownian letters. Row `r` belongs to letter `r + 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCovariance {
    size: usize,
    entries: Vec<f64>,
}

impl NoiseCovariance {
    /// `entries` is row-major `size × size`.
    pub fn new(size: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::Shape(format!(
                "covariance needs {} entries for a {size}x{size} matrix, got {}",
                size * size,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite covariance entry {bad}")));
        }
        let cov = NoiseCovariance { size, entries };
        let scale = cov.entries.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..size {
            for j in 0..i {
                if (cov.get(i, j) - cov.get(j, i)).abs() > COVARIANCE_PSD_TOL * scale {
                    return Err(Error::InvalidArgument(format!(
                        "covariance not symmetric at ({}, {})",
                        i + 2,
                        j + 2
                    )));
                }
            }
        }
        if size > 0 {
            let (vals, _) = linalg::sym_eigen(&cov.to_mat())?;
            let min = *vals.last().expect("nonempty");
            let tol = COVARIANCE_PSD_TOL * vals[0].abs().max(1.0);
            if min < -tol {
                return Err(Error::NotPsd { eigenvalue: min, tolerance: tol });
            }
        }
        Ok(cov)
    }

    /// Unit variances with the given off-diagonal correlations.
    pub fn from_correlation(size: usize, correlation: Vec<f64>) -> Result<Self> {
        if correlation.len() != size * size {
            return Err(Error::Shape(format!(
                "correlation needs {} entries, got {}",
                size * size,
                correlation.len()
            )));
        }
        for i in 0..size {
            if correlation[i * size + i] != 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "correlation diagonal at letter {} is {}, expected 1",
                    i + 2,
                    correlation[i * size + i]
                )));
            }
        }
        if let Some(v) = correlation.iter().find(|v| v.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!("correlation {v} outside [-1, 1]")));
        }
        NoiseCovariance::new(size, correlation)
    }

    pub fn identity(size: usize) -> Self {
        let mut entries = vec![0.0; size * size];
        for i in 0..size {
            entries[i * size + i] = 1.0;
        }
        NoiseCovariance { size, entries }
    }

    pub fn zero(size: usize) -> Self {
        NoiseCovariance { size, entries: vec![0.0; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry by 0-based row/column.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    /// `k_ij` by letters, both in `2..=d`.
    pub fn k(&self, letter_i: usize, letter_j: usize) -> f64 {
        self.get(letter_i - 2, letter_j - 2)
    }

    pub fn letter_of_row(&self, row: usize) -> usize {
        row + 2
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn to_mat(&self) -> Mat<f64> {
        linalg::from_rows(self.size, self.size, &self.entries)
    }

    /// `F` with `K = F Fᵀ`, from the clipped eigendecomposition so that
    /// singular covariances are fine.
    pub fn factor(&self) -> Result<Mat<f64>> {
        if self.size == 0 {
            return Ok(Mat::zeros(0, 0));
        }
        let (vals, vecs) = linalg::sym_eigen(&self.to_mat())?;
        Ok(Mat::from_fn(self.size, self.size, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt()))
    }
}

/// The matrices `N_1..N_d` (index 0 is letter 1).
///
/// Box-style definition, 1-based: `N_i[1 + (k−1)d + i, k] = 1` for
/// `k = 1..(d^m−1)/(d−1)`. In 0-based storage that is row `1 + c·d + (i−1)`,
/// column `c`, which is `index(w·i)` for `c = index(w)`.
pub fn build_vector_field_matrices(d: usize, m: usize) -> Result<Vec<SparseMatrix>> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("need d ≥ 1 and m ≥ 1, got d = {d}, m = {m}")));
    }
    let order = BasisOrder::new(d, m)?;
    let n = order.n();
    let cols = order.n_below_top();
    (1..=d)
        .map(|i| {
            let triplets = (0..cols).map(|c| (1 + c * d + (i - 1), c, 1.0)).collect();
            SparseMatrix::from_triplets(n, n, triplets)
        })
        .collect()
}

/// `N_1 + ½ Σ_{i,j≥2} N_i N_j k_ij`.
pub fn ito_drift(n_mats: &[SparseMatrix], cov: &NoiseCovariance) -> Result<SparseMatrix> {
    let d = n_mats.len();
    if d == 0 {
        return Err(Error::Shape("no vector field matrices".into()));
    }
    if cov.size() != d - 1 {
        return Err(Error::Shape(format!(
            "covariance is {0}x{0} but d − 1 = {1}",
            cov.size(),
            d - 1
        )));
    }
    let mut drift = n_mats[0].clone();
    for i in 2..=d {
        for j in 2..=d {
            let k = cov.k(i, j);
            if k == 0.0 {
                continue;
            }
            let prod = n_mats[i - 1].matmul(&n_mats[j - 1])?;
            drift = drift.add_scaled(&prod, 0.5 * k)?;
        }
    }
    Ok(drift)
}

/// Output matrix whose rows are the coefficient vectors of `functionals`.
pub fn output_from_functionals(order: &BasisOrder, functionals: &[LinearFunctional]) -> Result<Mat<f64>> {
    let rows = functionals.iter().map(|f| f.to_dense(order)).collect::<Result<Vec<_>>>()?;
    Ok(Mat::from_fn(rows.len(), order.n(), |i, j| rows[i][j]))
}

/// Anything that can be stepped as `dX = A X dt + Σ N_i X dB^i`, `Y = L X`.
pub trait LinearSde: Sync {
    fn state_dim(&self) -> usize;
    /// Alphabet size `d`; letters `2..=d` carry noise.
    fn letters(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn covariance(&self) -> &NoiseCovariance;
    fn initial_state(&self) -> &[f64];
    /// `out += alpha · A x`.
    fn drift_add(&self, x: &[f64], out: &mut [f64], alpha: f64);
    /// `out += alpha · N_letter x`.
    fn letter_add(&self, letter: usize, x: &[f64], out: &mut [f64], alpha: f64);
    /// `out = L x`.
    fn output(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Clone, Debug)]
pub struct SignatureSde {
    order: BasisOrder,
    n_mats: Vec<SparseMatrix>,
    cov: NoiseCovariance,
    drift: SparseMatrix,
    z: Vec<f64>,
    output: Mat<f64>,
}

impl SignatureSde {
    /// Builds and checks the full system. `z` defaults to the empty-word
    /// basis vector.
    pub fn assemble(d: usize, m: usize, cov: NoiseCovariance, output: Mat<f64>, z: Option<Vec<f64>>) -> Result<Self> {
        let order = BasisOrder::new(d, m)?;
        let n_mats = build_vector_field_matrices(d, m)?;
        let drift = ito_drift(&n_mats, &cov)?;
        let z = z.unwrap_or_else(|| {
            let mut e = vec![0.0; order.n()];
            e[0] = 1.0;
            e
        });
        SignatureSde::from_parts(order, n_mats, cov, drift, z, output)
    }

    /// Checks every structural invariant of externally supplied parts.
    pub fn from_parts(
        order: BasisOrder,
        n_mats: Vec<SparseMatrix>,
        cov: NoiseCovariance,
        drift: SparseMatrix,
        z: Vec<f64>,
        output: Mat<f64>,
    ) -> Result<Self> {
        let sys = SignatureSde { order, n_mats, cov, drift, z, output };
        sys.verify()?;
        Ok(sys)
    }

    pub fn verify(&self) -> Result<()> {
        let (d, n) = (self.order.d(), self.order.n());
        let expected_nnz = self.order.n_below_top();
        if self.n_mats.len() != d {
            return Err(Error::Invariant(format!("{} vector field matrices for d = {d}", self.n_mats.len())));
        }
        if self.cov.size() != d - 1 {
            return Err(Error::Invariant(format!("covariance size {} for d = {d}", self.cov.size())));
        }
        for (idx, nm) in self.n_mats.iter().enumerate() {
            let letter = idx + 1;
            if nm.rows() != n || nm.cols() != n {
                return Err(Error::Invariant(format!("N_{letter} is {}x{}, expected {n}x{n}", nm.rows(), nm.cols())));
            }
            if nm.nnz() != expected_nnz {
                return Err(Error::Invariant(format!(
                    "N_{letter} has {} nonzeros, expected {expected_nnz}",
                    nm.nnz()
                )));
            }
            for &(r, c, v) in nm.entries() {
                if v != 1.0 {
                    return Err(Error::Invariant(format!("N_{letter} has entry {v} at ({r}, {c})")));
                }
                // raising the level by exactly one makes every (m+1)-fold product vanish
                if self.order.level_of(r) != self.order.level_of(c) + 1 {
                    return Err(Error::Invariant(format!("N_{letter} entry ({r}, {c}) breaks the level grading")));
                }
            }
        }
        let expected = ito_drift(&self.n_mats, &self.cov)?;
        if self.drift.rows() != n || self.drift.cols() != n {
            return Err(Error::Invariant("drift has the wrong shape".into()));
        }
        let diff = self.drift.add_scaled(&expected, -1.0)?;
        let scale = expected.entries().iter().fold(1.0f64, |a, e| a.max(e.2.abs()));
        if diff.entries().iter().any(|e| e.2.abs() > 1e-14 * scale) {
            return Err(Error::Invariant("drift differs from N_1 + ½ Σ N_i N_j k_ij".into()));
        }
        for &(r, c, _) in self.drift.entries() {
            if self.order.level_of(r) <= self.order.level_of(c) {
                return Err(Error::Invariant(format!("drift entry ({r}, {c}) is not strictly level-lower")));
            }
        }
        if self.z.len() != n {
            return Err(Error::Invariant(format!("initial state has length {}, expected {n}", self.z.len())));
        }
        if self.output.ncols() != n || self.output.nrows() == 0 {
            return Err(Error::Invariant(format!(
                "output matrix is {}x{}, expected p x {n} with p ≥ 1",
                self.output.nrows(),
                self.output.ncols()
            )));
        }
        if self.z.iter().any(|v| !v.is_finite()) || linalg::max_abs(&self.output).is_nan() {
            return Err(Error::Invariant("non-finite initial state or output matrix".into()));
        }
        Ok(())
    }

    pub fn order(&self) -> &BasisOrder {
        &self.order
    }

    pub fn d(&self) -> usize {
        self.order.d()
    }

    pub fn m(&self) -> usize {
        self.order.m()
    }

    pub fn n(&self) -> usize {
        self.order.n()
    }

    pub fn p(&self) -> usize {
        self.output.nrows()
    }

    /// `N_letter`, letters 1-based.
    pub fn n_mat(&self, letter: usize) -> &SparseMatrix {
        &self.n_mats[letter - 1]
    }

    pub fn n_mats(&self) -> &[SparseMatrix] {
        &self.n_mats
    }

    pub fn cov(&self) -> &NoiseCovariance {
        &self.cov
    }

    pub fn drift(&self) -> &SparseMatrix {
        &self.drift
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn output_matrix(&self) -> &Mat<f64> {
        &self.output
    }

    pub fn with_output(&self, output: Mat<f64>) -> Result<Self> {
        SignatureSde::from_parts(self.order, self.n_mats.clone(), self.cov.clone(), self.drift.clone(), self.z.clone(), output)
    }
}

impl LinearSde for SignatureSde {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn letters(&self) -> usize {
        self.d()
    }

    fn output_dim(&self) -> usize {
        self.p()
    }

    fn covariance(&self) -> &NoiseCovariance {
        &self.cov
    }

    fn initial_state(&self) -> &[f64] {
        &self.z
    }

    fn drift_add(&self, x: &[f64], out: &mut [f64], alpha: f64) {
        self.drift.mul_vec_add(x, out, alpha);
    }

    fn letter_add(&self, letter: usize, x: &[f64], out: &mut [f64], alpha: f64) {
        self.n_mats[letter - 1].mul_vec_add(x, out, alpha);
    }

    fn output(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| self.output[(i, j)] * x[j]).sum();
        }
    }
}
