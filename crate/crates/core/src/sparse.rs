//! Triplet sparse matrices, compacted to unique `(row, col)` pairs sorted by
//! column. Only what the signature operators need: products, transposes and
//! products against dense vectors and column-major dense matrices.

use faer::Mat;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix { rows, cols, entries: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix { rows: n, cols: n, entries: (0..n).map(|i| (i, i, 1.0)).collect() }
    }

    /// Duplicate pairs are summed; exact zeros are dropped.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::Shape(format!(
                "entry ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        triplets.sort_by_key(|&(r, c, _)| (c, r));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        entries.retain(|e| e.2 != 0.0);
        Ok(SparseMatrix { rows, cols, entries })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(col, row), |&(r, c, _)| (c, r))
            .map(|i| self.entries[i].2)
            .unwrap_or(0.0)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let triplets = self.entries.iter().map(|&(r, c, v)| (c, r, v)).collect();
        SparseMatrix::from_triplets(self.cols, self.rows, triplets).expect("transpose stays in range")
    }

    pub fn scaled(&self, alpha: f64) -> SparseMatrix {
        let triplets = self.entries.iter().map(|&(r, c, v)| (r, c, alpha * v)).collect();
        SparseMatrix::from_triplets(self.rows, self.cols, triplets).expect("same shape")
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, other: &SparseMatrix, alpha: f64) -> Result<SparseMatrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot add {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut triplets = self.entries.clone();
        triplets.extend(other.entries.iter().map(|&(r, c, v)| (r, c, alpha * v)));
        SparseMatrix::from_triplets(self.rows, self.cols, triplets)
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        // bucket self's entries by column for the join on the inner index
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.cols];
        for &(r, c, v) in &self.entries {
            by_col[c].push((r, v));
        }
        let mut triplets = Vec::new();
        for &(k, j, b) in &other.entries {
            for &(i, a) in &by_col[k] {
                triplets.push((i, j, a * b));
            }
        }
        SparseMatrix::from_triplets(self.rows, other.cols, triplets)
    }

    /// `out += alpha * self · x`.
    pub fn mul_vec_add(&self, x: &[f64], out: &mut [f64], alpha: f64) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for &(r, c, v) in &self.entries {
            out[r] += alpha * v * x[c];
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_vec_add(x, &mut out, 1.0);
        out
    }

    /// `out += alpha * self · z` for a dense `z`.
    pub fn mul_dense_add(&self, z: &Mat<f64>, out: &mut Mat<f64>, alpha: f64) {
        debug_assert_eq!(z.nrows(), self.cols);
        debug_assert_eq!(out.nrows(), self.rows);
        debug_assert_eq!(out.ncols(), z.ncols());
        for j in 0..z.ncols() {
            let zc = z.col(j).try_as_col_major().expect("contiguous column").as_slice();
            let oc = out.col_mut(j).try_as_col_major_mut().expect("contiguous column").as_slice_mut();
            for &(r, c, v) in &self.entries {
                oc[r] += alpha * v * zc[c];
            }
        }
    }

    /// `out += alpha * z · selfᵀ` for a dense `z`.
    pub fn dense_mul_transpose_add(&self, z: &Mat<f64>, out: &mut Mat<f64>, alpha: f64) {
        debug_assert_eq!(z.ncols(), self.cols);
        debug_assert_eq!(out.ncols(), self.rows);
        debug_assert_eq!(out.nrows(), z.nrows());
        for &(r, c, v) in &self.entries {
            let scale = alpha * v;
            let zc = z.col(c).try_as_col_major().expect("contiguous column").as_slice();
            let oc = out.col_mut(r).try_as_col_major_mut().expect("contiguous column").as_slice_mut();
            for (o, &x) in oc.iter_mut().zip(zc) {
                *o += scale * x;
            }
        }
    }

    pub fn mul_dense(&self, z: &Mat<f64>) -> Mat<f64> {
        let mut out = Mat::zeros(self.rows, z.ncols());
        self.mul_dense_add(z, &mut out, 1.0);
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut out = Mat::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            out[(r, c)] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_eq(a: &Mat<f64>, b: &Mat<f64>) -> bool {
        a.nrows() == b.nrows()
            && a.ncols() == b.ncols()
            && (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| (a[(i, j)] - b[(i, j)]).abs() < 1e-14))
    }

    fn sample() -> SparseMatrix {
        SparseMatrix::from_triplets(3, 4, vec![(0, 1, 2.0), (2, 3, -1.0), (1, 0, 0.5), (0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn compaction_sums_duplicates() {
        let a = sample();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(2, 2), 0.0);
        let cancel = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, -1.0)]).unwrap();
        assert!(cancel.is_zero());
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn products_agree_with_dense() {
        let a = sample();
        let b = SparseMatrix::from_triplets(4, 2, vec![(1, 0, 1.5), (3, 1, 2.0), (0, 1, -1.0)]).unwrap();
        let ab = a.matmul(&b).unwrap();
        assert!(dense_eq(&ab.to_dense(), &(a.to_dense() * b.to_dense())));
        assert!(a.matmul(&a).is_err());

        let z = Mat::from_fn(4, 3, |i, j| (i * 3 + j) as f64 - 4.0);
        assert!(dense_eq(&a.mul_dense(&z), &(a.to_dense() * &z)));

        let w = Mat::from_fn(5, 4, |i, j| (i + 2 * j) as f64 * 0.25);
        let mut out = Mat::zeros(5, 3);
        a.dense_mul_transpose_add(&w, &mut out, 2.0);
        let expected = (&w * a.to_dense().transpose()) * faer::Scale(2.0);
        assert!(dense_eq(&out, &expected));

        let x = [1.0, -2.0, 0.5, 3.0];
        let y = a.mul_vec(&x);
        assert_eq!(y, vec![-6.0, 0.5, -3.0]);
        assert!(dense_eq(&a.transpose().to_dense(), &a.to_dense().transpose().to_owned()));
    }
}
