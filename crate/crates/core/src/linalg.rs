//! Small dense helpers on top of faer.

use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted
/// nonincreasing with matching eigenvector columns.
pub fn sym_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape(format!("eigendecomposition of a {}x{} matrix", n, m.ncols())));
    }
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinAlg(format!("symmetric eigensolver: {e:?}")))?;
    let s = evd.S();
    let u = evd.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let values = order.iter().map(|&i| s[i]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| u[(r, order[c])]);
    Ok((values, vectors))
}

/// Thin SVD `m = U diag(s) Vᵀ`, singular values nonincreasing.
pub fn thin_svd(m: &Mat<f64>) -> Result<(Mat<f64>, Vec<f64>, Mat<f64>)> {
    let svd = m.thin_svd().map_err(|e| Error::LinAlg(format!("SVD: {e:?}")))?;
    let k = svd.S().dim();
    let s = svd.S();
    let mut order: Vec<usize> = (0..k).collect();
    // faer already returns them sorted; the stable sort keeps tie order
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let sv = order.iter().map(|&i| s[i]).collect();
    let u = Mat::from_fn(m.nrows(), k, |r, c| svd.U()[(r, order[c])]);
    let v = Mat::from_fn(m.ncols(), k, |r, c| svd.V()[(r, order[c])]);
    Ok((u, sv, v))
}

pub fn symmetrize(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn frobenius(m: &Mat<f64>) -> f64 {
    m.norm_l2()
}

pub fn max_abs(m: &Mat<f64>) -> f64 {
    let mut out = 0.0f64;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out = out.max(m[(i, j)].abs());
        }
    }
    out
}

/// Largest absolute asymmetry `|m_ij − m_ji|`.
pub fn asymmetry(m: &Mat<f64>) -> f64 {
    let n = m.nrows();
    let mut out = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            out = out.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    out
}

pub fn trace(m: &Mat<f64>) -> f64 {
    (0..m.nrows().min(m.ncols())).map(|i| m[(i, i)]).sum()
}

pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Mat<f64> {
    assert_eq!(data.len(), rows * cols);
    Mat::from_fn(rows, cols, |i, j| data[i * cols + j])
}

pub fn to_rows(m: &Mat<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn column(m: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

pub fn mat_vec(m: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.ncols(), x.len());
    let mut out = vec![0.0; m.nrows()];
    for (j, &xj) in x.iter().enumerate() {
        if xj == 0.0 {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o += m[(i, j)] * xj;
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower factor `C` with `C Cᵀ = cov`. Falls back to the eigen-factor with
/// negative eigenvalues clipped; the flag reports the fallback.
pub fn gaussian_factor(cov: &Mat<f64>) -> Result<(Mat<f64>, bool)> {
    if let Ok(llt) = cov.llt(Side::Lower) {
        return Ok((llt.L().to_owned(), false));
    }
    let (vals, vecs) = sym_eigen(cov)?;
    let n = cov.nrows();
    Ok((Mat::from_fn(n, n, |i, j| vecs[(i, j)] * vals[j].max(0.0).sqrt()), true))
}

/// Solves `m x = b` for symmetric positive semidefinite `m` after Jacobi
/// scaling. Uses Cholesky, or an eigen pseudo-inverse when that fails.
pub fn solve_psd(m: &Mat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = m.nrows();
    if m.ncols() != n || b.len() != n {
        return Err(Error::Shape(format!("solve with a {}x{} matrix and {} right-hand entries", n, m.ncols(), b.len())));
    }
    let scale: Vec<f64> = (0..n).map(|i| if m[(i, i)] > 0.0 { 1.0 / m[(i, i)].sqrt() } else { 1.0 }).collect();
    let scaled = Mat::from_fn(n, n, |i, j| m[(i, j)] * scale[i] * scale[j]);
    let rhs = Mat::from_fn(n, 1, |i, _| b[i] * scale[i]);
    let y = match scaled.llt(Side::Lower) {
        Ok(llt) => {
            use faer::linalg::solvers::Solve;
            let mut x = rhs.clone();
            llt.solve_in_place(&mut x);
            column(&x, 0)
        }
        Err(_) => {
            log::debug!("Cholesky failed on a {n}x{n} system, using the pseudo-inverse");
            let (vals, vecs) = sym_eigen(&scaled)?;
            let cut = vals.first().copied().unwrap_or(0.0).max(0.0) * 1e-14;
            let coeffs = vecs.transpose() * &rhs;
            let weighted = Mat::from_fn(n, 1, |i, _| if vals[i] > cut { coeffs[(i, 0)] / vals[i] } else { 0.0 });
            column(&(&vecs * weighted), 0)
        }
    };
    Ok(y.iter().zip(&scale).map(|(y, s)| y * s).collect())
}

/// `exp(t·m)` for a small dense matrix, by scaling and squaring a Taylor
/// series.
pub fn expm(m: &Mat<f64>, t: f64) -> Mat<f64> {
    let n = m.nrows();
    let norm = frobenius(m) * t.abs();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = t / f64::from(2u32.pow(squarings));
    let a = m * faer::Scale(scale);
    let mut result = Mat::<f64>::identity(n, n);
    let mut term = Mat::<f64>::identity(n, n);
    for k in 1..=30 {
        term = (&term * &a) * faer::Scale(1.0 / k as f64);
        result += &term;
        if frobenius(&term) <= 1e-18 * frobenius(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_descending() {
        let m = from_rows(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, -1.0]);
        let (vals, vecs) = sym_eigen(&m).unwrap();
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 5.0).abs() < 1e-14 && (vals[2] + 1.0).abs() < 1e-14);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn expm_of_nilpotent_is_polynomial() {
        let mut n = Mat::<f64>::zeros(3, 3);
        n[(1, 0)] = 1.0;
        n[(2, 1)] = 1.0;
        let e = expm(&n, 2.0);
        assert!((e[(1, 0)] - 2.0).abs() < 1e-14);
        assert!((e[(2, 0)] - 2.0).abs() < 1e-14);
        assert!((e[(0, 0)] - 1.0).abs() < 1e-14);

        let mut r = Mat::<f64>::zeros(2, 2);
        r[(0, 1)] = -3.0;
        r[(1, 0)] = 3.0;
        let e = expm(&r, 1.0);
        assert!((e[(0, 0)] - 3.0f64.cos()).abs() < 1e-12);
        assert!((e[(1, 0)] - 3.0f64.sin()).abs() < 1e-12);
    }

    #[test]
    fn psd_solve_and_factor() {
        let m = from_rows(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let x = solve_psd(&m, &[1.0, 2.0, 3.0]).unwrap();
        let back = mat_vec(&m, &x);
        for (b, e) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((b - e).abs() < 1e-13);
        }
        // singular: minimum-norm solution on the range
        let s = from_rows(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let x = solve_psd(&s, &[2.0, 2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);

        let (c, clipped) = gaussian_factor(&m).unwrap();
        assert!(!clipped);
        assert!(frobenius(&(&c * c.transpose() - &m)) < 1e-13);
        let (c, clipped) = gaussian_factor(&s).unwrap();
        assert!(clipped);
        assert!(frobenius(&(&c * c.transpose() - &s)) < 1e-13);
    }

    #[test]
    fn svd_reconstructs() {
        let m = from_rows(3, 2, &[1.0, 2.0, 0.0, 1.0, -1.0, 3.0]);
        let (u, s, v) = thin_svd(&m).unwrap();
        assert!(s[0] >= s[1]);
        let rec = &u * Mat::from_fn(2, 2, |i, j| if i == j { s[i] } else { 0.0 }) * v.transpose();
        assert!(frobenius(&(rec - &m)) < 1e-13);
    }
}
