//! Small dense symmetric eigenproblems (row-major `n x n` slices).

use faer::{Mat, Side};

use crate::error::{Error, Result};

fn to_mat(a: &[f64], n: usize) -> Mat<f64> {
    Mat::from_fn(n, n, |i, j| a[i * n + j])
}

fn lower_factor(b: &[f64], n: usize) -> Result<Mat<f64>> {
    let l = to_mat(b, n)
        .llt(Side::Lower)
        .map_err(|e| Error::Eigen(format!("Gram matrix is not positive definite: {e:?}")))?;
    Ok(l.L().to_owned())
}

/// Eigenpairs of a symmetric matrix, eigenvalues in non-increasing order.
/// Columns are returned as separate vectors.
fn eigen_desc(c: &Mat<f64>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = c.nrows();
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    let u = evd.U();
    // eigenvalues come ascending; the stable reversal keeps ties in a fixed order
    let values = (0..n).rev().map(|k| s[k]).collect();
    let vectors = (0..n).rev().map(|k| (0..n).map(|i| u[(i, k)]).collect()).collect();
    Ok((values, vectors))
}

/// Flips `v` so that its first entry of non-negligible size is positive.
pub fn fix_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Generalized problem `A x = mu B x` with `B` SPD. Eigenvectors are
/// `B`-orthonormal; eigenvalues non-increasing.
pub fn generalized_eigen(a: &[f64], b: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if n == 0 {
        return Ok((vec![], vec![]));
    }
    let l = lower_factor(b, n)?;
    // C = L^{-1} A L^{-T}
    let mut c = to_mat(a, n);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), c.as_mut(), faer::Par::Seq);
    let mut ct = c.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), ct.as_mut(), faer::Par::Seq);
    let (values, ws) = eigen_desc(&ct)?;
    let vectors = ws
        .into_iter()
        .map(|w| {
            let mut x = Mat::from_fn(n, 1, |i, _| w[i]);
            faer::linalg::triangular_solve::solve_upper_triangular_in_place(
                l.transpose(),
                x.as_mut(),
                faer::Par::Seq,
            );
            (0..n).map(|i| x[(i, 0)]).collect()
        })
        .collect();
    Ok((values, vectors))
}

/// Eigenpairs of `K G` with `K` symmetric PSD and `G` SPD: solves
/// `K G v = mu v`, returning `G`-orthonormal `v` and non-increasing `mu`.
pub fn product_eigen(k: &[f64], g: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if n == 0 {
        return Ok((vec![], vec![]));
    }
    let l = lower_factor(g, n)?;
    let m = l.transpose() * to_mat(k, n) * &l;
    let (values, ws) = eigen_desc(&m)?;
    let vectors = ws
        .into_iter()
        .map(|w| {
            let mut x = Mat::from_fn(n, 1, |i, _| w[i]);
            faer::linalg::triangular_solve::solve_upper_triangular_in_place(
                l.transpose(),
                x.as_mut(),
                faer::Par::Seq,
            );
            (0..n).map(|i| x[(i, 0)]).collect()
        })
        .collect();
    Ok((values, vectors))
}

/// `x^T A y` for a row-major `n x n` matrix.
pub fn quad(a: &[f64], x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    (0..n)
        .map(|i| x[i] * (0..n).map(|j| a[i * n + j] * y[j]).sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_diagonal() {
        let a = [2.0, 0.0, 0.0, 3.0];
        let b = [1.0, 0.0, 0.0, 4.0];
        let (mu, x) = generalized_eigen(&a, &b, 2).unwrap();
        assert!((mu[0] - 2.0).abs() < 1e-14 && (mu[1] - 0.75).abs() < 1e-14);
        assert!((quad(&b, &x[1], &x[1]) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn product_matches_generalized() {
        // K G v = mu v  <=>  G K G (G^{-1}... ) checked through the G-inner products
        let k = [2.0, 1.0, 1.0, 2.0];
        let g = [3.0, 1.0, 1.0, 2.0];
        let (mu, v) = product_eigen(&k, &g, 2).unwrap();
        for (m, v) in mu.iter().zip(&v) {
            let gv = [g[0] * v[0] + g[1] * v[1], g[2] * v[0] + g[3] * v[1]];
            let kgv = [k[0] * gv[0] + k[1] * gv[1], k[2] * gv[0] + k[3] * gv[1]];
            assert!((kgv[0] - m * v[0]).abs() < 1e-12 && (kgv[1] - m * v[1]).abs() < 1e-12);
            assert!((quad(&g, v, v) - 1.0).abs() < 1e-12);
        }
        assert!(mu[0] >= mu[1]);
    }
}
