//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as columns. Sweeps stop once the off-diagonal Frobenius norm
/// falls below `1e-12` times the matrix norm.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "symmetric_eigen needs a square matrix");
    let mut m = (a + a.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = m.norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-12 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetric_eigen(a).0.last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetric_eigen(a).0.first().copied().unwrap_or(f64::INFINITY)
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    symmetric_eigen(a).0.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let inv = a.clone().lu().try_inverse().ok_or(Error::Singular(context))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(context))
    }
}

pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let x = a.clone().lu().solve(b).ok_or(Error::Singular(context))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Singular(context))
    }
}

/// `g`-inner product `aᵀ g b`.
pub fn inner(g: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.transpose() * g * b)[(0, 0)]
}

/// Modified Gram–Schmidt in the inner product `g`. Vectors whose residual
/// norm falls below `tol` are dropped.
pub fn gram_schmidt(g: &DMatrix<f64>, vectors: &[DVector<f64>], tol: f64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for e in &out {
            let c = inner(g, e, &w);
            w -= e * c;
        }
        let norm = inner(g, &w, &w).max(0.0).sqrt();
        if norm > tol {
            out.push(w / norm);
        }
    }
    out
}

/// Matrix of `σ = dx ∧ dp` on `(δx, δp)` pairs: `[[0, I], [−I, 0]]`.
pub fn symplectic_j(n: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        j[(i, n + i)] = 1.0;
        j[(n + i, i)] = -1.0;
    }
    j
}

/// `σ(a, b) = aᵀ J b`.
pub fn sigma(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() / 2;
    (0..n).map(|i| a[i] * b[n + i] - a[n + i] * b[i]).sum()
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest entry of `|a − aᵀ|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    (a - a.transpose()).amax()
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.amax()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_diagonalizes() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, -2.0, 1.0, 2.0, 0.5, -2.0, 0.5, 3.0]);
        let (vals, vecs) = symmetric_eigen(&a);
        let na = a.clone().symmetric_eigen();
        let mut reference: Vec<f64> = na.eigenvalues.iter().copied().collect();
        reference.sort_by(f64::total_cmp);
        for (x, y) in vals.iter().zip(&reference) {
            assert!((x - y).abs() < 1e-12);
        }
        let recon = &vecs * DMatrix::from_diagonal(&DVector::from_vec(vals)) * vecs.transpose();
        assert!((recon - a).amax() < 1e-12);
    }

    #[test]
    fn jacobi_handles_diagonal_and_empty() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0]));
        assert_eq!(symmetric_eigen(&a).0, vec![-1.0, 3.0]);
        let e = DMatrix::<f64>::zeros(0, 0);
        assert!(symmetric_eigen(&e).0.is_empty());
    }

    #[test]
    fn gram_schmidt_orthonormal_in_metric() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let vs = [DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![1.0, 1.0])];
        let e = gram_schmidt(&g, &vs, 1e-12);
        assert_eq!(e.len(), 2);
        assert!((inner(&g, &e[0], &e[0]) - 1.0).abs() < 1e-14);
        assert!(inner(&g, &e[0], &e[1]).abs() < 1e-14);
    }

    #[test]
    fn sigma_matches_matrix() {
        let a = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let b = DVector::from_vec(vec![-1.0, 0.5, 2.0, 1.0]);
        let j = symplectic_j(2);
        assert!((sigma(&a, &b) - (a.transpose() * j * b)[(0, 0)]).abs() < 1e-15);
    }
}
