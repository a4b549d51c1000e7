use super::Matrix;
use crate::error::{Result, SeqMixError};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order with matching eigenvectors as
/// columns of the returned matrix.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if a.rows() != a.cols() {
        return Err(SeqMixError::Shape(format!("sym_eigen on {}x{}", a.rows(), a.cols())));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::zeros(n, n);
    for i in 0..n {
        v.set(i, i, 1.0);
    }
    let scale = a.frobenius_sq().sqrt().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.at(p, q) * m.at(p, q);
            }
        }
        if off.sqrt() <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.at(p, p);
                let aqq = m.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.at(k, p);
                    let vkq = v.at(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vecs = Matrix::zeros(n, n);
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            vecs.set(r, new_c, v.at(r, old_c));
        }
    }
    Ok((vals, vecs))
}

/// The k largest singular values of `m`, descending.
///
/// Uses the eigenvalues of the smaller Gram matrix; tiny negative
/// eigenvalues are clamped to zero before the square root.
pub fn svd_top_k(m: &Matrix, k: usize) -> Result<Vec<f64>> {
    let min_dim = m.rows().min(m.cols());
    if k > min_dim {
        return Err(SeqMixError::Param(format!(
            "k={} exceeds min dimension {} of {}x{} matrix",
            k,
            min_dim,
            m.rows(),
            m.cols()
        )));
    }
    let gram = if m.rows() >= m.cols() { m.gram() } else { m.gram_t() };
    let (eigvals, _) = sym_eigen(&gram)?;
    Ok(eigvals.into_iter().take(k).map(|e| e.max(0.0).sqrt()).collect())
}

/// Leading `r` eigenvectors of m·mᵀ, i.e. an orthonormal basis of the rank-r
/// dominant left singular subspace. Columns of the result.
pub fn left_singular_basis(m: &Matrix, r: usize) -> Result<Matrix> {
    let h = m.rows();
    let r = r.min(h);
    let (_, vecs) = sym_eigen(&m.gram_t())?;
    let mut basis = Matrix::zeros(h, r);
    for c in 0..r {
        for row in 0..h {
            basis.set(row, c, vecs.at(row, c));
        }
    }
    Ok(basis)
}
