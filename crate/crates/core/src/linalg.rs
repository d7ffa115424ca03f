//! Small dense helpers shared by the modules. Everything here works on
//! `nalgebra::DMatrix<f64>`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Row vectorization: rows of `m` concatenated into one vector.
pub fn row_vec(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter().copied());
    }
    out
}

/// Builds a matrix from row-major data.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Matrix> {
    if data.len() != rows * cols {
        return Err(Error::dim(format!(
            "expected {} entries for a {rows}x{cols} matrix, got {}",
            rows * cols,
            data.len()
        )));
    }
    Ok(Matrix::from_row_slice(rows, cols, data))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// `P ⊗ I_k`.
pub fn kron_identity(p: &Matrix, k: usize) -> Matrix {
    let (r, c) = p.shape();
    let mut out = Matrix::zeros(r * k, c * k);
    for i in 0..r {
        for j in 0..c {
            let v = p[(i, j)];
            if v != 0.0 {
                for d in 0..k {
                    out[(i * k + d, j * k + d)] = v;
                }
            }
        }
    }
    out
}

/// Symmetric eigendecomposition `(values, vectors)`, columns of `vectors`
/// matching `values` (unordered).
///
/// Rows and columns that are exactly zero are split off first; they carry
/// exact zero eigenvalues and are a common source of breakdown in the
/// shifted QR iteration. If the QR iteration still returns non-finite
/// values, cyclic Jacobi rotations are used instead.
pub fn sym_eigen(m: &Matrix) -> (Vector, Matrix) {
    let s = symmetrize(m);
    let w = s.nrows();
    let active: Vec<usize> = (0..w)
        .filter(|&i| s.row(i).iter().any(|&v| v != 0.0))
        .collect();
    if active.is_empty() {
        return (Vector::zeros(w), Matrix::identity(w, w));
    }
    let sub = s.select_rows(&active).select_columns(&active);

    let eig = SymmetricEigen::new(sub.clone());
    let (vals, vecs) =
        if all_finite(&eig.eigenvectors) && eig.eigenvalues.iter().all(|v| v.is_finite()) {
            (eig.eigenvalues, eig.eigenvectors)
        } else {
            jacobi_eigen(sub)
        };

    let mut values = Vector::zeros(w);
    let mut vectors = Matrix::zeros(w, w);
    for c in 0..active.len() {
        values[c] = vals[c];
        for (r, &j) in active.iter().enumerate() {
            vectors[(j, c)] = vecs[(r, c)];
        }
    }
    let inactive = (0..w).filter(|i| !active.contains(i));
    for (c, i) in (active.len()..w).zip(inactive) {
        vectors[(i, c)] = 1.0;
    }
    (values, vectors)
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix.
fn jacobi_eigen(mut a: Matrix) -> (Vector, Matrix) {
    let n = a.nrows();
    let mut v = Matrix::identity(n, n);
    let scale = a.norm();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diagonal(), v)
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = sym_eigen(m).0.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue of a symmetric matrix; NaN if it cannot be computed.
pub fn min_sym_eigenvalue(m: &Matrix) -> f64 {
    let ev = sym_eigenvalues(m);
    if ev.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    ev.first().copied().unwrap_or(f64::INFINITY)
}

pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    eigenvalues(m).map(|ev| ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Largest real part over the eigenvalues of `m`.
pub fn spectral_abscissa(m: &Matrix) -> Result<f64> {
    eigenvalues(m).map(|ev| ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
}

fn eigenvalues(m: &Matrix) -> Result<Vec<nalgebra::Complex<f64>>> {
    if !m.is_square() {
        return Err(Error::dim("eigenvalues of a non-square matrix"));
    }
    if !all_finite(m) {
        return Err(Error::Numeric(
            "non-finite matrix passed to eigenvalue solver".into(),
        ));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

pub fn rel_diff(a: &Matrix, b: &Matrix) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_vec_concatenates_rows() {
        let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(row_vec(&m), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn kron_identity_places_scaled_blocks() {
        let p = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron_identity(&p, 2);
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(3, 1)], 3.0);
        assert_eq!(k[(0, 1)], 0.0);
    }

    #[test]
    fn spectral_radius_of_rotation_is_one() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert!((spectral_radius(&m).unwrap() - 1.0).abs() < 1e-14);
        assert!(spectral_abscissa(&m).unwrap().abs() < 1e-14);
    }

    fn reconstruct(values: &Vector, vectors: &Matrix) -> Matrix {
        vectors * Matrix::from_diagonal(values) * vectors.transpose()
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = Matrix::from_fn(5, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let a = &a + a.transpose();
        let (vals, vecs) = jacobi_eigen(a.clone());
        assert!((reconstruct(&vals, &vecs) - &a).norm() < 1e-12 * a.norm());
        assert!((vecs.transpose() * &vecs - Matrix::identity(5, 5)).norm() < 1e-12);
    }

    #[test]
    fn zero_rows_are_split_off() {
        let mut a = Matrix::zeros(4, 4);
        a[(0, 0)] = 2.0;
        a[(0, 2)] = 1.0;
        a[(2, 0)] = 1.0;
        a[(2, 2)] = 3.0;
        let (vals, vecs) = sym_eigen(&a);
        assert!((reconstruct(&vals, &vecs) - &a).norm() < 1e-14);
        assert_eq!(vals.iter().filter(|&&v| v == 0.0).count(), 2);
        assert!((vecs.transpose() * &vecs - Matrix::identity(4, 4)).norm() < 1e-14);
    }
}
