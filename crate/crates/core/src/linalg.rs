//! Small dense complex linear-algebra helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Largest entrywise modulus of `m - mᴴ`.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    if m.ncols() != n {
        return f64::INFINITY;
    }
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Replace `m` by `(m + mᴴ)/2`.
pub fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped to zero.
pub fn psd_projection(m: &CMatrix) -> CMatrix {
    let (values, vectors) = hermitian_eigen(m);
    let clipped = CMatrix::from_diagonal(&CVector::from_iterator(values.len(), values.iter().map(|v| C64::new(v.max(0.0), 0.0))));
    symmetrize(&(&vectors * clipped * vectors.adjoint()))
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted
/// ascending. Column `j` of the returned matrix is the unit eigenvector of
/// eigenvalue `j`.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Ascending eigenvalues of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut values: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Real part of `vᴴ M v`.
pub fn quad_form(m: &CMatrix, v: &CVector) -> f64 {
    (v.adjoint() * m * v)[(0, 0)].re
}

/// `v vᴴ`.
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// Spectral-norm upper bound used to scale residual tolerances.
pub fn frobenius(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn real_trace(m: &CMatrix) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_clips_negative_eigenvalues_only() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = C64::new(2.0, 0.0);
        m[(1, 1)] = C64::new(-1.0, 0.0);
        m[(0, 1)] = C64::new(0.5, 0.5);
        m[(1, 0)] = C64::new(0.5, -0.5);
        let p = psd_projection(&m);
        let values = hermitian_eigenvalues(&p);
        assert!(values[0].abs() < 1e-12);
        assert!((values[1] - hermitian_eigenvalues(&m)[1]).abs() < 1e-12);
        let psd = &m * m.adjoint();
        assert!((psd_projection(&psd) - &psd).norm() < 1e-12);
    }
}
