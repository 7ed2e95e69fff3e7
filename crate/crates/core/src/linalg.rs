//! Thin bridges to nalgebra for the few dense factorizations we need.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub(crate) fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Solve `A x = b` for symmetric positive definite `A`, falling back to LU.
pub(crate) fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let m = to_na(a);
    let rhs = DVector::from_iterator(b.len(), b.iter().cloned());
    let x = match m.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => m.lu().solve(&rhs).ok_or_else(|| Error::Degenerate("singular linear system".into()))?,
    };
    Ok(Array1::from_iter(x.iter().cloned()))
}

/// Eigenpairs of a symmetric matrix, eigenvalues in decreasing order.
/// Column k of the returned matrix is the k-th eigenvector.
pub(crate) fn symmetric_eigen(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let eig = to_na(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let vecs = from_na(&eig.eigenvectors);
    let vectors = Array2::from_shape_fn(vecs.raw_dim(), |(i, k)| vecs[[i, order[k]]]);
    (values, vectors)
}
