//! Small dense linear-algebra helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Orthonormal basis (as columns) of the orthogonal complement of `span(dirs)`.
pub fn complement_basis(dim: usize, dirs: &[DVector<f64>]) -> DMatrix<f64> {
    if dirs.is_empty() {
        return DMatrix::identity(dim, dim);
    }
    let mut proj = DMatrix::<f64>::identity(dim, dim);
    let u = DMatrix::from_columns(dirs);
    // Orthonormalise the spanning set first.
    let svd = u.svd(true, false);
    let uu = svd.u.expect("left singular vectors requested");
    for (k, sv) in svd.singular_values.iter().enumerate() {
        if *sv > 1e-10 {
            let c = uu.column(k);
            proj -= c * c.transpose();
        }
    }
    let eig = SymmetricEigen::new(proj);
    let cols: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .filter(|(v, _)| **v > 0.5)
        .map(|(_, c)| c.into_owned())
        .collect();
    if cols.is_empty() {
        return DMatrix::zeros(dim, 0);
    }
    DMatrix::from_columns(&cols)
}

/// Eigen-decomposition of a symmetric matrix restricted to the complement of
/// `dirs`. Eigenvalues are sorted in decreasing order and eigenvectors are
/// returned in the ambient space, with unit norm.
pub fn restricted_eigen(m: &DMatrix<f64>, dirs: &[DVector<f64>]) -> Result<(Vec<f64>, Vec<DVector<f64>>)> {
    if !m.is_square() {
        return Err(Error::param("restricted_eigen needs a square matrix"));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("matrix has non-finite entries"));
    }
    let basis = complement_basis(m.nrows(), dirs);
    if basis.ncols() == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let sym = (m + m.transpose()) * 0.5;
    let reduced = basis.transpose() * sym * &basis;
    let eig = SymmetricEigen::new(reduced);
    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(v, c)| {
            let full = &basis * c;
            let n = full.norm();
            (*v, full / n)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(pairs.into_iter().unzip())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}
