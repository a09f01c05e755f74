//! Small dense linear-algebra helpers shared by ICA, PCA and CCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted descending.
///
/// Eigenvector signs are canonicalized (largest-magnitude entry positive) so
/// results do not depend on solver internals.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        canonical_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

pub(crate) fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// `m^{-1/2}` for a symmetric positive definite matrix.
///
/// Fails when the smallest eigenvalue is not positive relative to the largest.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen_desc(m);
    let top = values.iter().cloned().fold(0.0_f64, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > top * 1e-13) || !(min > 0.0) {
        return Err(Error::Numeric(format!(
            "matrix is singular or indefinite (eigenvalues in [{min:e}, {top:e}])"
        )));
    }
    let scale = DMatrix::from_diagonal(&values.map(|v| 1.0 / v.sqrt()));
    Ok(&vectors * scale * vectors.transpose())
}

/// Column means of a row-sample matrix.
pub fn column_mean(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    let mut mean = DVector::zeros(x.ncols());
    for row in x.row_iter() {
        mean += row.transpose();
    }
    mean / n
}

/// Subtracts `mean` from every row.
pub fn center_rows(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        row -= mean.transpose();
    }
    out
}

/// Stacks equally-sized vectors as the rows of a matrix.
pub fn rows_to_matrix(rows: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::format("rows have inconsistent dimensions"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn l2_normalize(v: &DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        v.clone()
    }
}

pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let back = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert!((back - m).abs().max() < 1e-12);
    }

    #[test]
    fn inv_sqrt_identity() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = inv_sqrt_spd(&m).unwrap();
        let prod = &r * &m * &r;
        assert!((prod - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(inv_sqrt_spd(&singular).is_err());
    }
}
