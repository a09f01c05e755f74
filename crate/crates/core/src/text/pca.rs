use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::linalg::{canonical_sign, center_rows, column_mean};

/// Mean-centered projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `out_dim x in_dim`, orthonormal rows ordered by decreasing variance.
    pub components: DMatrix<f64>,
    pub explained_variance: DVector<f64>,
}

impl PcaModel {
    pub fn out_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.components.ncols()
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.in_dim() {
            return Err(Error::contract(format!(
                "PCA expects dimension {}, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        Ok(&self.components * (x - &self.mean))
    }

    pub fn reconstruct(&self, y: &DVector<f64>) -> DVector<f64> {
        self.components.transpose() * y + &self.mean
    }
}

/// Fits PCA on row samples.
pub fn fit_pca(x: &DMatrix<f64>, out_dim: usize) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if out_dim == 0 || out_dim > n.min(d) {
        return Err(Error::contract(format!(
            "PCA output dimension {out_dim} must be in 1..={}",
            n.min(d)
        )));
    }
    let mean = column_mean(x);
    let xc = center_rows(x, &mean);
    let svd = SVD::new(xc, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not return right singular vectors".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]).then(a.cmp(&b)));

    let mut components = DMatrix::zeros(out_dim, d);
    let mut explained = DVector::zeros(out_dim);
    let denom = (n.max(2) - 1) as f64;
    for (r, &i) in order.iter().take(out_dim).enumerate() {
        let mut row = v_t.row(i).transpose();
        canonical_sign(&mut row);
        components.set_row(r, &row.transpose());
        explained[r] = sv[i] * sv[i] / denom;
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance: explained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn keeps_largest_axes() {
        let mut x = random(2000, 3, 1);
        for (j, s) in [3f64.sqrt(), 2f64.sqrt(), 1.0].iter().enumerate() {
            x.column_mut(j).scale_mut(*s);
        }
        let m = fit_pca(&x, 2).unwrap();
        assert!(m.components[(0, 0)].abs() > 0.99);
        assert!(m.components[(1, 1)].abs() > 0.99);
    }

    #[test]
    fn projected_covariance_diagonal_and_rows_orthonormal() {
        let x = random(300, 6, 2) * DMatrix::from_fn(6, 6, |i, j| 1.0 / (1.0 + (i + 2 * j) as f64));
        let m = fit_pca(&x, 4).unwrap();
        let gram = &m.components * m.components.transpose();
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-8);
        let y = center_rows(&x, &m.mean) * m.components.transpose();
        let cov = y.transpose() * &y / 299.0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert!(cov[(i, j)].abs() < 1e-8);
                }
            }
            if i > 0 {
                assert!(cov[(i, i)] <= cov[(i - 1, i - 1)]);
            }
        }
    }

    #[test]
    fn full_dim_reconstructs() {
        let x = random(50, 5, 3);
        let m = fit_pca(&x, 5).unwrap();
        for row in x.row_iter() {
            let v = row.transpose();
            let back = m.reconstruct(&m.apply(&v).unwrap());
            assert!((back - v).abs().max() < 1e-9);
        }
    }

    #[test]
    fn out_dim_too_large() {
        let x = random(4, 5, 3);
        assert!(fit_pca(&x, 5).is_err());
        assert!(fit_pca(&x, 0).is_err());
    }
}
