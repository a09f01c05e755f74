//! FastICA with the logcosh contrast and symmetric decorrelation.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{center_rows, column_mean, sym_eigen_desc};

#[derive(Debug, Clone)]
pub struct IcaConfig {
    pub max_iter: usize,
    /// Convergence threshold on the largest absolute change of any unmixing
    /// entry, after aligning row signs.
    pub tol: f64,
    pub seed: u64,
}

impl Default for IcaConfig {
    fn default() -> Self {
        IcaConfig {
            max_iter: 200,
            tol: 1e-5,
            seed: 0,
        }
    }
}

/// Fitted ICA transform: `unmixing * whitening * (x - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    pub mean: DVector<f64>,
    pub whitening: DMatrix<f64>,
    pub unmixing: DMatrix<f64>,
    pub iterations: usize,
}

impl IcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn components(&self) -> DMatrix<f64> {
        &self.unmixing * &self.whitening
    }

    pub fn transform(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.unmixing * (&self.whitening * (x - &self.mean))
    }

    /// Transforms every row of a sample matrix.
    pub fn transform_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        center_rows(x, &self.mean) * self.components().transpose()
    }
}

// W <- (W W^T)^{-1/2} W
fn sym_decorrelation(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(&(w * w.transpose()));
    let inv = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.max(1e-300).sqrt()));
    &vecs * inv * vecs.transpose() * w
}

fn max_aligned_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, b) in new.row_iter().zip(old.row_iter()) {
        let sign = if a.dot(&b) < 0.0 { -1.0 } else { 1.0 };
        let change = (a * sign - b).abs().max();
        worst = worst.max(change);
    }
    worst
}

/// Fits FastICA on row samples, producing as many components as input
/// dimensions.
pub fn fit_ica(x: &DMatrix<f64>, config: &IcaConfig) -> Result<IcaModel> {
    let (n, d) = x.shape();
    if d == 0 || n < 2 * d {
        return Err(Error::contract(format!(
            "ICA needs at least 2*D = {} samples, got {n}",
            2 * d
        )));
    }
    let mean = column_mean(x);
    let xc = center_rows(x, &mean);
    let mut cov = xc.transpose() * &xc / n as f64;

    let (mut vals, mut vecs) = sym_eigen_desc(&cov);
    let top = vals[0].max(0.0);
    if !(vals[d - 1] > top * 1e-10) {
        warn!(
            "ICA: covariance is rank deficient (smallest eigenvalue {:e}); adding 1e-8 diagonal jitter",
            vals[d - 1]
        );
        for i in 0..d {
            cov[(i, i)] += 1e-8;
        }
        (vals, vecs) = sym_eigen_desc(&cov);
    }
    let whitening = DMatrix::from_diagonal(&vals.map(|v| 1.0 / v.max(1e-300).sqrt())) * vecs.transpose();
    let z = &xc * whitening.transpose();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let init = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let mut w = sym_decorrelation(&init);

    let mut iterations = 0;
    for _ in 0..config.max_iter {
        iterations += 1;
        let y = &z * w.transpose();
        let g = y.map(f64::tanh);
        let g_prime_mean = DVector::from_iterator(
            d,
            g.column_iter().map(|c| c.iter().map(|t| 1.0 - t * t).sum::<f64>() / n as f64),
        );
        let mut update = g.transpose() * &z / n as f64;
        for i in 0..d {
            let scaled = w.row(i) * g_prime_mean[i];
            let mut row = update.row_mut(i);
            row -= scaled;
        }
        let w_new = sym_decorrelation(&update);
        let change = max_aligned_change(&w_new, &w);
        w = w_new;
        if change < config.tol {
            break;
        }
    }

    Ok(IcaModel {
        mean,
        whitening,
        unmixing: w,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn uniform_sources(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s3 = 3f64.sqrt();
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-s3..s3))
    }

    fn excess_kurtosis(v: &[f64]) -> f64 {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n / (var * var) - 3.0
    }

    #[test]
    fn white_independent_data_is_a_fixed_point() {
        let x = uniform_sources(4000, 3, 1);
        let model = fit_ica(&x, &IcaConfig::default()).unwrap();
        let c = model.components();
        // every row has one dominant entry of magnitude ~1
        let mut used = [false; 3];
        for row in c.row_iter() {
            let (idx, val) = row.iter().enumerate().fold((0, 0.0_f64), |acc, (j, v)| {
                if v.abs() > acc.1 {
                    (j, v.abs())
                } else {
                    acc
                }
            });
            assert!((val - 1.0).abs() < 0.1, "{c}");
            assert!(!used[idx]);
            used[idx] = true;
            let off: f64 = row.iter().enumerate().filter(|(j, _)| *j != idx).map(|(_, v)| v.abs()).sum();
            assert!(off < 0.15, "{c}");
        }
    }

    #[test]
    fn unmixes_two_uniform_sources() {
        let s = uniform_sources(5000, 2, 7);
        let mix = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.4, 1.2]);
        let x = &s * mix.transpose();
        let model = fit_ica(&x, &IcaConfig::default()).unwrap();
        let rec = model.transform_rows(&x);
        for j in 0..2 {
            let src: Vec<f64> = s.column(j).iter().cloned().collect();
            let target = excess_kurtosis(&src).abs();
            let got: Vec<f64> = rec.column(j).iter().cloned().collect();
            let k = excess_kurtosis(&got).abs();
            assert!((k - target).abs() / target < 0.1, "kurtosis {k} vs {target}");
        }
    }

    #[test]
    fn transformed_data_is_white() {
        let s = uniform_sources(3000, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mix = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
        let x = &s * mix.transpose();
        let model = fit_ica(&x, &IcaConfig::default()).unwrap();
        let y = model.transform_rows(&x);
        let cov = y.transpose() * &y / y.nrows() as f64;
        assert!((cov - DMatrix::identity(4, 4)).abs().max() < 0.05);
    }

    #[test]
    fn too_few_samples() {
        let x = uniform_sources(5, 3, 1);
        assert!(matches!(fit_ica(&x, &IcaConfig::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn rank_deficient_gets_jitter() {
        let mut x = uniform_sources(200, 3, 2);
        for i in 0..200 {
            x[(i, 2)] = x[(i, 0)];
        }
        let model = fit_ica(&x, &IcaConfig::default()).unwrap();
        assert!(model.components().iter().all(|v| v.is_finite()));
    }
}
