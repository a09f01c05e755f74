//! Hybrid Gaussian-Laplacian mixture model.
//!
//! A diagonal mixture in which every (component, dimension) cell is either a
//! Gaussian `N(mu, s^2)` or a Laplacian `Lap(mu, s)`, whichever explains the
//! data assigned to that component better. Fitted by EM; each M-step fits both
//! hypotheses per cell in closed form and keeps the one with the larger
//! weighted log-likelihood, so the data log-likelihood never decreases.

use std::f64::consts::PI;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    Gaussian,
    Laplacian,
}

impl Family {
    /// Log density at `x` for location `mu` and scale `s` (std or diversity).
    #[inline]
    pub fn log_pdf(self, x: f64, mu: f64, s: f64) -> f64 {
        match self {
            Family::Gaussian => {
                let z = (x - mu) / s;
                -0.5 * LN_2PI - s.ln() - 0.5 * z * z
            }
            Family::Laplacian => -(2.0 * s).ln() - (x - mu).abs() / s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HglmmConfig {
    pub k_centers: usize,
    pub max_iter: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
    /// Absolute lower bound on every scale.
    pub scale_floor: f64,
    /// Lower bound on scales as a fraction of each dimension's standard
    /// deviation. Keeps components that sit on a repeated token from
    /// collapsing.
    pub relative_scale_floor: f64,
    pub seed: u64,
}

impl Default for HglmmConfig {
    fn default() -> Self {
        HglmmConfig {
            k_centers: 30,
            max_iter: 100,
            tol: 1e-6,
            scale_floor: 1e-6,
            relative_scale_floor: RELATIVE_FLOOR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HglmmModel {
    pub weights: DVector<f64>,
    /// K x D locations.
    pub locations: DMatrix<f64>,
    /// K x D scales (standard deviation for Gaussian cells, diversity for
    /// Laplacian cells).
    pub scales: DMatrix<f64>,
    /// K x D distribution choice per cell.
    pub families: Vec<Vec<Family>>,
}

/// A fitted model plus the per-iteration log-likelihood trace.
#[derive(Debug, Clone)]
pub struct HglmmFit {
    pub model: HglmmModel,
    pub log_likelihoods: Vec<f64>,
    pub reseeded: usize,
}

impl HglmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.locations.ncols()
    }

    fn component_log_pdf(&self, k: usize, x: &[f64]) -> f64 {
        let fam = &self.families[k];
        x.iter()
            .enumerate()
            .map(|(d, &v)| fam[d].log_pdf(v, self.locations[(k, d)], self.scales[(k, d)]))
            .sum()
    }

    /// Component posteriors for one point and the point's log-likelihood.
    pub fn posteriors(&self, x: &[f64]) -> (DVector<f64>, f64) {
        let k = self.k();
        let logs: Vec<f64> = (0..k)
            .map(|c| self.weights[c].ln() + self.component_log_pdf(c, x))
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        let log_p = max + sum.ln();
        let post = DVector::from_iterator(k, logs.iter().map(|l| (l - log_p).exp()));
        (post, log_p)
    }

    pub fn log_likelihood(&self, x: &DMatrix<f64>) -> f64 {
        let mut buf = vec![0.0; x.ncols()];
        let mut total = 0.0;
        for row in x.row_iter() {
            buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
            total += self.posteriors(&buf).1;
        }
        total
    }

    /// Draws one point from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = self.k() - 1;
        for c in 0..self.k() {
            acc += self.weights[c];
            if u < acc {
                comp = c;
                break;
            }
        }
        DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|d| {
                let (mu, s) = (self.locations[(comp, d)], self.scales[(comp, d)]);
                match self.families[comp][d] {
                    Family::Gaussian => {
                        let z: f64 = StandardNormal.sample(rng);
                        mu + s * z
                    }
                    Family::Laplacian => {
                        let e: f64 = Exp1.sample(rng);
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        mu + sign * s * e
                    }
                }
            }),
        )
    }

    pub fn validate(&self, scale_floor: f64) -> Result<()> {
        let sum: f64 = self.weights.iter().sum();
        if self.k() == 0 || (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(Error::format("mixture weights are not a probability vector"));
        }
        if self.scales.iter().any(|s| !(*s >= scale_floor)) {
            return Err(Error::format("mixture scale below floor"));
        }
        Ok(())
    }
}

fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| (x.row(i) - x.row(chosen[0])).norm_squared())
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((x.row(i) - x.row(next)).norm_squared());
        }
    }
    chosen
}

fn global_std(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_iterator(
        x.ncols(),
        x.column_iter().map(|c| {
            let m = c.sum() / n;
            (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
        }),
    )
}

struct EStep {
    resp: DMatrix<f64>,
    point_ll: Vec<f64>,
    total: f64,
}

fn e_step(model: &HglmmModel, x: &DMatrix<f64>) -> EStep {
    let (n, d) = x.shape();
    let mut resp = DMatrix::zeros(n, model.k());
    let mut point_ll = Vec::with_capacity(n);
    let mut buf = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..d {
            buf[j] = x[(i, j)];
        }
        let (post, ll) = model.posteriors(&buf);
        resp.set_row(i, &post.transpose());
        point_ll.push(ll);
        total += ll;
    }
    EStep {
        resp,
        point_ll,
        total,
    }
}

/// Lower weighted median of `values` visited in `order` (ascending values).
fn weighted_median(values: &[f64], order: &[usize], weights: &[f64], total: f64) -> f64 {
    let half = 0.5 * total;
    let mut acc = 0.0;
    for &i in order {
        acc += weights[i];
        if acc >= half {
            return values[i];
        }
    }
    values[*order.last().unwrap()]
}

#[allow(clippy::too_many_arguments)]
fn m_step(
    model: &mut HglmmModel,
    x: &DMatrix<f64>,
    sorted: &[Vec<usize>],
    columns: &[Vec<f64>],
    step: &EStep,
    floors: &[f64],
    fallback_scale: &DVector<f64>,
    reseeded: &mut usize,
) {
    let (n, d) = x.shape();
    let k = model.k();
    // worst-modeled samples first, for re-seeding empty components
    let mut worst: Vec<usize> = (0..n).collect();
    worst.sort_by(|&a, &b| step.point_ll[a].total_cmp(&step.point_ll[b]).then(a.cmp(&b)));
    let mut next_worst = 0;

    for c in 0..k {
        let w: Vec<f64> = step.resp.column(c).iter().cloned().collect();
        let nk: f64 = w.iter().sum();
        if nk < 1e-12 {
            let src = worst[next_worst.min(n - 1)];
            next_worst += 1;
            warn!("HGLMM: component {c} is empty; re-seeding from sample {src}");
            *reseeded += 1;
            model.weights[c] = 1.0 / n as f64;
            for j in 0..d {
                model.locations[(c, j)] = x[(src, j)];
                model.scales[(c, j)] = fallback_scale[j];
                model.families[c][j] = Family::Gaussian;
            }
            continue;
        }
        model.weights[c] = nk / n as f64;
        for j in 0..d {
            let col = &columns[j];
            let mean = col.iter().zip(&w).map(|(v, g)| g * v).sum::<f64>() / nk;
            let var = col.iter().zip(&w).map(|(v, g)| g * (v - mean).powi(2)).sum::<f64>() / nk;
            let floor = floors[j];
            let sigma = var.sqrt().max(floor);
            let median = weighted_median(col, &sorted[j], &w, nk);
            let b = (col.iter().zip(&w).map(|(v, g)| g * (v - median).abs()).sum::<f64>() / nk).max(floor);

            let ll_gauss: f64 = col
                .iter()
                .zip(&w)
                .map(|(v, g)| g * Family::Gaussian.log_pdf(*v, mean, sigma))
                .sum();
            let ll_lap: f64 = col
                .iter()
                .zip(&w)
                .map(|(v, g)| g * Family::Laplacian.log_pdf(*v, median, b))
                .sum();
            if ll_lap > ll_gauss {
                model.locations[(c, j)] = median;
                model.scales[(c, j)] = b;
                model.families[c][j] = Family::Laplacian;
            } else {
                model.locations[(c, j)] = mean;
                model.scales[(c, j)] = sigma;
                model.families[c][j] = Family::Gaussian;
            }
        }
    }
    let total: f64 = model.weights.iter().sum();
    model.weights /= total;
}

const RELATIVE_FLOOR: f64 = 0.1;

/// Fits an HGLMM to row samples by EM from a k-means++ initialization.
pub fn fit_hglmm(x: &DMatrix<f64>, config: &HglmmConfig) -> Result<HglmmFit> {
    let (n, d) = x.shape();
    let k = config.k_centers;
    if k == 0 {
        return Err(Error::contract("k_centers must be >= 1"));
    }
    if n < 10 * k || d == 0 {
        return Err(Error::contract(format!(
            "HGLMM with {k} centers needs at least {} samples, got {n}",
            10 * k
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("HGLMM input contains non-finite values"));
    }
    if !(config.scale_floor > 0.0 && config.relative_scale_floor >= 0.0) {
        return Err(Error::contract("scale floors must be positive"));
    }
    let spread = global_std(x);
    let floors: Vec<f64> = spread
        .iter()
        .map(|s| config.scale_floor.max(config.relative_scale_floor * s))
        .collect();
    let scale = DVector::from_iterator(d, spread.iter().zip(&floors).map(|(s, f)| s.max(*f)));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = kmeans_pp(x, k, &mut rng);
    let mut model = HglmmModel {
        weights: DVector::from_element(k, 1.0 / k as f64),
        locations: DMatrix::from_fn(k, d, |c, j| x[(centers[c], j)]),
        scales: DMatrix::from_fn(k, d, |_, j| scale[j]),
        families: vec![vec![Family::Gaussian; d]; k],
    };

    let columns: Vec<Vec<f64>> = x.column_iter().map(|c| c.iter().cloned().collect()).collect();
    let sorted: Vec<Vec<usize>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut reseeded = 0;
    let mut step = e_step(&model, x);
    let mut trace = vec![step.total];
    for _ in 0..config.max_iter {
        m_step(&mut model, x, &sorted, &columns, &step, &floors, &scale, &mut reseeded);
        let prev = step.total;
        step = e_step(&model, x);
        trace.push(step.total);
        if step.total - prev <= config.tol * prev.abs() {
            break;
        }
    }
    Ok(HglmmFit {
        model,
        log_likelihoods: trace,
        reseeded,
    })
}

/// Closed-form log-likelihoods of a single cell under both families, used to
/// pick the better-fitting one. Exposed for tests and diagnostics.
pub fn single_cell_log_likelihoods(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sigma = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    let b = values.iter().map(|v| (v - median).abs()).sum::<f64>() / n;
    let gauss = -n * (0.5 * (2.0 * PI).ln() + sigma.ln() + 0.5);
    let lap = -n * ((2.0 * b).ln() + 1.0);
    (gauss, lap)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1.0 + j as f64 + 0.5 * z
        })
    }

    fn laplace_data(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| {
            let e: f64 = Exp1.sample(&mut rng);
            if rng.random::<bool>() {
                e
            } else {
                -e
            }
        })
    }

    fn cfg(k: usize) -> HglmmConfig {
        HglmmConfig {
            k_centers: k,
            seed: 3,
            ..HglmmConfig::default()
        }
    }

    #[test]
    fn single_gaussian_component() {
        let x = gaussian_data(2000, 4, 1);
        let fit = fit_hglmm(&x, &cfg(1)).unwrap();
        let m = &fit.model;
        for j in 0..4 {
            assert_eq!(m.families[0][j], Family::Gaussian);
            let mean = x.column(j).sum() / 2000.0;
            assert!((m.locations[(0, j)] - mean).abs() < 1e-9);
        }
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_laplacian_component() {
        let x = laplace_data(2000, 6, 2);
        let fit = fit_hglmm(&x, &cfg(1)).unwrap();
        let mut oracle_lap = 0;
        let mut lap = 0;
        for j in 0..6 {
            let col: Vec<f64> = x.column(j).iter().cloned().collect();
            let (g, l) = single_cell_log_likelihoods(&col);
            if l > g {
                oracle_lap += 1;
            }
            if fit.model.families[0][j] == Family::Laplacian {
                lap += 1;
            }
        }
        assert_eq!(lap, oracle_lap);
        assert!(lap > 3);
    }

    #[test]
    fn posteriors_sum_to_one() {
        let x = laplace_data(400, 3, 5);
        let fit = fit_hglmm(&x, &cfg(4)).unwrap();
        for row in x.row_iter().take(100) {
            let v: Vec<f64> = row.iter().map(|v| v * 3.0).collect();
            let (p, _) = fit.model.posteriors(&v);
            assert!((p.sum() - 1.0).abs() < 1e-12);
        }
        fit.model.validate(1e-6).unwrap();
    }

    #[test]
    fn log_likelihood_monotone() {
        let x = laplace_data(600, 3, 9);
        let fit = fit_hglmm(&x, &cfg(3)).unwrap();
        for w in fit.log_likelihoods.windows(2) {
            assert!(w[1] - w[0] >= -1e-9 * w[0].abs().max(1.0), "{:?}", fit.log_likelihoods);
        }
    }

    #[test]
    fn deterministic_fit() {
        let x = laplace_data(300, 2, 4);
        let a = fit_hglmm(&x, &cfg(3)).unwrap().model;
        let b = fit_hglmm(&x, &cfg(3)).unwrap().model;
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_samples() {
        let x = laplace_data(20, 2, 4);
        assert!(fit_hglmm(&x, &cfg(3)).is_err());
    }

    #[test]
    fn weighted_median_lower_on_ties() {
        let values = [1.0, 2.0, 3.0, 4.0];
        let order = [0, 1, 2, 3];
        assert_eq!(weighted_median(&values, &order, &[1.0; 4], 4.0), 2.0);
        assert_eq!(weighted_median(&values, &order, &[0.0, 0.0, 5.0, 1.0], 6.0), 3.0);
    }

    #[test]
    fn repeated_points_do_not_collapse() {
        // half the samples are one repeated token
        let mut x = gaussian_data(400, 2, 3);
        for i in 0..200 {
            x[(i, 0)] = 0.5;
            x[(i, 1)] = -0.25;
        }
        let spread = global_std(&x);
        let fit = fit_hglmm(&x, &cfg(3)).unwrap();
        for c in 0..3 {
            for j in 0..2 {
                assert!(fit.model.scales[(c, j)] >= RELATIVE_FLOOR * spread[j] - 1e-15);
            }
        }
        let lls = &fit.log_likelihoods;
        assert!(lls.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
    }
}
