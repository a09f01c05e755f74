//! Regularized canonical correlation analysis and the correlation-weighted
//! cosine matching score.

use log::debug;
use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::linalg::{center_rows, column_mean, cosine, inv_sqrt_spd, l2_normalize};

#[derive(Debug, Clone)]
pub struct CcaConfig {
    /// Ridge added to both within-set covariances.
    pub reg: f64,
    /// Defaults to `min(dim_tube, dim_desc)`.
    pub n_components: Option<usize>,
    /// L2-normalize every input vector before fitting and scoring.
    pub l2_normalize_inputs: bool,
}

impl Default for CcaConfig {
    fn default() -> Self {
        CcaConfig {
            reg: 1e-4,
            n_components: None,
            l2_normalize_inputs: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel {
    pub tube_mean: DVector<f64>,
    pub desc_mean: DVector<f64>,
    /// `components x dim_tube`
    pub w_tube: DMatrix<f64>,
    /// `components x dim_desc`
    pub w_desc: DMatrix<f64>,
    /// Canonical correlations, descending.
    pub correlations: DVector<f64>,
    pub l2_normalize_inputs: bool,
}

fn maybe_normalize(x: &DMatrix<f64>, on: bool) -> DMatrix<f64> {
    if !on {
        return x.clone();
    }
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
    out
}

/// Fits CCA through the SVD of the whitened cross-covariance.
pub fn fit_cca(x: &DMatrix<f64>, y: &DMatrix<f64>, config: &CcaConfig) -> Result<CcaModel> {
    let n = x.nrows();
    if n != y.nrows() {
        return Err(Error::contract(format!("CCA row counts differ: {n} vs {}", y.nrows())));
    }
    if n < 2 {
        return Err(Error::contract("CCA needs at least 2 samples"));
    }
    if !(config.reg >= 0.0) {
        return Err(Error::contract("CCA regularization must be >= 0"));
    }
    let x = maybe_normalize(x, config.l2_normalize_inputs);
    let y = maybe_normalize(y, config.l2_normalize_inputs);
    let (dx, dy) = (x.ncols(), y.ncols());
    let max_c = dx.min(dy);
    let c = config.n_components.unwrap_or(max_c);
    if c == 0 || c > max_c {
        return Err(Error::contract(format!("CCA components must be in 1..={max_c}")));
    }

    let (mx, my) = (column_mean(&x), column_mean(&y));
    let (xc, yc) = (center_rows(&x, &mx), center_rows(&y, &my));
    let denom = (n - 1) as f64;
    let cxx = xc.transpose() * &xc / denom + DMatrix::identity(dx, dx) * config.reg;
    let cyy = yc.transpose() * &yc / denom + DMatrix::identity(dy, dy) * config.reg;
    let cxy = xc.transpose() * &yc / denom;

    let hint = |e: Error| match e {
        Error::Numeric(msg) => Error::Numeric(format!("{msg}; use a regularization reg > 0")),
        other => other,
    };
    let kx = inv_sqrt_spd(&cxx).map_err(hint)?;
    let ky = inv_sqrt_spd(&cyy).map_err(hint)?;
    let m = &kx * cxy * &ky;
    let svd = SVD::new(m, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v)) => (u, v),
        _ => return Err(Error::Numeric("CCA SVD failed".into())),
    };
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

    let mut a = DMatrix::zeros(c, dx);
    let mut b = DMatrix::zeros(c, dy);
    let mut r = DVector::zeros(c);
    for (row, &i) in order.iter().take(c).enumerate() {
        let mut ui = u.column(i).into_owned();
        let mut vi = v_t.row(i).transpose();
        // flip the pair jointly so the largest tube-side loading is positive
        let big = ui.iamax();
        if ui[big] < 0.0 {
            ui.neg_mut();
            vi.neg_mut();
        }
        a.set_row(row, &(&kx * ui).transpose());
        b.set_row(row, &(&ky * vi).transpose());
        r[row] = s[i].max(0.0);
    }
    Ok(CcaModel {
        tube_mean: mx,
        desc_mean: my,
        w_tube: a,
        w_desc: b,
        correlations: r,
        l2_normalize_inputs: config.l2_normalize_inputs,
    })
}

impl CcaModel {
    pub fn n_components(&self) -> usize {
        self.correlations.len()
    }

    fn prepare(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.l2_normalize_inputs {
            l2_normalize(v)
        } else {
            v.clone()
        }
    }

    /// `diag(r) W_t (f_t - mean_t)`
    pub fn project_tube(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        if f.len() != self.tube_mean.len() {
            return Err(Error::contract("tube feature dimension does not match the CCA model"));
        }
        let p = &self.w_tube * (self.prepare(f) - &self.tube_mean);
        Ok(p.component_mul(&self.correlations))
    }

    /// `diag(r) W_d (f_d - mean_d)`
    pub fn project_desc(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        if f.len() != self.desc_mean.len() {
            return Err(Error::contract("description feature dimension does not match the CCA model"));
        }
        let p = &self.w_desc * (self.prepare(f) - &self.desc_mean);
        Ok(p.component_mul(&self.correlations))
    }
}

/// Cosine similarity of the correlation-weighted projections. A zero
/// projection scores 0.
pub fn cca_score(model: &CcaModel, f_tube: &DVector<f64>, f_desc: &DVector<f64>) -> Result<f64> {
    let (pt, pd) = (model.project_tube(f_tube)?, model.project_desc(f_desc)?);
    Ok(projected_score(&pt, &pd))
}

pub(crate) fn projected_score(pt: &DVector<f64>, pd: &DVector<f64>) -> f64 {
    cosine(pt, pd).unwrap_or_else(|| {
        debug!("CCA score: zero projected vector, scoring 0");
        0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn identical_data_correlates_fully() {
        let x = randn(200, 4, 1);
        let m = fit_cca(&x, &x, &CcaConfig { reg: 1e-6, ..Default::default() }).unwrap();
        for r in m.correlations.iter() {
            assert!((1.0 - r).abs() < 1e-3);
        }
    }

    #[test]
    fn linear_relation() {
        let x = randn(300, 3, 2);
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, -0.3, 2.0, 0.1, 0.0, 0.2, 0.7]);
        let y = &x * a.transpose();
        let m = fit_cca(&x, &y, &CcaConfig { reg: 0.0, ..Default::default() }).unwrap();
        assert!(m.correlations[0] > 1.0 - 1e-3);
        assert!(m.correlations.iter().all(|r| *r <= 1.0 + 1e-6));
    }

    #[test]
    fn projections_achieve_correlations() {
        let x = randn(400, 3, 3);
        let noise = randn(400, 2, 4);
        let y = DMatrix::from_fn(400, 2, |i, j| x[(i, j)] + 0.8 * noise[(i, j)] + 0.3 * x[(i, 2)]);
        let m = fit_cca(&x, &y, &CcaConfig { reg: 0.0, ..Default::default() }).unwrap();
        let px = &x * m.w_tube.transpose();
        let py = &y * m.w_desc.transpose();
        for k in 0..m.n_components() {
            let a: Vec<f64> = px.column(k).iter().cloned().collect();
            let b: Vec<f64> = py.column(k).iter().cloned().collect();
            assert!((corr(&a, &b) - m.correlations[k]).abs() < 1e-6);
        }
        for w in m.correlations.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn singular_without_reg_errors() {
        let mut x = randn(50, 3, 5);
        for i in 0..50 {
            x[(i, 2)] = x[(i, 0)] + x[(i, 1)];
        }
        let y = randn(50, 2, 6);
        match fit_cca(&x, &y, &CcaConfig { reg: 0.0, ..Default::default() }) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("reg > 0")),
            other => panic!("{other:?}"),
        }
        assert!(fit_cca(&x, &y, &CcaConfig { reg: 1e-3, ..Default::default() }).is_ok());
    }

    #[test]
    fn score_bounds_and_special_cases() {
        let x = randn(100, 3, 7);
        let y = randn(100, 3, 8);
        let m = fit_cca(&x, &y, &CcaConfig::default()).unwrap();
        for i in 0..20 {
            let s = cca_score(&m, &x.row(i).transpose(), &y.row(i).transpose()).unwrap();
            assert!((-1.0..=1.0).contains(&s));
        }
        // projections equal to the means vanish
        assert_eq!(cca_score(&m, &m.tube_mean.clone(), &y.row(0).transpose()).unwrap(), 0.0);
        assert!(cca_score(&m, &DVector::zeros(2), &y.row(0).transpose()).is_err());
        assert!((projected_score(&DVector::from_vec(vec![1.0, 2.0]), &DVector::from_vec(vec![2.0, 4.0])) - 1.0).abs() < 1e-15);
        assert_eq!(projected_score(&DVector::from_vec(vec![1.0, 0.0]), &DVector::from_vec(vec![0.0, 3.0])), 0.0);
    }
}
