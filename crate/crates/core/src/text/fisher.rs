//! Fisher vectors over an HGLMM.
//!
//! The raw vector is the average over tokens of the gradient of the token
//! log-likelihood with respect to every cell's location and (optionally)
//! scale. Layout: all location entries (component-major), then all scale
//! entries.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::hglmm::{Family, HglmmModel};
use crate::error::{Error, Result};

/// Which parameter derivatives make up the Fisher vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FvParts {
    Location,
    #[default]
    LocationScale,
}

impl FvParts {
    pub fn dim(self, k: usize, d: usize) -> usize {
        match self {
            FvParts::Location => k * d,
            FvParts::LocationScale => 2 * k * d,
        }
    }
}

/// Fisher score of a single (already ICA-transformed) point.
pub fn fisher_score(model: &HglmmModel, x: &[f64], parts: FvParts) -> DVector<f64> {
    let (k, d) = (model.k(), model.dim());
    let (post, _) = model.posteriors(x);
    let mut out = DVector::zeros(parts.dim(k, d));
    let scale_offset = k * d;
    for c in 0..k {
        let g = post[c];
        for j in 0..d {
            let (mu, s) = (model.locations[(c, j)], model.scales[(c, j)]);
            let diff = x[j] - mu;
            let (loc, scale) = match model.families[c][j] {
                Family::Gaussian => (diff / (s * s), diff * diff / (s * s * s) - 1.0 / s),
                Family::Laplacian => {
                    let sign = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    (sign / s, diff.abs() / (s * s) - 1.0 / s)
                }
            };
            out[c * d + j] = g * loc;
            if parts == FvParts::LocationScale {
                out[scale_offset + c * d + j] = g * scale;
            }
        }
    }
    out
}

/// Mean Fisher score over a set of transformed token vectors.
pub fn fisher_vector_of_points(model: &HglmmModel, points: &[DVector<f64>], parts: FvParts) -> Result<DVector<f64>> {
    if points.is_empty() {
        return Err(Error::EmptyDescription);
    }
    let mut acc = DVector::zeros(parts.dim(model.k(), model.dim()));
    for p in points {
        if p.len() != model.dim() {
            return Err(Error::contract("token vector dimension does not match the mixture"));
        }
        acc += fisher_score(model, p.as_slice(), parts);
    }
    Ok(acc / points.len() as f64)
}

/// Signed square root followed by L2 normalization. Zero stays zero.
pub fn normalize_fv(raw: &DVector<f64>) -> DVector<f64> {
    let powered = raw.map(|z| z.signum() * z.abs().sqrt());
    let norm = powered.norm();
    if norm > 0.0 {
        powered / norm
    } else {
        DVector::zeros(raw.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn one_gaussian(mu: f64, s: f64) -> HglmmModel {
        HglmmModel {
            weights: DVector::from_element(1, 1.0),
            locations: DMatrix::from_element(1, 1, mu),
            scales: DMatrix::from_element(1, 1, s),
            families: vec![vec![Family::Gaussian]],
        }
    }

    #[test]
    fn location_score_vanishes_at_mean() {
        let m = one_gaussian(0.7, 2.0);
        let fv = fisher_vector_of_points(&m, &[DVector::from_element(1, 0.7)], FvParts::LocationScale).unwrap();
        assert_eq!(fv[0], 0.0);
    }

    #[test]
    fn hand_derivative_single_gaussian() {
        let (mu, s, x) = (0.5, 1.5, 2.0);
        let m = one_gaussian(mu, s);
        let fv = fisher_score(&m, &[x], FvParts::LocationScale);
        assert!((fv[0] - (x - mu) / (s * s)).abs() < 1e-15);
        assert!((fv[1] - ((x - mu).powi(2) / s.powi(3) - 1.0 / s)).abs() < 1e-15);
    }

    #[test]
    fn laplacian_location_is_sign_based() {
        let m = HglmmModel {
            families: vec![vec![Family::Laplacian]],
            ..one_gaussian(1.0, 0.5)
        };
        let fv = fisher_score(&m, &[-3.0], FvParts::Location);
        assert_eq!(fv.len(), 1);
        assert_eq!(fv[0], -2.0);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_fv(&DVector::zeros(3)), DVector::zeros(3));
        let out = normalize_fv(&DVector::from_vec(vec![4.0, -1.0]));
        let r5 = 5f64.sqrt();
        assert!((out[0] - 2.0 / r5).abs() < 1e-15);
        assert!((out[1] + 1.0 / r5).abs() < 1e-15);
    }

    #[test]
    fn empty_points_rejected() {
        let m = one_gaussian(0.0, 1.0);
        assert!(matches!(fisher_vector_of_points(&m, &[], FvParts::Location), Err(Error::EmptyDescription)));
    }
}
