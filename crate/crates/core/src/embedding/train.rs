//! Minibatch momentum SGD for the two-branch embedding.

use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{dspe_loss, dspepp_loss, LossConfig, LossOutput, TripletMasks};
use super::mlp::{Architecture, BranchParams, MlpEmbedder};
use super::Method;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedTrainConfig {
    pub method: Method,
    pub loss: LossConfig,
    pub arch: Architecture,
    pub dropout: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        EmbedTrainConfig {
            method: Method::Dspe,
            loss: LossConfig::default(),
            arch: Architecture::default(),
            dropout: 0.5,
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 128,
            epochs: 20,
            seed: 0,
        }
    }
}

/// Paired training rows: `tubes[i]` and `descs[i]` belong to `groups[i]`.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub tubes: DMatrix<f64>,
    pub descs: DMatrix<f64>,
    pub groups: Vec<usize>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.tubes.nrows() != self.len() || self.descs.nrows() != self.len() {
            return Err(Error::contract("pair set row counts differ"));
        }
        if self.is_empty() {
            return Err(Error::contract("pair set is empty"));
        }
        Ok(())
    }

    fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>, Vec<usize>) {
        (
            self.tubes.select_rows(idx),
            self.descs.select_rows(idx),
            idx.iter().map(|&i| self.groups[i]).collect(),
        )
    }
}

/// Query descriptions against a gallery of tubes; `targets[q]` is the gallery
/// row that matches query `q`.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    pub queries: DMatrix<f64>,
    pub gallery: DMatrix<f64>,
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_objective: f64,
    pub val_recall_at_1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpEmbedder,
    /// Epoch the returned model comes from (0 = initialization).
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Batch objective (loss divided by the number of tube-to-description
/// triplets) and its gradients with respect to both branches.
pub struct BatchGradients {
    pub objective: f64,
    pub loss: LossOutput,
    pub tube: BranchParams,
    pub desc: BranchParams,
}

fn apply_loss(method: Method, x: &DMatrix<f64>, y: &DMatrix<f64>, g: &[usize], cfg: &LossConfig, masks: Option<&TripletMasks>) -> Result<LossOutput> {
    match method {
        Method::Dspe => dspe_loss(x, y, g, cfg, masks),
        Method::DspePlusPlus => dspepp_loss(x, y, g, cfg, masks),
        Method::Cca => Err(Error::contract("CCA is not trained by gradient descent")),
    }
}

/// Forward and backward pass over one batch with explicit dropout masks.
/// Passing `triplet_masks` freezes which hinge terms are active.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradients(
    model: &MlpEmbedder,
    method: Method,
    loss_cfg: &LossConfig,
    tubes: &DMatrix<f64>,
    descs: &DMatrix<f64>,
    groups: &[usize],
    tube_mask: &DMatrix<f64>,
    desc_mask: &DMatrix<f64>,
    triplet_masks: Option<&TripletMasks>,
) -> Result<BatchGradients> {
    let ct = model.tube.forward_train(tubes, tube_mask)?;
    let cd = model.desc.forward_train(descs, desc_mask)?;
    let loss = apply_loss(method, ct.output(), cd.output(), groups, loss_cfg, triplet_masks)?;
    let norm = loss.n_primary().max(1) as f64;
    let tube = model.tube.backward(&ct, &(&loss.grad_x / norm));
    let desc = model.desc.backward(&cd, &(&loss.grad_y / norm));
    Ok(BatchGradients {
        objective: loss.loss / norm,
        loss,
        tube,
        desc,
    })
}

/// Recall@1 of `model` on a validation set. Ties go to the lower gallery row.
pub fn validation_recall(model: &MlpEmbedder, val: &ValidationSet) -> Result<f64> {
    let scores = super::EmbeddingModel::Mlp {
        method: Method::Dspe,
        model: model.clone(),
    }
    .score_matrix(&val.gallery, &val.queries)?;
    let hits = val
        .targets
        .iter()
        .enumerate()
        .filter(|(q, &t)| {
            let row = scores.row(*q);
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best == t
        })
        .count();
    Ok(hits as f64 / val.targets.len().max(1) as f64)
}

/// Trains a DSPE or DSPE++ embedding. With a validation set, the model from
/// the epoch with the highest validation recall@1 is returned (earliest on
/// ties); otherwise the final model.
pub fn train_embedding(train: &PairSet, val: Option<&ValidationSet>, cfg: &EmbedTrainConfig) -> Result<TrainOutcome> {
    train.validate()?;
    if cfg.batch_size < 2 {
        return Err(Error::contract("batch size must be at least 2"));
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::contract("dropout must be in [0, 1)"));
    }
    let mut model = MlpEmbedder::new(train.tubes.ncols(), train.descs.ncols(), cfg.arch, cfg.dropout, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut vel_t = BranchParams::zeros_like(&model.tube.params);
    let mut vel_d = BranchParams::zeros_like(&model.desc.params);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = match val {
        Some(v) => Some((validation_recall(&model, v)?, 0usize, model.clone())),
        None => None,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let (xb, yb, gb) = train.rows(chunk);
            let mt = model.tube.sample_mask(chunk.len(), &mut rng);
            let md = model.desc.sample_mask(chunk.len(), &mut rng);
            let ct = model.tube.forward_train(&xb, &mt)?;
            let cd = model.desc.forward_train(&yb, &md)?;
            let loss = apply_loss(cfg.method, ct.output(), cd.output(), &gb, &cfg.loss, None)?;
            let norm = loss.n_primary().max(1) as f64;
            let gt = model.tube.backward(&ct, &(&loss.grad_x / norm));
            let gd = model.desc.backward(&cd, &(&loss.grad_y / norm));
            vel_t.scale(cfg.momentum);
            vel_t.axpy(-cfg.learning_rate, &gt);
            vel_d.scale(cfg.momentum);
            vel_d.axpy(-cfg.learning_rate, &gd);
            model.tube.params.axpy(1.0, &vel_t);
            model.desc.params.axpy(1.0, &vel_d);
            model.tube.update_running_stats(&ct);
            model.desc.update_running_stats(&cd);
            let objective = loss.loss / norm;
            if !objective.is_finite() {
                return Err(Error::Numeric(format!("objective became non-finite at epoch {epoch}")));
            }
            total += objective;
            batches += 1;
        }
        let mean = if batches > 0 { total / batches as f64 } else { 0.0 };
        let recall = match val {
            Some(v) => Some(validation_recall(&model, v)?),
            None => None,
        };
        match recall {
            Some(r) => info!("epoch {epoch}: objective {mean:.5}, val R@1 {r:.4}"),
            None => info!("epoch {epoch}: objective {mean:.5}"),
        }
        if let (Some(r), Some((best_r, _, _))) = (recall, &best) {
            if r > *best_r {
                best = Some((r, epoch, model.clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            mean_objective: mean,
            val_recall_at_1: recall,
        });
    }
    if history.iter().all(|h| h.mean_objective == 0.0) {
        warn!("training objective was zero throughout");
    }
    let (model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model, cfg.epochs),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

/// History as CSV with header `epoch,mean_objective,val_recall_at_1`.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,mean_objective,val_recall_at_1\n");
    for h in history {
        let r = h.val_recall_at_1.map(|v| format!("{v:.6}")).unwrap_or_default();
        s.push_str(&format!("{},{:.8},{}\n", h.epoch, h.mean_objective, r));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn planted(n_groups: usize, per: usize, seed: u64) -> PairSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..n_groups)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let n = n_groups * per;
        let groups: Vec<usize> = (0..n).map(|i| i / per).collect();
        let tubes = DMatrix::from_fn(n, 6, |i, j| centers[i / per][j] + 0.05 * rng.random_range(-1.0..1.0));
        let descs = DMatrix::from_fn(n, 5, |i, j| centers[i / per][j] - centers[i / per][j + 1] + 0.05 * rng.random_range(-1.0..1.0));
        PairSet { tubes, descs, groups }
    }

    fn small_cfg() -> EmbedTrainConfig {
        EmbedTrainConfig {
            arch: Architecture { hidden: 32, output: 8 },
            batch_size: 32,
            epochs: 15,
            dropout: 0.1,
            learning_rate: 0.05,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn objective_decreases() {
        let data = planted(10, 6, 1);
        let out = train_embedding(&data, None, &small_cfg()).unwrap();
        let first = out.history.first().unwrap().mean_objective;
        let last = out.history.last().unwrap().mean_objective;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn deterministic_given_seed() {
        let data = planted(6, 4, 2);
        let a = train_embedding(&data, None, &small_cfg()).unwrap();
        let b = train_embedding(&data, None, &small_cfg()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
    }

    #[test]
    fn best_validation_epoch_is_kept() {
        let data = planted(8, 5, 4);
        let val = ValidationSet {
            queries: data.descs.select_rows(&[0, 5, 10, 15]),
            gallery: data.tubes.select_rows(&[0, 5, 10, 15]),
            targets: vec![0, 1, 2, 3],
        };
        let out = train_embedding(&data, Some(&val), &small_cfg()).unwrap();
        let best = out
            .history
            .iter()
            .filter_map(|h| h.val_recall_at_1)
            .fold(f64::NEG_INFINITY, f64::max);
        let got = validation_recall(&out.model, &val).unwrap();
        assert!(got >= best || out.best_epoch == 0);
    }

    #[test]
    fn cca_method_rejected() {
        let data = planted(3, 2, 5);
        let cfg = EmbedTrainConfig {
            method: Method::Cca,
            ..small_cfg()
        };
        assert!(train_embedding(&data, None, &cfg).is_err());
    }
}
