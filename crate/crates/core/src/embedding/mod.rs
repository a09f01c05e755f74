//! Joint tube/description embeddings: CCA and the DSPE / DSPE++ networks.

pub mod cca;
pub mod loss;
pub mod mlp;
pub mod train;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use cca::{cca_score, fit_cca, CcaConfig, CcaModel};
pub use loss::{dspe_loss, dspepp_loss, LossConfig, LossOutput, TripletMasks};
pub use mlp::{Architecture, Branch, BranchParams, Embedding, EmbeddingBatch, MlpEmbedder, Mode};
pub use train::{
    batch_gradients, history_csv, train_embedding, validation_recall, EmbedTrainConfig, EpochRecord, PairSet,
    TrainOutcome, ValidationSet,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cca")]
    Cca,
    #[serde(rename = "dspe")]
    Dspe,
    #[serde(rename = "dspe++")]
    DspePlusPlus,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cca => "cca",
            Method::Dspe => "dspe",
            Method::DspePlusPlus => "dspe++",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cca" => Ok(Method::Cca),
            "dspe" => Ok(Method::Dspe),
            "dspe++" | "dspepp" => Ok(Method::DspePlusPlus),
            other => Err(Error::contract(format!("unknown method {other:?}"))),
        }
    }
}

/// A fitted matching model of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingModel {
    Cca(CcaModel),
    Mlp { method: Method, model: MlpEmbedder },
}

impl EmbeddingModel {
    pub fn method(&self) -> Method {
        match self {
            EmbeddingModel::Cca(_) => Method::Cca,
            EmbeddingModel::Mlp { method, .. } => *method,
        }
    }

    pub fn tube_dim(&self) -> usize {
        match self {
            EmbeddingModel::Cca(m) => m.tube_mean.len(),
            EmbeddingModel::Mlp { model, .. } => model.tube.input_dim(),
        }
    }

    pub fn desc_dim(&self) -> usize {
        match self {
            EmbeddingModel::Cca(m) => m.desc_mean.len(),
            EmbeddingModel::Mlp { model, .. } => model.desc.input_dim(),
        }
    }

    /// Score of one tube feature against one description feature; higher
    /// means a better match.
    pub fn score(&self, f_tube: &DVector<f64>, f_desc: &DVector<f64>) -> Result<f64> {
        match self {
            EmbeddingModel::Cca(m) => cca_score(m, f_tube, f_desc),
            EmbeddingModel::Mlp { model, .. } => model.score(f_tube, f_desc),
        }
    }

    /// Scores for every (description row, tube row) pair, as a
    /// `descs x tubes` matrix.
    pub fn score_matrix(&self, tubes: &DMatrix<f64>, descs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            EmbeddingModel::Cca(m) => {
                let pt: Vec<DVector<f64>> = tubes
                    .row_iter()
                    .map(|r| m.project_tube(&r.transpose()))
                    .collect::<Result<_>>()?;
                let pd: Vec<DVector<f64>> = descs
                    .row_iter()
                    .map(|r| m.project_desc(&r.transpose()))
                    .collect::<Result<_>>()?;
                Ok(DMatrix::from_fn(pd.len(), pt.len(), |q, t| cca::projected_score(&pt[t], &pd[q])))
            }
            EmbeddingModel::Mlp { model, .. } => {
                let et = model.tube.embed_batch(tubes, Mode::Infer)?.vectors;
                let ed = model.desc.embed_batch(descs, Mode::Infer)?.vectors;
                Ok(DMatrix::from_fn(ed.nrows(), et.nrows(), |q, t| -(ed.row(q) - et.row(t)).norm()))
            }
        }
    }
}
