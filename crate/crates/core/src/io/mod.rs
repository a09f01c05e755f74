//! File formats: FMAT matrices and bundles, JSON-lines records, feature sets,
//! segment block indexes and model files.

pub mod fmat;
pub mod models;
pub mod records;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use fmat::{read_matrix_file, write_matrix_file, Bundle};
pub use models::{load_embedding, load_text_encoder, save_embedding, save_text_encoder};
pub use records::{
    read_jsonl, read_jsonl_file, write_jsonl, write_jsonl_file, AnnotationRecord, BoxRecord, DetectionRecord,
    QueryRecord, Record, ResultRecord, ScoredBox, TubeRecord,
};

use crate::error::{Error, Result};
use crate::eval::CandidateSet;
use crate::features::{aggregate_tube, assemble_segment, BlockKind, FeatureLayout, SegmentFeatureBlocks};

/// Saves row features with their ids (tube ids or query ids).
pub fn write_feature_set(path: &Path, set: &CandidateSet) -> Result<()> {
    let mut b = Bundle::new(json!({ "kind": "features", "ids": set.ids }));
    b.push("features", set.features.clone());
    b.save(path)
}

pub fn read_feature_set(path: &Path) -> Result<CandidateSet> {
    let b = Bundle::load(path)?;
    let ids: Vec<String> = serde_json::from_value(b.meta.get("ids").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::format(format!("{}: bad ids: {e}", path.display())))?;
    CandidateSet::new(ids, b.get("features")?.clone())
        .map_err(|_| Error::format(format!("{}: id count does not match feature rows", path.display())))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockRow {
    pub tube_id: String,
    pub second: u32,
    pub row: usize,
}

/// Index of per-second feature blocks. Each matrix row holds the layout's
/// blocks concatenated in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockIndex {
    pub layout: FeatureLayout,
    /// Matrix file, relative to the index file's directory.
    pub matrix: String,
    pub rows: Vec<BlockRow>,
}

impl BlockIndex {
    pub fn load(path: &Path) -> Result<(BlockIndex, DMatrix<f64>)> {
        let index: BlockIndex = serde_json::from_slice(&fs::read(path)?)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = read_matrix_file(&dir.join(&index.matrix))?;
        if m.ncols() != index.layout.dim() {
            return Err(Error::format(format!(
                "block matrix has {} columns, layout needs {}",
                m.ncols(),
                index.layout.dim()
            )));
        }
        if let Some(r) = index.rows.iter().find(|r| r.row >= m.nrows()) {
            return Err(Error::format(format!("block row {} out of range", r.row)));
        }
        Ok((index, m))
    }

    /// Writes the index as JSON next to its matrix file.
    pub fn save(&self, path: &Path, matrix: &DMatrix<f64>) -> Result<()> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        write_matrix_file(&dir.join(&self.matrix), matrix)?;
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Splits one matrix row back into its blocks.
    pub fn segment(&self, matrix: &DMatrix<f64>, row: usize) -> SegmentFeatureBlocks {
        let mut blocks = SegmentFeatureBlocks::new();
        let mut at = 0;
        for (kind, dim) in self.layout.blocks() {
            blocks.insert(kind, DVector::from_iterator(dim, matrix.row(row).iter().skip(at).take(dim).copied()));
            at += dim;
        }
        blocks
    }
}

/// Mean-pooled tube features for every tube in the index, restricted to
/// `select`. Rows are ordered by tube id.
pub fn tube_features(index: &BlockIndex, matrix: &DMatrix<f64>, select: &FeatureLayout) -> Result<CandidateSet> {
    let mut by_tube: BTreeMap<&str, Vec<&BlockRow>> = BTreeMap::new();
    for r in &index.rows {
        by_tube.entry(r.tube_id.as_str()).or_default().push(r);
    }
    let mut ids = Vec::with_capacity(by_tube.len());
    let mut rows = Vec::with_capacity(by_tube.len());
    for (id, mut segs) in by_tube {
        segs.sort_by_key(|r| r.second);
        let vectors = segs
            .iter()
            .map(|r| assemble_segment(&index.segment(matrix, r.row), select))
            .collect::<Result<Vec<_>>>()?;
        rows.push(aggregate_tube(&vectors)?);
        ids.push(id.to_string());
    }
    let features = if rows.is_empty() {
        DMatrix::zeros(0, select.dim())
    } else {
        crate::linalg::rows_to_matrix(&rows)?
    };
    CandidateSet::new(ids, features)
}

/// Canonical block names, for help texts.
pub fn block_names() -> Vec<&'static str> {
    BlockKind::ALL.iter().map(|k| k.name()).collect()
}
