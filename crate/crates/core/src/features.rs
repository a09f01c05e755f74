//! Segment-level tube features and their mean-pooled aggregate.
//!
//! Each second of a tube contributes six blocks: RGB CNN, optical-flow CNN
//! and C3D features, each taken from the tube interior and from the whole
//! frame. A layout selects which blocks are concatenated, always in canonical
//! order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    RgbTube,
    RgbFrame,
    FlowTube,
    FlowFrame,
    C3dTube,
    C3dFrame,
}

impl BlockKind {
    /// Canonical concatenation order.
    pub const ALL: [BlockKind; 6] = [
        BlockKind::RgbTube,
        BlockKind::RgbFrame,
        BlockKind::FlowTube,
        BlockKind::FlowFrame,
        BlockKind::C3dTube,
        BlockKind::C3dFrame,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::RgbTube => "rgb_tube",
            BlockKind::RgbFrame => "rgb_frame",
            BlockKind::FlowTube => "flow_tube",
            BlockKind::FlowFrame => "flow_frame",
            BlockKind::C3dTube => "c3d_tube",
            BlockKind::C3dFrame => "c3d_frame",
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlockKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::format(format!("unknown feature block {s:?}")))
    }
}

/// The six blocks of one (tube, second).
pub type SegmentFeatureBlocks = BTreeMap<BlockKind, DVector<f64>>;

/// Which blocks to use and their expected dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    dims: BTreeMap<BlockKind, usize>,
}

impl FeatureLayout {
    /// Builds a layout from `(block, dim)` pairs; order of the pairs is irrelevant.
    pub fn new(blocks: impl IntoIterator<Item = (BlockKind, usize)>) -> Result<Self> {
        let dims: BTreeMap<BlockKind, usize> = blocks.into_iter().collect();
        if dims.is_empty() {
            return Err(Error::contract("feature layout selects no blocks"));
        }
        Ok(FeatureLayout { dims })
    }

    /// All six blocks with the same dimension.
    pub fn full(block_dim: usize) -> Self {
        FeatureLayout {
            dims: BlockKind::ALL.iter().map(|k| (*k, block_dim)).collect(),
        }
    }

    /// Restricts this layout to the named blocks (`"full"` keeps all).
    pub fn select(&self, spec: &str) -> Result<Self> {
        if spec.trim() == "full" {
            return Ok(self.clone());
        }
        let mut dims = BTreeMap::new();
        for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let kind: BlockKind = name.parse()?;
            let d = self
                .dims
                .get(&kind)
                .ok_or_else(|| Error::format(format!("block {kind} is not available")))?;
            dims.insert(kind, *d);
        }
        FeatureLayout::new(dims)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (BlockKind, usize)> + '_ {
        self.dims.iter().map(|(k, d)| (*k, *d))
    }

    pub fn dim(&self) -> usize {
        self.dims.values().sum()
    }

    pub fn block_dim(&self, kind: BlockKind) -> Option<usize> {
        self.dims.get(&kind).copied()
    }
}

/// Concatenates the layout's blocks in canonical order. Blocks absent from
/// the layout are ignored.
pub fn assemble_segment(blocks: &SegmentFeatureBlocks, layout: &FeatureLayout) -> Result<DVector<f64>> {
    let mut out = Vec::with_capacity(layout.dim());
    for (kind, dim) in layout.blocks() {
        let block = blocks
            .get(&kind)
            .ok_or_else(|| Error::format(format!("segment is missing block {kind}")))?;
        if block.len() != dim {
            return Err(Error::format(format!(
                "block {kind} has dimension {}, layout expects {dim}",
                block.len()
            )));
        }
        if block.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(format!("block {kind} has non-finite entries")));
        }
        out.extend(block.iter());
    }
    Ok(DVector::from_vec(out))
}

/// Elementwise mean of segment vectors, summed in index order.
pub fn aggregate_tube(segments: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = segments
        .first()
        .ok_or_else(|| Error::contract("cannot aggregate a tube with no segments"))?;
    let mut sum = DVector::zeros(first.len());
    for s in segments {
        if s.len() != first.len() {
            return Err(Error::format("segment vectors have inconsistent dimensions"));
        }
        sum += s;
    }
    Ok(sum / segments.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blocks(dim: usize) -> SegmentFeatureBlocks {
        BlockKind::ALL
            .iter()
            .enumerate()
            .map(|(i, k)| (*k, DVector::from_fn(dim, |j, _| (10 * i + j) as f64)))
            .collect()
    }

    #[test]
    fn six_blocks_concatenate_in_order() {
        let v = assemble_segment(&blocks(2), &FeatureLayout::full(2)).unwrap();
        assert_eq!(v.as_slice(), &[0., 1., 10., 11., 20., 21., 30., 31., 40., 41., 50., 51.]);
    }

    #[test]
    fn ablation_layout() {
        let layout = FeatureLayout::full(2).select("rgb_tube").unwrap();
        let v = assemble_segment(&blocks(2), &layout).unwrap();
        assert_eq!(v.as_slice(), &[0., 1.]);
        let layout = FeatureLayout::full(2).select("c3d_frame, rgb_tube").unwrap();
        let v = assemble_segment(&blocks(2), &layout).unwrap();
        assert_eq!(v.as_slice(), &[0., 1., 50., 51.]);
    }

    #[test]
    fn input_order_irrelevant() {
        let reference: Vec<f64> = BlockKind::ALL
            .iter()
            .flat_map(|k| blocks(3)[k].iter().cloned().collect::<Vec<_>>())
            .collect();
        let mut kinds = BlockKind::ALL.to_vec();
        kinds.reverse();
        let src = blocks(3);
        let shuffled: SegmentFeatureBlocks = kinds.iter().map(|k| (*k, src[k].clone())).collect();
        let layout = FeatureLayout::new(kinds.iter().map(|k| (*k, 3))).unwrap();
        let v = assemble_segment(&shuffled, &layout).unwrap();
        assert_eq!(v.as_slice(), reference.as_slice());
    }

    #[test]
    fn dimension_mismatch() {
        let mut b = blocks(2);
        b.insert(BlockKind::FlowTube, DVector::zeros(3));
        assert!(matches!(assemble_segment(&b, &FeatureLayout::full(2)), Err(Error::Format(_))));
        assert!("sift".parse::<BlockKind>().is_err());
    }

    #[test]
    fn aggregate_examples() {
        let one = DVector::from_vec(vec![1.0, -2.0]);
        assert_eq!(aggregate_tube(&[one.clone()]).unwrap(), one);
        let m = aggregate_tube(&[DVector::from_vec(vec![1.0, 3.0]), DVector::from_vec(vec![3.0, 5.0])]).unwrap();
        assert_eq!(m.as_slice(), &[2.0, 4.0]);
        assert!(aggregate_tube(&[]).is_err());
    }

    #[test]
    fn aggregate_matches_two_pass_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let segs: Vec<DVector<f64>> = (0..100)
            .map(|_| DVector::from_fn(7, |_, _| rng.random_range(-5.0..5.0)))
            .collect();
        let got = aggregate_tube(&segs).unwrap();
        for j in 0..7 {
            // two-pass: rough mean, then corrected by mean residual
            let rough = segs.iter().map(|s| s[j]).sum::<f64>() / 100.0;
            let corr = segs.iter().map(|s| s[j] - rough).sum::<f64>() / 100.0;
            assert!((got[j] - (rough + corr)).abs() < 1e-12);
            let lo = segs.iter().map(|s| s[j]).fold(f64::INFINITY, f64::min);
            let hi = segs.iter().map(|s| s[j]).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo <= got[j] && got[j] <= hi);
        }
    }
}
