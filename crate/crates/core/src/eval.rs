//! Ranking, the localization score `S_loc` and the recall@K protocol.
//!
//! `S_loc` is the mean per-frame IoU between a ground-truth and a detected
//! tube over `Gamma`: the frames eligible for annotation on which either tube
//! has a box. A query counts as a hit at K when one of its top K tubes has
//! `S_loc` strictly above the threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::proposal::{iou, select_top_candidates, BBox, Tube};
use crate::text::{TextEncoder, WordVectorTable};

/// Anything with per-frame boxes inside one clip.
pub trait Track {
    fn clip_id(&self) -> &str;
    fn box_at(&self, frame: u32) -> Option<BBox>;
    fn frame_set(&self) -> BTreeSet<u32>;
}

impl Track for Tube {
    fn clip_id(&self) -> &str {
        &self.clip_id
    }

    fn box_at(&self, frame: u32) -> Option<BBox> {
        Tube::box_at(self, frame).copied()
    }

    fn frame_set(&self) -> BTreeSet<u32> {
        self.frames().collect()
    }
}

/// An annotated person: boxes on the frames where they are visible and the
/// frames eligible for annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub person_id: String,
    pub clip_id: String,
    pub eligible_frames: BTreeSet<u32>,
    pub boxes: BTreeMap<u32, BBox>,
}

impl Track for GroundTruth {
    fn clip_id(&self) -> &str {
        &self.clip_id
    }

    fn box_at(&self, frame: u32) -> Option<BBox> {
        self.boxes.get(&frame).copied()
    }

    fn frame_set(&self) -> BTreeSet<u32> {
        self.boxes.keys().copied().collect()
    }
}

impl GroundTruth {
    /// The annotated boxes as a tube when they cover consecutive frames.
    pub fn to_tube(&self, id: impl Into<String>) -> Result<Tube> {
        let frames: Vec<u32> = self.boxes.keys().copied().collect();
        let Some(&start) = frames.first() else {
            return Err(Error::contract("ground truth has no boxes"));
        };
        if frames.iter().enumerate().any(|(i, f)| *f != start + i as u32) {
            return Err(Error::contract("ground-truth boxes are not on consecutive frames"));
        }
        Ok(Tube {
            id: id.into(),
            clip_id: self.clip_id.clone(),
            start_frame: start,
            boxes: self.boxes.values().copied().collect(),
            scores: vec![1.0; frames.len()],
            energy: 0.0,
        })
    }
}

/// One ground-truth / detection comparison with its per-frame terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMatch {
    pub gamma: Vec<u32>,
    pub ious: Vec<f64>,
    pub score: f64,
}

impl EvalMatch {
    /// Recomputes the score from the per-frame IoUs.
    pub fn recompute(&self) -> f64 {
        if self.ious.is_empty() {
            0.0
        } else {
            self.ious.iter().sum::<f64>() / self.ious.len() as f64
        }
    }
}

/// Per-frame comparison of two tracks over `Gamma`.
pub fn match_tracks<A: Track, B: Track>(gt: &A, dt: &B, eligible: &BTreeSet<u32>) -> Result<EvalMatch> {
    if gt.clip_id() != dt.clip_id() {
        return Err(Error::contract(format!(
            "cannot compare tubes from clips {} and {}",
            gt.clip_id(),
            dt.clip_id()
        )));
    }
    let union: BTreeSet<u32> = gt.frame_set().union(&dt.frame_set()).copied().collect();
    let gamma: Vec<u32> = union.intersection(eligible).copied().collect();
    let ious: Vec<f64> = gamma
        .iter()
        .map(|&f| match (gt.box_at(f), dt.box_at(f)) {
            (Some(a), Some(b)) => iou(&a, &b),
            _ => 0.0,
        })
        .collect();
    if gamma.is_empty() {
        debug!("empty frame set for S_loc; scoring 0");
    }
    let mut m = EvalMatch { gamma, ious, score: 0.0 };
    m.score = m.recompute();
    Ok(m)
}

/// `S_loc` of a detected track against a ground truth.
pub fn localization_score<A: Track, B: Track>(gt: &A, dt: &B, eligible: &BTreeSet<u32>) -> Result<f64> {
    Ok(match_tracks(gt, dt, eligible)?.score)
}

/// Candidate tubes with their aggregated features as rows.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub ids: Vec<String>,
    pub features: DMatrix<f64>,
}

impl CandidateSet {
    pub fn new(ids: Vec<String>, features: DMatrix<f64>) -> Result<Self> {
        if ids.len() != features.nrows() {
            return Err(Error::contract("candidate ids and feature rows differ in count"));
        }
        Ok(CandidateSet { ids, features })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Rows whose id is in `keep`, in the original order.
    pub fn subset(&self, keep: &BTreeSet<&str>) -> CandidateSet {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| keep.contains(self.ids[i].as_str())).collect();
        CandidateSet {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            features: self.features.select_rows(&rows),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub tube_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub ranked: Vec<RankedEntry>,
}

impl RankedResult {
    /// Sorts by score descending, ties by id ascending.
    pub fn from_scores(query_id: impl Into<String>, ids: &[String], scores: &[f64]) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::contract("no candidates to rank"));
        }
        if ids.len() != scores.len() {
            return Err(Error::contract("ids and scores differ in count"));
        }
        let mut ranked: Vec<RankedEntry> = ids
            .iter()
            .zip(scores)
            .map(|(id, s)| RankedEntry {
                tube_id: id.clone(),
                score: *s,
            })
            .collect();
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tube_id.cmp(&b.tube_id)));
        Ok(RankedResult {
            query_id: query_id.into(),
            ranked,
        })
    }

    pub fn top(&self, k: usize) -> &[RankedEntry] {
        &self.ranked[..k.min(self.ranked.len())]
    }
}

/// Ranks every candidate for one description feature.
pub fn rank_tubes(
    query_id: &str,
    query: &DVector<f64>,
    candidates: &CandidateSet,
    model: &EmbeddingModel,
) -> Result<RankedResult> {
    if candidates.is_empty() {
        return Err(Error::contract("no candidates to rank"));
    }
    let q = DMatrix::from_row_slice(1, query.len(), query.as_slice());
    let scores = model.score_matrix(&candidates.features, &q)?;
    let row: Vec<f64> = scores.row(0).iter().copied().collect();
    RankedResult::from_scores(query_id, &candidates.ids, &row)
}

/// Ranks every candidate for each row of `queries`.
pub fn rank_all(
    query_ids: &[String],
    queries: &DMatrix<f64>,
    candidates: &CandidateSet,
    model: &EmbeddingModel,
) -> Result<Vec<RankedResult>> {
    if candidates.is_empty() {
        return Err(Error::contract("no candidates to rank"));
    }
    if query_ids.len() != queries.nrows() {
        return Err(Error::contract("query ids and feature rows differ in count"));
    }
    let scores = model.score_matrix(&candidates.features, queries)?;
    query_ids
        .iter()
        .enumerate()
        .map(|(q, id)| {
            let row: Vec<f64> = scores.row(q).iter().copied().collect();
            RankedResult::from_scores(id.clone(), &candidates.ids, &row)
        })
        .collect()
}

/// Rank (1-based) of the first true positive within the top `max_k`, if any.
/// Candidates from another clip, or missing from `tubes`, are never hits.
pub fn first_hit(
    result: &RankedResult,
    truth: &GroundTruth,
    tubes: &HashMap<String, Tube>,
    max_k: usize,
    threshold: f64,
) -> Result<Option<usize>> {
    for (r, entry) in result.top(max_k).iter().enumerate() {
        let Some(tube) = tubes.get(&entry.tube_id) else {
            warn!("ranked tube {} has no geometry", entry.tube_id);
            continue;
        };
        if tube.clip_id != truth.clip_id {
            continue;
        }
        if localization_score(truth, tube, &truth.eligible_frames)? > threshold {
            return Ok(Some(r + 1));
        }
    }
    Ok(None)
}

/// Fraction of queries with a true positive among their top `k` results.
/// `results[i]` is evaluated against `truths[i]`.
pub fn recall_at_k(
    results: &[RankedResult],
    truths: &[&GroundTruth],
    tubes: &HashMap<String, Tube>,
    k: usize,
    threshold: f64,
) -> Result<f64> {
    Ok(recall_table(results, truths, tubes, &[k], threshold)?[0].1)
}

/// Recall for several K at once, as `(K, recall)` in the given order.
pub fn recall_table(
    results: &[RankedResult],
    truths: &[&GroundTruth],
    tubes: &HashMap<String, Tube>,
    ks: &[usize],
    threshold: f64,
) -> Result<Vec<(usize, f64)>> {
    if ks.iter().any(|k| *k < 1) {
        return Err(Error::contract("K must be at least 1"));
    }
    if results.len() != truths.len() {
        return Err(Error::contract("results and ground truths differ in count"));
    }
    let max_k = ks.iter().copied().max().unwrap_or(1);
    let hits: Vec<Option<usize>> = results
        .iter()
        .zip(truths)
        .map(|(r, t)| first_hit(r, t, tubes, max_k, threshold))
        .collect::<Result<_>>()?;
    let n = results.len().max(1) as f64;
    Ok(ks
        .iter()
        .map(|&k| (k, hits.iter().filter(|h| matches!(h, Some(r) if *r <= k)).count() as f64 / n))
        .collect())
}

/// `K,recall` CSV.
pub fn recall_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("k,recall\n");
    for (k, r) in rows {
        s.push_str(&format!("{k},{r:.6}\n"));
    }
    s
}

/// Candidate tube ids grouped by clip.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipIndex {
    pub clips: BTreeMap<String, Vec<String>>,
}

impl ClipIndex {
    pub fn from_tubes(tubes: &[Tube]) -> Self {
        let mut clips: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for t in tubes {
            clips.entry(t.clip_id.clone()).or_default().push(t.id.clone());
        }
        ClipIndex { clips }
    }

    /// Registers a clip, possibly with no candidates.
    pub fn add_clip(&mut self, clip_id: impl Into<String>) {
        self.clips.entry(clip_id.into()).or_default();
    }
}

/// Maximum tube score within a clip; `-inf` when the clip has no candidates
/// or is unknown.
pub fn clip_score(tube_scores: &HashMap<String, f64>, clip_id: &str, index: &ClipIndex) -> f64 {
    index
        .clips
        .get(clip_id)
        .into_iter()
        .flatten()
        .filter_map(|id| tube_scores.get(id))
        .fold(f64::NEG_INFINITY, |m, s| m.max(*s))
}

/// Ranks clips by their clip score, ties by clip id ascending.
pub fn rank_clips(result: &RankedResult, index: &ClipIndex) -> Result<RankedResult> {
    let scores: HashMap<String, f64> = result.ranked.iter().map(|e| (e.tube_id.clone(), e.score)).collect();
    let ids: Vec<String> = index.clips.keys().cloned().collect();
    let clip_scores: Vec<f64> = ids.iter().map(|c| clip_score(&scores, c, index)).collect();
    RankedResult::from_scores(result.query_id.clone(), &ids, &clip_scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n_candidates: usize,
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
}

/// Re-selects the top `N_c` tubes from `pool` for each grid value and
/// evaluates retrieval with a fixed model. `features` must contain a row for
/// every pool tube.
#[allow(clippy::too_many_arguments)]
pub fn sweep_candidates(
    pool: &[Tube],
    features: &CandidateSet,
    query_ids: &[String],
    queries: &DMatrix<f64>,
    truths: &[&GroundTruth],
    model: &EmbeddingModel,
    n_grid: &[usize],
    threshold: f64,
) -> Result<Vec<SweepRow>> {
    let tubes: HashMap<String, Tube> = pool.iter().map(|t| (t.id.clone(), t.clone())).collect();
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n_c in n_grid {
        let selected = select_top_candidates(pool, n_c);
        let keep: BTreeSet<&str> = selected.iter().map(|t| t.id.as_str()).collect();
        let subset = features.subset(&keep);
        if subset.len() != keep.len() {
            return Err(Error::format("some pool tubes have no feature row"));
        }
        let (r1, r5, r10) = if subset.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            let results = rank_all(query_ids, queries, &subset, model)?;
            let t = recall_table(&results, truths, &tubes, &[1, 5, 10], threshold)?;
            (t[0].1, t[1].1, t[2].1)
        };
        rows.push(SweepRow {
            n_candidates: n_c,
            recall_at_1: r1,
            recall_at_5: r5,
            recall_at_10: r10,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("n_candidates,recall_at_1,recall_at_5,recall_at_10\n");
    for r in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.n_candidates, r.recall_at_1, r.recall_at_5, r.recall_at_10
        ));
    }
    s
}

/// Encodes a category name as a description and ranks the candidates for it.
pub fn action_query(
    name: &str,
    encoder: &TextEncoder,
    table: &WordVectorTable,
    candidates: &CandidateSet,
    model: &EmbeddingModel,
) -> Result<RankedResult> {
    let q = encoder.encode(name, table)?;
    rank_tubes(name, &q, candidates, model)
}
