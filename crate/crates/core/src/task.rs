//! Assembling a retrieval experiment from dataset files.
//!
//! Conventions: every annotation carries a `split` field (`train`, `val` or
//! `test`); description `k` of person `p` has feature id `{p}#{k}`; the
//! ground-truth tube of `p` has feature id `gt:{p}`. Training pairs use
//! ground-truth tubes, test queries are ranked against the top proposals of
//! the test clips.

use std::collections::{BTreeSet, HashMap};

use log::info;
use nalgebra::DMatrix;

use crate::embedding::{PairSet, ValidationSet};
use crate::error::{Error, Result};
use crate::eval::{CandidateSet, GroundTruth};
use crate::io::AnnotationRecord;
use crate::proposal::{select_top_candidates, Tube};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub n_candidates: usize,
    /// Cap on the number of test queries; `None` uses every description.
    pub max_queries: Option<usize>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            n_candidates: 350,
            max_queries: None,
        }
    }
}

pub fn desc_id(person_id: &str, k: usize) -> String {
    format!("{person_id}#{k}")
}

pub fn gt_tube_id(person_id: &str) -> String {
    format!("gt:{person_id}")
}

#[derive(Debug, Clone)]
pub struct RetrievalTask {
    pub train: PairSet,
    pub val: Option<ValidationSet>,
    /// Proposals of the test clips.
    pub pool: Vec<Tube>,
    pub pool_features: CandidateSet,
    /// The top `n_candidates` of the pool.
    pub candidates: CandidateSet,
    /// Geometry of every pool tube by id.
    pub tubes: HashMap<String, Tube>,
    pub query_ids: Vec<String>,
    pub queries: DMatrix<f64>,
    pub truths: Vec<GroundTruth>,
}

impl RetrievalTask {
    pub fn truth_refs(&self) -> Vec<&GroundTruth> {
        self.truths.iter().collect()
    }
}

struct Lookup<'a> {
    set: &'a CandidateSet,
    index: HashMap<&'a str, usize>,
}

impl<'a> Lookup<'a> {
    fn new(set: &'a CandidateSet) -> Self {
        Lookup {
            set,
            index: set.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect(),
        }
    }

    fn row(&self, id: &str, what: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::format(format!("no {what} feature with id {id:?}")))
    }

    fn rows(&self, rows: &[usize]) -> DMatrix<f64> {
        self.set.features.select_rows(rows)
    }
}

/// Builds train/val/test sets from annotations, description features, tube
/// features (ground-truth and proposal tubes) and the proposal pool.
pub fn build_task(
    annotations: &[AnnotationRecord],
    desc_features: &CandidateSet,
    tube_features: &CandidateSet,
    proposals: &[Tube],
    cfg: &TaskConfig,
) -> Result<RetrievalTask> {
    let descs = Lookup::new(desc_features);
    let tubes = Lookup::new(tube_features);
    let mut by_split: HashMap<&str, Vec<&AnnotationRecord>> = HashMap::new();
    for a in annotations {
        let split = a
            .split()
            .ok_or_else(|| Error::format(format!("annotation {} has no split", a.person_id)))?;
        if !matches!(split, "train" | "val" | "test") {
            return Err(Error::format(format!("annotation {} has unknown split {split:?}", a.person_id)));
        }
        by_split.entry(split).or_default().push(a);
    }
    let split = |s: &str| by_split.get(s).cloned().unwrap_or_default();

    let (mut tube_rows, mut desc_rows, mut groups) = (Vec::new(), Vec::new(), Vec::new());
    for (g, a) in split("train").iter().enumerate() {
        let t = tubes.row(&gt_tube_id(&a.person_id), "tube")?;
        for k in 0..a.descriptions.len() {
            tube_rows.push(t);
            desc_rows.push(descs.row(&desc_id(&a.person_id, k), "description")?);
            groups.push(g);
        }
    }
    let train = PairSet {
        tubes: tubes.rows(&tube_rows),
        descs: descs.rows(&desc_rows),
        groups,
    };

    let val_people = split("val");
    let val = if val_people.is_empty() {
        None
    } else {
        let q: Vec<usize> = val_people
            .iter()
            .map(|a| descs.row(&desc_id(&a.person_id, 0), "description"))
            .collect::<Result<_>>()?;
        let g: Vec<usize> = val_people
            .iter()
            .map(|a| tubes.row(&gt_tube_id(&a.person_id), "tube"))
            .collect::<Result<_>>()?;
        Some(ValidationSet {
            queries: descs.rows(&q),
            gallery: tubes.rows(&g),
            targets: (0..val_people.len()).collect(),
        })
    };

    let test_people = split("test");
    let test_clips: BTreeSet<&str> = test_people.iter().map(|a| a.clip_id.as_str()).collect();
    let pool: Vec<Tube> = proposals
        .iter()
        .filter(|t| test_clips.contains(t.clip_id.as_str()))
        .cloned()
        .collect();
    let pool_rows: Vec<usize> = pool.iter().map(|t| tubes.row(&t.id, "tube")).collect::<Result<_>>()?;
    let pool_features = CandidateSet::new(pool.iter().map(|t| t.id.clone()).collect(), tubes.rows(&pool_rows))?;
    let selected = select_top_candidates(&pool, cfg.n_candidates);
    let keep: BTreeSet<&str> = selected.iter().map(|t| t.id.as_str()).collect();
    let candidates = pool_features.subset(&keep);

    let rounds = test_people.iter().map(|a| a.descriptions.len()).max().unwrap_or(0);
    let limit = cfg.max_queries.unwrap_or(usize::MAX);
    let (mut query_ids, mut query_rows, mut truths) = (Vec::new(), Vec::new(), Vec::new());
    'outer: for k in 0..rounds {
        for a in &test_people {
            if query_ids.len() >= limit {
                break 'outer;
            }
            if k >= a.descriptions.len() {
                continue;
            }
            let id = desc_id(&a.person_id, k);
            query_rows.push(descs.row(&id, "description")?);
            query_ids.push(id);
            truths.push(a.ground_truth());
        }
    }
    info!(
        "task: {} train pairs, {} test queries, {} of {} pool tubes kept",
        train.len(),
        query_ids.len(),
        candidates.len(),
        pool.len()
    );
    Ok(RetrievalTask {
        train,
        val,
        tubes: pool.iter().map(|t| (t.id.clone(), t.clone())).collect(),
        pool,
        pool_features,
        candidates,
        query_ids,
        queries: descs.rows(&query_rows),
        truths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::tube_features;
    use crate::synth::{generate, SynthConfig};

    #[test]
    fn synthetic_task_shapes() {
        let cfg = SynthConfig {
            clips: 10,
            frames_per_clip: 6,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let feats = tube_features(&ds.block_index, &ds.block_matrix, &cfg.layout()).unwrap();
        let task = build_task(
            &ds.annotations,
            &ds.desc_features,
            &feats,
            &ds.tubes,
            &TaskConfig {
                n_candidates: 3,
                max_queries: Some(7),
            },
        )
        .unwrap();
        // 7 train clips x 3 people x 5 descriptions
        assert_eq!(task.train.len(), 105);
        assert_eq!(task.val.as_ref().unwrap().targets.len(), 3);
        assert_eq!(task.query_ids.len(), 7);
        assert!(task.pool.len() > 3);
        assert_eq!(task.candidates.len(), 3);
        assert!(task.query_ids[0].ends_with("#0"));
        assert!(task.query_ids[6].ends_with("#1"));
    }

    #[test]
    fn missing_split_is_an_error() {
        let cfg = SynthConfig {
            clips: 2,
            frames_per_clip: 4,
            ..Default::default()
        };
        let mut ds = generate(&cfg).unwrap();
        ds.annotations[0].extra.remove("split");
        let feats = tube_features(&ds.block_index, &ds.block_matrix, &cfg.layout()).unwrap();
        assert!(build_task(&ds.annotations, &ds.desc_features, &feats, &ds.tubes, &TaskConfig::default()).is_err());
    }
}
