//! JSON-lines records for detections, annotations, tubes and retrieval
//! results. Unknown fields are kept and written back.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::eval::GroundTruth;
use crate::proposal::{BBox, Detection, Tube};

/// Schema checks beyond what deserialization enforces.
pub trait Record: Serialize + DeserializeOwned {
    fn check(&self) -> std::result::Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub score: f64,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ScoredBox {
    pub fn new(b: &BBox, score: f64) -> Self {
        ScoredBox {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            score,
            extra: Map::new(),
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl BoxRecord {
    pub fn new(b: &BBox) -> Self {
        BoxRecord {
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            extra: Map::new(),
        }
    }

    pub fn bbox(&self) -> BBox {
        BBox {
            x1: self.x1,
            y1: self.y1,
            x2: self.x2,
            y2: self.y2,
        }
    }
}

fn check_box(b: &BBox, what: &str) -> std::result::Result<(), String> {
    b.validate().map_err(|e| format!("{what}: {e}"))
}

/// All detections of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub clip_id: String,
    pub frame: u32,
    pub boxes: Vec<ScoredBox>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DetectionRecord {
    pub fn detections(&self) -> Vec<Detection> {
        self.boxes
            .iter()
            .map(|b| Detection::new(self.clip_id.clone(), self.frame, b.bbox(), b.score))
            .collect()
    }
}

impl Record for DetectionRecord {
    fn check(&self) -> std::result::Result<(), String> {
        for (i, b) in self.boxes.iter().enumerate() {
            check_box(&b.bbox(), &format!("boxes[{i}]"))?;
            if !b.score.is_finite() {
                return Err(format!("boxes[{i}]: score must be finite"));
            }
        }
        Ok(())
    }
}

/// Number of descriptions each annotated person carries.
pub const DESCRIPTIONS_PER_PERSON: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub person_id: String,
    pub clip_id: String,
    pub eligible_frames: Vec<u32>,
    pub boxes: BTreeMap<u32, BoxRecord>,
    pub descriptions: Vec<String>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl AnnotationRecord {
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            person_id: self.person_id.clone(),
            clip_id: self.clip_id.clone(),
            eligible_frames: self.eligible_frames.iter().copied().collect::<BTreeSet<u32>>(),
            boxes: self.boxes.iter().map(|(f, b)| (*f, b.bbox())).collect(),
        }
    }

    /// The `split` extra field, if present.
    pub fn split(&self) -> Option<&str> {
        self.extra.get("split").and_then(Value::as_str)
    }
}

impl Record for AnnotationRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.descriptions.len() != DESCRIPTIONS_PER_PERSON {
            return Err(format!(
                "expected {DESCRIPTIONS_PER_PERSON} descriptions, found {}",
                self.descriptions.len()
            ));
        }
        for (f, b) in &self.boxes {
            check_box(&b.bbox(), &format!("boxes[{f}]"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeRecord {
    pub tube_id: String,
    pub clip_id: String,
    pub start_frame: u32,
    pub boxes: Vec<ScoredBox>,
    pub energy: f64,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl TubeRecord {
    pub fn from_tube(t: &Tube) -> Self {
        TubeRecord {
            tube_id: t.id.clone(),
            clip_id: t.clip_id.clone(),
            start_frame: t.start_frame,
            boxes: t.boxes.iter().zip(&t.scores).map(|(b, s)| ScoredBox::new(b, *s)).collect(),
            energy: t.energy,
            extra: Map::new(),
        }
    }

    pub fn tube(&self) -> Tube {
        Tube {
            id: self.tube_id.clone(),
            clip_id: self.clip_id.clone(),
            start_frame: self.start_frame,
            boxes: self.boxes.iter().map(ScoredBox::bbox).collect(),
            scores: self.boxes.iter().map(|b| b.score).collect(),
            energy: self.energy,
        }
    }
}

impl Record for TubeRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.boxes.is_empty() {
            return Err("tube has no boxes".into());
        }
        for (i, b) in self.boxes.iter().enumerate() {
            check_box(&b.bbox(), &format!("boxes[{i}]"))?;
        }
        Ok(())
    }
}

/// One ranked list per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub query_id: String,
    pub tube_ids: Vec<String>,
    pub scores: Vec<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Record for ResultRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.tube_ids.len() != self.scores.len() {
            return Err("tube_ids and scores differ in length".into());
        }
        Ok(())
    }
}

/// A description to encode, as read by `encode-text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Record for QueryRecord {}

/// Parses one record per non-blank line. Errors carry the 1-based line number.
pub fn read_jsonl<T: Record, R: BufRead>(reader: R, source: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| Error::Schema {
            path: source.to_string(),
            line: i + 1,
            message,
        };
        let rec: T = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        rec.check().map_err(schema)?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Record, W: Write>(mut w: W, records: &[T]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl_file<T: Record>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path)?;
    read_jsonl(BufReader::new(f), &path.display().to_string())
}

pub fn write_jsonl_file<T: Record>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    fs::write(path, buf)?;
    Ok(())
}
