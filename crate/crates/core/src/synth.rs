//! Synthetic datasets with a planted shared latent.
//!
//! Each clip has people walking in separate horizontal lanes. Every person
//! gets attributes (shirt and pants colour, action, gender) and a latent
//! vector made of attribute embeddings plus an identity term. Tube feature
//! blocks are linear images of the IoU-weighted latent of whoever the tube
//! covers, description features a different linear image of the person's
//! latent, both with Gaussian noise.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::eval::CandidateSet;
use crate::features::{BlockKind, FeatureLayout};
use crate::io::{
    write_feature_set, write_jsonl_file, AnnotationRecord, BlockIndex, BlockRow, BoxRecord, DetectionRecord, ScoredBox,
    TubeRecord,
};
use crate::proposal::{iou, propose_all, BBox, Detection, Tube};
use crate::text::WordVectorTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub clips: usize,
    pub frames_per_clip: u32,
    pub people_per_clip: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    /// Standard deviation of detection corner jitter, in pixels.
    pub box_jitter: f64,
    /// Probability that a frame gets one spurious low-score detection.
    pub false_positive_rate: f64,
    /// Probability that a true box is not detected.
    pub miss_rate: f64,
    /// Probability that a frame is eligible for annotation.
    pub eligible_fraction: f64,
    pub latent_dim: usize,
    /// Dimension of each of the six tube feature blocks.
    pub block_dim: usize,
    pub desc_dim: usize,
    pub word_dim: usize,
    /// Scale of the per-person identity term relative to the attributes.
    pub identity_scale: f64,
    pub tube_noise: f64,
    pub desc_noise: f64,
    /// Linking weight used to build the proposal pool.
    pub lambda: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            clips: 20,
            frames_per_clip: 12,
            people_per_clip: 3,
            frame_width: 640.0,
            frame_height: 360.0,
            box_jitter: 2.0,
            false_positive_rate: 0.2,
            miss_rate: 0.02,
            eligible_fraction: 0.9,
            latent_dim: 16,
            block_dim: 16,
            desc_dim: 32,
            word_dim: 8,
            identity_scale: 1.0,
            tube_noise: 0.1,
            desc_noise: 0.05,
            lambda: 1.0,
            train_fraction: 0.67,
            val_fraction: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("false_positive_rate", self.false_positive_rate),
            ("miss_rate", self.miss_rate),
            ("eligible_fraction", self.eligible_fraction),
            ("train_fraction", self.train_fraction),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract(format!("{name} must be in [0, 1]")));
            }
        }
        if self.train_fraction + self.val_fraction > 1.0 {
            return Err(Error::contract("train_fraction + val_fraction exceeds 1"));
        }
        for (name, v) in [
            ("box_jitter", self.box_jitter),
            ("tube_noise", self.tube_noise),
            ("desc_noise", self.desc_noise),
            ("identity_scale", self.identity_scale),
        ] {
            if !(v >= 0.0) {
                return Err(Error::contract(format!("{name} must be >= 0")));
            }
        }
        if self.clips == 0 || self.frames_per_clip == 0 || self.people_per_clip == 0 {
            return Err(Error::contract("clips, frames and people must be positive"));
        }
        if self.latent_dim == 0 || self.block_dim == 0 || self.desc_dim == 0 || self.word_dim == 0 {
            return Err(Error::contract("dimensions must be positive"));
        }
        if self.frame_height / (self.people_per_clip as f64) < 20.0 || self.frame_width < 100.0 {
            return Err(Error::contract("frame too small for the requested number of people"));
        }
        Ok(())
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout::full(self.block_dim)
    }
}

const SHIRTS: [&str; 8] = ["red", "blue", "green", "yellow", "black", "white", "gray", "orange"];
const PANTS: [&str; 6] = ["blue", "black", "gray", "brown", "white", "green"];
const ACTIONS: [&str; 6] = ["running", "walking", "standing", "jumping", "talking", "sitting"];
const GENDERS: [&str; 2] = ["man", "woman"];
const FILLER: [&str; 14] = [
    "a", "the", "in", "and", "is", "shirt", "pants", "wearing", "with", "across", "scene", "who", "person", "of",
];

/// Every word the generator can emit.
pub fn vocabulary() -> Vec<String> {
    let mut words: Vec<String> = Vec::new();
    for w in FILLER.iter().chain(&SHIRTS).chain(&PANTS).chain(&ACTIONS).chain(&GENDERS) {
        if !words.iter().any(|x| x == w) {
            words.push(w.to_string());
        }
    }
    words
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Attributes {
    shirt: usize,
    pants: usize,
    action: usize,
    gender: usize,
}

fn describe(a: Attributes, k: usize) -> String {
    let (s, p, act, g) = (SHIRTS[a.shirt], PANTS[a.pants], ACTIONS[a.action], GENDERS[a.gender]);
    match k % 5 {
        0 => format!("a {g} in a {s} shirt and {p} pants is {act}"),
        1 => format!("the {g} wearing a {s} shirt is {act}"),
        2 => format!("{g} with {p} pants {act} across the scene"),
        3 => format!("a {s} shirt {g} who is {act}"),
        _ => format!("person in {p} pants and a {s} shirt {act}"),
    }
}

/// Everything `synth` writes, held in memory.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub detections: Vec<DetectionRecord>,
    pub annotations: Vec<AnnotationRecord>,
    /// Proposal pool over all clips.
    pub tubes: Vec<Tube>,
    pub words: WordVectorTable,
    /// Ids are `{person_id}#{k}` for description `k`.
    pub desc_features: CandidateSet,
    /// Rows for ground-truth tubes (`gt:{person_id}`) and every pool tube.
    pub block_index: BlockIndex,
    pub block_matrix: DMatrix<f64>,
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = Normal::new(0.0, std).unwrap();
    DMatrix::from_fn(rows, cols, |_, _| n.sample(rng))
}

fn gaussian_vector(len: usize, std: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = Normal::new(0.0, std).unwrap();
    DVector::from_fn(len, |_, _| n.sample(rng))
}

fn clamp_box(b: [f64; 4], w: f64, h: f64, clamped: &mut usize) -> BBox {
    let x1 = b[0].clamp(0.0, w - 2.0);
    let y1 = b[1].clamp(0.0, h - 2.0);
    let x2 = b[2].clamp(x1 + 1.0, w);
    let y2 = b[3].clamp(y1 + 1.0, h);
    if (x1, y1, x2, y2) != (b[0], b[1], b[2], b[3]) {
        *clamped += 1;
    }
    BBox { x1, y1, x2, y2 }
}

struct Person {
    id: String,
    clip: usize,
    attrs: Attributes,
    latent: DVector<f64>,
    boxes: Vec<BBox>,
    /// Detector confidence level, shared by all of the person's detections.
    base_score: f64,
}

/// Generates a dataset; the result depends only on the configuration.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.frame_width, cfg.frame_height);
    let l = cfg.latent_dim;
    let unit = 1.0 / (l as f64).sqrt();

    let emb_shirt = gaussian_matrix(SHIRTS.len(), l, unit, &mut rng);
    let emb_pants = gaussian_matrix(PANTS.len(), l, unit, &mut rng);
    let emb_action = gaussian_matrix(ACTIONS.len(), l, unit, &mut rng);
    let emb_gender = gaussian_matrix(GENDERS.len(), l, unit, &mut rng);
    let block_maps: Vec<DMatrix<f64>> = (0..6).map(|_| gaussian_matrix(cfg.block_dim, l, unit, &mut rng)).collect();
    let desc_map = gaussian_matrix(cfg.desc_dim, l, unit, &mut rng);

    let vocab = vocabulary();
    let laplace_rows: Vec<f64> = (0..vocab.len() * cfg.word_dim)
        .map(|_| {
            let u: f64 = rng.random_range(-0.5..0.5);
            -u.signum() * (1.0 - 2.0 * u.abs()).ln()
        })
        .collect();
    let n_words = vocab.len();
    let words = WordVectorTable::new(vocab, DMatrix::from_row_slice(n_words, cfg.word_dim, &laplace_rows))?;

    let n_train = (cfg.clips as f64 * cfg.train_fraction).round() as usize;
    let n_val = (cfg.clips as f64 * cfg.val_fraction).round() as usize;
    let lane_h = h / cfg.people_per_clip as f64;
    let mut clamped = 0usize;
    let mut people: Vec<Person> = Vec::new();
    let mut detections = Vec::new();
    let mut annotations = Vec::new();
    let mut contexts = Vec::new();

    for c in 0..cfg.clips {
        let clip_id = format!("clip{c:04}");
        let split = if c < n_train {
            "train"
        } else if c < n_train + n_val {
            "val"
        } else {
            "test"
        };
        let first = people.len();
        for p in 0..cfg.people_per_clip {
            let attrs = Attributes {
                shirt: rng.random_range(0..SHIRTS.len()),
                pants: rng.random_range(0..PANTS.len()),
                action: rng.random_range(0..ACTIONS.len()),
                gender: rng.random_range(0..GENDERS.len()),
            };
            let latent = emb_shirt.row(attrs.shirt).transpose()
                + emb_pants.row(attrs.pants).transpose()
                + emb_action.row(attrs.action).transpose()
                + emb_gender.row(attrs.gender).transpose()
                + gaussian_vector(l, unit * cfg.identity_scale, &mut rng);
            let bh = 0.8 * lane_h;
            let bw = (0.45 * bh).min(w / 4.0);
            let y0 = p as f64 * lane_h + 0.1 * lane_h;
            let mut x = rng.random_range(0.0..(w - bw));
            let mut v: f64 = rng.random_range(-15.0..15.0);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut boxes = Vec::with_capacity(cfg.frames_per_clip as usize);
            for t in 0..cfg.frames_per_clip {
                let dy = 0.05 * lane_h * (phase + 0.5 * t as f64).sin();
                boxes.push(clamp_box([x, y0 + dy, x + bw, y0 + dy + bh], w, h, &mut clamped));
                x += v;
                if x < 0.0 || x + bw > w {
                    v = -v;
                    x = x.clamp(0.0, w - bw);
                }
            }
            people.push(Person {
                id: format!("{clip_id}_p{p}"),
                clip: c,
                attrs,
                latent,
                boxes,
                base_score: rng.random_range(0.75..0.98),
            });
        }
        let clip_people = &people[first..];
        let mean_latent = clip_people.iter().fold(DVector::zeros(l), |acc, p| acc + &p.latent) / clip_people.len() as f64;
        contexts.push(mean_latent + gaussian_vector(l, unit, &mut rng));

        for t in 0..cfg.frames_per_clip {
            let mut boxes = Vec::new();
            for p in clip_people {
                if rng.random::<f64>() < cfg.miss_rate {
                    continue;
                }
                let b = p.boxes[t as usize];
                let j = Normal::new(0.0, cfg.box_jitter.max(f64::MIN_POSITIVE)).unwrap();
                let mut jit = |v: f64| if cfg.box_jitter > 0.0 { v + j.sample(&mut rng) } else { v };
                let coords = [jit(b.x1), jit(b.y1), jit(b.x2), jit(b.y2)];
                let score = (p.base_score + 0.02 * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0);
                boxes.push(ScoredBox::new(&clamp_box(coords, w, h, &mut clamped), score));
            }
            if rng.random::<f64>() < cfg.false_positive_rate {
                let fw = rng.random_range(30.0..80.0);
                let fh = rng.random_range(40.0..lane_h.max(41.0));
                let fx = rng.random_range(0.0..(w - fw));
                let fy = rng.random_range(0.0..(h - fh).max(1.0));
                let score = rng.random_range(0.05..0.3);
                boxes.push(ScoredBox::new(&clamp_box([fx, fy, fx + fw, fy + fh], w, h, &mut clamped), score));
            }
            detections.push(DetectionRecord {
                clip_id: clip_id.clone(),
                frame: t,
                boxes,
                extra: Map::new(),
            });
        }

        for p in clip_people {
            let mut eligible: Vec<u32> = (0..cfg.frames_per_clip)
                .filter(|_| rng.random::<f64>() < cfg.eligible_fraction)
                .collect();
            if eligible.is_empty() {
                eligible.push(rng.random_range(0..cfg.frames_per_clip));
            }
            let mut extra = Map::new();
            extra.insert("split".into(), Value::from(split));
            extra.insert(
                "attributes".into(),
                serde_json::json!({
                    "shirt": SHIRTS[p.attrs.shirt],
                    "pants": PANTS[p.attrs.pants],
                    "action": ACTIONS[p.attrs.action],
                    "gender": GENDERS[p.attrs.gender],
                }),
            );
            annotations.push(AnnotationRecord {
                person_id: p.id.clone(),
                clip_id: clip_id.clone(),
                eligible_frames: eligible,
                boxes: p.boxes.iter().enumerate().map(|(t, b)| (t as u32, BoxRecord::new(b))).collect(),
                descriptions: (0..5).map(|k| describe(p.attrs, k)).collect(),
                extra,
            });
        }
    }
    if clamped > 0 {
        debug!("clamped {clamped} boxes to the frame");
    }

    let mut desc_ids = Vec::with_capacity(people.len() * 5);
    let mut desc_rows = Vec::with_capacity(people.len() * 5);
    for p in &people {
        let clean = &desc_map * &p.latent;
        for k in 0..5 {
            desc_ids.push(format!("{}#{k}", p.id));
            desc_rows.push(&clean + gaussian_vector(cfg.desc_dim, cfg.desc_noise, &mut rng));
        }
    }
    let desc_features = CandidateSet::new(desc_ids, crate::linalg::rows_to_matrix(&desc_rows)?)?;

    let flat: Vec<Detection> = detections.iter().flat_map(DetectionRecord::detections).collect();
    let tubes = propose_all(&flat, cfg.lambda)?;
    info!("synth: {} people, {} proposal tubes", people.len(), tubes.len());

    let mut by_clip: BTreeMap<&str, Vec<&Tube>> = BTreeMap::new();
    for t in &tubes {
        by_clip.entry(t.clip_id.as_str()).or_default().push(t);
    }
    let gt_tubes: Vec<Tube> = people
        .iter()
        .map(|p| Tube {
            id: format!("gt:{}", p.id),
            clip_id: format!("clip{:04}", p.clip),
            start_frame: 0,
            boxes: p.boxes.clone(),
            scores: vec![1.0; p.boxes.len()],
            energy: 0.0,
        })
        .collect();
    let layout = cfg.layout();
    let mut rows = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for c in 0..cfg.clips {
        let clip_id = format!("clip{c:04}");
        let clip_people: Vec<&Person> = people.iter().filter(|p| p.clip == c).collect();
        let members = gt_tubes
            .iter()
            .filter(|t| t.clip_id == clip_id)
            .chain(by_clip.get(clip_id.as_str()).into_iter().flatten().copied());
        for tube in members {
            for frame in tube.frames() {
                let b = tube.box_at(frame).expect("frame within tube");
                // IoU-weighted mix, normalized once the total overlap reaches 0.5
                let mut z = DVector::zeros(l);
                let mut total = 0.0;
                for p in &clip_people {
                    let wgt = iou(b, &p.boxes[frame as usize]);
                    if wgt > 0.0 {
                        z += &p.latent * wgt;
                        total += wgt;
                    }
                }
                z /= f64::max(total, 0.5);
                for (bi, kind) in BlockKind::ALL.iter().enumerate() {
                    let source = match kind {
                        BlockKind::RgbTube | BlockKind::FlowTube | BlockKind::C3dTube => &z,
                        _ => &contexts[c],
                    };
                    let v = &block_maps[bi] * source + gaussian_vector(cfg.block_dim, cfg.tube_noise, &mut rng);
                    values.extend(v.iter());
                }
                rows.push(BlockRow {
                    tube_id: tube.id.clone(),
                    second: frame,
                    row: rows.len(),
                });
            }
        }
    }
    let block_matrix = DMatrix::from_row_slice(rows.len(), layout.dim(), &values);
    let block_index = BlockIndex {
        layout,
        matrix: "blocks.fmat".into(),
        rows,
    };
    Ok(SynthDataset {
        config: cfg.clone(),
        detections,
        annotations,
        tubes,
        words,
        desc_features,
        block_index,
        block_matrix,
    })
}

impl SynthDataset {
    /// Writes the dataset files into `dir` (created if missing).
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_jsonl_file(&dir.join("detections.jsonl"), &self.detections)?;
        write_jsonl_file(&dir.join("annotations.jsonl"), &self.annotations)?;
        let tubes: Vec<TubeRecord> = self.tubes.iter().map(TubeRecord::from_tube).collect();
        write_jsonl_file(&dir.join("tubes.jsonl"), &tubes)?;
        let mut words = Vec::new();
        self.words.write(&mut words)?;
        fs::write(dir.join("words.txt"), words)?;
        write_feature_set(&dir.join("desc_features.fmat"), &self.desc_features)?;
        self.block_index.save(&dir.join("blocks.json"), &self.block_matrix)?;
        fs::write(dir.join("synth_config.json"), serde_json::to_vec_pretty(&self.config)?)?;
        Ok(())
    }
}
