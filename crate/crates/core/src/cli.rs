//! Command-line interface.
//!
//! Every subcommand accepts `--seed` and `--config <file.json>`. The config
//! file is a flat JSON object keyed by flag name (`n_candidates` or
//! `n-candidates`); a flag given on the command line wins over the file,
//! which wins over the built-in default.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Debug;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::embedding::{
    fit_cca, history_csv, train_embedding, Architecture, CcaConfig, EmbedTrainConfig, EmbeddingModel, LossConfig,
    Method,
};
use crate::error::Error;
use crate::eval::{rank_all, recall_csv, recall_table, sweep_csv, sweep_candidates, CandidateSet, GroundTruth, RankedResult};
use crate::features::FeatureLayout;
use crate::io::{
    load_embedding, load_text_encoder, read_feature_set, read_jsonl_file, save_embedding, save_text_encoder,
    tube_features, write_feature_set, write_jsonl_file, AnnotationRecord, BlockIndex, DetectionRecord, QueryRecord,
    ResultRecord, TubeRecord,
};
use crate::proposal::{propose_all, select_top_candidates, Detection, ProposalConfig, Tube};
use crate::synth::{generate, SynthConfig};
use crate::task::{build_task, desc_id, TaskConfig};
use crate::text::{FvParts, TextEncoder, TextEncoderConfig, WordVectorTable};

#[derive(Debug, Parser)]
#[command(name = "tubesearch", version, about = "Natural-language retrieval of person tubes in video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Random seed (default 0)
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON file with default values for any flag of this subcommand
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Link per-frame detections into candidate tubes
    Propose(ProposeArgs),
    /// Fit the description encoder and encode descriptions or queries
    EncodeText(EncodeTextArgs),
    /// Mean-pool per-second feature blocks into tube features
    Features(FeaturesArgs),
    /// Fit a CCA model or train a DSPE / DSPE++ network
    Train(TrainArgs),
    /// Rank candidate tubes for queries
    Retrieve(RetrieveArgs),
    /// Recall@K of retrieval results under the localization-score rule
    Eval(EvalArgs),
    /// Retrieval accuracy across candidate counts
    Sweep(SweepArgs),
    /// Generate a synthetic dataset
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct ProposeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Detections JSONL
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Output JSONL of the selected candidate tubes
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional output JSONL of every proposed tube before selection
    #[arg(long)]
    pub pool_out: Option<PathBuf>,
    /// IoU weight in the linking score (default 1.0)
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Number of candidates kept over the whole input (default 350)
    #[arg(long)]
    pub n_candidates: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EncodeTextArgs {
    #[command(flatten)]
    pub common: Common,
    /// Word vectors, one `word v1 .. vD` per line
    #[arg(long)]
    pub words: Option<PathBuf>,
    /// Annotations JSONL; train-split descriptions fit the encoder
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Queries JSONL (`query_id`, `text`) to encode instead of the annotation descriptions
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Load a fitted encoder instead of fitting one
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Save the fitted encoder here
    #[arg(long)]
    pub encoder_out: Option<PathBuf>,
    /// Output feature set
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Mixture components (default 30)
    #[arg(long)]
    pub k_centers: Option<usize>,
    /// PCA output dimension, 0 to skip PCA (default 1000)
    #[arg(long)]
    pub pca_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub common: Common,
    /// Block index JSON
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// `full` or a comma-separated list of blocks (default full)
    #[arg(long)]
    pub layout: Option<String>,
    /// Output feature set
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// cca, dspe or dspepp (default dspepp)
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub tube_features: Option<PathBuf>,
    #[arg(long)]
    pub desc_features: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Output model file
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-epoch CSV (epoch, objective, validation R@1)
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub output_dim: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub alpha3: Option<f64>,
    #[arg(long)]
    pub alpha4: Option<f64>,
    /// CCA ridge (default 1e-4)
    #[arg(long)]
    pub reg: Option<f64>,
    /// CCA components (default all)
    #[arg(long)]
    pub components: Option<usize>,
    /// L2-normalize CCA inputs
    #[arg(long)]
    pub l2_normalize: Option<bool>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tube feature set to rank
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    /// Restrict candidates to the tubes in this JSONL
    #[arg(long)]
    pub tubes: Option<PathBuf>,
    /// Query feature set (.fmat) or queries JSONL
    #[arg(long)]
    pub query_file: Option<PathBuf>,
    /// A single query string
    #[arg(long)]
    pub query: Option<String>,
    /// Text encoder, needed for text queries
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Word vectors, needed for text queries
    #[arg(long)]
    pub words: Option<PathBuf>,
    /// Results kept per query (default 10)
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Output JSONL (default stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Results JSONL from `retrieve`
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Geometry of the ranked tubes
    #[arg(long)]
    pub tubes: Option<PathBuf>,
    /// S_loc must be strictly above this (default 0.5)
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Comma-separated K values (default 1,5,10)
    #[arg(long)]
    pub ks: Option<String>,
    /// Output CSV (default stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub tube_features: Option<PathBuf>,
    #[arg(long)]
    pub desc_features: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Proposal pool JSONL
    #[arg(long)]
    pub tubes: Option<PathBuf>,
    /// Comma-separated candidate counts (default 100,350,700)
    #[arg(long)]
    pub nc_grid: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub max_queries: Option<usize>,
    /// Output CSV (default stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub frames: Option<u32>,
    #[arg(long)]
    pub people: Option<usize>,
    #[arg(long)]
    pub box_jitter: Option<f64>,
    #[arg(long)]
    pub false_positive_rate: Option<f64>,
    #[arg(long)]
    pub miss_rate: Option<f64>,
    #[arg(long)]
    pub eligible_fraction: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub block_dim: Option<usize>,
    #[arg(long)]
    pub desc_dim: Option<usize>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub tube_noise: Option<f64>,
    #[arg(long)]
    pub desc_noise: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Contract(msg) => CliError::Usage(msg),
            other => CliError::Data(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Flag values merged with an optional config file.
pub struct Settings {
    values: Map<String, Value>,
}

impl Settings {
    pub fn load(common: &Common) -> CliResult<Self> {
        let Some(path) = &common.config else {
            return Ok(Settings { values: Map::new() });
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(obj) = value else {
            return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
        };
        let values = obj.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect();
        Ok(Settings { values })
    }

    /// Flag if given, else config entry, else `None`.
    pub fn opt<T: DeserializeOwned + Serialize + PartialEq + Debug>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        let from_config = match self.values.get(key) {
            Some(v) => Some(
                serde_json::from_value::<T>(v.clone())
                    .map_err(|e| CliError::Usage(format!("config entry {key:?}: {e}")))?,
            ),
            None => None,
        };
        match (flag, from_config) {
            (Some(f), Some(c)) => {
                if f != c {
                    warn!("--{} {:?} overrides config value {:?}", key.replace('_', "-"), f, c);
                }
                Ok(Some(f))
            }
            (Some(f), None) => Ok(Some(f)),
            (None, c) => Ok(c),
        }
    }

    pub fn get<T: DeserializeOwned + Serialize + PartialEq + Debug>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        Ok(self.opt(key, flag)?.unwrap_or(default))
    }

    pub fn require<T: DeserializeOwned + Serialize + PartialEq + Debug>(&self, key: &str, flag: Option<T>) -> CliResult<T> {
        self.opt(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("missing required --{}", key.replace('_', "-"))))
    }

    pub fn seed(&self, common: &Common) -> CliResult<u64> {
        self.get("seed", common.seed, 0)
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|_| CliError::Usage(format!("bad {what} entry {t:?}"))))
        .collect()
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(e.into())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).map_err(|e| CliError::Data(e.into()))
        }
    }
}

fn read_tubes(path: &Path) -> CliResult<Vec<Tube>> {
    let recs: Vec<TubeRecord> = read_jsonl_file(path)?;
    Ok(recs.iter().map(TubeRecord::tube).collect())
}

fn read_words(path: &Path) -> CliResult<WordVectorTable> {
    let f = fs::File::open(path).map_err(|e| CliError::Data(e.into()))?;
    Ok(WordVectorTable::read(std::io::BufReader::new(f), &path.display().to_string())?)
}

fn cmd_propose(a: &ProposeArgs) -> CliResult<()> {
    let s = Settings::load(&a.common)?;
    let _seed = s.seed(&a.common)?;
    let detections: PathBuf = s.require("detections", a.detections.clone())?;
    let out: PathBuf = s.require("out", a.out.clone())?;
    let pool_out: Option<PathBuf> = s.opt("pool_out", a.pool_out.clone())?;
    let defaults = ProposalConfig::default();
    let cfg = ProposalConfig {
        lambda: s.get("lambda", a.lambda, defaults.lambda)?,
        n_candidates: s.get("n_candidates", a.n_candidates, defaults.n_candidates)?,
        ..defaults
    };
    cfg.validate()?;
    let recs: Vec<DetectionRecord> = read_jsonl_file(&detections)?;
    let flat: Vec<Detection> = recs.iter().flat_map(DetectionRecord::detections).collect();
    let pool = propose_all(&flat, cfg.lambda)?;
    let selected = select_top_candidates(&pool, cfg.n_candidates);
    info!("proposed {} tubes, kept {}", pool.len(), selected.len());
    if let Some(p) = pool_out {
        write_jsonl_file(&p, &pool.iter().map(TubeRecord::from_tube).collect::<Vec<_>>())?;
    }
    write_jsonl_file(&out, &selected.iter().map(TubeRecord::from_tube).collect::<Vec<_>>())?;
    Ok(())
}

fn cmd_encode_text(a: &EncodeTextArgs) -> CliResult<()> {
    let s = Settings::load(&a.common)?;
    let seed = s.seed(&a.common)?;
    let words: PathBuf = s.require("words", a.words.clone())?;
    let out: PathBuf = s.require("out", a.out.clone())?;
    let annotations: Option<PathBuf> = s.opt("annotations", a.annotations.clone())?;
    let queries: Option<PathBuf> = s.opt("queries", a.queries.clone())?;
    let encoder_in: Option<PathBuf> = s.opt("encoder", a.encoder.clone())?;
    if encoder_in.is_none() && annotations.is_none() {
        return Err(CliError::Usage("fitting the encoder needs --annotations".into()));
    }
    if annotations.is_none() && queries.is_none() {
        return Err(CliError::Usage("nothing to encode: give --annotations or --queries".into()));
    }
    let table = read_words(&words)?;
    let anns: Vec<AnnotationRecord> = match &annotations {
        Some(p) => read_jsonl_file(p)?,
        None => Vec::new(),
    };
    let encoder = match encoder_in {
        Some(p) => load_text_encoder(&p)?,
        None => {
            let texts: Vec<String> = anns
                .iter()
                .filter(|r| r.split().is_none_or(|sp| sp == "train"))
                .flat_map(|r| r.descriptions.iter().cloned())
                .collect();
            let pca_dim = s.get("pca_dim", a.pca_dim, 1000)?;
            let cfg = TextEncoderConfig {
                k_centers: s.get("k_centers", a.k_centers, 30)?,
                pca_dim: (pca_dim > 0).then_some(pca_dim),
                parts: FvParts::LocationScale,
                seed,
            };
            let enc = TextEncoder::fit(&texts, &table, &cfg)?;
            if let Some(p) = s.opt::<PathBuf>("encoder_out", a.encoder_out.clone())? {
                save_text_encoder(&p, &enc)?;
            }
            enc
        }
    };
    let items: Vec<(String, String)> = match &queries {
        Some(p) => {
            let recs: Vec<QueryRecord> = read_jsonl_file(p)?;
            recs.into_iter().map(|q| (q.query_id, q.text)).collect()
        }
        None => anns
            .iter()
            .flat_map(|r| {
                r.descriptions
                    .iter()
                    .enumerate()
                    .map(|(k, d)| (desc_id(&r.person_id, k), d.clone()))
            })
            .collect(),
    };
    let mut rows = Vec::with_capacity(items.len());
    for (id, text) in &items {
        let v = encoder
            .encode(text, &table)
            .map_err(|e| CliError::Data(Error::format(format!("description {id}: {e}"))))?;
        rows.push(v);
    }
    let features = if rows.is_empty() {
        DMatrix::zeros(0, encoder.output_dim())
    } else {
        crate::linalg::rows_to_matrix(&rows)?
    };
    let set = CandidateSet::new(items.into_iter().map(|(id, _)| id).collect(), features)?;
    write_feature_set(&out, &set)?;
    Ok(())
}

fn cmd_features(a: &FeaturesArgs) -> CliResult<()> {
    let s = Settings::load(&a.common)?;
    let _seed = s.seed(&a.common)?;
    let index_path: PathBuf = s.require("index", a.index.clone())?;
    let out: PathBuf = s.require("out", a.out.clone())?;
    let layout_spec = s.get("layout", a.layout.clone(), "full".to_string())?;
    let (index, matrix) = BlockIndex::load(&index_path)?;
    let layout: FeatureLayout = index
        .layout
        .select(&layout_spec)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let set = tube_features(&index, &matrix, &layout)?;
    write_feature_set(&out, &set)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let s = Settings::load(&a.common)?;
    let seed = s.seed(&a.common)?;
    let method: Method = s.get("method", a.method.clone(), "dspepp".to_string())?.parse()?;
    let tubes_path: PathBuf = s.require("tube_features", a.tube_features.clone())?;
    let descs_path: PathBuf = s.require("desc_features", a.desc_features.clone())?;
    let anns_path: PathBuf = s.require("annotations", a.annotations.clone())?;
    let out: PathBuf = s.require("out", a.out.clone())?;
    let tubes = read_feature_set(&tubes_path)?;
    let descs = read_feature_set(&descs_path)?;
    let anns: Vec<AnnotationRecord> = read_jsonl_file(&anns_path)?;
    let task = build_task(&anns, &descs, &tubes, &[], &TaskConfig::default())?;
    let model = match method {
        Method::Cca => {
            let cfg = CcaConfig {
                reg: s.get("reg", a.reg, CcaConfig::default().reg)?,
                n_components: s.opt("components", a.components)?,
                l2_normalize_inputs: s.get("l2_normalize", a.l2_normalize, false)?,
            };
            EmbeddingModel::Cca(fit_cca(&task.train.tubes, &task.train.descs, &cfg)?)
        }
        _ => {
            let d = EmbedTrainConfig::default();
            let dl = LossConfig::default();
            let cfg = EmbedTrainConfig {
                method,
                loss: LossConfig {
                    margin: s.get("margin", a.margin, dl.margin)?,
                    alpha1: s.get("alpha1", a.alpha1, dl.alpha1)?,
                    alpha2: s.get("alpha2", a.alpha2, dl.alpha2)?,
                    alpha3: s.get("alpha3", a.alpha3, dl.alpha3)?,
                    alpha4: s.get("alpha4", a.alpha4, dl.alpha4)?,
                },
                arch: Architecture {
                    hidden: s.get("hidden", a.hidden, d.arch.hidden)?,
                    output: s.get("output_dim", a.output_dim, d.arch.output)?,
                },
                dropout: s.get("dropout", a.dropout, d.dropout)?,
                learning_rate: s.get("learning_rate", a.learning_rate, d.learning_rate)?,
                momentum: s.get("momentum", a.momentum, d.momentum)?,
                batch_size: s.get("batch_size", a.batch_size, d.batch_size)?,
                epochs: s.get("epochs", a.epochs, d.epochs)?,
                seed,
            };
            let outcome = train_embedding(&task.train, task.val.as_ref(), &cfg)?;
            if let Some(p) = s.opt::<PathBuf>("history", a.history.clone())? {
                write_output(Some(&p), &history_csv(&outcome.history))?;
            }
            info!("kept model from epoch {}", outcome.best_epoch);
            EmbeddingModel::Mlp {
                method,
                model: outcome.model,
            }
        }
    };
    save_embedding(&out, &model)?;
    Ok(())
}

fn cmd_retrieve(a: &RetrieveArgs) -> CliResult<()> {
    let s = Settings::load(&a.common)?;
    let _seed = s.seed(&a.common)?;
    let model_path: PathBuf = s.require("model", a.model.clone())?;
    let candidates_path: PathBuf = s.require("candidates", a.candidates.clone())?;
    let query: Option<String> = s.opt("query", a.query.clone())?;
    let query_file: Option<PathBuf> = s.opt("query_file", a.query_file.clone())?;
    match (&query, &query_file) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give --query or --query-file, not both".into())),
        (None, None) => return Err(CliError::Usage("missing --query or --query-file".into())),
        _ => {}
    }
    let top_k: usize = s.get("top_k", a.top_k, 10)?;
    if top_k == 0 {
        return Err(CliError::Usage("--top-k must be at least 1".into()));
    }
    let model = load_embedding(&model_path)?;
    let mut candidates = read_feature_set(&candidates_path)?;
    if let Some(p) = s.opt::<PathBuf>("tubes", a.tubes.clone())? {
        let tubes = read_tubes(&p)?;
        let keep = tubes.iter().map(|t| t.id.as_str()).collect();
        candidates = candidates.subset(&keep);
    }
    let (ids, matrix) = match (query, query_file) {
        (None, Some(p)) if p.extension().is_some_and(|e| e == "fmat") => {
            let set = read_feature_set(&p)?;
            (set.ids, set.features)
        }
        (q, file) => {
            let texts: Vec<(String, String)> = match (q, file) {
                (Some(q), _) => vec![(q.clone(), q)],
                (None, Some(p)) => {
                    let recs: Vec<QueryRecord> = read_jsonl_file(&p)?;
                    recs.into_iter().map(|r| (r.query_id, r.text)).collect()
                }
                (None, None) => unreachable!("checked above"),
            };
            let encoder = load_text_encoder(&s.require::<PathBuf>("encoder", a.encoder.clone())?)?;
            let table = read_words(&s.require::<PathBuf>("words", a.words.clone())?)?;
            let rows = texts
                .iter()
                .map(|(_, t)| encoder.encode(t, &table))
                .collect::<crate::error::Result<Vec<_>>>()?;
            (texts.into_iter().map(|(id, _)| id).collect(), crate::linalg::rows_to_matrix(&rows)?)
        }
    };
    let results = rank_all(&ids, &matrix, &candidates, &model)?;
    let records: Vec<ResultRecord> = results
        .iter()
        .map(|r| ResultRecord {
            query_id: r.query_id.clone(),
            tube_ids: r.top(top_k).iter().map(|e| e.tube_id.clone()).collect(),
            scores: r.top(top_k).iter().map(|e| e.score).collect(),
            extra: Map::new(),
        })
        .collect();
    match s.opt::<PathBuf>("out", a.out.clone())? {
        Some(p) => write_jsonl_file(&p, &records)?,
        None => {
            let mut buf = Vec::new();
            crate::io::write_jsonl(&mut buf, &records)?;
            write_output(None, &String::from_utf8_lossy(&buf))?;
        }
    }
    Ok(())
}

/// Person id of a query id `{person}#{k}`.
fn person_of(query_id: &str) -> &str {
    query_id.rsplit_once('#').map(|(p, _)| p).unwrap_or(query_id)
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let s = Settings::load(&a.common)?;
    let _seed = s.seed(&a.common)?;
    let results_path: PathBuf = s.require("results", a.results.clone())?;
    let anns_path: PathBuf = s.require("annotations", a.annotations.clone())?;
    let tubes_path: PathBuf = s.require("tubes", a.tubes.clone())?;
    let threshold = s.get("threshold", a.threshold, 0.5)?;
    let ks: Vec<usize> = parse_list(&s.get("ks", a.ks.clone(), "1,5,10".to_string())?, "K")?;
    let results: Vec<ResultRecord> = read_jsonl_file(&results_path)?;
    let anns: Vec<AnnotationRecord> = read_jsonl_file(&anns_path)?;
    let tubes = read_tubes(&tubes_path)?;
    let truths: HashMap<&str, GroundTruth> = anns.iter().map(|r| (r.person_id.as_str(), r.ground_truth())).collect();
    let geometry: HashMap<String, Tube> = tubes.into_iter().map(|t| (t.id.clone(), t)).collect();
    let mut ranked = Vec::with_capacity(results.len());
    let mut refs = Vec::with_capacity(results.len());
    for r in &results {
        let gt = truths.get(person_of(&r.query_id)).ok_or_else(|| {
            CliError::Data(Error::format(format!("no annotation for query {}", r.query_id)))
        })?;
        refs.push(gt);
        ranked.push(RankedResult {
            query_id: r.query_id.clone(),
            ranked: r
                .tube_ids
                .iter()
                .zip(&r.scores)
                .map(|(id, sc)| crate::eval::RankedEntry {
                    tube_id: id.clone(),
                    score: *sc,
                })
                .collect(),
        });
    }
    let table = recall_table(&ranked, &refs, &geometry, &ks, threshold)?;
    write_output(s.opt::<PathBuf>("out", a.out.clone())?.as_deref(), &recall_csv(&table))
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let s = Settings::load(&a.common)?;
    let _seed = s.seed(&a.common)?;
    let model_path: PathBuf = s.require("model", a.model.clone())?;
    let tubes_path: PathBuf = s.require("tube_features", a.tube_features.clone())?;
    let descs_path: PathBuf = s.require("desc_features", a.desc_features.clone())?;
    let anns_path: PathBuf = s.require("annotations", a.annotations.clone())?;
    let pool_path: PathBuf = s.require("tubes", a.tubes.clone())?;
    let grid: Vec<usize> = parse_list(&s.get("nc_grid", a.nc_grid.clone(), "100,350,700".to_string())?, "N_c")?;
    let model = load_embedding(&model_path)?;
    let tubes_f = read_feature_set(&tubes_path)?;
    let descs = read_feature_set(&descs_path)?;
    let anns: Vec<AnnotationRecord> = read_jsonl_file(&anns_path)?;
    let pool = read_tubes(&pool_path)?;
    let threshold = s.get("threshold", a.threshold, 0.5)?;
    let cfg = TaskConfig {
        n_candidates: usize::MAX,
        max_queries: s.opt("max_queries", a.max_queries)?,
    };
    let task = build_task(&anns, &descs, &tubes_f, &pool, &cfg)?;
    let rows = sweep_candidates(
        &task.pool,
        &task.pool_features,
        &task.query_ids,
        &task.queries,
        &task.truth_refs(),
        &model,
        &grid,
        threshold,
    )?;
    write_output(s.opt::<PathBuf>("out", a.out.clone())?.as_deref(), &sweep_csv(&rows))
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let s = Settings::load(&a.common)?;
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed: s.seed(&a.common)?,
        clips: s.get("clips", a.clips, d.clips)?,
        frames_per_clip: s.get("frames", a.frames, d.frames_per_clip)?,
        people_per_clip: s.get("people", a.people, d.people_per_clip)?,
        box_jitter: s.get("box_jitter", a.box_jitter, d.box_jitter)?,
        false_positive_rate: s.get("false_positive_rate", a.false_positive_rate, d.false_positive_rate)?,
        miss_rate: s.get("miss_rate", a.miss_rate, d.miss_rate)?,
        eligible_fraction: s.get("eligible_fraction", a.eligible_fraction, d.eligible_fraction)?,
        latent_dim: s.get("latent_dim", a.latent_dim, d.latent_dim)?,
        block_dim: s.get("block_dim", a.block_dim, d.block_dim)?,
        desc_dim: s.get("desc_dim", a.desc_dim, d.desc_dim)?,
        word_dim: s.get("word_dim", a.word_dim, d.word_dim)?,
        tube_noise: s.get("tube_noise", a.tube_noise, d.tube_noise)?,
        desc_noise: s.get("desc_noise", a.desc_noise, d.desc_noise)?,
        lambda: s.get("lambda", a.lambda, d.lambda)?,
        ..d
    };
    let out: PathBuf = s.require("out", a.out.clone())?;
    generate(&cfg)?.write(&out)?;
    Ok(())
}

/// Runs an already parsed command.
pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Propose(a) => cmd_propose(a),
        Command::EncodeText(a) => cmd_encode_text(a),
        Command::Features(a) => cmd_features(a),
        Command::Train(a) => cmd_train(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("tubesearch: {e}");
            e.exit_code()
        }
    }
}
