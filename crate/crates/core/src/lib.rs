//! Retrieval of spatio-temporal person tubes from natural-language queries.
//!
//! Pipeline: per-frame person detections are linked into candidate tubes
//! ([`proposal`]), tubes get mean-pooled visual features ([`features`]),
//! descriptions get Fisher-vector features ([`text`]), and a CCA or
//! DSPE / DSPE++ model ([`embedding`]) scores tube/description pairs.
//! [`eval`] ranks candidates and measures Recall@K under the localization
//! score; [`io`] reads and writes every file the `tubesearch` binary uses.
//!
//! ## Examples
//!
//! - **`link_tubes`** - detections to tubes, top-N selection
//! - **`encode_text`** - fit the description encoder, compare encodings
//! - **`tube_features`** - pool feature blocks under two layouts
//! - **`cca_retrieval`** - fit CCA and rank tubes for held-out descriptions
//! - **`train_dspe`** - train DSPE++ with validation-based model selection
//! - **`evaluate`** - localization score and Recall@K on a toy case
//! - **`candidate_sweep`** - accuracy against the number of kept candidates
//! - **`synthetic_dataset`** - write a synthetic dataset to disk
//! - **`end_to_end`** - all three methods on one synthetic dataset
//!
//! ```bash
//! cargo run --release -p tubesearch --example end_to_end
//! ```

pub mod cli;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod linalg;
pub mod proposal;
pub mod synth;
pub mod task;
pub mod text;

pub use error::{Error, Result};
