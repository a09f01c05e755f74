//! Retrieval accuracy as the number of kept candidate tubes grows.

use tubesearch::embedding::{fit_cca, CcaConfig, EmbeddingModel};
use tubesearch::eval::{sweep_candidates, sweep_csv};
use tubesearch::io::tube_features;
use tubesearch::synth::{generate, SynthConfig};
use tubesearch::task::{build_task, TaskConfig};

fn main() -> tubesearch::Result<()> {
    let cfg = SynthConfig {
        clips: 40,
        false_positive_rate: 0.6,
        ..Default::default()
    };
    let ds = generate(&cfg)?;
    let feats = tube_features(&ds.block_index, &ds.block_matrix, &cfg.layout())?;
    let task = build_task(
        &ds.annotations,
        &ds.desc_features,
        &feats,
        &ds.tubes,
        &TaskConfig {
            n_candidates: usize::MAX,
            max_queries: None,
        },
    )?;
    let model = EmbeddingModel::Cca(fit_cca(&task.train.tubes, &task.train.descs, &CcaConfig::default())?);
    let rows = sweep_candidates(
        &task.pool,
        &task.pool_features,
        &task.query_ids,
        &task.queries,
        &task.truth_refs(),
        &model,
        &[5, 10, 20, 40, 80],
        0.5,
    )?;
    print!("{}", sweep_csv(&rows));
    Ok(())
}
