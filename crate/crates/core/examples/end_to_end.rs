//! Full pipeline on synthetic data: proposals, features, CCA / DSPE / DSPE++,
//! retrieval and Recall@K.

use tubesearch::embedding::{fit_cca, train_embedding, Architecture, CcaConfig, EmbedTrainConfig, EmbeddingModel, Method};
use tubesearch::eval::{rank_all, recall_table};
use tubesearch::io::tube_features;
use tubesearch::synth::{generate, SynthConfig};
use tubesearch::task::{build_task, TaskConfig};

fn main() -> tubesearch::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cfg = SynthConfig {
        seed: 7,
        clips: 100,
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
            n_candidates: 100,
            max_queries: Some(100),
        },
    )?;
    for method in [Method::Cca, Method::Dspe, Method::DspePlusPlus] {
        let model = match method {
            Method::Cca => EmbeddingModel::Cca(fit_cca(&task.train.tubes, &task.train.descs, &CcaConfig::default())?),
            _ => {
                let train_cfg = EmbedTrainConfig {
                    method,
                    arch: Architecture { hidden: 256, output: 64 },
                    learning_rate: 0.1,
                    batch_size: 64,
                    epochs: 20,
                    seed: 1,
                    ..Default::default()
                };
                let out = train_embedding(&task.train, task.val.as_ref(), &train_cfg)?;
                EmbeddingModel::Mlp { method, model: out.model }
            }
        };
        let results = rank_all(&task.query_ids, &task.queries, &task.candidates, &model)?;
        let table = recall_table(&results, &task.truth_refs(), &task.tubes, &[1, 5, 10], 0.5)?;
        let cells: Vec<String> = table.iter().map(|(k, r)| format!("R@{k} {r:.3}")).collect();
        println!("{:7} {}", method.name(), cells.join("  "));
    }
    Ok(())
}
