//! Trains DSPE++ on synthetic pairs and prints the per-epoch history.

use tubesearch::embedding::{history_csv, train_embedding, Architecture, EmbedTrainConfig, Method};
use tubesearch::io::tube_features;
use tubesearch::synth::{generate, SynthConfig};
use tubesearch::task::{build_task, TaskConfig};

fn main() -> tubesearch::Result<()> {
    let cfg = SynthConfig {
        clips: 60,
        ..Default::default()
    };
    let ds = generate(&cfg)?;
    let feats = tube_features(&ds.block_index, &ds.block_matrix, &cfg.layout())?;
    let task = build_task(&ds.annotations, &ds.desc_features, &feats, &ds.tubes, &TaskConfig::default())?;
    let train_cfg = EmbedTrainConfig {
        method: Method::DspePlusPlus,
        arch: Architecture { hidden: 128, output: 32 },
        learning_rate: 0.1,
        batch_size: 64,
        epochs: 10,
        ..Default::default()
    };
    let outcome = train_embedding(&task.train, task.val.as_ref(), &train_cfg)?;
    print!("{}", history_csv(&outcome.history));
    println!("kept epoch {}", outcome.best_epoch);
    Ok(())
}
