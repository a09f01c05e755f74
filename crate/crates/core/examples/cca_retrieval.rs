//! Fits CCA on synthetic tube/description pairs and retrieves tubes for a
//! few held-out descriptions.

use tubesearch::embedding::{fit_cca, CcaConfig, EmbeddingModel};
use tubesearch::eval::rank_all;
use tubesearch::io::tube_features;
use tubesearch::synth::{generate, SynthConfig};
use tubesearch::task::{build_task, TaskConfig};

fn main() -> tubesearch::Result<()> {
    let cfg = SynthConfig {
        clips: 40,
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
            n_candidates: 60,
            max_queries: Some(5),
        },
    )?;
    let cca = fit_cca(&task.train.tubes, &task.train.descs, &CcaConfig::default())?;
    let top: Vec<String> = cca.correlations.iter().take(5).map(|r| format!("{r:.3}")).collect();
    println!("top canonical correlations: {}", top.join(" "));

    let model = EmbeddingModel::Cca(cca);
    for r in rank_all(&task.query_ids, &task.queries, &task.candidates, &model)? {
        let best: Vec<String> = r.top(3).iter().map(|e| format!("{} ({:.3})", e.tube_id, e.score)).collect();
        println!("{:14} -> {}", r.query_id, best.join(", "));
    }
    Ok(())
}
