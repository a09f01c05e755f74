//! Mean-pools per-second feature blocks into tube features, for the full
//! layout and for a reduced one.

use tubesearch::io::{block_names, tube_features};
use tubesearch::synth::{generate, SynthConfig};

fn main() -> tubesearch::Result<()> {
    let cfg = SynthConfig {
        clips: 3,
        ..Default::default()
    };
    let ds = generate(&cfg)?;
    println!("blocks: {}", block_names().join(", "));
    for spec in ["full", "rgb_tube,flow_tube"] {
        let layout = ds.block_index.layout.select(spec)?;
        let set = tube_features(&ds.block_index, &ds.block_matrix, &layout)?;
        println!("{spec:20} {} tubes x {} dims", set.len(), set.features.ncols());
        for (id, row) in set.ids.iter().zip(set.features.row_iter()).take(3) {
            println!("  {id:16} norm {:.3}", row.norm());
        }
    }
    Ok(())
}
