//! Writes a small synthetic dataset to a directory (default ./synth_demo).

use std::path::PathBuf;

use tubesearch::synth::{generate, SynthConfig};

fn main() -> tubesearch::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_demo".into()));
    let cfg = SynthConfig {
        seed: 42,
        clips: 6,
        ..Default::default()
    };
    let ds = generate(&cfg)?;
    ds.write(&dir)?;
    println!(
        "{} clips, {} people, {} proposals, {} words -> {}",
        cfg.clips,
        ds.annotations.len(),
        ds.tubes.len(),
        ds.words.len(),
        dir.display()
    );
    for d in &ds.annotations[0].descriptions {
        println!("  {d}");
    }
    Ok(())
}
