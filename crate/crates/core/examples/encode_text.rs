//! Fits the description encoder (ICA, HGLMM, Fisher vectors, PCA) on
//! synthetic descriptions and compares a few encodings.

use tubesearch::synth::{generate, SynthConfig};
use tubesearch::text::{TextEncoder, TextEncoderConfig};

fn main() -> tubesearch::Result<()> {
    let ds = generate(&SynthConfig {
        clips: 10,
        frames_per_clip: 4,
        ..Default::default()
    })?;
    let texts: Vec<String> = ds.annotations.iter().flat_map(|a| a.descriptions.clone()).collect();
    let cfg = TextEncoderConfig {
        k_centers: 4,
        pca_dim: Some(16),
        ..Default::default()
    };
    let encoder = TextEncoder::fit(&texts, &ds.words, &cfg)?;
    println!("{} descriptions, {} words, output dim {}", texts.len(), ds.words.len(), encoder.output_dim());

    let queries = [
        "a man in a red shirt running",
        "a man wearing a red shirt who is running",
        "a woman in blue jeans sitting",
    ];
    let codes: Vec<_> = queries.iter().map(|q| encoder.encode(q, &ds.words)).collect::<Result<_, _>>()?;
    for (i, q) in queries.iter().enumerate() {
        let sims: Vec<String> = codes
            .iter()
            .map(|c| format!("{:+.2}", codes[i].dot(c) / (codes[i].norm() * c.norm())))
            .collect();
        println!("{:45} {}", q, sims.join(" "));
    }
    Ok(())
}
