//! Description encoding: tokens -> ICA word vectors -> HGLMM Fisher vector ->
//! power/L2 normalization -> PCA.

pub mod fisher;
pub mod hglmm;
pub mod ica;
pub mod pca;

use std::collections::HashMap;
use std::io::BufRead;

use log::info;
use nalgebra::{DMatrix, DVector};

pub use fisher::{fisher_score, fisher_vector_of_points, normalize_fv, FvParts};
pub use hglmm::{fit_hglmm, Family, HglmmConfig, HglmmFit, HglmmModel};
pub use ica::{fit_ica, IcaConfig, IcaModel};
pub use pca::{fit_pca, PcaModel};

use crate::error::{Error, Result};

/// Pretrained word vectors, all of one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectorTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: DMatrix<f64>,
}

impl WordVectorTable {
    pub fn new(words: Vec<String>, vectors: DMatrix<f64>) -> Result<Self> {
        if words.len() != vectors.nrows() {
            return Err(Error::format("word count does not match vector rows"));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("word vectors must be finite"));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::format(format!("duplicate word {w:?}")));
            }
        }
        Ok(WordVectorTable {
            dim: vectors.ncols(),
            words,
            index,
            vectors,
        })
    }

    /// Parses `token v1 ... vD` lines. Blank lines are skipped.
    pub fn read<R: BufRead>(reader: R, source: &str) -> Result<Self> {
        let mut words = Vec::new();
        let mut values = Vec::new();
        let mut dim: Option<usize> = None;
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let row: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let row = row.map_err(|e| Error::Schema {
                path: source.to_string(),
                line: lineno + 1,
                message: format!("bad number: {e}"),
            })?;
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(Error::Schema {
                        path: source.to_string(),
                        line: lineno + 1,
                        message: format!("expected {d} values, found {}", row.len()),
                    })
                }
                _ => {}
            }
            words.push(word.to_string());
            values.extend(row);
        }
        let d = dim.unwrap_or(0);
        let vectors = DMatrix::from_row_slice(words.len(), d, &values);
        Self::new(words, vectors)
    }

    pub fn write<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for v in self.vectors.row(i).iter() {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn vector(&self, word: &str) -> Option<DVector<f64>> {
        self.index.get(word).map(|&i| self.vectors.row(i).transpose())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Lowercases, turns every non-alphanumeric character into a separator, and
/// drops tokens missing from the vocabulary.
pub fn tokenize(text: &str, table: &WordVectorTable) -> Result<Vec<String>> {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let tokens: Vec<String> = cleaned
        .split_whitespace()
        .filter(|t| table.contains(t))
        .map(str::to_string)
        .collect();
    if tokens.is_empty() {
        return Err(Error::EmptyDescription);
    }
    Ok(tokens)
}

/// Raw (unnormalized) Fisher vector of a token list.
pub fn fisher_vector(
    tokens: &[String],
    table: &WordVectorTable,
    ica: &IcaModel,
    hglmm: &HglmmModel,
    parts: FvParts,
) -> Result<DVector<f64>> {
    let points: Vec<DVector<f64>> = tokens
        .iter()
        .filter_map(|t| table.vector(t))
        .map(|v| ica.transform(&v))
        .collect();
    fisher_vector_of_points(hglmm, &points, parts)
}

#[derive(Debug, Clone)]
pub struct TextEncoderConfig {
    pub k_centers: usize,
    /// PCA output dimension; `None` keeps the normalized Fisher vector.
    pub pca_dim: Option<usize>,
    pub parts: FvParts,
    pub seed: u64,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            k_centers: 30,
            pca_dim: Some(1000),
            parts: FvParts::LocationScale,
            seed: 0,
        }
    }
}

/// The full fitted description encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub ica: IcaModel,
    pub hglmm: HglmmModel,
    pub pca: Option<PcaModel>,
    pub parts: FvParts,
}

impl TextEncoder {
    /// Fits ICA on the vocabulary, the HGLMM on the ICA-transformed token
    /// occurrences of the training descriptions, and PCA on their normalized
    /// Fisher vectors.
    pub fn fit(descriptions: &[String], table: &WordVectorTable, config: &TextEncoderConfig) -> Result<Self> {
        let ica = fit_ica(
            table.matrix(),
            &IcaConfig {
                seed: config.seed,
                ..IcaConfig::default()
            },
        )?;
        let tokenized: Vec<Vec<String>> = descriptions
            .iter()
            .filter_map(|d| tokenize(d, table).ok())
            .collect();
        let occurrences: Vec<DVector<f64>> = tokenized
            .iter()
            .flatten()
            .map(|t| ica.transform(&table.vector(t).expect("tokenized words are in vocabulary")))
            .collect();
        if occurrences.is_empty() {
            return Err(Error::EmptyDescription);
        }
        let points = crate::linalg::rows_to_matrix(&occurrences)?;
        let fit = fit_hglmm(
            &points,
            &HglmmConfig {
                k_centers: config.k_centers,
                seed: config.seed,
                ..HglmmConfig::default()
            },
        )?;
        info!(
            "HGLMM: {} iterations, final log-likelihood {:.3}",
            fit.log_likelihoods.len() - 1,
            fit.log_likelihoods.last().unwrap()
        );
        let mut encoder = TextEncoder {
            ica,
            hglmm: fit.model,
            pca: None,
            parts: config.parts,
        };
        if let Some(dim) = config.pca_dim {
            let fvs: Vec<DVector<f64>> = tokenized
                .iter()
                .map(|toks| encoder.normalized_fv(toks, table))
                .collect::<Result<_>>()?;
            encoder.pca = Some(fit_pca(&crate::linalg::rows_to_matrix(&fvs)?, dim)?);
        }
        Ok(encoder)
    }

    fn normalized_fv(&self, tokens: &[String], table: &WordVectorTable) -> Result<DVector<f64>> {
        let raw = fisher_vector(tokens, table, &self.ica, &self.hglmm, self.parts)?;
        Ok(normalize_fv(&raw))
    }

    pub fn output_dim(&self) -> usize {
        match &self.pca {
            Some(p) => p.out_dim(),
            None => self.parts.dim(self.hglmm.k(), self.hglmm.dim()),
        }
    }

    /// Encodes one description into its feature vector.
    pub fn encode(&self, text: &str, table: &WordVectorTable) -> Result<DVector<f64>> {
        let tokens = tokenize(text, table)?;
        let fv = self.normalized_fv(&tokens, table)?;
        match &self.pca {
            Some(p) => p.apply(&fv),
            None => Ok(fv),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(words: &[&str], dim: usize, seed: u64) -> WordVectorTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(words.len(), dim, |_, _| rng.random_range(-1.0..1.0));
        WordVectorTable::new(words.iter().map(|s| s.to_string()).collect(), m).unwrap()
    }

    #[test]
    fn tokenize_examples() {
        let t = table(&["a", "man", "runs", "red", "shirt", "guy"], 2, 1);
        assert_eq!(tokenize("A man runs.", &t).unwrap(), vec!["a", "man", "runs"]);
        assert!(matches!(tokenize("", &t), Err(Error::EmptyDescription)));
        assert_eq!(tokenize("RED-shirt, guy", &t).unwrap(), vec!["red", "shirt", "guy"]);
        assert!(matches!(tokenize("zebra!!", &t), Err(Error::EmptyDescription)));
    }

    #[test]
    fn word_vector_text_roundtrip() {
        let t = table(&["x", "y", "z"], 3, 2);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let back = WordVectorTable::read(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn word_vector_bad_row_names_line() {
        let text = "a 1 2\nb 1\n";
        match WordVectorTable::read(text.as_bytes(), "w.txt") {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn encoder_end_to_end() {
        let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
        let t = table(&refs, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let descs: Vec<String> = (0..60)
            .map(|_| (0..6).map(|_| words[rng.random_range(0..40)].clone()).collect::<Vec<_>>().join(" "))
            .collect();
        let cfg = TextEncoderConfig {
            k_centers: 3,
            pca_dim: Some(8),
            parts: FvParts::LocationScale,
            seed: 1,
        };
        let enc = TextEncoder::fit(&descs, &t, &cfg).unwrap();
        assert_eq!(enc.output_dim(), 8);
        let v = enc.encode(&descs[0], &t).unwrap();
        assert_eq!(v.len(), 8);
        // token order does not matter
        let mut toks = tokenize(&descs[1], &t).unwrap();
        let a = fisher_vector(&toks, &t, &enc.ica, &enc.hglmm, enc.parts).unwrap();
        toks.reverse();
        let b = fisher_vector(&toks, &t, &enc.ica, &enc.hglmm, enc.parts).unwrap();
        assert!((a - b).abs().max() < 1e-12);
        assert!(matches!(enc.encode("nothing known", &t), Err(Error::EmptyDescription)));
    }
}
