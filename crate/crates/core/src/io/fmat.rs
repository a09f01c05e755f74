//! FMAT binary matrices.
//!
//! A single matrix is `b"FMAT1"`, rows as u64 LE, cols as u64 LE, then
//! `rows * cols` f32 LE values in row-major order. A bundle is a sequence of
//! such records followed by a JSON manifest, the manifest length as u64 LE and
//! the trailing magic `b"FMATM"`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"FMAT1";
pub const BUNDLE_MAGIC: &[u8; 5] = b"FMATM";
pub const HEADER_LEN: usize = 21;

/// Encodes one matrix. Values are narrowed to f32.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes one matrix from the start of `bytes`; returns it with the number of
/// bytes consumed.
pub fn decode_matrix(bytes: &[u8]) -> Result<(DMatrix<f64>, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format("FMAT data shorter than its header"));
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::format("bad FMAT magic"));
    }
    let rows = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[13..21].try_into().unwrap());
    let count = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::format("FMAT dimensions overflow"))?;
    let end = HEADER_LEN
        .checked_add(count)
        .ok_or_else(|| Error::format("FMAT dimensions overflow"))?;
    if bytes.len() < end {
        return Err(Error::format(format!(
            "FMAT payload truncated: {rows}x{cols} needs {count} bytes, found {}",
            bytes.len() - HEADER_LEN
        )));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let data = &bytes[HEADER_LEN..end];
    let m = DMatrix::from_fn(rows, cols, |i, j| {
        let k = 4 * (i * cols + j);
        f32::from_le_bytes(data[k..k + 4].try_into().unwrap()) as f64
    });
    Ok((m, end))
}

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    w.write_all(&encode_matrix(m))?;
    Ok(())
}

/// Reads a single-matrix stream; trailing bytes are an error.
pub fn read_matrix<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (m, used) = decode_matrix(&bytes)?;
    if used != bytes.len() {
        return Err(Error::format(format!("{} unexpected trailing bytes after FMAT matrix", bytes.len() - used)));
    }
    Ok(m)
}

pub fn write_matrix_file(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode_matrix(m))?;
    Ok(())
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    read_matrix(fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub offset: u64,
    pub rows: u64,
    pub cols: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    meta: Value,
}

/// Named matrices plus free-form JSON metadata, stored as one file.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub tensors: Vec<(String, DMatrix<f64>)>,
    pub meta: Value,
}

impl Bundle {
    pub fn new(meta: Value) -> Self {
        Bundle {
            tensors: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: DMatrix<f64>) {
        self.tensors.push((name.into(), m));
    }

    pub fn get(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::format(format!("bundle has no tensor {name:?}")))
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, m) in &self.tensors {
            entries.push(ManifestEntry {
                name: name.clone(),
                offset: out.len() as u64,
                rows: m.nrows() as u64,
                cols: m.ncols() as u64,
            });
            out.extend(encode_matrix(m));
        }
        let manifest = serde_json::to_vec(&Manifest {
            tensors: entries,
            meta: self.meta.clone(),
        })?;
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(BUNDLE_MAGIC);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let n = bytes.len();
        if n < 13 || &bytes[n - 5..] != BUNDLE_MAGIC {
            return Err(Error::format("missing FMAT bundle trailer"));
        }
        let mlen = u64::from_le_bytes(bytes[n - 13..n - 5].try_into().unwrap());
        let mlen = usize::try_from(mlen)
            .ok()
            .filter(|l| *l <= n - 13)
            .ok_or_else(|| Error::format("FMAT manifest length exceeds file"))?;
        let start = n - 13 - mlen;
        let manifest: Manifest = serde_json::from_slice(&bytes[start..n - 13])?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let off = usize::try_from(e.offset)
                .ok()
                .filter(|o| *o < start)
                .ok_or_else(|| Error::format(format!("tensor {} offset out of range", e.name)))?;
            let (m, _) = decode_matrix(&bytes[off..start])?;
            if (m.nrows() as u64, m.ncols() as u64) != (e.rows, e.cols) {
                return Err(Error::format(format!("tensor {} shape disagrees with manifest", e.name)));
            }
            tensors.push((e.name, m));
        }
        Ok(Bundle {
            tensors,
            meta: manifest.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Bundle::decode(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use serde_json::json;

    #[test]
    fn random_matrix_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DMatrix::from_fn(7, 13, |_, _| rng.random_range(-100.0f32..100.0) as f64);
        let bytes = encode_matrix(&m);
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 7 * 13);
        let back = read_matrix(bytes.as_slice()).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(encode_matrix(&back), bytes);
    }

    #[test]
    fn empty_matrix_is_21_bytes() {
        let bytes = encode_matrix(&DMatrix::zeros(0, 0));
        assert_eq!(bytes.len(), 21);
        assert_eq!(read_matrix(bytes.as_slice()).unwrap().shape(), (0, 0));
    }

    #[test]
    fn corrupt_inputs() {
        let mut bytes = encode_matrix(&DMatrix::from_element(2, 2, 1.0));
        assert!(read_matrix(&bytes[..20]).is_err());
        assert!(read_matrix(&bytes[..30]).is_err());
        bytes[0] = b'X';
        assert!(matches!(read_matrix(bytes.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn bundle_roundtrip() {
        let mut b = Bundle::new(json!({"kind": "test", "ids": ["a", "b"]}));
        b.push("x", DMatrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]));
        b.push("empty", DMatrix::zeros(0, 4));
        b.push("v", DMatrix::from_row_slice(1, 2, &[0.5, -0.25]));
        let bytes = b.encode().unwrap();
        let back = Bundle::decode(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.encode().unwrap(), bytes);
        assert!(back.get("nope").is_err());
        // the first record is a plain FMAT matrix
        assert_eq!(decode_matrix(&bytes).unwrap().0, *b.get("x").unwrap());
    }
}
