//! Two-branch embedding network.
//!
//! Each branch is
//! `InnerProduct(h1) -> ReLU -> Dropout -> InnerProduct(h2) -> BatchNorm -> ReLU -> L2Norm`
//! with hand-written backpropagation. Samples are rows.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Trainable tensors of one branch. Also used to hold their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    /// `in x h1`
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `h1 x h2`
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
    pub gamma: DVector<f64>,
    pub beta: DVector<f64>,
}

impl BranchParams {
    pub fn zeros_like(other: &BranchParams) -> Self {
        BranchParams {
            w1: DMatrix::zeros(other.w1.nrows(), other.w1.ncols()),
            b1: DVector::zeros(other.b1.len()),
            w2: DMatrix::zeros(other.w2.nrows(), other.w2.ncols()),
            b2: DVector::zeros(other.b2.len()),
            gamma: DVector::zeros(other.gamma.len()),
            beta: DVector::zeros(other.beta.len()),
        }
    }

    /// Named flat views of every tensor, in a fixed order.
    pub fn tensors(&self) -> [(&'static str, &[f64]); 6] {
        [
            ("w1", self.w1.as_slice()),
            ("b1", self.b1.as_slice()),
            ("w2", self.w2.as_slice()),
            ("b2", self.b2.as_slice()),
            ("gamma", self.gamma.as_slice()),
            ("beta", self.beta.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64]); 6] {
        [
            ("w1", self.w1.as_mut_slice()),
            ("b1", self.b1.as_mut_slice()),
            ("w2", self.w2.as_mut_slice()),
            ("b2", self.b2.as_mut_slice()),
            ("gamma", self.gamma.as_mut_slice()),
            ("beta", self.beta.as_mut_slice()),
        ]
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &BranchParams) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= alpha);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub params: BranchParams,
    pub running_mean: DVector<f64>,
    pub running_var: DVector<f64>,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

/// Forward mode. Training uses batch statistics and a dropout mask drawn from
/// the given generator.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Infer,
}

/// Embedded rows plus a per-row flag for vectors that were all zeros before
/// L2 normalization (left as zeros).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub vectors: DMatrix<f64>,
    pub degenerate: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: DVector<f64>,
    pub degenerate: bool,
}

/// Intermediate values of a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BranchCache {
    x: DMatrix<f64>,
    z1: DMatrix<f64>,
    mask: DMatrix<f64>,
    d1: DMatrix<f64>,
    batch_mean: DVector<f64>,
    batch_var: DVector<f64>,
    inv_std: DVector<f64>,
    xhat: DMatrix<f64>,
    bn: DMatrix<f64>,
    out: DMatrix<f64>,
    norms: Vec<f64>,
}

impl BranchCache {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.out
    }
}

fn add_row_bias(m: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut row in m.row_iter_mut() {
        row += b.transpose();
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum()))
}

fn l2_rows(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut out = a.clone();
    let mut norms = Vec::with_capacity(a.nrows());
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
        norms.push(n);
    }
    (out, norms)
}

impl Branch {
    /// He-initialized branch mapping `input_dim -> hidden -> output`.
    pub fn new(input_dim: usize, hidden: usize, output: usize, dropout: f64, rng: &mut ChaCha8Rng) -> Self {
        let s1 = (2.0 / input_dim.max(1) as f64).sqrt();
        let s2 = (2.0 / hidden.max(1) as f64).sqrt();
        let w1 = DMatrix::from_fn(input_dim, hidden, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            s1 * z
        });
        let w2 = DMatrix::from_fn(hidden, output, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            s2 * z
        });
        Branch {
            params: BranchParams {
                w1,
                b1: DVector::zeros(hidden),
                w2,
                b2: DVector::zeros(output),
                gamma: DVector::from_element(output, 1.0),
                beta: DVector::zeros(output),
            },
            running_mean: DVector::zeros(output),
            running_var: DVector::from_element(output, 1.0),
            dropout,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.params.w2.ncols()
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::contract(format!(
                "branch expects input dimension {}, got {cols}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Inverted-dropout mask for `rows` samples; kept units are scaled by
    /// `1 / (1 - p)`.
    pub fn sample_mask(&self, rows: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let p = self.dropout;
        if p <= 0.0 {
            return DMatrix::from_element(rows, self.hidden_dim(), 1.0);
        }
        let keep = 1.0 / (1.0 - p);
        DMatrix::from_fn(rows, self.hidden_dim(), |_, _| if rng.random::<f64>() < p { 0.0 } else { keep })
    }

    /// Training-mode forward pass with an explicit dropout mask.
    pub fn forward_train(&self, x: &DMatrix<f64>, mask: &DMatrix<f64>) -> Result<BranchCache> {
        self.check_input(x.ncols())?;
        if mask.shape() != (x.nrows(), self.hidden_dim()) {
            return Err(Error::contract("dropout mask shape does not match the batch"));
        }
        let p = &self.params;
        let n = x.nrows() as f64;
        let mut z1 = x * &p.w1;
        add_row_bias(&mut z1, &p.b1);
        let d1 = z1.map(|v| v.max(0.0)).component_mul(mask);
        let mut z2 = &d1 * &p.w2;
        add_row_bias(&mut z2, &p.b2);

        let batch_mean = column_sums(&z2) / n;
        let mut centered = z2;
        for mut row in centered.row_iter_mut() {
            row -= batch_mean.transpose();
        }
        let batch_var = DVector::from_iterator(
            centered.ncols(),
            centered.column_iter().map(|c| c.norm_squared() / n),
        );
        let inv_std = batch_var.map(|v| 1.0 / (v + self.bn_eps).sqrt());
        let mut xhat = centered;
        for mut row in xhat.row_iter_mut() {
            row.component_mul_assign(&inv_std.transpose());
        }
        let mut bn = xhat.clone();
        for mut row in bn.row_iter_mut() {
            row.component_mul_assign(&p.gamma.transpose());
            row += p.beta.transpose();
        }
        let (out, norms) = l2_rows(&bn.map(|v| v.max(0.0)));
        Ok(BranchCache {
            x: x.clone(),
            z1,
            mask: mask.clone(),
            d1,
            batch_mean,
            batch_var,
            inv_std,
            xhat,
            bn,
            out,
            norms,
        })
    }

    /// Gradients of the branch parameters given `d loss / d output`.
    pub fn backward(&self, cache: &BranchCache, d_out: &DMatrix<f64>) -> BranchParams {
        let p = &self.params;
        let n = cache.x.nrows() as f64;

        // L2 normalization
        let mut d_a2 = DMatrix::zeros(d_out.nrows(), d_out.ncols());
        for i in 0..d_out.nrows() {
            let norm = cache.norms[i];
            if norm == 0.0 {
                continue;
            }
            let y = cache.out.row(i);
            let dy = d_out.row(i);
            let proj = y.dot(&dy);
            d_a2.set_row(i, &((dy - y * proj) / norm));
        }
        // ReLU after batch norm
        let d_bn = d_a2.zip_map(&cache.bn, |g, v| if v > 0.0 { g } else { 0.0 });

        let d_gamma = column_sums(&d_bn.component_mul(&cache.xhat));
        let d_beta = column_sums(&d_bn);
        let mut d_xhat = d_bn;
        for mut row in d_xhat.row_iter_mut() {
            row.component_mul_assign(&p.gamma.transpose());
        }
        let sum_dxhat = column_sums(&d_xhat);
        let sum_dxhat_xhat = column_sums(&d_xhat.component_mul(&cache.xhat));
        let mut d_z2 = d_xhat;
        for i in 0..d_z2.nrows() {
            for j in 0..d_z2.ncols() {
                d_z2[(i, j)] = cache.inv_std[j] / n
                    * (n * d_z2[(i, j)] - sum_dxhat[j] - cache.xhat[(i, j)] * sum_dxhat_xhat[j]);
            }
        }

        let d_w2 = cache.d1.transpose() * &d_z2;
        let d_b2 = column_sums(&d_z2);
        let d_d1 = &d_z2 * p.w2.transpose();
        let d_z1 = d_d1
            .component_mul(&cache.mask)
            .zip_map(&cache.z1, |g, v| if v > 0.0 { g } else { 0.0 });
        let d_w1 = cache.x.transpose() * &d_z1;
        let d_b1 = column_sums(&d_z1);
        BranchParams {
            w1: d_w1,
            b1: d_b1,
            w2: d_w2,
            b2: d_b2,
            gamma: d_gamma,
            beta: d_beta,
        }
    }

    /// Folds the batch statistics of a training pass into the running
    /// statistics used at inference.
    pub fn update_running_stats(&mut self, cache: &BranchCache) {
        let n = cache.x.nrows() as f64;
        let unbiased = if n > 1.0 {
            &cache.batch_var * (n / (n - 1.0))
        } else {
            cache.batch_var.clone()
        };
        let m = self.bn_momentum;
        self.running_mean = &self.running_mean * (1.0 - m) + &cache.batch_mean * m;
        self.running_var = &self.running_var * (1.0 - m) + unbiased * m;
    }

    fn forward_infer(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x.ncols())?;
        let p = &self.params;
        let mut z1 = x * &p.w1;
        add_row_bias(&mut z1, &p.b1);
        let mut z2 = z1.map(|v| v.max(0.0)) * &p.w2;
        add_row_bias(&mut z2, &p.b2);
        for mut row in z2.row_iter_mut() {
            for j in 0..row.len() {
                let xhat = (row[j] - self.running_mean[j]) / (self.running_var[j] + self.bn_eps).sqrt();
                row[j] = (p.gamma[j] * xhat + p.beta[j]).max(0.0);
            }
        }
        Ok(z2)
    }

    /// Embeds a batch of row samples.
    pub fn embed_batch(&self, x: &DMatrix<f64>, mode: Mode<'_>) -> Result<EmbeddingBatch> {
        let (vectors, norms) = match mode {
            Mode::Infer => l2_rows(&self.forward_infer(x)?),
            Mode::Train(rng) => {
                let mask = self.sample_mask(x.nrows(), rng);
                let cache = self.forward_train(x, &mask)?;
                (cache.out, cache.norms)
            }
        };
        let degenerate: Vec<bool> = norms.iter().map(|n| *n == 0.0).collect();
        if degenerate.iter().any(|d| *d) {
            warn!("degenerate embedding: pre-normalization output is all zeros");
        }
        Ok(EmbeddingBatch { vectors, degenerate })
    }

    /// Inference-mode embedding of one vector.
    pub fn embed(&self, x: &DVector<f64>) -> Result<Embedding> {
        let batch = self.embed_batch(&DMatrix::from_row_slice(1, x.len(), x.as_slice()), Mode::Infer)?;
        Ok(Embedding {
            vector: batch.vectors.row(0).transpose(),
            degenerate: batch.degenerate[0],
        })
    }
}

/// Layer sizes of both branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub hidden: usize,
    pub output: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: 2048,
            output: 512,
        }
    }
}

/// Tube branch and description branch sharing one output space.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpEmbedder {
    pub tube: Branch,
    pub desc: Branch,
}

impl MlpEmbedder {
    pub fn new(tube_dim: usize, desc_dim: usize, arch: Architecture, dropout: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tube = Branch::new(tube_dim, arch.hidden, arch.output, dropout, &mut rng);
        let desc = Branch::new(desc_dim, arch.hidden, arch.output, dropout, &mut rng);
        MlpEmbedder { tube, desc }
    }

    /// Matching score: negative Euclidean distance between inference embeddings.
    pub fn score(&self, f_tube: &DVector<f64>, f_desc: &DVector<f64>) -> Result<f64> {
        let (a, b) = (self.tube.embed(f_tube)?, self.desc.embed(f_desc)?);
        Ok(-(a.vector - b.vector).norm())
    }
}
