//! Model files: every fitted model is an FMAT bundle whose manifest meta has
//! a `kind` field.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use super::fmat::Bundle;
use crate::embedding::{Branch, BranchParams, CcaModel, EmbeddingModel, Method, MlpEmbedder};
use crate::error::{Error, Result};
use crate::text::{Family, FvParts, HglmmModel, IcaModel, PcaModel, TextEncoder};

fn row(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, v.len(), v.as_slice())
}

fn vector(b: &Bundle, name: &str) -> Result<DVector<f64>> {
    let m = b.get(name)?;
    if m.nrows() != 1 {
        return Err(Error::format(format!("tensor {name} should be a single row")));
    }
    Ok(m.row(0).transpose())
}

fn meta_str<'a>(meta: &'a Value, key: &str) -> Result<&'a str> {
    meta.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| Error::format(format!("model meta lacks string {key:?}")))
}

fn meta_f64(meta: &Value, key: &str) -> Result<f64> {
    meta.get(key)
        .and_then(Value::as_f64)
        .ok_or_else(|| Error::format(format!("model meta lacks number {key:?}")))
}

fn push_branch(b: &mut Bundle, prefix: &str, br: &Branch) {
    let p = &br.params;
    b.push(format!("{prefix}.w1"), p.w1.clone());
    b.push(format!("{prefix}.b1"), row(&p.b1));
    b.push(format!("{prefix}.w2"), p.w2.clone());
    b.push(format!("{prefix}.b2"), row(&p.b2));
    b.push(format!("{prefix}.gamma"), row(&p.gamma));
    b.push(format!("{prefix}.beta"), row(&p.beta));
    b.push(format!("{prefix}.running_mean"), row(&br.running_mean));
    b.push(format!("{prefix}.running_var"), row(&br.running_var));
}

fn read_branch(b: &Bundle, prefix: &str) -> Result<Branch> {
    let t = |name: &str| format!("{prefix}.{name}");
    let br = Branch {
        params: BranchParams {
            w1: b.get(&t("w1"))?.clone(),
            b1: vector(b, &t("b1"))?,
            w2: b.get(&t("w2"))?.clone(),
            b2: vector(b, &t("b2"))?,
            gamma: vector(b, &t("gamma"))?,
            beta: vector(b, &t("beta"))?,
        },
        running_mean: vector(b, &t("running_mean"))?,
        running_var: vector(b, &t("running_var"))?,
        dropout: meta_f64(&b.meta, "dropout")?,
        bn_eps: meta_f64(&b.meta, "bn_eps")?,
        bn_momentum: meta_f64(&b.meta, "bn_momentum")?,
    };
    let (h1, h2) = (br.params.w1.ncols(), br.params.w2.ncols());
    let ok = br.params.w2.nrows() == h1
        && br.params.b1.len() == h1
        && [&br.params.b2, &br.params.gamma, &br.params.beta, &br.running_mean, &br.running_var]
            .iter()
            .all(|v| v.len() == h2);
    if !ok {
        return Err(Error::format(format!("branch {prefix} has inconsistent tensor shapes")));
    }
    Ok(br)
}

pub fn embedding_to_bundle(model: &EmbeddingModel) -> Bundle {
    match model {
        EmbeddingModel::Cca(m) => {
            let mut b = Bundle::new(json!({
                "kind": "embedding",
                "method": Method::Cca,
                "l2_normalize_inputs": m.l2_normalize_inputs,
            }));
            b.push("tube_mean", row(&m.tube_mean));
            b.push("desc_mean", row(&m.desc_mean));
            b.push("w_tube", m.w_tube.clone());
            b.push("w_desc", m.w_desc.clone());
            b.push("correlations", row(&m.correlations));
            b
        }
        EmbeddingModel::Mlp { method, model } => {
            let mut b = Bundle::new(json!({
                "kind": "embedding",
                "method": method,
                "dropout": model.tube.dropout,
                "bn_eps": model.tube.bn_eps,
                "bn_momentum": model.tube.bn_momentum,
            }));
            push_branch(&mut b, "tube", &model.tube);
            push_branch(&mut b, "desc", &model.desc);
            b
        }
    }
}

pub fn embedding_from_bundle(b: &Bundle) -> Result<EmbeddingModel> {
    if meta_str(&b.meta, "kind")? != "embedding" {
        return Err(Error::format("file is not an embedding model"));
    }
    let method: Method = meta_str(&b.meta, "method")?.parse()?;
    match method {
        Method::Cca => {
            let m = CcaModel {
                tube_mean: vector(b, "tube_mean")?,
                desc_mean: vector(b, "desc_mean")?,
                w_tube: b.get("w_tube")?.clone(),
                w_desc: b.get("w_desc")?.clone(),
                correlations: vector(b, "correlations")?,
                l2_normalize_inputs: b.meta.get("l2_normalize_inputs").and_then(Value::as_bool).unwrap_or(false),
            };
            let c = m.correlations.len();
            if m.w_tube.shape() != (c, m.tube_mean.len()) || m.w_desc.shape() != (c, m.desc_mean.len()) {
                return Err(Error::format("CCA tensors have inconsistent shapes"));
            }
            Ok(EmbeddingModel::Cca(m))
        }
        _ => Ok(EmbeddingModel::Mlp {
            method,
            model: MlpEmbedder {
                tube: read_branch(b, "tube")?,
                desc: read_branch(b, "desc")?,
            },
        }),
    }
}

pub fn save_embedding(path: &Path, model: &EmbeddingModel) -> Result<()> {
    embedding_to_bundle(model).save(path)
}

pub fn load_embedding(path: &Path) -> Result<EmbeddingModel> {
    embedding_from_bundle(&Bundle::load(path)?)
}

pub fn text_encoder_to_bundle(enc: &TextEncoder) -> Bundle {
    let h = &enc.hglmm;
    let mut b = Bundle::new(json!({
        "kind": "text_encoder",
        "parts": enc.parts,
        "ica_iterations": enc.ica.iterations,
        "pca": enc.pca.is_some(),
    }));
    b.push("ica.mean", row(&enc.ica.mean));
    b.push("ica.whitening", enc.ica.whitening.clone());
    b.push("ica.unmixing", enc.ica.unmixing.clone());
    b.push("hglmm.weights", row(&h.weights));
    b.push("hglmm.locations", h.locations.clone());
    b.push("hglmm.scales", h.scales.clone());
    b.push(
        "hglmm.laplacian",
        DMatrix::from_fn(h.k(), h.dim(), |i, j| match h.families[i][j] {
            Family::Gaussian => 0.0,
            Family::Laplacian => 1.0,
        }),
    );
    if let Some(p) = &enc.pca {
        b.push("pca.mean", row(&p.mean));
        b.push("pca.components", p.components.clone());
        b.push("pca.explained_variance", row(&p.explained_variance));
    }
    b
}

pub fn text_encoder_from_bundle(b: &Bundle) -> Result<TextEncoder> {
    if meta_str(&b.meta, "kind")? != "text_encoder" {
        return Err(Error::format("file is not a text encoder"));
    }
    let parts: FvParts = serde_json::from_value(b.meta.get("parts").cloned().unwrap_or(Value::Null))
        .map_err(|e| Error::format(format!("bad parts: {e}")))?;
    let ica = IcaModel {
        mean: vector(b, "ica.mean")?,
        whitening: b.get("ica.whitening")?.clone(),
        unmixing: b.get("ica.unmixing")?.clone(),
        iterations: b.meta.get("ica_iterations").and_then(Value::as_u64).unwrap_or(0) as usize,
    };
    let lap = b.get("hglmm.laplacian")?;
    // weights were stored at f32 precision
    let mut weights = vector(b, "hglmm.weights")?;
    let total = weights.sum();
    if (total - 1.0).abs() > 1e-5 {
        return Err(Error::format("mixture weights are not a probability vector"));
    }
    weights /= total;
    let hglmm = HglmmModel {
        weights,
        locations: b.get("hglmm.locations")?.clone(),
        scales: b.get("hglmm.scales")?.clone(),
        families: (0..lap.nrows())
            .map(|i| {
                (0..lap.ncols())
                    .map(|j| if lap[(i, j)] != 0.0 { Family::Laplacian } else { Family::Gaussian })
                    .collect()
            })
            .collect(),
    };
    hglmm.validate(0.0)?;
    let pca = if b.meta.get("pca").and_then(Value::as_bool).unwrap_or(false) {
        Some(PcaModel {
            mean: vector(b, "pca.mean")?,
            components: b.get("pca.components")?.clone(),
            explained_variance: vector(b, "pca.explained_variance")?,
        })
    } else {
        None
    };
    Ok(TextEncoder { ica, hglmm, pca, parts })
}

pub fn save_text_encoder(path: &Path, enc: &TextEncoder) -> Result<()> {
    text_encoder_to_bundle(enc).save(path)
}

pub fn load_text_encoder(path: &Path) -> Result<TextEncoder> {
    text_encoder_from_bundle(&Bundle::load(path)?)
}
