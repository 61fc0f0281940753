use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MoEConfig, MoELayer, MoEModel, SampleBatch};
use crate::error::{Error, Result};
use crate::numerics::tensor::{read_matrix, write_matrix, Tensor};
use crate::numerics::Matrix;
use crate::scalar::Scalar;

pub const MODEL_MANIFEST: &str = "model.json";

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    config: MoEConfig,
    layers: Vec<LayerBlobs>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerBlobs {
    router: String,
    experts: Vec<String>,
}

/// Writes `model.json` plus one `.tnsr` blob per router and expert into `dir`.
pub fn save_model<T: Scalar>(model: &MoEModel<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (l, layer) in model.layers.iter().enumerate() {
        let router = format!("layer{l}.router.tnsr");
        write_matrix(&dir.join(&router), &layer.router)?;
        let mut experts = Vec::with_capacity(layer.experts.len());
        for (i, w) in layer.experts.iter().enumerate() {
            let name = format!("layer{l}.expert{i}.tnsr");
            write_matrix(&dir.join(&name), w)?;
            experts.push(name);
        }
        layers.push(LayerBlobs { router, experts });
    }
    let manifest = ModelManifest {
        config: model.config.clone(),
        layers,
    };
    crate::json::write_pretty(&dir.join(MODEL_MANIFEST), &manifest)
}

pub fn load_model<T: Scalar>(dir: &Path) -> Result<MoEModel<T>> {
    let manifest: ModelManifest = crate::json::read(&dir.join(MODEL_MANIFEST))?;
    manifest.config.validate()?;
    let d = manifest.config.hidden_dim;
    if manifest.layers.len() != manifest.config.num_layers {
        return Err(Error::ShapeMismatch {
            what: "model manifest layer list".into(),
            expected: vec![manifest.config.num_layers],
            found: vec![manifest.layers.len()],
        });
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (l, blobs) in manifest.layers.iter().enumerate() {
        let n_e = manifest.config.experts_at(l);
        let router: Matrix<T> = read_matrix(&dir.join(&blobs.router), &format!("layer {l} router"))?;
        if router.shape() != [n_e, d] {
            return Err(Error::ShapeMismatch {
                what: format!("layer {l} router"),
                expected: vec![n_e, d],
                found: router.shape().to_vec(),
            });
        }
        let experts = blobs
            .experts
            .iter()
            .enumerate()
            .map(|(i, name)| read_matrix(&dir.join(name), &format!("layer {l} expert {i}")))
            .collect::<Result<Vec<_>>>()?;
        layers.push(MoELayer { experts, router });
    }
    MoEModel::new(manifest.config, layers)
}

/// Stores samples as one rank-3 tensor `[n_samples, tokens, d]`.
pub fn save_data<T: Scalar>(samples: &[SampleBatch<T>], path: &Path) -> Result<()> {
    let first = samples.first().ok_or(Error::Empty("sample list"))?;
    let (n_tok, d) = (first.tokens.rows(), first.tokens.cols());
    let mut data = Vec::with_capacity(samples.len() * n_tok * d);
    for (s, sample) in samples.iter().enumerate() {
        if sample.tokens.shape() != [n_tok, d] {
            return Err(Error::ShapeMismatch {
                what: format!("sample {s}"),
                expected: vec![n_tok, d],
                found: sample.tokens.shape().to_vec(),
            });
        }
        data.extend(sample.tokens.data().iter().map(|v| v.to_f64_lossless()));
    }
    Tensor::new(vec![samples.len(), n_tok, d], data)?.write(path)
}

pub fn load_data<T: Scalar>(path: &Path) -> Result<Vec<SampleBatch<T>>> {
    let t = Tensor::read(path)?;
    if t.dims.len() != 3 {
        return Err(Error::ShapeMismatch {
            what: "sample tensor rank".into(),
            expected: vec![3],
            found: vec![t.dims.len()],
        });
    }
    let (n, n_tok, d) = (t.dims[0], t.dims[1], t.dims[2]);
    let stride = n_tok * d;
    (0..n)
        .map(|s| {
            let chunk = t.data[s * stride..(s + 1) * stride]
                .iter()
                .map(|&v| T::from_f64_lossy(v))
                .collect();
            SampleBatch::new(Matrix::from_vec(n_tok, d, chunk)?)
        })
        .collect()
}
