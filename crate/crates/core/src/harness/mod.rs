//! Desk-scale experiments: pathfinder masks against layer-uniform random
//! masks, signal ablations, planted-expert models and heatmap export.

mod compare;
mod heatmap;
mod pipeline;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{gen_data, gen_model, MoEConfig, MoEModel, Nonlinearity, SampleBatch};
use crate::numerics::{derive_seed, squared_distance, Matrix, Rng};
use crate::pruner::{target_count, PruneMask};
use crate::scalar::Scalar;
use crate::scoring::SampleGraph;

pub use compare::{run_comparison, ComparisonReport, ExperimentConfig, Selection, SeedOutcome};
pub use heatmap::{export_heatmap, heatmap_csv, read_heatmap};
pub use pipeline::{run_pipeline, PipelineOutputs, PipelineParams};

/// Layer-uniform random baseline: each layer keeps `⌈fraction · N_e⌉`
/// experts (at least one) drawn without replacement, layers in order from
/// one stream.
pub fn random_mask(config: &MoEConfig, retention_fraction: f64, seed: u64) -> Result<PruneMask> {
    if !(retention_fraction > 0.0 && retention_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "retention fraction must lie in (0, 1], got {retention_fraction}"
        )));
    }
    let mut rng = Rng::new(seed);
    let rows = (0..config.num_layers)
        .map(|l| {
            let n = config.experts_at(l);
            let keep = target_count(retention_fraction, n).clamp(1, n);
            let mut row = vec![false; n];
            for i in rng.sample_indices(n, keep) {
                row[i] = true;
            }
            row
        })
        .collect();
    Ok(PruneMask::from_rows(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_importance: bool,
    pub use_transition: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            use_importance: true,
            use_transition: true,
        }
    }
}

/// Neutralizes the excluded signal by zeroing its log weights.
pub fn ablate_graph<T: Scalar>(graph: &SampleGraph<T>, flags: AblationFlags) -> Result<SampleGraph<T>> {
    if !flags.use_importance && !flags.use_transition {
        return Err(Error::InvalidArgument(
            "at least one of importance and transition must stay enabled".into(),
        ));
    }
    let mut g = graph.clone();
    if !flags.use_importance {
        for layer in &mut g.log_node {
            layer.iter_mut().for_each(|v| *v = T::zero());
        }
    }
    if !flags.use_transition {
        for m in &mut g.log_edge {
            *m = Matrix::zeros(m.rows(), m.cols());
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean over samples of `‖H_full⁽ᴸ⁾ − H_pruned⁽ᴸ⁾‖² / N_x`.
    pub mean_error: f64,
    /// Same quantity at every layer output `H⁽¹⁾ … H⁽ᴸ⁾`.
    pub per_layer_errors: Vec<f64>,
    pub retention_fraction: f64,
}

/// Reconstruction error of the masked model against the full model.
pub fn evaluate_mask<T: Scalar>(model: &MoEModel<T>, mask: &PruneMask, samples: &[SampleBatch<T>]) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples"));
    }
    let n_layers = model.num_layers();
    let mut per_layer = vec![0.0f64; n_layers];
    for x in samples {
        let full = model.forward(x, None)?;
        let pruned = model.forward(x, Some(mask))?;
        let n_tok = x.num_tokens() as f64;
        for (l, err) in per_layer.iter_mut().enumerate() {
            let (a, b) = (&full.hidden_states[l + 1], &pruned.hidden_states[l + 1]);
            *err += squared_distance(a.data(), b.data()).to_f64_lossless() / n_tok;
        }
    }
    let n = samples.len() as f64;
    for e in &mut per_layer {
        *e /= n;
    }
    Ok(EvalResult {
        mean_error: per_layer[n_layers - 1],
        per_layer_errors: per_layer,
        retention_fraction: mask.retention_fraction(),
    })
}

/// Model with one dominant expert per layer.
///
/// Hidden channel 0 carries a constant 1: every expert maps it to itself
/// and nothing else, so router column 0 acts as a logit bias. The planted
/// expert keeps its drawn weights and gets router row `[10, 0, …]`; the
/// others are scaled by 0.1 and their router rows by 0.01 with column 0
/// zeroed. Requires `d ≥ 2`, no nonlinearity, and inputs from
/// [`planted_data`].
pub fn plant_model(config: &MoEConfig, seed: u64) -> Result<(MoEModel<f64>, Vec<usize>)> {
    if config.hidden_dim < 2 || config.nonlinearity != Nonlinearity::None {
        return Err(Error::InvalidConfig(
            "planted models need hidden_dim >= 2 and nonlinearity none".into(),
        ));
    }
    let mut model = gen_model::<f64>(config, seed)?;
    let mut rng = Rng::new(derive_seed(seed, 0x0050_4c41_4e54));
    let d = config.hidden_dim;
    let mut planted = Vec::with_capacity(config.num_layers);
    for layer in &mut model.layers {
        let p = rng.next_below(layer.num_experts() as u64) as usize;
        planted.push(p);
        for (i, w) in layer.experts.iter_mut().enumerate() {
            let scale = if i == p { 1.0 } else { 0.1 };
            *w = Matrix::from_fn(d, d, |r, c| match (r, c) {
                (0, 0) => 1.0,
                (0, _) | (_, 0) => 0.0,
                _ => scale * w[(r, c)],
            });
        }
        let router = &layer.router;
        layer.router = Matrix::from_fn(router.rows(), d, |i, c| match (i == p, c) {
            (true, 0) => 10.0,
            (true, _) | (false, 0) => 0.0,
            (false, _) => 0.01 * router[(i, c)],
        });
    }
    Ok((model, planted))
}

/// [`gen_data`] with channel 0 pinned to 1, for planted models.
pub fn planted_data(config: &MoEConfig, n_samples: usize, tokens: usize, seed: u64) -> Result<Vec<SampleBatch<f64>>> {
    let mut data = gen_data::<f64>(config, n_samples, tokens, seed)?;
    for s in &mut data {
        for k in 0..s.tokens.rows() {
            s.tokens[(k, 0)] = 1.0;
        }
    }
    Ok(data)
}

/// Midpoint median; `values` must be nonempty.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
