//! Toy mixture-of-experts model: linear experts, softmax router, top-k gating
//! renormalized over the selected experts, and a forward pass that records
//! every intermediate needed for scoring.

mod generate;
mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matmul_transpose, softmax, Matrix};
use crate::pruner::PruneMask;
use crate::scalar::Scalar;

pub use generate::{gen_data, gen_model};
pub use io::{load_data, load_model, save_data, save_model, MODEL_MANIFEST};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    None,
    Tanh,
}

impl Nonlinearity {
    pub fn apply<T: Scalar>(self, m: &Matrix<T>) -> Matrix<T> {
        match self {
            Nonlinearity::None => m.clone(),
            Nonlinearity::Tanh => m.map(T::tanh),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoEConfig {
    pub num_layers: usize,
    pub experts_per_layer: usize,
    pub hidden_dim: usize,
    pub top_k: usize,
    pub nonlinearity: Nonlinearity,
    /// Per-layer expert counts once a model has been pruned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_experts: Option<Vec<usize>>,
}

impl MoEConfig {
    pub fn new(
        num_layers: usize,
        experts_per_layer: usize,
        hidden_dim: usize,
        top_k: usize,
        nonlinearity: Nonlinearity,
    ) -> Result<Self> {
        let cfg = Self {
            num_layers,
            experts_per_layer,
            hidden_dim,
            top_k,
            nonlinearity,
            layer_experts: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_layers < 2 {
            return bad(format!("need at least 2 layers, got {}", self.num_layers));
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be >= 1".into());
        }
        if self.experts_per_layer == 0 {
            return bad("experts_per_layer must be >= 1".into());
        }
        if self.top_k == 0 || self.top_k > self.experts_per_layer {
            return bad(format!(
                "top_k must lie in 1..={}, got {}",
                self.experts_per_layer, self.top_k
            ));
        }
        if let Some(counts) = &self.layer_experts {
            if counts.len() != self.num_layers {
                return bad(format!(
                    "layer_experts has {} entries for {} layers",
                    counts.len(),
                    self.num_layers
                ));
            }
            if let Some(l) = counts
                .iter()
                .position(|&n| n == 0 || n > self.experts_per_layer)
            {
                return bad(format!("layer {l} has {} experts", counts[l]));
            }
        }
        Ok(())
    }

    pub fn experts_at(&self, layer: usize) -> usize {
        self.layer_experts
            .as_ref()
            .map_or(self.experts_per_layer, |c| c[layer])
    }

    /// Top-k clamped to the experts the layer still holds.
    pub fn top_k_at(&self, layer: usize) -> usize {
        self.top_k.min(self.experts_at(layer))
    }

    pub fn total_experts(&self) -> usize {
        (0..self.num_layers).map(|l| self.experts_at(l)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoELayer<T> {
    pub experts: Vec<Matrix<T>>,
    pub router: Matrix<T>,
}

/// Per-token expert selections of one layer.
pub type Selections = Vec<Vec<usize>>;

impl<T: Scalar> MoELayer<T> {
    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// `h · Wᵢᵀ` for every expert.
    pub fn expert_outputs(&self, h: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        self.experts.iter().map(|w| matmul_transpose(h, w)).collect()
    }

    /// Full softmax routing probabilities, one row per token.
    pub fn route(&self, h: &Matrix<T>) -> Result<Matrix<T>> {
        let logits = matmul_transpose(h, &self.router)?;
        let mut probs = Matrix::zeros(logits.rows(), logits.cols());
        for k in 0..logits.rows() {
            probs.row_mut(k).copy_from_slice(&softmax(logits.row(k))?);
        }
        Ok(probs)
    }

    /// Gated sparse forward.
    ///
    /// Non-retained experts are masked out of the softmax, the top
    /// `min(top_k, |retained|)` experts are selected (equal probability goes
    /// to the lower index) and their outputs are mixed with probabilities
    /// renormalized over the selection.
    pub fn forward(
        &self,
        h: &Matrix<T>,
        top_k: usize,
        retained: Option<&[bool]>,
    ) -> Result<(Matrix<T>, Selections)> {
        let n_e = self.num_experts();
        if let Some(keep) = retained {
            if keep.len() != n_e {
                return Err(Error::ShapeMismatch {
                    what: "retained expert mask".into(),
                    expected: vec![n_e],
                    found: vec![keep.len()],
                });
            }
        }
        let candidates: Vec<usize> = match retained {
            Some(keep) => (0..n_e).filter(|&i| keep[i]).collect(),
            None => (0..n_e).collect(),
        };
        if candidates.is_empty() {
            return Err(Error::FullyPruned);
        }
        if top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be >= 1".into()));
        }
        let k_eff = top_k.min(candidates.len());
        let logits = matmul_transpose(h, &self.router)?;
        let d_out = self.experts[0].rows();
        let mut y = Matrix::zeros(h.rows(), d_out);
        let mut selections = Vec::with_capacity(h.rows());

        for tok in 0..h.rows() {
            let row = logits.row(tok);
            let cand_logits: Vec<T> = candidates.iter().map(|&i| row[i]).collect();
            let probs = softmax(&cand_logits)?;
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&a, &b| {
                probs[b]
                    .partial_cmp(&probs[a])
                    .expect("finite probabilities")
                    .then(candidates[a].cmp(&candidates[b]))
            });
            order.truncate(k_eff);
            let norm = order.iter().fold(T::zero(), |acc, &j| acc + probs[j]);
            let hk = h.row(tok);
            let out = y.row_mut(tok);
            for &j in &order {
                let gate = probs[j] / norm;
                let w = &self.experts[candidates[j]];
                for (c, o) in out.iter_mut().enumerate() {
                    let v = w.row(c).iter().zip(hk).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    *o = *o + gate * v;
                }
            }
            selections.push(order.iter().map(|&j| candidates[j]).collect());
        }
        Ok((y, selections))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoEModel<T> {
    pub config: MoEConfig,
    pub layers: Vec<MoELayer<T>>,
}

impl<T: Scalar> MoEModel<T> {
    pub fn new(config: MoEConfig, layers: Vec<MoELayer<T>>) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.num_layers {
            return Err(Error::ShapeMismatch {
                what: "layer count".into(),
                expected: vec![config.num_layers],
                found: vec![layers.len()],
            });
        }
        let d = config.hidden_dim;
        for (l, layer) in layers.iter().enumerate() {
            let n_e = config.experts_at(l);
            if layer.experts.len() != n_e {
                return Err(Error::ShapeMismatch {
                    what: format!("layer {l} expert count"),
                    expected: vec![n_e],
                    found: vec![layer.experts.len()],
                });
            }
            if layer.router.shape() != [n_e, d] {
                return Err(Error::ShapeMismatch {
                    what: format!("layer {l} router"),
                    expected: vec![n_e, d],
                    found: layer.router.shape().to_vec(),
                });
            }
            for (i, w) in layer.experts.iter().enumerate() {
                if w.shape() != [d, d] {
                    return Err(Error::ShapeMismatch {
                        what: format!("layer {l} expert {i}"),
                        expected: vec![d, d],
                        found: w.shape().to_vec(),
                    });
                }
            }
        }
        Ok(Self { config, layers })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Forward pass with full trace capture, optionally under a prune mask.
    pub fn forward(&self, x: &SampleBatch<T>, mask: Option<&PruneMask>) -> Result<ForwardTrace<T>> {
        model_forward(self, x, mask)
    }
}

/// One calibration or evaluation sample: `N_x` token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<T> {
    pub tokens: Matrix<T>,
}

impl<T: Scalar> SampleBatch<T> {
    pub fn new(tokens: Matrix<T>) -> Result<Self> {
        if tokens.rows() == 0 {
            return Err(Error::Empty("sample token list"));
        }
        Ok(Self { tokens })
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// `H⁽⁰⁾ … H⁽ᴸ⁾`; the first entry is the input.
    pub hidden_states: Vec<Matrix<T>>,
    pub layer_outputs: Vec<Matrix<T>>,
    /// Unmasked softmax of each layer's router on that layer's input.
    pub routing_probs: Vec<Matrix<T>>,
    pub selected_experts: Vec<Selections>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn final_hidden(&self) -> &Matrix<T> {
        self.hidden_states.last().expect("trace has L+1 hidden states")
    }
}

pub fn route<T: Scalar>(layer: &MoELayer<T>, h: &Matrix<T>) -> Result<Matrix<T>> {
    layer.route(h)
}

pub fn layer_forward<T: Scalar>(
    layer: &MoELayer<T>,
    h: &Matrix<T>,
    top_k: usize,
    retained: Option<&[bool]>,
) -> Result<(Matrix<T>, Selections)> {
    layer.forward(h, top_k, retained)
}

pub fn model_forward<T: Scalar>(
    model: &MoEModel<T>,
    x: &SampleBatch<T>,
    mask: Option<&PruneMask>,
) -> Result<ForwardTrace<T>> {
    let cfg = &model.config;
    if x.tokens.cols() != cfg.hidden_dim {
        return Err(Error::DimensionMismatch {
            op: "model_forward input",
            left: x.tokens.shape().to_vec(),
            right: vec![cfg.hidden_dim],
        });
    }
    if let Some(mask) = mask {
        if mask.num_layers() != model.num_layers() {
            return Err(Error::ShapeMismatch {
                what: "prune mask layer count".into(),
                expected: vec![model.num_layers()],
                found: vec![mask.num_layers()],
            });
        }
    }
    let l_count = model.num_layers();
    let mut trace = ForwardTrace {
        hidden_states: Vec::with_capacity(l_count + 1),
        layer_outputs: Vec::with_capacity(l_count),
        routing_probs: Vec::with_capacity(l_count),
        selected_experts: Vec::with_capacity(l_count),
    };
    trace.hidden_states.push(x.tokens.clone());
    for (l, layer) in model.layers.iter().enumerate() {
        let h = &trace.hidden_states[l];
        let retained = mask.map(|m| m.layer(l));
        let (y, sel) = layer
            .forward(h, cfg.top_k_at(l), retained)
            .map_err(|e| match e {
                Error::FullyPruned => Error::LayerFullyPruned { layer: l },
                other => other,
            })?;
        let probs = layer.route(h)?;
        let next = cfg.nonlinearity.apply(&y);
        trace.routing_probs.push(probs);
        trace.layer_outputs.push(y);
        trace.selected_experts.push(sel);
        trace.hidden_states.push(next);
    }
    Ok(trace)
}
