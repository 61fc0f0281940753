//! Per-sample graph weights.
//!
//! For layer `l` with input `H⁽ˡ⁻¹⁾` and expert outputs `Ŷᵢ = H⁽ˡ⁻¹⁾Wᵢᵀ`:
//!
//! * activation strength `aᵢ` = token mean of `‖Ŷᵢ,ₖ‖₂`
//! * routing preference `rⱼ` = token mean of the layer's own router softmax
//! * transition `t⁽ˡ⁾ᵢⱼ = a⁽ˡ⁾ᵢ · r⁽ˡ⁺¹⁾ⱼ` (rank one)
//! * reconstruction loss `Lᵢ` = token mean of `‖Yₖ − Ŷᵢ,ₖ‖₂²`
//! * importance `e = softmax(−L)`, multiplied by `r⁽¹⁾` on the first layer
//!   and by `a⁽ᴸ⁾` on the last.
//!
//! Every quantity covers all experts, routed to or not.

mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, MoELayer, MoEModel, SampleBatch};
use crate::numerics::{l2_norm, softmax, squared_distance, Matrix};
use crate::scalar::Scalar;

pub use io::{load_graph, save_graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LayerScore<T: Scalar> {
    pub a: Vec<T>,
    pub r: Vec<T>,
    pub recon_loss: Vec<T>,
    pub e: Vec<T>,
}

/// Weighted layered graph for one sample.
///
/// `log_node[l][i] = ln max(e, floor)` and
/// `log_edge[l][i][j] = ln max(t, floor)` with `floor = Scalar::log_floor()`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGraph<T: Scalar> {
    pub layer_scores: Vec<LayerScore<T>>,
    pub transitions: Vec<Matrix<T>>,
    pub log_node: Vec<Vec<T>>,
    pub log_edge: Vec<Matrix<T>>,
}

impl<T: Scalar> SampleGraph<T> {
    /// Assembles a graph and fills the log fields from the linear ones.
    pub fn from_scores(layer_scores: Vec<LayerScore<T>>, transitions: Vec<Matrix<T>>) -> Result<Self> {
        if layer_scores.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "graph needs at least 2 layers, got {}",
                layer_scores.len()
            )));
        }
        if transitions.len() + 1 != layer_scores.len() {
            return Err(Error::ShapeMismatch {
                what: "transition count".into(),
                expected: vec![layer_scores.len() - 1],
                found: vec![transitions.len()],
            });
        }
        for (l, t) in transitions.iter().enumerate() {
            let want = [layer_scores[l].e.len(), layer_scores[l + 1].e.len()];
            if t.shape() != want {
                return Err(Error::ShapeMismatch {
                    what: format!("transition matrix {l}"),
                    expected: want.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        let log_node = layer_scores
            .iter()
            .map(|s| s.e.iter().map(|&v| v.clamped_ln()).collect())
            .collect();
        let log_edge = transitions.iter().map(|t| t.map(T::clamped_ln)).collect();
        Ok(Self {
            layer_scores,
            transitions,
            log_node,
            log_edge,
        })
    }

    /// Graph defined directly by log weights, with linear fields left empty
    /// apart from `e` and `T` (exponentiated). Used for planning tests.
    pub fn from_log_weights(log_node: Vec<Vec<T>>, log_edge: Vec<Matrix<T>>) -> Result<Self> {
        if log_node.len() < 2 || log_edge.len() + 1 != log_node.len() {
            return Err(Error::ShapeMismatch {
                what: "log graph layers".into(),
                expected: vec![log_node.len(), log_node.len().saturating_sub(1)],
                found: vec![log_node.len(), log_edge.len()],
            });
        }
        for (l, t) in log_edge.iter().enumerate() {
            let want = [log_node[l].len(), log_node[l + 1].len()];
            if t.shape() != want {
                return Err(Error::ShapeMismatch {
                    what: format!("log edge matrix {l}"),
                    expected: want.to_vec(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if log_node.iter().any(Vec::is_empty) {
            return Err(Error::Empty("graph layer"));
        }
        let layer_scores = log_node
            .iter()
            .map(|lv| LayerScore {
                a: Vec::new(),
                r: Vec::new(),
                recon_loss: Vec::new(),
                e: lv.iter().map(|v| v.exp()).collect(),
            })
            .collect();
        let transitions = log_edge.iter().map(|m| m.map(T::exp)).collect();
        Ok(Self {
            layer_scores,
            transitions,
            log_node,
            log_edge,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.log_node.len()
    }

    pub fn experts_at(&self, layer: usize) -> usize {
        self.log_node[layer].len()
    }

    pub fn experts_per_layer(&self) -> Vec<usize> {
        self.log_node.iter().map(Vec::len).collect()
    }

    /// Number of full paths, saturating.
    pub fn path_count(&self) -> u128 {
        self.log_node
            .iter()
            .fold(1u128, |acc, l| acc.saturating_mul(l.len() as u128))
    }
}

/// Which boundary correction an importance vector receives.
#[derive(Debug, Clone, Copy)]
pub enum LayerPosition<'a, T> {
    /// Multiplied by the first layer's routing preference.
    First { routing: &'a [T] },
    Interior,
    /// Multiplied by the last layer's activation strength.
    Last { activation: &'a [T] },
}

fn token_mean<T: Scalar>(values: impl Iterator<Item = T>, n: usize) -> T {
    values.fold(T::zero(), |a, v| a + v) / T::from_count(n)
}

fn activation_from_outputs<T: Scalar>(outputs: &[Matrix<T>]) -> Vec<T> {
    outputs
        .iter()
        .map(|o| token_mean(o.row_iter().map(l2_norm), o.rows()))
        .collect()
}

fn recon_from_outputs<T: Scalar>(outputs: &[Matrix<T>], y: &Matrix<T>) -> Vec<T> {
    outputs
        .iter()
        .map(|o| {
            token_mean(
                (0..y.rows()).map(|k| squared_distance(y.row(k), o.row(k))),
                y.rows(),
            )
        })
        .collect()
}

fn mean_rows<T: Scalar>(probs: &Matrix<T>) -> Vec<T> {
    (0..probs.cols())
        .map(|j| token_mean((0..probs.rows()).map(|k| probs[(k, j)]), probs.rows()))
        .collect()
}

fn check_tokens<T: Scalar>(h: &Matrix<T>) -> Result<()> {
    if h.rows() == 0 {
        return Err(Error::Empty("token matrix"));
    }
    Ok(())
}

pub fn activation_strength<T: Scalar>(layer: &MoELayer<T>, h: &Matrix<T>) -> Result<Vec<T>> {
    check_tokens(h)?;
    Ok(activation_from_outputs(&layer.expert_outputs(h)?))
}

pub fn routing_preference<T: Scalar>(layer: &MoELayer<T>, h: &Matrix<T>) -> Result<Vec<T>> {
    check_tokens(h)?;
    Ok(mean_rows(&layer.route(h)?))
}

pub fn transition_intensity<T: Scalar>(a: &[T], r_next: &[T]) -> Matrix<T> {
    Matrix::from_fn(a.len(), r_next.len(), |i, j| a[i] * r_next[j])
}

pub fn reconstruction_loss<T: Scalar>(layer: &MoELayer<T>, h: &Matrix<T>, y: &Matrix<T>) -> Result<Vec<T>> {
    check_tokens(h)?;
    let outputs = layer.expert_outputs(h)?;
    if let Some(o) = outputs.first() {
        if o.shape() != y.shape() {
            return Err(Error::DimensionMismatch {
                op: "reconstruction_loss",
                left: y.shape().to_vec(),
                right: o.shape().to_vec(),
            });
        }
    }
    Ok(recon_from_outputs(&outputs, y))
}

pub fn importance_scores<T: Scalar>(losses: &[T], position: LayerPosition<'_, T>) -> Result<Vec<T>> {
    let neg: Vec<T> = losses.iter().map(|&l| -l).collect();
    let base = softmax(&neg)?;
    let correction = match position {
        LayerPosition::Interior => return Ok(base),
        LayerPosition::First { routing } => routing,
        LayerPosition::Last { activation } => activation,
    };
    if correction.len() != base.len() {
        return Err(Error::DimensionMismatch {
            op: "importance_scores correction",
            left: vec![base.len()],
            right: vec![correction.len()],
        });
    }
    Ok(base.iter().zip(correction).map(|(&b, &c)| b * c).collect())
}

/// Scores one sample: a single forward pass, then each expert output per
/// layer is computed once and shared by the activation, reconstruction and
/// last-layer terms.
pub fn score_sample<T: Scalar>(model: &MoEModel<T>, x: &SampleBatch<T>) -> Result<SampleGraph<T>> {
    let trace = model.forward(x, None)?;
    score_trace(model, &trace)
}

/// Scores from an existing unmasked trace.
pub fn score_trace<T: Scalar>(model: &MoEModel<T>, trace: &ForwardTrace<T>) -> Result<SampleGraph<T>> {
    let n_layers = model.num_layers();
    let mut a_all = Vec::with_capacity(n_layers);
    let mut r_all = Vec::with_capacity(n_layers);
    let mut loss_all = Vec::with_capacity(n_layers);
    for (l, layer) in model.layers.iter().enumerate() {
        let outputs = layer.expert_outputs(&trace.hidden_states[l])?;
        a_all.push(activation_from_outputs(&outputs));
        loss_all.push(recon_from_outputs(&outputs, &trace.layer_outputs[l]));
        r_all.push(mean_rows(&trace.routing_probs[l]));
    }

    let mut layer_scores = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let position = if l == 0 {
            LayerPosition::First { routing: &r_all[0] }
        } else if l + 1 == n_layers {
            LayerPosition::Last { activation: &a_all[l] }
        } else {
            LayerPosition::Interior
        };
        let e = importance_scores(&loss_all[l], position)?;
        layer_scores.push(LayerScore {
            a: a_all[l].clone(),
            r: r_all[l].clone(),
            recon_loss: loss_all[l].clone(),
            e,
        });
    }
    let transitions = (0..n_layers - 1)
        .map(|l| transition_intensity(&a_all[l], &r_all[l + 1]))
        .collect();
    SampleGraph::from_scores(layer_scores, transitions)
}

#[cfg(test)]
mod tests;
