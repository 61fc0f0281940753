//! Top-m path search over the layered expert graph.
//!
//! A path picks one expert per layer. Its log weight accumulates as
//! `log e¹ + (log t¹ + log e²) + (log t² + log e³) + …`, one edge then one
//! node per step, in exactly this order in both the DP and the enumeration,
//! so the two agree bit for bit.
//!
//! Paths order by log weight descending, then by expert sequence ascending.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scoring::SampleGraph;

/// Default limit on the number of paths `top_m_paths_bruteforce` enumerates.
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PrefixPath<T: Scalar> {
    pub experts: Vec<usize>,
    pub log_weight: T,
}

impl<T: Scalar> PrefixPath<T> {
    fn extend(&self, expert: usize, step: T) -> Self {
        let mut experts = Vec::with_capacity(self.experts.len() + 1);
        experts.extend_from_slice(&self.experts);
        experts.push(expert);
        Self {
            experts,
            log_weight: self.log_weight + step,
        }
    }
}

/// Best-first order: heavier first, then lexicographically smaller.
pub fn path_order<T: Scalar>(a: &PrefixPath<T>, b: &PrefixPath<T>) -> Ordering {
    b.log_weight
        .partial_cmp(&a.log_weight)
        .expect("finite log weights")
        .then_with(|| a.experts.cmp(&b.experts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PathSet<T: Scalar> {
    pub m: usize,
    pub paths: Vec<PrefixPath<T>>,
}

impl<T: Scalar> PathSet<T> {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn num_layers(&self) -> Option<usize> {
        self.paths.first().map(|p| p.experts.len())
    }
}

/// `log e¹[i₁] + Σ (log t^l[i_l][i_{l+1}] + log e^{l+1}[i_{l+1}])`.
pub fn path_log_weight<T: Scalar>(graph: &SampleGraph<T>, experts: &[usize]) -> Result<T> {
    let n_layers = graph.num_layers();
    if experts.len() != n_layers {
        return Err(Error::InvalidArgument(format!(
            "path has {} entries, graph has {n_layers} layers",
            experts.len()
        )));
    }
    if let Some((l, &i)) = experts
        .iter()
        .enumerate()
        .find(|&(l, &i)| i >= graph.experts_at(l))
    {
        return Err(Error::InvalidArgument(format!(
            "expert {i} out of range at layer {l} ({} experts)",
            graph.experts_at(l)
        )));
    }
    let mut w = graph.log_node[0][experts[0]];
    for l in 0..n_layers - 1 {
        let (i, j) = (experts[l], experts[l + 1]);
        w = w + (graph.log_edge[l][(i, j)] + graph.log_node[l + 1][j]);
    }
    Ok(w)
}

/// Per-node prefix queues kept by the DP, layer by layer.
#[derive(Debug, Clone)]
pub struct DpQueues<T: Scalar> {
    pub layers: Vec<Vec<Vec<PrefixPath<T>>>>,
}

/// Top-m paths by per-node bounded queues.
pub fn top_m_paths_dp<T: Scalar>(graph: &SampleGraph<T>, m: usize) -> Result<PathSet<T>> {
    let (set, _) = top_m_paths_dp_traced(graph, m, false)?;
    Ok(set)
}

/// As [`top_m_paths_dp`], optionally returning every layer's queues.
pub fn top_m_paths_dp_traced<T: Scalar>(
    graph: &SampleGraph<T>,
    m: usize,
    keep_queues: bool,
) -> Result<(PathSet<T>, Option<DpQueues<T>>)> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let n_layers = graph.num_layers();
    let mut queues: Vec<Vec<PrefixPath<T>>> = graph.log_node[0]
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            vec![PrefixPath {
                experts: vec![i],
                log_weight: w,
            }]
        })
        .collect();
    let mut history = keep_queues.then(|| vec![queues.clone()]);

    for l in 0..n_layers - 1 {
        let next: Vec<Vec<PrefixPath<T>>> = (0..graph.experts_at(l + 1))
            .map(|j| {
                let node = graph.log_node[l + 1][j];
                let mut cands: Vec<PrefixPath<T>> = queues
                    .iter()
                    .enumerate()
                    .flat_map(|(i, q)| {
                        let step = graph.log_edge[l][(i, j)] + node;
                        q.iter().map(move |p| p.extend(j, step))
                    })
                    .collect();
                keep_best(&mut cands, m);
                cands
            })
            .collect();
        queues = next;
        if let Some(h) = history.as_mut() {
            h.push(queues.clone());
        }
    }

    let mut all: Vec<PrefixPath<T>> = queues.into_iter().flatten().collect();
    keep_best(&mut all, m);
    Ok((PathSet { m, paths: all }, history.map(|layers| DpQueues { layers })))
}

fn keep_best<T: Scalar>(paths: &mut Vec<PrefixPath<T>>, m: usize) {
    if paths.len() > m {
        paths.select_nth_unstable_by(m - 1, path_order);
        paths.truncate(m);
    }
    paths.sort_by(path_order);
}

/// Exhaustive enumeration; the reference the DP is checked against.
pub fn top_m_paths_bruteforce<T: Scalar>(graph: &SampleGraph<T>, m: usize) -> Result<PathSet<T>> {
    top_m_paths_bruteforce_capped(graph, m, DEFAULT_ENUMERATION_CAP)
}

pub fn top_m_paths_bruteforce_capped<T: Scalar>(
    graph: &SampleGraph<T>,
    m: usize,
    cap: u128,
) -> Result<PathSet<T>> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let total = graph.path_count();
    if total > cap {
        return Err(Error::EnumerationCap { paths: total, cap });
    }
    let counts = graph.experts_per_layer();
    let mut seq = vec![0usize; counts.len()];
    let mut all = Vec::with_capacity(total as usize);
    loop {
        all.push(PrefixPath {
            experts: seq.clone(),
            log_weight: path_log_weight(graph, &seq)?,
        });
        // odometer increment, last layer fastest
        let mut l = counts.len();
        loop {
            if l == 0 {
                all.sort_by(path_order);
                all.truncate(m);
                return Ok(PathSet { m, paths: all });
            }
            l -= 1;
            seq[l] += 1;
            if seq[l] < counts[l] {
                break;
            }
            seq[l] = 0;
        }
    }
}
