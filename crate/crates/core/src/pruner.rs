//! Path sets to retention masks, sparsity targeting, and pruned-model
//! materialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MoEConfig, MoELayer, MoEModel};
use crate::planner::{top_m_paths_dp, PathSet};
use crate::scalar::Scalar;
use crate::scoring::SampleGraph;

/// Per-layer expert retention flags.
///
/// Rows may differ in length (a mask over an already-pruned model).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneMask {
    keep: Vec<Vec<bool>>,
}

impl PruneMask {
    pub fn from_rows(keep: Vec<Vec<bool>>) -> Self {
        Self { keep }
    }

    pub fn full(config: &MoEConfig) -> Self {
        Self::filled(&per_layer_counts(config), true)
    }

    pub fn filled(counts: &[usize], value: bool) -> Self {
        Self {
            keep: counts.iter().map(|&n| vec![value; n]).collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.keep.len()
    }

    pub fn layer(&self, l: usize) -> &[bool] {
        &self.keep[l]
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.keep
    }

    pub fn is_kept(&self, l: usize, i: usize) -> bool {
        self.keep[l][i]
    }

    pub fn set(&mut self, l: usize, i: usize, value: bool) {
        self.keep[l][i] = value;
    }

    pub fn retained_per_layer(&self) -> Vec<usize> {
        self.keep.iter().map(|r| r.iter().filter(|&&k| k).count()).collect()
    }

    pub fn retained_total(&self) -> usize {
        self.retained_per_layer().iter().sum()
    }

    pub fn slots(&self) -> usize {
        self.keep.iter().map(Vec::len).sum()
    }

    pub fn retention_fraction(&self) -> f64 {
        self.retained_total() as f64 / self.slots() as f64
    }

    /// Every flag of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &PruneMask) -> bool {
        self.keep.len() == other.keep.len()
            && self.keep.iter().zip(&other.keep).all(|(a, b)| {
                a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| !x || y)
            })
    }

    pub fn first_empty_layer(&self) -> Option<usize> {
        self.keep.iter().position(|r| !r.iter().any(|&k| k))
    }

    pub fn to_file(&self) -> MaskFile {
        MaskFile {
            layers: self.keep.len(),
            experts: self.keep.iter().map(Vec::len).max().unwrap_or(0),
            keep: self
                .keep
                .iter()
                .map(|r| r.iter().map(|&k| u8::from(k)).collect())
                .collect(),
        }
    }

    pub fn from_file(file: MaskFile) -> Result<Self> {
        if file.keep.len() != file.layers {
            return Err(Error::ShapeMismatch {
                what: "mask layer count".into(),
                expected: vec![file.layers],
                found: vec![file.keep.len()],
            });
        }
        let mut keep = Vec::with_capacity(file.layers);
        for (l, row) in file.keep.into_iter().enumerate() {
            if row.is_empty() || row.len() > file.experts {
                return Err(Error::ShapeMismatch {
                    what: format!("mask layer {l}"),
                    expected: vec![file.experts],
                    found: vec![row.len()],
                });
            }
            let flags = row
                .into_iter()
                .map(|v| match v {
                    0 => Ok(false),
                    1 => Ok(true),
                    other => Err(Error::Malformed(format!(
                        "mask entry {other} at layer {l} is not 0 or 1"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            keep.push(flags);
        }
        Ok(Self { keep })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::json::write_pretty(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(crate::json::read(path)?)
    }
}

/// On-disk mask layout: `{"L": .., "Ne": .., "keep": [[0|1]]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskFile {
    #[serde(rename = "L")]
    pub layers: usize,
    #[serde(rename = "Ne")]
    pub experts: usize,
    pub keep: Vec<Vec<u8>>,
}

fn per_layer_counts(config: &MoEConfig) -> Vec<usize> {
    (0..config.num_layers).map(|l| config.experts_at(l)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub retained_per_layer: Vec<usize>,
    pub retained_total: usize,
    pub retention_fraction: f64,
    pub m_used: usize,
    pub samples_used: usize,
    /// `(layer, expert)` pairs dropped to meet the target after the union
    /// overshot it.
    #[serde(default)]
    pub trimmed: Vec<(usize, usize)>,
}

impl RetentionReport {
    pub fn new(mask: &PruneMask, m_used: usize, samples_used: usize, trimmed: Vec<(usize, usize)>) -> Self {
        Self {
            retained_per_layer: mask.retained_per_layer(),
            retained_total: mask.retained_total(),
            retention_fraction: mask.retention_fraction(),
            m_used,
            samples_used,
            trimmed,
        }
    }
}

/// Experts on any path, per layer, ascending.
pub fn experts_from_paths<T: Scalar>(pathset: &PathSet<T>) -> Result<Vec<Vec<usize>>> {
    let n_layers = pathset.num_layers().ok_or(Error::Empty("path set"))?;
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); n_layers];
    for p in &pathset.paths {
        if p.experts.len() != n_layers {
            return Err(Error::ShapeMismatch {
                what: "path length".into(),
                expected: vec![n_layers],
                found: vec![p.experts.len()],
            });
        }
        for (l, &i) in p.experts.iter().enumerate() {
            sets[l].push(i);
        }
    }
    for s in &mut sets {
        s.sort_unstable();
        s.dedup();
    }
    Ok(sets)
}

/// Union of per-sample expert sets over a layer shape given by `counts`.
pub fn union_masks(per_sample: &[Vec<Vec<usize>>], counts: &[usize]) -> Result<PruneMask> {
    if per_sample.is_empty() {
        return Err(Error::Empty("per-sample expert sets"));
    }
    let mut mask = PruneMask::filled(counts, false);
    for (s, sets) in per_sample.iter().enumerate() {
        if sets.len() != counts.len() {
            return Err(Error::ShapeMismatch {
                what: format!("sample {s} expert sets"),
                expected: vec![counts.len()],
                found: vec![sets.len()],
            });
        }
        for (l, set) in sets.iter().enumerate() {
            for &i in set {
                if i >= counts[l] {
                    return Err(Error::Malformed(format!(
                        "expert {i} out of range at layer {l}"
                    )));
                }
                mask.set(l, i, true);
            }
        }
    }
    Ok(mask)
}

/// Dataset-level mask from one path set per sample.
pub fn mask_from_pathsets<T: Scalar>(pathsets: &[PathSet<T>], counts: &[usize]) -> Result<PruneMask> {
    let sets = pathsets
        .iter()
        .map(experts_from_paths)
        .collect::<Result<Vec<_>>>()?;
    union_masks(&sets, counts)
}

/// Experts a retention target asks for: `⌈target · slots⌉`, with a small
/// tolerance so that e.g. `0.5 · 48` is not pushed to 25 by rounding.
pub fn target_count(target_retention: f64, slots: usize) -> usize {
    ((target_retention * slots as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Smallest `m ≤ m_max` (doubling, then bisection) whose union mask reaches
/// the target, then trims any overshoot by ascending selection frequency.
pub fn target_sparsity_search<T: Scalar>(
    graphs: &[SampleGraph<T>],
    target_retention: f64,
    m_max: usize,
) -> Result<(PruneMask, RetentionReport)> {
    if !(target_retention > 0.0 && target_retention <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "target retention must lie in (0, 1], got {target_retention}"
        )));
    }
    if m_max == 0 {
        return Err(Error::InvalidArgument("m_max must be >= 1".into()));
    }
    let first = graphs.first().ok_or(Error::Empty("graph list"))?;
    let counts = first.experts_per_layer();
    if let Some(s) = graphs.iter().position(|g| g.experts_per_layer() != counts) {
        return Err(Error::ShapeMismatch {
            what: format!("graph {s} layer shape"),
            expected: counts.clone(),
            found: graphs[s].experts_per_layer(),
        });
    }
    let slots: usize = counts.iter().sum();
    let want = target_count(target_retention, slots);

    let plan = |m: usize| -> Result<Vec<PathSet<T>>> {
        graphs.iter().map(|g| top_m_paths_dp(g, m)).collect()
    };
    let truncated = |sets: &[PathSet<T>], m: usize| -> Vec<PathSet<T>> {
        sets.iter()
            .map(|s| PathSet {
                m,
                paths: s.paths[..m.min(s.len())].to_vec(),
            })
            .collect()
    };

    // Doubling runs the DP; bisection reuses prefixes of the last run, since
    // the top-m paths are a prefix of the top-m' paths for m < m'.
    let mut lo = 0usize; // largest m known to fall short
    let mut hi = 1usize;
    let mut sets = plan(hi)?;
    let mut mask = mask_from_pathsets(&sets, &counts)?;
    while mask.retained_total() < want {
        if hi == m_max {
            return Err(Error::TargetUnreachable {
                target: target_retention,
                achieved: mask.retention_fraction(),
                m_max,
            });
        }
        lo = hi;
        hi = (hi * 2).min(m_max);
        sets = plan(hi)?;
        mask = mask_from_pathsets(&sets, &counts)?;
    }
    let mut best_mask = mask;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let attempt = mask_from_pathsets(&truncated(&sets, mid), &counts)?;
        if attempt.retained_total() >= want {
            hi = mid;
            best_mask = attempt;
        } else {
            lo = mid;
        }
    }
    let mut mask = best_mask;
    let trimmed = if mask.retained_total() > want {
        let width = counts.iter().copied().max().unwrap_or(0);
        let freq = selection_frequency(&truncated(&sets, hi), width, None)?;
        trim_to_count(&mut mask, &freq, want)
    } else {
        Vec::new()
    };
    let report = RetentionReport::new(&mask, hi, graphs.len(), trimmed);
    Ok((mask, report))
}

/// Drops retained experts by ascending frequency (ties: higher layer, then
/// higher expert index) until `want` remain, never emptying a layer.
fn trim_to_count(mask: &mut PruneMask, freq: &FrequencyMatrix, want: usize) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(u64, usize, usize)> = Vec::new();
    for l in 0..mask.num_layers() {
        for i in 0..mask.layer(l).len() {
            if mask.is_kept(l, i) {
                candidates.push((freq.counts[l][i], l, i));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2)));
    let mut per_layer = mask.retained_per_layer();
    let mut excess = mask.retained_total() - want;
    let mut trimmed = Vec::new();
    for (_, l, i) in candidates {
        if excess == 0 {
            break;
        }
        if per_layer[l] > 1 {
            mask.set(l, i, false);
            per_layer[l] -= 1;
            excess -= 1;
            trimmed.push((l, i));
        }
    }
    trimmed
}

/// Index map produced by [`apply_mask`]: for each layer, old → new position
/// and new → old.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapTable {
    pub layers: Vec<LayerRemap>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRemap {
    pub old_to_new: Vec<Option<usize>>,
    pub new_to_old: Vec<usize>,
}

impl RemapTable {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::json::write_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::json::read(path)
    }
}

/// Builds the smaller model holding only retained experts and router rows.
pub fn apply_mask<T: Scalar>(model: &MoEModel<T>, mask: &PruneMask) -> Result<(MoEModel<T>, RemapTable)> {
    if mask.num_layers() != model.num_layers() {
        return Err(Error::ShapeMismatch {
            what: "mask layer count".into(),
            expected: vec![model.num_layers()],
            found: vec![mask.num_layers()],
        });
    }
    if let Some(layer) = mask.first_empty_layer() {
        return Err(Error::LayerFullyPruned { layer });
    }
    let mut layers = Vec::with_capacity(model.num_layers());
    let mut remap = Vec::with_capacity(model.num_layers());
    for (l, layer) in model.layers.iter().enumerate() {
        let keep = mask.layer(l);
        if keep.len() != layer.num_experts() {
            return Err(Error::ShapeMismatch {
                what: format!("mask layer {l}"),
                expected: vec![layer.num_experts()],
                found: vec![keep.len()],
            });
        }
        let new_to_old: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
        let mut old_to_new = vec![None; keep.len()];
        for (new, &old) in new_to_old.iter().enumerate() {
            old_to_new[old] = Some(new);
        }
        layers.push(MoELayer {
            experts: new_to_old.iter().map(|&i| layer.experts[i].clone()).collect(),
            router: layer.router.select_rows(&new_to_old),
        });
        remap.push(LayerRemap { old_to_new, new_to_old });
    }
    let mut config = model.config.clone();
    config.layer_experts = Some(remap.iter().map(|r| r.new_to_old.len()).collect());
    Ok((MoEModel::new(config, layers)?, RemapTable { layers: remap }))
}

/// Path counts per `(layer, expert)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrequencyMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl FrequencyMatrix {
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }
}

/// Counts how often each expert appears on the given paths, over a grid of
/// `experts` columns. Experts listed in `outliers` are then set to the
/// largest count in the matrix.
pub fn selection_frequency<T: Scalar>(
    pathsets: &[PathSet<T>],
    experts: usize,
    outliers: Option<&[(usize, usize)]>,
) -> Result<FrequencyMatrix> {
    let n_layers = pathsets
        .iter()
        .find_map(PathSet::num_layers)
        .ok_or(Error::Empty("path sets"))?;
    let mut counts = vec![vec![0u64; experts]; n_layers];
    for set in pathsets {
        for p in &set.paths {
            if p.experts.len() != n_layers {
                return Err(Error::ShapeMismatch {
                    what: "path length".into(),
                    expected: vec![n_layers],
                    found: vec![p.experts.len()],
                });
            }
            for (l, &i) in p.experts.iter().enumerate() {
                if i >= experts {
                    return Err(Error::Malformed(format!(
                        "path references expert {i} at layer {l}, only {experts} exist"
                    )));
                }
                counts[l][i] += 1;
            }
        }
    }
    if let Some(ids) = outliers {
        let max = counts.iter().flatten().copied().max().unwrap_or(0);
        for &(l, i) in ids {
            if l >= n_layers || i >= experts {
                return Err(Error::InvalidArgument(format!(
                    "outlier ({l}, {i}) outside {n_layers}x{experts}"
                )));
            }
            counts[l][i] = max;
        }
    }
    Ok(FrequencyMatrix { counts })
}

#[cfg(test)]
mod tests;
