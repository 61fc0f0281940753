use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{LayerScore, SampleGraph};
use crate::error::{Error, Result};
use crate::numerics::tensor::{read_matrix, write_matrix};
use crate::scalar::Scalar;

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "")]
struct GraphFile<T: Scalar> {
    num_layers: usize,
    experts_per_layer: Vec<usize>,
    layers: Vec<LayerScore<T>>,
    log_node: Vec<Vec<T>>,
    transitions: Vec<String>,
    log_transitions: Vec<String>,
}

/// Writes `{stem}.json` plus `{stem}.t{l}.tnsr` (linear) and
/// `{stem}.logt{l}.tnsr` (log) transition blobs into `dir`. Returns the JSON
/// path.
pub fn save_graph<T: Scalar>(graph: &SampleGraph<T>, dir: &Path, stem: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut transitions = Vec::new();
    let mut log_transitions = Vec::new();
    for (l, (t, lt)) in graph.transitions.iter().zip(&graph.log_edge).enumerate() {
        let name = format!("{stem}.t{l}.tnsr");
        write_matrix(&dir.join(&name), t)?;
        transitions.push(name);
        let name = format!("{stem}.logt{l}.tnsr");
        write_matrix(&dir.join(&name), lt)?;
        log_transitions.push(name);
    }
    let file = GraphFile {
        num_layers: graph.num_layers(),
        experts_per_layer: graph.experts_per_layer(),
        layers: graph.layer_scores.clone(),
        log_node: graph.log_node.clone(),
        transitions,
        log_transitions,
    };
    let path = dir.join(format!("{stem}.json"));
    crate::json::write_pretty(&path, &file)?;
    Ok(path)
}

pub fn load_graph<T: Scalar>(path: &Path) -> Result<SampleGraph<T>> {
    let file: GraphFile<T> = crate::json::read(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let l = file.num_layers;
    let counts = &file.experts_per_layer;
    let lens_ok = counts.len() == l
        && file.layers.len() == l
        && file.log_node.len() == l
        && file.transitions.len() + 1 == l
        && file.log_transitions.len() + 1 == l;
    if !lens_ok || l < 2 {
        return Err(Error::ShapeMismatch {
            what: format!("graph {}", path.display()),
            expected: vec![l, l, l, l.saturating_sub(1)],
            found: vec![counts.len(), file.layers.len(), file.log_node.len(), file.transitions.len()],
        });
    }
    for (i, (n, row)) in counts.iter().zip(&file.log_node).enumerate() {
        if row.len() != *n || file.layers[i].e.len() != *n {
            return Err(Error::ShapeMismatch {
                what: format!("graph layer {i}"),
                expected: vec![*n],
                found: vec![row.len()],
            });
        }
    }
    let read = |names: &[String], what: &str| {
        names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let m = read_matrix::<T>(&dir.join(name), &format!("{what} {i}"))?;
                let want = [counts[i], counts[i + 1]];
                if m.shape() != want {
                    return Err(Error::ShapeMismatch {
                        what: format!("{what} {i}"),
                        expected: want.to_vec(),
                        found: m.shape().to_vec(),
                    });
                }
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()
    };
    let transitions = read(&file.transitions, "transition")?;
    let log_edge = read(&file.log_transitions, "log transition")?;
    Ok(SampleGraph {
        layer_scores: file.layers,
        transitions,
        log_node: file.log_node,
        log_edge,
    })
}
