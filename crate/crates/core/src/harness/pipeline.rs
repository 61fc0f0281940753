use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{evaluate_mask, export_heatmap};
use crate::calibration::calibrate;
use crate::error::{Error, Result};
use crate::json;
use crate::model::{gen_data, gen_model, save_data, save_model, MoEConfig};
use crate::planner::top_m_paths_dp;
use crate::pruner::{apply_mask, selection_frequency, target_sparsity_search};
use crate::scoring::{save_graph, score_sample};

/// Every input of an end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub model: MoEConfig,
    pub model_seed: u64,
    pub data_seed: u64,
    pub samples: usize,
    pub tokens_per_sample: usize,
    pub calibration_k: usize,
    pub calibration_seed: u64,
    pub max_iters: usize,
    pub target_retention: f64,
    pub m_max: usize,
    /// Paths per calibration sample counted into the heatmap.
    pub heatmap_m: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutputs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub calibration: PathBuf,
    pub graphs: Vec<PathBuf>,
    pub pathsets: Vec<PathBuf>,
    pub heatmap: PathBuf,
    pub mask: PathBuf,
    pub report: PathBuf,
    pub pruned_model: PathBuf,
    pub eval: PathBuf,
}

/// generate → calibrate → score → plan → prune → evaluate, writing every
/// intermediate under `out`.
pub fn run_pipeline(params: &PipelineParams, out: &Path) -> Result<PipelineOutputs> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let model = gen_model::<f64>(&params.model, params.model_seed)?;
    let model_dir = out.join("model");
    save_model(&model, &model_dir)?;

    let data = gen_data::<f64>(&params.model, params.samples, params.tokens_per_sample, params.data_seed)?;
    let data_path = out.join("data.tnsr");
    save_data(&data, &data_path)?;

    let cal = calibrate(&data, params.calibration_k, params.calibration_seed, params.max_iters)?;
    let cal_path = out.join("calibration.json");
    json::write_pretty(&cal_path, &cal)?;

    let graph_dir = out.join("graphs");
    let path_dir = out.join("paths");
    std::fs::create_dir_all(&path_dir).map_err(|e| Error::io(&path_dir, e))?;
    let mut graphs = Vec::new();
    let mut graph_paths = Vec::new();
    let mut pathsets = Vec::new();
    let mut pathset_paths = Vec::new();
    for &id in &cal.sample_ids {
        let g = score_sample(&model, &data[id])?;
        graph_paths.push(save_graph(&g, &graph_dir, &format!("graph{id}"))?);
        let ps = top_m_paths_dp(&g, params.heatmap_m)?;
        let p = path_dir.join(format!("paths{id}.json"));
        json::write_pretty(&p, &ps)?;
        pathset_paths.push(p);
        pathsets.push(ps);
        graphs.push(g);
    }

    let freq = selection_frequency(&pathsets, params.model.experts_per_layer, None)?;
    let heatmap = out.join("heatmap.csv");
    export_heatmap(&freq, &heatmap)?;

    let (mask, report) = target_sparsity_search(&graphs, params.target_retention, params.m_max)?;
    let mask_path = out.join("mask.json");
    mask.save(&mask_path)?;
    let report_path = out.join("report.json");
    json::write_pretty(&report_path, &report)?;

    let (pruned, remap) = apply_mask(&model, &mask)?;
    let pruned_dir = out.join("pruned");
    save_model(&pruned, &pruned_dir)?;
    remap.save(&pruned_dir.join("remap.json"))?;

    let eval = evaluate_mask(&model, &mask, &data)?;
    let eval_path = out.join("eval.json");
    json::write_pretty(&eval_path, &eval)?;

    Ok(PipelineOutputs {
        model: model_dir,
        data: data_path,
        calibration: cal_path,
        graphs: graph_paths,
        pathsets: pathset_paths,
        heatmap,
        mask: mask_path,
        report: report_path,
        pruned_model: pruned_dir,
        eval: eval_path,
    })
}
