use std::path::{Path, PathBuf};

use moe_pathfinder::calibration::calibrate;
use moe_pathfinder::harness::{evaluate_mask, export_heatmap, run_comparison, AblationFlags, ExperimentConfig};
use moe_pathfinder::model::{gen_data, gen_model, load_data, load_model, save_data, save_model};
use moe_pathfinder::numerics::{derive_seed, Rng};
use moe_pathfinder::planner::{top_m_paths_bruteforce, top_m_paths_dp};
use moe_pathfinder::pruner::{apply_mask, mask_from_pathsets, selection_frequency, target_sparsity_search};
use moe_pathfinder::scoring::{load_graph, save_graph, score_sample};
use moe_pathfinder::{
    json, CalibrationSet, Error, MoEConfig, MoEModel, Nonlinearity, PathSet, PruneMask, RetentionReport,
    SampleGraph,
};
use rayon::prelude::*;

use crate::manifest::PipelineManifest;
use crate::{
    CalibrateArgs, Command, CompareArgs, EvalArgs, Failure, GenDataArgs, GenModelArgs, HeatmapArgs,
    NonlinearityArg, PlanArgs, Preset, PruneArgs, ScoreArgs, SelfcheckArgs,
};

type Outcome<T = ()> = std::result::Result<T, Failure>;

pub fn run(command: Command, manifest: Option<&Path>) -> Outcome {
    let mut record = match manifest {
        Some(p) => Some(PipelineManifest::open(p)?),
        None => None,
    };
    match command {
        Command::GenModel(a) => gen_model_cmd(a, record.as_mut())?,
        Command::GenData(a) => gen_data_cmd(a, record.as_mut())?,
        Command::Calibrate(a) => calibrate_cmd(a, record.as_mut())?,
        Command::Score(a) => score_cmd(a, record.as_mut())?,
        Command::Plan(a) => plan_cmd(a, record.as_mut())?,
        Command::Prune(a) => prune_cmd(a, record.as_mut())?,
        Command::Eval(a) => eval_cmd(a, record.as_mut())?,
        Command::Heatmap(a) => heatmap_cmd(a, record.as_mut())?,
        Command::Compare(a) => compare_cmd(a, record.as_mut())?,
        Command::Selfcheck(a) => selfcheck_cmd(a, record.as_mut())?,
    }
    if let (Some(path), Some(m)) = (manifest, record.as_mut()) {
        m.save(path)?;
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn gen_model_cmd(a: GenModelArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let nonlinearity = match a.nonlinearity {
        NonlinearityArg::None => Nonlinearity::None,
        NonlinearityArg::Tanh => Nonlinearity::Tanh,
    };
    let config = MoEConfig::new(a.layers, a.experts, a.dim, a.topk, nonlinearity)?;
    let model = gen_model::<f64>(&config, a.seed)?;
    save_model(&model, &a.out)?;
    if let Some(m) = record {
        m.model = Some(a.out.clone());
        m.seeds.insert("model".into(), a.seed);
    }
    println!("wrote model to {}", a.out.display());
    Ok(())
}

fn gen_data_cmd(a: GenDataArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let model: MoEModel = load_model(&a.model)?;
    let samples = gen_data::<f64>(&model.config, a.samples, a.tokens, a.seed)?;
    save_data(&samples, &a.out)?;
    if let Some(m) = record {
        m.data = Some(a.out.clone());
        m.seeds.insert("data".into(), a.seed);
    }
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let samples = load_data::<f64>(&a.data)?;
    let cal = calibrate(&samples, a.k, a.seed, a.max_iters)?;
    json::write_pretty(&a.out, &cal)?;
    if let Some(m) = record {
        m.calibration = Some(a.out.clone());
        m.seeds.insert("calibration".into(), a.seed);
    }
    println!("selected samples {:?}", cal.sample_ids);
    Ok(())
}

fn score_cmd(a: ScoreArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let model: MoEModel = load_model(&a.model)?;
    let samples = load_data::<f64>(&a.data)?;
    let ids: Vec<usize> = match &a.calibration {
        Some(p) => {
            let cal: CalibrationSet = json::read(p)?;
            if let Some(&bad) = cal.sample_ids.iter().find(|&&i| i >= samples.len()) {
                return Err(Error::Malformed(format!(
                    "calibration sample {bad} not in a data file of {} samples",
                    samples.len()
                ))
                .into());
            }
            cal.sample_ids
        }
        None => (0..samples.len()).collect(),
    };
    let graphs = ids
        .par_iter()
        .map(|&i| score_sample(&model, &samples[i]))
        .collect::<Result<Vec<_>, _>>()?;
    let written = ids
        .iter()
        .zip(&graphs)
        .map(|(id, g)| save_graph(g, &a.out, &format!("graph{id}")))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(m) = record {
        m.graphs = written;
    }
    println!("wrote {} graphs to {}", graphs.len(), a.out.display());
    Ok(())
}

/// `graph3.json` → `paths3.json`; other names keep their stem.
fn pathset_name(graph: &Path) -> String {
    let stem = graph.file_stem().and_then(|s| s.to_str()).unwrap_or("graph");
    match stem.strip_prefix("graph") {
        Some(rest) => format!("paths{rest}.json"),
        None => format!("{stem}.paths.json"),
    }
}

fn load_graphs(paths: &[PathBuf]) -> Outcome<Vec<SampleGraph>> {
    Ok(paths
        .par_iter()
        .map(|p| load_graph::<f64>(p))
        .collect::<Result<Vec<_>, _>>()?)
}

fn plan_cmd(a: PlanArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let graphs = load_graphs(&a.graph)?;
    let sets = graphs
        .par_iter()
        .map(|g| top_m_paths_dp(g, a.m))
        .collect::<Result<Vec<_>, _>>()?;
    create_dir(&a.out)?;
    let mut written = Vec::with_capacity(sets.len());
    for (g, set) in a.graph.iter().zip(&sets) {
        let p = a.out.join(pathset_name(g));
        if written.contains(&p) {
            return Err(Failure::Usage(format!("two graphs map onto {}", p.display())));
        }
        json::write_pretty(&p, set)?;
        written.push(p);
    }
    if let Some(m) = record {
        m.pathsets = written;
    }
    let total: usize = sets.iter().map(PathSet::len).sum();
    println!("wrote {} paths over {} path sets to {}", total, sets.len(), a.out.display());
    Ok(())
}

fn prune_cmd(a: PruneArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let model: MoEModel = load_model(&a.model)?;
    let counts: Vec<usize> = (0..model.num_layers()).map(|l| model.config.experts_at(l)).collect();
    let (mask, report) = if !a.paths.is_empty() {
        let sets = a
            .paths
            .iter()
            .map(|p| json::read::<PathSet>(p))
            .collect::<Result<Vec<_>, _>>()?;
        let mask = mask_from_pathsets(&sets, &counts)?;
        let m = sets.iter().map(|s| s.m).max().unwrap_or(0);
        let report = RetentionReport::new(&mask, m, sets.len(), Vec::new());
        (mask, report)
    } else {
        let graphs = load_graphs(&a.graph)?;
        match (a.target_retention, a.m) {
            (Some(target), None) => target_sparsity_search(&graphs, target, a.m_max)?,
            (None, Some(m)) => {
                let sets = graphs
                    .par_iter()
                    .map(|g| top_m_paths_dp(g, m))
                    .collect::<Result<Vec<_>, _>>()?;
                let mask = mask_from_pathsets(&sets, &counts)?;
                let report = RetentionReport::new(&mask, m, sets.len(), Vec::new());
                (mask, report)
            }
            _ => {
                return Err(Failure::Usage(
                    "--graph needs exactly one of --target-retention or --m".into(),
                ))
            }
        }
    };
    let (pruned, remap) = apply_mask(&model, &mask)?;
    create_dir(&a.out)?;
    let mask_path = a.out.join("mask.json");
    mask.save(&mask_path)?;
    let report_path = a.out.join("report.json");
    json::write_pretty(&report_path, &report)?;
    let model_dir = a.out.join("model");
    save_model(&pruned, &model_dir)?;
    remap.save(&model_dir.join("remap.json"))?;
    if let Some(m) = record {
        m.mask = Some(mask_path);
        m.pruned_model = Some(model_dir);
        m.add_report(&report_path);
    }
    println!(
        "retained {} of {} experts ({:?} per layer), m = {}",
        report.retained_total,
        mask.slots(),
        report.retained_per_layer,
        report.m_used
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let model: MoEModel = load_model(&a.model)?;
    let samples = load_data::<f64>(&a.data)?;
    let mask = PruneMask::load(&a.mask)?;
    let result = evaluate_mask(&model, &mask, &samples)?;
    match &a.out {
        Some(out) => {
            json::write_pretty(out, &result)?;
            if let Some(m) = record {
                m.add_report(out);
            }
            println!("mean final-layer error {}", result.mean_error);
        }
        None => {
            let text = serde_json::to_string_pretty(&result).map_err(|e| Error::json("<stdout>", e))?;
            println!("{text}");
        }
    }
    Ok(())
}

fn heatmap_cmd(a: HeatmapArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let sets = a
        .paths
        .iter()
        .map(|p| json::read::<PathSet>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let outliers = (!a.outlier.is_empty()).then_some(a.outlier.as_slice());
    let freq = selection_frequency(&sets, a.experts, outliers)?;
    export_heatmap(&freq, &a.out)?;
    if let Some(m) = record {
        m.add_report(&a.out);
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn compare_cmd(a: CompareArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    let mut cfg = match (&a.config, a.preset, a.seed) {
        (Some(p), _, _) => json::read::<ExperimentConfig>(p)?,
        (None, Some(preset), Some(seed)) => {
            let mut cfg = match preset {
                Preset::Desk => ExperimentConfig::desk_default(),
                Preset::Planted => ExperimentConfig::planted_default(),
            };
            cfg.data_seed = seed;
            cfg.calibration_seed = seed.wrapping_add(1);
            cfg.random_seed = seed.wrapping_add(2);
            if let Some(n) = a.models {
                cfg.model_seeds = (0..n).collect();
            }
            cfg
        }
        _ => return Err(Failure::Usage("--preset needs --seed".into())),
    };
    if a.no_importance || a.no_transition {
        cfg.flags = AblationFlags {
            use_importance: !a.no_importance,
            use_transition: !a.no_transition,
        };
    }
    let report = run_comparison(&cfg)?;
    create_dir(&a.out)?;
    let csv_path = a.out.join("comparison.csv");
    std::fs::write(&csv_path, report.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = a.out.join("comparison.json");
    json::write_pretty(&json_path, &report)?;
    if let Some(m) = record {
        m.add_report(&csv_path);
        m.add_report(&json_path);
        if let Some(seed) = a.seed {
            m.seeds.insert("compare".into(), seed);
        }
    }
    println!("pathfinder wins {}/{}", report.wins, report.outcomes.len());
    Ok(())
}

/// One random graph checked at one m; `Ok(false)` on disagreement.
fn oracle_trial(seed: u64) -> moe_pathfinder::Result<bool> {
    let mut rng = Rng::new(seed);
    let layers = 2 + rng.next_below(4) as usize;
    let experts = 2 + rng.next_below(3) as usize;
    let top_k = 1 + rng.next_below(2) as usize;
    let config = MoEConfig::new(layers, experts, 3, top_k, Nonlinearity::Tanh)?;
    let model = gen_model::<f64>(&config, rng.next_u64())?;
    let x = gen_data::<f64>(&config, 1, 4, rng.next_u64())?.remove(0);
    let graph = score_sample(&model, &x)?;
    let choices = [1, 3, 10, experts.pow(layers as u32)];
    let m = choices[rng.next_below(choices.len() as u64) as usize];
    let dp = top_m_paths_dp(&graph, m)?;
    let bf = top_m_paths_bruteforce(&graph, m)?;
    Ok(dp.len() == bf.len()
        && dp
            .paths
            .iter()
            .zip(&bf.paths)
            .all(|(a, b)| a.experts == b.experts && (a.log_weight - b.log_weight).abs() <= 1e-9))
}

fn selfcheck_cmd(a: SelfcheckArgs, record: Option<&mut PipelineManifest>) -> Outcome {
    if a.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let results = (0..a.trials as u64)
        .into_par_iter()
        .map(|t| oracle_trial(derive_seed(a.seed, t)))
        .collect::<Result<Vec<_>, _>>()?;
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("oracle: {passed}/{}", a.trials);
    if let Some(m) = record {
        m.seeds.insert("selfcheck".into(), a.seed);
    }
    if passed != a.trials {
        let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(t, _)| t).collect();
        return Err(Failure::Invariant(format!("DP disagrees with brute force in trials {failed:?}")));
    }
    Ok(())
}
