use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ablate_graph, evaluate_mask, median, plant_model, planted_data, random_mask, AblationFlags, EvalResult};
use crate::calibration::{calibrate, CalibrationSet, DEFAULT_MAX_ITERS};
use crate::error::{Error, Result};
use crate::model::{gen_data, gen_model, MoEConfig, Nonlinearity};
use crate::numerics::derive_seed;
use crate::planner::top_m_paths_dp;
use crate::pruner::{mask_from_pathsets, target_sparsity_search, MaskFile, PruneMask, RetentionReport};
use crate::scoring::{score_sample, SampleGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Search the smallest `m` reaching this retention, trimming overshoot.
    Retention { target: f64, m_max: usize },
    /// Union of each sample's top-`m` paths, as is.
    TopM { m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: MoEConfig,
    pub model_seeds: Vec<u64>,
    pub data_seed: u64,
    /// Samples clustered to build the calibration set.
    pub pool_samples: usize,
    /// Held-out samples used for evaluation.
    pub eval_samples: usize,
    pub tokens_per_sample: usize,
    pub calibration_k: usize,
    pub calibration_seed: u64,
    pub max_iters: usize,
    pub selection: Selection,
    pub flags: AblationFlags,
    pub random_trials: usize,
    pub random_seed: u64,
    /// Use planted-expert models and inputs.
    pub planted: bool,
}

impl ExperimentConfig {
    /// Six layers of eight experts, top-2, d = 32, eight calibration samples
    /// out of 32, sixteen eval samples, 50% retention, 20 random masks.
    pub fn desk_default() -> Self {
        Self {
            model: MoEConfig::new(6, 8, 32, 2, Nonlinearity::Tanh).expect("valid default"),
            model_seeds: (0..10).collect(),
            data_seed: 1,
            pool_samples: 32,
            eval_samples: 16,
            tokens_per_sample: 16,
            calibration_k: 8,
            calibration_seed: 2,
            max_iters: DEFAULT_MAX_ITERS,
            selection: Selection::Retention {
                target: 0.5,
                m_max: 1 << 16,
            },
            flags: AblationFlags::default(),
            random_trials: 20,
            random_seed: 3,
            planted: false,
        }
    }

    /// Planted-expert variant keeping one expert per layer.
    pub fn planted_default() -> Self {
        let mut cfg = Self::desk_default();
        cfg.model.nonlinearity = Nonlinearity::None;
        cfg.planted = true;
        cfg.random_trials = 10;
        cfg.selection = Selection::Retention {
            target: 1.0 / cfg.model.experts_per_layer as f64,
            m_max: 1 << 16,
        };
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !self.flags.use_importance && !self.flags.use_transition {
            return Err(Error::InvalidConfig("both weight signals disabled".into()));
        }
        if self.model_seeds.is_empty() || self.eval_samples == 0 || self.random_trials == 0 {
            return Err(Error::InvalidConfig(
                "need at least one model seed, eval sample and random trial".into(),
            ));
        }
        if self.calibration_k == 0 || self.calibration_k > self.pool_samples {
            return Err(Error::InvalidConfig(format!(
                "calibration K = {} with a pool of {}",
                self.calibration_k, self.pool_samples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub model_seed: u64,
    pub calibration: CalibrationSet,
    pub report: RetentionReport,
    pub mask: MaskFile,
    pub pathfinder: EvalResult,
    pub random_errors: Vec<f64>,
    pub random_median: f64,
    /// Pathfinder error at or below the random median.
    pub win: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pathfinder_recovers_planted: Option<bool>,
    /// Random masks (out of `random_trials`) holding every planted expert.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_planted_recoveries: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config: ExperimentConfig,
    pub outcomes: Vec<SeedOutcome>,
    pub wins: usize,
}

impl ComparisonReport {
    /// One row per model seed.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "model_seed",
            "pathfinder_error",
            "random_median",
            "random_min",
            "random_max",
            "retention",
            "m_used",
            "win",
        ])?;
        for o in &self.outcomes {
            let min = o.random_errors.iter().copied().fold(f64::INFINITY, f64::min);
            let max = o.random_errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            w.write_record([
                o.model_seed.to_string(),
                o.pathfinder.mean_error.to_string(),
                o.random_median.to_string(),
                min.to_string(),
                max.to_string(),
                o.report.retention_fraction.to_string(),
                o.report.m_used.to_string(),
                o.win.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn select_mask(graphs: &[SampleGraph<f64>], selection: Selection) -> Result<(PruneMask, RetentionReport)> {
    match selection {
        Selection::Retention { target, m_max } => target_sparsity_search(graphs, target, m_max),
        Selection::TopM { m } => {
            let counts = graphs.first().ok_or(Error::Empty("graph list"))?.experts_per_layer();
            let sets = graphs
                .iter()
                .map(|g| top_m_paths_dp(g, m))
                .collect::<Result<Vec<_>>>()?;
            let mask = mask_from_pathsets(&sets, &counts)?;
            let report = RetentionReport::new(&mask, m, graphs.len(), Vec::new());
            Ok((mask, report))
        }
    }
}

fn run_seed(cfg: &ExperimentConfig, model_seed: u64) -> Result<SeedOutcome> {
    let n_data = cfg.pool_samples + cfg.eval_samples;
    let data_seed = derive_seed(cfg.data_seed, model_seed);
    let (model, planted, data) = if cfg.planted {
        let (model, planted) = plant_model(&cfg.model, model_seed)?;
        let data = planted_data(&cfg.model, n_data, cfg.tokens_per_sample, data_seed)?;
        (model, Some(planted), data)
    } else {
        let model = gen_model::<f64>(&cfg.model, model_seed)?;
        let data = gen_data::<f64>(&cfg.model, n_data, cfg.tokens_per_sample, data_seed)?;
        (model, None, data)
    };
    let (pool, eval) = data.split_at(cfg.pool_samples);

    let calibration = calibrate(pool, cfg.calibration_k, cfg.calibration_seed, cfg.max_iters)?;
    let graphs = calibration
        .sample_ids
        .iter()
        .map(|&i| score_sample(&model, &pool[i]).and_then(|g| ablate_graph(&g, cfg.flags)))
        .collect::<Result<Vec<_>>>()?;
    let (mask, report) = select_mask(&graphs, cfg.selection)?;
    let pathfinder = evaluate_mask(&model, &mask, eval)?;

    let random_base = derive_seed(cfg.random_seed, model_seed);
    let mut random_errors = Vec::with_capacity(cfg.random_trials);
    let mut random_hits = 0;
    for t in 0..cfg.random_trials {
        let rm = random_mask(&model.config, pathfinder.retention_fraction, derive_seed(random_base, t as u64))?;
        if let Some(p) = &planted {
            random_hits += usize::from(holds_all(&rm, p));
        }
        random_errors.push(evaluate_mask(&model, &rm, eval)?.mean_error);
    }
    let random_median = median(&random_errors);
    Ok(SeedOutcome {
        model_seed,
        calibration,
        report,
        win: pathfinder.mean_error <= random_median,
        mask: mask.to_file(),
        pathfinder,
        random_errors,
        random_median,
        pathfinder_recovers_planted: planted.as_ref().map(|p| holds_all(&mask, p)),
        random_planted_recoveries: planted.as_ref().map(|_| random_hits),
        planted,
    })
}

fn holds_all(mask: &PruneMask, planted: &[usize]) -> bool {
    planted.iter().enumerate().all(|(l, &i)| mask.is_kept(l, i))
}

/// Runs every model seed (in parallel on the current rayon pool); results
/// keep seed order.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<ComparisonReport> {
    cfg.validate()?;
    let outcomes = cfg
        .model_seeds
        .par_iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let wins = outcomes.iter().filter(|o| o.win).count();
    Ok(ComparisonReport {
        config: cfg.clone(),
        outcomes,
        wins,
    })
}
