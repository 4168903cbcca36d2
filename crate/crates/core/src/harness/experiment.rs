use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::adapt::{adaptation_csv, evaluate_adaptation, AdaptationResult};
use super::{build_taskset, heldout_tasks, Split};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fedsim::{run_federated_with, FedParams};
use crate::metrics::{fmt_real, mean_std, to_csv, MetricsRecord};
use crate::optim::run_optimizer_traced;
use crate::oracle::{Exactness, OracleHandle};
use crate::rng::RngStream;
use crate::tasks::{write_manifest, TaskSet};
use crate::vector::ParamVector;

/// One seed of an experiment.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub adaptation: Vec<AdaptationResult>,
    /// Mean and sample std of the post-adaptation error over held-out tasks.
    pub test_error_mean: f64,
    pub test_error_std: f64,
    pub final_w: ParamVector<f64>,
    pub heuristic_constants: bool,
    pub elapsed_ms: f64,
    /// Iterations or rounds executed.
    pub steps: usize,
}

/// Trains with `cfg` (its own seed) and evaluates adaptation on `split`.
pub fn run_single(cfg: &RunConfig, taskset: &TaskSet<f64>, split: Split) -> Result<SeedRun> {
    let (records, final_w, heuristic, elapsed, steps) = if cfg.algorithm.is_federated() {
        let params = FedParams::from_config(cfg, taskset)?;
        let out = run_federated_with(cfg, taskset, &params)?;
        let records = out.records(cfg);
        (
            records,
            out.server.w_global,
            params.step.heuristic_constants,
            out.elapsed_ms,
            cfg.rounds,
        )
    } else {
        let out = run_optimizer_traced(cfg, taskset, |_, _| {})?;
        (
            out.records,
            out.state.w,
            out.heuristic_constants,
            out.elapsed_ms,
            cfg.iterations,
        )
    };
    let tasks = heldout_tasks(cfg, cfg.seed, split)?;
    let adaptation = evaluate_adaptation(
        &final_w,
        &tasks,
        cfg.adapt_shots,
        cfg.adapt_steps,
        cfg.adapt_lr,
        cfg.adapt_test_points,
        &RngStream::root(cfg.seed).substream("adapt_points", split as u64),
    )?;
    let post: Vec<f64> = adaptation.iter().map(|a| a.post_adapt_error).collect();
    let (mean, std) = mean_std(&post);
    Ok(SeedRun {
        seed: cfg.seed,
        records,
        adaptation,
        test_error_mean: mean,
        test_error_std: std,
        final_w,
        heuristic_constants: heuristic,
        elapsed_ms: elapsed,
        steps,
    })
}

fn seed_configs(cfg: &RunConfig) -> Vec<RunConfig> {
    (0..cfg.num_seeds as u64)
        .map(|s| RunConfig {
            seed: cfg.seed + s,
            ..cfg.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    /// `(eta, mean validation error)`; diverged runs score `+inf`.
    pub scores: Vec<(f64, f64)>,
    pub best: f64,
}

/// Picks `eta` from `cfg.eta_grid` by mean post-adaptation error on
/// validation tasks over the configured seeds.
pub fn tune_eta(cfg: &RunConfig, taskset: &TaskSet<f64>) -> Result<TuneResult> {
    if cfg.eta_grid.is_empty() {
        return Err(Error::config("eta_grid is empty"));
    }
    let jobs: Vec<RunConfig> = cfg
        .eta_grid
        .iter()
        .flat_map(|&eta| seed_configs(&RunConfig { eta, ..cfg.clone() }))
        .collect();
    let errors: Vec<f64> = jobs
        .par_iter()
        .map(|c| match run_single(c, taskset, Split::Validation) {
            Ok(run) if run.test_error_mean.is_finite() => Ok(run.test_error_mean),
            Ok(_) | Err(Error::NonFinite(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let per = cfg.num_seeds;
    let scores: Vec<(f64, f64)> = cfg
        .eta_grid
        .iter()
        .enumerate()
        .map(|(k, &eta)| (eta, errors[k * per..(k + 1) * per].iter().sum::<f64>() / per as f64))
        .collect();
    let best = scores.iter().fold(
        (f64::NAN, f64::INFINITY),
        |acc, &(eta, e)| if e < acc.1 { (eta, e) } else { acc },
    );
    if !best.0.is_finite() {
        return Err(Error::non_finite("every eta in the grid diverged"));
    }
    Ok(TuneResult { scores, best: best.0 })
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    /// Effective config (tuned `eta` filled in).
    pub cfg: RunConfig,
    pub runs: Vec<SeedRun>,
    pub tune: Option<TuneResult>,
    /// Mean and sample std of the per-seed test errors.
    pub test_error_mean: f64,
    pub test_error_std: f64,
    pub oracle: Exactness,
}

pub const SUMMARY_CSV_HEADER: &str = "run_id,algorithm,seed,eta,beta,B,K,oracle,heuristic_constants,test_error_mean,test_error_std,final_oracle_grad_norm,final_oracle_meta_value,samples_used,comms";

impl ExperimentSummary {
    pub fn summary_csv(&self) -> String {
        let cfg = &self.cfg;
        let oracle = match self.oracle {
            Exactness::Analytic => "analytic",
            Exactness::Empirical => "eval_set",
        };
        let fixed = |run_id: &str, seed: &str, heuristic: bool| {
            format!(
                "{run_id},{},{seed},{},{},{},{},{oracle},{heuristic}",
                cfg.algorithm,
                fmt_real(cfg.eta),
                fmt_real(cfg.effective_beta()),
                cfg.tasks_per_iter,
                cfg.batch_size
            )
        };
        let o = |x: Option<f64>| x.map(fmt_real).unwrap_or_default();
        let mut out = format!("{SUMMARY_CSV_HEADER}\n");
        for run in &self.runs {
            let last = run.records.last();
            let grad = run.records.iter().rev().find_map(|r| r.oracle_grad_norm);
            let value = run.records.iter().rev().find_map(|r| r.oracle_meta_value);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                fixed(
                    &last.map(|r| r.run_id.clone()).unwrap_or_default(),
                    &run.seed.to_string(),
                    run.heuristic_constants
                ),
                fmt_real(run.test_error_mean),
                fmt_real(run.test_error_std),
                o(grad),
                o(value),
                format_args!("{},{}", last.map_or(0, |r| r.samples_used), last.map_or(0, |r| r.comms)),
            );
        }
        let heuristic = self.runs.iter().any(|r| r.heuristic_constants);
        let _ = writeln!(
            out,
            "{},{},{},,,,",
            fixed(&format!("{}-aggregate", cfg.algorithm), "all", heuristic),
            fmt_real(self.test_error_mean),
            fmt_real(self.test_error_std),
        );
        out
    }

    pub fn timing_text(&self) -> String {
        let mut out = String::new();
        for run in &self.runs {
            let per = if run.steps == 0 {
                0.0
            } else {
                run.elapsed_ms / run.steps as f64
            };
            let _ = writeln!(
                out,
                "seed {}: {:.3} ms total, {:.6} ms per step",
                run.seed, run.elapsed_ms, per
            );
        }
        out
    }

    pub fn mean_ms_per_step(&self) -> f64 {
        let v: Vec<f64> = self
            .runs
            .iter()
            .map(|r| {
                if r.steps == 0 {
                    0.0
                } else {
                    r.elapsed_ms / r.steps as f64
                }
            })
            .collect();
        mean_std(&v).0
    }

    /// Writes per-seed metrics and adaptation CSVs, the summary, the
    /// effective config, the task manifest and wall-clock timings.
    pub fn write(&self, taskset: &TaskSet<f64>, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for run in &self.runs {
            fs::write(dir.join(format!("metrics_seed{}.csv", run.seed)), to_csv(&run.records))?;
            fs::write(
                dir.join(format!("adapt_seed{}.csv", run.seed)),
                adaptation_csv(&run.adaptation),
            )?;
        }
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("config.txt"), self.cfg.to_config_string())?;
        fs::write(dir.join("taskset.manifest"), write_manifest(taskset))?;
        if let Some(t) = &self.tune {
            let mut text = String::from("eta,validation_error\n");
            for (eta, e) in &t.scores {
                let _ = writeln!(text, "{},{}", fmt_real(*eta), fmt_real(*e));
            }
            fs::write(dir.join("tuning.csv"), text)?;
        }
        fs::write(dir.join("timing.txt"), self.timing_text())?;
        Ok(())
    }
}

/// Seed sweep `seed, seed+1, …` (tuning `eta` first when a grid is given),
/// optionally writing its artifacts to `out`.
pub fn run_experiment(cfg: &RunConfig, out: Option<&Path>) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let taskset = build_taskset(cfg)?;
    let tune = if cfg.eta_grid.is_empty() {
        None
    } else {
        Some(tune_eta(cfg, &taskset)?)
    };
    let mut effective = cfg.clone();
    if let Some(t) = &tune {
        effective.eta = t.best;
    }
    let runs = seed_configs(&effective)
        .par_iter()
        .map(|c| run_single(c, &taskset, Split::Test))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = runs.iter().map(|r| r.test_error_mean).collect();
    let (m, s) = mean_std(&means);
    let summary = ExperimentSummary {
        oracle: OracleHandle::best(&taskset, effective.alpha).exactness(),
        cfg: effective,
        runs,
        tune,
        test_error_mean: m,
        test_error_std: s,
    };
    if let Some(dir) = out {
        summary.write(&taskset, dir)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub name: String,
    pub summary: ExperimentSummary,
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub const HEADER: &'static str =
        "name,algorithm,beta,B,K,eta,seeds,test_error_mean,test_error_std,per_seed_test_error";

    pub fn csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for row in &self.rows {
            let s = &row.summary;
            let per: Vec<String> = s.runs.iter().map(|r| fmt_real(r.test_error_mean)).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                row.name,
                s.cfg.algorithm,
                fmt_real(s.cfg.effective_beta()),
                s.cfg.tasks_per_iter,
                s.cfg.batch_size,
                fmt_real(s.cfg.eta),
                s.runs.len(),
                fmt_real(s.test_error_mean),
                fmt_real(s.test_error_std),
                per.join(";"),
            );
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("name,ms_per_step\n");
        for row in &self.rows {
            let _ = writeln!(out, "{},{:.6}", row.name, row.summary.mean_ms_per_step());
        }
        out
    }
}

/// Runs every config and tabulates them; all must share `taskset_seed`.
///
/// Each config writes into `out/<index>_<name>/`; the table goes to
/// `out/comparison.csv` and timings to `out/comparison_timing.csv`.
pub fn compare_algorithms(configs: &[(String, RunConfig)], out: Option<&Path>) -> Result<Comparison> {
    let Some((_, first)) = configs.first() else {
        return Err(Error::config("compare needs at least one config"));
    };
    if let Some((name, c)) = configs.iter().find(|(_, c)| c.taskset_seed != first.taskset_seed) {
        return Err(Error::config(format!(
            "config `{name}` has taskset_seed={} but the first config has {}",
            c.taskset_seed, first.taskset_seed
        )));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (k, (name, cfg)) in configs.iter().enumerate() {
        let dir = out.map(|o| o.join(format!("{k:02}_{name}")));
        let summary = run_experiment(cfg, dir.as_deref())?;
        rows.push(ComparisonRow {
            name: name.clone(),
            summary,
        });
    }
    let table = Comparison { rows };
    if let Some(o) = out {
        fs::create_dir_all(o)?;
        fs::write(o.join("comparison.csv"), table.csv())?;
        fs::write(o.join("comparison_timing.csv"), table.timing_csv())?;
    }
    Ok(table)
}
