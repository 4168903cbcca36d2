use std::time::Instant;

use super::step::{bsgd_step, moml_v1_step, moml_v2_step, OptState, StepOutcome, StepParams};
use crate::config::{Algorithm, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::oracle::OracleHandle;
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::tasks::TaskSet;

/// Result of a centralized run.
#[derive(Debug, Clone)]
pub struct RunOutput<S> {
    /// `T + 1` records; the first describes `w_0`.
    pub records: Vec<MetricsRecord>,
    pub state: OptState<S>,
    pub heuristic_constants: bool,
    /// Wall-clock time of the optimization loop, oracle probes excluded.
    pub elapsed_ms: f64,
}

/// Initial state: `w_0` from the task set's init rule on the `"init"`
/// substream; v2 starts every memory entry at `w_0`.
pub fn init_state<S: Real>(cfg: &RunConfig, taskset: &TaskSet<S>) -> Result<OptState<S>> {
    let rng = RngStream::root(cfg.seed);
    let w0 = taskset.initial_params(&mut rng.substream("init", 0));
    let mut state = OptState::new(w0, taskset.len(), rng);
    if cfg.algorithm == Algorithm::MomlV2 {
        let w0 = state.w.clone();
        state.memory.fill(&w0, 0)?;
    }
    Ok(state)
}

pub fn default_run_id(cfg: &RunConfig) -> String {
    format!("{}-s{}", cfg.algorithm, cfg.seed)
}

/// Runs a centralized algorithm for `T` iterations and returns its records.
pub fn run_optimizer<S: Real>(cfg: &RunConfig, taskset: &TaskSet<S>) -> Result<Vec<MetricsRecord>> {
    Ok(run_optimizer_traced(cfg, taskset, |_, _| {})?.records)
}

/// As [`run_optimizer`], calling `observe` with the state after every
/// iteration (and once with the initial state and no outcome).
pub fn run_optimizer_traced<S, F>(cfg: &RunConfig, taskset: &TaskSet<S>, mut observe: F) -> Result<RunOutput<S>>
where
    S: Real,
    F: FnMut(&OptState<S>, Option<&StepOutcome<S>>),
{
    if cfg.algorithm.is_federated() {
        return Err(Error::config(format!(
            "{} is a federated algorithm; use run_federated",
            cfg.algorithm
        )));
    }
    let params = StepParams::from_config(cfg, taskset)?;
    let oracle = OracleHandle::best(taskset, params.alpha);
    let mut state = init_state(cfg, taskset)?;
    let run_id = default_run_id(cfg);
    let total = cfg.iterations as u64;
    let mut records = Vec::with_capacity(cfg.iterations + 1);
    records.push(probe(cfg, &run_id, &oracle, &state, None, total)?);
    observe(&state, None);
    let mut elapsed = 0.0;
    for _ in 0..cfg.iterations {
        let start = Instant::now();
        let outcome = match cfg.algorithm {
            Algorithm::Bsgd => bsgd_step(&mut state, taskset, &params)?,
            Algorithm::MomlV1 => moml_v1_step(&mut state, taskset, &params)?,
            Algorithm::MomlV2 => moml_v2_step(&mut state, taskset, &params)?,
            Algorithm::ExactGd => exact_gd_step(&mut state, &oracle, &params)?,
            Algorithm::LocalMoml | Algorithm::PerFedavg => unreachable!(),
        };
        elapsed += start.elapsed().as_secs_f64() * 1e3;
        records.push(probe(cfg, &run_id, &oracle, &state, Some(&outcome), total)?);
        observe(&state, Some(&outcome));
    }
    Ok(RunOutput {
        records,
        state,
        heuristic_constants: params.heuristic_constants,
        elapsed_ms: elapsed,
    })
}

fn exact_gd_step<S: Real>(
    state: &mut OptState<S>,
    oracle: &OracleHandle<'_, S>,
    params: &StepParams<S>,
) -> Result<StepOutcome<S>> {
    let delta = oracle.exact_meta_grad(&state.w)?;
    let eta = params.eta_at(state.t);
    let next = state.w.lin_comb(S::one(), &delta, -eta)?;
    if !next.is_finite() {
        return Err(Error::non_finite(format!("meta-model at iteration {}", state.t + 1)));
    }
    state.w = next;
    state.t += 1;
    Ok(StepOutcome {
        sampled: (0..oracle.taskset().len()).collect(),
        refreshed: Vec::new(),
        eta,
        beta: S::one(),
        lhat: None,
        train_loss: None,
        delta,
    })
}

fn probe<S: Real>(
    cfg: &RunConfig,
    run_id: &str,
    oracle: &OracleHandle<'_, S>,
    state: &OptState<S>,
    outcome: Option<&StepOutcome<S>>,
    total: u64,
) -> Result<MetricsRecord> {
    let mut rec = MetricsRecord::new(run_id, cfg.algorithm, cfg.seed, state.t);
    rec.samples_used = state.samples_used;
    if let Some(o) = outcome {
        rec.train_error = o.train_loss.map(S::as_f64);
        rec.eta = Some(o.eta.as_f64());
        rec.beta = Some(o.beta.as_f64());
    }
    let every = cfg.oracle_every as u64;
    if every > 0 && (state.t.is_multiple_of(every) || state.t == total) {
        rec.oracle_grad_norm = Some(oracle.exact_meta_grad(&state.w)?.norm().as_f64());
        rec.oracle_meta_value = Some(oracle.exact_meta_value(&state.w)?.as_f64());
        if cfg.algorithm != Algorithm::ExactGd {
            rec.tracking_error = Some(oracle.tracking_error(&state.memory, &state.w)?.as_f64());
        }
    }
    Ok(rec)
}
