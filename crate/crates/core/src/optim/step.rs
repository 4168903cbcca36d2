//! Single iterations of the centralized algorithms.
//!
//! Every random draw is keyed by `(run seed, role, task, iteration)`, so a
//! task's batches do not depend on which other tasks were sampled. BSGD is
//! the `β = 1` instance of the v1 step and shares its code path.

use std::collections::BTreeMap;

use super::estimator::{inner_adapt, lhat, meta_grad_terms, moml_v1_update_memory, moml_v2_update_memory, TermBatches};
use super::memory::MemoryStore;
use crate::config::{Algorithm, BatchLaw, RunConfig};
use crate::error::{Error, Result};
use crate::rng::{data_stream, RngStream};
use crate::sampling::{bernoulli_subset, sample_without_replacement};
use crate::scalar::Real;
use crate::tasks::TaskSet;
use crate::vector::{pairwise_mean, pairwise_sum, ParamVector};

#[derive(Debug, Clone)]
pub struct OptState<S> {
    pub w: ParamVector<S>,
    pub memory: MemoryStore<S>,
    /// Completed iterations.
    pub t: u64,
    /// Step size of the previous v2 iteration.
    pub eta_prev: Option<S>,
    pub samples_used: u64,
    pub rng: RngStream,
}

impl<S: Real> OptState<S> {
    pub fn new(w: ParamVector<S>, n: usize, rng: RngStream) -> Self {
        let dim = w.len();
        Self {
            w,
            memory: MemoryStore::new(n, dim),
            t: 0,
            eta_prev: None,
            samples_used: 0,
            rng,
        }
    }
}

/// Resolved hyperparameters in the working precision.
#[derive(Debug, Clone)]
pub struct StepParams<S> {
    pub alpha: S,
    pub eta: S,
    pub beta: S,
    pub b: usize,
    pub k: usize,
    /// Iteration at which `eta` drops by 10× (`None` disables decay).
    pub decay_at: Option<u64>,
    pub eta0: S,
    pub l: Option<S>,
    pub rho: S,
    pub p: Vec<f64>,
    pub batch_law: BatchLaw,
    pub lhat_b: usize,
    pub lhat_k: usize,
    /// v2 on a non-quadratic family runs on user-supplied `L`, `rho`.
    pub heuristic_constants: bool,
}

impl<S: Real> StepParams<S> {
    pub fn from_config(cfg: &RunConfig, taskset: &TaskSet<S>) -> Result<Self> {
        cfg.validate()?;
        if cfg.n_tasks != taskset.len() {
            return Err(Error::config(format!(
                "config n={} but the task set has {} tasks",
                cfg.n_tasks,
                taskset.len()
            )));
        }
        let quadratic = taskset.all_quadratic();
        let l = cfg.lipschitz.map(S::lit).or(taskset.lipschitz());
        let rho = match cfg.hessian_lipschitz {
            Some(r) => S::lit(r),
            None if quadratic => S::zero(),
            None if cfg.algorithm == Algorithm::MomlV2 => {
                return Err(Error::config("moml_v2 on non-quadratic tasks needs rho to be set"));
            }
            None => S::zero(),
        };
        if cfg.algorithm == Algorithm::MomlV2 {
            let Some(l) = l else {
                return Err(Error::config("moml_v2 on non-quadratic tasks needs L to be set"));
            };
            let bound = RunConfig::eta0_bound(l.as_f64());
            if cfg.eta0 > bound {
                return Err(Error::config(format!(
                    "eta0={} violates eta0 <= (2/(3L))^(3/2) = {bound} needed for beta_t <= 1",
                    cfg.eta0
                )));
            }
        }
        let horizon = if cfg.algorithm.is_federated() {
            cfg.rounds
        } else {
            cfg.iterations
        };
        Ok(Self {
            alpha: S::lit(cfg.alpha),
            eta: S::lit(cfg.eta),
            beta: S::lit(cfg.effective_beta()),
            b: cfg.tasks_per_iter,
            k: cfg.batch_size,
            decay_at: cfg.eta_decay.then_some((3 * horizon as u64) / 4),
            eta0: S::lit(cfg.eta0),
            l,
            rho,
            p: cfg.probabilities(),
            batch_law: cfg.v2_batch_law,
            lhat_b: cfg.lhat_tasks.unwrap_or(cfg.tasks_per_iter),
            lhat_k: cfg.lhat_batch_size.unwrap_or(cfg.batch_size),
            heuristic_constants: !quadratic && cfg.algorithm == Algorithm::MomlV2,
        })
    }

    /// Outer step at iteration (or round) `t`, after decay.
    pub fn eta_at(&self, t: u64) -> S {
        match self.decay_at {
            Some(at) if t >= at => self.eta * S::lit(0.1),
            _ => self.eta,
        }
    }
}

/// What one iteration did, for diagnostics.
#[derive(Debug, Clone)]
pub struct StepOutcome<S> {
    /// Tasks entering the meta-gradient, ascending.
    pub sampled: Vec<usize>,
    /// Tasks whose memory was refreshed from a new inner step (v2: `ℬ'`).
    pub refreshed: Vec<usize>,
    pub eta: S,
    pub beta: S,
    pub lhat: Option<S>,
    /// Mean `ℒ̂_{S3}(u^i)` over the sampled tasks.
    pub train_loss: Option<S>,
    pub delta: ParamVector<S>,
}

fn term_batches<S: Real>(taskset: &TaskSet<S>, run: &RngStream, i: usize, t: u64, k: usize) -> Result<TermBatches<S>> {
    let task = taskset.get(i);
    Ok(TermBatches {
        s2: task.sample_batch(k, &mut data_stream(run, "s2", i, t))?,
        s3: task.sample_batch(k, &mut data_stream(run, "s3", i, t))?,
    })
}

fn inner_steps<S: Real>(
    taskset: &TaskSet<S>,
    state: &OptState<S>,
    tasks: &[usize],
    k: usize,
    alpha: S,
) -> Result<BTreeMap<usize, ParamVector<S>>> {
    tasks
        .iter()
        .map(|&i| {
            let task = taskset.get(i);
            let s1 = task.sample_batch(k, &mut data_stream(&state.rng, "s1", i, state.t))?;
            Ok((i, inner_adapt(task, &state.w, &s1, alpha)?))
        })
        .collect()
}

fn apply_update<S: Real>(state: &mut OptState<S>, delta: &ParamVector<S>, eta: S) -> Result<()> {
    let next = state.w.lin_comb(S::one(), delta, -eta)?;
    if !next.is_finite() {
        return Err(Error::non_finite(format!("meta-model at iteration {}", state.t + 1)));
    }
    state.w = next;
    state.t += 1;
    Ok(())
}

fn mean_loss<S: Real>(losses: &[S]) -> Option<S> {
    (!losses.is_empty()).then(|| losses.iter().copied().sum::<S>() / S::lit(losses.len() as f64))
}

fn v1_core<S: Real>(
    state: &mut OptState<S>,
    taskset: &TaskSet<S>,
    params: &StepParams<S>,
    beta: S,
) -> Result<StepOutcome<S>> {
    let n = taskset.len();
    let t = state.t;
    let sampled = sample_without_replacement(&mut state.rng.substream("tasks", t), n, params.b)?;
    let vhat = inner_steps(taskset, state, &sampled, params.k, params.alpha)?;
    moml_v1_update_memory(&mut state.memory, &sampled, &vhat, beta, t)?;
    let batches = sampled
        .iter()
        .map(|&i| term_batches(taskset, &state.rng, i, t, params.k))
        .collect::<Result<Vec<_>>>()?;
    let terms = meta_grad_terms(taskset, &sampled, &state.w, &state.memory, &batches, params.alpha)?;
    let losses: Vec<S> = terms.iter().map(|(_, _, l)| *l).collect();
    let grads: Vec<ParamVector<S>> = terms.into_iter().map(|(_, g, _)| g).collect();
    let delta = pairwise_mean(&grads)?;
    let eta = params.eta_at(t);
    apply_update(state, &delta, eta)?;
    state.samples_used += (3 * params.b * params.k) as u64;
    Ok(StepOutcome {
        sampled,
        refreshed: vhat.keys().copied().collect(),
        eta,
        beta,
        lhat: None,
        train_loss: mean_loss(&losses),
        delta,
    })
}

/// Mini-batch baseline: the v1 step with `β = 1`, so `u^i = v̂^i`.
pub fn bsgd_step<S: Real>(
    state: &mut OptState<S>,
    taskset: &TaskSet<S>,
    params: &StepParams<S>,
) -> Result<StepOutcome<S>> {
    v1_core(state, taskset, params, S::one())
}

/// Sample `ℬ_t`, refresh the sampled memories by the moving average, and
/// descend along the memory-based estimator.
pub fn moml_v1_step<S: Real>(
    state: &mut OptState<S>,
    taskset: &TaskSet<S>,
    params: &StepParams<S>,
) -> Result<StepOutcome<S>> {
    v1_core(state, taskset, params, params.beta)
}

/// `β_t = 6 L² η₀^{-1/3} η_{t-1}` with `η_{-1} = η₀ / (4L)`.
pub fn v2_beta<S: Real>(params: &StepParams<S>, eta_prev: Option<S>) -> Result<S> {
    let l = params.l.ok_or_else(|| Error::config("moml_v2 needs L"))?;
    let prev = eta_prev.unwrap_or(params.eta0 / (S::lit(4.0) * l));
    let beta = S::lit(6.0) * l * l * params.eta0.powf(S::lit(-1.0 / 3.0)) * prev;
    if beta > S::one() {
        return Err(Error::config(format!(
            "beta_t={beta} exceeds 1; eta0 must satisfy eta0 <= (2/(3L))^(3/2) = {}",
            RunConfig::eta0_bound(l.as_f64())
        )));
    }
    Ok(beta)
}

/// Two independent task batches: `ℬ'_t` refreshes memories through the
/// unbiased rule, `ℬ_t` feeds the estimator; the step is `η₀ / L̂(w_t)`.
///
/// Memory must hold an entry for every task before the first call.
pub fn moml_v2_step<S: Real>(
    state: &mut OptState<S>,
    taskset: &TaskSet<S>,
    params: &StepParams<S>,
) -> Result<StepOutcome<S>> {
    let n = taskset.len();
    let t = state.t;
    let l = params.l.ok_or_else(|| Error::config("moml_v2 needs L"))?;
    let sampled = match params.batch_law {
        BatchLaw::Uniform => sample_without_replacement(&mut state.rng.substream("tasks", t), n, params.b)?,
        BatchLaw::Bernoulli => bernoulli_subset(&mut state.rng.substream("tasks", t), &params.p)?,
    };
    let prime = bernoulli_subset(&mut state.rng.substream("tasks_prime", t), &params.p)?;
    let beta = v2_beta(params, state.eta_prev)?;

    let vhat = inner_steps(taskset, state, &prime, params.k, params.alpha)?;
    let w_t = state.w.clone();
    moml_v2_update_memory(&mut state.memory, &prime, &w_t, &vhat, beta, &params.p, t)?;

    let batches = sampled
        .iter()
        .map(|&i| term_batches(taskset, &state.rng, i, t, params.k))
        .collect::<Result<Vec<_>>>()?;
    let terms = meta_grad_terms(taskset, &sampled, &w_t, &state.memory, &batches, params.alpha)?;
    let losses: Vec<S> = terms.iter().map(|(_, _, l)| *l).collect();
    let delta = match params.batch_law {
        BatchLaw::Uniform => pairwise_mean(&terms.into_iter().map(|(_, g, _)| g).collect::<Vec<_>>())?,
        BatchLaw::Bernoulli if terms.is_empty() => ParamVector::zeros(w_t.len()),
        BatchLaw::Bernoulli => {
            let weighted: Vec<_> = terms
                .into_iter()
                .map(|(i, g, _)| g.scale(S::one() / S::lit(params.p[i])))
                .collect();
            pairwise_sum(&weighted)?.scale(S::one() / S::lit(n as f64))
        }
    };

    let mut lhat_samples = 0;
    let lhat_value = if params.rho == S::zero() {
        S::lit(4.0) * l
    } else {
        let tasks = sample_without_replacement(&mut state.rng.substream("lhat_tasks", t), n, params.lhat_b)?;
        let batches = tasks
            .iter()
            .map(|&i| {
                taskset
                    .get(i)
                    .sample_batch(params.lhat_k, &mut data_stream(&state.rng, "sl", i, t))
            })
            .collect::<Result<Vec<_>>>()?;
        lhat_samples = tasks.len() * params.lhat_k;
        lhat(taskset, &w_t, &tasks, &batches, l, params.rho, params.alpha)?
    };
    let eta = params.eta0 / lhat_value;
    apply_update(state, &delta, eta)?;
    state.eta_prev = Some(eta);
    state.samples_used += (prime.len() * params.k + 2 * sampled.len() * params.k + lhat_samples) as u64;
    Ok(StepOutcome {
        sampled,
        refreshed: prime,
        eta,
        beta,
        lhat: Some(lhat_value),
        train_loss: mean_loss(&losses),
        delta,
    })
}
