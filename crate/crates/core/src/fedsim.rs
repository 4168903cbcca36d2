//! Simulated federated rounds for LocalMOML and Per-FedAvg.
//!
//! One task per client. Only participating clients materialize the broadcast
//! model, draw data or touch their counters. A client's batches are keyed by
//! `(seed, role, client, local step index)` with index `(r−1)H + (h−1)`, so
//! `H = 1` lines up with the centralized iteration counter.

use std::time::Instant;

use rayon::prelude::*;

use crate::config::{Algorithm, FedMode, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::optim::{default_run_id, inner_adapt, StepParams};
use crate::oracle::OracleHandle;
use crate::rng::{data_stream, RngStream};
use crate::sampling::sample_without_replacement;
use crate::scalar::Real;
use crate::tasks::{Task, TaskSet};
use crate::vector::{pairwise_mean, ParamVector};

const PAR_MIN_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState<S> {
    /// Zero-based position in the task set.
    pub client_id: usize,
    pub w_local: Option<ParamVector<S>>,
    pub u_local: Option<ParamVector<S>>,
    pub samples_used: u64,
    pub batches_drawn: u64,
    pub rounds_participated: u64,
}

impl<S: Real> ClientState<S> {
    pub fn new(client_id: usize) -> Self {
        Self {
            client_id,
            w_local: None,
            u_local: None,
            samples_used: 0,
            batches_drawn: 0,
            rounds_participated: 0,
        }
    }

    fn draw(
        &mut self,
        task: &Task<S>,
        role: &str,
        k: usize,
        run: &RngStream,
        step: u64,
    ) -> Result<crate::tasks::Batch<S>> {
        self.samples_used += k as u64;
        self.batches_drawn += 1;
        task.sample_batch(k, &mut data_stream(run, role, self.client_id, step))
    }
}

#[derive(Debug, Clone)]
pub struct ServerState<S> {
    pub w_global: ParamVector<S>,
    /// Completed rounds.
    pub r: u64,
    /// Model transfers: one broadcast and one upload per participant.
    pub comms: u64,
    pub samples_used: u64,
    pub rng: RngStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    /// One-based round index; oracle fields describe the broadcast model `w_r`.
    pub r: u64,
    pub participants: Vec<usize>,
    pub oracle_grad_norm: Option<f64>,
    pub oracle_meta_value: Option<f64>,
    /// `(1/BH) Σ_i Σ_h ‖w^i_{r,h} − w_r‖²`.
    pub drift: f64,
    /// Mean `‖u^i − v_i(w^i)‖²` over participants at the end of the round.
    pub tracking_error: Option<f64>,
    /// Mean local-step loss at the personalized models.
    pub train_error: f64,
    pub eta: f64,
    pub beta: f64,
    pub comms: u64,
    pub samples_used: u64,
}

impl RoundReport {
    pub fn to_record(&self, run_id: &str, algorithm: Algorithm, seed: u64) -> MetricsRecord {
        let mut rec = MetricsRecord::new(run_id, algorithm, seed, self.r);
        rec.train_error = Some(self.train_error);
        rec.oracle_grad_norm = self.oracle_grad_norm;
        rec.oracle_meta_value = self.oracle_meta_value;
        rec.tracking_error = self.tracking_error;
        rec.drift = Some(self.drift);
        rec.eta = Some(self.eta);
        rec.beta = Some(self.beta);
        rec.samples_used = self.samples_used;
        rec.comms = self.comms;
        rec
    }
}

/// Resolved round-loop settings.
#[derive(Debug, Clone)]
pub struct FedParams<S> {
    pub step: StepParams<S>,
    pub mode: FedMode,
    pub h: usize,
    pub k0: usize,
    /// Forget all client state after every round.
    pub wipe_memory: bool,
    pub oracle_every: usize,
    pub rounds: usize,
}

impl<S: Real> FedParams<S> {
    pub fn from_config(cfg: &RunConfig, taskset: &TaskSet<S>) -> Result<Self> {
        if !cfg.algorithm.is_federated() {
            return Err(Error::config(format!("{} is not a federated algorithm", cfg.algorithm)));
        }
        let mut step = StepParams::from_config(cfg, taskset)?;
        if cfg.fed_mode == FedMode::CrossSilo {
            step.b = taskset.len();
        }
        Ok(Self {
            step,
            mode: cfg.fed_mode,
            h: cfg.local_steps,
            k0: cfg.k0(),
            wipe_memory: false,
            oracle_every: cfg.oracle_every,
            rounds: cfg.rounds,
        })
    }
}

/// Installs the broadcast model and the round's starting memory.
///
/// Cross-device resets `u = w − α∇̂_{S0}ℒ(w)`; cross-silo keeps the memory
/// from the end of the previous round, falling back to the reset when the
/// client has none yet.
#[allow(clippy::too_many_arguments)]
pub fn reset_or_carry_memory<S: Real>(
    client: &mut ClientState<S>,
    task: &Task<S>,
    w_broadcast: &ParamVector<S>,
    mode: FedMode,
    k0: usize,
    alpha: S,
    run: &RngStream,
    r: u64,
) -> Result<()> {
    client.w_local = Some(w_broadcast.clone());
    if mode == FedMode::CrossSilo && client.u_local.is_some() {
        return Ok(());
    }
    if k0 == 0 {
        return Err(Error::config("memory reset requires K0 >= 1"));
    }
    let s0 = client.draw(task, "s0", k0, run, r - 1)?;
    client.u_local = Some(inner_adapt(task, w_broadcast, &s0, alpha)?);
    Ok(())
}

/// One local step; returns the loss `ℒ̂_{S3}(u)`.
///
/// `u ← (1−β)u + β(w − α∇̂_{S1}ℒ(w))`, then
/// `w ← w − η (∇̂_{S3}ℒ(u) − α ∇̂²_{S2}ℒ(w) ∇̂_{S3}ℒ(u))`.
#[allow(clippy::too_many_arguments)]
pub fn client_local_step<S: Real>(
    client: &mut ClientState<S>,
    task: &Task<S>,
    run: &RngStream,
    step: u64,
    beta: S,
    alpha: S,
    eta: S,
    k: usize,
) -> Result<S> {
    if !(beta > S::zero() && beta <= S::one()) {
        return Err(Error::config(format!("beta={beta} violates beta ∈ (0,1]")));
    }
    let w = client.w_local.clone().ok_or(Error::MissingMemory(client.client_id))?;
    let u_prev = client.u_local.clone().ok_or(Error::MissingMemory(client.client_id))?;
    let s1 = client.draw(task, "s1", k, run, step)?;
    let s2 = client.draw(task, "s2", k, run, step)?;
    let s3 = client.draw(task, "s3", k, run, step)?;
    let vhat = inner_adapt(task, &w, &s1, alpha)?;
    let u = u_prev.lin_comb(S::one() - beta, &vhat, beta)?;
    let (loss, g) = task.loss_grad(&u, &s3)?;
    let hg = task.stochastic_hvp(&w, &g, &s2)?;
    let delta = g.lin_comb(S::one(), &hg, -alpha)?;
    let next = w.lin_comb(S::one(), &delta, -eta)?;
    if !next.is_finite() || !u.is_finite() {
        return Err(Error::non_finite(format!(
            "client {} local update",
            client.client_id + 1
        )));
    }
    client.u_local = Some(u);
    client.w_local = Some(next);
    Ok(loss)
}

struct ClientRound<S> {
    upload: ParamVector<S>,
    drift: S,
    loss: S,
    tracking: Option<S>,
}

fn client_round<S: Real>(
    client: &mut ClientState<S>,
    server: &ServerState<S>,
    taskset: &TaskSet<S>,
    params: &FedParams<S>,
    oracle: Option<&OracleHandle<'_, S>>,
    eta: S,
) -> Result<ClientRound<S>> {
    let task = taskset.get(client.client_id);
    let r = server.r + 1;
    let sp = &params.step;
    client.rounds_participated += 1;
    reset_or_carry_memory(
        client,
        task,
        &server.w_global,
        params.mode,
        params.k0,
        sp.alpha,
        &server.rng,
        r,
    )?;
    let mut drift = S::zero();
    let mut loss = S::zero();
    for h in 0..params.h {
        drift = drift + client.w_local.as_ref().unwrap().dist_sq(&server.w_global)?;
        let step = (r - 1) * params.h as u64 + h as u64;
        loss = loss + client_local_step(client, task, &server.rng, step, sp.beta, sp.alpha, eta, sp.k)?;
    }
    let upload = client.w_local.clone().unwrap();
    let tracking = match oracle {
        Some(o) => Some(
            client
                .u_local
                .as_ref()
                .unwrap()
                .dist_sq(&o.exact_inner(client.client_id, &upload)?)?,
        ),
        None => None,
    };
    Ok(ClientRound {
        upload,
        drift,
        loss: loss / S::lit(params.h as f64),
        tracking,
    })
}

/// One round: sample participants, run `H` local steps on each, and set
/// `w_{r+1}` to the mean of the uploads (pairwise sum in client order).
pub fn run_round<S: Real>(
    server: &mut ServerState<S>,
    clients: &mut [ClientState<S>],
    taskset: &TaskSet<S>,
    params: &FedParams<S>,
    oracle: &OracleHandle<'_, S>,
) -> Result<RoundReport> {
    let n = taskset.len();
    if clients.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: clients.len(),
        });
    }
    let r = server.r + 1;
    let probe =
        params.oracle_every > 0 && ((r - 1).is_multiple_of(params.oracle_every as u64) || r == params.rounds as u64);
    let (grad_norm, meta_value) = if probe {
        (
            Some(oracle.exact_meta_grad(&server.w_global)?.norm().as_f64()),
            Some(oracle.exact_meta_value(&server.w_global)?.as_f64()),
        )
    } else {
        (None, None)
    };
    let participants = match params.mode {
        FedMode::CrossSilo => (0..n).collect(),
        FedMode::CrossDevice => {
            sample_without_replacement(&mut server.rng.substream("tasks", r - 1), n, params.step.b)?
        }
    };
    let mut selected = vec![false; n];
    participants.iter().for_each(|&i| selected[i] = true);
    let eta = params.step.eta_at(r - 1);
    let before: u64 = clients.iter().map(|c| c.samples_used).sum();

    let probe_oracle = probe.then_some(oracle);
    let server_ref = &*server;
    let work = |c: &mut ClientState<S>| client_round(c, server_ref, taskset, params, probe_oracle, eta);
    let results: Vec<ClientRound<S>> = if server.w_global.len() >= PAR_MIN_DIM {
        clients
            .par_iter_mut()
            .filter(|c| selected[c.client_id])
            .map(work)
            .collect::<Result<_>>()?
    } else {
        clients
            .iter_mut()
            .filter(|c| selected[c.client_id])
            .map(work)
            .collect::<Result<_>>()?
    };

    let uploads: Vec<ParamVector<S>> = results.iter().map(|c| c.upload.clone()).collect();
    let next = pairwise_mean(&uploads)?;
    next.ensure_finite("aggregated meta-model")?;
    let b = participants.len() as f64;
    let drift: S = results.iter().map(|c| c.drift).sum();
    let loss: S = results.iter().map(|c| c.loss).sum();
    let tracking = probe.then(|| results.iter().map(|c| c.tracking.unwrap()).sum::<S>().as_f64() / b);

    server.w_global = next;
    server.r = r;
    server.comms += 2 * participants.len() as u64;
    let after: u64 = clients.iter().map(|c| c.samples_used).sum();
    server.samples_used += after - before;
    if params.wipe_memory {
        for c in clients.iter_mut() {
            c.w_local = None;
            c.u_local = None;
        }
    }
    Ok(RoundReport {
        r,
        participants,
        oracle_grad_norm: grad_norm,
        oracle_meta_value: meta_value,
        drift: drift.as_f64() / (b * params.h as f64),
        tracking_error: tracking,
        train_error: loss.as_f64() / b,
        eta: eta.as_f64(),
        beta: params.step.beta.as_f64(),
        comms: server.comms,
        samples_used: server.samples_used,
    })
}

#[derive(Debug, Clone)]
pub struct FedOutput<S> {
    pub reports: Vec<RoundReport>,
    pub server: ServerState<S>,
    pub clients: Vec<ClientState<S>>,
    pub elapsed_ms: f64,
}

impl<S> FedOutput<S> {
    pub fn records(&self, cfg: &RunConfig) -> Vec<MetricsRecord> {
        let id = default_run_id(cfg);
        self.reports
            .iter()
            .map(|r| r.to_record(&id, cfg.algorithm, cfg.seed))
            .collect()
    }
}

/// Initial server: the same `w_0` rule and root stream as centralized runs.
pub fn init_server<S: Real>(cfg: &RunConfig, taskset: &TaskSet<S>) -> ServerState<S> {
    let rng = RngStream::root(cfg.seed);
    let w_global = taskset.initial_params(&mut rng.substream("init", 0));
    ServerState {
        w_global,
        r: 0,
        comms: 0,
        samples_used: 0,
        rng,
    }
}

/// `R` rounds of LocalMOML (Per-FedAvg pins `β = 1`).
pub fn run_federated<S: Real>(cfg: &RunConfig, taskset: &TaskSet<S>) -> Result<Vec<RoundReport>> {
    let params = FedParams::from_config(cfg, taskset)?;
    Ok(run_federated_with(cfg, taskset, &params)?.reports)
}

pub fn run_federated_with<S: Real>(
    cfg: &RunConfig,
    taskset: &TaskSet<S>,
    params: &FedParams<S>,
) -> Result<FedOutput<S>> {
    let oracle = OracleHandle::best(taskset, params.step.alpha);
    let mut server = init_server(cfg, taskset);
    let mut clients: Vec<ClientState<S>> = (0..taskset.len()).map(ClientState::new).collect();
    let mut reports = Vec::with_capacity(params.rounds);
    let start = Instant::now();
    for _ in 0..params.rounds {
        reports.push(run_round(&mut server, &mut clients, taskset, params, &oracle)?);
    }
    Ok(FedOutput {
        reports,
        server,
        clients,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}
