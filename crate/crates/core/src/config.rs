//! Run configuration and its flat `key = value` file format.
//!
//! One assignment per line, `#` starts a comment, blank lines are ignored.
//! Unknown and duplicate keys are rejected with the offending line number.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sampling::validate_probabilities;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Bsgd,
    MomlV1,
    MomlV2,
    LocalMoml,
    PerFedavg,
    ExactGd,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Bsgd => "bsgd",
            Algorithm::MomlV1 => "moml_v1",
            Algorithm::MomlV2 => "moml_v2",
            Algorithm::LocalMoml => "local_moml",
            Algorithm::PerFedavg => "per_fedavg",
            Algorithm::ExactGd => "exact_gd",
        }
    }

    pub fn is_federated(self) -> bool {
        matches!(self, Algorithm::LocalMoml | Algorithm::PerFedavg)
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "bsgd" | "maml" => Algorithm::Bsgd,
            "moml_v1" | "moml" => Algorithm::MomlV1,
            "moml_v2" => Algorithm::MomlV2,
            "local_moml" => Algorithm::LocalMoml,
            "per_fedavg" => Algorithm::PerFedavg,
            "exact_gd" => Algorithm::ExactGd,
            other => return Err(format!("unknown algorithm `{other}`")),
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedMode {
    CrossSilo,
    CrossDevice,
}

impl FromStr for FedMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cross_silo" => Ok(FedMode::CrossSilo),
            "cross_device" => Ok(FedMode::CrossDevice),
            other => Err(format!("unknown fed_mode `{other}` (cross_silo|cross_device)")),
        }
    }
}

impl fmt::Display for FedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FedMode::CrossSilo => "cross_silo",
            FedMode::CrossDevice => "cross_device",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskFamily {
    Quadratic,
    Sinewave,
    Blob,
}

impl FromStr for TaskFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quadratic" => Ok(TaskFamily::Quadratic),
            "sinewave" => Ok(TaskFamily::Sinewave),
            "blob" => Ok(TaskFamily::Blob),
            other => Err(format!("unknown family `{other}` (quadratic|sinewave|blob)")),
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskFamily::Quadratic => "quadratic",
            TaskFamily::Sinewave => "sinewave",
            TaskFamily::Blob => "blob",
        })
    }
}

/// Sampling law for the meta-gradient task batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchLaw {
    Uniform,
    Bernoulli,
}

impl FromStr for BatchLaw {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(BatchLaw::Uniform),
            "bernoulli" => Ok(BatchLaw::Bernoulli),
            other => Err(format!("unknown batch law `{other}` (uniform|bernoulli)")),
        }
    }
}

impl fmt::Display for BatchLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchLaw::Uniform => "uniform",
            BatchLaw::Bernoulli => "bernoulli",
        })
    }
}

/// Every hyperparameter an algorithm or experiment consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Seed for task generation, shared across a seed sweep.
    pub taskset_seed: u64,
    pub num_seeds: usize,
    pub family: TaskFamily,

    /// Inner step size.
    pub alpha: f64,
    /// Outer step size (constant-step algorithms).
    pub eta: f64,
    /// Base step for the adaptive v2 schedule.
    pub eta0: f64,
    /// Momentum factor for the personalized-model memory.
    pub beta: f64,
    /// Tasks per iteration (`B`).
    pub tasks_per_iter: usize,
    /// Data points per batch (`K`).
    pub batch_size: usize,
    /// Cross-device reset batch size (`K0`); defaults to `2K`.
    pub reset_batch_size: Option<usize>,
    /// Local steps per round (`H`).
    pub local_steps: usize,
    /// Communication rounds (`R`).
    pub rounds: usize,
    /// Centralized iterations (`T`).
    pub iterations: usize,
    /// Task count (`n`).
    pub n_tasks: usize,
    /// Gradient-Lipschitz constant `L`; computed from the taskset for quadratics when absent.
    pub lipschitz: Option<f64>,
    /// Hessian-Lipschitz constant `rho`; zero for quadratics when absent.
    pub hessian_lipschitz: Option<f64>,
    /// Per-task selection probabilities for the Bernoulli law; defaults to `B/n`.
    pub p: Option<Vec<f64>>,
    pub fed_mode: FedMode,
    /// Multiply the outer step by 0.1 at 75% of the run.
    pub eta_decay: bool,
    /// Candidate outer steps; when nonempty, `eta` is picked on validation tasks.
    pub eta_grid: Vec<f64>,
    pub v2_batch_law: BatchLaw,
    pub lhat_tasks: Option<usize>,
    pub lhat_batch_size: Option<usize>,

    pub dim: usize,
    pub spread: f64,
    pub noise_std: f64,
    pub optimum_radius: f64,
    /// Task optima are drawn from `optimum_center ± optimum_radius` per coordinate.
    pub optimum_center: f64,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub blob_a: usize,
    pub blob_test_a: usize,

    /// Evaluate the oracle every this many iterations/rounds (0 disables).
    pub oracle_every: usize,
    pub adapt_tasks: usize,
    pub adapt_shots: usize,
    pub adapt_steps: usize,
    pub adapt_lr: f64,
    pub adapt_test_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::MomlV1,
            seed: 0,
            taskset_seed: 0,
            num_seeds: 1,
            family: TaskFamily::Quadratic,
            alpha: 0.01,
            eta: 0.01,
            eta0: 0.01,
            beta: 0.5,
            tasks_per_iter: 3,
            batch_size: 1,
            reset_batch_size: None,
            local_steps: 5,
            rounds: 100,
            iterations: 1000,
            n_tasks: 25,
            lipschitz: None,
            hessian_lipschitz: None,
            p: None,
            fed_mode: FedMode::CrossDevice,
            eta_decay: false,
            eta_grid: Vec::new(),
            v2_batch_law: BatchLaw::Uniform,
            lhat_tasks: None,
            lhat_batch_size: None,
            dim: 5,
            spread: 4.0,
            noise_std: 0.0,
            optimum_radius: 1.0,
            optimum_center: 0.0,
            hidden: vec![40, 40],
            classes: 10,
            blob_a: 68,
            blob_test_a: 34,
            oracle_every: 1,
            adapt_tasks: 5,
            adapt_shots: 10,
            adapt_steps: 10,
            adapt_lr: 0.01,
            adapt_test_points: 100,
        }
    }
}

impl RunConfig {
    pub fn k0(&self) -> usize {
        self.reset_batch_size.unwrap_or(2 * self.batch_size)
    }

    /// Probability list of length `n`, defaulting to `B/n` everywhere.
    pub fn probabilities(&self) -> Vec<f64> {
        match &self.p {
            Some(p) if p.len() == 1 => vec![p[0]; self.n_tasks],
            Some(p) => p.clone(),
            None => vec![self.tasks_per_iter as f64 / self.n_tasks as f64; self.n_tasks],
        }
    }

    /// `max_i 1/p_i - 1`; reported for information only.
    pub fn c_p(&self) -> f64 {
        self.probabilities().iter().map(|&p| 1.0 / p - 1.0).fold(0.0, f64::max)
    }

    /// Momentum actually used: Per-FedAvg and BSGD pin it to 1.
    pub fn effective_beta(&self) -> f64 {
        match self.algorithm {
            Algorithm::Bsgd | Algorithm::PerFedavg => 1.0,
            _ => self.beta,
        }
    }

    /// Largest admissible `eta0` keeping `beta_t <= 1` under the v2 schedule.
    pub fn eta0_bound(l: f64) -> f64 {
        (2.0 / (3.0 * l)).powf(1.5)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_keyed(&HashMap::new(), "<config>")
    }

    fn validate_keyed(&self, lines: &HashMap<String, usize>, path: &str) -> Result<()> {
        let fail = |key: &str, msg: String| -> Error {
            match lines.get(key) {
                Some(&line) => Error::ConfigParse {
                    path: path.to_owned(),
                    line,
                    msg,
                },
                None => Error::InvalidConfig(msg),
            }
        };
        if self.n_tasks == 0 {
            return Err(fail("n", "n must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(fail("alpha", format!("alpha={} must be > 0", self.alpha)));
        }
        if let Some(l) = self.lipschitz {
            if !(l > 0.0 && l.is_finite()) {
                return Err(fail("L", format!("L={l} must be > 0")));
            }
            if self.alpha > 1.0 / l {
                return Err(fail(
                    "alpha",
                    format!("alpha={} violates alpha <= 1/L = {}", self.alpha, 1.0 / l),
                ));
            }
        }
        if let Some(rho) = self.hessian_lipschitz {
            if !(rho >= 0.0 && rho.is_finite()) {
                return Err(fail("rho", format!("rho={rho} must be >= 0")));
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(fail("beta", format!("beta={} violates beta ∈ (0,1]", self.beta)));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(fail("eta", format!("eta={} must be >= 0", self.eta)));
        }
        if self.eta_grid.iter().any(|&e| !(e >= 0.0 && e.is_finite())) {
            return Err(fail("eta_grid", "eta_grid entries must be finite and >= 0".into()));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(fail("eta0", format!("eta0={} must be > 0", self.eta0)));
        }
        if self.tasks_per_iter == 0 || self.tasks_per_iter > self.n_tasks {
            return Err(fail(
                "B",
                format!("B={} must satisfy 1 <= B <= n={}", self.tasks_per_iter, self.n_tasks),
            ));
        }
        if self.batch_size == 0 {
            return Err(fail("K", "K must be >= 1".into()));
        }
        if self.algorithm.is_federated() {
            if self.local_steps == 0 {
                return Err(fail("H", "H must be >= 1".into()));
            }
            if self.fed_mode == FedMode::CrossDevice && self.k0() == 0 {
                return Err(fail("K0", "cross-device mode requires K0 >= 1".into()));
            }
        }
        if let Some(p) = &self.p {
            if p.len() != 1 && p.len() != self.n_tasks {
                return Err(fail(
                    "p",
                    format!("p has {} entries; expected 1 or n={}", p.len(), self.n_tasks),
                ));
            }
        }
        validate_probabilities(&self.probabilities()).map_err(|e| fail("p", e.to_string()))?;
        if self.algorithm == Algorithm::MomlV2 {
            if let Some(l) = self.lipschitz {
                let bound = Self::eta0_bound(l);
                if self.eta0 > bound {
                    return Err(fail(
                        "eta0",
                        format!(
                            "eta0={} violates eta0 <= (2/(3L))^(3/2) = {bound} needed for beta_t <= 1",
                            self.eta0
                        ),
                    ));
                }
            }
        }
        match self.family {
            TaskFamily::Quadratic => {
                if self.dim == 0 {
                    return Err(fail("d", "d must be >= 1".into()));
                }
                if !(self.spread >= 1.0) {
                    return Err(fail("spread", format!("spread={} must be >= 1", self.spread)));
                }
                if !(self.noise_std >= 0.0) {
                    return Err(fail("noise_std", "noise_std must be >= 0".into()));
                }
            }
            TaskFamily::Sinewave => {
                if self.n_tasks != 25 {
                    return Err(fail("n", "the sinewave family has exactly n = 25 tasks".into()));
                }
            }
            TaskFamily::Blob => {
                if !self.n_tasks.is_multiple_of(2) || !self.classes.is_multiple_of(2) || self.classes == 0 {
                    return Err(fail("n", "blob family needs even n and even classes".into()));
                }
                if self.blob_a < 2
                    || !self.blob_a.is_multiple_of(2)
                    || self.blob_test_a < 2
                    || !self.blob_test_a.is_multiple_of(2)
                {
                    return Err(fail("blob_a", "blob sample counts a must be even and >= 2".into()));
                }
            }
        }
        if self.hidden.contains(&0) {
            return Err(fail("hidden", "hidden layer sizes must be positive".into()));
        }
        if self.adapt_shots == 0 || self.adapt_test_points == 0 {
            return Err(fail(
                "adapt_shots",
                "adaptation shots and test points must be >= 1".into(),
            ));
        }
        if self.num_seeds == 0 {
            return Err(fail("num_seeds", "num_seeds must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses and validates config text. `path` only labels diagnostics.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| Error::ConfigParse {
                path: path.to_owned(),
                line: line_no,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_owned(), line_no) {
                return Err(err(format!("duplicate key `{key}` (first set on line {prev})")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        for required in ["algorithm", "seed"] {
            if !seen.contains_key(required) {
                return Err(Error::ConfigParse {
                    path: path.to_owned(),
                    line: 0,
                    msg: format!("missing required key `{required}`"),
                });
            }
        }
        cfg.validate_keyed(&seen, path)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "algorithm" => self.algorithm = value.parse()?,
            "seed" => self.seed = num(key, value)?,
            "taskset_seed" => self.taskset_seed = num(key, value)?,
            "num_seeds" => self.num_seeds = num(key, value)?,
            "family" => self.family = value.parse()?,
            "alpha" => self.alpha = num(key, value)?,
            "eta" => self.eta = num(key, value)?,
            "eta0" => self.eta0 = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "B" => self.tasks_per_iter = num(key, value)?,
            "K" => self.batch_size = num(key, value)?,
            "K0" => self.reset_batch_size = Some(num(key, value)?),
            "H" => self.local_steps = num(key, value)?,
            "R" => self.rounds = num(key, value)?,
            "T" => self.iterations = num(key, value)?,
            "n" => self.n_tasks = num(key, value)?,
            "L" => self.lipschitz = Some(num(key, value)?),
            "rho" => self.hessian_lipschitz = Some(num(key, value)?),
            "p" => self.p = Some(list(key, value)?),
            "fed_mode" => self.fed_mode = value.parse()?,
            "eta_decay" => self.eta_decay = boolean(key, value)?,
            "eta_grid" => self.eta_grid = list(key, value)?,
            "v2_batch_law" => self.v2_batch_law = value.parse()?,
            "lhat_B" => self.lhat_tasks = Some(num(key, value)?),
            "lhat_K" => self.lhat_batch_size = Some(num(key, value)?),
            "d" => self.dim = num(key, value)?,
            "spread" => self.spread = num(key, value)?,
            "noise_std" => self.noise_std = num(key, value)?,
            "optimum_radius" => self.optimum_radius = num(key, value)?,
            "optimum_center" => self.optimum_center = num(key, value)?,
            "hidden" => self.hidden = list(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "blob_a" => self.blob_a = num(key, value)?,
            "blob_test_a" => self.blob_test_a = num(key, value)?,
            "oracle_every" => self.oracle_every = num(key, value)?,
            "adapt_tasks" => self.adapt_tasks = num(key, value)?,
            "adapt_shots" => self.adapt_shots = num(key, value)?,
            "adapt_steps" => self.adapt_steps = num(key, value)?,
            "adapt_lr" => self.adapt_lr = num(key, value)?,
            "adapt_test_points" => self.adapt_test_points = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        kv("algorithm", self.algorithm.to_string());
        kv("seed", self.seed.to_string());
        kv("taskset_seed", self.taskset_seed.to_string());
        kv("num_seeds", self.num_seeds.to_string());
        kv("family", self.family.to_string());
        kv("alpha", real(self.alpha));
        kv("eta", real(self.eta));
        kv("eta0", real(self.eta0));
        kv("beta", real(self.beta));
        kv("B", self.tasks_per_iter.to_string());
        kv("K", self.batch_size.to_string());
        if let Some(k0) = self.reset_batch_size {
            kv("K0", k0.to_string());
        }
        kv("H", self.local_steps.to_string());
        kv("R", self.rounds.to_string());
        kv("T", self.iterations.to_string());
        kv("n", self.n_tasks.to_string());
        if let Some(l) = self.lipschitz {
            kv("L", real(l));
        }
        if let Some(rho) = self.hessian_lipschitz {
            kv("rho", real(rho));
        }
        if let Some(p) = &self.p {
            kv("p", p.iter().map(|&x| real(x)).collect::<Vec<_>>().join(","));
        }
        kv("fed_mode", self.fed_mode.to_string());
        kv("eta_decay", self.eta_decay.to_string());
        if !self.eta_grid.is_empty() {
            kv(
                "eta_grid",
                self.eta_grid.iter().map(|&x| real(x)).collect::<Vec<_>>().join(","),
            );
        }
        kv("v2_batch_law", self.v2_batch_law.to_string());
        if let Some(b) = self.lhat_tasks {
            kv("lhat_B", b.to_string());
        }
        if let Some(k) = self.lhat_batch_size {
            kv("lhat_K", k.to_string());
        }
        kv("d", self.dim.to_string());
        kv("spread", real(self.spread));
        kv("noise_std", real(self.noise_std));
        kv("optimum_radius", real(self.optimum_radius));
        kv("optimum_center", real(self.optimum_center));
        kv(
            "hidden",
            self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("classes", self.classes.to_string());
        kv("blob_a", self.blob_a.to_string());
        kv("blob_test_a", self.blob_test_a.to_string());
        kv("oracle_every", self.oracle_every.to_string());
        kv("adapt_tasks", self.adapt_tasks.to_string());
        kv("adapt_shots", self.adapt_shots.to_string());
        kv("adapt_steps", self.adapt_steps.to_string());
        kv("adapt_lr", real(self.adapt_lr));
        kv("adapt_test_points", self.adapt_test_points.to_string());
        out
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    RunConfig::parse(&text, &path.display().to_string())
}

fn real(x: f64) -> String {
    format!("{x:?}")
}

fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("key `{key}`: cannot parse `{value}` as {}", std::any::type_name::<T>()))
}

fn list<T: FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(|s| num(key, s.trim()))
        .collect::<std::result::Result<Vec<T>, String>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(format!("key `{key}`: empty list"))
            } else {
                Ok(v)
            }
        })
}

fn boolean(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("key `{key}`: expected true/false, got `{value}`")),
    }
}
