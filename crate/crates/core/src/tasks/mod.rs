//! Task families and their stochastic evaluation surface.
//!
//! Every task exposes mini-batch gradients and Hessian-vector products over
//! samples drawn from its data distribution, plus "population" versions used
//! by the oracle: exact for quadratics, a fixed evaluation set otherwise.

mod blob;
mod manifest;
mod quadratic;
mod sinewave;

use std::sync::{Arc, OnceLock};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::models::{default_hvp_eps, MlpModel, QuadraticModel, Samples};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::vector::{check_len, ParamVector};

pub use blob::{gen_blob_clients, BlobLayout, BlobWorld};
pub use manifest::write_manifest;
pub use quadratic::{gen_quad_tasks, gen_quad_tasks_with, QuadSpec};
pub use sinewave::{gen_sinewave_tasks, gen_unseen_sinewave, SINE_X_MAX, SINE_X_MIN};

/// Points in the frozen evaluation grid standing in for the sinewave population.
pub const SINE_EVAL_POINTS: usize = 100_000;

/// `len` paired samples stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    input_dim: usize,
    target_dim: usize,
    inputs: Vec<S>,
    targets: Vec<S>,
    len: usize,
}

impl<S: Real> Batch<S> {
    pub fn new(input_dim: usize, target_dim: usize, inputs: Vec<S>, targets: Vec<S>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("batch input dimension must be positive"));
        }
        let len = inputs.len() / input_dim;
        check_len(len * input_dim, inputs.len())?;
        check_len(len * target_dim, targets.len())?;
        Ok(Self {
            input_dim,
            target_dim,
            inputs,
            targets,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn input(&self, i: usize) -> &[S] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[S] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    pub fn samples(&self) -> Samples<'_, S> {
        Samples {
            inputs: &self.inputs,
            targets: &self.targets,
            len: self.len,
        }
    }

    /// Concatenation of two batches of the same shape.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        check_len(self.input_dim, other.input_dim)?;
        check_len(self.target_dim, other.target_dim)?;
        let mut inputs = self.inputs.clone();
        inputs.extend_from_slice(&other.inputs);
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        Self::new(self.input_dim, self.target_dim, inputs, targets)
    }

    /// Rows `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(
            self.input_dim,
            self.target_dim,
            self.inputs[range.start * self.input_dim..range.end * self.input_dim].to_vec(),
            self.targets[range.start * self.target_dim..range.end * self.target_dim].to_vec(),
        )
    }
}

#[derive(Debug, Clone)]
pub enum Backend<S> {
    /// `f(x) = amplitude · sin(phase + x)`, `x ~ Unif(-5, 5)`, fit by an MLP.
    Sinewave { amplitude: S, phase: S, model: MlpModel },
    /// Exact quadratic; each sample adds `ξᵀw` with `ξ ~ N(0, noise_std² I)`.
    Quadratic { model: QuadraticModel<S>, noise_std: S },
    /// Fixed finite client dataset, sampled uniformly with replacement.
    Blob {
        model: MlpModel,
        data: Arc<Batch<S>>,
        class_counts: Vec<usize>,
    },
}

#[derive(Debug, Clone)]
pub struct Task<S> {
    id: usize,
    backend: Backend<S>,
    eval_set: Arc<OnceLock<Batch<S>>>,
    eval_points: usize,
}

impl<S: Real> Task<S> {
    pub fn new(id: usize, backend: Backend<S>) -> Self {
        Self {
            id,
            backend,
            eval_set: Arc::new(OnceLock::new()),
            eval_points: SINE_EVAL_POINTS,
        }
    }

    /// Overrides the sinewave evaluation-grid size (default 10⁵).
    pub fn with_eval_points(mut self, points: usize) -> Self {
        self.eval_points = points.max(1);
        self.eval_set = Arc::new(OnceLock::new());
        self
    }

    /// One-based task id.
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn backend(&self) -> &Backend<S> {
        &self.backend
    }

    /// Number of trainable parameters of the task's model.
    pub fn dim(&self) -> usize {
        match &self.backend {
            Backend::Quadratic { model, .. } => model.dim(),
            Backend::Sinewave { model, .. } | Backend::Blob { model, .. } => model.num_params(),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.backend, Backend::Quadratic { .. })
    }

    pub fn quadratic(&self) -> Option<&QuadraticModel<S>> {
        match &self.backend {
            Backend::Quadratic { model, .. } => Some(model),
            _ => None,
        }
    }

    pub fn mlp(&self) -> Option<&MlpModel> {
        match &self.backend {
            Backend::Sinewave { model, .. } | Backend::Blob { model, .. } => Some(model),
            Backend::Quadratic { .. } => None,
        }
    }

    /// Sinewave target `A sin(φ + x)`.
    pub fn sine_target(&self, x: S) -> Option<S> {
        match &self.backend {
            Backend::Sinewave { amplitude, phase, .. } => Some(*amplitude * (*phase + x).sin()),
            _ => None,
        }
    }

    /// `k` i.i.d. samples from the task distribution.
    pub fn sample_batch(&self, k: usize, rng: &mut RngStream) -> Result<Batch<S>> {
        if k == 0 {
            return Err(Error::config("batch size K must be >= 1"));
        }
        match &self.backend {
            Backend::Sinewave { .. } => {
                let xs: Vec<S> = (0..k)
                    .map(|_| S::lit(rng.random_range(SINE_X_MIN..=SINE_X_MAX)))
                    .collect();
                let ys = xs.iter().map(|&x| self.sine_target(x).unwrap()).collect();
                Batch::new(1, 1, xs, ys)
            }
            Backend::Quadratic { model, noise_std } => {
                let d = model.dim();
                let noise: Vec<S> = if *noise_std == S::zero() {
                    vec![S::zero(); k * d]
                } else {
                    let normal =
                        Normal::new(0.0, noise_std.as_f64()).map_err(|e| Error::config(format!("noise_std: {e}")))?;
                    (0..k * d).map(|_| S::lit(normal.sample(rng))).collect()
                };
                Batch::new(d, 0, noise, Vec::new())
            }
            Backend::Blob { data, .. } => {
                let (din, dout) = (data.input_dim, data.target_dim);
                let mut inputs = Vec::with_capacity(k * din);
                let mut targets = Vec::with_capacity(k * dout);
                for _ in 0..k {
                    let j = rng.random_range(0..data.len());
                    inputs.extend_from_slice(data.input(j));
                    targets.extend_from_slice(data.target(j));
                }
                Batch::new(din, dout, inputs, targets)
            }
        }
    }

    /// Mean per-sample loss and gradient over `batch`.
    pub fn loss_grad(&self, w: &ParamVector<S>, batch: &Batch<S>) -> Result<(S, ParamVector<S>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        match &self.backend {
            Backend::Quadratic { model, .. } => {
                let (loss, mut g) = model.loss_grad(w)?;
                check_len(model.dim(), batch.input_dim)?;
                let mean_noise = mean_rows(batch);
                let shift = mean_noise.iter().zip(w.iter()).map(|(&a, &b)| a * b).sum::<S>();
                for (gi, &xi) in g.as_mut_slice().iter_mut().zip(&mean_noise) {
                    *gi = *gi + xi;
                }
                g.ensure_finite("quadratic stochastic gradient")?;
                Ok((loss + shift, g))
            }
            Backend::Sinewave { model, .. } | Backend::Blob { model, .. } => model.loss_grad(w, batch.samples()),
        }
    }

    /// `∇̂_S ℒ(w)`: mean per-sample gradient over `batch`.
    pub fn stochastic_grad(&self, w: &ParamVector<S>, batch: &Batch<S>) -> Result<ParamVector<S>> {
        Ok(self.loss_grad(w, batch)?.1)
    }

    pub fn stochastic_loss(&self, w: &ParamVector<S>, batch: &Batch<S>) -> Result<S> {
        match &self.backend {
            Backend::Quadratic { .. } => Ok(self.loss_grad(w, batch)?.0),
            Backend::Sinewave { model, .. } | Backend::Blob { model, .. } => model.loss(w, batch.samples()),
        }
    }

    /// `∇̂²_S ℒ(w) · v`: exact for quadratics, finite differences of the
    /// batch gradient (activation pattern frozen at `w`) for MLP backends.
    pub fn stochastic_hvp(&self, w: &ParamVector<S>, v: &ParamVector<S>, batch: &Batch<S>) -> Result<ParamVector<S>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        match &self.backend {
            Backend::Quadratic { model, .. } => {
                w.check_len(v)?;
                model.hvp(v)
            }
            Backend::Sinewave { model, .. } | Backend::Blob { model, .. } => {
                w.check_len(v)?;
                model.hvp(w, v, batch.samples(), default_hvp_eps(w))
            }
        }
    }

    /// Population evaluation set: the frozen grid (sinewave) or the full
    /// client dataset (blob). `None` for quadratics, whose population
    /// quantities are exact.
    pub fn eval_set(&self) -> Option<&Batch<S>> {
        match &self.backend {
            Backend::Quadratic { .. } => None,
            Backend::Blob { data, .. } => Some(data),
            Backend::Sinewave { .. } => Some(self.eval_set.get_or_init(|| {
                let n = self.eval_points;
                let step = (SINE_X_MAX - SINE_X_MIN) / n as f64;
                let xs: Vec<S> = (0..n).map(|i| S::lit(SINE_X_MIN + (i as f64 + 0.5) * step)).collect();
                let ys = xs.iter().map(|&x| self.sine_target(x).unwrap()).collect();
                Batch::new(1, 1, xs, ys).expect("grid batch")
            })),
        }
    }

    pub fn population_loss_grad(&self, w: &ParamVector<S>) -> Result<(S, ParamVector<S>)> {
        match &self.backend {
            Backend::Quadratic { model, .. } => model.loss_grad(w),
            _ => self.loss_grad(w, self.eval_set().unwrap()),
        }
    }

    pub fn population_grad(&self, w: &ParamVector<S>) -> Result<ParamVector<S>> {
        Ok(self.population_loss_grad(w)?.1)
    }

    pub fn population_loss(&self, w: &ParamVector<S>) -> Result<S> {
        match &self.backend {
            Backend::Quadratic { model, .. } => model.loss(w),
            _ => self.stochastic_loss(w, self.eval_set().unwrap()),
        }
    }

    pub fn population_hvp(&self, w: &ParamVector<S>, v: &ParamVector<S>) -> Result<ParamVector<S>> {
        match &self.backend {
            Backend::Quadratic { model, .. } => {
                w.check_len(v)?;
                model.hvp(v)
            }
            _ => self.stochastic_hvp(w, v, self.eval_set().unwrap()),
        }
    }
}

fn mean_rows<S: Real>(batch: &Batch<S>) -> Vec<S> {
    let d = batch.input_dim;
    let mut m = vec![S::zero(); d];
    for i in 0..batch.len() {
        for (acc, &x) in m.iter_mut().zip(batch.input(i)) {
            *acc = *acc + x;
        }
    }
    let inv = S::one() / S::lit(batch.len() as f64);
    m.iter_mut().for_each(|x| *x = *x * inv);
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Quadratic,
    Sinewave,
    Blob,
}

/// Ordered collection of `n` tasks with ids `1..=n`.
#[derive(Debug, Clone)]
pub struct TaskSet<S> {
    tasks: Vec<Task<S>>,
    kind: FamilyKind,
    lipschitz: Option<S>,
}

impl<S: Real> TaskSet<S> {
    pub fn new(tasks: Vec<Task<S>>, kind: FamilyKind, lipschitz: Option<S>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::config("a task set needs at least one task"));
        }
        let d = tasks[0].dim();
        for (i, t) in tasks.iter().enumerate() {
            if t.id() != i + 1 {
                return Err(Error::config(format!(
                    "task at position {i} has id {}, expected {}",
                    t.id(),
                    i + 1
                )));
            }
            check_len(d, t.dim())?;
        }
        Ok(Self { tasks, kind, lipschitz })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn tasks(&self) -> &[Task<S>] {
        &self.tasks
    }

    /// Task at zero-based position `i`.
    pub fn get(&self, i: usize) -> &Task<S> {
        &self.tasks[i]
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].dim()
    }

    /// Exact global gradient-Lipschitz constant, known for quadratic sets.
    pub fn lipschitz(&self) -> Option<S> {
        self.lipschitz
    }

    pub fn all_quadratic(&self) -> bool {
        self.tasks.iter().all(Task::is_quadratic)
    }

    /// Initial meta-model: zeros for quadratics, bounded-uniform MLP init otherwise.
    pub fn initial_params(&self, rng: &mut RngStream) -> ParamVector<S> {
        match self.tasks[0].mlp() {
            Some(model) => model.init(rng),
            None => ParamVector::zeros(self.dim()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_task(noise: f64) -> Task<f64> {
        let q = QuadraticModel::new(
            vec![2.0, 0.5, 0.5, 1.0],
            ParamVector::from_f64_slice(&[1.0, -1.0]).unwrap(),
            0.0,
        )
        .unwrap();
        Task::new(
            1,
            Backend::Quadratic {
                model: q,
                noise_std: noise,
            },
        )
    }

    #[test]
    fn quadratic_stochastic_gradient_is_exact_without_noise() {
        let t = quad_task(0.0);
        let w = ParamVector::from_f64_slice(&[0.3, -0.2]).unwrap();
        let b = t.sample_batch(4, &mut RngStream::root(1)).unwrap();
        assert_eq!(b.len(), 4);
        assert_eq!(
            t.stochastic_grad(&w, &b).unwrap(),
            t.quadratic().unwrap().grad(&w).unwrap()
        );
        let v = ParamVector::from_f64_slice(&[1.0, 0.0]).unwrap();
        assert_eq!(
            t.stochastic_hvp(&w, &v, &b).unwrap(),
            ParamVector::from_f64_slice(&[2.0, 0.5]).unwrap()
        );
    }

    #[test]
    fn gradient_over_union_is_mean_of_halves() {
        let t = quad_task(1.0);
        let w = ParamVector::from_f64_slice(&[0.3, -0.2]).unwrap();
        let mut rng = RngStream::root(4);
        let b1 = t.sample_batch(5, &mut rng).unwrap();
        let b2 = t.sample_batch(5, &mut rng).unwrap();
        let g = t.stochastic_grad(&w, &b1.concat(&b2).unwrap()).unwrap();
        let g1 = t.stochastic_grad(&w, &b1).unwrap();
        let g2 = t.stochastic_grad(&w, &b2).unwrap();
        let mean = g1.lin_comb(0.5, &g2, 0.5).unwrap();
        assert!(g.max_abs_diff(&mean).unwrap() < 1e-12);
    }

    #[test]
    fn zero_batch_size_rejected() {
        assert!(quad_task(0.0).sample_batch(0, &mut RngStream::root(0)).is_err());
    }

    #[test]
    fn mlp_hvp_with_eval_set_matches_population_hvp() {
        let set = gen_sinewave_tasks::<f64>(&[8, 8]).unwrap();
        let t = set.get(3).clone().with_eval_points(2_000);
        let w = set.initial_params(&mut RngStream::root(2));
        let v = w.scale(0.5);
        let full = t.eval_set().unwrap().clone();
        let a = t.stochastic_hvp(&w, &v, &full).unwrap();
        let b = t.population_hvp(&w, &v).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-10);
    }

    #[test]
    fn taskset_requires_sequential_ids() {
        let t = quad_task(0.0);
        let bad = Task::new(3, t.backend().clone());
        assert!(TaskSet::new(vec![t, bad], FamilyKind::Quadratic, None).is_err());
    }
}
