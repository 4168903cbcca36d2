//! Ground-truth evaluators for the meta-objective
//! `F(w) = (1/n) Σ ℒ_i(w − α∇ℒ_i(w))`.
//!
//! Analytic handles (all-quadratic task sets) use the closed form
//! `F_i(w) = ½ wᵀ(MAM)w − (M²b)ᵀw + const` with `M = I − αA`, so `∇F` is
//! affine. Empirical handles compose each task's population gradient and
//! Hessian-vector product, evaluated on its fixed evaluation set.

use crate::error::{Error, Result};
use crate::models::{matmul, matvec, solve, symmetric_eigenvalues};
use crate::optim::MemoryStore;
use crate::scalar::Real;
use crate::tasks::TaskSet;
use crate::vector::{check_len, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exactness {
    Analytic,
    Empirical,
}

#[derive(Debug, Clone)]
struct QuadMeta<S> {
    /// `M A M`, row-major.
    h: Vec<S>,
    /// `M² b`
    g: Vec<S>,
    /// Constant term of `F_i`.
    c0: S,
    /// `M`
    m: Vec<S>,
    /// `α b`
    alpha_b: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct OracleHandle<'a, S> {
    taskset: &'a TaskSet<S>,
    alpha: S,
    exactness: Exactness,
    quad: Vec<QuadMeta<S>>,
}

impl<'a, S: Real> OracleHandle<'a, S> {
    /// Closed-form oracle; every task must be quadratic.
    pub fn analytic(taskset: &'a TaskSet<S>, alpha: S) -> Result<Self> {
        if !taskset.all_quadratic() {
            return Err(Error::Unsupported("analytic oracle requires quadratic tasks".into()));
        }
        let d = taskset.dim();
        let quad = taskset
            .tasks()
            .iter()
            .map(|t| {
                let q = t.quadratic().unwrap();
                let a = q.matrix();
                let b = q.linear().as_slice();
                let mut m: Vec<S> = a.iter().map(|&x| -alpha * x).collect();
                for i in 0..d {
                    m[i * d + i] = m[i * d + i] + S::one();
                }
                let h = matmul(&matmul(&m, a, d), &m, d);
                let g = matvec(&m, d, &matvec(&m, d, b));
                let ab = matvec(a, d, b);
                let btab: S = ab.iter().zip(b).map(|(&x, &y)| x * y).sum();
                let btb: S = b.iter().map(|&x| x * x).sum();
                let c0 = S::lit(0.5) * alpha * alpha * btab - alpha * btb + q.offset();
                QuadMeta {
                    h,
                    g,
                    c0,
                    m,
                    alpha_b: b.iter().map(|&x| alpha * x).collect(),
                }
            })
            .collect();
        Ok(Self {
            taskset,
            alpha,
            exactness: Exactness::Analytic,
            quad,
        })
    }

    /// Composition oracle over population (or evaluation-set) quantities.
    pub fn empirical(taskset: &'a TaskSet<S>, alpha: S) -> Self {
        Self {
            taskset,
            alpha,
            exactness: Exactness::Empirical,
            quad: Vec::new(),
        }
    }

    /// Analytic when possible, empirical otherwise.
    pub fn best(taskset: &'a TaskSet<S>, alpha: S) -> Self {
        Self::analytic(taskset, alpha).unwrap_or_else(|_| Self::empirical(taskset, alpha))
    }

    pub fn exactness(&self) -> Exactness {
        self.exactness
    }

    pub fn alpha(&self) -> S {
        self.alpha
    }

    pub fn taskset(&self) -> &TaskSet<S> {
        self.taskset
    }

    /// `v_i(w) = w − α∇ℒ_i(w)` for the task at position `i`.
    pub fn exact_inner(&self, i: usize, w: &ParamVector<S>) -> Result<ParamVector<S>> {
        match self.exactness {
            Exactness::Analytic => {
                let qm = &self.quad[i];
                check_len(qm.g.len(), w.len())?;
                let mw = matvec(&qm.m, w.len(), w.as_slice());
                ParamVector::from_vec(mw.iter().zip(&qm.alpha_b).map(|(&x, &y)| x + y).collect())
            }
            Exactness::Empirical => {
                let g = self.taskset.get(i).population_grad(w)?;
                w.lin_comb(S::one(), &g, -self.alpha)
            }
        }
    }

    pub fn exact_meta_value(&self, w: &ParamVector<S>) -> Result<S> {
        let n = S::lit(self.taskset.len() as f64);
        let mut total = S::zero();
        match self.exactness {
            Exactness::Analytic => {
                let d = w.len();
                for qm in &self.quad {
                    check_len(qm.g.len(), d)?;
                    let hw = matvec(&qm.h, d, w.as_slice());
                    let quad: S = hw.iter().zip(w.iter()).map(|(&a, &b)| a * b).sum();
                    let lin: S = qm.g.iter().zip(w.iter()).map(|(&a, &b)| a * b).sum();
                    total = total + S::lit(0.5) * quad - lin + qm.c0;
                }
            }
            Exactness::Empirical => {
                for (i, t) in self.taskset.tasks().iter().enumerate() {
                    total = total + t.population_loss(&self.exact_inner(i, w)?)?;
                }
            }
        }
        Ok(total / n)
    }

    /// `∇F(w) = (1/n) Σ (I − α∇²ℒ_i(w)) ∇ℒ_i(v_i(w))`.
    pub fn exact_meta_grad(&self, w: &ParamVector<S>) -> Result<ParamVector<S>> {
        let n = self.taskset.len();
        let d = w.len();
        let mut acc = ParamVector::zeros(d);
        match self.exactness {
            Exactness::Analytic => {
                for qm in &self.quad {
                    check_len(qm.g.len(), d)?;
                    let hw = matvec(&qm.h, d, w.as_slice());
                    let term = ParamVector::from_vec(hw.iter().zip(&qm.g).map(|(&a, &b)| a - b).collect())?;
                    acc.axpy(S::one(), &term)?;
                }
            }
            Exactness::Empirical => {
                for (i, t) in self.taskset.tasks().iter().enumerate() {
                    let v = self.exact_inner(i, w)?;
                    let g = t.population_grad(&v)?;
                    let hg = t.population_hvp(w, &g)?;
                    acc.axpy(S::one(), &g)?;
                    acc.axpy(-self.alpha, &hg)?;
                }
            }
        }
        let out = acc.scale(S::one() / S::lit(n as f64));
        out.ensure_finite("exact_meta_grad")?;
        Ok(out)
    }

    /// Coordinate-wise central differences of [`exact_meta_value`](Self::exact_meta_value).
    pub fn fd_meta_grad(&self, w: &ParamVector<S>, eps: S) -> Result<ParamVector<S>> {
        if !(eps > S::zero()) {
            return Err(Error::config("fd step must be positive"));
        }
        let mut out = Vec::with_capacity(w.len());
        let mut probe = w.clone();
        for k in 0..w.len() {
            let orig = probe[k];
            probe.as_mut_slice()[k] = orig + eps;
            let fp = self.exact_meta_value(&probe)?;
            probe.as_mut_slice()[k] = orig - eps;
            let fm = self.exact_meta_value(&probe)?;
            probe.as_mut_slice()[k] = orig;
            out.push((fp - fm) / (S::lit(2.0) * eps));
        }
        ParamVector::from_vec(out)
    }

    /// Default central-difference step `1e-5 · (1 + ‖w‖∞)`.
    pub fn default_fd_eps(w: &ParamVector<S>) -> S {
        S::lit(1e-5) * (S::one() + w.norm_inf())
    }

    /// `Υ = (1/n) Σ ‖u^i − v_i(w)‖²`.
    ///
    /// Tasks without a memory entry contribute zero: before first touch the
    /// memory is undefined and would be initialized at `v̂ ≈ v_i(w)`.
    pub fn tracking_error(&self, memory: &MemoryStore<S>, w: &ParamVector<S>) -> Result<S> {
        let mut total = S::zero();
        for i in 0..self.taskset.len() {
            if let Some(u) = memory.get(i) {
                total = total + u.dist_sq(&self.exact_inner(i, w)?)?;
            }
        }
        Ok(total / S::lit(self.taskset.len() as f64))
    }

    /// Deterministic descent `w_{t+1} = w_t − η ∇F(w_t)`; returns `T + 1` iterates.
    pub fn exact_gd_reference(&self, w0: &ParamVector<S>, eta: S, steps: usize) -> Result<Vec<ParamVector<S>>> {
        let mut traj = Vec::with_capacity(steps + 1);
        traj.push(w0.clone());
        for _ in 0..steps {
            let w = traj.last().unwrap();
            let g = self.exact_meta_grad(w)?;
            let next = w.lin_comb(S::one(), &g, -eta)?;
            next.ensure_finite("exact_gd_reference")?;
            traj.push(next);
        }
        Ok(traj)
    }

    /// Averaged meta-Hessian `(1/n) Σ MAM` (analytic handles only).
    pub fn meta_hessian(&self) -> Result<Vec<S>> {
        if self.exactness != Exactness::Analytic {
            return Err(Error::Unsupported("meta Hessian needs an analytic oracle".into()));
        }
        let inv_n = S::one() / S::lit(self.quad.len() as f64);
        let mut h = vec![S::zero(); self.quad[0].h.len()];
        for qm in &self.quad {
            h.iter_mut().zip(&qm.h).for_each(|(a, &b)| *a = *a + b * inv_n);
        }
        Ok(h)
    }

    /// Stationary point of the quadratic meta-objective, if `mean(MAM)` is nonsingular.
    pub fn meta_minimizer(&self) -> Result<ParamVector<S>> {
        let h = self.meta_hessian()?;
        let d = self.taskset.dim();
        let inv_n = S::one() / S::lit(self.quad.len() as f64);
        let mut g = vec![S::zero(); d];
        for qm in &self.quad {
            g.iter_mut().zip(&qm.g).for_each(|(a, &b)| *a = *a + b * inv_n);
        }
        let w = solve(&h, &g, d).ok_or_else(|| Error::Unsupported("singular meta Hessian".into()))?;
        ParamVector::from_vec(w)
    }

    /// Gradient-Lipschitz constant `L_F` of the quadratic meta-objective.
    pub fn meta_smoothness(&self) -> Result<S> {
        let h = self.meta_hessian()?;
        let d = self.taskset.dim();
        Ok(*symmetric_eigenvalues(&h, d).last().unwrap())
    }
}
