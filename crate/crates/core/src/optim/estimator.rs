//! The building blocks shared by every memory-based step: inner adaptation,
//! the two memory rules, the meta-gradient estimator and the `L̂` estimate.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::memory::MemoryStore;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tasks::{Batch, Task, TaskSet};
use crate::vector::{pairwise_mean, ParamVector};

/// Below this parameter count per-task work runs sequentially.
const PAR_MIN_DIM: usize = 256;

/// `v̂ = w − α ∇̂_S ℒ(w)`.
pub fn inner_adapt<S: Real>(task: &Task<S>, w: &ParamVector<S>, batch: &Batch<S>, alpha: S) -> Result<ParamVector<S>> {
    let g = task.stochastic_grad(w, batch)?;
    g.ensure_finite("inner gradient")?;
    w.lin_comb(S::one(), &g, -alpha)
}

fn check_beta<S: Real>(beta: S) -> Result<()> {
    if beta > S::zero() && beta <= S::one() {
        Ok(())
    } else {
        Err(Error::config(format!("beta={beta} violates beta ∈ (0,1]")))
    }
}

/// Moving-average rule for the sampled tasks: `u ← (1−β)u + βv̂`.
///
/// Untouched tasks are initialized to `v̂` first, so their first visit counts
/// two writes.
pub fn moml_v1_update_memory<S: Real>(
    memory: &mut MemoryStore<S>,
    sampled: &[usize],
    vhat: &BTreeMap<usize, ParamVector<S>>,
    beta: S,
    t: u64,
) -> Result<()> {
    check_beta(beta)?;
    for &i in sampled {
        let v = vhat.get(&i).ok_or(Error::MissingInnerStep(i))?;
        if !memory.is_initialized(i) {
            memory.set(i, v.clone(), t)?;
        }
        let next = memory.require(i)?.lin_comb(S::one() - beta, v, beta)?;
        memory.set(i, next, t)?;
    }
    Ok(())
}

/// Unbiased rule applied to all tasks every iteration:
/// `u ← (1−β)u + βw + (β/p_i)(v̂ − w)` for `i ∈ ℬ'`, and `(1−β)u + βw` otherwise.
pub fn moml_v2_update_memory<S: Real>(
    memory: &mut MemoryStore<S>,
    sampled_prime: &[usize],
    w: &ParamVector<S>,
    vhat: &BTreeMap<usize, ParamVector<S>>,
    beta: S,
    p: &[f64],
    t: u64,
) -> Result<()> {
    check_beta(beta)?;
    crate::sampling::validate_probabilities(p)?;
    if p.len() != memory.len() {
        return Err(Error::DimensionMismatch {
            expected: memory.len(),
            got: p.len(),
        });
    }
    let mut in_prime = vec![false; memory.len()];
    for &i in sampled_prime {
        if !vhat.contains_key(&i) {
            return Err(Error::MissingInnerStep(i));
        }
        in_prime[i] = true;
    }
    for i in 0..memory.len() {
        let mut next = memory.require(i)?.lin_comb(S::one() - beta, w, beta)?;
        if in_prime[i] {
            let diff = vhat[&i].sub(w)?;
            next.axpy(beta / S::lit(p[i]), &diff)?;
        }
        memory.set(i, next, t)?;
    }
    Ok(())
}

/// Fresh batches for one task's meta-gradient term.
#[derive(Debug, Clone)]
pub struct TermBatches<S> {
    /// Hessian batch.
    pub s2: Batch<S>,
    /// Gradient batch at the personalized model.
    pub s3: Batch<S>,
}

/// One task's term `(I − α∇̂²_{S2}ℒ(w)) ∇̂_{S3}ℒ(u)` and the loss `ℒ̂_{S3}(u)`.
pub fn task_meta_grad<S: Real>(
    task: &Task<S>,
    w: &ParamVector<S>,
    u: &ParamVector<S>,
    batches: &TermBatches<S>,
    alpha: S,
) -> Result<(ParamVector<S>, S)> {
    let (loss, g) = task.loss_grad(u, &batches.s3)?;
    let hg = task.stochastic_hvp(w, &g, &batches.s2)?;
    hg.ensure_finite("meta-gradient HVP")?;
    Ok((g.lin_comb(S::one(), &hg, -alpha)?, loss))
}

/// Per-task terms for `sampled`, returned in ascending task order together
/// with the task index.
pub fn meta_grad_terms<S: Real>(
    taskset: &TaskSet<S>,
    sampled: &[usize],
    w: &ParamVector<S>,
    memory: &MemoryStore<S>,
    batches: &[TermBatches<S>],
    alpha: S,
) -> Result<Vec<(usize, ParamVector<S>, S)>> {
    if sampled.len() != batches.len() {
        return Err(Error::DimensionMismatch {
            expected: sampled.len(),
            got: batches.len(),
        });
    }
    let mut order: Vec<usize> = (0..sampled.len()).collect();
    order.sort_by_key(|&j| sampled[j]);
    let term = |&j: &usize| -> Result<(usize, ParamVector<S>, S)> {
        let i = sampled[j];
        let u = memory.require(i)?;
        let (g, loss) = task_meta_grad(taskset.get(i), w, u, &batches[j], alpha)?;
        Ok((i, g, loss))
    };
    if w.len() >= PAR_MIN_DIM {
        order.par_iter().map(term).collect()
    } else {
        order.iter().map(term).collect()
    }
}

/// `Δ̂ = (1/|ℬ|) Σ_{i∈ℬ} (I − α∇̂²_{S2}ℒ_i(w)) ∇̂_{S3}ℒ_i(u^i)`.
///
/// Terms are reduced in task order by a fixed pairwise tree, so the result
/// does not depend on the order of `sampled`.
pub fn meta_grad_estimate<S: Real>(
    taskset: &TaskSet<S>,
    sampled: &[usize],
    w: &ParamVector<S>,
    memory: &MemoryStore<S>,
    batches: &[TermBatches<S>],
    alpha: S,
) -> Result<ParamVector<S>> {
    if sampled.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let terms: Vec<ParamVector<S>> = meta_grad_terms(taskset, sampled, w, memory, batches, alpha)?
        .into_iter()
        .map(|(_, g, _)| g)
        .collect();
    pairwise_mean(&terms)
}

/// `L̂ = 4L + (2ρα/|ℬ|) Σ ‖∇̂ℒ_i(w)‖` from precomputed gradient norms.
pub fn lhat_from_norms<S: Real>(norms: &[S], l: S, rho: S, alpha: S) -> Result<S> {
    if !(l > S::zero()) || rho < S::zero() || alpha < S::zero() {
        return Err(Error::config("lhat needs L > 0, rho >= 0, alpha >= 0"));
    }
    let base = S::lit(4.0) * l;
    if rho == S::zero() {
        return Ok(base);
    }
    if norms.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if norms.iter().any(|x| !x.is_finite()) {
        return Err(Error::non_finite("lhat gradient norm"));
    }
    let sum: S = norms.iter().copied().sum();
    Ok(base + S::lit(2.0) * rho * alpha * sum / S::lit(norms.len() as f64))
}

/// `L̂(w)` over a task batch with one data batch per task.
pub fn lhat<S: Real>(
    taskset: &TaskSet<S>,
    w: &ParamVector<S>,
    tasks: &[usize],
    batches: &[Batch<S>],
    l: S,
    rho: S,
    alpha: S,
) -> Result<S> {
    if tasks.len() != batches.len() {
        return Err(Error::DimensionMismatch {
            expected: tasks.len(),
            got: batches.len(),
        });
    }
    let norms = tasks
        .iter()
        .zip(batches)
        .map(|(&i, b)| Ok(taskset.get(i).stochastic_grad(w, b)?.norm()))
        .collect::<Result<Vec<S>>>()?;
    lhat_from_norms(&norms, l, rho, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::QuadraticModel;
    use crate::rng::RngStream;
    use crate::tasks::{Backend, FamilyKind};

    fn pv(x: &[f64]) -> ParamVector<f64> {
        ParamVector::from_f64_slice(x).unwrap()
    }

    fn identity_task() -> Task<f64> {
        Task::new(
            1,
            Backend::Quadratic {
                model: QuadraticModel::identity(2),
                noise_std: 0.0,
            },
        )
    }

    #[test]
    fn inner_adapt_examples() {
        let t = identity_task();
        let b = t.sample_batch(1, &mut RngStream::root(0)).unwrap();
        assert_eq!(
            inner_adapt(&t, &pv(&[1.0, 0.0]), &b, 0.1).unwrap().as_slice(),
            &[0.9, 0.0]
        );
        assert_eq!(
            inner_adapt(&t, &pv(&[1.0, 3.0]), &b, 0.0).unwrap().as_slice(),
            &[1.0, 3.0]
        );
        assert_eq!(
            inner_adapt(&t, &pv(&[0.0, 0.0]), &b, 0.5).unwrap().as_slice(),
            &[0.0, 0.0]
        );
    }

    #[test]
    fn v1_memory_examples() {
        let mut m = MemoryStore::new(2, 2);
        m.set(0, pv(&[1.0, 1.0]), 0).unwrap();
        m.set(1, pv(&[7.0, 7.0]), 0).unwrap();
        let mut vhat = BTreeMap::new();
        vhat.insert(0, pv(&[3.0, 3.0]));
        moml_v1_update_memory(&mut m, &[0], &vhat, 0.5, 1).unwrap();
        assert_eq!(m.get(0).unwrap().as_slice(), &[2.0, 2.0]);
        assert_eq!(m.get(1).unwrap().as_slice(), &[7.0, 7.0]);
        assert_eq!(m.last_touched(1), Some(0));
        moml_v1_update_memory(&mut m, &[0], &vhat, 1.0, 2).unwrap();
        assert_eq!(m.get(0).unwrap().as_slice(), &[3.0, 3.0]);
        assert!(matches!(
            moml_v1_update_memory(&mut m, &[1], &vhat, 0.5, 3),
            Err(Error::MissingInnerStep(1))
        ));
    }

    #[test]
    fn v1_first_touch_counts_init() {
        let mut m = MemoryStore::new(1, 1);
        let mut vhat = BTreeMap::new();
        vhat.insert(0, pv(&[4.0]));
        moml_v1_update_memory(&mut m, &[0], &vhat, 0.5, 0).unwrap();
        assert_eq!(m.get(0).unwrap()[0], 4.0);
        assert_eq!(m.writes(0), 2);
    }

    #[test]
    fn v2_memory_examples() {
        let mut m = MemoryStore::new(2, 1);
        m.fill(&pv(&[0.0]), 0).unwrap();
        let w = pv(&[2.0]);
        let mut vhat = BTreeMap::new();
        vhat.insert(0, pv(&[1.0]));
        moml_v2_update_memory(&mut m, &[0], &w, &vhat, 0.5, &[0.5, 0.5], 1).unwrap();
        assert_eq!(m.get(0).unwrap()[0], 0.0);
        assert_eq!(m.get(1).unwrap()[0], 1.0);

        let mut m = MemoryStore::new(2, 1);
        m.fill(&pv(&[5.0]), 0).unwrap();
        moml_v2_update_memory(&mut m, &[0], &w, &vhat, 1.0, &[1.0, 1.0], 1).unwrap();
        assert_eq!(m.get(0).unwrap()[0], 1.0);
        assert_eq!(m.get(1).unwrap()[0], 2.0);
    }

    #[test]
    fn v2_with_unit_probability_is_v1_rule() {
        let mut a = MemoryStore::new(1, 2);
        a.fill(&pv(&[0.25, -1.0]), 0).unwrap();
        let mut b = a.clone();
        let w = pv(&[0.5, 0.5]);
        let mut vhat = BTreeMap::new();
        vhat.insert(0, pv(&[2.0, 1.5]));
        moml_v2_update_memory(&mut a, &[0], &w, &vhat, 0.5, &[1.0], 1).unwrap();
        moml_v1_update_memory(&mut b, &[0], &vhat, 0.5, 1).unwrap();
        assert!(a.get(0).unwrap().max_abs_diff(b.get(0).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn lhat_examples() {
        assert_eq!(lhat_from_norms(&[100.0, 3.0], 2.0, 0.0, 0.1).unwrap(), 8.0);
        assert_eq!(lhat_from_norms(&[2.0, 2.0, 2.0], 1.0, 1.0, 0.5).unwrap(), 6.0);
        assert!(lhat_from_norms(&[f64::NAN], 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn single_task_estimate_is_its_term() {
        let q = QuadraticModel::diagonal(&[2.0, 1.0], pv(&[1.0, 1.0]), 0.0).unwrap();
        let set = TaskSet::new(
            vec![Task::new(
                1,
                Backend::Quadratic {
                    model: q,
                    noise_std: 0.0,
                },
            )],
            FamilyKind::Quadratic,
            None,
        )
        .unwrap();
        let w = pv(&[1.0, -1.0]);
        let mut m = MemoryStore::new(1, 2);
        m.set(0, pv(&[0.5, 0.0]), 0).unwrap();
        let b = set.get(0).sample_batch(1, &mut RngStream::root(1)).unwrap();
        let tb = TermBatches { s2: b.clone(), s3: b };
        let est = meta_grad_estimate(&set, &[0], &w, &m, std::slice::from_ref(&tb), 0.1).unwrap();
        let (term, _) = task_meta_grad(set.get(0), &w, m.get(0).unwrap(), &tb, 0.1).unwrap();
        assert_eq!(est, term);
        // g = A u − b = (0, -1); (I − αA) g = (0, -0.9)
        assert!(est.max_abs_diff(&pv(&[0.0, -0.9])).unwrap() < 1e-15);
    }
}
