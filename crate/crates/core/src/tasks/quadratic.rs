use rand::Rng;
use rand_distr::StandardNormal;

use super::{Backend, FamilyKind, Task, TaskSet};
use crate::error::{Error, Result};
use crate::models::{matmul, QuadraticModel};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::vector::ParamVector;

/// Generator settings for the quadratic oracle testbed.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSpec {
    pub n: usize,
    pub d: usize,
    /// Eigenvalues of each `A_i` are drawn from `[1, spread]`.
    pub spread: f64,
    /// Per-coordinate std of the additive gradient noise per sample.
    pub noise_std: f64,
    /// Task optima are drawn uniformly from `center ± radius` per coordinate.
    pub optimum_radius: f64,
    pub optimum_center: f64,
}

impl QuadSpec {
    pub fn new(n: usize, d: usize, spread: f64) -> Self {
        Self {
            n,
            d,
            spread,
            noise_std: 0.0,
            optimum_radius: 1.0,
            optimum_center: 0.0,
        }
    }
}

/// `n` random quadratic tasks in `d` dimensions with curvature in `[1, spread]`.
pub fn gen_quad_tasks<S: Real>(n: usize, d: usize, spread: f64, rng: &mut RngStream) -> Result<TaskSet<S>> {
    gen_quad_tasks_with(&QuadSpec::new(n, d, spread), rng)
}

pub fn gen_quad_tasks_with<S: Real>(spec: &QuadSpec, rng: &mut RngStream) -> Result<TaskSet<S>> {
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::config("quadratic task set needs n, d >= 1"));
    }
    if !(spec.spread >= 1.0) {
        return Err(Error::config(format!("spread={} must be >= 1", spec.spread)));
    }
    let d = spec.d;
    let mut tasks = Vec::with_capacity(spec.n);
    let mut lipschitz = S::zero();
    for i in 0..spec.n {
        let mut r = rng.substream("quad_task", i as u64);
        let eig: Vec<f64> = (0..d).map(|_| r.random_range(1.0..=spec.spread)).collect();
        let q = random_orthogonal(d, &mut r);
        // A = Q diag(eig) Qᵀ
        let mut ql = q.clone();
        for row in 0..d {
            for col in 0..d {
                ql[row * d + col] *= eig[col];
            }
        }
        let qt: Vec<f64> = (0..d * d).map(|k| q[(k % d) * d + k / d]).collect();
        let mut a = matmul(&ql, &qt, d);
        for row in 0..d {
            for col in (row + 1)..d {
                let m = 0.5 * (a[row * d + col] + a[col * d + row]);
                a[row * d + col] = m;
                a[col * d + row] = m;
            }
        }
        let opt: Vec<f64> = (0..d)
            .map(|_| spec.optimum_center + r.random_range(-spec.optimum_radius..=spec.optimum_radius))
            .collect();
        let b: Vec<f64> = (0..d)
            .map(|row| (0..d).map(|col| a[row * d + col] * opt[col]).sum())
            .collect();
        let c: f64 = 0.5 * b.iter().zip(&opt).map(|(x, y)| x * y).sum::<f64>();
        let model = QuadraticModel::new(
            a.iter().map(|&x| S::lit(x)).collect(),
            ParamVector::from_f64_slice(&b)?,
            S::lit(c),
        )?;
        lipschitz = lipschitz.max(model.lipschitz());
        tasks.push(Task::new(
            i + 1,
            Backend::Quadratic {
                model,
                noise_std: S::lit(spec.noise_std),
            },
        ));
    }
    TaskSet::new(tasks, FamilyKind::Quadratic, Some(lipschitz))
}

/// Gram-Schmidt orthonormalization of a Gaussian matrix (columns of `Q`).
fn random_orthogonal(d: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let mut cols: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let mut ok = true;
        for j in 0..d {
            for k in 0..j {
                let proj: f64 = cols[j].iter().zip(&cols[k]).map(|(a, b)| a * b).sum();
                let ck = cols[k].clone();
                cols[j].iter_mut().zip(&ck).for_each(|(a, b)| *a -= proj * b);
            }
            let norm = cols[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            cols[j].iter_mut().for_each(|x| *x /= norm);
        }
        if ok {
            let mut q = vec![0.0; d * d];
            for (j, col) in cols.iter().enumerate() {
                for (i, &x) in col.iter().enumerate() {
                    q[i * d + j] = x;
                }
            }
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_spread_single_task_is_identity() {
        let set = gen_quad_tasks::<f64>(1, 3, 1.0, &mut RngStream::root(0)).unwrap();
        let q = set.get(0).quadratic().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((q.matrix()[i * 3 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn global_lipschitz_bounds_every_eigenvalue() {
        let set = gen_quad_tasks::<f64>(8, 4, 10.0, &mut RngStream::root(3)).unwrap();
        let l = set.lipschitz().unwrap();
        for t in set.tasks() {
            for &e in t.quadratic().unwrap().eigenvalues() {
                assert!(e <= l);
                assert!((1.0 - 1e-9..=10.0 + 1e-9).contains(&e));
            }
        }
    }

    #[test]
    fn minimizers_have_zero_gradient() {
        let set = gen_quad_tasks::<f64>(8, 4, 5.0, &mut RngStream::root(5)).unwrap();
        for t in set.tasks() {
            let q = t.quadratic().unwrap();
            let w = q.minimizer().unwrap();
            assert!(q.grad(&w).unwrap().norm() < 1e-10);
        }
    }

    #[test]
    fn spread_below_one_rejected() {
        assert!(gen_quad_tasks::<f64>(2, 2, 0.5, &mut RngStream::root(0)).is_err());
    }
}
