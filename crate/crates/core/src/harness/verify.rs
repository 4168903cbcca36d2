//! Fast self-checks behind `metamem verify`.

use crate::config::{Algorithm, RunConfig};
use crate::error::Result;
use crate::fedsim::run_federated;
use crate::metrics::to_csv;
use crate::models::{hvp_fd, MlpModel, QuadraticModel};
use crate::optim::{run_optimizer, run_optimizer_traced};
use crate::oracle::OracleHandle;
use crate::rng::RngStream;
use crate::sampling::sample_without_replacement;
use crate::tasks::{gen_quad_tasks, Batch};
use crate::vector::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match f() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn quad_cfg(algorithm: Algorithm, n: usize, b: usize, t: usize) -> RunConfig {
    RunConfig {
        algorithm,
        n_tasks: n,
        tasks_per_iter: b,
        iterations: t,
        alpha: 0.1,
        eta: 0.05,
        dim: 4,
        ..RunConfig::default()
    }
}

fn max_rel(a: &ParamVector<f64>, b: &ParamVector<f64>) -> f64 {
    a.max_abs_diff(b).unwrap() / b.norm_inf().max(1e-12)
}

pub fn verify_suite() -> Vec<Check> {
    vec![
        check("meta-gradient matches finite differences", || {
            let mut worst: f64 = 0.0;
            for s in 0..10 {
                let mut rng = RngStream::root(s);
                let set = gen_quad_tasks::<f64>(2 + s as usize % 6, 2 + s as usize % 7, 5.0, &mut rng)?;
                let h = OracleHandle::analytic(&set, 0.1)?;
                let w = set.initial_params(&mut rng).add(&ParamVector::filled(set.dim(), 0.7))?;
                let fd = h.fd_meta_grad(&w, OracleHandle::<f64>::default_fd_eps(&w))?;
                worst = worst.max(max_rel(&fd, &h.exact_meta_grad(&w)?));
            }
            Ok((worst < 1e-6, format!("max relative error {worst:.3e}")))
        }),
        check("moml_v1 with beta=1 reproduces bsgd", || {
            let set = gen_quad_tasks::<f64>(8, 4, 4.0, &mut RngStream::root(3))?;
            let a = run_optimizer(
                &RunConfig {
                    beta: 1.0,
                    ..quad_cfg(Algorithm::MomlV1, 8, 3, 100)
                },
                &set,
            )?;
            let b = run_optimizer(&quad_cfg(Algorithm::Bsgd, 8, 3, 100), &set)?;
            let same = a.iter().zip(&b).all(|(x, y)| x.oracle_grad_norm == y.oracle_grad_norm);
            Ok((same, "100 iterations compared".into()))
        }),
        check("per_fedavg equals local_moml with beta=1", || {
            let set = gen_quad_tasks::<f64>(6, 3, 4.0, &mut RngStream::root(5))?;
            let base = RunConfig {
                n_tasks: 6,
                tasks_per_iter: 2,
                rounds: 20,
                dim: 3,
                alpha: 0.1,
                eta: 0.05,
                ..RunConfig::default()
            };
            let a = run_federated(
                &RunConfig {
                    algorithm: Algorithm::PerFedavg,
                    ..base.clone()
                },
                &set,
            )?;
            let b = run_federated(
                &RunConfig {
                    algorithm: Algorithm::LocalMoml,
                    beta: 1.0,
                    ..base
                },
                &set,
            )?;
            Ok((a == b, "20 rounds compared".into()))
        }),
        check("backprop matches finite differences", || {
            let model = MlpModel::new(vec![1, 8, 8, 1])?;
            let mut worst: f64 = 0.0;
            for s in 0..10 {
                let mut rng = RngStream::root(100 + s);
                let w: ParamVector<f64> = model.init(&mut rng);
                let batch = Batch::new(1, 1, vec![0.37 + s as f64 * 0.1], vec![-0.4])?;
                let g = model.loss_grad(&w, batch.samples())?.1;
                let mut fd = Vec::with_capacity(w.len());
                for k in 0..w.len() {
                    let mut plus = w.clone().into_vec();
                    let mut minus = plus.clone();
                    plus[k] += 1e-5;
                    minus[k] -= 1e-5;
                    let lp = model.loss(&ParamVector::from_vec(plus)?, batch.samples())?;
                    let lm = model.loss(&ParamVector::from_vec(minus)?, batch.samples())?;
                    fd.push((lp - lm) / 2e-5);
                }
                worst = worst.max(max_rel(&ParamVector::from_vec(fd)?, &g));
            }
            Ok((worst < 1e-6, format!("max relative error {worst:.3e}")))
        }),
        check("finite-difference HVP is exact on quadratics", || {
            let set = gen_quad_tasks::<f64>(1, 5, 6.0, &mut RngStream::root(9))?;
            let q: &QuadraticModel<f64> = set.get(0).quadratic().unwrap();
            let w = ParamVector::filled(5, 0.3);
            let v = ParamVector::from_f64_slice(&[1.0, -2.0, 0.5, 0.0, 3.0])?;
            let fd = hvp_fd(|x| q.grad(x), &w, &v, 1e-4)?;
            let err = fd.max_abs_diff(&q.hvp(&v)?)?;
            Ok((err < 1e-6, format!("max abs error {err:.3e}")))
        }),
        check("full-batch moml_v1 follows exact gradient descent", || {
            let set = gen_quad_tasks::<f64>(5, 4, 4.0, &mut RngStream::root(11))?;
            let cfg = RunConfig {
                beta: 1.0,
                ..quad_cfg(Algorithm::MomlV1, 5, 5, 100)
            };
            let mut traj = Vec::new();
            run_optimizer_traced(&cfg, &set, |s, _| traj.push(s.w.clone()))?;
            let h = OracleHandle::analytic(&set, 0.1)?;
            let reference = h.exact_gd_reference(&traj[0], 0.05, 100)?;
            let err = traj
                .iter()
                .zip(&reference)
                .map(|(a, b)| a.max_abs_diff(b).unwrap())
                .fold(0.0, f64::max);
            Ok((err < 1e-12, format!("max deviation {err:.3e}")))
        }),
        check("task inclusion frequency is B/n", || {
            let root = RngStream::root(17);
            let mut counts = [0usize; 25];
            let draws = 20_000;
            for t in 0..draws {
                for i in sample_without_replacement(&mut root.substream("tasks", t), 25, 3)? {
                    counts[i] += 1;
                }
            }
            let worst = counts
                .iter()
                .map(|&c| (c as f64 / draws as f64 - 0.12).abs())
                .fold(0.0, f64::max);
            Ok((worst < 0.015, format!("max deviation {worst:.4}")))
        }),
        check("replay is byte-identical", || {
            let set = gen_quad_tasks::<f64>(6, 3, 4.0, &mut RngStream::root(2))?;
            let cfg = RunConfig {
                noise_std: 0.5,
                dim: 3,
                ..quad_cfg(Algorithm::MomlV1, 6, 2, 50)
            };
            let a = to_csv(&run_optimizer(&cfg, &set)?);
            let b = to_csv(&run_optimizer(&cfg, &set)?);
            Ok((a == b, format!("{} bytes", a.len())))
        }),
    ]
}
