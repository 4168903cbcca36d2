use std::f64::consts::PI;

use rand::Rng;

use super::{Backend, FamilyKind, Task, TaskSet};
use crate::error::Result;
use crate::models::MlpModel;
use crate::rng::RngStream;
use crate::scalar::Real;

pub const SINE_X_MIN: f64 = -5.0;
pub const SINE_X_MAX: f64 = 5.0;

fn sine_model(hidden: &[usize]) -> Result<MlpModel> {
    let mut sizes = vec![1];
    sizes.extend_from_slice(hidden);
    sizes.push(1);
    MlpModel::new(sizes)
}

/// The 25 training tasks: amplitude in {1..5} × phase in {π/5, …, π}.
///
/// Ordered amplitude-major, so task id `5(a-1) + i` has amplitude `a` and
/// phase `iπ/5`.
pub fn gen_sinewave_tasks<S: Real>(hidden: &[usize]) -> Result<TaskSet<S>> {
    let model = sine_model(hidden)?;
    let mut tasks = Vec::with_capacity(25);
    for a in 1..=5 {
        for i in 1..=5 {
            tasks.push(Task::new(
                tasks.len() + 1,
                Backend::Sinewave {
                    amplitude: S::lit(a as f64),
                    phase: S::lit(i as f64 * PI / 5.0),
                    model: model.clone(),
                },
            ));
        }
    }
    TaskSet::new(tasks, FamilyKind::Sinewave, None)
}

/// Held-out task with `A ~ Unif(1, 5)` and `φ ~ Unif(π/5, π)`.
pub fn gen_unseen_sinewave<S: Real>(rng: &mut RngStream, hidden: &[usize]) -> Result<Task<S>> {
    let amplitude = rng.random_range(1.0..=5.0);
    let phase = rng.random_range(PI / 5.0..=PI);
    Ok(Task::new(
        1,
        Backend::Sinewave {
            amplitude: S::lit(amplitude),
            phase: S::lit(phase),
            model: sine_model(hidden)?,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(t: &Task<f64>) -> (f64, f64) {
        match t.backend() {
            Backend::Sinewave { amplitude, phase, .. } => (*amplitude, *phase),
            _ => unreachable!(),
        }
    }

    #[test]
    fn grid_of_25_tasks() {
        let set = gen_sinewave_tasks::<f64>(&[40, 40]).unwrap();
        assert_eq!(set.len(), 25);
        assert_eq!(set.dim(), 1761);
        // A=1, φ=π: sin(π) = 0 at x = 0.
        assert!(set.get(4).sine_target(0.0).unwrap().abs() < 1e-15);
        // A=3, φ=π/5.
        let t = set.get(10);
        assert_eq!(params(t), (3.0, PI / 5.0));
        assert!((t.sine_target(0.0).unwrap() - 1.7634).abs() < 1e-4);
    }

    #[test]
    fn unseen_draws_in_range_with_correct_mean() {
        let mut rng = RngStream::root(17);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let (a, p) = params(&gen_unseen_sinewave::<f64>(&mut rng, &[4]).unwrap());
            assert!((1.0..=5.0).contains(&a));
            assert!((PI / 5.0..=PI).contains(&p));
            sum += a;
        }
        assert!((sum / 10_000.0 - 3.0).abs() < 0.05);
    }

    #[test]
    fn batches_are_noise_free_and_in_range() {
        let set = gen_sinewave_tasks::<f64>(&[4]).unwrap();
        let t = set.get(7);
        let b = t.sample_batch(1, &mut RngStream::root(1)).unwrap();
        let x = b.input(0)[0];
        assert!((-5.0..=5.0).contains(&x));
        assert_eq!(b.target(0)[0], t.sine_target(x).unwrap());

        let r = RngStream::root(9).substream("s1", 7);
        assert_eq!(
            t.sample_batch(10, &mut r.clone()).unwrap(),
            t.sample_batch(10, &mut r.clone()).unwrap()
        );

        let mut rng = RngStream::root(2);
        let big = t.sample_batch(100_000, &mut rng).unwrap();
        let mean: f64 = (0..big.len()).map(|i| big.input(i)[0]).sum::<f64>() / big.len() as f64;
        assert!(mean.abs() < 0.03);
    }
}
