//! Task-batch sampling laws.
//!
//! Indices are zero-based positions into a [`TaskSet`](crate::tasks::TaskSet).

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Uniformly random size-`b` subset of `0..n`, returned sorted.
///
/// When `b == n` the full set is returned without consuming randomness.
pub fn sample_without_replacement(rng: &mut RngStream, n: usize, b: usize) -> Result<Vec<usize>> {
    if b == 0 || b > n {
        return Err(Error::config(format!(
            "task batch size B={b} must satisfy 1 <= B <= n={n}"
        )));
    }
    if b == n {
        return Ok((0..n).collect());
    }
    let mut idx = rand::seq::index::sample(rng, n, b).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Independent Bernoulli inclusion: index `i` is kept with probability `p[i]`.
pub fn bernoulli_subset(rng: &mut RngStream, p: &[f64]) -> Result<Vec<usize>> {
    validate_probabilities(p)?;
    Ok(p.iter()
        .enumerate()
        .filter_map(|(i, &pi)| {
            let u: f64 = rng.random();
            (u < pi).then_some(i)
        })
        .collect())
}

pub fn validate_probabilities(p: &[f64]) -> Result<()> {
    match p.iter().position(|&pi| !(pi > 0.0 && pi <= 1.0)) {
        Some(i) => Err(Error::config(format!(
            "selection probability p[{i}]={} must lie in (0,1]",
            p[i]
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_batch_is_forced() {
        let mut rng = RngStream::root(0);
        let probe = rng.clone();
        assert_eq!(sample_without_replacement(&mut rng, 5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        let (mut a, mut b) = (rng, probe);
        assert_eq!(a.random::<u64>(), b.random::<u64>(), "no draws consumed");
    }

    #[test]
    fn oversized_batch_rejected() {
        let mut rng = RngStream::root(0);
        assert!(matches!(
            sample_without_replacement(&mut rng, 3, 4),
            Err(Error::InvalidConfig(_))
        ));
        assert!(sample_without_replacement(&mut rng, 3, 0).is_err());
    }

    #[test]
    fn samples_are_distinct_and_sized() {
        let mut rng = RngStream::root(11);
        for _ in 0..200 {
            let s = sample_without_replacement(&mut rng, 25, 3).unwrap();
            assert_eq!(s.len(), 3);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
            assert!(s.iter().all(|&i| i < 25));
        }
    }

    #[test]
    fn inclusion_frequency_matches_b_over_n() {
        let root = RngStream::root(3);
        let mut counts = [0usize; 25];
        let iters = 100_000;
        for t in 0..iters {
            let mut r = root.substream("tasks", t);
            for i in sample_without_replacement(&mut r, 25, 3).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let f = c as f64 / iters as f64;
            assert!((f - 0.12).abs() < 0.01, "frequency {f}");
        }
    }

    #[test]
    fn bernoulli_all_ones_is_full_set() {
        let mut rng = RngStream::root(5);
        for _ in 0..50 {
            assert_eq!(
                bernoulli_subset(&mut rng, &[1.0; 6]).unwrap(),
                (0..6).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn bernoulli_rates() {
        let mut rng = RngStream::root(9);
        let p = vec![0.3; 10];
        let mut counts = [0usize; 10];
        let iters = 100_000;
        for _ in 0..iters {
            for i in bernoulli_subset(&mut rng, &p).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / iters as f64 - 0.3).abs() < 0.01);
        }
    }

    #[test]
    fn bernoulli_certain_index_always_present() {
        let mut rng = RngStream::root(2);
        for _ in 0..10_000 {
            assert!(bernoulli_subset(&mut rng, &[1.0, 0.5]).unwrap().contains(&0));
        }
    }

    #[test]
    fn bernoulli_rejects_bad_probabilities() {
        let mut rng = RngStream::root(2);
        assert!(bernoulli_subset(&mut rng, &[0.5, 0.0]).is_err());
        assert!(bernoulli_subset(&mut rng, &[1.5]).is_err());
        assert!(bernoulli_subset(&mut rng, &[f64::NAN]).is_err());
    }
}
