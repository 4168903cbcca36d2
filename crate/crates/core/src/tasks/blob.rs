//! Heterogeneous classification clients over shared Gaussian blobs.
//!
//! Classes are split into a first and a second half. The first `n/2` clients
//! each hold `a` samples of every first-half class. Each of the remaining
//! clients holds `a/2` samples of a single first-half class and `2a` samples
//! of a single second-half class. Targets are one-hot and fit with the MSE
//! loss of the MLP backend.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Backend, Batch, FamilyKind, Task, TaskSet};
use crate::error::{Error, Result};
use crate::models::MlpModel;
use crate::rng::RngStream;
use crate::scalar::Real;

/// Class-conditional Gaussians `N(mean_c, I)` shared by every client.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobWorld {
    pub dim: usize,
    pub means: Vec<Vec<f64>>,
}

/// Which classes each client draws from; fixed across train/test splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlobLayout {
    /// For skewed clients: `(first-half class, second-half class)`; `None` for balanced.
    pub skew: Vec<Option<(usize, usize)>>,
    pub classes: usize,
}

const MEAN_SCALE: f64 = 2.0;

impl BlobWorld {
    pub fn generate(dim: usize, classes: usize, rng: &mut RngStream) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::config("blob world needs dim, classes >= 1"));
        }
        let means = (0..classes)
            .map(|_| {
                (0..dim)
                    .map(|_| MEAN_SCALE * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Ok(Self { dim, means })
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    /// Materializes one task per client with `a` as the per-class base count.
    pub fn clients<S: Real>(
        &self,
        layout: &BlobLayout,
        a: usize,
        hidden: &[usize],
        rng: &mut RngStream,
    ) -> Result<TaskSet<S>> {
        if a < 2 || !a.is_multiple_of(2) {
            return Err(Error::config(format!("blob count a={a} must be even and >= 2")));
        }
        if layout.classes != self.classes() {
            return Err(Error::config("layout and world disagree on class count"));
        }
        let classes = self.classes();
        let mut sizes = vec![self.dim];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        let model = MlpModel::new(sizes)?;
        let mut tasks = Vec::with_capacity(layout.skew.len());
        for (j, skew) in layout.skew.iter().enumerate() {
            let mut counts = vec![0usize; classes];
            match skew {
                None => counts[..classes / 2].iter_mut().for_each(|c| *c = a),
                Some((lo, hi)) => {
                    counts[*lo] += a / 2;
                    counts[*hi] += 2 * a;
                }
            }
            let mut r = rng.substream("blob_client", j as u64);
            let mut inputs = Vec::new();
            let mut targets = Vec::new();
            for (class, &count) in counts.iter().enumerate() {
                for _ in 0..count {
                    for &m in &self.means[class] {
                        inputs.push(S::lit(m + r.sample::<f64, _>(StandardNormal)));
                    }
                    targets.extend((0..classes).map(|k| if k == class { S::one() } else { S::zero() }));
                }
            }
            let data = Batch::new(self.dim, classes, inputs, targets)?;
            tasks.push(Task::new(
                j + 1,
                Backend::Blob {
                    model: model.clone(),
                    data: Arc::new(data),
                    class_counts: counts,
                },
            ));
        }
        TaskSet::new(tasks, FamilyKind::Blob, None)
    }
}

impl BlobLayout {
    /// Skewed clients cycle through the classes of each half from a random
    /// offset, so every class is used once `n/2 >= classes/2`.
    pub fn new(n: usize, classes: usize, rng: &mut RngStream) -> Result<Self> {
        if n == 0 || !n.is_multiple_of(2) || classes == 0 || !classes.is_multiple_of(2) {
            return Err(Error::config(format!(
                "blob clients need even n and even classes (got n={n}, classes={classes})"
            )));
        }
        let half = classes / 2;
        let off_lo = rng.random_range(0..half);
        let off_hi = rng.random_range(0..half);
        let skew = (0..n)
            .map(|j| {
                (j >= n / 2).then(|| {
                    let k = j - n / 2;
                    ((off_lo + k) % half, half + (off_hi + k) % half)
                })
            })
            .collect();
        Ok(Self { skew, classes })
    }
}

/// Train split (count `a`) over a freshly generated world and layout.
pub fn gen_blob_clients<S: Real>(
    n: usize,
    d: usize,
    classes: usize,
    a: usize,
    hidden: &[usize],
    rng: &mut RngStream,
) -> Result<TaskSet<S>> {
    let world = BlobWorld::generate(d, classes, &mut rng.substream("blob_world", 0))?;
    let layout = BlobLayout::new(n, classes, &mut rng.substream("blob_layout", 0))?;
    world.clients(&layout, a, hidden, &mut rng.substream("blob_samples", 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(t: &Task<f64>) -> Vec<usize> {
        match t.backend() {
            Backend::Blob { class_counts, .. } => class_counts.clone(),
            _ => unreachable!(),
        }
    }

    #[test]
    fn two_client_instance() {
        let set = gen_blob_clients::<f64>(2, 3, 2, 4, &[5], &mut RngStream::root(0)).unwrap();
        assert_eq!(counts(set.get(0)), vec![4, 0]);
        assert_eq!(counts(set.get(1)), vec![2, 8]);
        assert_eq!(set.get(1).eval_set().unwrap().len(), 10);
    }

    #[test]
    fn sizes_follow_the_scheme_and_cover_all_classes() {
        let (n, classes, a) = (50, 10, 68);
        let set = gen_blob_clients::<f64>(n, 4, classes, a, &[8], &mut RngStream::root(4)).unwrap();
        let mut pooled = vec![0usize; classes];
        for (j, t) in set.tasks().iter().enumerate() {
            let c = counts(t);
            let size: usize = c.iter().sum();
            if j < n / 2 {
                assert_eq!(size, a * classes / 2);
            } else {
                assert_eq!(size, a / 2 + 2 * a);
            }
            assert_eq!(t.eval_set().unwrap().len(), size);
            pooled.iter_mut().zip(&c).for_each(|(p, x)| *p += x);
        }
        assert!(pooled.iter().all(|&c| c >= 1), "{pooled:?}");
    }

    #[test]
    fn invalid_counts_rejected() {
        let mut rng = RngStream::root(0);
        assert!(gen_blob_clients::<f64>(3, 2, 2, 4, &[4], &mut rng).is_err());
        assert!(gen_blob_clients::<f64>(2, 2, 3, 4, &[4], &mut rng).is_err());
        assert!(gen_blob_clients::<f64>(2, 2, 2, 3, &[4], &mut rng).is_err());
    }

    #[test]
    fn test_split_shares_layout() {
        let rng = RngStream::root(8);
        let world = BlobWorld::generate(3, 4, &mut rng.substream("w", 0)).unwrap();
        let layout = BlobLayout::new(6, 4, &mut rng.substream("l", 0)).unwrap();
        let train = world
            .clients::<f64>(&layout, 68, &[4], &mut rng.substream("tr", 0))
            .unwrap();
        let test = world
            .clients::<f64>(&layout, 34, &[4], &mut rng.substream("te", 0))
            .unwrap();
        for (a, b) in train.tasks().iter().zip(test.tasks()) {
            let (ca, cb) = (counts(a), counts(b));
            for (x, y) in ca.iter().zip(&cb) {
                assert_eq!(*x, 2 * *y);
            }
        }
    }
}
