//! Experiment orchestration: task-set construction from a config,
//! few-shot evaluation, seed sweeps, comparisons and the verification suite.

mod adapt;
mod experiment;
mod verify;

pub use adapt::{adaptation_csv, evaluate_adaptation, task_label, AdaptationResult, ADAPT_CSV_HEADER};
pub use experiment::{
    compare_algorithms, run_experiment, run_single, tune_eta, Comparison, ComparisonRow, ExperimentSummary, SeedRun,
    TuneResult, SUMMARY_CSV_HEADER,
};
pub use verify::{verify_suite, Check};

use crate::config::{RunConfig, TaskFamily};
use crate::error::Result;
use crate::rng::RngStream;
use crate::tasks::{
    gen_quad_tasks_with, gen_sinewave_tasks, gen_unseen_sinewave, BlobLayout, BlobWorld, QuadSpec, Task, TaskSet,
};

pub use crate::config::load_config;

/// Held-out tasks used for step-size selection or for the reported error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Validation,
    Test,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Validation => "val_tasks",
            Split::Test => "test_tasks",
        }
    }
}

fn quad_spec(cfg: &RunConfig, n: usize) -> QuadSpec {
    QuadSpec {
        noise_std: cfg.noise_std,
        optimum_radius: cfg.optimum_radius,
        optimum_center: cfg.optimum_center,
        ..QuadSpec::new(n, cfg.dim, cfg.spread)
    }
}

fn blob_world(cfg: &RunConfig) -> Result<(BlobWorld, BlobLayout)> {
    let root = RngStream::root(cfg.taskset_seed);
    let world = BlobWorld::generate(cfg.dim, cfg.classes, &mut root.substream("blob_world", 0))?;
    let layout = BlobLayout::new(cfg.n_tasks, cfg.classes, &mut root.substream("blob_layout", 0))?;
    Ok((world, layout))
}

/// Training tasks, a function of `taskset_seed` and the family settings only.
pub fn build_taskset(cfg: &RunConfig) -> Result<TaskSet<f64>> {
    let root = RngStream::root(cfg.taskset_seed);
    match cfg.family {
        TaskFamily::Quadratic => gen_quad_tasks_with(&quad_spec(cfg, cfg.n_tasks), &mut root.substream("taskset", 0)),
        TaskFamily::Sinewave => gen_sinewave_tasks(&cfg.hidden),
        TaskFamily::Blob => {
            let (world, layout) = blob_world(cfg)?;
            world.clients(&layout, cfg.blob_a, &cfg.hidden, &mut root.substream("blob_samples", 0))
        }
    }
}

/// Held-out tasks for `seed`: fresh sinewaves or quadratics from the
/// training distribution, or the blob clients' held-out split (count
/// `blob_test_a`) over the same world and layout.
pub fn heldout_tasks(cfg: &RunConfig, seed: u64, split: Split) -> Result<Vec<Task<f64>>> {
    let root = RngStream::root(seed).substream(split.tag(), 0);
    match cfg.family {
        TaskFamily::Sinewave => (0..cfg.adapt_tasks)
            .map(|j| gen_unseen_sinewave(&mut root.substream("task", j as u64), &cfg.hidden))
            .collect(),
        TaskFamily::Quadratic => Ok(gen_quad_tasks_with(
            &quad_spec(cfg, cfg.adapt_tasks.max(1)),
            &mut root.substream("taskset", 0),
        )?
        .tasks()
        .to_vec()),
        TaskFamily::Blob => {
            let (world, layout) = blob_world(cfg)?;
            let samples = RngStream::root(cfg.taskset_seed).substream(split.tag(), seed);
            Ok(world
                .clients(
                    &layout,
                    cfg.blob_test_a,
                    &cfg.hidden,
                    &mut samples.substream("blob_samples", 0),
                )?
                .tasks()
                .to_vec())
        }
    }
}
