use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Real;
use crate::tasks::{Backend, Task};
use crate::vector::ParamVector;

/// Few-shot adaptation outcome on one held-out task.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationResult {
    /// Short description of the task's parameters.
    pub task: String,
    pub pre_adapt_error: f64,
    pub post_adapt_error: f64,
    pub steps: usize,
    pub shots: usize,
}

pub fn task_label<S: Real>(task: &Task<S>) -> String {
    match task.backend() {
        Backend::Sinewave { amplitude, phase, .. } => {
            format!("amplitude={:.16e};phase={:.16e}", amplitude.as_f64(), phase.as_f64())
        }
        Backend::Quadratic { model, .. } => format!("quadratic;L={:.16e}", model.lipschitz().as_f64()),
        Backend::Blob { class_counts, .. } => format!(
            "blob;counts={}",
            class_counts.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("/")
        ),
    }
}

/// For each task: draw `shots` support points and `test_points` query points,
/// run `steps` full-batch gradient steps from `w` on the support set, and
/// report the query loss before and after.
///
/// Errors use the training loss convention (mean of `½‖ŷ − y‖²`).
pub fn evaluate_adaptation<S: Real>(
    w: &ParamVector<S>,
    tasks: &[Task<S>],
    shots: usize,
    steps: usize,
    lr: S,
    test_points: usize,
    rng: &RngStream,
) -> Result<Vec<AdaptationResult>> {
    if shots == 0 || test_points == 0 {
        return Err(Error::config("adaptation needs shots >= 1 and test_points >= 1"));
    }
    tasks
        .iter()
        .enumerate()
        .map(|(j, task)| {
            let support = task.sample_batch(shots, &mut rng.substream("support", j as u64))?;
            let query = task.sample_batch(test_points, &mut rng.substream("query", j as u64))?;
            let pre = task.stochastic_loss(w, &query)?;
            let mut theta = w.clone();
            for _ in 0..steps {
                let g = task.stochastic_grad(&theta, &support)?;
                theta = theta.lin_comb(S::one(), &g, -lr)?;
            }
            theta.ensure_finite("adapted model")?;
            let post = if steps == 0 {
                pre
            } else {
                task.stochastic_loss(&theta, &query)?
            };
            Ok(AdaptationResult {
                task: task_label(task),
                pre_adapt_error: pre.as_f64(),
                post_adapt_error: post.as_f64(),
                steps,
                shots,
            })
        })
        .collect()
}

pub const ADAPT_CSV_HEADER: &str = "task,pre_adapt_error,post_adapt_error,steps,shots";

pub fn adaptation_csv(results: &[AdaptationResult]) -> String {
    let mut out = format!("{ADAPT_CSV_HEADER}\n");
    for r in results {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{},{}\n",
            r.task, r.pre_adapt_error, r.post_adapt_error, r.steps, r.shots
        ));
    }
    out
}
