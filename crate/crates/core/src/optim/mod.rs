//! Centralized optimizers: the mini-batch baseline, MOML v1 and MOML v2.

mod estimator;
mod memory;
mod runner;
mod step;

pub use estimator::{
    inner_adapt, lhat, lhat_from_norms, meta_grad_estimate, meta_grad_terms, moml_v1_update_memory,
    moml_v2_update_memory, task_meta_grad, TermBatches,
};
pub use memory::MemoryStore;
pub use runner::{default_run_id, init_state, run_optimizer, run_optimizer_traced, RunOutput};
pub use step::{bsgd_step, moml_v1_step, moml_v2_step, v2_beta, OptState, StepOutcome, StepParams};
