//! Per-iteration diagnostics and their CSV form.
//!
//! Optional fields become empty cells. Reals use 17 significant digits so
//! values round-trip exactly through the text.

use std::fmt::Write as _;

use crate::config::Algorithm;

pub const CSV_HEADER: &str = "run_id,algorithm,seed,t,train_error,oracle_grad_norm,oracle_meta_value,tracking_error,drift,eta,beta,samples_used,comms,wall_ms";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Iteration count (centralized) or round index (federated).
    pub t: u64,
    pub train_error: Option<f64>,
    pub oracle_grad_norm: Option<f64>,
    pub oracle_meta_value: Option<f64>,
    pub tracking_error: Option<f64>,
    /// Mean squared local drift of a federated round.
    pub drift: Option<f64>,
    pub eta: Option<f64>,
    pub beta: Option<f64>,
    pub samples_used: u64,
    pub comms: u64,
    pub wall_ms: Option<f64>,
}

impl MetricsRecord {
    pub fn new(run_id: impl Into<String>, algorithm: Algorithm, seed: u64, t: u64) -> Self {
        Self {
            run_id: run_id.into(),
            algorithm,
            seed,
            t,
            train_error: None,
            oracle_grad_norm: None,
            oracle_meta_value: None,
            tracking_error: None,
            drift: None,
            eta: None,
            beta: None,
            samples_used: 0,
            comms: 0,
            wall_ms: None,
        }
    }

    pub fn csv_row(&self) -> String {
        let o = |x: Option<f64>| x.map(fmt_real).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.algorithm,
            self.seed,
            self.t,
            o(self.train_error),
            o(self.oracle_grad_norm),
            o(self.oracle_meta_value),
            o(self.tracking_error),
            o(self.drift),
            o(self.eta),
            o(self.beta),
            self.samples_used,
            self.comms,
            o(self.wall_ms),
        )
    }
}

/// `{:.16e}`: one leading digit plus sixteen decimals.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header plus one LF-terminated line per record.
pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

/// Sample mean and (n − 1)-normalized standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
