//! CSV and summary writers.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which
//! round-trips every `f64` exactly.

use std::fmt::Write as _;

use crate::algorithm::{IterationRecord, RunResult};

pub const BASE_COLUMNS: [&str; 11] = [
    "iteration",
    "j",
    "alpha",
    "beta",
    "adv_policy",
    "adv_model",
    "bound_value",
    "d_e_pi",
    "d_inf_pi",
    "d_e_p",
    "d_inf_p",
];

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn header(n_omega: usize) -> String {
    let mut cols: Vec<String> = BASE_COLUMNS.iter().map(|c| c.to_string()).collect();
    cols.extend((0..n_omega).map(|i| format!("omega_{i}")));
    cols.push("target_policy_id".into());
    cols.push("target_model_id".into());
    cols.join(",")
}

fn row(r: &IterationRecord) -> String {
    let mut out = r.iteration.to_string();
    for x in [
        r.j,
        r.alpha,
        r.beta,
        r.adv_policy,
        r.adv_model,
        r.bound_value,
        r.d_e_pi,
        r.d_inf_pi,
        r.d_e_p,
        r.d_inf_p,
    ] {
        out.push(',');
        out.push_str(&float(x));
    }
    for w in r.omega.iter().flatten() {
        out.push(',');
        out.push_str(&float(*w));
    }
    let _ = write!(out, ",{},{}", r.target_policy_id, r.target_model_id);
    out
}

/// One header line and one line per record.
pub fn iterations_csv(result: &RunResult) -> String {
    let n_omega = result.omega.as_ref().map_or(0, Vec::len);
    let mut out = header(n_omega);
    out.push('\n');
    for r in &result.records {
        out.push_str(&row(r));
        out.push('\n');
    }
    out
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub environment: String,
    pub strategy: String,
    pub target_mode: String,
    pub final_j: f64,
    /// Rows in `iterations.csv`.
    pub iterations: usize,
    pub updates: usize,
    pub converged: bool,
    pub truncated: bool,
    pub omega: Option<Vec<f64>>,
}

impl RunSummary {
    pub fn render(&self) -> String {
        let omega = match &self.omega {
            Some(w) => format!(
                "[{}]",
                w.iter().map(|x| float(*x)).collect::<Vec<_>>().join(", ")
            ),
            None => "none".into(),
        };
        format!(
            "environment = {}\nstrategy = {}\ntarget_mode = {}\nfinal_j = {}\niterations = {}\nupdates = {}\nconverged = {}\ntruncated = {}\nomega = {}\n",
            self.environment,
            self.strategy,
            self.target_mode,
            float(self.final_j),
            self.iterations,
            self.updates,
            self.converged,
            self.truncated,
            omega
        )
    }
}
