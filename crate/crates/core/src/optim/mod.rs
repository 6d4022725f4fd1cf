//! Optimization drivers: RQMC-SQN and first-order baselines.

mod first_order;
mod sqn;
pub mod theory;

use std::io::Write;
use std::time::Instant;

pub use first_order::{run_adagrad, run_adam, run_first_order, run_sgd, FirstOrderConfig, FirstOrderRule};
pub use sqn::{run_sqn, run_sqn_with, OptState, SqnConfig};

use crate::error::Result;
use crate::estimators::norm;

pub const CSV_HEADER: &str = "k,wall_ms,elbo,grad_norm,step,param_err";

/// One iteration. `elbo` and `grad_norm` refer to the batch estimate at the
/// pre-update iterate; `param_err` to the post-update iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub k: usize,
    pub wall_ms: f64,
    pub elbo: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub param_err: Option<f64>,
    /// Cumulative per-sample gradient evaluations; one Hessian-vector product
    /// counts as two.
    pub grad_evals: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    pub insertions: usize,
    pub rejected_pairs: usize,
    pub line_search_fallbacks: usize,
    /// Extremes of the spectrum of every `H_k` used, identity included.
    pub h_bounds: Option<(f64, f64)>,
    /// `iterates[k]` is the parameter after `k` updates.
    pub iterates: Vec<Vec<f64>>,
    pub aborted: Option<String>,
}

impl RunRecord {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.rows {
            let err = r.param_err.map(|e| e.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{}", r.k, r.wall_ms, r.elbo, r.grad_norm, r.step, err)?;
        }
        Ok(())
    }

    /// Same rows with the wall-clock column zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> RunRecord {
        let mut out = self.clone();
        out.rows.iter_mut().for_each(|r| r.wall_ms = 0.0);
        out
    }

    pub fn final_grad_evals(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.grad_evals)
    }
}

/// What to retain beyond the per-iteration rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_iterates: bool,
    pub track_spectrum: bool,
}

/// Seed for an independent stream derived from a run seed (SplitMix64
/// finalizer).
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Recorder {
    start: Instant,
    optimum: Option<Vec<f64>>,
    record: RunRecord,
    keep_iterates: bool,
}

impl Recorder {
    fn new(optimum: Option<Vec<f64>>, opts: &RunOptions, theta0: &[f64]) -> Self {
        let mut record = RunRecord::default();
        if opts.record_iterates {
            record.iterates.push(theta0.to_vec());
        }
        Recorder {
            start: Instant::now(),
            optimum,
            record,
            keep_iterates: opts.record_iterates,
        }
    }

    fn push(&mut self, k: usize, elbo: f64, grad: &[f64], step: f64, theta: &[f64], grad_evals: u64) {
        let param_err = self.optimum.as_ref().map(|opt| {
            let diff: Vec<f64> = theta.iter().zip(opt).map(|(a, b)| a - b).collect();
            norm(&diff)
        });
        self.record.rows.push(RunRow {
            k,
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            elbo,
            grad_norm: norm(grad),
            step,
            param_err,
            grad_evals,
        });
        if self.keep_iterates {
            self.record.iterates.push(theta.to_vec());
        }
    }

    fn widen_h_bounds(&mut self, lo: f64, hi: f64) {
        self.record.h_bounds = Some(match self.record.h_bounds {
            None => (lo, hi),
            Some((a, b)) => (a.min(lo), b.max(hi)),
        });
    }
}
