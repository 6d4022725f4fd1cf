use serde::{Deserialize, Serialize};

use super::{Recorder, RunOptions, RunRecord};
use crate::error::{Error, Result};
use crate::estimators::mean_gradient;
use crate::models::VbProblem;
use crate::sobol::BatchSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstOrderRule {
    Sgd,
    AdaGrad,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FirstOrderConfig {
    /// Batch size.
    pub n: usize,
    pub lr: f64,
    /// Set by the caller; not part of config files.
    #[serde(skip)]
    pub iterations: usize,
    pub eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FirstOrderConfig {
    fn default() -> Self {
        FirstOrderConfig {
            n: 64,
            lr: 0.01,
            iterations: 1000,
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
        }
    }
}

pub fn run_sgd<M: VbProblem + ?Sized>(
    model: &M,
    config: &FirstOrderConfig,
    source: &mut dyn BatchSource,
) -> Result<(Vec<f64>, RunRecord)> {
    run_first_order(model, FirstOrderRule::Sgd, config, model.initial_theta(), source, &RunOptions::default())
}

pub fn run_adagrad<M: VbProblem + ?Sized>(
    model: &M,
    config: &FirstOrderConfig,
    source: &mut dyn BatchSource,
) -> Result<(Vec<f64>, RunRecord)> {
    run_first_order(model, FirstOrderRule::AdaGrad, config, model.initial_theta(), source, &RunOptions::default())
}

pub fn run_adam<M: VbProblem + ?Sized>(
    model: &M,
    config: &FirstOrderConfig,
    source: &mut dyn BatchSource,
) -> Result<(Vec<f64>, RunRecord)> {
    run_first_order(model, FirstOrderRule::Adam, config, model.initial_theta(), source, &RunOptions::default())
}

pub fn run_first_order<M: VbProblem + ?Sized>(
    model: &M,
    rule: FirstOrderRule,
    config: &FirstOrderConfig,
    theta0: Vec<f64>,
    source: &mut dyn BatchSource,
    opts: &RunOptions,
) -> Result<(Vec<f64>, RunRecord)> {
    if config.n == 0 || !(config.lr > 0.0) {
        return Err(Error::Config("batch size and learning rate must be positive".into()));
    }
    if theta0.len() != model.theta_dim() {
        return Err(Error::mismatch("theta0", model.theta_dim(), theta0.len()));
    }
    let mut theta = theta0;
    let mut rec = Recorder::new(model.optimum(), opts, &theta);
    let mut acc = vec![0.0; theta.len()];
    let mut mom = vec![0.0; theta.len()];
    let mut evals = 0u64;

    for k in 1..=config.iterations {
        let gs = match mean_gradient(model, &source.next_batch(config.n)?, &theta) {
            Ok(g) if g.objective.is_finite() => g,
            Ok(_) | Err(Error::NonFinite { .. }) => {
                rec.record.aborted = Some(format!("non-finite objective or gradient at iteration {k}"));
                break;
            }
            Err(e) => return Err(e),
        };
        evals += config.n as u64;
        let g = &gs.gradient;
        match rule {
            FirstOrderRule::Sgd => {
                for (x, gi) in theta.iter_mut().zip(g) {
                    *x -= config.lr * gi;
                }
            }
            FirstOrderRule::AdaGrad => {
                for ((x, gi), a) in theta.iter_mut().zip(g).zip(acc.iter_mut()) {
                    *a += gi * gi;
                    *x -= config.lr * gi / (a.sqrt() + config.eps);
                }
            }
            FirstOrderRule::Adam => {
                let c1 = 1.0 - config.beta1.powi(k as i32);
                let c2 = 1.0 - config.beta2.powi(k as i32);
                for (((x, gi), v), m) in theta.iter_mut().zip(g).zip(acc.iter_mut()).zip(mom.iter_mut()) {
                    *m = config.beta1 * *m + (1.0 - config.beta1) * gi;
                    *v = config.beta2 * *v + (1.0 - config.beta2) * gi * gi;
                    *x -= config.lr * (*m / c1) / ((*v / c2).sqrt() + config.eps);
                }
            }
        }
        rec.push(k, gs.elbo_estimate, g, config.lr, &theta, evals);
        if theta.iter().any(|v| !v.is_finite()) {
            rec.record.aborted = Some(format!("non-finite parameter after iteration {k}"));
            break;
        }
    }
    Ok((theta, rec.record))
}
