//! Sample-average gradients, Hessian-vector products and the gradient
//! variance diagnostic.
//!
//! Reductions run sequentially in batch order, so a given batch always
//! produces bit-identical results.

use crate::error::{Error, Result};
use crate::models::VbProblem;
use crate::sobol::{BatchSource, SampleBatch};

/// Averaged gradient `g_bar(Z; theta)` and the matching objective estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub gradient: Vec<f64>,
    /// Mean per-sample objective, i.e. the negative-ELBO estimate.
    pub objective: f64,
    pub elbo_estimate: f64,
    pub iteration: u64,
}

impl GradientSample {
    pub fn norm(&self) -> f64 {
        norm(&self.gradient)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maps a uniform batch through the model's base transform.
pub fn to_base<M: VbProblem + ?Sized>(model: &M, batch: &SampleBatch) -> Result<SampleBatch> {
    if batch.dim != model.latent_dim() {
        return Err(Error::mismatch("sample dimension", model.latent_dim(), batch.dim));
    }
    let mut points = vec![0.0; batch.points.len()];
    for (out, u) in points.chunks_exact_mut(batch.dim).zip(batch.rows()) {
        model.to_base(u, out);
    }
    Ok(SampleBatch {
        points,
        n: batch.n,
        dim: batch.dim,
        iteration: batch.iteration,
    })
}

fn check_theta<M: VbProblem + ?Sized>(model: &M, theta: &[f64]) -> Result<()> {
    if theta.len() != model.theta_dim() {
        return Err(Error::mismatch("theta", model.theta_dim(), theta.len()));
    }
    Ok(())
}

/// `g_bar(Z; theta)` for a uniform batch `Z`.
pub fn mean_gradient<M: VbProblem + ?Sized>(
    model: &M,
    batch: &SampleBatch,
    theta: &[f64],
) -> Result<GradientSample> {
    mean_gradient_base(model, &to_base(model, batch)?, theta)
}

/// As [`mean_gradient`], for a batch already in base coordinates.
pub fn mean_gradient_base<M: VbProblem + ?Sized>(
    model: &M,
    base: &SampleBatch,
    theta: &[f64],
) -> Result<GradientSample> {
    check_theta(model, theta)?;
    let mut sum = vec![0.0; theta.len()];
    let mut g = vec![0.0; theta.len()];
    let mut value = 0.0;
    for z in base.rows() {
        value += model.value_grad(z, theta, &mut g);
        for (s, gi) in sum.iter_mut().zip(&g) {
            *s += gi;
        }
    }
    let inv = 1.0 / base.n as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "gradient",
            iteration: base.iteration,
        });
    }
    let objective = value * inv;
    Ok(GradientSample {
        gradient: sum,
        objective,
        elbo_estimate: -objective,
        iteration: base.iteration,
    })
}

/// Sample-average objective over a base batch.
pub fn mean_value_base<M: VbProblem + ?Sized>(model: &M, base: &SampleBatch, theta: &[f64]) -> f64 {
    base.rows().map(|z| model.value(z, theta)).sum::<f64>() / base.n as f64
}

/// `(1/n) sum_i hess f(z_i; theta) direction` for a uniform batch.
pub fn hessian_vector_product<M: VbProblem + ?Sized>(
    model: &M,
    batch: &SampleBatch,
    theta: &[f64],
    direction: &[f64],
) -> Result<Vec<f64>> {
    let base = to_base(model, batch)?;
    hessian_vector_product_base(model, &base, theta, direction)
}

pub fn hessian_vector_product_base<M: VbProblem + ?Sized>(
    model: &M,
    base: &SampleBatch,
    theta: &[f64],
    direction: &[f64],
) -> Result<Vec<f64>> {
    check_theta(model, theta)?;
    if direction.len() != theta.len() {
        return Err(Error::mismatch("direction", theta.len(), direction.len()));
    }
    let mut sum = vec![0.0; theta.len()];
    let mut hv = vec![0.0; theta.len()];
    for z in base.rows() {
        model.hvp(z, theta, direction, &mut hv);
        for (s, h) in sum.iter_mut().zip(&hv) {
            *s += h;
        }
    }
    let inv = 1.0 / base.n as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(sum)
}

/// Trace of the empirical covariance of `g_bar` over `reps` batches of size
/// `n` drawn from `source` (each draw is an independent randomization).
pub fn variance_trace<M: VbProblem + ?Sized>(
    model: &M,
    source: &mut dyn BatchSource,
    theta: &[f64],
    n: usize,
    reps: usize,
) -> Result<f64> {
    assert!(reps >= 2, "variance needs at least two replicates");
    let grads = (0..reps)
        .map(|_| Ok(mean_gradient(model, &source.next_batch(n)?, theta)?.gradient))
        .collect::<Result<Vec<_>>>()?;
    let dim = theta.len();
    let mut mean = vec![0.0; dim];
    for g in &grads {
        for (m, v) in mean.iter_mut().zip(g) {
            *m += v / reps as f64;
        }
    }
    let ss: f64 = grads
        .iter()
        .map(|g| g.iter().zip(&mean).map(|(v, m)| (v - m).powi(2)).sum::<f64>())
        .sum();
    Ok(ss / (reps - 1) as f64)
}
