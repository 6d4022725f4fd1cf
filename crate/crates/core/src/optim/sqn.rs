use serde::{Deserialize, Serialize};

use super::{Recorder, RunOptions, RunRecord};
use crate::error::{Error, Result};
use crate::estimators::{
    hessian_vector_product, mean_gradient_base, mean_value_base, to_base, GradientSample,
};
use crate::lbfgs::{wolfe_line_search, LbfgsBuffer, WolfeConfig};
use crate::models::VbProblem;
use crate::sobol::BatchSource;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SqnConfig {
    pub n_grad: usize,
    pub n_hess: usize,
    /// Hessian update interval `B`.
    pub interval: usize,
    pub memory: usize,
    pub alpha: f64,
    pub wolfe: WolfeConfig,
    /// With the line search off, quasi-Newton steps use the fixed `alpha`.
    pub line_search: bool,
    /// Set by the caller; not part of config files.
    #[serde(skip)]
    pub iterations: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SqnConfig {
    fn default() -> Self {
        SqnConfig {
            n_grad: 64,
            n_hess: 1024,
            interval: 20,
            memory: 50,
            alpha: 0.01,
            wolfe: WolfeConfig::default(),
            line_search: true,
            iterations: 1000,
            seed: 0,
        }
    }
}

impl SqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grad == 0 || self.n_hess == 0 || self.interval == 0 || self.memory == 0 {
            return Err(Error::Config("n_grad, n_hess, B and memory must all be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.alpha)));
        }
        self.wolfe.validate()
    }
}

/// Mutable state of one RQMC-SQN run.
#[derive(Debug, Clone)]
pub struct OptState {
    pub theta: Vec<f64>,
    /// Completed iterations.
    pub k: usize,
    /// Hessian epoch counter, starting at -1.
    pub t: i64,
    pub epoch_sum: Vec<f64>,
    pub prev_average: Option<Vec<f64>>,
    pub buffer: LbfgsBuffer,
    pub grad_evals: u64,
}

impl OptState {
    pub fn new(theta: Vec<f64>, memory: usize) -> Self {
        OptState {
            epoch_sum: vec![0.0; theta.len()],
            theta,
            k: 0,
            t: -1,
            prev_average: None,
            buffer: LbfgsBuffer::new(memory),
            grad_evals: 0,
        }
    }
}

pub fn run_sqn<M: VbProblem + ?Sized>(
    model: &M,
    config: &SqnConfig,
    grad_source: &mut dyn BatchSource,
    hess_source: &mut dyn BatchSource,
) -> Result<(Vec<f64>, RunRecord)> {
    run_sqn_with(
        model,
        config,
        model.initial_theta(),
        grad_source,
        hess_source,
        &RunOptions::default(),
    )
}

pub fn run_sqn_with<M: VbProblem + ?Sized>(
    model: &M,
    config: &SqnConfig,
    theta0: Vec<f64>,
    grad_source: &mut dyn BatchSource,
    hess_source: &mut dyn BatchSource,
    opts: &RunOptions,
) -> Result<(Vec<f64>, RunRecord)> {
    config.validate()?;
    if theta0.len() != model.theta_dim() {
        return Err(Error::mismatch("theta0", model.theta_dim(), theta0.len()));
    }
    let dim = theta0.len();
    let mut rec = Recorder::new(model.optimum(), opts, &theta0);
    if opts.track_spectrum {
        rec.widen_h_bounds(1.0, 1.0);
    }
    let mut st = OptState::new(theta0, config.memory);

    for k in 1..=config.iterations {
        let base = to_base(model, &grad_source.next_batch(config.n_grad)?)?;
        let gs: GradientSample = match mean_gradient_base(model, &base, &st.theta) {
            Ok(g) if g.objective.is_finite() => g,
            Ok(_) | Err(Error::NonFinite { .. }) => {
                rec.record.aborted = Some(format!("non-finite objective or gradient at iteration {k}"));
                break;
            }
            Err(e) => return Err(e),
        };
        st.grad_evals += config.n_grad as u64;
        for (s, x) in st.epoch_sum.iter_mut().zip(&st.theta) {
            *s += x;
        }

        let step;
        if st.t < 1 {
            step = config.alpha;
            for (x, g) in st.theta.iter_mut().zip(&gs.gradient) {
                *x -= step * g;
            }
        } else {
            let p: Vec<f64> = st.buffer.two_loop(&gs.gradient).iter().map(|v| -v).collect();
            step = if config.line_search {
                let eval = |x: &[f64]| match mean_gradient_base(model, &base, x) {
                    Ok(g) => (g.objective, g.gradient),
                    Err(_) => (mean_value_base(model, &base, x), vec![f64::NAN; dim]),
                };
                let out = wolfe_line_search(
                    eval,
                    &st.theta,
                    gs.objective,
                    &gs.gradient,
                    &p,
                    &config.wolfe,
                    config.alpha,
                );
                st.grad_evals += (out.evaluations * config.n_grad) as u64;
                if out.fell_back() {
                    rec.record.line_search_fallbacks += 1;
                }
                out.step
            } else {
                config.alpha
            };
            for (x, d) in st.theta.iter_mut().zip(&p) {
                *x += step * d;
            }
        }

        if k % config.interval == 0 {
            st.t += 1;
            let inv = 1.0 / config.interval as f64;
            let avg: Vec<f64> = st.epoch_sum.iter().map(|s| s * inv).collect();
            st.epoch_sum.fill(0.0);
            if let Some(prev) = st.prev_average.as_ref().filter(|_| st.t > 0) {
                let s: Vec<f64> = avg.iter().zip(prev).map(|(a, b)| a - b).collect();
                let hbatch = hess_source.next_batch(config.n_hess)?;
                let y = hessian_vector_product(model, &hbatch, &avg, &s)?;
                st.grad_evals += 2 * config.n_hess as u64;
                if st.buffer.insert_pair(s, y) {
                    rec.record.insertions += 1;
                    if opts.track_spectrum {
                        let (lo, hi) = st.buffer.spectrum_bounds(dim);
                        rec.widen_h_bounds(lo, hi);
                    }
                } else {
                    rec.record.rejected_pairs += 1;
                }
            }
            st.prev_average = Some(avg);
        }

        st.k = k;
        rec.push(k, gs.elbo_estimate, &gs.gradient, step, &st.theta, st.grad_evals);
        if st.theta.iter().any(|v| !v.is_finite()) {
            rec.record.aborted = Some(format!("non-finite parameter after iteration {k}"));
            break;
        }
    }
    Ok((st.theta, rec.record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{LinReg, MeanField, NoisyQuadratic};
    use crate::optim::{run_sgd, stream_seed, FirstOrderConfig};
    use crate::sobol::{McSampler, SamplerKind};

    fn sources(kind: SamplerKind, dim: usize, seed: u64) -> (Box<dyn BatchSource + Send>, Box<dyn BatchSource + Send>) {
        (
            kind.build(dim, stream_seed(seed, 0)).unwrap(),
            kind.build(dim, stream_seed(seed, 1)).unwrap(),
        )
    }

    fn small_linreg() -> MeanField<LinReg> {
        MeanField::new(LinReg::synthetic(40, 5, 0.5, 3).unwrap())
    }

    #[test]
    fn short_run_equals_sgd() {
        let m = small_linreg();
        let cfg = SqnConfig { iterations: 15, interval: 20, n_grad: 8, ..Default::default() };
        let (mut g, mut h) = sources(SamplerKind::Mc, 5, 1);
        let (theta, _) = run_sqn(&m, &cfg, g.as_mut(), h.as_mut()).unwrap();
        let fo = FirstOrderConfig { n: 8, lr: cfg.alpha, iterations: 15, ..Default::default() };
        let (g2, _) = sources(SamplerKind::Mc, 5, 1);
        let mut g2 = g2;
        let (sgd, _) = run_sgd(&m, &fo, g2.as_mut()).unwrap();
        assert_eq!(theta, sgd);
    }

    #[test]
    fn insertion_count_and_reproducibility() {
        let q = NoisyQuadratic::new(&[1.0, 1.5, 2.0], vec![1.0, -1.0, 0.5], 0.1, 4);
        let cfg = SqnConfig { iterations: 105, interval: 10, n_grad: 16, n_hess: 16, ..Default::default() };
        let run = || {
            let (mut g, mut h) = sources(SamplerKind::Rqmc, 3, 7);
            run_sqn(&q, &cfg, g.as_mut(), h.as_mut()).unwrap()
        };
        let (t1, r1) = run();
        let (t2, r2) = run();
        assert_eq!(t1, t2);
        assert_eq!(r1.without_timing(), r2.without_timing());
        assert_eq!(r1.insertions + r1.rejected_pairs, 105 / 10 - 1);
        assert_eq!(r1.insertions, 9);
        assert!(r1.rows.windows(2).all(|w| w[0].k < w[1].k));
    }

    #[test]
    fn deterministic_quadratic_converges() {
        let q = NoisyQuadratic::new(&[1.0, 3.0, 10.0, 5.0], vec![1.0, -2.0, 0.5, 3.0], 0.0, 9);
        let cfg = SqnConfig { iterations: 300, interval: 5, n_grad: 2, n_hess: 2, alpha: 0.05, ..Default::default() };
        let mut g = McSampler::new(4, 1);
        let mut h = McSampler::new(4, 2);
        let (theta, rec) = run_sqn(&q, &cfg, &mut g, &mut h).unwrap();
        let err = rec.rows.last().unwrap().param_err.unwrap();
        assert!(err < 1e-6, "error {err}, theta {theta:?}");
        let f: Vec<f64> = rec.rows.iter().map(|r| -r.elbo).collect();
        for (i, w) in f.windows(2).enumerate().skip(2 * cfg.interval) {
            assert!(w[1] <= w[0] + 1e-12, "increase at {i}: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn abort_on_non_finite() {
        let m = small_linreg();
        let cfg = SqnConfig { iterations: 50, alpha: 1e6, n_grad: 4, ..Default::default() };
        let (mut g, mut h) = sources(SamplerKind::Mc, 5, 1);
        let (_, rec) = run_sqn(&m, &cfg, g.as_mut(), h.as_mut()).unwrap();
        assert!(rec.aborted.is_some());
        assert!(rec.rows.len() < 50);
    }

    #[test]
    fn rejects_bad_config() {
        let m = small_linreg();
        let (mut g, mut h) = sources(SamplerKind::Mc, 5, 1);
        let cfg = SqnConfig { interval: 0, ..Default::default() };
        assert!(matches!(run_sqn(&m, &cfg, g.as_mut(), h.as_mut()), Err(Error::Config(_))));
    }

    #[test]
    fn spectrum_tracked_from_identity() {
        let q = NoisyQuadratic::new(&[1.0, 2.0], vec![0.0; 2], 0.1, 1);
        let cfg = SqnConfig { iterations: 60, interval: 5, n_grad: 8, n_hess: 8, line_search: false, alpha: 0.1, ..Default::default() };
        let (mut g, mut h) = sources(SamplerKind::Rqmc, 2, 2);
        let opts = RunOptions { record_iterates: true, track_spectrum: true };
        let (_, rec) = run_sqn_with(&q, &cfg, vec![1.0, 1.0], g.as_mut(), h.as_mut(), &opts).unwrap();
        let (lo, hi) = rec.h_bounds.unwrap();
        assert!(lo > 0.0 && lo <= 1.0 && hi >= 1.0);
        assert_eq!(rec.iterates.len(), 61);
    }
}
