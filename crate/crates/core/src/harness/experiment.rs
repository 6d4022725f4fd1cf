//! Running configured experiments and writing their outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, OptimizerKind};
use super::rate::{fit_rate, median, SlopeFit};
use crate::error::{Error, Result};
use crate::models::{generate_synthetic, VbProblem};
use crate::optim::{
    run_first_order, run_sqn_with, stream_seed, FirstOrderConfig, FirstOrderRule, RunOptions,
    RunRecord, SqnConfig,
};

/// Iterations averaged for the tail error summary.
pub const TAIL: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub file: PathBuf,
    pub rep: usize,
    pub n: usize,
    pub seed: u64,
    pub rows: usize,
    pub grad_evals: u64,
    pub final_elbo: f64,
    /// Mean of `log2 |theta_k - theta*|` over the last iterations.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tail_log2_err: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: Vec<ManifestEntry>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest always serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Per-n median of the tail errors across replicates.
    pub fn sweep_medians(&self) -> Vec<(usize, f64)> {
        let mut ns: Vec<usize> = self.runs.iter().map(|r| r.n).collect();
        ns.dedup();
        ns.into_iter()
            .filter_map(|n| {
                let errs: Vec<f64> = self
                    .runs
                    .iter()
                    .filter(|r| r.n == n)
                    .filter_map(|r| r.tail_log2_err)
                    .collect();
                (!errs.is_empty()).then(|| (n, median(&errs)))
            })
            .collect()
    }

    /// Slope of the median tail error against `n`, when there are enough
    /// sweep points.
    pub fn sweep_fit(&self) -> Option<SlopeFit> {
        let pts: Vec<(f64, f64)> = self
            .sweep_medians()
            .into_iter()
            .map(|(n, e)| (n as f64, e.exp2()))
            .collect();
        fit_rate(&pts).ok()
    }
}

pub fn tail_log2_err(record: &RunRecord, tail: usize) -> Option<f64> {
    let rows = &record.rows[record.rows.len().saturating_sub(tail)..];
    let errs: Option<Vec<f64>> = rows.iter().map(|r| r.param_err.map(f64::log2)).collect();
    errs.filter(|e| !e.is_empty())
        .map(|e| e.iter().sum::<f64>() / e.len() as f64)
}

/// One optimizer run of `config` at batch size `n` and run seed `seed`.
pub fn run_single(
    problem: &dyn VbProblem,
    config: &ExperimentConfig,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, RunRecord)> {
    let dim = problem.latent_dim();
    let kind = config.sampler.kind;
    let mut grad = kind.build(dim, stream_seed(seed, 0))?;
    let theta0 = problem.initial_theta();
    let opts = RunOptions::default();
    match config.optimizer {
        OptimizerKind::Sqn => {
            let cfg = SqnConfig {
                n_grad: n,
                iterations: config.run.iterations,
                seed,
                ..config.sqn.clone()
            };
            let mut hess = kind.build(dim, stream_seed(seed, 1))?;
            run_sqn_with(problem, &cfg, theta0, grad.as_mut(), hess.as_mut(), &opts)
        }
        other => {
            let rule = match other {
                OptimizerKind::Sgd => FirstOrderRule::Sgd,
                OptimizerKind::Adagrad => FirstOrderRule::AdaGrad,
                _ => FirstOrderRule::Adam,
            };
            let cfg = FirstOrderConfig {
                n,
                iterations: config.run.iterations,
                seed,
                ..config.first_order.clone()
            };
            run_first_order(problem, rule, &cfg, theta0, grad.as_mut(), &opts)
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Runs every (replicate, n) pair, writing one CSV each plus `manifest.toml`
/// into `config.run.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Manifest> {
    config.validate()?;
    let model = generate_synthetic(&config.model)?;
    let problem = model.problem();
    let out = &config.run.out;
    std::fs::create_dir_all(out)?;
    let mut runs = Vec::new();
    for n in config.batch_sizes() {
        for rep in 0..config.run.reps {
            let seed = config.sampler.seed.wrapping_add(rep as u64);
            let (_, record) = run_single(problem, config, n, seed)?;
            let file = PathBuf::from(format!(
                "{}_{}_{}_n{n}_rep{rep}.csv",
                model_name(config),
                config.sampler.kind.name(),
                optimizer_name(config.optimizer)
            ));
            let mut buf = Vec::new();
            record.write_csv(&mut buf)?;
            write_atomic(&out.join(&file), &buf)?;
            runs.push(ManifestEntry {
                file,
                rep,
                n,
                seed,
                rows: record.rows.len(),
                grad_evals: record.final_grad_evals(),
                final_elbo: record.rows.last().map_or(f64::NAN, |r| r.elbo),
                tail_log2_err: tail_log2_err(&record, TAIL),
                aborted: record.aborted.clone(),
            });
        }
    }
    let manifest = Manifest {
        runs,
        config: config.clone(),
    };
    write_atomic(&out.join("manifest.toml"), manifest.to_toml().as_bytes())?;
    Ok(manifest)
}

fn model_name(config: &ExperimentConfig) -> &'static str {
    match config.model.kind {
        crate::models::ModelKind::Linreg => "linreg",
        crate::models::ModelKind::Logreg => "logreg",
        crate::models::ModelKind::Crossed => "crossed",
    }
}

pub fn optimizer_name(kind: OptimizerKind) -> &'static str {
    match kind {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adagrad => "adagrad",
        OptimizerKind::Adam => "adam",
        OptimizerKind::Sqn => "sqn",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, ModelSpec};
    use crate::optim::CSV_HEADER;

    fn tiny(out: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.model = ModelSpec { n_obs: 20, dim: 3, ..ModelSpec::defaults(ModelKind::Linreg) };
        c.optimizer = OptimizerKind::Adagrad;
        c.first_order.lr = 0.5;
        c.first_order.n = 16;
        c.run.iterations = 10;
        c.run.out = out.to_path_buf();
        c
    }

    fn strip_wall(csv: &str) -> String {
        csv.lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f[1] = "";
                f.join(",")
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    #[test]
    fn single_run_writes_one_csv() {
        let dir = tempfile::tempdir().unwrap();
        let m = run_experiment(&tiny(dir.path())).unwrap();
        assert_eq!(m.runs.len(), 1);
        let csv = std::fs::read_to_string(dir.path().join(&m.runs[0].file)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 11);
        let text = std::fs::read_to_string(dir.path().join("manifest.toml")).unwrap();
        assert_eq!(Manifest::parse(&text).unwrap(), m);
    }

    #[test]
    fn rerun_is_identical_apart_from_timing() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let mut c = tiny(a.path());
        c.optimizer = OptimizerKind::Sqn;
        c.sqn.interval = 3;
        c.sqn.n_hess = 8;
        c.sqn.alpha = 0.01;
        c.run.reps = 2;
        c.run.sweep = vec![4, 8];
        let ma = run_experiment(&c).unwrap();
        c.run.out = b.path().to_path_buf();
        let mb = run_experiment(&c).unwrap();
        assert_eq!(ma.runs, mb.runs);
        assert_eq!(ma.runs.len(), 4);
        for r in &ma.runs {
            let x = std::fs::read_to_string(a.path().join(&r.file)).unwrap();
            let y = std::fs::read_to_string(b.path().join(&r.file)).unwrap();
            assert_eq!(strip_wall(&x), strip_wall(&y));
        }
        assert_eq!(ma.sweep_medians().len(), 2);
    }

    #[test]
    fn tail_average() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.run.iterations = 60;
        let model = generate_synthetic(&c.model).unwrap();
        let (_, rec) = run_single(model.problem(), &c, 16, 1).unwrap();
        let want = rec.rows[10..].iter().map(|r| r.param_err.unwrap().log2()).sum::<f64>() / 50.0;
        assert!((tail_log2_err(&rec, TAIL).unwrap() - want).abs() < 1e-12);
    }
}
