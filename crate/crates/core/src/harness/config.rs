//! Experiment configuration: a TOML file with `[model]`, `[sampler]`,
//! `[optimizer]`, `[sqn]`, `[first_order]` and `[run]` sections, plus
//! command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec, DEFAULT_DATA_SEED};
use crate::optim::{FirstOrderConfig, SqnConfig};
use crate::sobol::SamplerKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
    Sqn,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adagrad" => Ok(OptimizerKind::Adagrad),
            "adam" => Ok(OptimizerKind::Adam),
            "sqn" => Ok(OptimizerKind::Sqn),
            other => Err(Error::Config(format!(
                "unknown optimizer {other:?} (sgd | adagrad | adam | sqn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::Rqmc,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub iterations: usize,
    pub reps: usize,
    /// Batch sizes to sweep; empty means the optimizer's own size.
    pub sweep: Vec<usize>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: 1000,
            reps: 1,
            sweep: Vec::new(),
            out: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub sampler: SamplerConfig,
    pub optimizer: OptimizerKind,
    pub sqn: SqnConfig,
    pub first_order: FirstOrderConfig,
    pub run: RunConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    kind: Option<ModelKind>,
    n_obs: Option<usize>,
    dim: Option<usize>,
    rows: Option<usize>,
    cols: Option<usize>,
    gamma: Option<f64>,
    data_seed: Option<u64>,
}

impl ModelSection {
    fn resolve(self) -> ModelSpec {
        let d = ModelSpec::defaults(self.kind.unwrap_or(ModelKind::Linreg));
        ModelSpec {
            kind: d.kind,
            n_obs: self.n_obs.unwrap_or(d.n_obs),
            dim: self.dim.unwrap_or(d.dim),
            rows: self.rows.unwrap_or(d.rows),
            cols: self.cols.unwrap_or(d.cols),
            gamma: self.gamma.unwrap_or(d.gamma),
            data_seed: self.data_seed.unwrap_or(DEFAULT_DATA_SEED),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    model: ModelSection,
    #[serde(default)]
    sampler: SamplerConfig,
    #[serde(default = "default_optimizer")]
    optimizer: OptimizerKind,
    #[serde(default)]
    sqn: SqnConfig,
    #[serde(default)]
    first_order: FirstOrderConfig,
    #[serde(default)]
    run: RunConfig,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Sqn
}

impl<'de> Deserialize<'de> for ExperimentConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawConfig::deserialize(d)?;
        Ok(ExperimentConfig {
            model: raw.model.resolve(),
            sampler: raw.sampler,
            optimizer: raw.optimizer,
            sqn: raw.sqn,
            first_order: raw.first_order,
            run: raw.run,
        })
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSpec::defaults(ModelKind::Linreg),
            sampler: SamplerConfig::default(),
            optimizer: OptimizerKind::Sqn,
            sqn: SqnConfig::default(),
            first_order: FirstOrderConfig::default(),
            run: RunConfig::default(),
        }
    }
}

/// Values given on the command line; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub sampler: Option<SamplerKind>,
    pub optimizer: Option<OptimizerKind>,
    pub n_grad: Option<usize>,
    pub n_hess: Option<usize>,
    pub interval: Option<usize>,
    pub memory: Option<usize>,
    pub alpha: Option<f64>,
    pub iterations: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub sweep: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// Applies overrides. `n_grad` and `alpha` also set the first-order batch
    /// size and learning rate.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(kind) = o.model {
            if kind != self.model.kind {
                self.model = ModelSpec {
                    data_seed: self.model.data_seed,
                    ..ModelSpec::defaults(kind)
                };
            }
        }
        if let Some(v) = o.sampler {
            self.sampler.kind = v;
        }
        if let Some(v) = o.optimizer {
            self.optimizer = v;
        }
        if let Some(v) = o.n_grad {
            self.sqn.n_grad = v;
            self.first_order.n = v;
        }
        if let Some(v) = o.n_hess {
            self.sqn.n_hess = v;
        }
        if let Some(v) = o.interval {
            self.sqn.interval = v;
        }
        if let Some(v) = o.memory {
            self.sqn.memory = v;
        }
        if let Some(v) = o.alpha {
            self.sqn.alpha = v;
            self.first_order.lr = v;
        }
        if let Some(v) = o.iterations {
            self.run.iterations = v;
        }
        if let Some(v) = o.reps {
            self.run.reps = v;
        }
        if let Some(v) = o.seed {
            self.sampler.seed = v;
        }
        if let Some(v) = &o.sweep {
            self.run.sweep = v.clone();
        }
        if let Some(v) = &o.out {
            self.run.out = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sqn.validate()?;
        if self.first_order.n == 0 || !(self.first_order.lr > 0.0) {
            return Err(Error::Config("first_order: n and lr must be positive".into()));
        }
        if self.run.iterations == 0 || self.run.reps == 0 {
            return Err(Error::Config("run: iterations and reps must be >= 1".into()));
        }
        if self.run.sweep.iter().any(|&n| n == 0) {
            return Err(Error::Config("run.sweep: values must be positive".into()));
        }
        if self.run.sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("run.sweep: values must be strictly increasing".into()));
        }
        Ok(())
    }

    /// The batch sizes this experiment runs at.
    pub fn batch_sizes(&self) -> Vec<usize> {
        if !self.run.sweep.is_empty() {
            return self.run.sweep.clone();
        }
        vec![match self.optimizer {
            OptimizerKind::Sqn => self.sqn.n_grad,
            _ => self.first_order.n,
        }]
    }
}
