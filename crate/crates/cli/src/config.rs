//! Run configuration: a sectioned TOML file (JSON accepted) with strict key checking.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgalab::engine::{BatchPolicy, Boundary, Exponent, Init, Variant};
use sgalab::linalg::{self, Mat};
use sgalab::models::{CsvSchema, Family, ModelSpec};
use sgalab::theory::{AlgorithmFamily, Target};
use sgalab::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub model: ModelSpec,
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<TruthSource>,
    pub tuning: TuningBlock,
    pub execution: Execution,
    #[serde(default)]
    pub prediction: PredictionBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic { n: usize, seed: u64, family: Family },
    /// Relative paths are resolved against the configuration file's directory.
    Csv { path: PathBuf, schema: CsvSchema },
}

/// Where population information matrices come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSource {
    /// Exact matrices of the Gaussian location family.
    ClosedForm,
    /// Information at the M-estimate of a fresh synthetic sample `factor` times larger.
    LargeSample { factor: usize, seed: u64 },
    Matrices {
        #[serde(with = "linalg::mat_rows")]
        j: Mat,
        #[serde(with = "linalg::mat_rows")]
        i: Mat,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    #[default]
    Identity,
    JInverse,
    IInverse,
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningBlock {
    pub frak_h: f64,
    pub frak_b: f64,
    #[serde(default = "infinite")]
    pub frak_t: Exponent,
    pub c_h: f64,
    #[serde(default = "one")]
    pub c_b: f64,
    #[serde(default = "one")]
    pub c_beta: f64,
    /// `Γ`.
    #[serde(default)]
    pub preconditioner: Preconditioner,
    /// `Λ`; defaults to `Γ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<Preconditioner>,
    #[serde(default)]
    pub batch: BatchPolicy,
    #[serde(default)]
    pub variant: Variant,
    /// Defaults to the projection implied by the model domain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Boundary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Execution {
    /// Budget in epochs (`n/b` iterations each); exclusive with `steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default = "one_u64")]
    pub replicates: u64,
    /// Recording stride; by default about 20000 iterates are kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<u64>,
    #[serde(default = "default_burnin")]
    pub burnin_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init: Init,
    /// Start of the averaging window; defaults to the end of burn-in.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_from_epoch: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Information {
    /// `(Ĵ, Î)` at the M-estimate.
    #[default]
    Empirical,
    /// `(J⋆, I⋆)` from the truth block.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PredictionBlock {
    /// Averaging windows in epochs.
    #[serde(default)]
    pub m_values: Vec<f64>,
    /// Times at which the marginal covariance is reported.
    #[serde(default)]
    pub t_grid: Vec<f64>,
    /// Plug-in matrices for predictions and for `j_inverse`/`i_inverse` preconditioners.
    #[serde(default)]
    pub information: Information,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneBlock {
    pub target: Target,
    pub family: AlgorithmFamily,
    #[serde(default)]
    pub frak_b: f64,
    #[serde(default = "one")]
    pub c_b: f64,
    #[serde(default)]
    pub batch: BatchPolicy,
    #[serde(default = "yes")]
    pub allow_preconditioner: bool,
}

fn infinite() -> Exponent {
    Exponent::Infinite
}

fn one() -> f64 {
    1.0
}

fn one_u64() -> u64 {
    1
}

fn yes() -> bool {
    true
}

fn default_burnin() -> f64 {
    0.1
}

impl RunConfig {
    /// Parses TOML, or JSON when the extension is `.json`. Relative CSV paths are
    /// made relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        if let DataSource::Csv { path: p, .. } = &mut cfg.data {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
