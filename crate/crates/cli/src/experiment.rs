//! Built-in experiments: each method is an ordinary run configuration passed
//! through predict, simulate and compare in its own subdirectory.

use std::fmt::Write as _;
use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use sgalab::engine::{BatchPolicy, Exponent, Init, Variant};
use sgalab::linalg;
use sgalab::models::{
    exp1_covariance, gaussian_location_model, inverse_sqrt_weights, logistic_model, poisson_model, Family, ModelSpec,
};
use sgalab::{Error, Result};

use crate::commands::{self, Comparison, Predictions};
use crate::config::{
    DataSource, Execution, Information, Preconditioner, PredictionBlock, RunConfig, TruthSource, TuningBlock,
};
use crate::setup::{Problem, Setup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Gaussian location model, d = 10, n = 1000, b = 1.
    Exp1,
    /// Logistic regression stand-in, d = 4, n = 10⁶, b = 1000.
    Exp2Synthetic,
    /// Zero-inflated Poisson data under a Poisson model, d = 25, n = 150000, b = 250.
    Exp3Synthetic,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicates: Option<u64>,
}

/// One row of the experiment summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub description: String,
    pub config_hash: String,
    pub status: String,
    pub predicted_epochs_iact: Option<f64>,
    pub predicted_epochs_iact_truth: Option<f64>,
    pub empirical_epochs_iact: Option<f64>,
    pub stationary_rel_error: Option<f64>,
    /// `(m, two-term error, simple-form error)`.
    pub averages: Vec<(f64, f64, Option<f64>)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub scale: f64,
    pub n: usize,
    pub dataset_hash: String,
    pub methods: Vec<MethodSummary>,
}

/// Runs shorter than this many predicted IACTs are flagged in the summary.
const SHORT_RUN: f64 = 20.0;

struct Method {
    name: &'static str,
    description: &'static str,
    config: RunConfig,
}

struct Plan {
    base: RunConfig,
    methods: Vec<Method>,
}

fn rows(m: &linalg::Mat) -> Vec<Vec<f64>> {
    linalg::to_rows(m)
}

fn scaled_n(n: f64, scale: f64) -> Result<usize> {
    let v = (n * scale).round();
    if !(v >= 1.0) {
        return Err(Error::Config(format!("scale {scale} leaves no data")));
    }
    Ok(v as usize)
}

fn sgd(frak_h: f64, frak_b: f64, c_h: f64, c_b: f64, pre: Preconditioner) -> TuningBlock {
    TuningBlock {
        frak_h,
        frak_b,
        frak_t: Exponent::Infinite,
        c_h,
        c_b,
        c_beta: 1.0,
        preconditioner: pre,
        noise: None,
        batch: BatchPolicy::WithReplacement,
        variant: Variant::Plain,
        boundary: None,
    }
}

fn sgld(frak_h: f64, frak_b: f64, c_h: f64, c_b: f64, c_beta: f64, pre: Preconditioner) -> TuningBlock {
    TuningBlock { frak_t: Exponent::Finite(1.0), c_beta, ..sgd(frak_h, frak_b, c_h, c_b, pre) }
}

fn execution(epochs: f64, seed: u64) -> Execution {
    Execution {
        epochs: Some(epochs),
        steps: None,
        replicates: 1,
        thin: None,
        burnin_fraction: 0.1,
        seed,
        init: Init::Centre,
        average_from_epoch: None,
    }
}

/// Replicated runs whose averages cover the last `m` epochs after `burn` epochs.
fn averaging(base: &RunConfig, tuning: TuningBlock, burn: f64, m: f64, replicates: u64, seed: u64) -> RunConfig {
    RunConfig {
        tuning,
        execution: Execution {
            epochs: Some(burn + m),
            replicates,
            thin: Some(0),
            average_from_epoch: Some(burn),
            ..execution(burn + m, seed)
        },
        prediction: PredictionBlock { m_values: vec![m], ..base.prediction.clone() },
        ..base.clone()
    }
}

fn single(base: &RunConfig, tuning: TuningBlock, epochs: f64, seed: u64) -> RunConfig {
    RunConfig { tuning, execution: execution(epochs, seed), ..base.clone() }
}

fn base(model: ModelSpec, n: usize, seed: u64, family: Family, truth: TruthSource) -> RunConfig {
    let sgd_placeholder = sgd(1.0, 0.0, 1.0, 1.0, Preconditioner::Identity);
    RunConfig {
        out: None,
        model,
        data: DataSource::Synthetic { n, seed, family },
        truth: Some(truth),
        tuning: sgd_placeholder,
        execution: execution(1.0, 0),
        prediction: PredictionBlock { m_values: Vec::new(), t_grid: Vec::new(), information: Information::Empirical },
        tune: None,
    }
}

fn exp1(scale: f64, replicates: u64) -> Result<Plan> {
    let d = 10;
    let n = scaled_n(1000.0, scale)?;
    let epochs = 1000.0 * scale;
    let sigma = exp1_covariance(d);
    let family = Family::GaussianLocation { mean: vec![0.0; d], cov: rows(&sigma) };
    let base = base(gaussian_location_model(inverse_sqrt_weights(d))?, n, 2024, family, TruthSource::ClosedForm);
    use Preconditioner::*;
    let methods = vec![
        Method {
            name: "plain_sgd",
            description: "SGD without preconditioning, h = 4/n",
            config: single(&base, sgd(1.0, 0.0, 4.0, 1.0, Identity), epochs, 1),
        },
        Method {
            name: "jinv_sgd",
            description: "SGD preconditioned by the inverse observed information",
            config: single(&base, sgd(1.0, 0.0, 4.0, 1.0, JInverse), epochs, 2),
        },
        Method {
            name: "iinv_sgd",
            description: "SGD preconditioned by the inverse score covariance",
            config: single(&base, sgd(1.0, 0.0, 4.0, 1.0, IInverse), epochs, 3),
        },
        Method {
            name: "jinv_sgld",
            description: "SGLD, h = 2/n, beta = 2n, preconditioned by the inverse observed information",
            config: single(&base, sgld(1.0, 0.0, 2.0, 1.0, 2.0, JInverse), epochs, 4),
        },
        Method {
            name: "average_m1",
            description: "Plain SGD iterate average over 1 epoch",
            config: averaging(&base, sgd(1.0, 0.0, 4.0, 1.0, Identity), 20.0, 1.0, replicates, 500),
        },
        Method {
            name: "average_m8",
            description: "Plain SGD iterate average over 8 epochs",
            config: averaging(&base, sgd(1.0, 0.0, 4.0, 1.0, Identity), 20.0, 8.0, replicates, 501),
        },
    ];
    Ok(Plan { base, methods })
}

fn exp2(scale: f64, replicates: u64) -> Result<Plan> {
    let n = scaled_n(1e6, scale)?;
    let epochs = 1000.0 * scale;
    let family = Family::Logistic { theta: vec![-0.5, 1.0, -0.75, 0.5] };
    let truth = TruthSource::LargeSample { factor: 4, seed: 2026 };
    let base = base(logistic_model(4)?, n, 2025, family, truth);
    use Preconditioner::*;
    // (h, b) = (1, 0): b = 1000 fixed. (h, b) = (1/2, 1/2): b = sqrt(n).
    let methods = vec![
        Method {
            name: "plain_sgd",
            description: "SGD without preconditioning, h = 4b/n, (h, b) exponents (1, 0)",
            config: single(&base, sgd(1.0, 0.0, 4000.0, 1000.0, Identity), epochs, 1),
        },
        Method {
            name: "jinv_sgd",
            description: "SGD preconditioned by the inverse observed information, exponents (1, 0)",
            config: single(&base, sgd(1.0, 0.0, 4000.0, 1000.0, JInverse), epochs, 2),
        },
        Method {
            name: "iinv_sgd",
            description: "SGD preconditioned by the inverse score covariance, exponents (1, 0)",
            config: single(&base, sgd(1.0, 0.0, 4000.0, 1000.0, IInverse), epochs, 3),
        },
        Method {
            name: "jinv_sgld",
            description: "SGLD, h = b/n, beta = n, exponents (1, 0)",
            config: single(&base, sgld(1.0, 0.0, 1000.0, 1000.0, 1.0, JInverse), epochs, 4),
        },
        Method {
            name: "jinv_sgd_half",
            description: "SGD preconditioned by the inverse observed information, exponents (1/2, 1/2)",
            config: single(&base, sgd(0.5, 0.5, 4.0, 1.0, JInverse), epochs, 5),
        },
        Method {
            name: "average_m1",
            description: "Preconditioned SGD iterate average over 1 epoch, exponents (1, 0)",
            config: averaging(&base, sgd(1.0, 0.0, 4000.0, 1000.0, JInverse), 5.0, 1.0, replicates, 500),
        },
        Method {
            name: "average_m8",
            description: "Preconditioned SGD iterate average over 8 epochs, exponents (1, 0)",
            config: averaging(&base, sgd(1.0, 0.0, 4000.0, 1000.0, JInverse), 5.0, 8.0, replicates, 501),
        },
        Method {
            name: "average_half_m1",
            description: "Preconditioned SGD iterate average over 1 epoch, exponents (1/2, 1/2)",
            config: averaging(&base, sgd(0.5, 0.5, 4.0, 1.0, JInverse), 5.0, 1.0, replicates, 502),
        },
        Method {
            name: "average_half_m8",
            description: "Preconditioned SGD iterate average over 8 epochs, exponents (1/2, 1/2)",
            config: averaging(&base, sgd(0.5, 0.5, 4.0, 1.0, JInverse), 5.0, 8.0, replicates, 503),
        },
    ];
    Ok(Plan { base, methods })
}

/// Large intercept: counts near `e⁷` make the unpreconditioned step unstable.
fn exp3_theta() -> Vec<f64> {
    let mut t = vec![7.0];
    t.extend((1..25).map(|k| 0.3 * if k % 2 == 0 { 1.0 } else { -1.0 } / (k as f64).sqrt()));
    t
}

fn exp3(scale: f64, replicates: u64) -> Result<Plan> {
    let n = scaled_n(150_000.0, scale)?;
    let epochs = 1000.0 * scale;
    let family = Family::Poisson { theta: exp3_theta(), zero_inflation: 0.3 };
    let truth = TruthSource::LargeSample { factor: 4, seed: 2028 };
    let base = base(poisson_model(25)?, n, 2027, family, truth);
    use Preconditioner::*;
    let methods = vec![
        Method {
            name: "plain_sgd",
            description: "SGD without preconditioning, h = 4b/n (expected to diverge)",
            config: single(&base, sgd(1.0, 0.0, 1000.0, 250.0, Identity), epochs, 1),
        },
        Method {
            name: "jinv_sgd",
            description: "SGD preconditioned by the inverse observed information, h = 4b/n",
            config: single(&base, sgd(1.0, 0.0, 1000.0, 250.0, JInverse), epochs, 2),
        },
        Method {
            name: "iinv_sgd",
            description: "SGD preconditioned by the inverse score covariance, h = 4b/n",
            config: single(&base, sgd(1.0, 0.0, 1000.0, 250.0, IInverse), epochs, 3),
        },
        Method {
            name: "jinv_sgld",
            description: "SGLD, h = 2b/n, beta = 2n, preconditioned by the inverse observed information",
            config: single(&base, sgld(1.0, 0.0, 500.0, 250.0, 2.0, JInverse), epochs, 4),
        },
        Method {
            name: "average_m1",
            description: "Preconditioned SGD iterate average over 1 epoch",
            config: averaging(&base, sgd(1.0, 0.0, 1000.0, 250.0, JInverse), 5.0, 1.0, replicates, 500),
        },
        Method {
            name: "average_m8",
            description: "Preconditioned SGD iterate average over 8 epochs",
            config: averaging(&base, sgd(1.0, 0.0, 1000.0, 250.0, JInverse), 5.0, 8.0, replicates, 501),
        },
    ];
    Ok(Plan { base, methods })
}

fn summarize(
    m: &Method,
    pred: &Predictions,
    cmp: Option<&Comparison>,
    status: String,
    hash: String,
) -> MethodSummary {
    MethodSummary {
        method: m.name.into(),
        description: m.description.into(),
        config_hash: hash,
        status,
        predicted_epochs_iact: pred.report.mixing.map(|x| x.epochs_iact),
        predicted_epochs_iact_truth: pred.mixing_truth.map(|x| x.epochs_iact),
        empirical_epochs_iact: cmp.and_then(|c| c.mixing.as_ref()).map(|x| x.empirical_epochs_iact),
        stationary_rel_error: cmp.and_then(|c| c.stationary.as_ref()).map(|s| s.error()),
        averages: cmp
            .map(|c| c.averages.iter().map(|a| (a.m, a.two_term.error(), a.simple.as_ref().map(|s| s.error()))).collect())
            .unwrap_or_default(),
    }
}

fn fmt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.3}"))
}

pub fn summary_table(s: &ExperimentSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(t, "{} (scale {}, n = {})", s.experiment, s.scale, s.n);
    let _ = writeln!(
        t,
        "{:<18} {:>10} {:>10} {:>10} {:>10}  {:<24} status",
        "method", "IACT emp", "IACT pred", "pred(true)", "cov err", "average err (two/simple)"
    );
    for m in &s.methods {
        let avg = m
            .averages
            .iter()
            .map(|(mm, a, b)| format!("m={mm}: {a:.3}/{}", fmt(*b)))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            t,
            "{:<18} {:>10} {:>10} {:>10} {:>10}  {:<24} {}",
            m.method,
            fmt(m.empirical_epochs_iact),
            fmt(m.predicted_epochs_iact),
            fmt(m.predicted_epochs_iact_truth),
            fmt(m.stationary_rel_error),
            avg,
            m.status
        );
    }
    t
}

/// Runs every method of `which` under `out/<method>/` and writes `summary.json` and `summary.txt`.
pub fn run(which: Experiment, scale: f64, out: &Path, ov: Overrides) -> Result<ExperimentSummary> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("scale must be positive, got {scale}")));
    }
    let (name, replicates) = match which {
        Experiment::Exp1 => ("exp1", 200),
        Experiment::Exp2Synthetic => ("exp2-synthetic", 200),
        Experiment::Exp3Synthetic => ("exp3-synthetic", 200),
    };
    let replicates = ov.replicates.unwrap_or(replicates);
    let mut plan = match which {
        Experiment::Exp1 => exp1(scale, replicates)?,
        Experiment::Exp2Synthetic => exp2(scale, replicates)?,
        Experiment::Exp3Synthetic => exp3(scale, replicates)?,
    };
    if let Some(s) = ov.seed {
        for (k, m) in plan.methods.iter_mut().enumerate() {
            m.config.execution.seed = s.wrapping_add(k as u64);
        }
    }
    std::fs::create_dir_all(out)?;
    let problem = Problem::new(&plan.base)?;
    let mut rows = Vec::with_capacity(plan.methods.len());
    for m in &plan.methods {
        let dir = out.join(m.name);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.toml"), m.config.to_toml()?)?;
        let setup = Setup::new(&problem, &m.config)?;
        let hash = setup.tuning.hash();
        let pred = commands::predict(&setup, &dir, false)?;
        let sim = commands::simulate(&setup, &dir)?;
        let status = match sim.diverged.first() {
            Some((r, step)) => format!("diverged (replicate {r}, step {step})"),
            None if pred.body.report.q_inf.is_none() => "no stationary law".into(),
            None => match (pred.body.report.mixing, m.config.execution.epochs) {
                (Some(mix), Some(epochs)) if m.config.execution.thin != Some(0) && epochs < SHORT_RUN * mix.epochs_iact => {
                    format!("ok, but the run spans only {:.1} predicted IACTs", epochs / mix.epochs_iact)
                }
                _ => "ok".into(),
            },
        };
        let cmp = if sim.diverged.len() == sim.records.len() {
            None
        } else {
            Some(commands::compare(&setup, &dir)?)
        };
        rows.push(summarize(m, &pred.body, cmp.as_ref().map(|c| &c.body), status, hash));
    }
    let summary = ExperimentSummary {
        experiment: name.into(),
        scale,
        n: problem.n(),
        dataset_hash: problem.data.hash(),
        methods: rows,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(out.join("summary.json"), text + "\n")?;
    std::fs::write(out.join("summary.txt"), summary_table(&summary))?;
    Ok(summary)
}
