//! Turns a [`RunConfig`] into data, fitted information matrices and an engine tuning.

use sgalab::engine::{Boundary, RecordingPlan, TuningConfig};
use sgalab::inference::{empirical_info, fit_mle, InfoMatrices};
use sgalab::linalg::{self, Mat};
use sgalab::models::{generate, load_csv, truth, Dataset, ModelSpec};
use sgalab::theory::ScalingLaw;
use sgalab::{Error, Result};

use crate::config::{DataSource, Information, Preconditioner, RunConfig, TruthSource};

/// Recorded iterates kept by default.
const DEFAULT_RECORDED: u64 = 20_000;

/// Data and the M-estimate; shared by every method run on the same dataset.
pub struct Problem {
    pub model: ModelSpec,
    pub data: Dataset,
    pub info: InfoMatrices,
    /// `(J⋆, I⋆)` when a truth source is configured.
    pub truth: Option<(Mat, Mat)>,
}

impl Problem {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let model = cfg.model.clone();
        let data = match &cfg.data {
            DataSource::Synthetic { n, seed, family } => generate(family, *n, *seed)?,
            DataSource::Csv { path, schema } => load_csv(path, schema)?,
        };
        let info = fit_mle(&model, &data, None, None)?;
        let truth = match &cfg.truth {
            None => None,
            Some(TruthSource::ClosedForm) => {
                let DataSource::Synthetic { family, .. } = &cfg.data else {
                    return Err(Error::Config("closed-form truth needs synthetic data".into()));
                };
                let t = truth(&model, family)?;
                if !t.available {
                    return Err(Error::Config(format!("no closed-form truth for the {} family", family.name())));
                }
                Some((t.j, t.i))
            }
            Some(TruthSource::LargeSample { factor, seed }) => {
                let DataSource::Synthetic { n, family, .. } = &cfg.data else {
                    return Err(Error::Config("large-sample truth needs synthetic data".into()));
                };
                if *factor == 0 {
                    return Err(Error::Config("truth sample factor must be positive".into()));
                }
                let big = generate(family, n * factor, *seed)?;
                let fit = fit_mle(&model, &big, Some(&info.theta_hat), None)?;
                Some(empirical_info(&model, &big, &fit.theta_hat))
            }
            Some(TruthSource::Matrices { j, i }) => {
                let d = model.dim();
                if j.shape() != (d, d) || i.shape() != (d, d) {
                    return Err(Error::Dimension("truth matrices must be d x d".into()));
                }
                Some((j.clone(), i.clone()))
            }
        };
        Ok(Self { model, data, info, truth })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    /// Plug-in `(J, I)` selected by the prediction block.
    pub fn information(&self, which: Information) -> Result<(&Mat, &Mat)> {
        match which {
            Information::Empirical => Ok((&self.info.j, &self.info.i)),
            Information::Truth => self
                .truth
                .as_ref()
                .map(|(j, i)| (j, i))
                .ok_or_else(|| Error::Config("information = \"truth\" needs a [truth] block".into())),
        }
    }
}

fn resolve_tuning(problem: &Problem, cfg: &RunConfig, j: &Mat, i: &Mat) -> Result<TuningConfig> {
    let d = problem.model.dim();
    let t = &cfg.tuning;
    let resolve = |p: &Preconditioner| -> Result<Mat> {
        match p {
            Preconditioner::Identity => Ok(Mat::identity(d, d)),
            Preconditioner::JInverse => linalg::inverse(j),
            Preconditioner::IInverse => linalg::inverse(i),
            Preconditioner::Matrix(rows) => linalg::from_rows(rows),
        }
    };
    let gamma = resolve(&t.preconditioner)?;
    let lambda = resolve(t.noise.as_ref().unwrap_or(&t.preconditioner))?;
    let tuning = TuningConfig {
        frak_h: t.frak_h,
        frak_b: t.frak_b,
        frak_t: t.frak_t,
        c_h: t.c_h,
        c_b: t.c_b,
        c_beta: t.c_beta,
        gamma,
        lambda,
        batch: t.batch,
        variant: t.variant.clone(),
        boundary: t.boundary.clone().unwrap_or_else(|| Boundary::from_domain(&problem.model.domain)),
        seed: cfg.execution.seed,
    };
    tuning.validate(d)?;
    Ok(tuning)
}

/// One method on one problem: the resolved tuning plus the recording plan.
pub struct Setup<'a> {
    pub problem: &'a Problem,
    pub cfg: &'a RunConfig,
    pub tuning: TuningConfig,
    pub j: Mat,
    pub i: Mat,
}

impl<'a> Setup<'a> {
    pub fn new(problem: &'a Problem, cfg: &'a RunConfig) -> Result<Self> {
        let (j, i) = problem.information(cfg.prediction.information)?;
        let tuning = resolve_tuning(problem, cfg, j, i)?;
        Ok(Self { problem, cfg, tuning, j: j.clone(), i: i.clone() })
    }

    /// The same method with truth matrices substituted for every plug-in, preconditioners included.
    pub fn with_truth(&self) -> Option<Result<(TuningConfig, &'a Mat, &'a Mat)>> {
        let (j, i) = self.problem.truth.as_ref()?;
        Some(resolve_tuning(self.problem, self.cfg, j, i).map(|t| (t, j, i)))
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn batch_size(&self) -> usize {
        self.tuning.batch_size(self.n())
    }

    pub fn epochs_to_steps(&self, epochs: f64) -> u64 {
        (epochs * self.n() as f64 / self.batch_size() as f64).round() as u64
    }

    pub fn steps(&self) -> Result<u64> {
        let e = &self.cfg.execution;
        let steps = match (e.epochs, e.steps) {
            (Some(_), Some(_)) => return Err(Error::Config("give either execution.epochs or execution.steps".into())),
            (None, None) => return Err(Error::Config("execution needs epochs or steps".into())),
            (Some(ep), None) if !(ep > 0.0 && ep.is_finite()) => {
                return Err(Error::Config(format!("execution.epochs must be positive, got {ep}")))
            }
            (Some(ep), None) => self.epochs_to_steps(ep),
            (None, Some(s)) => s,
        };
        if steps == 0 {
            return Err(Error::Config("the step budget rounds to zero iterations".into()));
        }
        Ok(steps)
    }

    pub fn law(&self) -> Result<ScalingLaw> {
        ScalingLaw::for_config(&self.tuning)
    }

    /// Starts at `θ̂` (unless configured otherwise) and records `n^𝔴 (θ − θ̂)`.
    pub fn plan(&self) -> Result<RecordingPlan> {
        let e = &self.cfg.execution;
        if !(0.0..1.0).contains(&e.burnin_fraction) {
            return Err(Error::Config("burnin_fraction must lie in [0, 1)".into()));
        }
        let steps = self.steps()?;
        let avg_start = match e.average_from_epoch {
            Some(ep) if !(ep >= 0.0) => return Err(Error::Config("average_from_epoch must be >= 0".into())),
            Some(ep) => self.epochs_to_steps(ep),
            None => (e.burnin_fraction * steps as f64).floor() as u64,
        };
        if avg_start >= steps {
            return Err(Error::Config("the averaging window is empty".into()));
        }
        let law = self.law()?;
        Ok(RecordingPlan {
            thin: e.thin.unwrap_or((steps / DEFAULT_RECORDED).max(1)),
            avg_start,
            centre: Some(self.problem.info.theta_hat.clone()),
            scale: (self.n() as f64).powf(law.frak_w),
            init: e.init.clone(),
        })
    }
}
