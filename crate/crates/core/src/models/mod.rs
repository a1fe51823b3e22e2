//! Per-datum log-likelihoods with analytic derivatives, priors, and parameter domains.
//!
//! Records are flat `f64` slices. The Gaussian location model reads a record as the
//! observation vector `x ∈ ℝᵈ`; the regression models read `(x₁, …, x_p, y)` with
//! the covariates first and the response last.

mod data;
mod generate;

pub use data::{write_csv, CsvSchema, ColumnRef, Dataset, Provenance};
pub use data::load_csv;
pub use generate::{exp1_covariance, generate, truth, Family, TruthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Likelihood {
    /// `ℓ(θ; x) = −½ Σᵢ wᵢ (xᵢ − θᵢ)²`.
    GaussianLocation { weights: Vec<f64> },
    /// `ℓ(θ; x, y) = y xᵀθ − log(1 + exp(xᵀθ))`, `y ∈ {0, 1}`.
    Logistic { p: usize },
    /// `ℓ(θ; x, y) = y xᵀθ − exp(xᵀθ)`, `y ∈ ℕ₀`.
    Poisson { p: usize },
}

/// Log prior (or regulariser) `r(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    #[default]
    Flat,
    /// `r(θ) = −‖θ‖² / (2 scale²)`.
    Gaussian { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    #[default]
    Unconstrained,
    /// Axis-aligned box `lo ≤ θ ≤ hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Domain {
    pub fn contains(&self, theta: &[f64]) -> bool {
        match self {
            Domain::Unconstrained => true,
            Domain::Box { lo, hi } => theta
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(t, (l, h))| *l <= *t && *t <= *h),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub likelihood: Likelihood,
    #[serde(default)]
    pub prior: Prior,
    #[serde(default)]
    pub domain: Domain,
}

pub fn gaussian_location_model(weights: Vec<f64>) -> Result<ModelSpec> {
    if weights.is_empty() {
        return Err(Error::config("Gaussian location model needs at least one weight"));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::config(format!(
            "Gaussian location weights must be positive and finite, got {w}"
        )));
    }
    Ok(ModelSpec {
        likelihood: Likelihood::GaussianLocation { weights },
        prior: Prior::Flat,
        domain: Domain::Unconstrained,
    })
}

/// Weights `wᵢ = 1/√i`, `i = 1..=d`.
pub fn inverse_sqrt_weights(d: usize) -> Vec<f64> {
    (1..=d).map(|i| 1.0 / (i as f64).sqrt()).collect()
}

pub fn logistic_model(p: usize) -> Result<ModelSpec> {
    if p == 0 {
        return Err(Error::config("logistic model needs p >= 1"));
    }
    Ok(ModelSpec {
        likelihood: Likelihood::Logistic { p },
        prior: Prior::Flat,
        domain: Domain::Unconstrained,
    })
}

pub fn poisson_model(p: usize) -> Result<ModelSpec> {
    if p == 0 {
        return Err(Error::config("Poisson model needs p >= 1"));
    }
    Ok(ModelSpec {
        likelihood: Likelihood::Poisson { p },
        prior: Prior::Flat,
        domain: Domain::Unconstrained,
    })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl ModelSpec {
    pub fn with_prior(mut self, prior: Prior) -> Self {
        self.prior = prior;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.likelihood {
            Likelihood::GaussianLocation { weights } => weights.len(),
            Likelihood::Logistic { p } | Likelihood::Poisson { p } => *p,
        }
    }

    /// Number of values in one record.
    pub fn record_len(&self) -> usize {
        match &self.likelihood {
            Likelihood::GaussianLocation { weights } => weights.len(),
            Likelihood::Logistic { p } | Likelihood::Poisson { p } => p + 1,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self.likelihood {
            Likelihood::GaussianLocation { .. } => "gaussian",
            Likelihood::Logistic { .. } => "logistic",
            Likelihood::Poisson { .. } => "poisson",
        }
    }

    pub fn log_lik(&self, theta: &[f64], x: &[f64]) -> f64 {
        match &self.likelihood {
            Likelihood::GaussianLocation { weights } => {
                -0.5 * weights
                    .iter()
                    .zip(x.iter().zip(theta))
                    .map(|(w, (xi, ti))| w * (xi - ti) * (xi - ti))
                    .sum::<f64>()
            }
            Likelihood::Logistic { p } => {
                let eta = dot(&x[..*p], theta);
                x[*p] * eta - softplus(eta)
            }
            Likelihood::Poisson { p } => {
                let eta = dot(&x[..*p], theta);
                x[*p] * eta - eta.exp()
            }
        }
    }

    /// `out += scale · ∇ℓ(θ; x)`.
    #[inline]
    pub fn add_grad(&self, theta: &[f64], x: &[f64], scale: f64, out: &mut [f64]) {
        match &self.likelihood {
            Likelihood::GaussianLocation { weights } => {
                for i in 0..weights.len() {
                    out[i] += scale * weights[i] * (x[i] - theta[i]);
                }
            }
            Likelihood::Logistic { p } => {
                let eta = dot(&x[..*p], theta);
                let r = scale * (x[*p] - sigmoid(eta));
                for (o, xi) in out.iter_mut().zip(&x[..*p]) {
                    *o += r * xi;
                }
            }
            Likelihood::Poisson { p } => {
                let eta = dot(&x[..*p], theta);
                let r = scale * (x[*p] - eta.exp());
                for (o, xi) in out.iter_mut().zip(&x[..*p]) {
                    *o += r * xi;
                }
            }
        }
    }

    pub fn grad(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.add_grad(theta, x, 1.0, &mut g);
        g
    }

    /// `out += scale · ∇²ℓ(θ; x)`; symmetric by construction.
    pub fn add_hessian(&self, theta: &[f64], x: &[f64], scale: f64, out: &mut Mat) {
        match &self.likelihood {
            Likelihood::GaussianLocation { weights } => {
                for (i, w) in weights.iter().enumerate() {
                    out[(i, i)] -= scale * w;
                }
            }
            Likelihood::Logistic { p } => {
                let s = sigmoid(dot(&x[..*p], theta));
                add_outer(out, &x[..*p], -scale * s * (1.0 - s));
            }
            Likelihood::Poisson { p } => {
                let mu = dot(&x[..*p], theta).exp();
                add_outer(out, &x[..*p], -scale * mu);
            }
        }
    }

    pub fn hessian(&self, theta: &[f64], x: &[f64]) -> Mat {
        let d = self.dim();
        let mut h = Mat::zeros(d, d);
        self.add_hessian(theta, x, 1.0, &mut h);
        h
    }

    /// `∇²ℓ` when it does not depend on `(θ, x)`.
    pub fn constant_hessian(&self) -> Option<Mat> {
        match &self.likelihood {
            Likelihood::GaussianLocation { weights } => {
                Some(Mat::from_diagonal(&crate::linalg::Vector::from_iterator(
                    weights.len(),
                    weights.iter().map(|w| -w),
                )))
            }
            _ => None,
        }
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        match self.prior {
            Prior::Flat => 0.0,
            Prior::Gaussian { scale } => -dot(theta, theta) / (2.0 * scale * scale),
        }
    }

    /// `out += scale · ∇r(θ)`.
    #[inline]
    pub fn add_prior_grad(&self, theta: &[f64], scale: f64, out: &mut [f64]) {
        match self.prior {
            Prior::Flat => {}
            Prior::Gaussian { scale: s } => {
                let c = scale / (s * s);
                for (o, t) in out.iter_mut().zip(theta) {
                    *o -= c * t;
                }
            }
        }
    }

    pub fn prior_hessian(&self) -> Mat {
        let d = self.dim();
        match self.prior {
            Prior::Flat => Mat::zeros(d, d),
            Prior::Gaussian { scale } => Mat::identity(d, d) * (-1.0 / (scale * scale)),
        }
    }

    pub fn has_prior(&self) -> bool {
        !matches!(self.prior, Prior::Flat)
    }

    pub fn validate_record(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.record_len() {
            return Err(Error::Data(format!(
                "record has {} values, {} model expects {}",
                x.len(),
                self.family_name(),
                self.record_len()
            )));
        }
        match &self.likelihood {
            Likelihood::GaussianLocation { .. } => Ok(()),
            Likelihood::Logistic { p } => {
                let y = x[*p];
                if y == 0.0 || y == 1.0 {
                    Ok(())
                } else {
                    Err(Error::Data(format!("logistic response must be 0 or 1, got {y}")))
                }
            }
            Likelihood::Poisson { p } => {
                let y = x[*p];
                if y >= 0.0 && y.fract() == 0.0 {
                    Ok(())
                } else {
                    Err(Error::Data(format!(
                        "Poisson response must be a non-negative integer, got {y}"
                    )))
                }
            }
        }
    }

    pub fn validate_dataset(&self, data: &Dataset) -> Result<()> {
        if data.width() != self.record_len() {
            return Err(Error::dim(format!(
                "dataset records have {} values, model expects {}",
                data.width(),
                self.record_len()
            )));
        }
        for i in 0..data.n() {
            self.validate_record(data.record(i))
                .map_err(|e| Error::Data(format!("record {i}: {e}")))?;
        }
        if let Domain::Box { lo, hi } = &self.domain {
            if lo.len() != self.dim() || hi.len() != self.dim() {
                return Err(Error::dim("box bounds must have one entry per parameter"));
            }
            if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                return Err(Error::config("box bounds need lo <= hi"));
            }
        }
        Ok(())
    }
}

fn add_outer(out: &mut Mat, x: &[f64], c: f64) {
    let p = x.len();
    for j in 0..p {
        let cj = c * x[j];
        for i in j..p {
            let v = cj * x[i];
            out[(i, j)] += v;
            if i != j {
                out[(j, i)] += v;
            }
        }
    }
}
