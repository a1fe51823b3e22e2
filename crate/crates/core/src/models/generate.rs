use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::data::{Dataset, Provenance};
use super::{Likelihood, ModelSpec};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::rng::{data_stream, Gaussian};

/// Data-generating law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `X ~ N(mean, cov)`.
    GaussianLocation { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// Covariates `(1, U₂, …, U_p)` with `Uⱼ ~ Unif[−1, 1]`, `y ~ Bernoulli(σ(xᵀθ))`.
    Logistic { theta: Vec<f64> },
    /// Same covariates; `y = 0` with probability `zero_inflation`, else `y ~ Poisson(exp(xᵀθ))`.
    Poisson {
        theta: Vec<f64>,
        #[serde(default)]
        zero_inflation: f64,
    },
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::GaussianLocation { .. } => "gaussian",
            Family::Logistic { .. } => "logistic",
            Family::Poisson { .. } => "poisson",
        }
    }

    pub fn record_len(&self) -> usize {
        match self {
            Family::GaussianLocation { mean, .. } => mean.len(),
            Family::Logistic { theta } | Family::Poisson { theta, .. } => theta.len() + 1,
        }
    }
}

/// `½I + ½𝟙𝟙ᵀ`.
pub fn exp1_covariance(d: usize) -> Mat {
    Mat::from_element(d, d, 0.5) + Mat::identity(d, d) * 0.5
}

fn covariates<R: Rng>(rng: &mut R, p: usize, out: &mut Vec<f64>) {
    out.push(1.0);
    for _ in 1..p {
        out.push(rng.random_range(-1.0..=1.0));
    }
}

pub fn generate(family: &Family, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("cannot generate an empty dataset"));
    }
    let mut rng = data_stream(seed);
    let width = family.record_len();
    let mut values = Vec::with_capacity(n * width);
    match family {
        Family::GaussianLocation { mean, cov } => {
            let d = mean.len();
            if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                return Err(Error::dim("covariance must be d × d"));
            }
            let c = Mat::from_fn(d, d, |i, j| cov[i][j]);
            let l = c
                .clone()
                .cholesky()
                .ok_or_else(|| Error::config("covariance is not positive definite"))?
                .l();
            let mut g = Gaussian::new(rng);
            let mut z = Vector::zeros(d);
            for _ in 0..n {
                g.fill(z.as_mut_slice());
                let x = &l * &z;
                values.extend(x.iter().zip(mean).map(|(xi, m)| xi + m));
            }
        }
        Family::Logistic { theta } => {
            let p = theta.len();
            if p == 0 {
                return Err(Error::config("logistic family needs a parameter"));
            }
            for _ in 0..n {
                let start = values.len();
                covariates(&mut rng, p, &mut values);
                let eta: f64 = values[start..].iter().zip(theta).map(|(a, b)| a * b).sum();
                let prob = 1.0 / (1.0 + (-eta).exp());
                values.push(if rng.random::<f64>() < prob { 1.0 } else { 0.0 });
            }
        }
        Family::Poisson { theta, zero_inflation } => {
            let p = theta.len();
            if p == 0 {
                return Err(Error::config("Poisson family needs a parameter"));
            }
            if !(0.0..1.0).contains(zero_inflation) {
                return Err(Error::config("zero inflation must lie in [0, 1)"));
            }
            for _ in 0..n {
                let start = values.len();
                covariates(&mut rng, p, &mut values);
                let eta: f64 = values[start..].iter().zip(theta).map(|(a, b)| a * b).sum();
                let inflated = rng.random::<f64>() < *zero_inflation;
                let y = if inflated {
                    0.0
                } else {
                    let dist = Poisson::new(eta.exp()).map_err(|e| {
                        Error::config(format!("Poisson rate exp({eta}) rejected: {e}"))
                    })?;
                    dist.sample(&mut rng)
                };
                values.push(y);
            }
        }
    }
    Dataset::from_flat(
        values,
        width,
        Provenance::Synthetic { family: family.name().into(), seed },
    )
}

/// Population quantities `θ⋆`, `J⋆`, `I⋆`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub theta: Vec<f64>,
    #[serde(with = "crate::linalg::mat_rows")]
    pub j: Mat,
    #[serde(with = "crate::linalg::mat_rows")]
    pub i: Mat,
    pub available: bool,
}

impl TruthSpec {
    pub fn unavailable(d: usize) -> Self {
        Self {
            theta: vec![f64::NAN; d],
            j: Mat::from_element(d, d, f64::NAN),
            i: Mat::from_element(d, d, f64::NAN),
            available: false,
        }
    }
}

/// Closed-form truth for the Gaussian location model; `available = false` otherwise.
pub fn truth(model: &ModelSpec, family: &Family) -> Result<TruthSpec> {
    match (&model.likelihood, family) {
        (Likelihood::GaussianLocation { weights }, Family::GaussianLocation { mean, cov }) => {
            let d = weights.len();
            if mean.len() != d {
                return Err(Error::dim("family and model dimensions differ"));
            }
            let dm = Mat::from_diagonal(&Vector::from_column_slice(weights));
            let s = Mat::from_fn(d, d, |i, j| cov[i][j]);
            let i = crate::linalg::sym(&(&dm * s * &dm))?;
            Ok(TruthSpec { theta: mean.clone(), j: dm, i, available: true })
        }
        _ => Ok(TruthSpec::unavailable(model.dim())),
    }
}
