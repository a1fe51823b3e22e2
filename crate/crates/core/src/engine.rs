//! The stochastic gradient meta-algorithm
//!
//! ```text
//! θₖ₊₁ = P(θₖ + (h/2) Γ ĝ(θₖ) + √(hΛ/β) ξₖ),   ξₖ ~ N(0, I)
//! ĝ(θ) = (1/n) ∇r(θ) + (1/b) Σⱼ ∇ℓ(θ; X_{Iⱼ})
//! ```
//!
//! with `h = c_h n^{-𝔥}`, `b = ⌊c_b n^𝔟⌋`, `β = c_β n^𝔱`, plus a momentum lift to
//! phase space and a control-variate gradient anchored at the M-estimate.

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, mat_rows, Mat};
use crate::models::{Dataset, Domain, ModelSpec};
use crate::rng::{stream, Gaussian, StreamKind};

/// Divergence guard on `‖θ‖₂`.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Tolerance for exponent equality tests.
pub const EXPONENT_TOL: f64 = 1e-12;

/// A scaling exponent that may be `+∞` (used for `𝔱` to encode `β = ∞`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinite,
}

impl Exponent {
    pub fn is_infinite(self) -> bool {
        matches!(self, Exponent::Infinite)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Exponent::Finite(x) => Some(x),
            Exponent::Infinite => None,
        }
    }

    /// `self ≤ x` with tolerance.
    pub fn le(self, x: f64) -> bool {
        match self {
            Exponent::Finite(t) => t <= x + EXPONENT_TOL,
            Exponent::Infinite => false,
        }
    }

    /// `x ≤ self` with tolerance.
    pub fn ge(self, x: f64) -> bool {
        match self {
            Exponent::Finite(t) => x <= t + EXPONENT_TOL,
            Exponent::Infinite => true,
        }
    }

    pub fn min(self, x: f64) -> f64 {
        match self {
            Exponent::Finite(t) => t.min(x),
            Exponent::Infinite => x,
        }
    }
}

impl From<f64> for Exponent {
    fn from(x: f64) -> Self {
        if x == f64::INFINITY {
            Exponent::Infinite
        } else {
            Exponent::Finite(x)
        }
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exponent::Finite(x) => write!(f, "{x}"),
            Exponent::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::Finite(x) => s.serialize_f64(*x),
            Exponent::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) if x.is_nan() || x == f64::NEG_INFINITY => {
                Err(serde::de::Error::custom("exponent must be a number or +inf"))
            }
            Raw::Num(x) => Ok(Exponent::from(x)),
            Raw::Text(t) => match t.trim().to_ascii_lowercase().as_str() {
                "inf" | "+inf" | "infinity" | "+infinity" => Ok(Exponent::Infinite),
                other => other
                    .parse::<f64>()
                    .map_err(|_| serde::de::Error::custom(format!("bad exponent '{t}'")))
                    .and_then(|x| {
                        if x.is_nan() || x == f64::NEG_INFINITY {
                            Err(serde::de::Error::custom("exponent must be a number or +inf"))
                        } else {
                            Ok(Exponent::from(x))
                        }
                    }),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchPolicy {
    #[default]
    WithReplacement,
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Variant {
    #[default]
    Plain,
    /// Phase-space lift with mass matrix `M`; the state is `(θ, ψ)`.
    Momentum {
        #[serde(with = "mat_rows")]
        mass: Mat,
    },
    /// Gradient differences anchored at the M-estimate plus the full anchor gradient.
    ControlVariate,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Momentum { .. } => "momentum",
            Variant::ControlVariate => "control_variate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Boundary {
    #[default]
    None,
    /// Projection onto `lo ≤ θ ≤ hi`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl Boundary {
    /// Projection `P(θ, Δ) = clamp(θ + Δ)`; the identity whenever `θ + Δ` is inside.
    #[inline]
    pub fn apply(&self, theta: &mut [f64]) {
        if let Boundary::Box { lo, hi } = self {
            for ((t, l), h) in theta.iter_mut().zip(lo).zip(hi) {
                *t = t.clamp(*l, *h);
            }
        }
    }

    pub fn from_domain(domain: &Domain) -> Self {
        match domain {
            Domain::Unconstrained => Boundary::None,
            Domain::Box { lo, hi } => Boundary::Box { lo: lo.clone(), hi: hi.clone() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    pub frak_h: f64,
    pub frak_b: f64,
    pub frak_t: Exponent,
    pub c_h: f64,
    pub c_b: f64,
    /// Ignored when `frak_t` is infinite.
    #[serde(default = "one")]
    pub c_beta: f64,
    #[serde(with = "mat_rows")]
    pub gamma: Mat,
    #[serde(with = "mat_rows")]
    pub lambda: Mat,
    #[serde(default)]
    pub batch: BatchPolicy,
    #[serde(default)]
    pub variant: Variant,
    #[serde(default)]
    pub boundary: Boundary,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl TuningConfig {
    /// Plain SGD (`𝔱 = ∞`) with `Γ = Λ = I`.
    pub fn sgd(d: usize, frak_h: f64, frak_b: f64, c_h: f64, c_b: f64) -> Self {
        Self {
            frak_h,
            frak_b,
            frak_t: Exponent::Infinite,
            c_h,
            c_b,
            c_beta: 1.0,
            gamma: Mat::identity(d, d),
            lambda: Mat::identity(d, d),
            batch: BatchPolicy::WithReplacement,
            variant: Variant::Plain,
            boundary: Boundary::None,
            seed: 0,
        }
    }

    pub fn with_preconditioner(mut self, gamma: Mat, lambda: Mat) -> Self {
        self.gamma = gamma;
        self.lambda = lambda;
        self
    }

    pub fn with_temperature(mut self, frak_t: Exponent, c_beta: f64) -> Self {
        self.frak_t = frak_t;
        self.c_beta = c_beta;
        self
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn step_size(&self, n: usize) -> f64 {
        self.c_h * (n as f64).powf(-self.frak_h)
    }

    /// `⌊c_b n^𝔟⌋`, guarded against the last ulp falling below an integer.
    pub fn batch_size(&self, n: usize) -> usize {
        let x = self.c_b * (n as f64).powf(self.frak_b);
        (x * (1.0 + 1e-12)).floor() as usize
    }

    /// `β`, or `None` for `β = ∞`.
    pub fn inverse_temperature(&self, n: usize) -> Option<f64> {
        self.frak_t.finite().map(|t| self.c_beta * (n as f64).powf(t))
    }

    /// `b̄ = 1 − c_b` when `𝔟 = 1` without replacement, else `1`.
    pub fn batch_constant(&self) -> f64 {
        if (self.frak_b - 1.0).abs() <= EXPONENT_TOL && self.batch == BatchPolicy::WithoutReplacement
        {
            1.0 - self.c_b
        } else {
            1.0
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let pos = |x: f64, name: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be positive and finite, got {x}")))
            }
        };
        pos(self.c_h, "c_h")?;
        pos(self.c_b, "c_b")?;
        if !self.frak_t.is_infinite() {
            pos(self.c_beta, "c_beta")?;
        }
        for (x, name) in [(self.frak_h, "frak_h"), (self.frak_b, "frak_b")] {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {x}")));
            }
        }
        if let Some(t) = self.frak_t.finite() {
            if !(t >= 0.0) {
                return Err(Error::config(format!("frak_t must be >= 0, got {t}")));
            }
        }
        for (m, name) in [(&self.gamma, "gamma"), (&self.lambda, "lambda")] {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::dim(format!(
                    "{name} is {}x{}, model dimension is {d}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("{name} has non-finite entries")));
            }
        }
        let tol = 1e-10 * (1.0 + self.lambda.amax());
        if !linalg::is_symmetric(&self.lambda, tol) {
            return Err(Error::config("lambda must be symmetric"));
        }
        if linalg::symmetric_eigenvalues(&self.lambda)?[0] < -tol {
            return Err(Error::config("lambda must be positive semi-definite"));
        }
        if let Variant::Momentum { mass } = &self.variant {
            if mass.nrows() != d || mass.ncols() != d {
                return Err(Error::dim("mass matrix must be d × d"));
            }
            let tol = 1e-10 * (1.0 + mass.amax());
            if !linalg::is_symmetric(mass, tol) || linalg::symmetric_eigenvalues(mass)?[0] <= 0.0 {
                return Err(Error::config("mass matrix must be symmetric positive definite"));
            }
        }
        if matches!(self.variant, Variant::ControlVariate) && self.frak_t.is_infinite() {
            return Err(Error::config(
                "control-variate variant needs Gaussian noise (finite frak_t)",
            ));
        }
        if let Boundary::Box { lo, hi } = &self.boundary {
            if lo.len() != d || hi.len() != d {
                return Err(Error::dim("box bounds must have d entries"));
            }
            if lo.iter().zip(hi).any(|(l, h)| !(l <= h)) {
                return Err(Error::config("box bounds need lo <= hi"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(json))
    }
}

/// Anchor for the control-variate gradient: `θ̂` and `(1/n) Σᵢ ∇ℓ(θ̂; Xᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CvAnchor {
    pub theta: Vec<f64>,
    pub full_grad: Vec<f64>,
}

impl CvAnchor {
    pub fn new(model: &ModelSpec, data: &Dataset, theta: &[f64]) -> Self {
        let n = data.n();
        let mut acc = vec![0.0; theta.len()];
        for x in data.records() {
            model.add_grad(theta, x, 1.0, &mut acc);
        }
        acc.iter_mut().for_each(|g| *g /= n as f64);
        Self { theta: theta.to_vec(), full_grad: acc }
    }
}

/// `(1/n)∇r(θ) + (1/b)Σⱼ∇ℓ(θ; X_{Iⱼ})`, or with an anchor
/// `(1/n)∇r(θ) + (1/b)Σⱼ[∇ℓ(θ; X_{Iⱼ}) − ∇ℓ(θ̂; X_{Iⱼ})] + (1/n)Σᵢ∇ℓ(θ̂; Xᵢ)`.
///
/// Batch terms are summed in the order given, then divided by `b`.
pub fn stochastic_gradient(
    model: &ModelSpec,
    data: &Dataset,
    theta: &[f64],
    batch: &[usize],
    cv_anchor: Option<&CvAnchor>,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::config("empty minibatch"));
    }
    if let Some(&i) = batch.iter().find(|&&i| i >= data.n()) {
        return Err(Error::config(format!("batch index {i} out of range")));
    }
    let mut out = vec![0.0; theta.len()];
    let mut scratch = vec![0.0; theta.len()];
    gradient_into(model, data, theta, batch, cv_anchor, &mut out, &mut scratch);
    Ok(out)
}

#[inline]
fn gradient_into(
    model: &ModelSpec,
    data: &Dataset,
    theta: &[f64],
    batch: &[usize],
    cv_anchor: Option<&CvAnchor>,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    match cv_anchor {
        None => {
            for &i in batch {
                model.add_grad(theta, data.record(i), 1.0, out);
            }
        }
        Some(a) => {
            for &i in batch {
                let x = data.record(i);
                scratch.iter_mut().for_each(|v| *v = 0.0);
                model.add_grad(theta, x, 1.0, scratch);
                model.add_grad(&a.theta, x, -1.0, scratch);
                for (o, s) in out.iter_mut().zip(scratch.iter()) {
                    *o += s;
                }
            }
        }
    }
    let b = batch.len() as f64;
    out.iter_mut().for_each(|v| *v /= b);
    if let Some(a) = cv_anchor {
        for (o, g) in out.iter_mut().zip(&a.full_grad) {
            *o += g;
        }
    }
    model.add_prior_grad(theta, 1.0 / data.n() as f64, out);
}

/// Minibatch index sampler. Indices are 0-based.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: usize,
    b: usize,
    policy: BatchPolicy,
    perm: Vec<usize>,
    batch: Vec<usize>,
}

impl BatchSampler {
    pub fn new(n: usize, b: usize, policy: BatchPolicy) -> Result<Self> {
        if b == 0 || n == 0 {
            return Err(Error::config(format!("batch size {b} with n = {n}")));
        }
        if policy == BatchPolicy::WithoutReplacement && b > n {
            return Err(Error::config(format!(
                "batch size {b} exceeds n = {n} without replacement"
            )));
        }
        let perm = match policy {
            BatchPolicy::WithoutReplacement => (0..n).collect(),
            BatchPolicy::WithReplacement => Vec::new(),
        };
        Ok(Self { n, b, policy, perm, batch: vec![0; b] })
    }

    /// Draws a batch. Without replacement this is a partial Fisher–Yates shuffle,
    /// uniform over ordered tuples of distinct indices.
    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> &[usize] {
        match self.policy {
            BatchPolicy::WithReplacement => {
                for slot in &mut self.batch {
                    *slot = rng.random_range(0..self.n);
                }
            }
            BatchPolicy::WithoutReplacement => {
                for j in 0..self.b {
                    let k = rng.random_range(j..self.n);
                    self.perm.swap(j, k);
                    self.batch[j] = self.perm[j];
                }
            }
        }
        &self.batch
    }
}

/// One draw from `sample_batch`, allocating.
pub fn sample_batch<R: Rng>(rng: &mut R, n: usize, b: usize, policy: BatchPolicy) -> Result<Vec<usize>> {
    let mut s = BatchSampler::new(n, b, policy)?;
    Ok(s.sample(rng).to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    /// At the recording centre (`θ̂`) if one is given, else at zero.
    #[default]
    Centre,
    Zero,
    Given { theta: Vec<f64> },
    /// `θ₀ ~ N(centre, cov)`, drawn from the replicate's init stream.
    Gaussian {
        #[serde(with = "mat_rows")]
        cov: Mat,
    },
}

/// What a run records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingPlan {
    /// Keep every `thin`-th iterate (steps `thin, 2·thin, …`). Zero keeps none.
    pub thin: u64,
    /// Average the iterates produced by steps `avg_start + 1 ..= K`.
    pub avg_start: u64,
    /// Centre for the rescaled process, usually `θ̂`.
    pub centre: Option<Vec<f64>>,
    /// Spatial scale `n^𝔴`.
    pub scale: f64,
    pub init: Init,
}

impl Default for RecordingPlan {
    fn default() -> Self {
        Self { thin: 1, avg_start: 0, centre: None, scale: 1.0, init: Init::Centre }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: TuningConfig,
    pub config_hash: String,
    pub dataset_hash: String,
    pub model: ModelSpec,
    pub seed: u64,
    pub replicate: u64,
    pub n: usize,
    pub d: usize,
    pub state_dim: usize,
    pub steps: u64,
    pub step_size: f64,
    pub batch_size: usize,
    pub inverse_temperature: Option<f64>,
    pub thin: u64,
    pub avg_start: u64,
    pub diverged_at: Option<u64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub manifest: Manifest,
    /// Thinned θ-block iterates, row-major `len × d`.
    pub trajectory: Vec<f64>,
    pub trajectory_steps: Vec<u64>,
    /// Iterate average over the window, if it is non-empty.
    pub average: Option<Vec<f64>>,
    pub average_count: u64,
    /// Sum of squared deviations about the running mean over the window (Welford).
    #[serde(with = "mat_rows")]
    pub window_m2: Mat,
    pub centre: Option<Vec<f64>>,
    pub scale: f64,
    pub final_state: Vec<f64>,
}

impl RunRecord {
    pub fn d(&self) -> usize {
        self.manifest.d
    }

    pub fn len(&self) -> usize {
        self.trajectory_steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory_steps.is_empty()
    }

    pub fn iterate(&self, k: usize) -> &[f64] {
        let d = self.d();
        &self.trajectory[k * d..(k + 1) * d]
    }

    /// `ϑₖ = scale · (θₖ − centre)` for every recorded iterate.
    pub fn rescaled(&self) -> Vec<f64> {
        let d = self.d();
        let zero = vec![0.0; d];
        let c = self.centre.as_deref().unwrap_or(&zero);
        self.trajectory
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(c).map(|(t, m)| self.scale * (t - m)))
            .collect()
    }

    pub fn epochs_per_step(&self) -> f64 {
        self.manifest.batch_size as f64 / self.manifest.n as f64
    }

    /// CSV with columns `step, epoch, theta_1..theta_d`.
    pub fn write_trajectory_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let d = self.d();
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let m = &self.manifest;
        writeln!(w, "# config_hash {} seed {} replicate {}", m.config_hash, m.seed, m.replicate)?;
        write!(w, "step,epoch")?;
        for i in 1..=d {
            write!(w, ",theta_{i}")?;
        }
        writeln!(w)?;
        let eps = self.epochs_per_step();
        for (k, step) in self.trajectory_steps.iter().enumerate() {
            write!(w, "{step},{:.17e}", *step as f64 * eps)?;
            for v in self.iterate(k) {
                write!(w, ",{v:.17e}")?;
            }
            writeln!(w)?;
        }
        if let Some(s) = self.manifest.diverged_at {
            writeln!(w, "# diverged at step {s}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_manifest(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut m = serde_json::to_value(&self.manifest).map_err(json_err)?;
        if let serde_json::Value::Object(o) = &mut m {
            o.insert("average".into(), serde_json::to_value(&self.average).map_err(json_err)?);
            o.insert("average_count".into(), self.average_count.into());
        }
        let s = serde_json::to_string_pretty(&m).map_err(json_err)?;
        std::fs::write(path, s)?;
        Ok(())
    }
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Per-run constants derived from the configuration.
struct Kernel<'a> {
    model: &'a ModelSpec,
    data: &'a Dataset,
    cfg: &'a TuningConfig,
    d: usize,
    h: f64,
    /// `(h/2) Γ`.
    half_h_gamma: Mat,
    /// `√(hΛ/β)`, absent for `β = ∞`.
    noise: Option<Mat>,
    /// `M⁻¹` for the momentum lift.
    minv: Option<Mat>,
    anchor: Option<&'a CvAnchor>,
}

impl<'a> Kernel<'a> {
    fn new(
        model: &'a ModelSpec,
        data: &'a Dataset,
        cfg: &'a TuningConfig,
        anchor: Option<&'a CvAnchor>,
    ) -> Result<Self> {
        let d = model.dim();
        cfg.validate(d)?;
        if data.width() != model.record_len() {
            return Err(Error::dim("dataset width does not match the model"));
        }
        let n = data.n();
        let h = cfg.step_size(n);
        let noise = match cfg.inverse_temperature(n) {
            None => None,
            Some(beta) => Some(linalg::psd_sqrt(&(&cfg.lambda * (h / beta)))?),
        };
        let minv = match &cfg.variant {
            Variant::Momentum { mass } => Some(linalg::inverse(mass)?),
            _ => None,
        };
        let anchor = match (&cfg.variant, anchor) {
            (Variant::ControlVariate, Some(a)) => {
                if a.theta.len() != d {
                    return Err(Error::dim("control-variate anchor dimension"));
                }
                Some(a)
            }
            (Variant::ControlVariate, None) => {
                return Err(Error::config("control-variate variant needs an anchor"))
            }
            (_, _) => None,
        };
        Ok(Self { model, data, cfg, d, h, half_h_gamma: &cfg.gamma * (0.5 * h), noise, minv, anchor })
    }

    fn state_dim(&self) -> usize {
        if self.minv.is_some() {
            2 * self.d
        } else {
            self.d
        }
    }
}

/// Scratch buffers reused across steps.
struct Work {
    g: Vec<f64>,
    scratch: Vec<f64>,
    xi: Vec<f64>,
    drift: Vec<f64>,
    noise: Vec<f64>,
    velocity: Vec<f64>,
    next: Vec<f64>,
    sorted: Vec<usize>,
}

impl Work {
    fn new(d: usize, state_dim: usize) -> Self {
        Self {
            g: vec![0.0; d],
            scratch: vec![0.0; d],
            xi: vec![0.0; d],
            drift: vec![0.0; d],
            noise: vec![0.0; d],
            velocity: vec![0.0; d],
            next: vec![0.0; state_dim],
            sorted: Vec::new(),
        }
    }
}

/// `out = m · x`.
#[inline]
fn matvec(m: &Mat, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    matvec_add(m, x, out);
}

#[inline]
fn matvec_add(m: &Mat, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for j in 0..d {
        let xj = x[j];
        let col = m.column(j);
        for i in 0..out.len() {
            out[i] += col[i] * xj;
        }
    }
}

impl Kernel<'_> {
    /// One update of `state` in place. Batch indices are summed in ascending order.
    fn step(
        &self,
        state: &mut [f64],
        batch: &[usize],
        innov: &mut Gaussian<ChaCha8Rng>,
        w: &mut Work,
    ) {
        let d = self.d;
        w.sorted.clear();
        w.sorted.extend_from_slice(batch);
        w.sorted.sort_unstable();
        gradient_into(
            self.model,
            self.data,
            &state[..d],
            &w.sorted,
            self.anchor,
            &mut w.g,
            &mut w.scratch,
        );
        if let Some(l) = &self.noise {
            innov.fill(&mut w.xi);
            matvec(l, &w.xi, &mut w.noise);
        }
        match &self.minv {
            None => {
                matvec(&self.half_h_gamma, &w.g, &mut w.drift);
                if self.noise.is_some() {
                    for i in 0..d {
                        w.next[i] = state[i] + w.drift[i] + w.noise[i];
                    }
                } else {
                    for i in 0..d {
                        w.next[i] = state[i] + w.drift[i];
                    }
                }
            }
            Some(minv) => {
                // θ' = θ + (h/2)M⁻¹ψ
                // ψ' = ψ − (h/2)ΓM⁻¹ψ + (h/2)ĝ + √(hΛ/β)ξ
                let (theta, psi) = state.split_at(d);
                matvec(minv, psi, &mut w.velocity);
                matvec(&self.half_h_gamma, &w.velocity, &mut w.drift);
                let hh = 0.5 * self.h;
                let with_noise = self.noise.is_some();
                for i in 0..d {
                    w.next[i] = theta[i] + hh * w.velocity[i];
                    let p = psi[i] - w.drift[i] + hh * w.g[i];
                    w.next[d + i] = if with_noise { p + w.noise[i] } else { p };
                }
            }
        }
        self.cfg.boundary.apply(&mut w.next[..d]);
        state.copy_from_slice(&w.next);
    }
}

fn initial_state(
    d: usize,
    state_dim: usize,
    plan: &RecordingPlan,
    seed: u64,
    replicate: u64,
) -> Result<Vec<f64>> {
    let centre = plan.centre.clone().unwrap_or_else(|| vec![0.0; d]);
    if centre.len() != d {
        return Err(Error::dim("recording centre dimension"));
    }
    let mut s = vec![0.0; state_dim];
    match &plan.init {
        Init::Centre => s[..d].copy_from_slice(&centre),
        Init::Zero => {}
        Init::Given { theta } => {
            if theta.len() != d && theta.len() != state_dim {
                return Err(Error::dim("initial state dimension"));
            }
            s[..theta.len()].copy_from_slice(theta);
        }
        Init::Gaussian { cov } => {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(Error::dim("initial covariance must be d × d"));
            }
            let root = linalg::psd_sqrt(cov)?;
            let mut g = Gaussian::new(stream(seed, replicate, StreamKind::Init));
            let mut z = vec![0.0; d];
            g.fill(&mut z);
            s[..d].copy_from_slice(&centre);
            matvec_add(&root, &z, &mut s[..d]);
        }
    }
    Ok(s)
}

/// Runs `steps` iterations of one chain.
///
/// `anchor` is required for the control-variate variant and ignored otherwise.
/// On divergence the error carries the partial record.
pub fn run(
    model: &ModelSpec,
    data: &Dataset,
    cfg: &TuningConfig,
    steps: u64,
    plan: &RecordingPlan,
    replicate: u64,
    anchor: Option<&CvAnchor>,
) -> Result<RunRecord> {
    if steps == 0 {
        return Err(Error::config("a run needs at least one step"));
    }
    let started = Instant::now();
    let kernel = Kernel::new(model, data, cfg, anchor)?;
    let d = kernel.d;
    let state_dim = kernel.state_dim();
    let n = data.n();
    let b = cfg.batch_size(n);
    let mut sampler = BatchSampler::new(n, b, cfg.batch)?;
    let mut batch_rng = stream(cfg.seed, replicate, StreamKind::Batch);
    let mut innov = Gaussian::new(stream(cfg.seed, replicate, StreamKind::Innovation));
    let mut state = initial_state(d, state_dim, plan, cfg.seed, replicate)?;
    let mut work = Work::new(d, state_dim);

    let cap = if plan.thin == 0 { 0 } else { (steps / plan.thin) as usize };
    let mut trajectory = Vec::with_capacity(cap * d);
    let mut trajectory_steps = Vec::with_capacity(cap);
    let mut mean = vec![0.0; d];
    let mut m2 = Mat::zeros(d, d);
    let mut count: u64 = 0;
    let mut delta = vec![0.0; d];
    let mut diverged_at = None;

    for k in 1..=steps {
        let batch = sampler.sample(&mut batch_rng);
        kernel.step(&mut state, batch, &mut innov, &mut work);
        let norm2: f64 = state[..d].iter().map(|v| v * v).sum();
        if !(norm2.sqrt() <= DIVERGENCE_NORM) {
            diverged_at = Some(k);
            break;
        }
        if plan.thin > 0 && k % plan.thin == 0 {
            trajectory.extend_from_slice(&state[..d]);
            trajectory_steps.push(k);
        }
        if k > plan.avg_start {
            count += 1;
            let c = count as f64;
            for i in 0..d {
                delta[i] = state[i] - mean[i];
                mean[i] += delta[i] / c;
            }
            for j in 0..d {
                let dj = state[j] - mean[j];
                for i in 0..d {
                    m2[(i, j)] += delta[i] * dj;
                }
            }
        }
    }

    let executed = diverged_at.unwrap_or(steps);
    let record = RunRecord {
        manifest: Manifest {
            config: cfg.clone(),
            config_hash: cfg.hash(),
            dataset_hash: data.hash(),
            model: model.clone(),
            seed: cfg.seed,
            replicate,
            n,
            d,
            state_dim,
            steps: executed,
            step_size: kernel.h,
            batch_size: b,
            inverse_temperature: cfg.inverse_temperature(n),
            thin: plan.thin,
            avg_start: plan.avg_start,
            diverged_at,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
        trajectory,
        trajectory_steps,
        average: (count > 0).then_some(mean),
        average_count: count,
        window_m2: m2,
        centre: plan.centre.clone(),
        scale: plan.scale,
        final_state: state,
    };
    match diverged_at {
        Some(step) => Err(Error::Diverged { step, partial: Box::new(record) }),
        None => Ok(record),
    }
}

/// Independent replicates `0..count` in parallel, returned in replicate order.
pub fn run_replicates(
    model: &ModelSpec,
    data: &Dataset,
    cfg: &TuningConfig,
    steps: u64,
    plan: &RecordingPlan,
    count: u64,
    anchor: Option<&CvAnchor>,
) -> Vec<Result<RunRecord>> {
    (0..count)
        .into_par_iter()
        .map(|r| run(model, data, cfg, steps, plan, r, anchor))
        .collect()
}
