//! Large-sample predictions from the Ornstein–Uhlenbeck limit
//!
//! ```text
//! dϑₜ = −½ B ϑₜ dt + √A dWₜ
//! ```
//!
//! with `B = c_d ΓJ` and `A = c_g Λ + c_mb ΓIΓᵀ`, the limit of
//! `n^𝔴 (θ_{⌊n^𝔞 t⌋} − θ̂)`.

use serde::{Deserialize, Serialize};

use crate::engine::{BatchPolicy, Exponent, TuningConfig, Variant, EXPONENT_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, mat_rows, Mat};

/// Ratio standing in for `≪` / `≫` in the asymptotic validity conditions.
pub const MUCH: f64 = 10.0;

/// Relative Frobenius tolerance for tuning closure.
pub const CLOSURE_TOL: f64 = 1e-9;

fn eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= EXPONENT_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingLaw {
    pub frak_h: f64,
    pub frak_b: f64,
    pub frak_t: Exponent,
    pub frak_w: f64,
    pub frak_a: f64,
    pub drift_active: bool,
    pub gaussian_active: bool,
    pub minibatch_active: bool,
    pub control_variate: bool,
}

impl ScalingLaw {
    /// `𝔴 = min(𝔟+𝔥, 𝔱)/2`, `𝔞 = min(𝔥, 𝔱+𝔥−2𝔴, 𝔟+2𝔥−2𝔴)`.
    pub fn new(frak_h: f64, frak_b: f64, frak_t: Exponent) -> Result<Self> {
        let frak_w = frak_t.min(frak_b + frak_h) / 2.0;
        let gauss = frak_t.finite().map(|t| t + frak_h - 2.0 * frak_w);
        let mb = frak_b + 2.0 * frak_h - 2.0 * frak_w;
        let frak_a = gauss.map_or(frak_h.min(mb), |g| frak_h.min(g).min(mb));
        let law = Self {
            frak_h,
            frak_b,
            frak_t,
            frak_w,
            frak_a,
            drift_active: eq(frak_a, frak_h),
            gaussian_active: gauss.is_some_and(|g| eq(frak_a, g)),
            minibatch_active: eq(frak_a, mb),
            control_variate: false,
        };
        law.check()?;
        Ok(law)
    }

    /// Control variates remove the minibatch term: `𝔴 = 𝔱/2`, `𝔞 = 𝔥`.
    pub fn control_variate(frak_h: f64, frak_b: f64, frak_t: Exponent) -> Result<Self> {
        let t = frak_t.finite().ok_or_else(|| {
            Error::Regime("control variates need a finite temperature exponent".into())
        })?;
        let law = Self {
            frak_h,
            frak_b,
            frak_t,
            frak_w: t / 2.0,
            frak_a: frak_h,
            drift_active: true,
            gaussian_active: true,
            minibatch_active: false,
            control_variate: true,
        };
        law.check()?;
        Ok(law)
    }

    pub fn for_config(cfg: &TuningConfig) -> Result<Self> {
        match cfg.variant {
            Variant::ControlVariate => Self::control_variate(cfg.frak_h, cfg.frak_b, cfg.frak_t),
            _ => Self::new(cfg.frak_h, cfg.frak_b, cfg.frak_t),
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.frak_a > 0.0) {
            return Err(Error::Regime(format!(
                "time exponent a = min(h, t+h-2w, b+2h-2w) = {} must be > 0 (h = {}, b = {}, t = {})",
                self.frak_a, self.frak_h, self.frak_b, self.frak_t
            )));
        }
        if !(self.frak_w > 0.0 && self.frak_w < 1.0) {
            return Err(Error::Regime(format!(
                "spatial exponent w = min(b+h, t)/2 = {} must lie in (0, 1) (h = {}, b = {}, t = {})",
                self.frak_w, self.frak_h, self.frak_b, self.frak_t
            )));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        self.check().is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    #[serde(with = "mat_rows")]
    pub b: Mat,
    #[serde(with = "mat_rows")]
    pub a: Mat,
    pub c_d: f64,
    pub c_g: f64,
    pub c_mb: f64,
    pub b_bar: f64,
    pub c_h: f64,
    pub c_b: f64,
    pub variant: String,
    /// Parameter dimension `d`; `b` and `a` are `2d × 2d` for the momentum lift.
    pub d: usize,
    #[serde(with = "mat_rows")]
    pub gamma: Mat,
    #[serde(with = "mat_rows")]
    pub j: Mat,
    #[serde(with = "mat_rows")]
    pub i: Mat,
    pub law: ScalingLaw,
}

impl OuParams {
    pub fn state_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn is_lifted(&self) -> bool {
        self.state_dim() != self.d
    }

    /// `ΓJ`.
    pub fn gamma_j(&self) -> Mat {
        &self.gamma * &self.j
    }
}

/// Drift and diffusion of the limit for `cfg` with information matrices `J`, `I`.
pub fn ou_params(cfg: &TuningConfig, law: &ScalingLaw, j: &Mat, i: &Mat) -> Result<OuParams> {
    let d = cfg.dim();
    for (m, name) in [(j, "J"), (i, "I")] {
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::dim(format!("{name} must be {d} × {d}")));
        }
    }
    if !linalg::is_symmetric(j, 1e-10 * (1.0 + j.amax()))
        || !linalg::is_symmetric(i, 1e-10 * (1.0 + i.amax()))
    {
        return Err(Error::config("J and I must be symmetric"));
    }
    let b_bar = cfg.batch_constant();
    let c_h = cfg.c_h;
    let c_d = if law.drift_active { c_h } else { 0.0 };
    let c_g = if law.gaussian_active { c_h / cfg.c_beta } else { 0.0 };
    let c_mb = if law.minibatch_active && !law.control_variate {
        c_h * c_h * b_bar / (4.0 * cfg.c_b)
    } else {
        0.0
    };
    let gamma = &cfg.gamma;
    let (b, a) = match &cfg.variant {
        Variant::Plain | Variant::ControlVariate => {
            let b = (gamma * j) * c_d;
            let a = &cfg.lambda * c_g + (gamma * i * gamma.transpose()) * c_mb;
            (b, linalg::sym(&a)?)
        }
        Variant::Momentum { mass } => {
            // B̃ = c_h [[0, −M⁻¹], [J, ΓM⁻¹]],  Ã = [[0, 0], [0, c_mb I + c_g Λ]]
            let minv = linalg::inverse(mass)?;
            let mut b = Mat::zeros(2 * d, 2 * d);
            b.view_mut((0, d), (d, d)).copy_from(&(-&minv * c_d));
            b.view_mut((d, 0), (d, d)).copy_from(&(j * c_d));
            b.view_mut((d, d), (d, d)).copy_from(&(gamma * &minv * c_d));
            let mut a = Mat::zeros(2 * d, 2 * d);
            a.view_mut((d, d), (d, d)).copy_from(&linalg::sym(&(i * c_mb + &cfg.lambda * c_g))?);
            (b, a)
        }
    };
    Ok(OuParams {
        b,
        a,
        c_d,
        c_g,
        c_mb,
        b_bar,
        c_h,
        c_b: cfg.c_b,
        variant: cfg.variant.name().into(),
        d,
        gamma: gamma.clone(),
        j: j.clone(),
        i: i.clone(),
        law: *law,
    })
}

/// `Q∞` solving `½BQ + ½QBᵀ = A`.
pub fn stationary_cov(ou: &OuParams) -> Result<Mat> {
    linalg::solve_lyapunov(&ou.b, &ou.a)
}

/// Upper-left `d × d` block.
pub fn theta_block(q: &Mat, d: usize) -> Mat {
    q.view((0, 0), (d, d)).into_owned()
}

/// `Cov(ϑₜ)` started from `ϑ₀` with covariance `q0` (zero if absent).
pub fn marginal_cov(ou: &OuParams, t: f64, q0: Option<&Mat>) -> Result<Mat> {
    if !(t >= 0.0) {
        return Err(Error::config("time must be non-negative"));
    }
    let k = ou.state_dim();
    if let Some(q) = q0 {
        if q.nrows() != k || q.ncols() != k {
            return Err(Error::dim("initial covariance dimension"));
        }
    }
    let e = linalg::expm(&(&ou.b * (-0.5 * t)))?;
    let base = if linalg::is_hurwitz(&-&ou.b)? {
        let q = stationary_cov(ou)?;
        &q - &e * &q * e.transpose()
    } else {
        let b = ou.b.clone();
        let a = ou.a.clone();
        let f = move |s: f64| {
            let es = (&b * (-0.5 * s)).exp();
            &es * &a * es.transpose()
        };
        linalg::integrate_matrix(f, 0.0, t, 1e-12 * (1.0 + ou.a.amax()))?
    };
    let out = match q0 {
        Some(q) => base + &e * q * e.transpose(),
        None => base,
    };
    linalg::sym(&out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgCovExact {
    pub t: f64,
    #[serde(with = "mat_rows")]
    pub exact: Mat,
    /// `Q∞ − (t/6) A`.
    #[serde(with = "mat_rows")]
    pub small_t: Mat,
    /// `(4/t) B⁻¹ A B⁻ᵀ`.
    #[serde(with = "mat_rows")]
    pub large_t: Mat,
    /// `7 ‖B‖² ‖B⁻²Q∞‖^{½}`; the small-t form applies well below it.
    pub small_t_threshold: f64,
    /// `3 ‖B⁻²Q∞‖^{½}`; the large-t form applies well above it.
    pub large_t_threshold: f64,
    pub small_t_valid: bool,
    pub large_t_valid: bool,
}

/// `Cov(t⁻¹∫₀ᵗ ϑₛ ds)` for the stationary process:
/// `(4/t) B⁻¹AB⁻ᵀ − (8/t²) Sym(B⁻²(I − e^{−tB/2}) Q∞)`.
pub fn avg_cov_exact(ou: &OuParams, t: f64) -> Result<AvgCovExact> {
    if !(t > 0.0) {
        return Err(Error::config("averaging time must be positive"));
    }
    let q = stationary_cov(ou)?;
    let k = ou.state_dim();
    let binv_a = linalg::solve(&ou.b, &ou.a)?;
    let sandwich = linalg::solve(&ou.b, &binv_a.transpose())?.transpose();
    let e = linalg::expm(&(&ou.b * (-0.5 * t)))?;
    let b2 = &ou.b * &ou.b;
    let b2inv_q = linalg::solve(&b2, &q)?;
    let tail = linalg::solve(&b2, &((Mat::identity(k, k) - e) * &q))?;
    let large_t = linalg::sym(&(sandwich * (4.0 / t)))?;
    let exact = &large_t - linalg::sym(&tail)? * (8.0 / (t * t));
    let small_t = &q - &ou.a * (t / 6.0);
    let root = linalg::spectral_norm(&b2inv_q).sqrt();
    let small_t_threshold = 7.0 * linalg::spectral_norm(&ou.b).powi(2) * root;
    let large_t_threshold = 3.0 * root;
    Ok(AvgCovExact {
        t,
        exact: linalg::sym(&exact)?,
        small_t,
        large_t,
        small_t_threshold,
        large_t_threshold,
        small_t_valid: t * MUCH <= small_t_threshold,
        large_t_valid: t >= MUCH * large_t_threshold,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvgCovRescaled {
    pub m: f64,
    /// Limit of `n · Cov(θ̄)` over `m` epochs, both terms.
    #[serde(with = "mat_rows")]
    pub two_term: Mat,
    /// `(1/m) J⁻¹IJ⁻¹`, when `𝔟+𝔥 = 1` and `β = ∞`.
    #[serde(with = "mat_rows::opt")]
    pub simple: Option<Mat>,
    /// `(8c_b²/(c_h²m²)) ‖(ΓJ)⁻²Q∞‖`, bounding `two_term − simple`.
    pub remainder_bound: Option<f64>,
}

/// Limit of `n · Cov(θ̄)` for the average over the last `m` epochs (`m n / b`
/// iterations) of a stationary chain:
///
/// ```text
/// (4c_b/(c_h m)) Sym((ΓJ)⁻¹Q∞) − 𝟙{𝔟+𝔥=1} (8c_b²/(c_h²m²)) Sym((ΓJ)⁻²(I − e^{−c_h m ΓJ/(2c_b)}) Q∞)
/// ```
///
/// For `𝔟+𝔥 = 1` this is also the limit of `n^{𝔟+𝔥} Cov(θ̄)`.
pub fn avg_cov_rescaled(ou: &OuParams, m: f64) -> Result<AvgCovRescaled> {
    if !(m > 0.0) {
        return Err(Error::config("number of epochs must be positive"));
    }
    let law = &ou.law;
    let bh = law.frak_b + law.frak_h;
    if !law.frak_t.ge(bh) {
        return Err(Error::Regime(format!(
            "iterate-average limit needs b + h <= t, got b + h = {bh}, t = {}",
            law.frak_t
        )));
    }
    if bh > 1.0 + EXPONENT_TOL {
        return Err(Error::Regime(format!("iterate-average limit needs b + h <= 1, got {bh}")));
    }
    if ou.is_lifted() {
        return Err(Error::config("iterate-average prediction is defined for the unlifted chain"));
    }
    let q = stationary_cov(ou)?;
    let d = ou.d;
    let gj = ou.gamma_j();
    let (c_h, c_b) = (ou.c_h, ou.c_b);
    let first = linalg::sym(&linalg::solve(&gj, &q)?)? * (4.0 * c_b / (c_h * m));
    let gj2 = &gj * &gj;
    let full = eq(bh, 1.0);
    let two_term = if full {
        let e = linalg::expm(&(&gj * (-c_h * m / (2.0 * c_b))))?;
        let tail = linalg::solve(&gj2, &((Mat::identity(d, d) - e) * &q))?;
        &first - linalg::sym(&tail)? * (8.0 * c_b * c_b / (c_h * c_h * m * m))
    } else {
        first
    };
    let (simple, remainder_bound) = if full && law.frak_t.is_infinite() {
        let sw = crate::inference::sandwich(&ou.j, &ou.i)?;
        let bound = 8.0 * c_b * c_b / (c_h * c_h * m * m)
            * linalg::spectral_norm(&linalg::solve(&gj2, &q)?);
        (Some(sw / m), Some(bound))
    } else {
        (None, None)
    };
    Ok(AvgCovRescaled { m, two_term: linalg::sym(&two_term)?, simple, remainder_bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingTime {
    /// `4 · α b / (n λ_min(B))`; reproduces tabulated autocorrelation times.
    pub epochs_iact: f64,
    /// `2 · α b / (n λ_min(B))`, the reciprocal spectral gap in epochs.
    pub epochs_gap: f64,
    /// `2α / λ_min(B)`.
    pub iterations: f64,
    /// Minimum real part of the spectrum of `B`.
    pub lambda_min: f64,
}

/// Mixing time at sample size `n`, with `α = n^𝔞` and `b = c_b n^𝔟`.
pub fn mixing_time(ou: &OuParams, n: usize) -> Result<MixingTime> {
    let lambda_min = linalg::eigenvalues(&ou.b)?.min_real();
    if !(lambda_min > linalg::HURWITZ_MARGIN) {
        return Err(Error::TransientDirection(lambda_min));
    }
    let nf = n as f64;
    let alpha = nf.powf(ou.law.frak_a);
    let b = ou.c_b * nf.powf(ou.law.frak_b);
    let epochs_gap = 2.0 * alpha * b / (nf * lambda_min);
    Ok(MixingTime {
        epochs_iact: 2.0 * epochs_gap,
        epochs_gap,
        iterations: 2.0 * alpha / lambda_min,
        lambda_min,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// `J⁻¹`.
    Posterior,
    /// `J⁻¹IJ⁻¹`.
    LocalFiducial,
    /// `w₁ J⁻¹IJ⁻¹ + w₂ J⁻¹`.
    SandwichWeighted { w1: f64, w2: f64 },
    /// `w (J⁻¹IJ⁻¹ + J⁻¹)`.
    Bagged { w: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmFamily {
    Sgd,
    Sgld,
    SgldFp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preferences {
    pub family: AlgorithmFamily,
    pub frak_b: f64,
    pub c_b: f64,
    pub batch: BatchPolicy,
    /// When false, `Γ = Λ = I` is forced.
    pub allow_preconditioner: bool,
    pub seed: u64,
}

impl Preferences {
    pub fn new(family: AlgorithmFamily) -> Self {
        Self {
            family,
            frak_b: 0.0,
            c_b: 1.0,
            batch: BatchPolicy::WithReplacement,
            allow_preconditioner: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub target: Target,
    pub config: TuningConfig,
    #[serde(with = "mat_rows")]
    pub target_cov: Mat,
    #[serde(with = "mat_rows")]
    pub predicted_cov: Mat,
    pub closure_error: f64,
    pub mixing: MixingTime,
}

fn unreachable_err(msg: impl Into<String>) -> Error {
    Error::Unreachable(msg.into())
}

/// A tuning whose stationary covariance equals `target` for information
/// matrices `(J, I)`. The closure `Q∞ = target` is checked to [`CLOSURE_TOL`].
pub fn recommend_tuning(
    target: Target,
    j: &Mat,
    i: &Mat,
    n: usize,
    prefs: &Preferences,
) -> Result<Recommendation> {
    let d = j.nrows();
    let jinv = linalg::inverse(j)?;
    let sandwich = crate::inference::sandwich(j, i)?;
    let (w1, w2) = match target {
        Target::Posterior => (0.0, 1.0),
        Target::LocalFiducial => (1.0, 0.0),
        Target::SandwichWeighted { w1, w2 } => (w1, w2),
        Target::Bagged { w } => (w, w),
    };
    if !(w1 >= 0.0 && w2 >= 0.0 && w1 + w2 > 0.0) {
        return Err(Error::config("target weights must be non-negative and not both zero"));
    }
    let target_cov = linalg::sym(&(&sandwich * w1 + &jinv * w2))?;
    let c_b = prefs.c_b;
    let frak_b = prefs.frak_b;
    if !(0.0..1.0).contains(&frak_b) {
        return Err(unreachable_err(format!(
            "batch exponent must lie in [0, 1) so that the step exponent 1 - b is positive, got {frak_b}"
        )));
    }
    let ident = Mat::identity(d, d);
    let precond = |m: Mat| -> Result<Mat> {
        if prefs.allow_preconditioner {
            Ok(m)
        } else {
            Err(unreachable_err(
                "this target needs a preconditioner Γ; the identity cannot reach it in general",
            ))
        }
    };
    let mut cfg = TuningConfig::sgd(d, 1.0 - frak_b, frak_b, 1.0, c_b);
    cfg.batch = prefs.batch;
    cfg.seed = prefs.seed;
    let b_bar = cfg.batch_constant();

    match (prefs.family, w1 > 0.0, w2 > 0.0) {
        (AlgorithmFamily::SgldFp, true, _) => {
            return Err(unreachable_err(
                "control variates remove minibatch noise, so no sandwich component can be produced",
            ))
        }
        (AlgorithmFamily::SgldFp, false, true) => {
            // Γ = Λ, c_β = 1/w₂: B = c_h ΓJ and A = c_h w₂ Γ, so Q∞ = w₂ J⁻¹.
            let g = if prefs.allow_preconditioner { jinv.clone() } else { ident.clone() };
            cfg = cfg.with_preconditioner(g.clone(), g).with_temperature(Exponent::Finite(1.0), 1.0 / w2);
            cfg.c_h = 4.0 * c_b;
            cfg.variant = Variant::ControlVariate;
        }
        (AlgorithmFamily::Sgd, true, false) => {
            let g = precond(jinv.clone())?;
            cfg = cfg.with_preconditioner(g.clone(), g);
            cfg.c_h = 4.0 * w1 * c_b / b_bar;
        }
        (AlgorithmFamily::Sgd, false, true) => {
            if (w2 - 1.0).abs() > 0.0 {
                return Err(unreachable_err("SGD reaches only the unit-weight posterior"));
            }
            // Γ = Î⁻¹, c_h = 4c_b/b̄: A = c_h Î⁻¹ and Q∞ = J⁻¹.
            let iinv = precond(linalg::inverse(i)?)?;
            cfg = cfg.with_preconditioner(iinv.clone(), iinv);
            cfg.c_h = 4.0 * c_b / b_bar;
        }
        (AlgorithmFamily::Sgd, true, true) => {
            return Err(unreachable_err(
                "a J⁻¹ component needs Gaussian innovations; SGD has none",
            ))
        }
        (AlgorithmFamily::Sgld, false, true) => {
            // 𝔥 + 𝔟 > 𝔱 = 1 switches off minibatch noise; Γ = Λ, c_β = 1/w₂.
            if frak_b <= 0.0 {
                return Err(unreachable_err(
                    "posterior SGLD without control variates needs b + h > t = 1 with h <= 1, so the batch exponent must be positive",
                ));
            }
            let g = if prefs.allow_preconditioner { jinv.clone() } else { ident.clone() };
            cfg = cfg.with_preconditioner(g.clone(), g).with_temperature(Exponent::Finite(1.0), 1.0 / w2);
            cfg.frak_h = 1.0;
            cfg.c_h = 4.0 * c_b;
        }
        (AlgorithmFamily::Sgld, _, _) => {
            // Γ = Λ = J⁻¹, 𝔥+𝔟 = 1 = 𝔱, c_h = 4w₁c_b/b̄, c_β = 1/w₂.
            if w2 == 0.0 {
                return Err(unreachable_err("SGLD needs a positive J⁻¹ weight; use SGD"));
            }
            let g = precond(jinv.clone())?;
            cfg = cfg.with_preconditioner(g.clone(), g).with_temperature(Exponent::Finite(1.0), 1.0 / w2);
            cfg.c_h = 4.0 * w1 * c_b / b_bar;
        }
        (_, false, false) => unreachable!("weights checked above"),
    }
    cfg.validate(d)?;
    let law = ScalingLaw::for_config(&cfg)?;
    let ou = ou_params(&cfg, &law, j, i)?;
    let predicted_cov = stationary_cov(&ou)?;
    let closure_error = linalg::rel_frobenius(&predicted_cov, &target_cov);
    if !(closure_error <= CLOSURE_TOL) {
        return Err(Error::Numerical {
            message: format!("tuning closure failed for {target:?}"),
            residual: closure_error,
        });
    }
    let mixing = mixing_time(&ou, n)?;
    Ok(Recommendation { target, config: cfg, target_cov, predicted_cov, closure_error, mixing })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSample {
    pub t: f64,
    #[serde(with = "mat_rows")]
    pub q: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub config_hash: String,
    pub n: usize,
    pub law: ScalingLaw,
    pub ou: OuParams,
    /// θ-block of the stationary covariance; absent if `−B` is not Hurwitz.
    #[serde(with = "mat_rows::opt")]
    pub q_inf: Option<Mat>,
    pub marginal: Vec<MarginalSample>,
    pub avg_cov: Vec<AvgCovRescaled>,
    pub mixing: Option<MixingTime>,
    pub notes: Vec<String>,
}

/// Everything the limit predicts for one configuration.
///
/// Fails on an invalid scaling regime. A non-Hurwitz drift leaves `q_inf`,
/// `avg_cov` and `mixing` empty with an explanatory note, unless
/// `require_stationary` is set, in which case it is an error.
pub fn predict(
    cfg: &TuningConfig,
    j: &Mat,
    i: &Mat,
    n: usize,
    m_values: &[f64],
    t_grid: &[f64],
    require_stationary: bool,
) -> Result<PredictionReport> {
    cfg.validate(j.nrows())?;
    let law = ScalingLaw::for_config(cfg)?;
    let ou = ou_params(cfg, &law, j, i)?;
    let d = ou.d;
    let mut notes = Vec::new();
    let stable = linalg::is_hurwitz(&-&ou.b)?;
    if !stable {
        let msg = format!(
            "-B is not Hurwitz (min real eigenvalue of B = {:.3e}); no stationary law",
            linalg::eigenvalues(&ou.b)?.min_real()
        );
        if require_stationary {
            return Err(Error::NotHurwitz(msg));
        }
        notes.push(msg);
    }
    let q_inf = if stable { Some(theta_block(&stationary_cov(&ou)?, d)) } else { None };
    let marginal = t_grid
        .iter()
        .map(|&t| Ok(MarginalSample { t, q: theta_block(&marginal_cov(&ou, t, None)?, d) }))
        .collect::<Result<Vec<_>>>()?;
    let avg_cov = if stable && !m_values.is_empty() {
        m_values.iter().map(|&m| avg_cov_rescaled(&ou, m)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mixing = if stable { Some(mixing_time(&ou, n)?) } else { None };
    if mixing.is_some() {
        notes.push(
            "epochs_iact = 4 alpha b / (n lambda_min(B)) matches tabulated autocorrelation times; \
             epochs_gap is the reciprocal spectral gap, half as large"
                .into(),
        );
    }
    Ok(PredictionReport { config_hash: cfg.hash(), n, law, ou, q_inf, marginal, avg_cov, mixing, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::exp1_covariance;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> Mat {
        let g = Mat::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose() + Mat::identity(d, d) * 0.5
    }

    fn exp1_matrices() -> (Mat, Mat) {
        let d = 10;
        let w: Vec<f64> = crate::models::inverse_sqrt_weights(d);
        let dm = Mat::from_diagonal(&crate::linalg::Vector::from_vec(w));
        let i = &dm * exp1_covariance(d) * &dm;
        (dm, linalg::sym(&i).unwrap())
    }

    #[test]
    fn scaling_law_examples() {
        let l = ScalingLaw::new(1.0, 0.0, Exponent::Finite(1.0)).unwrap();
        assert_eq!((l.frak_w, l.frak_a), (0.5, 1.0));
        assert!(l.drift_active && l.gaussian_active && l.minibatch_active);
        let l = ScalingLaw::new(0.5, 0.5, Exponent::Finite(1.0)).unwrap();
        assert_eq!((l.frak_w, l.frak_a), (0.5, 0.5));
        assert!(l.drift_active && l.gaussian_active && l.minibatch_active);
        let l = ScalingLaw::new(1.0, 0.0, Exponent::Infinite).unwrap();
        assert_eq!(l.frak_w, 0.5);
        assert!(!l.gaussian_active && l.minibatch_active && l.drift_active);
    }

    #[test]
    fn invalid_regimes_name_the_inequality() {
        match ScalingLaw::new(0.0, 0.0, Exponent::Infinite) {
            Err(Error::Regime(m)) => assert!(m.contains("> 0")),
            other => panic!("{other:?}"),
        }
        match ScalingLaw::new(1.0, 1.5, Exponent::Infinite) {
            Err(Error::Regime(m)) => assert!(m.contains("(0, 1)")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn perturbing_t_flips_exactly_one_indicator() {
        let at = ScalingLaw::new(1.0, 0.0, Exponent::Finite(1.0)).unwrap();
        let above = ScalingLaw::new(1.0, 0.0, Exponent::Finite(1.0 + 1e-6)).unwrap();
        let below = ScalingLaw::new(1.0, 0.0, Exponent::Finite(1.0 - 1e-6)).unwrap();
        assert!(at.gaussian_active && at.minibatch_active);
        assert!(!above.gaussian_active && above.minibatch_active);
        assert!(below.gaussian_active && !below.minibatch_active);
    }

    #[test]
    fn local_fiducial_formula_substitution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = random_spd(&mut rng, 3);
        let i = random_spd(&mut rng, 3);
        let jinv = linalg::inverse(&j).unwrap();
        let cfg = TuningConfig::sgd(3, 1.0, 0.0, 4.0, 1.0).with_preconditioner(jinv.clone(), jinv.clone());
        let law = ScalingLaw::for_config(&cfg).unwrap();
        let ou = ou_params(&cfg, &law, &j, &i).unwrap();
        assert!(linalg::rel_frobenius(&ou.b, &(Mat::identity(3, 3) * 4.0)) < 1e-12);
        let want = &jinv * &i * &jinv * 4.0;
        assert!(linalg::rel_frobenius(&ou.a, &want) < 1e-12);
        let q = stationary_cov(&ou).unwrap();
        assert!(linalg::rel_frobenius(&q, &(&jinv * &i * &jinv)) < 1e-10);
    }

    #[test]
    fn exp1_sgld_sums_both_diffusion_terms() {
        let (j, i) = exp1_matrices();
        let jinv = linalg::inverse(&j).unwrap();
        let cfg = TuningConfig::sgd(10, 1.0, 0.0, 2.0, 1.0)
            .with_preconditioner(jinv.clone(), jinv.clone())
            .with_temperature(Exponent::Finite(1.0), 2.0);
        let law = ScalingLaw::for_config(&cfg).unwrap();
        let ou = ou_params(&cfg, &law, &j, &i).unwrap();
        assert!(linalg::rel_frobenius(&ou.b, &(Mat::identity(10, 10) * 2.0)) < 1e-12);
        let sw = &jinv * &i * &jinv;
        assert!(linalg::rel_frobenius(&ou.a, &(&sw + &jinv)) < 1e-12);
        let q = stationary_cov(&ou).unwrap();
        assert!(linalg::rel_frobenius(&q, &((&sw + &jinv) * 0.5)) < 1e-10);
    }

    #[test]
    fn control_variate_has_no_minibatch_term() {
        let (j, i) = exp1_matrices();
        for frak_b in [0.0, 0.3] {
            let mut cfg = TuningConfig::sgd(10, 1.0 - frak_b, frak_b, 2.0, 1.0)
                .with_temperature(Exponent::Finite(1.0), 3.0);
            cfg.variant = Variant::ControlVariate;
            let law = ScalingLaw::for_config(&cfg).unwrap();
            let ou = ou_params(&cfg, &law, &j, &i).unwrap();
            assert_eq!(ou.c_mb, 0.0);
            assert!(linalg::rel_frobenius(&ou.a, &(Mat::identity(10, 10) * (2.0 / 3.0))) < 1e-15);
        }
    }

    #[test]
    fn momentum_lift_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = random_spd(&mut rng, 2);
        let i = random_spd(&mut rng, 2);
        let mass = random_spd(&mut rng, 2);
        let mut cfg = TuningConfig::sgd(2, 1.0, 0.0, 2.0, 1.0).with_temperature(Exponent::Finite(1.0), 1.0);
        cfg.gamma = Mat::identity(2, 2) * 0.7;
        cfg.lambda = Mat::identity(2, 2) * 0.7;
        cfg.variant = Variant::Momentum { mass: mass.clone() };
        let law = ScalingLaw::for_config(&cfg).unwrap();
        let ou = ou_params(&cfg, &law, &j, &i).unwrap();
        let minv = linalg::inverse(&mass).unwrap();
        assert_eq!(ou.b.view((0, 0), (2, 2)).into_owned(), Mat::zeros(2, 2));
        assert!(linalg::rel_frobenius(&ou.b.view((0, 2), (2, 2)).into_owned(), &(-&minv * 2.0)) < 1e-15);
        assert!(linalg::rel_frobenius(&ou.b.view((2, 0), (2, 2)).into_owned(), &(&j * 2.0)) < 1e-15);
        assert!(
            linalg::rel_frobenius(&ou.b.view((2, 2), (2, 2)).into_owned(), &(&minv * 1.4)) < 1e-15
        );
        assert_eq!(ou.a.view((0, 0), (2, 4)).into_owned(), Mat::zeros(2, 4));
        let want = &i * (4.0 / 4.0) + Mat::identity(2, 2) * (2.0 * 0.7);
        assert!(linalg::rel_frobenius(&ou.a.view((2, 2), (2, 2)).into_owned(), &want) < 1e-14);
    }

    #[test]
    fn marginal_cov_limits_and_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j = random_spd(&mut rng, 3);
        let i = random_spd(&mut rng, 3);
        let cfg = TuningConfig::sgd(3, 1.0, 0.0, 1.0, 1.0);
        let law = ScalingLaw::for_config(&cfg).unwrap();
        let ou = ou_params(&cfg, &law, &j, &i).unwrap();
        assert_eq!(marginal_cov(&ou, 0.0, None).unwrap(), Mat::zeros(3, 3));
        let q = stationary_cov(&ou).unwrap();
        let lmin = linalg::eigenvalues(&ou.b).unwrap().min_real();
        let t = 40.0;
        let qt = marginal_cov(&ou, t, None).unwrap();
        assert!((&qt - &q).norm() <= (-t * lmin / 2.0).exp() * q.norm() * 3.0);
        let b = ou.b.clone();
        let a = ou.a.clone();
        let quad = linalg::integrate_matrix(
            |s| {
                let e = (&b * (-0.5 * s)).exp();
                &e * &a * e.transpose()
            },
            0.0,
            1.3,
            1e-13,
        )
        .unwrap();
        assert!(linalg::rel_frobenius(&marginal_cov(&ou, 1.3, None).unwrap(), &quad) < 1e-8);
        // Starting in the stationary law stays there.
        let qs = marginal_cov(&ou, 0.7, Some(&q)).unwrap();
        assert!(linalg::rel_frobenius(&qs, &q) < 1e-12);
    }

    fn scalar_ou(b: f64, a: f64) -> OuParams {
        let mut cfg = TuningConfig::sgd(1, 1.0, 0.0, b, 1.0).with_temperature(Exponent::Finite(2.0), 1.0);
        cfg.gamma = Mat::identity(1, 1);
        let law = ScalingLaw::for_config(&cfg).unwrap();
        // c_mb = b²/4 with I = 4a/b² gives A = a.
        let i = Mat::from_element(1, 1, 4.0 * a / (b * b));
        ou_params(&cfg, &law, &Mat::identity(1, 1), &i).unwrap()
    }

    #[test]
    fn scalar_path_average() {
        let (b, a) = (1.7, 0.6);
        let ou = scalar_ou(b, a);
        assert!((ou.b[(0, 0)] - b).abs() < 1e-15 && (ou.a[(0, 0)] - a).abs() < 1e-15);
        for t in [0.1, 1.0, 5.0, 50.0] {
            let got = avg_cov_exact(&ou, t).unwrap().exact[(0, 0)];
            let q = a / b;
            let want = 4.0 * a / (t * b * b) - 8.0 / (t * t) * (q / (b * b)) * (1.0 - (-t * b / 2.0).exp());
            assert!((got - want).abs() < 1e-12 * want.abs().max(1e-300), "{t}");
        }
    }

    #[test]
    fn path_average_monte_carlo() {
        // Exact discretisation of a scalar OU started in stationarity.
        let (b, a, t) = (2.0, 1.0, 3.0);
        let ou = scalar_ou(b, a);
        let want = avg_cov_exact(&ou, t).unwrap().exact[(0, 0)];
        let q = a / b;
        let steps = 600;
        let dt = t / steps as f64;
        let phi = (-b * dt / 2.0).exp();
        let sd = (q * (1.0 - phi * phi)).sqrt();
        let mut g = crate::rng::Gaussian::new(ChaCha8Rng::seed_from_u64(4));
        let reps = 40_000;
        let mut s2 = 0.0;
        for _ in 0..reps {
            let mut x = q.sqrt() * g.sample();
            let mut acc = 0.0;
            for _ in 0..steps {
                let next = phi * x + sd * g.sample();
                acc += 0.5 * (x + next) * dt;
                x = next;
            }
            let avg = acc / t;
            s2 += avg * avg;
        }
        let emp = s2 / reps as f64;
        // Relative standard error of a variance estimate is √(2/reps).
        assert!((emp - want).abs() < 5.0 * (2.0 / reps as f64).sqrt() * want, "{emp} {want}");
    }

    #[test]
    fn path_average_asymptotes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let j = random_spd(&mut rng, 3);
        let i = random_spd(&mut rng, 3);
        let cfg = TuningConfig::sgd(3, 1.0, 0.0, 1.0, 1.0);
        let law = ScalingLaw::for_config(&cfg).unwrap();
        let ou = ou_params(&cfg, &law, &j, &i).unwrap();
        let big = avg_cov_exact(&ou, 1e5).unwrap();
        assert!(big.large_t_valid);
        assert!(linalg::rel_frobenius(&big.exact, &big.large_t) < 1e-3);
        let small = avg_cov_exact(&ou, 1e-4).unwrap();
        assert!(small.small_t_valid);
        assert!(linalg::rel_frobenius(&small.exact, &small.small_t) < 1e-6);
    }

    #[test]
    fn trace_of_path_average_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // Commuting pair: shared eigenvectors.
        let q = linalg::psd_sqrt(&random_spd(&mut rng, 3)).unwrap();
        let (qe, _) = (q.clone().qr().q(), ());
        let bd = Mat::from_diagonal(&crate::linalg::Vector::from_vec(vec![0.5, 1.0, 3.0]));
        let ad = Mat::from_diagonal(&crate::linalg::Vector::from_vec(vec![1.0, 0.2, 2.0]));
        let b = &qe * bd * qe.transpose();
        let a = &qe * ad * qe.transpose();
        let mut ou = scalar_ou(1.0, 1.0);
        ou.b = b;
        ou.a = linalg::sym(&a).unwrap();
        ou.d = 3;
        let mut last = f64::INFINITY;
        for k in 1..60 {
            let tr = avg_cov_exact(&ou, 0.1 * k as f64).unwrap().exact.trace();
            assert!(tr < last);
            last = tr;
        }
    }

    #[test]
    fn preconditioner_cancels_in_large_t_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let j = random_spd(&mut rng, 3);
        let i = random_spd(&mut rng, 3);
        let want = crate::inference::sandwich(&j, &i).unwrap() * (1.0 / 2.5);
        for _ in 0..10 {
            let g = Mat::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0)) + Mat::identity(3, 3) * 2.0;
            let cfg = TuningConfig::sgd(3, 1.0, 0.0, 1.3, 1.0).with_preconditioner(g, Mat::identity(3, 3));
            let law = ScalingLaw::for_config(&cfg).unwrap();
            let ou = ou_params(&cfg, &law, &j, &i).unwrap();
            let binv_a = linalg::solve(&ou.b, &ou.a).unwrap();
            let lt = linalg::solve(&ou.b, &binv_a.transpose()).unwrap().transpose() * (4.0 / 2.5);
            assert!(linalg::rel_frobenius(&lt, &want) < 1e-9);
        }
    }

    #[test]
    fn rescaled_matches_exact_at_t_equals_m_over_cb() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let d = rng.random_range(1..5);
            let j = random_spd(&mut rng, d);
            let i = random_spd(&mut rng, d);
            let c_h = rng.random_range(0.5..5.0);
            let c_b = rng.random_range(0.5..3.0);
            let m = rng.random_range(0.5..10.0);
            let cfg = TuningConfig::sgd(d, 1.0, 0.0, c_h, c_b);
            let law = ScalingLaw::for_config(&cfg).unwrap();
            let ou = ou_params(&cfg, &law, &j, &i).unwrap();
            let r = avg_cov_rescaled(&ou, m).unwrap();
            let e = avg_cov_exact(&ou, m / c_b).unwrap();
            assert!(linalg::rel_frobenius(&r.two_term, &e.exact) < 1e-10);
        }
    }

    #[test]
    fn rescaled_simple_form_and_bound() {
        let (j, i) = exp1_matrices();
        let jinv = linalg::inverse(&j).unwrap();
        let cfg = TuningConfig::sgd(10, 1.0, 0.0, 4.0, 1.0).with_preconditioner(jinv.clone(), jinv);
        let law = ScalingLaw::for_config(&cfg).unwrap();
        let ou = ou_params(&cfg, &law, &j, &i).unwrap();
        for m in [1.0, 8.0, 100.0] {
            let r = avg_cov_rescaled(&ou, m).unwrap();
            let simple = r.simple.as_ref().unwrap();
            let gap = linalg::spectral_norm(&(&r.two_term - simple));
            assert!(gap <= r.remainder_bound.unwrap() * (1.0 + 1e-12));
        }
        // Non-preconditioned Exp-1 SGD at m = 1: the correction is material.
        let cfg = TuningConfig::sgd(10, 1.0, 0.0, 4.0, 1.0);
        let ou = ou_params(&cfg, &ScalingLaw::for_config(&cfg).unwrap(), &j, &i).unwrap();
        let r = avg_cov_rescaled(&ou, 1.0).unwrap();
        let first = linalg::sym(&linalg::solve(&ou.gamma_j(), &stationary_cov(&ou).unwrap()).unwrap())
            .unwrap()
            * 4.0
            / 4.0;
        assert!((&first - &r.two_term).norm() > 0.1 * first.norm());
    }

    #[test]
    fn rescaled_regime_gate() {
        let (j, i) = exp1_matrices();
        let cfg = TuningConfig::sgd(10, 1.0, 0.5, 4.0, 1.0).with_temperature(Exponent::Finite(1.0), 1.0);
        let law = ScalingLaw::for_config(&cfg).unwrap();
        let ou = ou_params(&cfg, &law, &j, &i).unwrap();
        assert!(matches!(avg_cov_rescaled(&ou, 1.0), Err(Error::Regime(_))));
    }

    #[test]
    fn exp1_mixing_times() {
        let (j, i) = exp1_matrices();
        let jinv = linalg::inverse(&j).unwrap();
        let n = 1000;
        let sgd = TuningConfig::sgd(10, 1.0, 0.0, 4.0, 1.0).with_preconditioner(jinv.clone(), jinv.clone());
        let sgld = TuningConfig::sgd(10, 1.0, 0.0, 2.0, 1.0)
            .with_preconditioner(jinv.clone(), jinv.clone())
            .with_temperature(Exponent::Finite(1.0), 2.0);
        let plain = TuningConfig::sgd(10, 1.0, 0.0, 4.0, 1.0);
        let iinv = linalg::inverse(&i).unwrap();
        let isgd = TuningConfig::sgd(10, 1.0, 0.0, 4.0, 1.0).with_preconditioner(iinv.clone(), iinv);
        let mix = |cfg: &TuningConfig| {
            let ou = ou_params(cfg, &ScalingLaw::for_config(cfg).unwrap(), &j, &i).unwrap();
            mixing_time(&ou, n).unwrap()
        };
        assert!((mix(&sgd).epochs_iact - 1.0).abs() < 1e-12);
        assert!((mix(&sgld).epochs_iact - 2.0).abs() < 1e-12);
        assert!((mix(&plain).epochs_iact - 10f64.sqrt()).abs() < 1e-12);
        assert!((mix(&isgd).epochs_iact - 2.808).abs() < 5e-4);
        let m = mix(&sgd);
        assert_eq!(m.epochs_gap * 2.0, m.epochs_iact);
        assert!((m.iterations - 2.0 * 1000.0 / 4.0).abs() < 1e-9);
    }

    #[test]
    fn transient_direction_is_an_error() {
        let j = Mat::from_diagonal(&crate::linalg::Vector::from_vec(vec![1.0, -0.5]));
        let cfg = TuningConfig::sgd(2, 1.0, 0.0, 1.0, 1.0);
        let ou = ou_params(&cfg, &ScalingLaw::for_config(&cfg).unwrap(), &j, &Mat::identity(2, 2)).unwrap();
        assert!(matches!(mixing_time(&ou, 100), Err(Error::TransientDirection(_))));
        assert!(matches!(stationary_cov(&ou), Err(Error::NotHurwitz(_))));
    }

    #[test]
    fn recommendations_close_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let d = rng.random_range(1..6);
            let j = random_spd(&mut rng, d);
            let i = random_spd(&mut rng, d);
            let jinv = linalg::inverse(&j).unwrap();
            let sw = crate::inference::sandwich(&j, &i).unwrap();
            let lf = recommend_tuning(Target::LocalFiducial, &j, &i, 1000, &Preferences::new(AlgorithmFamily::Sgd)).unwrap();
            assert!(lf.closure_error <= CLOSURE_TOL);
            assert!(linalg::rel_frobenius(&lf.predicted_cov, &sw) <= CLOSURE_TOL);
            assert!(lf.config.frak_t.is_infinite());
            assert!((lf.config.c_h - 4.0).abs() < 1e-15);
            assert!((lf.mixing.epochs_iact - 1.0).abs() < 1e-9);

            let bag = recommend_tuning(Target::Bagged { w: 0.5 }, &j, &i, 1000, &Preferences::new(AlgorithmFamily::Sgld)).unwrap();
            assert_eq!((bag.config.c_h, bag.config.c_beta), (2.0, 2.0));
            assert!(linalg::rel_frobenius(&bag.predicted_cov, &((&sw + &jinv) * 0.5)) <= CLOSURE_TOL);

            let w1 = rng.random_range(0.1..2.0);
            let w2 = rng.random_range(0.1..2.0);
            let sw_w = recommend_tuning(Target::SandwichWeighted { w1, w2 }, &j, &i, 1000, &Preferences::new(AlgorithmFamily::Sgld)).unwrap();
            assert!((sw_w.mixing.epochs_iact - 1.0 / w1).abs() < 1e-9);

            let fp = recommend_tuning(Target::Posterior, &j, &i, 1000, &Preferences::new(AlgorithmFamily::SgldFp)).unwrap();
            assert!(linalg::rel_frobenius(&fp.predicted_cov, &jinv) <= CLOSURE_TOL);

            let post_sgd = recommend_tuning(Target::Posterior, &j, &i, 1000, &Preferences::new(AlgorithmFamily::Sgd)).unwrap();
            assert!(linalg::rel_frobenius(&post_sgd.predicted_cov, &jinv) <= CLOSURE_TOL);

            let mut p = Preferences::new(AlgorithmFamily::Sgld);
            p.frak_b = 0.25;
            let post_sgld = recommend_tuning(Target::Posterior, &j, &i, 1000, &p).unwrap();
            assert!(!ScalingLaw::for_config(&post_sgld.config).unwrap().minibatch_active);
        }
    }

    #[test]
    fn unreachable_targets() {
        let (j, i) = exp1_matrices();
        let mut p = Preferences::new(AlgorithmFamily::Sgd);
        p.allow_preconditioner = false;
        assert!(matches!(recommend_tuning(Target::Posterior, &j, &i, 100, &p), Err(Error::Unreachable(_))));
        let p = Preferences::new(AlgorithmFamily::Sgld);
        assert!(matches!(recommend_tuning(Target::Posterior, &j, &i, 100, &p), Err(Error::Unreachable(_))));
        let p = Preferences::new(AlgorithmFamily::Sgd);
        assert!(matches!(recommend_tuning(Target::Bagged { w: 0.5 }, &j, &i, 100, &p), Err(Error::Unreachable(_))));
    }

    #[test]
    fn prediction_report_flags_and_serialises() {
        let (j, i) = exp1_matrices();
        let cfg = TuningConfig::sgd(10, 1.0, 0.0, 4.0, 1.0);
        let r = predict(&cfg, &j, &i, 1000, &[1.0, 8.0], &[0.5, 2.0], true).unwrap();
        assert!(!r.law.gaussian_active);
        assert_eq!(r.avg_cov.len(), 2);
        let s = serde_json::to_string(&r).unwrap();
        let back: PredictionReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back.law, r.law);
    }
}
