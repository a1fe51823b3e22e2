//! Empirical counterparts of the predictions: stationary covariance,
//! autocorrelation times and iterate-average covariance across replicates.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::engine::RunRecord;
use crate::error::{Error, Result};
use crate::linalg::{self, mat_rows, Mat, Vector};

/// Shortest stationary segment accepted by [`iact`].
pub const MIN_IACT_LEN: usize = 1000;

/// Minimum replicate count for [`replicate_avg_cov`].
pub const MIN_REPLICATES: usize = 30;

/// Split-half mean drift, in standard errors, above which a series is flagged.
pub const DRIFT_SIGMAS: f64 = 5.0;

/// Unbiased sample covariance of the rows of a row-major `len × d` buffer.
pub fn sample_cov(rows: &[f64], d: usize) -> Result<Mat> {
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::dim("sample buffer is not a whole number of rows"));
    }
    let len = rows.len() / d;
    if len < 2 {
        return Err(Error::InsufficientSamples(format!("{len} samples")));
    }
    let mut mean = Vector::zeros(d);
    for r in rows.chunks_exact(d) {
        mean += Vector::from_column_slice(r);
    }
    mean /= len as f64;
    let mut acc = Mat::zeros(d, d);
    let mut c = Vector::zeros(d);
    for r in rows.chunks_exact(d) {
        c.copy_from_slice(r);
        c -= &mean;
        acc.ger(1.0, &c, &c, 1.0);
    }
    linalg::sym(&(acc / (len as f64 - 1.0)))
}

/// Covariance of the rescaled samples after discarding the leading `burnin_fraction`.
/// At least `10·d` samples must remain.
pub fn empirical_cov_samples(samples: &[f64], d: usize, burnin_fraction: f64) -> Result<Mat> {
    if !(0.0..1.0).contains(&burnin_fraction) {
        return Err(Error::config("burn-in fraction must lie in [0, 1)"));
    }
    if d == 0 || samples.len() % d != 0 {
        return Err(Error::dim("sample buffer is not a whole number of rows"));
    }
    let len = samples.len() / d;
    let skip = (len as f64 * burnin_fraction).floor() as usize;
    let kept = len - skip;
    if kept < 10 * d {
        return Err(Error::InsufficientSamples(format!(
            "{kept} post-burn-in samples, need at least 10·d = {}",
            10 * d
        )));
    }
    sample_cov(&samples[skip * d..], d)
}

/// Covariance of `ϑₖ = scale·(θₖ − centre)` over the recorded trajectory.
pub fn empirical_cov(run: &RunRecord, burnin_fraction: f64) -> Result<Mat> {
    empirical_cov_samples(&run.rescaled(), run.d(), burnin_fraction)
}

/// Biased sample autocorrelations `ρ̂(0..=max_lag)` via FFT; `ρ̂(0) = 1`.
/// Zero-variance input yields `None`.
pub fn acf(series: &[f64], max_lag: usize) -> Option<Vec<f64>> {
    let n = series.len();
    if n == 0 {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for z in &mut buf {
        *z = Complex::new(z.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    let c0 = buf[0].re;
    // Rounding noise of a constant series is far below this relative scale.
    let scale: f64 = series.iter().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    if !(c0 > 1e-24 * scale) {
        return None;
    }
    Some((0..=max_lag.min(n - 1)).map(|k| buf[k].re / c0).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Iact {
    /// `1 + 2Σ_{k≥1} ρ̂(k)`, in samples.
    pub tau: f64,
    /// Last lag included in the sum.
    pub window: usize,
    /// Split-half mean difference in standard errors.
    pub drift_z: f64,
    pub drift_warning: bool,
}

/// Integrated autocorrelation time with Geyer's initial monotone sequence.
///
/// Lags are summed in pairs `ρ̂(2m−1) + ρ̂(2m)`, `m ≥ 1`, until a pair turns
/// non-positive; pair sums are forced non-increasing. White noise stops at
/// the first pair and returns exactly 1.
pub fn iact(series: &[f64]) -> Result<Iact> {
    let n = series.len();
    if n < MIN_IACT_LEN {
        return Err(Error::InsufficientSamples(format!(
            "{n} samples, need at least {MIN_IACT_LEN} for an autocorrelation time"
        )));
    }
    let (tau, window) = geyer(series)
        .ok_or_else(|| Error::InsufficientSamples("series has zero variance".into()))?;

    // Each half is centred on its own mean, so a level shift between halves
    // does not inflate the standard error it is measured against.
    let half = n / 2;
    let (a, b) = (&series[..half], &series[n - half..]);
    let half_var = |s: &[f64]| {
        let (mu, v) = mean_var(s);
        let t = geyer(s).map_or(1.0, |g| g.0);
        (mu, t * v / s.len() as f64)
    };
    let (ma, va) = half_var(a);
    let (mb, vb) = half_var(b);
    let se = (va + vb).sqrt();
    let gap = (ma - mb).abs();
    let drift_z = if se > 0.0 { gap / se } else if gap > 0.0 { f64::INFINITY } else { 0.0 };
    Ok(Iact { tau, window, drift_z, drift_warning: drift_z > DRIFT_SIGMAS })
}

fn mean_var(s: &[f64]) -> (f64, f64) {
    let mu = s.iter().sum::<f64>() / s.len() as f64;
    (mu, s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / s.len() as f64)
}

fn geyer(series: &[f64]) -> Option<(f64, usize)> {
    let n = series.len();
    let rho = acf(series, n - 1)?;
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut window = 0;
    let mut m = 1;
    while 2 * m < n {
        let pair = rho[2 * m - 1] + rho[2 * m];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        window = 2 * m;
        m += 1;
    }
    Some((1.0 + 2.0 * sum, window))
}

/// Unit directions approximating the worst linear functional: coordinate
/// axes plus left eigenvectors of `b` for its real eigenvalues.
pub fn projection_directions(b: Option<&Mat>, d: usize) -> Result<Vec<Vector>> {
    let mut dirs: Vec<Vector> = (0..d)
        .map(|i| {
            let mut e = Vector::zeros(d);
            e[i] = 1.0;
            e
        })
        .collect();
    let Some(b) = b else { return Ok(dirs) };
    if b.nrows() != d || b.ncols() != d {
        return Err(Error::dim("drift dimension differs from the trajectory"));
    }
    let spec = linalg::eigenvalues(b)?;
    let scale = linalg::spectral_norm(b).max(f64::MIN_POSITIVE);
    let mut reals: Vec<f64> = spec
        .values
        .iter()
        .filter(|z| z.im.abs() <= 1e-10 * scale)
        .map(|z| z.re)
        .collect();
    reals.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < reals.len() {
        // Cluster numerically repeated eigenvalues and take their whole left eigenspace.
        let mut k = i + 1;
        while k < reals.len() && (reals[k] - reals[i]).abs() <= 1e-8 * scale {
            k += 1;
        }
        let lambda = reals[i..k].iter().sum::<f64>() / (k - i) as f64;
        let shifted = b.transpose() - Mat::identity(d, d) * lambda;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Numerical {
            message: "SVD did not return singular vectors".into(),
            residual: f64::NAN,
        })?;
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
        for &idx in order.iter().take(k - i) {
            let v: Vector = vt.row(idx).transpose();
            let nv = v.norm();
            if nv > 0.0 {
                dirs.push(v / nv);
            }
        }
        i = k;
    }
    Ok(dirs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IactSummary {
    /// Per coordinate, in iterations.
    pub per_coordinate: Vec<f64>,
    /// Per projection direction (axes first), in iterations.
    pub per_direction: Vec<f64>,
    pub worst: f64,
    pub worst_epochs: f64,
    pub drift_warning: bool,
}

/// IACT of every projection of the post-burn-in trajectory, converted from
/// recorded samples to iterations through the thinning stride.
pub fn iact_summary(run: &RunRecord, burnin_fraction: f64, drift: Option<&Mat>) -> Result<IactSummary> {
    let d = run.d();
    let len = run.len();
    let skip = (len as f64 * burnin_fraction).floor() as usize;
    let rows = &run.trajectory[skip * d..];
    let stride = run.manifest.thin.max(1) as f64;
    let dirs = projection_directions(drift, d)?;
    let taus: Vec<Result<Option<Iact>>> = dirs
        .par_iter()
        .map(|v| {
            let s: Vec<f64> = rows.chunks_exact(d).map(|r| r.iter().zip(v.iter()).map(|(a, b)| a * b).sum()).collect();
            match iact(&s) {
                Ok(t) => Ok(Some(t)),
                // Frozen directions carry no autocorrelation information.
                Err(Error::InsufficientSamples(m)) if m.contains("zero variance") => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();
    let taus = taus.into_iter().collect::<Result<Vec<_>>>()?;
    let per_direction: Vec<f64> = taus.iter().map(|t| t.map_or(f64::NAN, |t| t.tau * stride)).collect();
    let worst = per_direction.iter().copied().filter(|t| t.is_finite()).fold(f64::NAN, f64::max);
    if !worst.is_finite() {
        return Err(Error::InsufficientSamples("every projection has zero variance".into()));
    }
    Ok(IactSummary {
        per_coordinate: per_direction[..d].to_vec(),
        per_direction,
        worst,
        worst_epochs: worst * run.epochs_per_step(),
        drift_warning: taus.iter().flatten().any(|t| t.drift_warning),
    })
}

/// Unbiased covariance of `scale·(θ̄ᵣ − centre)` across replicate averages.
pub fn replicate_cov(averages: &[Vec<f64>], centre: &[f64], scale: f64) -> Result<Mat> {
    let d = centre.len();
    let mut rows = Vec::with_capacity(averages.len() * d);
    for a in averages {
        if a.len() != d {
            return Err(Error::dim("replicate average dimension"));
        }
        rows.extend(a.iter().zip(centre).map(|(x, c)| scale * (x - c)));
    }
    sample_cov(&rows, d)
}

/// Across-replicate covariance of `θ̄ − centre`, multiplied by `cov_scale`
/// (`n^{𝔟+𝔥}` gives the quantity predicted by the iterate-average limit).
pub fn replicate_avg_cov(runs: &[RunRecord], cov_scale: f64) -> Result<Mat> {
    if !(cov_scale > 0.0) {
        return Err(Error::config("covariance scale must be positive"));
    }
    if runs.len() < MIN_REPLICATES {
        return Err(Error::InsufficientSamples(format!(
            "{} replicates, need at least {MIN_REPLICATES}",
            runs.len()
        )));
    }
    let first = &runs[0].manifest;
    let mut ids = HashSet::new();
    let mut averages = Vec::with_capacity(runs.len());
    for r in runs {
        let m = &r.manifest;
        if m.config_hash != first.config_hash || m.dataset_hash != first.dataset_hash {
            return Err(Error::Mismatch("replicates come from different configurations or datasets".into()));
        }
        if !ids.insert((m.seed, m.replicate)) {
            return Err(Error::Mismatch(format!("replicate ({}, {}) appears twice", m.seed, m.replicate)));
        }
        averages.push(
            r.average
                .clone()
                .ok_or_else(|| Error::InsufficientSamples("a replicate has an empty averaging window".into()))?,
        );
    }
    let centre = runs[0].centre.clone().unwrap_or_else(|| vec![0.0; first.d]);
    replicate_cov(&averages, &centre, cov_scale.sqrt())
}

/// Normal-theory standard errors of a sample covariance from `count` draws:
/// `√((CᵢᵢCⱼⱼ + Cᵢⱼ²)/(count − 1))`.
pub fn cov_standard_errors(c: &Mat, count: usize) -> Mat {
    let k = (count.max(2) - 1) as f64;
    Mat::from_fn(c.nrows(), c.ncols(), |i, j| ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / k).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    #[serde(with = "mat_rows")]
    pub empirical: Mat,
    #[serde(with = "mat_rows")]
    pub predicted: Mat,
    /// `‖emp − pred‖_F / ‖pred‖_F`; absent when the prediction is zero.
    pub rel_frobenius_error: Option<f64>,
    /// `‖emp − pred‖_F`.
    pub abs_frobenius_error: f64,
    #[serde(with = "mat_rows::opt")]
    pub z_scores: Option<Mat>,
    pub iact_per_coordinate: Vec<f64>,
    pub iact_worst: Option<f64>,
    pub epochs_per_iact: Option<f64>,
    pub drift_warning: bool,
}

impl ComparisonReport {
    pub fn with_iact(mut self, s: &IactSummary) -> Self {
        self.iact_per_coordinate = s.per_coordinate.clone();
        self.iact_worst = Some(s.worst);
        self.epochs_per_iact = Some(s.worst_epochs);
        self.drift_warning |= s.drift_warning;
        self
    }

    /// Relative error, or the absolute error when the prediction is zero.
    pub fn error(&self) -> f64 {
        self.rel_frobenius_error.unwrap_or(self.abs_frobenius_error)
    }
}

pub fn compare(empirical: &Mat, predicted: &Mat, se: Option<&Mat>) -> Result<ComparisonReport> {
    if empirical.shape() != predicted.shape() {
        return Err(Error::dim("empirical and predicted matrices differ in shape"));
    }
    if let Some(s) = se {
        if s.shape() != predicted.shape() {
            return Err(Error::dim("standard errors differ in shape"));
        }
    }
    let diff = empirical - predicted;
    let abs = diff.norm();
    let pn = predicted.norm();
    let z_scores = se.map(|s| diff.zip_map(s, |e, s| if s > 0.0 { e / s } else { f64::NAN }));
    Ok(ComparisonReport {
        empirical: empirical.clone(),
        predicted: predicted.clone(),
        rel_frobenius_error: (pn > 0.0).then(|| abs / pn),
        abs_frobenius_error: abs,
        z_scores,
        iact_per_coordinate: Vec::new(),
        iact_worst: None,
        epochs_per_iact: None,
        drift_warning: false,
    })
}

/// Autocorrelation functions as CSV columns `lag, <name>...`.
pub fn write_acf_csv(path: impl AsRef<Path>, columns: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(w, "lag")?;
    for (name, _) in columns {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    let rows = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    for k in 0..rows {
        write!(w, "{k}")?;
        for (_, c) in columns {
            match c.get(k) {
                Some(v) => write!(w, ",{v:.17e}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
