//! The predict, simulate, compare and tune operations and their artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sgalab::diagnostics::{
    self, acf, compare as compare_cov, cov_standard_errors, empirical_cov, iact_summary, replicate_avg_cov,
    ComparisonReport,
};
use sgalab::engine::{run_replicates, CvAnchor, Manifest, RunRecord, Variant};
use sgalab::linalg::{self, Mat};
use sgalab::theory::{
    mixing_time, ou_params, predict as predict_report, recommend_tuning, MixingTime, Preferences,
    PredictionReport, Recommendation, ScalingLaw,
};
use sgalab::{Error, Result};

use crate::config::{Preconditioner, TuningBlock};
use crate::setup::{Problem, Setup};

pub const PREDICTIONS: &str = "predictions.json";
pub const MANIFEST: &str = "manifest.json";
pub const COMPARISON: &str = "comparison.json";
pub const COMPARISON_TABLE: &str = "comparison.txt";
pub const RECOMMENDATION: &str = "recommendation.json";

/// Every JSON artifact carries the tuning hash, the dataset hash and the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub kind: String,
    pub config_hash: String,
    pub dataset_hash: String,
    pub seed: u64,
    pub body: T,
}

impl<T: Serialize + DeserializeOwned> Artifact<T> {
    fn new(kind: &str, setup: &Setup, body: T) -> Self {
        Self {
            kind: kind.into(),
            config_hash: setup.tuning.hash(),
            dataset_hash: setup.problem.data.hash(),
            seed: setup.tuning.seed,
            body,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Mismatch(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Mismatch(format!("{}: {e}", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Predictions {
    pub report: PredictionReport,
    /// Mixing time with truth matrices in place of every empirical plug-in.
    pub mixing_truth: Option<MixingTime>,
}

/// Writes `predictions.json`. With `require_stationary` a non-Hurwitz drift is an error.
pub fn predict(setup: &Setup, out: &Path, require_stationary: bool) -> Result<Artifact<Predictions>> {
    ensure_dir(out)?;
    let p = &setup.cfg.prediction;
    let report = predict_report(
        &setup.tuning,
        &setup.j,
        &setup.i,
        setup.n(),
        &p.m_values,
        &p.t_grid,
        require_stationary,
    )?;
    let mixing_truth = match (setup.with_truth(), p.information) {
        (Some(truth), crate::config::Information::Empirical) => truth
            .and_then(|(cfg, j, i)| {
                let law = ScalingLaw::for_config(&cfg)?;
                mixing_time(&ou_params(&cfg, &law, j, i)?, setup.n())
            })
            .ok(),
        _ => None,
    };
    let artifact = Artifact::new("predictions", setup, Predictions { report, mixing_truth });
    artifact.write(&out.join(PREDICTIONS))?;
    Ok(artifact)
}

/// Per-replicate JSON next to `trace_{r}.csv`. Together they rebuild the run record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateArtifact {
    pub manifest: Manifest,
    pub trace: String,
    pub average: Option<Vec<f64>>,
    pub average_count: u64,
    #[serde(with = "linalg::mat_rows")]
    pub window_m2: Mat,
    pub centre: Option<Vec<f64>>,
    pub scale: f64,
    pub final_state: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicateEntry {
    pub replicate: u64,
    pub manifest: String,
    pub trace: String,
    pub diverged_at: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunIndex {
    pub n: usize,
    pub d: usize,
    pub batch_size: usize,
    pub steps: u64,
    pub epochs: f64,
    pub thin: u64,
    pub avg_start: u64,
    pub burnin_fraction: f64,
    pub theta_hat: Vec<f64>,
    /// `n^𝔴`.
    pub scale: f64,
    pub replicates: Vec<ReplicateEntry>,
}

pub struct Simulation {
    pub index: Artifact<RunIndex>,
    pub records: Vec<RunRecord>,
    /// `(replicate, step)` for every diverged chain; their partial traces are on disk.
    pub diverged: Vec<(u64, u64)>,
}

/// Runs every replicate and writes `trace_{r}.csv`, `manifest_{r}.json` and `manifest.json`.
pub fn simulate(setup: &Setup, out: &Path) -> Result<Simulation> {
    ensure_dir(out)?;
    let problem = setup.problem;
    let steps = setup.steps()?;
    let plan = setup.plan()?;
    let anchor = matches!(setup.tuning.variant, Variant::ControlVariate)
        .then(|| CvAnchor::new(&problem.model, &problem.data, &problem.info.theta_hat));
    let count = setup.cfg.execution.replicates;
    if count == 0 {
        return Err(Error::Config("execution.replicates must be at least 1".into()));
    }
    let results = run_replicates(&problem.model, &problem.data, &setup.tuning, steps, &plan, count, anchor.as_ref());
    let mut records = Vec::with_capacity(results.len());
    let mut diverged = Vec::new();
    let mut entries = Vec::with_capacity(results.len());
    for res in results {
        let rec = match res {
            Ok(r) => r,
            Err(Error::Diverged { step, partial }) => {
                diverged.push((partial.manifest.replicate, step));
                *partial
            }
            Err(e) => return Err(e),
        };
        let r = rec.manifest.replicate;
        let trace = format!("trace_{r}.csv");
        let manifest = format!("manifest_{r}.json");
        rec.write_trajectory_csv(out.join(&trace))?;
        let art = ReplicateArtifact {
            manifest: rec.manifest.clone(),
            trace: trace.clone(),
            average: rec.average.clone(),
            average_count: rec.average_count,
            window_m2: rec.window_m2.clone(),
            centre: rec.centre.clone(),
            scale: rec.scale,
            final_state: rec.final_state.clone(),
        };
        write_json(&out.join(&manifest), &art)?;
        entries.push(ReplicateEntry { replicate: r, manifest, trace, diverged_at: rec.manifest.diverged_at });
        records.push(rec);
    }
    let b = setup.batch_size();
    let index = RunIndex {
        n: setup.n(),
        d: problem.model.dim(),
        batch_size: b,
        steps,
        epochs: steps as f64 * b as f64 / setup.n() as f64,
        thin: plan.thin,
        avg_start: plan.avg_start,
        burnin_fraction: setup.cfg.execution.burnin_fraction,
        theta_hat: problem.info.theta_hat.clone(),
        scale: plan.scale,
        replicates: entries,
    };
    let index = Artifact::new("run", setup, index);
    index.write(&out.join(MANIFEST))?;
    Ok(Simulation { index, records, diverged })
}

fn read_trace(path: &Path, d: usize) -> Result<(Vec<f64>, Vec<u64>)> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(|e| {
        Error::Mismatch(format!("cannot read {}: {e}", path.display()))
    })?;
    let mut values = Vec::new();
    let mut steps = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Mismatch(format!("{}: {e}", path.display())))?;
        if rec.len() != d + 2 {
            return Err(Error::Mismatch(format!("{}: row {} has {} fields", path.display(), row + 1, rec.len())));
        }
        let bad = || Error::Mismatch(format!("{}: unparseable row {}", path.display(), row + 1));
        steps.push(rec[0].parse::<u64>().map_err(|_| bad())?);
        for f in rec.iter().skip(2) {
            values.push(f.parse::<f64>().map_err(|_| bad())?);
        }
    }
    Ok((values, steps))
}

/// Reloads every replicate listed in `manifest.json`.
pub fn load_run(dir: &Path) -> Result<(Artifact<RunIndex>, Vec<RunRecord>)> {
    let index: Artifact<RunIndex> = Artifact::read(&dir.join(MANIFEST))?;
    let mut records = Vec::with_capacity(index.body.replicates.len());
    for e in &index.body.replicates {
        let text = std::fs::read_to_string(dir.join(&e.manifest))
            .map_err(|err| Error::Mismatch(format!("cannot read {}: {err}", e.manifest)))?;
        let art: ReplicateArtifact =
            serde_json::from_str(&text).map_err(|err| Error::Mismatch(format!("{}: {err}", e.manifest)))?;
        if art.manifest.config_hash != index.config_hash || art.manifest.dataset_hash != index.dataset_hash {
            return Err(Error::Mismatch(format!("{} belongs to a different run", e.manifest)));
        }
        let (trajectory, trajectory_steps) = read_trace(&dir.join(&art.trace), art.manifest.d)?;
        records.push(RunRecord {
            manifest: art.manifest,
            trajectory,
            trajectory_steps,
            average: art.average,
            average_count: art.average_count,
            window_m2: art.window_m2,
            centre: art.centre,
            scale: art.scale,
            final_state: art.final_state,
        });
    }
    Ok((index, records))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixingComparison {
    pub predicted_epochs_iact: f64,
    pub predicted_epochs_gap: f64,
    /// Mean over replicates of the worst projected IACT, in epochs.
    pub empirical_epochs_iact: f64,
    pub per_replicate_epochs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AverageComparison {
    pub m: f64,
    pub replicates: usize,
    pub two_term: ComparisonReport,
    pub simple: Option<ComparisonReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Comparison {
    pub replicates_used: usize,
    pub diverged: Vec<u64>,
    pub stationary: Option<ComparisonReport>,
    pub mixing: Option<MixingComparison>,
    pub averages: Vec<AverageComparison>,
    pub notes: Vec<String>,
}

/// Compares `predictions.json` with the runs in `dir`; refuses if any hash differs
/// from the configuration's.
pub fn compare(setup: &Setup, dir: &Path) -> Result<Artifact<Comparison>> {
    let pred: Artifact<Predictions> = Artifact::read(&dir.join(PREDICTIONS))?;
    let (index, records) = load_run(dir)?;
    let hash = setup.tuning.hash();
    let data_hash = setup.problem.data.hash();
    for (what, h, dh) in [
        ("predictions", &pred.config_hash, &pred.dataset_hash),
        ("run", &index.config_hash, &index.dataset_hash),
    ] {
        if *h != hash {
            return Err(Error::Mismatch(format!("{what} config hash {h} differs from the configuration's {hash}")));
        }
        if *dh != data_hash {
            return Err(Error::Mismatch(format!("{what} dataset hash {dh} differs from the configuration's")));
        }
    }
    let report = &pred.body.report;
    let burnin = index.body.burnin_fraction;
    let mut notes = Vec::new();
    let diverged: Vec<u64> =
        records.iter().filter(|r| r.manifest.diverged_at.is_some()).map(|r| r.manifest.replicate).collect();
    let runs: Vec<&RunRecord> = records.iter().filter(|r| r.manifest.diverged_at.is_none()).collect();
    if !diverged.is_empty() {
        notes.push(format!("{} of {} replicates diverged and are excluded", diverged.len(), records.len()));
    }

    let mut stationary = None;
    let mut mixing = None;
    let drift = (!report.ou.is_lifted()).then_some(&report.ou.b);
    if let (Some(q), Some(first)) = (&report.q_inf, runs.first()) {
        let covs: Result<Vec<Mat>> = runs.iter().map(|r| empirical_cov(r, burnin)).collect();
        match covs {
            Ok(covs) => {
                let mean = covs.iter().fold(Mat::zeros(q.nrows(), q.ncols()), |acc, c| acc + c) / covs.len() as f64;
                stationary = Some(compare_cov(&mean, q, None)?);
            }
            Err(Error::InsufficientSamples(m)) => notes.push(format!("stationary covariance skipped: {m}")),
            Err(e) => return Err(e),
        }
        match runs.iter().map(|r| iact_summary(r, burnin, drift)).collect::<Result<Vec<_>>>() {
            Ok(sums) => {
                if let Some(s) = &mut stationary {
                    *s = s.clone().with_iact(&sums[0]);
                }
                if sums.iter().any(|s| s.drift_warning) {
                    notes.push("a chain drifts between its halves; it may not have reached stationarity".into());
                }
                if let Some(pm) = &report.mixing {
                    let per: Vec<f64> = sums.iter().map(|s| s.worst_epochs).collect();
                    mixing = Some(MixingComparison {
                        predicted_epochs_iact: pm.epochs_iact,
                        predicted_epochs_gap: pm.epochs_gap,
                        empirical_epochs_iact: per.iter().sum::<f64>() / per.len() as f64,
                        per_replicate_epochs: per,
                    });
                }
                write_acf(dir, first, burnin)?;
            }
            Err(Error::InsufficientSamples(m)) => notes.push(format!("autocorrelation skipped: {m}")),
            Err(e) => return Err(e),
        }
    } else if report.q_inf.is_none() {
        notes.push("no stationary law is predicted; covariance and mixing comparisons skipped".into());
    }

    let mut averages = Vec::new();
    if !report.avg_cov.is_empty() {
        let b = index.body.batch_size as f64;
        let n = index.body.n as f64;
        let window = (index.body.steps - index.body.avg_start) as f64 * b / n;
        // Windows are whole iterations, so `m` is matched to within one of them.
        match report.avg_cov.iter().find(|a| (a.m - window).abs() <= b / n * (1.0 + 1e-9)) {
            None => notes.push(format!(
                "averaging window is {window} epochs but predictions cover m = {:?}",
                report.avg_cov.iter().map(|a| a.m).collect::<Vec<_>>()
            )),
            Some(pred_avg) => {
                let owned: Vec<RunRecord> = runs.iter().map(|r| (*r).clone()).collect();
                // The averaging limit is stated for `n · Cov(θ̄)`.
                match replicate_avg_cov(&owned, n) {
                    Ok(emp) => {
                        let se = cov_standard_errors(&emp, owned.len());
                        averages.push(AverageComparison {
                            m: pred_avg.m,
                            replicates: owned.len(),
                            two_term: compare_cov(&emp, &pred_avg.two_term, Some(&se))?,
                            simple: pred_avg.simple.as_ref().map(|s| compare_cov(&emp, s, Some(&se))).transpose()?,
                        });
                    }
                    Err(Error::InsufficientSamples(m)) => notes.push(format!("iterate averages skipped: {m}")),
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let body = Comparison { replicates_used: runs.len(), diverged, stationary, mixing, averages, notes };
    let artifact = Artifact::new("comparison", setup, body);
    artifact.write(&dir.join(COMPARISON))?;
    std::fs::write(dir.join(COMPARISON_TABLE), table(&artifact))?;
    Ok(artifact)
}

/// Per-coordinate autocorrelations of replicate 0 after burn-in.
fn write_acf(dir: &Path, run: &RunRecord, burnin: f64) -> Result<()> {
    let d = run.d();
    let skip = (run.len() as f64 * burnin).floor() as usize;
    let rows = &run.trajectory[skip * d..];
    let len = rows.len() / d;
    let max_lag = (len / 10).clamp(1, 2000);
    let mut cols = Vec::with_capacity(d);
    for k in 0..d {
        let s: Vec<f64> = rows.chunks_exact(d).map(|r| r[k]).collect();
        if let Some(a) = acf(&s, max_lag) {
            cols.push((format!("theta_{}", k + 1), a));
        }
    }
    diagnostics::write_acf_csv(dir.join(format!("acf_{}.csv", run.manifest.replicate)), &cols)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.3}"))
}

/// Human-readable summary of a comparison.
pub fn table(a: &Artifact<Comparison>) -> String {
    let c = &a.body;
    let mut s = String::new();
    let _ = writeln!(s, "config {}  seed {}  replicates {}", &a.config_hash[..12], a.seed, c.replicates_used);
    let _ = writeln!(s, "{:<34} {:>12} {:>12} {:>10}", "quantity", "empirical", "predicted", "rel.err");
    if let Some(st) = &c.stationary {
        let _ = writeln!(
            s,
            "{:<34} {:>12.4} {:>12.4} {:>10}",
            "stationary cov (trace)",
            st.empirical.trace(),
            st.predicted.trace(),
            fmt_opt(Some(st.error()))
        );
    }
    if let Some(m) = &c.mixing {
        let rel = (m.empirical_epochs_iact - m.predicted_epochs_iact).abs() / m.predicted_epochs_iact;
        let _ = writeln!(
            s,
            "{:<34} {:>12.3} {:>12.3} {:>10.3}",
            "IACT (epochs)", m.empirical_epochs_iact, m.predicted_epochs_iact, rel
        );
    }
    for av in &c.averages {
        let _ = writeln!(
            s,
            "{:<34} {:>12.4} {:>12.4} {:>10.3}",
            format!("average m={} two-term (trace)", av.m),
            av.two_term.empirical.trace(),
            av.two_term.predicted.trace(),
            av.two_term.error()
        );
        if let Some(simple) = &av.simple {
            let _ = writeln!(
                s,
                "{:<34} {:>12.4} {:>12.4} {:>10.3}",
                format!("average m={} simple (trace)", av.m),
                simple.empirical.trace(),
                simple.predicted.trace(),
                simple.error()
            );
        }
    }
    for n in &c.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tuned {
    pub recommendation: Recommendation,
    /// The recommended tuning as a configuration block.
    pub tuning: TuningBlock,
}

/// Writes `recommendation.json` and `recommended.toml` for the `[tune]` block.
pub fn tune(problem: &Problem, cfg: &crate::config::RunConfig, out: &Path) -> Result<Artifact<Tuned>> {
    let block = cfg.tune.as_ref().ok_or_else(|| Error::Config("tune needs a [tune] block".into()))?;
    let (j, i) = problem.information(cfg.prediction.information)?;
    let mut prefs = Preferences::new(block.family);
    prefs.frak_b = block.frak_b;
    prefs.c_b = block.c_b;
    prefs.batch = block.batch;
    prefs.allow_preconditioner = block.allow_preconditioner;
    prefs.seed = cfg.execution.seed;
    let rec = recommend_tuning(block.target, j, i, problem.n(), &prefs)?;
    let c = &rec.config;
    let tuning = TuningBlock {
        frak_h: c.frak_h,
        frak_b: c.frak_b,
        frak_t: c.frak_t,
        c_h: c.c_h,
        c_b: c.c_b,
        c_beta: c.c_beta,
        preconditioner: Preconditioner::Matrix(linalg::to_rows(&c.gamma)),
        noise: Some(Preconditioner::Matrix(linalg::to_rows(&c.lambda))),
        batch: c.batch,
        variant: c.variant.clone(),
        boundary: None,
    };
    ensure_dir(out)?;
    let artifact = Artifact {
        kind: "recommendation".into(),
        config_hash: c.hash(),
        dataset_hash: problem.data.hash(),
        seed: c.seed,
        body: Tuned { recommendation: rec, tuning },
    };
    artifact.write(&out.join(RECOMMENDATION))?;
    #[derive(Serialize)]
    struct Wrapper<'a> {
        tuning: &'a TuningBlock,
    }
    let text = toml::to_string(&Wrapper { tuning: &artifact.body.tuning }).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(out.join("recommended.toml"), text)?;
    Ok(artifact)
}

pub fn out_dir(flag: Option<PathBuf>, cfg: &crate::config::RunConfig) -> PathBuf {
    flag.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"))
}
