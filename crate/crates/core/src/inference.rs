//! M-estimation and empirical information matrices.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, mat_rows, Mat, Vector};
use crate::models::{Dataset, ModelSpec};
use crate::rng::{data_stream, Gaussian};

/// Records per partial sum; partial sums are reduced in chunk order.
const CHUNK: usize = 4096;
const MAX_ITER: usize = 200;
const ARMIJO: f64 = 1e-4;
/// Beyond this norm the estimate is treated as escaping to infinity.
const ESCAPE_NORM: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMatrices {
    pub theta_hat: Vec<f64>,
    /// `Ĵ = −(1/n) Σ ∇²ℓ(θ̂; Xᵢ)`.
    #[serde(with = "mat_rows")]
    pub j: Mat,
    /// `Î = (1/n) Σ ∇ℓ(θ̂; Xᵢ)^{⊗2}`.
    #[serde(with = "mat_rows")]
    pub i: Mat,
    /// `Ĵ⁻¹ Î Ĵ⁻¹`, absent when `Ĵ` is singular.
    #[serde(with = "mat_rows::opt")]
    pub sandwich: Option<Mat>,
    pub grad_norm_at_mle: f64,
    pub tol: f64,
    pub iterations: usize,
    /// Some iteration fell back to a damped gradient step.
    pub gradient_fallback: bool,
}

impl InfoMatrices {
    pub fn dim(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn sandwich(&self) -> Result<&Mat> {
        self.sandwich
            .as_ref()
            .ok_or_else(|| Error::Numerical { message: "Ĵ is singular".into(), residual: f64::INFINITY })
    }

    pub fn j_inverse(&self) -> Result<Mat> {
        linalg::inverse(&self.j)
    }

    pub fn i_inverse(&self) -> Result<Mat> {
        linalg::inverse(&self.i)
    }
}

/// `(1/n) Σ ∇ℓ(θ; Xᵢ) + (1/n) ∇r(θ)`.
pub fn objective_gradient(model: &ModelSpec, data: &Dataset, theta: &[f64]) -> Vec<f64> {
    let n = data.n();
    let d = theta.len();
    let partial: Vec<Vec<f64>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut g = vec![0.0; d];
            for &k in idx {
                model.add_grad(theta, data.record(k), 1.0, &mut g);
            }
            g
        })
        .collect();
    let mut g = vec![0.0; d];
    for p in partial {
        for (a, b) in g.iter_mut().zip(p) {
            *a += b;
        }
    }
    g.iter_mut().for_each(|v| *v /= n as f64);
    model.add_prior_grad(theta, 1.0 / n as f64, &mut g);
    g
}

/// Hessian of the objective `(1/n) Σ ℓ + (1/n) r`.
fn objective_hessian(model: &ModelSpec, data: &Dataset, theta: &[f64]) -> Mat {
    let n = data.n();
    let (j, _) = empirical_info(model, data, theta);
    -j + model.prior_hessian() / n as f64
}

/// `(Ĵ(θ), Î(θ))` with `Ĵ = −(1/n)Σ∇²ℓ` and `Î = (1/n)Σ(∇ℓ)^{⊗2}`. The prior is not included.
pub fn empirical_info(model: &ModelSpec, data: &Dataset, theta: &[f64]) -> (Mat, Mat) {
    let n = data.n();
    let d = theta.len();
    let partial: Vec<(Mat, Mat)> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|idx| {
            let mut h = Mat::zeros(d, d);
            let mut s = Mat::zeros(d, d);
            let mut g = vec![0.0; d];
            for &k in idx {
                let x = data.record(k);
                model.add_hessian(theta, x, 1.0, &mut h);
                g.iter_mut().for_each(|v| *v = 0.0);
                model.add_grad(theta, x, 1.0, &mut g);
                for b in 0..d {
                    for a in 0..d {
                        s[(a, b)] += g[a] * g[b];
                    }
                }
            }
            (h, s)
        })
        .collect();
    let mut h = Mat::zeros(d, d);
    let mut s = Mat::zeros(d, d);
    for (ph, ps) in partial {
        h += ph;
        s += ps;
    }
    let j = match model.constant_hessian() {
        Some(c) => -c,
        None => -h / n as f64,
    };
    let i = s / n as f64;
    // Both are symmetric by construction; enforce it bitwise.
    (linalg::sym(&j).expect("square"), linalg::sym(&i).expect("square"))
}

/// `J⁻¹ I J⁻¹` through two LU solves.
pub fn sandwich(j: &Mat, i: &Mat) -> Result<Mat> {
    let x = linalg::solve(j, i)?;
    let s = linalg::solve(&j.transpose(), &x.transpose())?.transpose();
    linalg::sym(&s)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Newton's method with step halving (Armijo condition on the gradient norm).
///
/// Converged means `‖∇‖ ≤ tol` and the Newton step is below `1e-4 (1 + ‖θ‖)`; the
/// second condition keeps estimates that escape to infinity (separable logistic
/// data) from being reported as converged. `tol` defaults to
/// `1e-10 (1 + ‖∇ at init‖)`.
pub fn fit_mle(
    model: &ModelSpec,
    data: &Dataset,
    init: Option<&[f64]>,
    tol: Option<f64>,
) -> Result<InfoMatrices> {
    let d = model.dim();
    model.validate_dataset(data)?;
    let mut theta = match init {
        Some(t) if t.len() != d => return Err(Error::dim("initial value dimension")),
        Some(t) => t.to_vec(),
        None => vec![0.0; d],
    };
    let mut g = objective_gradient(model, data, &theta);
    let tol = tol.unwrap_or(1e-10 * (1.0 + norm(&g)));
    if !(tol > 0.0) {
        return Err(Error::config("tolerance must be positive"));
    }
    let mut fallback = false;
    let mut iterations = 0;
    loop {
        let h = objective_hessian(model, data, &theta);
        let gv = Vector::from_column_slice(&g);
        // Ascent direction: Newton if the Hessian is negative definite along it.
        let newton = linalg::solve_vec(&(-&h), &gv).ok().filter(|s| {
            s.iter().all(|v| v.is_finite()) && s.dot(&gv) > 0.0
        });
        let gnorm = norm(&g);
        let is_newton = newton.is_some();
        if !is_newton && gnorm <= tol {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: gnorm,
                last_iterate: theta,
                reason: "curvature vanishes at a near-stationary point; the estimate may lie at infinity (e.g. separable data)".into(),
            });
        }
        let step = match newton {
            Some(s) => s,
            None => {
                fallback = true;
                log::warn!("Newton system singular or indefinite at iteration {iterations}; using a gradient step");
                // Scale by the curvature estimate so the first trial is reasonable.
                let curv = linalg::spectral_norm(&h).max(1e-8);
                gv / curv
            }
        };
        let snorm = step.norm();
        let tnorm = norm(&theta);
        if is_newton && gnorm <= tol && snorm <= 1e-4 * (1.0 + tnorm) {
            break;
        }
        if iterations >= MAX_ITER || tnorm > ESCAPE_NORM || !gnorm.is_finite() {
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: gnorm,
                last_iterate: theta,
                reason: if tnorm > ESCAPE_NORM || iterations >= MAX_ITER {
                    "iterates are not settling; the estimate may lie at infinity (e.g. separable data)"
                        .into()
                } else {
                    "gradient became non-finite".into()
                },
            });
        }
        iterations += 1;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let gc = objective_gradient(model, data, &cand);
            let gc_norm = norm(&gc);
            if gc_norm.is_finite() && gc_norm <= (1.0 - ARMIJO * t) * gnorm {
                theta = cand;
                g = gc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if is_newton && gnorm <= tol {
                // Already at the floor of attainable precision.
                break;
            }
            return Err(Error::NoConvergence {
                iterations,
                grad_norm: gnorm,
                last_iterate: theta,
                reason: "line search could not reduce the gradient norm".into(),
            });
        }
    }

    // Postcondition, re-evaluated independently of the loop state.
    let g_final = objective_gradient(model, data, &theta);
    let grad_norm_at_mle = norm(&g_final);
    if grad_norm_at_mle > tol {
        return Err(Error::NoConvergence {
            iterations,
            grad_norm: grad_norm_at_mle,
            last_iterate: theta,
            reason: "final gradient norm above tolerance".into(),
        });
    }
    let (j, i) = empirical_info(model, data, &theta);
    let sw = sandwich(&j, &i).ok();
    Ok(InfoMatrices {
        theta_hat: theta,
        j,
        i,
        sandwich: sw,
        grad_norm_at_mle,
        tol,
        iterations,
        gradient_fallback: fallback,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Radius of the probed ball, `radius / n^𝔴`.
    pub ball_radius: f64,
    pub probes: usize,
    /// `sup ‖Ĵ(θ) − Ĵ(θ̂)‖_F` over the probes.
    pub j_sup: f64,
    /// `sup ‖Î(θ) − Î(θ̂)‖_F` over the probes.
    pub i_sup: f64,
}

/// Probes `Ĵ` and `Î` at points drawn uniformly from the ball of radius
/// `radius / n^frak_w` around `θ̂`. Advisory only.
pub fn assumption_diagnostics(
    model: &ModelSpec,
    data: &Dataset,
    info: &InfoMatrices,
    radius: f64,
    probes: usize,
    frak_w: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    if !(radius >= 0.0) {
        return Err(Error::config("radius must be non-negative"));
    }
    let d = info.dim();
    let r = radius / (data.n() as f64).powf(frak_w);
    let mut rng = Gaussian::new(data_stream(seed ^ 0x9e37_79b9_7f4a_7c15));
    let mut j_sup: f64 = 0.0;
    let mut i_sup: f64 = 0.0;
    let mut dir = vec![0.0; d];
    for _ in 0..probes {
        rng.fill(&mut dir);
        let len = norm(&dir).max(f64::MIN_POSITIVE);
        let u: f64 = rng.rng_mut().random();
        let rad = r * u.powf(1.0 / d as f64);
        let theta: Vec<f64> =
            info.theta_hat.iter().zip(&dir).map(|(t, z)| t + rad * z / len).collect();
        let (j, i) = empirical_info(model, data, &theta);
        j_sup = j_sup.max((j - &info.j).norm());
        i_sup = i_sup.max((i - &info.i).norm());
    }
    Ok(AssumptionReport { ball_radius: r, probes, j_sup, i_sup })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{
        exp1_covariance, gaussian_location_model, generate, inverse_sqrt_weights, logistic_model,
        poisson_model, Family, Provenance,
    };

    fn exp1_family(d: usize) -> Family {
        Family::GaussianLocation { mean: vec![0.0; d], cov: linalg::to_rows(&exp1_covariance(d)) }
    }

    #[test]
    fn gaussian_mle_is_sample_mean() {
        let d = 4;
        let m = gaussian_location_model(vec![1.0, 0.5, 3.0, 0.1]).unwrap();
        let data = generate(&exp1_family(d), 500, 1).unwrap();
        let info = fit_mle(&m, &data, None, None).unwrap();
        for k in 0..d {
            let mean = data.records().map(|r| r[k]).sum::<f64>() / 500.0;
            assert!((info.theta_hat[k] - mean).abs() < 1e-12);
        }
        assert!(!info.gradient_fallback);
        let w = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.5, 3.0, 0.1]));
        assert_eq!(info.j, w);
    }

    #[test]
    fn separable_logistic_reports_non_convergence() {
        let m = logistic_model(2).unwrap();
        let rows = vec![
            vec![1.0, -1.0, 0.0],
            vec![1.0, -0.5, 0.0],
            vec![1.0, 0.5, 1.0],
            vec![1.0, 1.0, 1.0],
        ];
        let data = Dataset::from_rows(rows, Provenance::InMemory).unwrap();
        match fit_mle(&m, &data, None, None) {
            Err(Error::NoConvergence { last_iterate, .. }) => assert!(last_iterate[1] > 10.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Cyclic coordinate ascent with scalar Newton steps, an oracle independent of the solver.
    fn coordinate_ascent(m: &ModelSpec, data: &Dataset) -> Vec<f64> {
        let d = m.dim();
        let mut theta = vec![0.0; d];
        for _ in 0..10_000 {
            let mut moved: f64 = 0.0;
            for k in 0..d {
                for _ in 0..50 {
                    let mut g = 0.0;
                    let mut h = 0.0;
                    for x in data.records() {
                        g += m.grad(&theta, x)[k];
                        h += m.hessian(&theta, x)[(k, k)];
                    }
                    let s = -g / h;
                    theta[k] += s;
                    moved = moved.max(s.abs());
                    if s.abs() < 1e-15 {
                        break;
                    }
                }
            }
            if moved < 1e-14 {
                break;
            }
        }
        theta
    }

    #[test]
    fn poisson_matches_coordinate_ascent() {
        let m = poisson_model(2).unwrap();
        let data = generate(&Family::Poisson { theta: vec![0.5, -0.8], zero_inflation: 0.0 }, 50, 2)
            .unwrap();
        let info = fit_mle(&m, &data, None, None).unwrap();
        let oracle = coordinate_ascent(&m, &data);
        for k in 0..2 {
            assert!((info.theta_hat[k] - oracle[k]).abs() < 1e-8, "{:?} {:?}", info.theta_hat, oracle);
        }
    }

    #[test]
    fn postcondition_and_sandwich() {
        let m = logistic_model(3).unwrap();
        let data = generate(&Family::Logistic { theta: vec![0.2, 1.0, -0.5] }, 2000, 3).unwrap();
        let info = fit_mle(&m, &data, None, None).unwrap();
        let g = objective_gradient(&m, &data, &info.theta_hat);
        assert!(norm(&g) <= info.tol);
        let jinv = info.j_inverse().unwrap();
        let direct = &jinv * &info.i * &jinv;
        let sw = info.sandwich().unwrap();
        assert!((sw - &direct).norm() / direct.norm() < 1e-10);
        assert!(linalg::is_symmetric(sw, 0.0));
        assert!(linalg::symmetric_eigenvalues(&info.i).unwrap()[0] >= -1e-12);
    }

    #[test]
    fn information_matrix_is_score_covariance() {
        let m = poisson_model(2).unwrap();
        let data = generate(&Family::Poisson { theta: vec![0.3, 0.3], zero_inflation: 0.2 }, 300, 4)
            .unwrap();
        let info = fit_mle(&m, &data, None, None).unwrap();
        let scores: Vec<Vec<f64>> = data.records().map(|x| m.grad(&info.theta_hat, x)).collect();
        let n = scores.len() as f64;
        let mean: Vec<f64> = (0..2).map(|k| scores.iter().map(|s| s[k]).sum::<f64>() / n).collect();
        for a in 0..2 {
            for b in 0..2 {
                let c = scores.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / n;
                assert!((c + mean[a] * mean[b] - info.i[(a, b)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn empirical_information_is_consistent() {
        let d = 10;
        let n = 100_000;
        let w = inverse_sqrt_weights(d);
        let m = gaussian_location_model(w.clone()).unwrap();
        let data = generate(&exp1_family(d), n, 5).unwrap();
        let (_, i) = empirical_info(&m, &data, &vec![0.0; d]);
        let dm = Mat::from_diagonal(&Vector::from_vec(w));
        let target = &dm * exp1_covariance(d) * &dm;
        assert!((&i - &target).norm() <= 5.0 / (n as f64).sqrt() * target.norm());
    }

    #[test]
    fn chunked_sums_do_not_depend_on_thread_count() {
        let m = logistic_model(3).unwrap();
        let data = generate(&Family::Logistic { theta: vec![0.1, 0.2, 0.3] }, 20_000, 6).unwrap();
        let theta = [0.1, 0.2, 0.3];
        let a = empirical_info(&m, &data, &theta);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| empirical_info(&m, &data, &theta));
        assert_eq!(a, b);
    }

    #[test]
    fn diagnostics_edge_cases() {
        let m = gaussian_location_model(inverse_sqrt_weights(3)).unwrap();
        let data = generate(&exp1_family(3), 100, 7).unwrap();
        let info = fit_mle(&m, &data, None, None).unwrap();
        let r0 = assumption_diagnostics(&m, &data, &info, 0.0, 10, 0.5, 1).unwrap();
        assert_eq!((r0.j_sup, r0.i_sup), (0.0, 0.0));
        let r = assumption_diagnostics(&m, &data, &info, 3.0, 10, 0.5, 1).unwrap();
        assert_eq!(r.j_sup, 0.0);
        assert!(r.i_sup > 0.0);
    }

    #[test]
    fn logistic_diagnostic_sup_shrinks_with_n() {
        let m = logistic_model(3).unwrap();
        let fam = Family::Logistic { theta: vec![0.5, -1.0, 1.0] };
        let mut medians = Vec::new();
        for &n in &[1_000usize, 10_000, 100_000] {
            let mut sups: Vec<f64> = (0..20)
                .map(|rep| {
                    let data = generate(&fam, n, 100 + rep).unwrap();
                    let info = fit_mle(&m, &data, None, None).unwrap();
                    let r = assumption_diagnostics(&m, &data, &info, 3.0, 5, 0.5, rep).unwrap();
                    r.j_sup + r.i_sup
                })
                .collect();
            sups.sort_by(f64::total_cmp);
            medians.push(0.5 * (sups[9] + sups[10]));
        }
        assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
    }

    #[test]
    fn j_and_i_agree_more_closely_as_n_grows() {
        let m = logistic_model(3).unwrap();
        let fam = Family::Logistic { theta: vec![0.5, -1.0, 1.0] };
        let gap = |n: usize| -> f64 {
            let mut v: Vec<f64> = (0..9)
                .map(|rep| {
                    let data = generate(&fam, n, 200 + rep).unwrap();
                    let info = fit_mle(&m, &data, None, None).unwrap();
                    (&info.j - &info.i).norm() / info.j.norm()
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v[4]
        };
        assert!(gap(10_000) < gap(1_000));
    }
}
