use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgalab::engine::{
    run, sample_batch, stochastic_gradient, BatchPolicy, Boundary, CvAnchor, Exponent, Init, RecordingPlan,
    TuningConfig, Variant,
};
use sgalab::inference::{fit_mle, objective_gradient};
use sgalab::linalg::{self, Mat};
use sgalab::models::{generate, logistic_model, Family};
use sgalab::rng::{stream, Gaussian, StreamKind};

fn logistic_data(n: usize, seed: u64) -> (sgalab::models::ModelSpec, sgalab::models::Dataset) {
    let model = logistic_model(3).unwrap();
    let data = generate(&Family::Logistic { theta: vec![0.2, -0.8, 0.5] }, n, seed).unwrap();
    (model, data)
}

fn full_gradient(model: &sgalab::models::ModelSpec, data: &sgalab::models::Dataset, theta: &[f64]) -> Vec<f64> {
    let all: Vec<usize> = (0..data.n()).collect();
    stochastic_gradient(model, data, theta, &all, None).unwrap()
}

#[test]
fn batch_mean_is_unbiased_for_both_policies() {
    let (model, data) = logistic_data(60, 1);
    let theta = [0.4, 0.1, -0.3];
    let full = full_gradient(&model, &data, &theta);
    for policy in [BatchPolicy::WithReplacement, BatchPolicy::WithoutReplacement] {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let draws = 100_000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..draws {
            let batch = sample_batch(&mut rng, data.n(), 5, policy).unwrap();
            let g = stochastic_gradient(&model, &data, &theta, &batch, None).unwrap();
            for k in 0..3 {
                sum[k] += g[k];
                sq[k] += g[k] * g[k];
            }
        }
        for k in 0..3 {
            let mean = sum[k] / draws as f64;
            let se = ((sq[k] / draws as f64 - mean * mean) / draws as f64).sqrt();
            assert!((mean - full[k]).abs() < 5.0 * se, "{policy:?} coord {k}: {mean} vs {}", full[k]);
        }
    }
}

#[test]
fn objective_gradient_is_the_full_batch_gradient() {
    let (model, data) = logistic_data(40, 3);
    let theta = [0.1, 0.2, 0.3];
    let a = objective_gradient(&model, &data, &theta);
    let b = full_gradient(&model, &data, &theta);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-14 * (1.0 + y.abs()));
    }
}

#[test]
fn control_variate_variance_vanishes_quadratically() {
    let (model, data) = logistic_data(200, 4);
    let info = fit_mle(&model, &data, None, None).unwrap();
    let anchor = CvAnchor::new(&model, &data, &info.theta_hat);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batches: Vec<Vec<usize>> =
        (0..4000).map(|_| sample_batch(&mut rng, data.n(), 2, BatchPolicy::WithReplacement).unwrap()).collect();

    let at_anchor: Vec<Vec<f64>> = batches
        .iter()
        .map(|b| stochastic_gradient(&model, &data, &info.theta_hat, b, Some(&anchor)).unwrap())
        .collect();
    assert!(at_anchor.iter().all(|g| g == &at_anchor[0]));

    let dir = [0.6, -0.48, 0.64];
    let deltas = [1e-1, 3e-2, 1e-2, 3e-3, 1e-3];
    let mut pts = Vec::new();
    for &delta in &deltas {
        let theta: Vec<f64> = info.theta_hat.iter().zip(dir).map(|(t, u)| t + delta * u).collect();
        let gs: Vec<Vec<f64>> =
            batches.iter().map(|b| stochastic_gradient(&model, &data, &theta, b, Some(&anchor)).unwrap()).collect();
        let rows: Vec<f64> = gs.into_iter().flatten().collect();
        let var = sgalab::diagnostics::sample_cov(&rows, 3).unwrap().trace();
        pts.push((delta.ln(), var.ln()));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope - 2.0).abs() <= 0.2, "slope {slope}");
}

#[test]
fn full_batch_with_noise_is_gradient_descent_plus_innovations() {
    let (model, data) = logistic_data(30, 6);
    let n = data.n();
    let mut cfg = TuningConfig::sgd(3, 1.0, 1.0, 2.0, 1.0)
        .with_preconditioner(Mat::identity(3, 3), Mat::identity(3, 3) * 0.5)
        .with_temperature(Exponent::Finite(1.0), 3.0);
    cfg.batch = BatchPolicy::WithoutReplacement;
    cfg.seed = 11;
    let steps = 200;
    let plan = RecordingPlan { thin: 1, init: Init::Zero, ..RecordingPlan::default() };
    let rec = run(&model, &data, &cfg, steps, &plan, 0, None).unwrap();

    let h = cfg.step_size(n);
    let beta = cfg.inverse_temperature(n).unwrap();
    let root = linalg::psd_sqrt(&(&cfg.lambda * (h / beta))).unwrap();
    let mut innov = Gaussian::new(stream(cfg.seed, 0, StreamKind::Innovation));
    let mut theta = vec![0.0; 3];
    let mut xi = vec![0.0; 3];
    for k in 0..steps as usize {
        let g = full_gradient(&model, &data, &theta);
        innov.fill(&mut xi);
        for i in 0..3 {
            let noise: f64 = (0..3).map(|j| root[(i, j)] * xi[j]).sum();
            theta[i] += 0.5 * h * g[i] + noise;
        }
        for i in 0..3 {
            assert!((rec.iterate(k)[i] - theta[i]).abs() <= 1e-12 * (1.0 + theta[i].abs()));
        }
    }
}

#[test]
fn momentum_position_update_ignores_the_gradient() {
    let model = logistic_model(2).unwrap();
    let a = generate(&Family::Logistic { theta: vec![1.0, -1.0] }, 20, 1).unwrap();
    let b = generate(&Family::Logistic { theta: vec![-2.0, 3.0] }, 20, 2).unwrap();
    let mut cfg = TuningConfig::sgd(2, 1.0, 0.0, 1.0, 1.0);
    cfg.variant = Variant::Momentum { mass: Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]) };
    let plan = RecordingPlan { init: Init::Given { theta: vec![0.5, -0.5, 1.0, 2.0] }, ..RecordingPlan::default() };
    let ra = run(&model, &a, &cfg, 1, &plan, 0, None).unwrap();
    let rb = run(&model, &b, &cfg, 1, &plan, 0, None).unwrap();
    assert_eq!(ra.final_state[..2], rb.final_state[..2]);
    assert_ne!(ra.final_state[2..], rb.final_state[2..]);
}

proptest! {
    #[test]
    fn box_projection_is_faithful_and_local(
        lo in proptest::collection::vec(-5.0f64..0.0, 3),
        width in proptest::collection::vec(0.1f64..5.0, 3),
        frac in proptest::collection::vec(0.0f64..=1.0, 3),
        parts in proptest::collection::vec(-3.0f64..3.0, 9),
    ) {
        let hi: Vec<f64> = lo.iter().zip(&width).map(|(l, w)| l + w).collect();
        let boundary = Boundary::Box { lo: lo.clone(), hi: hi.clone() };
        let theta: Vec<f64> = (0..3).map(|i| lo[i] + frac[i] * width[i]).collect();
        // Increment split into prior, likelihood and innovation parts.
        let delta: Vec<f64> = (0..3).map(|i| parts[i] + parts[3 + i] + parts[6 + i]).collect();
        let mut proposal: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + d).collect();
        let inside = proposal.iter().enumerate().all(|(i, p)| (lo[i]..=hi[i]).contains(p));
        let before = proposal.clone();
        boundary.apply(&mut proposal);
        if inside {
            prop_assert_eq!(&proposal, &before);
        }
        let moved = proposal.iter().zip(&theta).map(|(p, t)| (p - t).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let bound = norm(&parts[0..3]) + norm(&parts[3..6]) + norm(&parts[6..9]);
        prop_assert!(moved <= bound * (1.0 + 1e-12) + 1e-15);
        prop_assert!(proposal.iter().enumerate().all(|(i, p)| (lo[i]..=hi[i]).contains(p)));
    }

    #[test]
    fn runs_are_deterministic(seed in 0u64..1000, steps in 1u64..200) {
        let (model, data) = logistic_data(25, 7);
        let mut cfg = TuningConfig::sgd(3, 1.0, 0.0, 1.0, 2.0).with_temperature(Exponent::Finite(1.0), 1.0);
        cfg.seed = seed;
        let plan = RecordingPlan { init: Init::Zero, ..RecordingPlan::default() };
        let a = run(&model, &data, &cfg, steps, &plan, 3, None).unwrap();
        let b = run(&model, &data, &cfg, steps, &plan, 3, None).unwrap();
        prop_assert_eq!(a.trajectory, b.trajectory);
        prop_assert_eq!(a.average, b.average);
    }

    #[test]
    fn batches_stay_in_range(n in 1usize..50, b in 1usize..60, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(batch) = sample_batch(&mut rng, n, b, BatchPolicy::WithoutReplacement) {
            prop_assert!(b <= n);
            let mut s = batch.clone();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), b);
        } else {
            prop_assert!(b > n);
        }
        let batch = sample_batch(&mut rng, n, b, BatchPolicy::WithReplacement).unwrap();
        prop_assert_eq!(batch.len(), b);
        prop_assert!(batch.iter().all(|&i| i < n));
        let _ = rng.random::<u8>();
    }
}
