use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rider_core::werm::{fit_with_raw_weights, score};
use rider_core::{
    evaluate, fit_weighted_erm, predict, Metric, RiderError, TimedDataset, WeightConvention, WeightVector, WermProblem,
};

fn gaussian_dataset(rng: &mut ChaCha8Rng, t: i64, n: usize, theta: &[f64], intercept: f64, noise: f64) -> TimedDataset {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| theta.iter().map(|_| rng.sample(StandardNormal)).collect()).collect();
    let y = rows
        .iter()
        .map(|x| {
            let e: f64 = rng.sample(StandardNormal);
            x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>() + intercept + noise * e
        })
        .collect();
    TimedDataset::from_rows(t, &rows, y).unwrap()
}

fn logistic_dataset(rng: &mut ChaCha8Rng, t: i64, n: usize) -> TimedDataset {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)]).collect();
    let y = rows
        .iter()
        .map(|x| {
            let p = 1.0 / (1.0 + (-(0.8 * x[0] - 0.5 * x[1] + 0.2)).exp());
            f64::from(u8::from(rng.random::<f64>() < p))
        })
        .collect();
    TimedDataset::from_rows(t, &rows, y).unwrap()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn noise_free_data_recovers_the_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = gaussian_dataset(&mut rng, 0, 50, &[1.5, -2.0, 0.25], 0.75, 0.0);
    let model = fit_weighted_erm(&[&ds], &WeightVector::unit(1, 1).unwrap(), &WermProblem::squared()).unwrap();
    assert!(sup(&model.theta, &[1.5, -2.0, 0.25, 0.75]) < 1e-9);
    assert!(evaluate(&model, &ds, Metric::Mse).unwrap() < 1e-18);
}

#[test]
fn raw_weight_scale_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = gaussian_dataset(&mut rng, 1, 40, &[1.0, 0.5], 0.0, 1.0);
    let b = gaussian_dataset(&mut rng, 0, 70, &[-1.0, 2.0], 1.0, 1.0);
    for problem in [WermProblem::squared(), WermProblem { convention: WeightConvention::SampleSum, ..WermProblem::squared() }] {
        let base = fit_with_raw_weights(&[&a, &b], &[0.3, 0.7], &problem).unwrap();
        for c in [1e-4, 3.0, 1e5] {
            let scaled = fit_with_raw_weights(&[&a, &b], &[0.3 * c, 0.7 * c], &problem).unwrap();
            assert!(sup(&base.theta, &scaled.theta) < 1e-10);
        }
    }
}

#[test]
fn equal_weights_on_identical_datasets_match_a_single_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ds = gaussian_dataset(&mut rng, 1, 80, &[0.3, -0.7], 0.1, 0.5);
    let mut copy = ds.clone();
    copy.t = 0;
    let single = fit_weighted_erm(&[&ds], &WeightVector::unit(1, 1).unwrap(), &WermProblem::squared()).unwrap();
    let both = fit_weighted_erm(&[&ds, &copy], &WeightVector::uniform(2).unwrap(), &WermProblem::squared()).unwrap();
    assert!(sup(&single.theta, &both.theta) < 1e-12);
}

#[test]
fn dataset_mean_weights_balance_unequal_sizes() {
    // Means only: the fitted intercept is Σ β_k ȳ_k regardless of n_k.
    let a = TimedDataset::new(1, 1, vec![0.0; 3], vec![1.0, 2.0, 3.0]).unwrap();
    let b = TimedDataset::new(0, 1, vec![0.0; 7], vec![10.0; 7]).unwrap();
    let problem = WermProblem { regularization: 1.0, ..WermProblem::squared() };
    let model = fit_weighted_erm(&[&a, &b], &WeightVector::new(vec![0.25, 0.75]).unwrap(), &problem).unwrap();
    assert!((model.intercept() - (0.25 * 2.0 + 0.75 * 10.0)).abs() < 1e-12);
    assert_eq!(model.slopes(), &[0.0]);
}

#[test]
fn weighted_fit_matches_normal_equation_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let window: Vec<TimedDataset> = (0..3).map(|i| gaussian_dataset(&mut rng, 2 - i, 30 + 10 * i as usize, &[1.0, -1.0], 0.5, 1.0)).collect();
    let refs: Vec<&TimedDataset> = window.iter().collect();
    let beta = WeightVector::new(vec![0.5, 0.3, 0.2]).unwrap();
    let lambda = 0.4;
    let problem = WermProblem { regularization: lambda, ..WermProblem::squared() };
    let model = fit_weighted_erm(&refs, &beta, &problem).unwrap();

    let mut gram = DMatrix::<f64>::zeros(3, 3);
    let mut rhs = DVector::<f64>::zeros(3);
    for (ds, b) in window.iter().zip(beta.as_slice()) {
        let w = b / ds.len() as f64;
        for (x, y) in ds.rows() {
            let z = DVector::from_vec(vec![x[0], x[1], 1.0]);
            gram += &z * z.transpose() * w;
            rhs += z * (w * y);
        }
    }
    gram[(0, 0)] += lambda;
    gram[(1, 1)] += lambda;
    let oracle = gram.lu().solve(&rhs).unwrap();
    assert!(sup(&model.theta, oracle.as_slice()) < 1e-10);
}

#[test]
fn logistic_fit_is_a_stationary_point_of_a_convex_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = logistic_dataset(&mut rng, 1, 400);
    let b = logistic_dataset(&mut rng, 0, 300);
    let beta = WeightVector::new(vec![0.6, 0.4]).unwrap();
    let model = fit_weighted_erm(&[&a, &b], &beta, &WermProblem::logistic()).unwrap();

    let objective = |theta: &[f64]| -> f64 {
        [(&a, 0.6), (&b, 0.4)]
            .iter()
            .map(|(ds, w)| {
                let mean: f64 = ds
                    .rows()
                    .map(|(x, y)| {
                        let eta = theta[0] * x[0] + theta[1] * x[1] + theta[2];
                        (1.0 + eta.exp()).ln() - y * eta
                    })
                    .sum::<f64>()
                    / ds.len() as f64;
                w * mean
            })
            .sum()
    };
    let best = objective(&model.theta);
    // Analytic gradient and Hessian of the weighted mean log loss.
    let mut grad = DVector::<f64>::zeros(3);
    let mut hess = DMatrix::<f64>::zeros(3, 3);
    for (ds, w) in [(&a, 0.6), (&b, 0.4)] {
        let wi = w / ds.len() as f64;
        for (x, y) in ds.rows() {
            let z = DVector::from_vec(vec![x[0], x[1], 1.0]);
            let p = 1.0 / (1.0 + (-model.linear_predictor(x)).exp());
            grad += &z * (wi * (p - y));
            hess += &z * z.transpose() * (wi * p * (1.0 - p));
        }
    }
    assert!(grad.norm() <= 1e-8, "{}", grad.norm());
    assert!(hess.symmetric_eigenvalues().iter().all(|v| *v >= 0.0));
    for _ in 0..200 {
        let step: Vec<f64> = (0..3).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let moved: Vec<f64> = model.theta.iter().zip(&step).map(|(t, s)| t + s).collect();
        assert!(objective(&moved) >= best);
    }
    let p = predict(&model, a.features()).unwrap();
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(evaluate(&model, &a, Metric::Accuracy).unwrap() > 0.55);
}

#[test]
fn integer_weights_equal_replicated_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let window: Vec<TimedDataset> = (0..3).map(|i| gaussian_dataset(&mut rng, 2 - i, 15 + 5 * i as usize, &[0.4, -1.2], 0.3, 1.0)).collect();
    let counts = [2usize, 1, 3];
    let problem = WermProblem { convention: WeightConvention::SampleSum, ..WermProblem::squared() };
    let refs: Vec<&TimedDataset> = window.iter().collect();
    let weighted = fit_with_raw_weights(&refs, &counts.map(|c| c as f64), &problem).unwrap();

    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (ds, c) in window.iter().zip(counts) {
        for _ in 0..c {
            x.extend_from_slice(ds.features());
            y.extend_from_slice(ds.outcomes());
        }
    }
    let replicated = TimedDataset::new(0, 2, x, y).unwrap();
    let single = fit_with_raw_weights(&[&replicated], &[1.0], &problem).unwrap();
    assert!(sup(&weighted.theta, &single.theta) < 1e-10);
}

#[test]
fn separable_logistic_data_is_classified_and_ridge_shrinks_the_slope() {
    let x = vec![-2.0, -1.0, 1.0, 2.0];
    let ds = TimedDataset::new(0, 1, x, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
    let e1 = WeightVector::unit(1, 1).unwrap();
    let free = fit_weighted_erm(&[&ds], &e1, &WermProblem::logistic()).unwrap();
    assert_eq!(evaluate(&free, &ds, Metric::Accuracy).unwrap(), 1.0);
    let ridge = WermProblem { regularization: 0.1, ..WermProblem::logistic() };
    let shrunk = fit_weighted_erm(&[&ds], &e1, &ridge).unwrap().slopes()[0];
    assert!(shrunk > 0.0 && shrunk < free.slopes()[0]);
}

#[test]
fn singular_design_is_reported() {
    let ds = TimedDataset::new(0, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0], vec![1.0, 2.0, 3.0]).unwrap();
    let err = fit_weighted_erm(&[&ds], &WeightVector::unit(1, 1).unwrap(), &WermProblem::squared()).unwrap_err();
    assert!(matches!(err, RiderError::Singular(_)));
}

#[test]
fn window_and_weights_must_agree() {
    let ds = TimedDataset::new(0, 1, vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
    assert!(fit_weighted_erm(&[&ds], &WeightVector::uniform(2).unwrap(), &WermProblem::squared()).is_err());
}

#[test]
fn metric_examples() {
    assert_eq!(score(&[1.0, 2.0], &[0.0, 4.0], Metric::Mse), 2.5);
    assert_eq!(score(&[0.9, 0.2, 0.6], &[1.0, 1.0, 0.0], Metric::Accuracy), 1.0 / 3.0);
    let ll = score(&[0.5, 0.5], &[1.0, 0.0], Metric::Logloss);
    assert!((ll - 2f64.ln()).abs() < 1e-15);
    assert!(score(&[0.0], &[1.0], Metric::Logloss).is_finite());
}

proptest! {
    #[test]
    fn squared_fit_zeroes_the_weighted_gradient(seed in 0u64..500, w1 in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = gaussian_dataset(&mut rng, 1, 25, &[0.5, 1.0], 0.0, 1.0);
        let b = gaussian_dataset(&mut rng, 0, 35, &[-0.5, 0.0], 1.0, 1.0);
        let beta = WeightVector::normalized(vec![w1, 1.0 - w1 + 0.01]).unwrap();
        let model = fit_weighted_erm(&[&a, &b], &beta, &WermProblem::squared()).unwrap();
        let mut grad = [0.0; 3];
        for (ds, bk) in [(&a, beta.lag(1)), (&b, beta.lag(2))] {
            for (x, y) in ds.rows() {
                let r = model.linear_predictor(x) - y;
                let w = bk / ds.len() as f64;
                grad[0] += w * r * x[0];
                grad[1] += w * r * x[1];
                grad[2] += w * r;
            }
        }
        prop_assert!(grad.iter().all(|g| g.abs() < 1e-10));
    }
}
