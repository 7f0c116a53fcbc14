use rider_core::backtest::{paired_t_test, weight_trajectory_summary, TargetResult};
use rider_core::{
    closed_form_pooling, compare_methods, evaluate, exponential_reference_weights, fit_weighted_erm, run_backtest,
    simulate_panel, ArmaShiftProcess, BacktestConfig, BacktestReport, EstimationConfig, Method, Metric, Panel,
    ParentDistribution, RiderError, TargetRange, TimedDataset, WermProblem,
};

fn shifted_panel(t_len: usize, seed: u64) -> Panel {
    let parent = ParentDistribution::linear_model(vec![1.0, -0.5, 0.25], 1.0).unwrap();
    let proc = ArmaShiftProcess::gamma(vec![0.8], vec![], 0.09).unwrap();
    simulate_panel(&parent, &proc, t_len, 20, &vec![80; t_len], seed).unwrap().0
}

fn rider(k: usize) -> Method {
    Method::RiderNonparametric { estimation: EstimationConfig::new(k), test_functions: None }
}

fn report(method: &str, k: usize, scores: &[f64], betas: Option<Vec<Vec<f64>>>) -> BacktestReport {
    let results: Vec<TargetResult> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| TargetResult {
            t: i as i64,
            score: Some(*s),
            error: None,
            beta: betas.as_ref().map(|b| b[i].clone()),
            fitted_at: Some(i as i64),
        })
        .collect();
    let mut r = BacktestReport { method: method.into(), k, metric: Metric::Mse, results, aggregate: 0.0 };
    r.aggregate = r.recompute_aggregate();
    r
}

#[test]
fn single_target_pooling_is_a_direct_fit() {
    let panel = shifted_panel(12, 1);
    let target = panel.dataset(9).t;
    let mut config = BacktestConfig::new(5, Method::Pooling);
    config.targets = TargetRange { first: Some(target), last: Some(target) };
    let rep = run_backtest(&panel, &config).unwrap();
    assert_eq!(rep.results.len(), 1);

    let window = panel.window_before(9, 5).unwrap();
    let sizes: Vec<usize> = window.iter().map(|d| d.len()).collect();
    let beta = closed_form_pooling(&sizes).unwrap();
    let model = fit_weighted_erm(&window, &beta, &WermProblem::squared()).unwrap();
    let direct = evaluate(&model, panel.dataset(9), Metric::Mse).unwrap();
    assert_eq!(rep.results[0].score, Some(direct));
    assert_eq!(rep.results[0].beta.as_deref(), Some(beta.as_slice()));
}

#[test]
fn models_only_see_the_past() {
    let panel = shifted_panel(30, 2);
    let config = BacktestConfig::new(5, rider(5));
    let base = run_backtest(&panel, &config).unwrap();

    let pos = 20;
    let mut mutated = panel.clone();
    for i in pos..mutated.len() {
        for y in mutated.dataset_mut(i).outcomes_mut() {
            *y = -3.0 * *y + 7.0;
        }
    }
    let moved = run_backtest(&mutated, &config).unwrap();
    let t = panel.dataset(pos).t;
    for (a, b) in base.results.iter().zip(&moved.results) {
        if a.t <= t {
            assert_eq!(a.beta, b.beta, "weights at target {} changed", a.t);
        }
    }
    // The model at t is the one fitted from earlier data: rescoring it on the
    // mutated target reproduces the mutated run's score.
    let row = base.results.iter().find(|r| r.t == t).unwrap();
    let beta = rider_core::WeightVector::new(row.beta.clone().unwrap()).unwrap();
    let model = fit_weighted_erm(&panel.window_before(pos, 5).unwrap(), &beta, &WermProblem::squared()).unwrap();
    let rescored = evaluate(&model, mutated.dataset(pos), Metric::Mse).unwrap();
    let score = moved.results.iter().find(|r| r.t == t).unwrap().score.unwrap();
    assert!((rescored - score).abs() <= 1e-12 * score);
}

#[test]
fn aggregate_is_the_mean_score() {
    let panel = shifted_panel(40, 3);
    for method in [Method::Pooling, Method::RecentOnly { window: 2 }, Method::Exponential { half_life: 3.0 }, rider(6)] {
        let rep = run_backtest(&panel, &BacktestConfig::new(6, method)).unwrap();
        let scores: Vec<f64> = rep.scored().map(|(_, s)| s).collect();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        assert!((rep.aggregate - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }
}

#[test]
fn long_half_life_nests_pooling() {
    let panel = shifted_panel(25, 4);
    let pool = run_backtest(&panel, &BacktestConfig::new(6, Method::Pooling)).unwrap();
    let exp = run_backtest(&panel, &BacktestConfig::new(6, Method::Exponential { half_life: 1e6 })).unwrap();
    for ((_, a), (_, b)) in pool.scored().zip(exp.scored()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn backtests_are_deterministic() {
    let panel = shifted_panel(25, 5);
    let config = BacktestConfig::new(4, rider(4));
    assert_eq!(run_backtest(&panel, &config).unwrap(), run_backtest(&panel, &config).unwrap());
}

#[test]
fn refit_cadence_reuses_models() {
    let panel = shifted_panel(20, 6);
    let mut config = BacktestConfig::new(4, Method::Pooling);
    config.refit_every = 3;
    let rep = run_backtest(&panel, &config).unwrap();
    for (i, r) in rep.results.iter().enumerate() {
        let refit_at = rep.results[i - i % 3].t;
        assert_eq!(r.fitted_at, Some(refit_at));
    }
}

#[test]
fn too_many_failures_abort_the_run() {
    // Every dataset has a constant feature, so every fit is singular.
    let ds = |t| TimedDataset::new(t, 1, vec![1.0; 5], vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let panel = Panel::new((0..10).map(ds).collect()).unwrap();
    let err = run_backtest(&panel, &BacktestConfig::new(2, Method::Pooling)).unwrap_err();
    assert!(matches!(err, RiderError::NonConvergence(_)));
}

#[test]
fn insufficient_history_is_rejected() {
    let panel = shifted_panel(8, 7);
    let mut config = BacktestConfig::new(5, Method::Pooling);
    config.targets = TargetRange { first: Some(panel.dataset(3).t), last: None };
    assert!(run_backtest(&panel, &config).is_err());
}

#[test]
fn comparison_examples() {
    let a = report("a", 1, &[1.0, 1.0, 1.0], None);
    let b = report("b", 1, &[2.0, 2.0, 2.0], None);
    let cmp = compare_methods(&[a.clone(), a.clone()]).unwrap();
    assert!(cmp.rows[0].pct_diff.iter().all(|d| *d == 0.0));
    let cmp = compare_methods(&[a.clone(), b]).unwrap();
    assert!(cmp.rows[0].pct_diff.iter().all(|d| *d == -50.0));
    assert_eq!(cmp.rows[0].quantiles, [-50.0; 5]);

    let shorter = report("c", 1, &[1.0, 1.0], None);
    assert!(compare_methods(&[a, shorter]).is_err());
}

#[test]
fn hand_paired_t_test() {
    let d = [0.1, -0.2, 0.05, -0.15, -0.1];
    let mean = d.iter().sum::<f64>() / 5.0;
    let s2 = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
    let t = mean / (s2 / 5.0).sqrt();
    let test = paired_t_test(&d, &[0.0; 5]).unwrap();
    assert!((test.t_stat - t).abs() < 1e-12);
    assert!((t + 1.0366).abs() < 1e-4);
}

#[test]
fn trajectory_summary_examples() {
    let constant = vec![vec![0.5, 0.3, 0.2]; 4];
    let rows = weight_trajectory_summary(&report("c", 3, &[1.0; 4], Some(constant)));
    assert!(rows.iter().all(|r| r.iqr() == 0.0));

    let exp = exponential_reference_weights(9.0, 52).unwrap();
    let rows = weight_trajectory_summary(&report("e", 52, &[1.0; 5], Some(vec![exp.as_slice().to_vec(); 5])));
    for (r, b) in rows.iter().zip(exp.as_slice()) {
        assert_eq!(r.median, *b);
    }

    // Lag 1 over three rows: sorted (0.2, 0.5, 0.9).
    let hand = vec![vec![0.5, 0.5], vec![0.9, 0.1], vec![0.2, 0.8]];
    let rows = weight_trajectory_summary(&report("h", 2, &[1.0; 3], Some(hand)));
    assert_eq!((rows[0].min, rows[0].median, rows[0].max), (0.2, 0.5, 0.9));
    assert!((rows[0].q25 - 0.35).abs() < 1e-15 && (rows[0].q75 - 0.7).abs() < 1e-15);
    assert_eq!(rows[1].lag, 2);
}
