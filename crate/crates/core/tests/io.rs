use chrono::NaiveDate;
use proptest::prelude::*;
use rider_core::backtest::{weight_trajectory_summary, TargetResult};
use rider_core::estimator::CvRow;
use rider_core::io::{self, calendar_week_index, WeightsDocument};
use rider_core::{
    evaluate_test_functions, fit_weighted_erm, run_backtest, simulate_panel, ArmaShiftProcess, BacktestConfig,
    BacktestReport, Grouping, Method, Metric, Panel, PanelSchema, ParentDistribution, RiderError, TestFunctionSpec,
    TimedDataset, WeightVector, WermProblem,
};

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn small_panel(seed: u64) -> (Panel, rider_core::WeightField) {
    let parent = ParentDistribution::linear_model(vec![1.0, -0.5, 0.25], 1.0).unwrap();
    let proc = ArmaShiftProcess::gamma(vec![0.7], vec![], 0.1).unwrap();
    simulate_panel(&parent, &proc, 15, 8, &[30; 15], seed).unwrap()
}

#[test]
fn two_rows_give_two_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "p.csv", "t,y,x1\n3,1.5,2\n4,-1,0.25\n");
    let panel = io::load_panel_csv(&path, &PanelSchema::new("t", "y", vec!["x1".into()])).unwrap();
    assert_eq!(panel.times(), vec![3, 4]);
    assert_eq!(panel.sample_sizes(), vec![1, 1]);
    assert_eq!(panel.dataset(1).features(), &[0.25]);
}

#[test]
fn panel_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (panel, field) = small_panel(1);
    io::write_panel_csv(&dir.path().join("panel.csv"), &panel).unwrap();
    assert_eq!(io::read_panel_csv(&dir.path().join("panel.csv")).unwrap(), panel);
    io::write_weight_field_csv(&dir.path().join("field.csv"), &field).unwrap();
    let back = io::read_weight_field_csv(&dir.path().join("field.csv")).unwrap();
    assert_eq!((back.t_len(), back.m), (field.t_len(), field.m));
    assert_eq!(bits(&back.values), bits(&field.values));
}

#[test]
fn non_numeric_cell_names_its_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = String::from("t,y,x1\n");
    for i in 1..=10 {
        let x = if i == 7 { "abc".to_string() } else { format!("{}", i as f64 * 0.5) };
        text.push_str(&format!("{},{},{x}\n", i % 3, i));
    }
    let path = write(&dir, "bad.csv", &text);
    let err = io::read_panel_csv(&path).unwrap_err();
    match &err {
        RiderError::Parse { row, column, .. } => assert_eq!((*row, column.as_str()), (7, "x1")),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains("row 7"));
}

#[test]
fn missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(&dir, "p.csv", "t,y\n1,2\n");
    let err = io::load_panel_csv(&path, &PanelSchema::new("t", "y", vec!["x9".into()])).unwrap_err();
    assert!(matches!(&err, RiderError::MissingColumn { column, .. } if column == "x9"));
}

#[test]
fn empty_cells_are_skipped_and_empty_files_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let schema = PanelSchema::new("t", "y", vec!["x1".into()]);
    let path = write(&dir, "p.csv", "t,y,x1\n1,1,1\n1,,2\n2,3,\n2,4,4\n3,,\n");
    let panel = io::load_panel_csv(&path, &schema).unwrap();
    assert_eq!(panel.times(), vec![1, 2]);
    assert_eq!(panel.dataset(1).outcomes(), &[4.0]);
    let path = write(&dir, "none.csv", "t,y,x1\n1,,\n");
    assert!(matches!(io::load_panel_csv(&path, &schema), Err(RiderError::InsufficientData(_))));
}

#[test]
fn rows_group_by_calendar_week_in_file_order() {
    let dir = tempfile::tempdir().unwrap();
    // 2024-01-01 is a Monday; the 7th closes that week; the 15th skips one.
    let path = write(
        &dir,
        "daily.csv",
        "date,rv,lag\n2024-01-03,3,0.3\n2024-01-01,1,0.1\n2024-01-07,7,0.7\n2024-01-08,8,0.8\n2024-01-15,15,1.5\n",
    );
    let schema = PanelSchema { grouping: Grouping::ByCalendarWeek, ..PanelSchema::new("date", "rv", vec!["lag".into()]) };
    let panel = io::load_panel_csv(&path, &schema).unwrap();
    let monday = calendar_week_index(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap());
    assert_eq!(panel.times(), vec![monday, monday + 1, monday + 2]);
    assert_eq!(panel.dataset(0).outcomes(), &[3.0, 1.0, 7.0]);
    assert_eq!(calendar_week_index(NaiveDate::from_ymd_opt(1970, 1, 5).unwrap()), 0);
    assert_eq!(calendar_week_index(NaiveDate::from_ymd_opt(1970, 1, 4).unwrap()), -1);
}

#[test]
fn weights_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let beta = WeightVector::normalized(vec![0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-17]).unwrap();
    io::write_weights_csv(&dir.path().join("w.csv"), &beta).unwrap();
    assert_eq!(io::read_weights_csv(&dir.path().join("w.csv")).unwrap(), beta);
    let doc = WeightsDocument::new(beta, serde_json::json!({ "method": "test" }));
    io::write_weights_json(&dir.path().join("w.json"), &doc).unwrap();
    assert_eq!(io::read_weights_json(&dir.path().join("w.json")).unwrap(), doc);

    let path = write(&dir, "bad.json", r#"{"K": 3, "beta": [0.5, 0.5], "meta": null}"#);
    assert!(io::read_weights_json(&path).is_err());
}

#[test]
fn moments_round_trip_with_invalid_cells() {
    let dir = tempfile::tempdir().unwrap();
    // Dataset 1 has only 5 samples with x ≥ 1, below the minimum cell count.
    let ds = |t: i64, hits: usize| {
        let x: Vec<f64> = (0..20).map(|i| if i < hits { 1.5 } else { 0.1 * i as f64 / 20.0 }).collect();
        TimedDataset::new(t, 1, x, (0..20).map(|i| i as f64 / 3.0).collect()).unwrap()
    };
    let panel = Panel::new(vec![ds(0, 12), ds(1, 5), ds(2, 15)]).unwrap();
    let specs = vec![
        TestFunctionSpec::covariate(0),
        TestFunctionSpec::conditional(
            rider_core::Event::FeatureInRange { index: 0, low: 1.0, high: f64::INFINITY },
            rider_core::Numerator::Outcome,
            "y | x >= 1",
        ),
    ];
    let mm = evaluate_test_functions(&panel, &specs).unwrap();
    assert_eq!(mm.valid, vec![true, true, true, false, true, true]);
    io::write_moments_csv(&dir.path().join("m.csv"), &mm).unwrap();
    assert_eq!(io::read_moments_csv(&dir.path().join("m.csv")).unwrap(), mm);
}

#[test]
fn cv_table_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        CvRow { k: 4, alpha1: 0.2, alpha2: 0.4, alpha3: 0.4, theta: 0.5f64.powf(0.25), cv_loss: 1.234, cv_se: 0.1 },
        CvRow { k: 8, alpha1: 1.0, alpha2: 0.0, alpha3: 0.0, theta: 0.5, cv_loss: f64::INFINITY, cv_se: 0.0 },
    ];
    io::write_cv_table_csv(&dir.path().join("cv.csv"), &rows).unwrap();
    assert_eq!(io::read_cv_table_csv(&dir.path().join("cv.csv")).unwrap(), rows);
}

#[test]
fn model_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (panel, _) = small_panel(3);
    let beta = WeightVector::new(vec![0.7, 0.2, 0.1]).unwrap();
    let model = fit_weighted_erm(&panel.window_before(15, 3).unwrap(), &beta, &WermProblem::squared()).unwrap();
    io::write_model_json(&dir.path().join("model.json"), &model).unwrap();
    assert_eq!(io::read_model_json(&dir.path().join("model.json")).unwrap(), model);

    let mut report = run_backtest(&panel, &BacktestConfig::new(3, Method::Pooling)).unwrap();
    report.results.push(TargetResult { t: 99, score: None, error: Some("boom".into()), beta: None, fitted_at: None });
    io::write_report(dir.path(), "bt", &report).unwrap();
    let (json, scores, traj) = io::report_paths(dir.path(), "bt");
    assert_eq!(io::read_report_json(&json).unwrap(), report);
    assert_eq!(io::read_report_csvs(&scores, &traj).unwrap(), report.results);

    let lags = weight_trajectory_summary(&report);
    io::write_lag_summary_csv(&dir.path().join("lags.csv"), &lags).unwrap();
    assert_eq!(io::read_lag_summary_csv(&dir.path().join("lags.csv")).unwrap(), lags);
}

#[test]
fn repeated_writes_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (panel, _) = small_panel(4);
    let report: BacktestReport = run_backtest(&panel, &BacktestConfig::new(3, Method::Pooling)).unwrap();
    for stem in ["a", "b"] {
        io::write_panel_csv(&dir.path().join(format!("{stem}.csv")), &panel).unwrap();
        io::write_report(dir.path(), stem, &report).unwrap();
    }
    for (a, b) in [("a.csv", "b.csv"), ("a.json", "b.json"), ("a_scores.csv", "b_scores.csv")] {
        assert_eq!(std::fs::read(dir.path().join(a)).unwrap(), std::fs::read(dir.path().join(b)).unwrap());
    }
    assert_eq!(report.metric, Metric::Mse);
}

proptest! {
    #[test]
    fn arbitrary_floats_survive_the_panel_format(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 6..60)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let rows = values.len() / 3;
        let ds = TimedDataset::new(-2, 2, values[..2 * rows].to_vec(), values[2 * rows..3 * rows].to_vec()).unwrap();
        let panel = Panel::new(vec![ds]).unwrap();
        let path = dir.path().join("p.csv");
        io::write_panel_csv(&path, &panel).unwrap();
        let back = io::read_panel_csv(&path).unwrap();
        prop_assert_eq!(bits(back.dataset(0).features()), bits(panel.dataset(0).features()));
        prop_assert_eq!(bits(back.dataset(0).outcomes()), bits(panel.dataset(0).outcomes()));
    }
}
