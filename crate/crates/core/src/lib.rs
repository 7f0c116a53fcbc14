//! Optimal weighting of past datasets under random temporal distribution shift.
//!
//! The crate simulates panels whose distribution drifts through random,
//! ARMA-driven likelihood ratios, computes and estimates the weights that
//! minimize out-of-distribution risk of weighted empirical risk minimization,
//! fits weighted models, and backtests the weights against standard baselines.

pub mod backtest;
pub mod error;
pub mod estimator;
pub mod io;
pub mod rng;
pub mod shift_sim;
pub mod weights;
pub mod werm;

pub use error::{Result, RiderError};
pub use shift_sim::{
    check_stationarity, sample_perturbed_dataset, simulate_panel, simulate_weight_field, theoretical_autocov,
    ArmaShiftProcess, Innovation, Panel, ParentDistribution, ParentKind, TimedDataset, WeightField,
};
pub use weights::{
    closed_form_exp, closed_form_pooling, closed_form_recent, exponential_reference_weights, optimal_weights_qp,
    parametric_weights, ConstraintSet, ParametricWeightConfig, RatioVector, SigmaW, WeightVector,
};
pub use werm::{evaluate, fit_weighted_erm, predict, Loss, Metric, WeightConvention, WermModel, WermProblem};
pub use estimator::{
    estimate_weights_from_panel, estimate_weights_nonparametric, estimate_weights_parametric_cv,
    evaluate_test_functions, CvScheme, EstimationConfig, Event, FitWindow, MomentMatrix, Numerator, ParametricGrid,
    TestFunctionSpec,
};
pub use backtest::{compare_methods, method_weights, run_backtest, BacktestConfig, BacktestReport, Comparison, Method, TargetRange};
pub use io::{Grouping, PanelSchema};
