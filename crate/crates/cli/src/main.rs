use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rider_core::backtest::{default_test_functions, weight_trajectory_summary};
use rider_core::io::{self, WeightsDocument};
use rider_core::{
    estimate_weights_parametric_cv, evaluate_test_functions, fit_weighted_erm, method_weights, run_backtest,
    simulate_panel, BacktestConfig, Method, Panel, Result, RiderError, WeightVector,
};

mod config;
mod verify;

use config::{method_from_flag, with_k, RunConfig};

#[derive(Parser)]
#[command(name = "rider", version, about = "Optimal weighting of past datasets under temporal distribution shift")]
struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "RIDER_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel and its weight field.
    Simulate,
    /// Estimate weights for the dataset after the end of the panel.
    EstimateWeights(MethodArgs),
    /// Fit a weighted model on the last K datasets of the panel.
    Fit {
        #[command(flatten)]
        method: MethodArgs,
        /// Weights JSON to use instead of estimating them.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Rolling backtest of one weighting method.
    Backtest {
        #[command(flatten)]
        method: MethodArgs,
        #[arg(long)]
        refit_every: Option<usize>,
        /// Stem of the emitted report files.
        #[arg(long, default_value = "backtest")]
        name: String,
    },
    /// Check the weight solver against closed forms and the inflation Monte Carlo.
    Verify {
        #[arg(long)]
        reps: Option<usize>,
    },
}

#[derive(Args)]
struct MethodArgs {
    /// Input panel CSV.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// pooling, recent-only, exponential, rider or rider-parametric.
    #[arg(long)]
    method: Option<String>,
    #[arg(long = "k", short = 'K')]
    k: Option<usize>,
    #[arg(long)]
    half_life: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
}

impl MethodArgs {
    fn resolve(&self, default_k: usize, default_method: &Method) -> Result<(usize, Method)> {
        let k = self.k.unwrap_or(default_k);
        let method = match &self.method {
            Some(name) => method_from_flag(name, k, self.half_life, self.window)?,
            None => default_method.clone(),
        };
        Ok((k, with_k(method, k)))
    }

    fn load_panel(&self, cfg: &RunConfig) -> Result<Panel> {
        let path = self
            .panel
            .clone()
            .or_else(|| cfg.panel.path.clone())
            .unwrap_or_else(|| cfg.output_dir.join("panel.csv"));
        if !path.is_file() {
            return Err(RiderError::Validation(format!("panel file {} does not exist", path.display())));
        }
        io::load_panel_csv(&path, &cfg.panel.schema(&path)?)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = cli.output_dir {
        cfg.output_dir = dir;
    }
    let out = cfg.output_dir.clone();

    match cli.command {
        Command::Simulate => {
            let sim = &cfg.simulate;
            let sizes = vec![sim.sample_size; sim.t_len];
            let (panel, field) = simulate_panel(&sim.parent()?, &sim.process()?, sim.t_len, sim.m, &sizes, cfg.seed)?;
            io::write_panel_csv(&out.join("panel.csv"), &panel)?;
            io::write_weight_field_csv(&out.join("weight_field.csv"), &field)?;
            sidecar(&out, "simulate", cfg.seed)?;
            println!("wrote {} datasets to {}", panel.len(), out.join("panel.csv").display());
        }
        Command::EstimateWeights(args) => {
            let panel = args.load_panel(&cfg)?;
            let (k, method) = args.resolve(cfg.estimate.k, &cfg.estimate.method)?;
            let beta = estimate(&panel, k, &method, &cfg, &out)?;
            let meta = serde_json::json!({ "method": method.label(), "after_t": panel.times().last(), "seed": cfg.seed });
            io::write_weights_csv(&out.join("weights.csv"), &beta)?;
            io::write_weights_json(&out.join("weights.json"), &WeightsDocument::new(beta.clone(), meta))?;
            sidecar(&out, "estimate-weights", cfg.seed)?;
            let shown: Vec<String> = beta.as_slice().iter().map(|b| format!("{b:.6}")).collect();
            println!("beta = ({})", shown.join(", "));
        }
        Command::Fit { method: args, weights } => {
            let panel = args.load_panel(&cfg)?;
            let beta = match weights {
                Some(path) => io::read_weights_json(&path)?.beta,
                None => {
                    let (k, method) = args.resolve(cfg.estimate.k, &cfg.estimate.method)?;
                    estimate(&panel, k, &method, &cfg, &out)?
                }
            };
            let window = panel.window_before(panel.len(), beta.k())?;
            let model = fit_weighted_erm(&window, &beta, &cfg.problem)?;
            io::write_model_json(&out.join("model.json"), &model)?;
            sidecar(&out, "fit", cfg.seed)?;
            println!("theta = {:?}", model.theta);
        }
        Command::Backtest { method: args, refit_every, name } => {
            let panel = args.load_panel(&cfg)?;
            let (k, method) = args.resolve(cfg.backtest.k, &cfg.backtest.method)?;
            let config = BacktestConfig {
                k,
                method,
                refit_every: refit_every.unwrap_or(cfg.backtest.refit_every),
                ..cfg.backtest.clone()
            };
            let report = run_backtest(&panel, &config)?;
            io::write_report(&out, &name, &report)?;
            io::write_lag_summary_csv(&out.join(format!("{name}_lags.csv")), &weight_trajectory_summary(&report))?;
            sidecar(&out, "backtest", cfg.seed)?;
            println!(
                "{}: {} targets, {} failed, aggregate {:?} = {}",
                report.method,
                report.results.len(),
                report.failures(),
                report.metric,
                io::fmt_f64(report.aggregate)
            );
        }
        Command::Verify { reps } => {
            let mut settings = cfg.verify;
            if let Some(r) = reps {
                settings.reps = r;
            }
            let checks = verify::run(&settings, cfg.seed)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.pass).count();
            println!("{} of {} checks passed", checks.len() - failed, checks.len());
            if failed > 0 {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Weights for the dataset after the panel; also writes the estimator's
/// moment matrix or CV table.
fn estimate(panel: &Panel, k: usize, method: &Method, cfg: &RunConfig, out: &Path) -> Result<WeightVector> {
    match method {
        Method::RiderParametric { grid, cv } => {
            let res = estimate_weights_parametric_cv(panel, grid, &cfg.problem, cv)?;
            io::write_cv_table_csv(&out.join("cv_table.csv"), &res.table)?;
            Ok(res.beta)
        }
        Method::RiderNonparametric { test_functions, .. } => {
            let specs = test_functions.clone().unwrap_or_else(|| default_test_functions(panel.dim()));
            io::write_moments_csv(&out.join("moments.csv"), &evaluate_test_functions(panel, &specs)?)?;
            method_weights(panel, &BacktestConfig { problem: cfg.problem, ..BacktestConfig::new(k, method.clone()) })
        }
        _ => method_weights(panel, &BacktestConfig { problem: cfg.problem, ..BacktestConfig::new(k, method.clone()) }),
    }
}

/// Run metadata with a timestamp, kept apart from the deterministic outputs.
fn sidecar(out: &Path, command: &str, seed: u64) -> Result<()> {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(out.join("run.log"))?;
    writeln!(f, "unix_time={secs} command={command} seed={seed} version={}", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
