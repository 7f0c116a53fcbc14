use std::path::{Path, PathBuf};

use rider_core::estimator::ParametricGrid;
use rider_core::{
    ArmaShiftProcess, BacktestConfig, EstimationConfig, Grouping, Innovation, Method, ParentDistribution, ParentKind,
    PanelSchema, Result, RiderError, WermProblem,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub panel: PanelSection,
    #[serde(default)]
    pub estimate: EstimateSection,
    #[serde(default = "WermProblem::squared")]
    pub problem: WermProblem,
    #[serde(default = "default_backtest")]
    pub backtest: BacktestConfig,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("rider-out")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output_dir(),
            simulate: SimulateSection::default(),
            panel: PanelSection::default(),
            estimate: EstimateSection::default(),
            problem: WermProblem::squared(),
            backtest: default_backtest(),
            verify: VerifySection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| RiderError::Validation(format!("{}: {}", path.display(), e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.panel.path {
            if !p.is_file() {
                return Err(RiderError::Validation(format!("panel file {} does not exist", p.display())));
            }
        }
        self.simulate.process()?;
        self.simulate.parent()?;
        self.problem.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub t_len: usize,
    /// Number of bins of the weight field.
    pub m: usize,
    pub sample_size: usize,
    pub parent: ParentKind,
    pub process: ProcessSection,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            t_len: 120,
            m: 30,
            sample_size: 300,
            parent: ParentKind::LinearModel { theta0: vec![1.0, -0.5, 0.25], noise_sd: 1.0 },
            process: ProcessSection { phi: vec![0.8], alpha: vec![], variance: Some(0.09), c: None, innovation: None },
        }
    }
}

impl SimulateSection {
    pub fn parent(&self) -> Result<ParentDistribution> {
        ParentDistribution::new(self.parent.clone(), String::new())
    }

    pub fn process(&self) -> Result<ArmaShiftProcess> {
        self.process.build()
    }
}

/// Either `variance` (gamma innovations calibrated to it) or an explicit
/// `c` and `innovation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSection {
    #[serde(default)]
    pub phi: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub variance: Option<f64>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub innovation: Option<Innovation>,
}

impl ProcessSection {
    pub fn build(&self) -> Result<ArmaShiftProcess> {
        match (self.variance, self.c, &self.innovation) {
            (Some(v), None, None) => ArmaShiftProcess::gamma(self.phi.clone(), self.alpha.clone(), v),
            (None, Some(c), Some(innovation)) => {
                let proc = ArmaShiftProcess {
                    phi: self.phi.clone(),
                    alpha: self.alpha.clone(),
                    c,
                    innovation: innovation.clone(),
                };
                proc.validate()?;
                Ok(proc)
            }
            _ => Err(RiderError::Validation(
                "process needs either `variance` alone or both `c` and `innovation`".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSection {
    /// Input panel; defaults to the simulated panel in the output directory.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_time")]
    pub time_column: String,
    #[serde(default = "default_outcome")]
    pub outcome_column: String,
    /// Defaults to every column named `x…`.
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    #[serde(default)]
    pub grouping: Grouping,
}

fn default_time() -> String {
    "t".into()
}

fn default_outcome() -> String {
    "y".into()
}

impl Default for PanelSection {
    fn default() -> Self {
        Self {
            path: None,
            time_column: default_time(),
            outcome_column: default_outcome(),
            feature_columns: None,
            grouping: Grouping::ByTimeIndex,
        }
    }
}

impl PanelSection {
    pub fn schema(&self, path: &Path) -> Result<PanelSchema> {
        let features = match &self.feature_columns {
            Some(f) => f.clone(),
            None => rider_core::io::feature_columns(path)?,
        };
        let mut schema = PanelSchema::new(self.time_column.clone(), self.outcome_column.clone(), features);
        schema.grouping = self.grouping;
        Ok(schema)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSection {
    #[serde(rename = "K")]
    pub k: usize,
    pub method: Method,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self { k: 10, method: Method::RiderNonparametric { estimation: EstimationConfig::new(10), test_functions: None } }
    }
}

fn default_backtest() -> BacktestConfig {
    BacktestConfig::new(10, EstimateSection::default().method)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    /// Replications of the inflation-factor Monte Carlo.
    pub reps: usize,
    /// Bins and samples per dataset in the Monte Carlo.
    pub m: usize,
    pub n: usize,
    pub inflation_tolerance: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { reps: 10_000, m: 2000, n: 2000, inflation_tolerance: 0.05 }
    }
}

/// A method named on the command line, with the knobs it needs.
pub fn method_from_flag(name: &str, k: usize, half_life: Option<f64>, window: Option<usize>) -> Result<Method> {
    Ok(match name {
        "pooling" => Method::Pooling,
        "recent-only" => Method::RecentOnly { window: window.unwrap_or(1) },
        "exponential" => Method::Exponential {
            half_life: half_life.ok_or_else(|| RiderError::Validation("exponential needs --half-life".into()))?,
        },
        "rider" | "rider-nonparametric" => {
            Method::RiderNonparametric { estimation: EstimationConfig::new(k), test_functions: None }
        }
        "rider-parametric" => Method::RiderParametric { grid: ParametricGrid::with_k(vec![k]), cv: Default::default() },
        other => return Err(RiderError::Validation(format!("unknown method `{other}`"))),
    })
}

/// `method` with its window size set to `k` wherever it carries one.
pub fn with_k(method: Method, k: usize) -> Method {
    match method {
        Method::RiderNonparametric { mut estimation, test_functions } => {
            estimation.k = k;
            Method::RiderNonparametric { estimation, test_functions }
        }
        Method::RiderParametric { mut grid, cv } => {
            grid.k = vec![k];
            Method::RiderParametric { grid, cv }
        }
        other => other,
    }
}
