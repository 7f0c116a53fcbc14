//! Self-checks of the weight solver and the variance-inflation Monte Carlo.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rider_core::estimator::empirical_inflation_factor;
use rider_core::weights::{build_sigma_w, delta_tilde_sq};
use rider_core::{
    closed_form_exp, closed_form_pooling, closed_form_recent, optimal_weights_qp, ArmaShiftProcess, ConstraintSet,
    ParentDistribution, RatioVector, Result, SigmaW, TestFunctionSpec, WeightVector,
};

use crate::config::VerifySection;

pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {:<56} measured={:.6e} bound={:.3e}", self.name, self.measured, self.bound)
    }
}

fn check(name: impl Into<String>, measured: f64, bound: f64) -> Check {
    Check { name: name.into(), measured, bound, pass: measured <= bound }
}

fn shrinks(name: String, diff: f64) -> Check {
    Check { name, measured: diff, bound: 0.0, pass: diff < 0.0 }
}

/// Largest deviation of the QP from `n_k / N` over random sample sizes.
fn pooling_oracle(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(1..=30);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(1..=5000)).collect();
        let sigma = build_sigma_w(|_| 0.0, k)?;
        let qp = optimal_weights_qp(&sigma, &RatioVector::from_sample_sizes(1, &sizes)?, &ConstraintSet::simplex())?;
        worst = worst.max(qp.sup_distance(&closed_form_pooling(&sizes)?));
    }
    Ok(worst)
}

fn qp_gap(proc: &ArmaShiftProcess, oracle: impl Fn(usize) -> Result<WeightVector>, k: usize) -> Result<f64> {
    let qp = optimal_weights_qp(&SigmaW::from_process(proc, k)?, &RatioVector::zero(), &ConstraintSet::simplex())?;
    Ok(qp.sup_distance(&oracle(k)?))
}

pub fn run(settings: &VerifySection, seed: u64) -> Result<Vec<Check>> {
    let mut checks = vec![check("qp_pooling_closed_form", pooling_oracle(seed)?, 1e-8)];

    for phi in [0.3, 0.6, 0.9] {
        let proc = ArmaShiftProcess::gamma(vec![phi], vec![], 1.0)?;
        let oracle = |k| closed_form_recent(phi, k);
        let (g10, g50) = (qp_gap(&proc, oracle, 10)?, qp_gap(&proc, oracle, 50)?);
        checks.push(check(format!("qp_ar1[phi={phi}] K=50"), g50, 0.02));
        checks.push(shrinks(format!("qp_ar1[phi={phi}] K=50 gap minus K=10 gap"), g50 - g10));
    }
    for (phi, theta) in [(0.8, 0.4), (0.6, 0.2)] {
        let proc = ArmaShiftProcess::gamma(vec![phi], vec![-theta], 1.0)?;
        let oracle = |k| closed_form_exp(phi, theta, k);
        let (g10, g50) = (qp_gap(&proc, oracle, 10)?, qp_gap(&proc, oracle, 50)?);
        checks.push(check(format!("qp_arma11[phi={phi},theta={theta}] K=50"), g50, 0.02));
        checks.push(shrinks(format!("qp_arma11[phi={phi},theta={theta}] K=50 gap minus K=10 gap"), g50 - g10));
    }

    let parent = ParentDistribution::uniform(1)?;
    let white = ArmaShiftProcess::gamma(vec![], vec![], 1.0)?;
    let ratios = RatioVector::Scalar(settings.m as f64 / settings.n as f64);
    for (label, beta) in [("e1", WeightVector::unit(1, 1)?), ("uniform K=4", WeightVector::uniform(4)?)] {
        let target = delta_tilde_sq(&beta, &SigmaW::from_process(&white, beta.k())?, &ratios)?;
        let est = empirical_inflation_factor(
            &parent,
            &white,
            &beta,
            settings.m,
            settings.n,
            settings.reps,
            &TestFunctionSpec::covariate(0),
            seed,
        )?;
        let mut c = check(
            format!("inflation[{label}] vs {target:.4}"),
            (est.factor / target - 1.0).abs(),
            settings.inflation_tolerance,
        );
        c.name = format!("{} (factor {:.4})", c.name, est.factor);
        checks.push(c);
    }
    Ok(checks)
}
