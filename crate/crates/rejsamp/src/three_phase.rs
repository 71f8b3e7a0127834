//! School-performance style three-phase study: SRS phase I, Poisson phase II
//! proportional to `x`, Poisson phase III proportional to the sum of the `z`
//! columns, with and without rejection.
use crate::config::{DesignKind, ExperimentConfig, GammaValue, PhaseSpec, PopulationSpec, SettingSpec};
use crate::error::{Error, Result};
use crate::harness::{run_experiment, ExperimentResult, RunOptions};

/// Sizes and thresholds of the study.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreePhasePlan {
    pub n_i: usize,
    pub expected_n_ii: f64,
    pub expected_n_iii: f64,
    /// `(γ₁², γ₂²)` of the rejective setting.
    pub gamma_sq: (f64, f64),
    pub replicates: usize,
    pub seed: u64,
}

impl Default for ThreePhasePlan {
    fn default() -> Self {
        Self { n_i: 2000, expected_n_ii: 500.0, expected_n_iii: 100.0, gamma_sq: (0.1, 0.5), replicates: 1000, seed: 20250101 }
    }
}

fn phase(design: DesignKind) -> PhaseSpec {
    PhaseSpec {
        design,
        n: None,
        expected_n: None,
        size: Vec::new(),
        strata_column: None,
        take: Vec::new(),
        balance_columns: vec![0],
        tiers: None,
        tier_weights: None,
        max_draws: None,
        ridge: None,
    }
}

/// Config for the study on the synthetic school frame (`N = 6194`).
/// Settings `none` (no rejection) and `rej`; estimators `mean` and `reg`.
pub fn api_style_config(plan: &ThreePhasePlan) -> ExperimentConfig {
    let population = PopulationSpec::ApiProxy { n_units: 6194, seed: plan.seed };
    three_phase_config(plan, population)
}

/// The study on any frame with one `x` column and `z` columns.
pub fn three_phase_config(plan: &ThreePhasePlan, population: PopulationSpec) -> ExperimentConfig {
    let z_cols = match &population {
        PopulationSpec::File { z_cols, .. } => z_cols.len(),
        _ => 3,
    };
    let mut p1 = phase(DesignKind::Srswor);
    p1.n = Some(plan.n_i);
    let mut p2 = phase(DesignKind::Poisson);
    p2.expected_n = Some(plan.expected_n_ii);
    p2.size = vec!["x0".into()];
    let mut p3 = phase(DesignKind::Poisson);
    p3.expected_n = Some(plan.expected_n_iii);
    p3.size = (0..z_cols).map(|k| format!("z{k}")).collect();
    let inf = || GammaValue::Text("inf".into());
    ExperimentConfig {
        name: "three_phase".into(),
        population,
        phases: vec![p1, p2, p3],
        settings: vec![
            SettingSpec { label: "none".into(), gamma_sq: vec![inf(), inf()] },
            SettingSpec {
                label: "rej".into(),
                gamma_sq: vec![GammaValue::Number(plan.gamma_sq.0), GammaValue::Number(plan.gamma_sq.1)],
            },
        ],
        baseline: Some("none".into()),
        estimators: vec!["mean".into(), "reg".into()],
        variance_style: "ht".into(),
        approx_joint: false,
        replicates: plan.replicates,
        seed: plan.seed,
        alpha: 0.05,
        quantile_draws: 100_000,
        quantile_seed: 0,
        intervals: true,
        max_failure_rate: 0.01,
    }
}

/// Run a three-phase config.
pub fn run_api_style_three_phase(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    if cfg.phases.len() != 3 {
        return Err(Error::Config("the three-phase study needs three phases".into()));
    }
    run_experiment(cfg, opts)
}

/// Figure label of a (setting, estimator) pair: `simple3`, `reg3`, `rej3`, `rej-reg3`.
pub fn figure_label(setting: &str, estimator: &str) -> String {
    let base = if estimator == "reg" { "reg3" } else { "simple3" };
    match (setting, base) {
        ("none", b) => b.into(),
        (_, "reg3") => "rej-reg3".into(),
        _ => "rej3".into(),
    }
}
