//! Experiment configuration files (TOML).
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rejsamp_core::designs::{ProbSource, SizeMeasure};
use rejsamp_core::estequ::EstimatingFunction;
use rejsamp_core::variance::VarianceStyle;
use rejsamp_core::{BalanceCriterion, Column, Design, FinitePopulation, GammaSq, Tiers};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::frame::{load_population, Schema};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub population: PopulationSpec,
    pub phases: Vec<PhaseSpec>,
    pub settings: Vec<SettingSpec>,
    /// Setting that VarRed is computed against; defaults to the first
    /// setting whose thresholds are all infinite.
    #[serde(default)]
    pub baseline: Option<String>,
    pub estimators: Vec<String>,
    #[serde(default = "default_style")]
    pub variance_style: String,
    /// Use `π_i π_j` where a design has no pairwise probabilities.
    #[serde(default)]
    pub approx_joint: bool,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_quantile_draws")]
    pub quantile_draws: usize,
    #[serde(default)]
    pub quantile_seed: u64,
    /// Confidence intervals cost a mixture quantile each; large variance-only
    /// runs can switch them off.
    #[serde(default = "yes")]
    pub intervals: bool,
    #[serde(default = "default_failure_rate")]
    pub max_failure_rate: f64,
}

fn default_style() -> String {
    "ht".into()
}
fn default_alpha() -> f64 {
    0.05
}
fn default_quantile_draws() -> usize {
    100_000
}
fn yes() -> bool {
    true
}
fn default_failure_rate() -> f64 {
    0.01
}
fn default_betas() -> Vec<f64> {
    vec![1.0]
}
fn default_noise() -> f64 {
    1.0
}
fn default_api_units() -> usize {
    6194
}
fn default_balance_columns() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    /// `y = 1 + βx + e`; one frame per slope, all sharing `x` and `e`.
    Synthetic {
        n_units: usize,
        #[serde(default = "default_betas")]
        betas: Vec<f64>,
        #[serde(default = "default_noise")]
        noise_sd: f64,
        seed: u64,
    },
    ApiProxy {
        #[serde(default = "default_api_units")]
        n_units: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
        x_cols: Vec<String>,
        #[serde(default)]
        z_cols: Vec<String>,
        y_col: String,
        #[serde(default)]
        delimiter: Option<char>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Srswor,
    Poisson,
    Stratified,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub design: DesignKind,
    /// Sample size for SRSWOR.
    #[serde(default)]
    pub n: Option<usize>,
    /// Poisson: expected size with probabilities proportional to `size`.
    #[serde(default)]
    pub expected_n: Option<f64>,
    /// Column names such as `"x0"` or `"z2"`; several are summed.
    #[serde(default)]
    pub size: Vec<String>,
    /// Stratified: column holding integer stratum labels, and how many units
    /// to take from each stratum.
    #[serde(default)]
    pub strata_column: Option<String>,
    #[serde(default)]
    pub take: Vec<usize>,
    /// `x` columns balanced when this phase is drawn (phase II only; phase
    /// III balances on `x` and the derived covariate).
    #[serde(default = "default_balance_columns")]
    pub balance_columns: Vec<usize>,
    #[serde(default)]
    pub tiers: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub tier_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub max_draws: Option<u64>,
    #[serde(default)]
    pub ridge: Option<f64>,
}

/// A threshold: a number, `"inf"`, or `"chisq_quantile:<prob>"` (the
/// `prob` quantile of `χ²_p` for the phase's balance dimension).
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GammaValue {
    Number(f64),
    Text(String),
}

impl GammaValue {
    pub fn resolve(&self, dim: usize) -> Result<GammaSq> {
        match self {
            GammaValue::Number(v) => Ok(GammaSq::new(*v)?),
            GammaValue::Text(t) => {
                let t = t.trim();
                if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
                    return Ok(GammaSq::INFINITE);
                }
                if let Some(prob) = t.strip_prefix("chisq_quantile:") {
                    let prob: f64 = prob.trim().parse().map_err(|_| Error::Config(format!("bad probability in {t:?}")))?;
                    return Ok(GammaSq::chisq_quantile(dim, prob)?);
                }
                let v: f64 = t.parse().map_err(|_| Error::Config(format!("bad threshold {t:?}")))?;
                Ok(GammaSq::new(v)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingSpec {
    pub label: String,
    /// One threshold per phase after the first.
    pub gamma_sq: Vec<GammaValue>,
}

/// A parsed estimator name.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSpec {
    /// Double-expansion Hájek mean of the innermost phase.
    Mean,
    /// Regression estimator on the balance columns.
    Reg,
    /// Reweighted expansion estimator (stratified phase II).
    Ree,
    /// Estimating equation; reports the first parameter, or the variance
    /// for the variance kind.
    Ee(EeKind),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EeKind {
    Mean,
    ProportionBelow(f64),
    Variance,
    Quantile(f64),
}

impl EeKind {
    pub fn function(self) -> EstimatingFunction {
        match self {
            EeKind::Mean => EstimatingFunction::Mean,
            EeKind::ProportionBelow(c) => EstimatingFunction::ProportionBelow(c),
            EeKind::Variance => EstimatingFunction::Variance,
            EeKind::Quantile(t) => EstimatingFunction::Quantile(t),
        }
    }

    /// Index of the reported parameter component.
    pub fn component(self) -> usize {
        usize::from(self == EeKind::Variance)
    }
}

impl std::str::FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown estimator {s:?}"));
        let param = |part: &str, key: &str| -> Result<f64> {
            part.strip_prefix(key)
                .and_then(|v| v.strip_prefix('='))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Config(format!("estimator {s:?}: expected {key}=<number>")))
        };
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["mean"] => Ok(EstimatorSpec::Mean),
            ["reg"] => Ok(EstimatorSpec::Reg),
            ["ree"] => Ok(EstimatorSpec::Ree),
            ["ee", "mean"] => Ok(EstimatorSpec::Ee(EeKind::Mean)),
            ["ee", "variance"] => Ok(EstimatorSpec::Ee(EeKind::Variance)),
            ["ee", "proportion", p] => Ok(EstimatorSpec::Ee(EeKind::ProportionBelow(param(p, "c")?))),
            ["ee", "quantile", p] => {
                let tau = param(p, "tau")?;
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(Error::Config(format!("quantile level {tau} outside (0, 1)")));
                }
                Ok(EstimatorSpec::Ee(EeKind::Quantile(tau)))
            }
            _ => Err(bad()),
        }
    }
}

impl std::fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorSpec::Mean => write!(f, "mean"),
            EstimatorSpec::Reg => write!(f, "reg"),
            EstimatorSpec::Ree => write!(f, "ree"),
            EstimatorSpec::Ee(EeKind::Mean) => write!(f, "ee:mean"),
            EstimatorSpec::Ee(EeKind::Variance) => write!(f, "ee:variance"),
            EstimatorSpec::Ee(EeKind::ProportionBelow(c)) => write!(f, "ee:proportion:c={c}"),
            EstimatorSpec::Ee(EeKind::Quantile(t)) => write!(f, "ee:quantile:tau={t}"),
        }
    }
}

pub fn parse_style(s: &str) -> Result<VarianceStyle> {
    match s {
        "srs" => Ok(VarianceStyle::SrsClosedForm),
        "ht" => Ok(VarianceStyle::Ht),
        "syg" => Ok(VarianceStyle::Syg),
        _ => Err(Error::Config(format!("unknown variance style {s:?}; use srs, ht or syg"))),
    }
}

/// Parse a column name such as `x0`, `z2` or `y`.
pub fn parse_column(s: &str) -> Result<Column> {
    let s = s.trim();
    if s == "y" {
        return Ok(Column::Y);
    }
    let index = |rest: &str| rest.parse::<usize>().map_err(|_| Error::Config(format!("bad column name {s:?}")));
    match s.split_at_checked(1) {
        Some(("x", rest)) => Ok(Column::X(index(rest)?)),
        Some(("z", rest)) => Ok(Column::Z(index(rest)?)),
        _ => Err(Error::Config(format!("bad column name {s:?}; use x<k>, z<k> or y"))),
    }
}

/// A frame the experiment runs on.
#[derive(Debug, Clone)]
pub struct LabeledFrame {
    pub label: String,
    pub pop: FinitePopulation,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a config; relative frame paths resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let PopulationSpec::File { path: frame, .. } = &mut cfg.population {
            if frame.is_relative() {
                if let Some(dir) = path.parent() {
                    *frame = dir.join(&*frame);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if !(2..=3).contains(&self.phases.len()) {
            return fail(format!("{} phases configured; two or three are supported", self.phases.len()));
        }
        if self.settings.is_empty() {
            return fail("at least one setting is required".into());
        }
        for s in &self.settings {
            if s.gamma_sq.len() != self.phases.len() - 1 {
                return fail(format!("setting {:?} needs one threshold per phase after the first", s.label));
            }
        }
        let mut labels: Vec<&str> = self.settings.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return fail("setting labels must be unique".into());
        }
        if let Some(b) = &self.baseline {
            if !self.settings.iter().any(|s| &s.label == b) {
                return fail(format!("baseline {b:?} is not a setting label"));
            }
        }
        if self.estimators.is_empty() {
            return fail("at least one estimator is required".into());
        }
        let estimators = self.estimator_specs()?;
        if self.phases.len() == 3 && estimators.iter().any(|e| !matches!(e, EstimatorSpec::Mean | EstimatorSpec::Reg)) {
            return fail("three-phase runs support the mean and reg estimators only".into());
        }
        if estimators.contains(&EstimatorSpec::Ree) && self.phases[1].design != DesignKind::Stratified {
            return fail("ree needs a stratified phase II".into());
        }
        parse_style(&self.variance_style)?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return fail(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return fail("max_failure_rate must lie in [0, 1]".into());
        }
        if self.phases.len() == 3 && self.variance_style == "srs" {
            return fail("three-phase variances need the ht or syg style".into());
        }
        if self.quantile_draws == 0 {
            return fail("quantile_draws must be positive".into());
        }
        for (k, ph) in self.phases.iter().enumerate() {
            if ph.balance_columns.is_empty() {
                return fail(format!("phase {} has no balance columns", k + 1));
            }
            match ph.design {
                DesignKind::Srswor if ph.n.is_none() => return fail(format!("phase {} (srswor) needs n", k + 1)),
                DesignKind::Poisson if ph.expected_n.is_none() || ph.size.is_empty() => {
                    return fail(format!("phase {} (poisson) needs expected_n and size", k + 1))
                }
                DesignKind::Stratified if ph.strata_column.is_none() || ph.take.is_empty() => {
                    return fail(format!("phase {} (stratified) needs strata_column and take", k + 1))
                }
                _ => {}
            }
            for c in &ph.size {
                parse_column(c)?;
            }
        }
        Ok(())
    }

    pub fn estimator_specs(&self) -> Result<Vec<EstimatorSpec>> {
        self.estimators.iter().map(|s| s.parse()).collect()
    }

    pub fn style(&self) -> VarianceStyle {
        parse_style(&self.variance_style).unwrap_or(VarianceStyle::Ht)
    }

    /// Regression and phase-II balance columns.
    pub fn x_cols(&self) -> &[usize] {
        &self.phases[1].balance_columns
    }

    /// Shrink a synthetic population to desk scale: `N = 2·10⁴`, SRS
    /// phases of 1000 and 200.
    pub fn make_fast(&mut self) {
        if let PopulationSpec::Synthetic { n_units, .. } = &mut self.population {
            *n_units = 20_000;
        }
        let sizes = [1000, 200];
        for (ph, n) in self.phases.iter_mut().zip(sizes) {
            if ph.design == DesignKind::Srswor {
                ph.n = Some(n);
            }
        }
    }

    /// The frames of the run. Synthetic populations give one frame per slope.
    pub fn frames(&self) -> Result<Vec<LabeledFrame>> {
        match &self.population {
            PopulationSpec::Synthetic { n_units, betas, noise_sd, seed } => {
                if betas.is_empty() {
                    return Err(Error::Config("betas is empty".into()));
                }
                betas
                    .iter()
                    .map(|&b| {
                        Ok(LabeledFrame {
                            label: format!("beta={b}"),
                            pop: rejsamp_core::population::generate_synthetic(*seed, *n_units, b, *noise_sd)?,
                        })
                    })
                    .collect()
            }
            PopulationSpec::ApiProxy { n_units, seed } => Ok(vec![LabeledFrame {
                label: "api_proxy".into(),
                pop: rejsamp_core::population::generate_api_proxy(*seed, *n_units)?,
            }]),
            PopulationSpec::File { path, x_cols, z_cols, y_col, delimiter } => {
                let schema = Schema { x_cols: x_cols.clone(), z_cols: z_cols.clone(), y_col: Some(y_col.clone()), id_col: None };
                let delimiter = delimiter.map(|c| u8::try_from(c).map_err(|_| Error::Config(format!("delimiter {c:?} is not ASCII")))).transpose()?;
                let pop = load_population(path, &schema, delimiter)?;
                let label = path.file_stem().map_or_else(|| "file".into(), |s| s.to_string_lossy().into_owned());
                Ok(vec![LabeledFrame { label, pop }])
            }
        }
    }

    /// Designs of all phases, bound to a frame's columns.
    pub fn designs(&self, pop: &FinitePopulation) -> Result<Vec<Design>> {
        self.phases.iter().map(|ph| phase_design(ph, pop)).collect()
    }

    /// Balance criteria of the phases after the first for one setting.
    pub fn criteria(&self, setting: &SettingSpec, pop: &FinitePopulation) -> Result<Vec<BalanceCriterion>> {
        let x_cols = self.x_cols().to_vec();
        let z_dim = pop.q();
        self.phases[1..]
            .iter()
            .zip(&setting.gamma_sq)
            .enumerate()
            .map(|(k, (ph, g))| {
                let dim = if k == 0 { x_cols.len() } else { x_cols.len() + z_dim };
                let mut c = BalanceCriterion::new(g.resolve(dim)?, x_cols.clone());
                if let Some(blocks) = &ph.tiers {
                    let weights = ph.tier_weights.clone().unwrap_or_else(|| vec![1.0; blocks.len()]);
                    c = c.with_tiers(Tiers::new(blocks.clone(), weights)?);
                }
                if let Some(m) = ph.max_draws {
                    c = c.with_max_draws(m);
                }
                if let Some(r) = ph.ridge {
                    c = c.with_ridge(r);
                }
                Ok(c)
            })
            .collect()
    }

    /// Label of the VarRed baseline, if there is one.
    pub fn baseline_label(&self) -> Option<&str> {
        if let Some(b) = &self.baseline {
            return Some(b);
        }
        self.settings
            .iter()
            .find(|s| s.gamma_sq.iter().all(|g| g.resolve(1).is_ok_and(|v| v.is_infinite())))
            .map(|s| s.label.as_str())
    }
}

fn phase_design(ph: &PhaseSpec, pop: &FinitePopulation) -> Result<Design> {
    Ok(match ph.design {
        DesignKind::Srswor => Design::Srswor { n: ph.n.unwrap_or(0) },
        DesignKind::Poisson => {
            let cols = ph.size.iter().map(|c| parse_column(c)).collect::<Result<Vec<_>>>()?;
            let size = if cols.len() == 1 { SizeMeasure::Column(cols[0]) } else { SizeMeasure::SumOf(cols) };
            Design::Poisson { probs: ProbSource::Proportional { size, expected_n: ph.expected_n.unwrap_or(0.0) } }
        }
        DesignKind::Stratified => {
            let col = parse_column(ph.strata_column.as_deref().unwrap_or(""))?;
            let labels = pop.column(col)?;
            let stratum_of = labels
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                        Ok(v as usize)
                    } else {
                        Err(Error::Config(format!("stratum label {v} is not a small non-negative integer")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Design::Stratified { stratum_of: Arc::from(stratum_of), take: ph.take.clone() }
        }
    })
}
