//! Monte Carlo replication engine.
//!
//! Replicate `k` draws from a ChaCha8 stream `k` of the base seed, so every
//! replicate is reproducible on its own and the order replicates run in
//! never matters. Phase I is drawn first from that stream, which makes it
//! identical across settings. One chain per replicate is evaluated on every
//! frame of the run (synthetic frames with different slopes share `x`).
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rejsamp_core::balance::{draw_three_phase, draw_tprs};
use rejsamp_core::estequ::{ee_variance, solve_ee, weighted_quantile};
use rejsamp_core::estimators::{
    pi_star_mean, ree, regression_estimate_three_phase, regression_estimate_two_phase, regression_weights, Denominator,
};
use rejsamp_core::ldist::{v_pgamma, MixtureQuantiler};
use rejsamp_core::linalg::SymFactor;
use rejsamp_core::population::population_moments;
use rejsamp_core::variance::{
    confidence_interval_prepared, vhat_general, vhat_three_phase, EstimatorKind, VarianceComponents, VarianceStyle,
};
use rejsamp_core::{BalanceCriterion, Column, Design, FinitePopulation, Phase, PhaseChain};
use serde::Serialize;

use crate::config::{DesignKind, EeKind, EstimatorSpec, ExperimentConfig, LabeledFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep one record per replicate, frame and estimator.
    pub keep_replicates: bool,
}

/// One estimator evaluated on one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimate: f64,
    /// `None` when the estimator has no variance estimator (REE).
    pub components: Option<VarianceComponents>,
    /// Replicates with negative two-phase regression weights are tallied.
    pub negative_weights: Option<usize>,
}

impl EstimateReport {
    pub fn variance(&self) -> Option<f64> {
        self.components.as_ref().map(VarianceComponents::total)
    }
}

/// Everything needed to evaluate estimators on chains.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub estimators: Vec<EstimatorSpec>,
    pub x_cols: Vec<usize>,
    pub style: VarianceStyle,
    pub approx_joint: bool,
    /// Frame stratum labels when phase II is stratified.
    pub stratum_of: Option<Vec<usize>>,
}

impl Evaluator {
    pub fn from_config(cfg: &ExperimentConfig, designs: &[Design]) -> Result<Self> {
        let stratum_of = match designs.get(1) {
            Some(Design::Stratified { stratum_of, .. }) => Some(stratum_of.to_vec()),
            _ => None,
        };
        Ok(Self {
            estimators: cfg.estimator_specs()?,
            x_cols: cfg.x_cols().to_vec(),
            style: cfg.style(),
            approx_joint: cfg.approx_joint,
            stratum_of,
        })
    }

    /// Evaluate every estimator on `chain` with the study variable of `pop`.
    pub fn evaluate(&self, chain: &PhaseChain, pop: &FinitePopulation) -> Vec<Result<EstimateReport>> {
        self.estimators.iter().map(|e| self.evaluate_one(e, chain, pop)).collect()
    }

    fn evaluate_one(&self, spec: &EstimatorSpec, chain: &PhaseChain, pop: &FinitePopulation) -> Result<EstimateReport> {
        let inner = chain.innermost();
        let y = chain.y(pop, inner)?;
        let x = &self.x_cols;
        let (style, approx) = (self.style, self.approx_joint);
        let three = chain.n_phases() == 3;
        let report = match spec {
            EstimatorSpec::Mean => {
                let estimate = pi_star_mean(chain, inner, &y, Denominator::Hajek)?;
                let v = if three {
                    vhat_three_phase(chain, pop, x, &y, EstimatorKind::Mean, style, approx)?
                } else {
                    vhat_general(chain, pop, x, &y, EstimatorKind::Mean, style, approx)?
                };
                EstimateReport { estimate, components: Some(v), negative_weights: None }
            }
            EstimatorSpec::Reg if three => {
                let (estimate, _) = regression_estimate_three_phase(chain, pop, x, &y)?;
                let v = vhat_three_phase(chain, pop, x, &y, EstimatorKind::Regression, style, approx)?;
                EstimateReport { estimate, components: Some(v), negative_weights: None }
            }
            EstimatorSpec::Reg => {
                let (estimate, _) = regression_estimate_two_phase(chain, pop, Phase::II, x, &y)?;
                let v = vhat_general(chain, pop, x, &y, EstimatorKind::Regression, style, approx)?;
                let w = regression_weights(chain, pop, Phase::II, x)?;
                EstimateReport { estimate, components: Some(v), negative_weights: Some(w.negative_count) }
            }
            EstimatorSpec::Ree => {
                let strata =
                    self.stratum_of.as_deref().ok_or_else(|| Error::Config("ree needs a stratified phase II".into()))?;
                EstimateReport { estimate: ree(chain, strata, &y)?, components: None, negative_weights: None }
            }
            EstimatorSpec::Ee(kind) => {
                let fit = solve_ee(chain, pop, x, &y, &kind.function())?;
                let v = ee_variance(chain, pop, x, &fit, style, approx)?;
                let j = kind.component();
                EstimateReport { estimate: fit.xi_hat[j], components: v.components.into_iter().nth(j), negative_weights: None }
            }
        };
        Ok(report)
    }
}

/// Frame value each estimator targets.
pub fn truth(spec: &EstimatorSpec, pop: &FinitePopulation) -> Result<f64> {
    let y = pop.y()?;
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    Ok(match spec {
        EstimatorSpec::Mean | EstimatorSpec::Reg | EstimatorSpec::Ree | EstimatorSpec::Ee(EeKind::Mean) => mean,
        EstimatorSpec::Ee(EeKind::ProportionBelow(c)) => y.iter().filter(|&&v| v < *c).count() as f64 / n,
        EstimatorSpec::Ee(EeKind::Variance) => y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n,
        EstimatorSpec::Ee(EeKind::Quantile(tau)) => weighted_quantile(y, &vec![1.0; y.len()], *tau)?,
    })
}

/// Frame `R²` of `y` on the given `x` columns.
pub fn frame_r_squared(pop: &FinitePopulation, x_cols: &[usize]) -> Result<f64> {
    let cols: Vec<Column> = x_cols.iter().map(|&c| Column::X(c)).collect();
    let xx = population_moments(pop, &cols, &cols)?;
    let xy = population_moments(pop, &cols, &[Column::Y])?;
    let yy = population_moments(pop, &[Column::Y], &[Column::Y])?;
    let c: Vec<f64> = xy.cov_uv.column(0);
    let explained = SymFactor::new(&xx.cov_uv)?.inv_quad_form(&c);
    Ok(explained / yy.cov_uv[(0, 0)])
}

/// Percentage reduction in asymptotic variance of the phase-II mean under
/// two-phase SRS with rejection:
/// `100 (1 − f_{II,I})/(1 − f_{II,I} f_{I,0}) (1 − v_{p,γ²}) R²`.
/// A census (`f_{II,I} f_{I,0} = 1`) gives 0.
pub fn theoretical_varred(f_ii_i: f64, f_i_0: f64, p: usize, gamma_sq: f64, r_sq: f64) -> f64 {
    let f = f_ii_i * f_i_0;
    if (1.0 - f).abs() < 1e-15 {
        return 0.0;
    }
    100.0 * (1.0 - f_ii_i) / (1.0 - f) * (1.0 - v_pgamma(p, gamma_sq)) * r_sq
}

/// Draw one chain for `criteria` (one per phase after the first).
pub fn draw_chain(
    rng: &mut ChaCha8Rng,
    pop: &FinitePopulation,
    designs: &[Design],
    criteria: &[BalanceCriterion],
) -> Result<PhaseChain> {
    let chain = match (designs, criteria) {
        ([d1, d2], [c2]) => draw_tprs(rng, pop, d1, d2, c2)?,
        ([d1, d2, d3], [c2, c3]) => draw_three_phase(rng, pop, [d1, d2, d3], c2, c3)?,
        _ => return Err(Error::Config("two or three phases with one criterion per later phase are required".into())),
    };
    Ok(chain)
}

/// Stream `k` of the base seed.
pub fn replicate_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub population: String,
    pub setting: String,
    pub estimator: String,
    pub n_ok: usize,
    pub failures: usize,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub mean_ve: Option<f64>,
    /// Percent of intervals covering the truth.
    pub coverage: Option<f64>,
    /// Percent variance reduction against the baseline setting.
    pub varred: Option<f64>,
    pub theory_varred: Option<f64>,
    pub mean_draws_ii: f64,
    pub mean_draws_iii: Option<f64>,
    pub negative_weight_replicates: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub setting: String,
    pub replicate: usize,
    pub population: String,
    pub estimator: String,
    pub estimate: Option<f64>,
    pub variance_estimate: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub draws_ii: Option<u64>,
    pub draws_iii: Option<u64>,
    pub negative_weights: Option<usize>,
    pub error: Option<String>,
    pub micros: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentResult {
    pub rows: Vec<SummaryRow>,
    pub replicates: Vec<ReplicateRow>,
}

impl ExperimentResult {
    pub fn find(&self, population: &str, setting: &str, estimator: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.population == population && r.setting == setting && r.estimator == estimator)
    }

    pub fn write_summary<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.rows)
    }

    pub fn write_replicates<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_rows(out, &self.replicates)
    }
}

fn write_rows<W: std::io::Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(())
}

/// Interval per frame and estimator of one replicate.
type Intervals = Vec<Vec<Option<(f64, f64)>>>;

struct Replicate {
    draws: Vec<u64>,
    /// `[frame][estimator]`.
    cells: Vec<Vec<std::result::Result<EstimateReport, String>>>,
    micros: u64,
}

fn run_replicate(
    k: usize,
    cfg: &ExperimentConfig,
    frames: &[LabeledFrame],
    designs: &[Design],
    criteria: &[BalanceCriterion],
    evaluator: &Evaluator,
) -> Replicate {
    let start = Instant::now();
    let mut rng = replicate_rng(cfg.seed, k as u64);
    let n_est = evaluator.estimators.len();
    let (draws, cells) = match draw_chain(&mut rng, &frames[0].pop, designs, criteria) {
        Ok(chain) => {
            let draws = chain.levels()[1..].iter().map(|l| l.draws()).collect();
            let cells = frames
                .iter()
                .map(|f| evaluator.evaluate(&chain, &f.pop).into_iter().map(|r| r.map_err(|e| e.to_string())).collect())
                .collect();
            (draws, cells)
        }
        Err(e) => {
            let msg = e.to_string();
            (Vec::new(), frames.iter().map(|_| vec![Err(msg.clone()); n_est]).collect())
        }
    };
    Replicate { draws, cells, micros: start.elapsed().as_micros() as u64 }
}

/// Run every setting of `cfg` and summarize per frame, setting and estimator.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    let frames = cfg.frames()?;
    let designs = cfg.designs(&frames[0].pop)?;
    let evaluator = Evaluator::from_config(cfg, &designs)?;
    let truths: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| evaluator.estimators.iter().map(|e| truth(e, &f.pop)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let r_sq: Vec<Option<f64>> = frames.iter().map(|f| frame_r_squared(&f.pop, &evaluator.x_cols).ok()).collect();
    let srs_two_phase = designs.len() == 2
        && cfg.phases.iter().all(|p| p.design == DesignKind::Srswor)
        && cfg.phases[1].tiers.is_none();
    let n_units = frames[0].pop.n_units() as f64;

    let mut quantiler = MixtureQuantiler::new(cfg.quantile_draws, cfg.quantile_seed);
    let mut result = ExperimentResult::default();
    // variance per (setting, frame, estimator) for VarRed
    let mut variances: Vec<Vec<Vec<f64>>> = Vec::new();
    for setting in &cfg.settings {
        let criteria = cfg.criteria(setting, &frames[0].pop)?;
        let reps: Vec<Replicate> = (0..cfg.replicates)
            .into_par_iter()
            .map(|k| run_replicate(k, cfg, &frames, &designs, &criteria, &evaluator))
            .collect();

        let intervals = if cfg.intervals {
            for rep in &reps {
                for cell in rep.cells.iter().flatten().flatten() {
                    if let Some(c) = cell.components.as_ref().filter(|c| c.has_balance_terms()) {
                        quantiler.prepare(&c.mixture())?;
                    }
                }
            }
            let q = &quantiler;
            let alpha = cfg.alpha;
            let ci: Vec<Intervals> = reps
                .par_iter()
                .map(|rep| {
                    rep.cells
                        .iter()
                        .map(|row| {
                            row.iter()
                                .map(|cell| {
                                    let r = cell.as_ref().ok()?;
                                    confidence_interval_prepared(r.estimate, r.components.as_ref()?, alpha, q).ok()
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            Some(ci)
        } else {
            None
        };

        let n_draws = reps.iter().filter(|r| !r.draws.is_empty()).count().max(1) as f64;
        let mean_draws = |j: usize| reps.iter().filter_map(|r| r.draws.get(j)).sum::<u64>() as f64 / n_draws;
        let mean_draws_ii = mean_draws(0);
        let mean_draws_iii = (designs.len() == 3).then(|| mean_draws(1));

        let mut setting_vars = Vec::with_capacity(frames.len());
        for (f, frame) in frames.iter().enumerate() {
            let mut frame_vars = Vec::with_capacity(evaluator.estimators.len());
            for (e, spec) in evaluator.estimators.iter().enumerate() {
                let cells: Vec<_> = reps.iter().map(|r| &r.cells[f][e]).collect();
                let ok: Vec<&EstimateReport> = cells.iter().filter_map(|c| c.as_ref().ok()).collect();
                let failures = cells.len() - ok.len();
                if failures as f64 > cfg.max_failure_rate * cfg.replicates as f64 || ok.is_empty() {
                    let first = cells.iter().find_map(|c| c.as_ref().err()).cloned().unwrap_or_default();
                    return Err(Error::TooManyFailures {
                        failed: failures,
                        total: cfg.replicates,
                        limit: 100.0 * cfg.max_failure_rate,
                        first,
                    });
                }
                let t = truths[f][e];
                let n = ok.len() as f64;
                let mean_estimate = ok.iter().map(|r| r.estimate).sum::<f64>() / n;
                let variance = if ok.len() > 1 {
                    ok.iter().map(|r| (r.estimate - mean_estimate).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    f64::NAN
                };
                let mse = ok.iter().map(|r| (r.estimate - t).powi(2)).sum::<f64>() / n;
                let ves: Vec<f64> = ok.iter().filter_map(|r| r.variance()).collect();
                let mean_ve = (!ves.is_empty()).then(|| ves.iter().sum::<f64>() / ves.len() as f64);
                let coverage = intervals.as_ref().and_then(|ci| {
                    let hits: Vec<bool> =
                        ci.iter().filter_map(|rep| rep[f][e]).map(|(lo, hi)| lo <= t && t <= hi).collect();
                    (!hits.is_empty()).then(|| 100.0 * hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
                });
                let theory_varred = match (spec, srs_two_phase, r_sq[f]) {
                    (EstimatorSpec::Mean, true, Some(r2)) => {
                        let n_i = cfg.phases[0].n.unwrap_or(0) as f64;
                        let n_ii = cfg.phases[1].n.unwrap_or(0) as f64;
                        let g = criteria[0].gamma_sq.value();
                        Some(theoretical_varred(n_ii / n_i, n_i / n_units, evaluator.x_cols.len(), g, r2))
                    }
                    _ => None,
                };
                let negative_weight_replicates = matches!(spec, EstimatorSpec::Reg)
                    .then(|| ok.iter().filter(|r| r.negative_weights.is_some_and(|c| c > 0)).count())
                    .filter(|_| designs.len() == 2);
                frame_vars.push(variance);
                result.rows.push(SummaryRow {
                    population: frame.label.clone(),
                    setting: setting.label.clone(),
                    estimator: spec.to_string(),
                    n_ok: ok.len(),
                    failures,
                    truth: t,
                    mean_estimate,
                    bias: mean_estimate - t,
                    variance,
                    mse,
                    mean_ve,
                    coverage,
                    varred: None,
                    theory_varred,
                    mean_draws_ii,
                    mean_draws_iii,
                    negative_weight_replicates,
                });
            }
            setting_vars.push(frame_vars);
        }
        variances.push(setting_vars);

        if opts.keep_replicates {
            for (k, rep) in reps.iter().enumerate() {
                for (f, frame) in frames.iter().enumerate() {
                    for (e, spec) in evaluator.estimators.iter().enumerate() {
                        let cell = &rep.cells[f][e];
                        let ci = intervals.as_ref().and_then(|c| c[k][f][e]);
                        let ok = cell.as_ref().ok();
                        result.replicates.push(ReplicateRow {
                            setting: setting.label.clone(),
                            replicate: k,
                            population: frame.label.clone(),
                            estimator: spec.to_string(),
                            estimate: ok.map(|r| r.estimate),
                            variance_estimate: ok.and_then(EstimateReport::variance),
                            ci_low: ci.map(|c| c.0),
                            ci_high: ci.map(|c| c.1),
                            draws_ii: rep.draws.first().copied(),
                            draws_iii: rep.draws.get(1).copied(),
                            negative_weights: ok.and_then(|r| r.negative_weights),
                            error: cell.as_ref().err().cloned(),
                            micros: rep.micros,
                        });
                    }
                }
            }
        }
    }

    if let Some(base) = cfg.baseline_label() {
        let b = cfg.settings.iter().position(|s| s.label == base).unwrap_or(0);
        let n_est = evaluator.estimators.len();
        for (i, row) in result.rows.iter_mut().enumerate() {
            let (s, rest) = (i / (frames.len() * n_est), i % (frames.len() * n_est));
            let (f, e) = (rest / n_est, rest % n_est);
            if s != b {
                row.varred = Some(100.0 * (1.0 - variances[s][f][e] / variances[b][f][e]));
            }
        }
    }
    Ok(result)
}
