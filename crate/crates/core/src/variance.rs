//! Variance estimators and confidence intervals.
//!
//! Every component is on the scale of the estimator's variance (already
//! divided by the relevant sample size). A variance is a list of terms: a
//! balance term contributes `value · v_{p,γ²}` to the total and
//! `√value · L_{p,γ²}` to the limiting law, a normal term contributes
//! `value` and `√value · Z`.

use alloc::vec;
use alloc::vec::Vec;

use crate::balance::phase2_diff_covariance_general;
use crate::chain::{Phase, PhaseChain};
use crate::designs::DrawnSample;
use crate::error::{Error, Result};
use crate::estimators::{fit_regression_vec, three_phase_design_rows, weighted_mean, RegressionFit};
use crate::ldist::{normal_quantile, v_pgamma, MixtureQuantiler, MixtureSpec};
use crate::linalg::Matrix;
use crate::population::FinitePopulation;
use crate::sum::NeumaierSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceStyle {
    /// Horvitz–Thompson double sums.
    #[default]
    Ht,
    /// Sen–Yates–Grundy squared contrasts.
    Syg,
    /// Closed forms for simple random sampling in every phase.
    SrsClosedForm,
}

/// Whether the balance terms enter (mean estimator) or not (regression).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Mean,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TermKind {
    Balance { dim: usize, gamma_sq: f64 },
    Normal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceTerm {
    pub label: &'static str,
    pub kind: TermKind,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceComponents {
    pub style: VarianceStyle,
    pub terms: Vec<VarianceTerm>,
}

impl VarianceComponents {
    pub fn new(style: VarianceStyle) -> Self {
        Self { style, terms: Vec::new() }
    }

    pub fn push(&mut self, label: &'static str, kind: TermKind, value: f64) {
        self.terms.push(VarianceTerm { label, kind, value });
    }

    /// Raw value of the first term with this label.
    pub fn term(&self, label: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.label == label).map(|t| t.value)
    }

    /// Contribution of one term to the total variance.
    pub fn contribution(term: &VarianceTerm) -> f64 {
        match term.kind {
            TermKind::Balance { dim, gamma_sq } => term.value * v_pgamma(dim, gamma_sq),
            TermKind::Normal => term.value,
        }
    }

    /// Estimated variance of the estimator.
    pub fn total(&self) -> f64 {
        self.terms.iter().map(Self::contribution).sum()
    }

    /// The same components with every balance threshold removed.
    pub fn unrestricted_total(&self) -> f64 {
        self.terms.iter().map(|t| t.value).sum()
    }

    pub fn has_balance_terms(&self) -> bool {
        self.terms.iter().any(|t| matches!(t.kind, TermKind::Balance { gamma_sq, .. } if gamma_sq.is_finite()))
    }

    /// Limiting law of `estimate − target`, negative values clipped to zero.
    pub fn mixture(&self) -> MixtureSpec {
        let mut spec = MixtureSpec::default();
        for t in &self.terms {
            let scale = libm::sqrt(t.value.max(0.0));
            match t.kind {
                TermKind::Balance { dim, gamma_sq } => spec = spec.with_l(scale, dim, gamma_sq),
                TermKind::Normal => spec = spec.with_normal(scale),
            }
        }
        spec
    }

    /// Multiply every component by `factor` (variances of `a·y` use `a²`).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.value *= factor;
        }
        out
    }
}

/// Default pool size for mixture quantiles.
pub const DEFAULT_QUANTILE_DRAWS: usize = 1_000_000;

/// `(estimate − ν_{1−α/2}, estimate − ν_{α/2})` with `ν` the quantiles of the
/// limiting law of the components. Purely normal laws use exact normal
/// quantiles; `alpha = 1` gives the zero-width interval at the estimate.
///
/// Without a quantiler a fresh one with [`DEFAULT_QUANTILE_DRAWS`] and seed 0
/// is used.
pub fn confidence_interval(
    estimate: f64,
    components: &VarianceComponents,
    alpha: f64,
    quantiler: Option<&mut MixtureQuantiler>,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(alloc::format!("alpha {alpha} outside (0, 1]")));
    }
    if alpha == 1.0 {
        return Ok((estimate, estimate));
    }
    let spec = components.mixture();
    if spec.variance() == 0.0 {
        return Ok((estimate, estimate));
    }
    if !components.has_balance_terms() {
        let sd = libm::sqrt(spec.variance());
        let z = normal_quantile(1.0 - alpha / 2.0);
        return Ok((estimate - sd * z, estimate + sd * z));
    }
    let mut own;
    let q = match quantiler {
        Some(q) => q,
        None => {
            own = MixtureQuantiler::new(DEFAULT_QUANTILE_DRAWS, 0);
            &mut own
        }
    };
    q.prepare(&spec)?;
    confidence_interval_prepared(estimate, components, alpha, q)
}

/// [`confidence_interval`] with a quantiler that already holds the pools the
/// components need, so it can be shared across threads.
pub fn confidence_interval_prepared(
    estimate: f64,
    components: &VarianceComponents,
    alpha: f64,
    quantiler: &MixtureQuantiler,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(alloc::format!("alpha {alpha} outside (0, 1]")));
    }
    let spec = components.mixture();
    if alpha == 1.0 || spec.variance() == 0.0 {
        return Ok((estimate, estimate));
    }
    if !components.has_balance_terms() {
        let sd = libm::sqrt(spec.variance());
        let z = normal_quantile(1.0 - alpha / 2.0);
        return Ok((estimate - sd * z, estimate + sd * z));
    }
    let (lo, hi) = quantiler.quantile_pair(&spec, alpha / 2.0, 1.0 - alpha / 2.0)?;
    Ok((estimate - hi, estimate - lo))
}

/// Inclusion probabilities of one phase's design, located for the units of
/// the sample a double sum runs over.
struct PhaseProbs<'a> {
    sample: &'a DrawnSample,
    positions: Vec<usize>,
}

impl PhaseProbs<'_> {
    fn pi(&self, i: usize) -> f64 {
        self.sample.pi(self.positions[i])
    }

    fn joint(&self, i: usize, j: usize, approx: bool) -> Result<f64> {
        self.sample.pairwise_or_independent(self.positions[i], self.positions[j], approx)
    }

    /// `π_ij − π_i π_j`, with `π_i(1 − π_i)` on the diagonal.
    fn delta(&self, i: usize, j: usize, approx: bool) -> Result<f64> {
        if i == j {
            let p = self.pi(i);
            return Ok(p * (1.0 - p));
        }
        Ok(self.joint(i, j, approx)? - self.pi(i) * self.pi(j))
    }
}

fn phase_probs(chain: &PhaseChain, over: Phase, phase: Phase) -> Result<PhaseProbs<'_>> {
    Ok(PhaseProbs { sample: chain.level(phase)?.sample(), positions: chain.positions(over, phase)? })
}

/// `(1/N²) Σ_i Σ_j Δ_ij w_i w_j u_i u_jᵀ / Π_m π_{m,ij}` over the units of
/// phase `over`, with `Δ` from phase `delta` and the expansion product over
/// `expand`; the Sen–Yates–Grundy style replaces the summand by
/// `−½ Δ_ij (w_i u_i − w_j u_j)^{⊗2} / Π_m π_{m,ij}`.
#[allow(clippy::too_many_arguments)]
pub fn design_double_sum(
    chain: &PhaseChain,
    over: Phase,
    delta: Phase,
    expand: &[Phase],
    weights: &[f64],
    u: &Matrix,
    style: VarianceStyle,
    approx: bool,
) -> Result<Matrix> {
    let n = u.rows();
    let q = u.cols();
    if weights.len() != n {
        return Err(Error::Config("one weight per unit is required".into()));
    }
    let delta_probs = phase_probs(chain, over, delta)?;
    let expand_probs: Vec<PhaseProbs<'_>> = expand.iter().map(|&m| phase_probs(chain, over, m)).collect::<Result<_>>()?;
    let mut acc: Vec<NeumaierSum> = vec![NeumaierSum::new(); q * q];
    let mut wu_i = vec![0.0; q];
    let mut d = vec![0.0; q];
    for i in 0..n {
        for (k, v) in u.row(i).iter().enumerate() {
            wu_i[k] = weights[i] * v;
        }
        if style != VarianceStyle::Syg {
            let mut expansion = 1.0;
            for m in &expand_probs {
                expansion *= m.pi(i);
            }
            let c = delta_probs.delta(i, i, approx)? / expansion;
            for a in 0..q {
                for b in 0..q {
                    acc[a * q + b].add(c * wu_i[a] * wu_i[b]);
                }
            }
        }
        for j in (i + 1)..n {
            let dij = delta_probs.delta(i, j, approx)?;
            if dij == 0.0 {
                continue;
            }
            let mut expansion = 1.0;
            for m in &expand_probs {
                expansion *= m.joint(i, j, approx)?;
            }
            let uj = u.row(j);
            match style {
                VarianceStyle::Syg => {
                    // both orders of the pair: −½ · 2
                    let c = -dij / expansion;
                    for k in 0..q {
                        d[k] = wu_i[k] - weights[j] * uj[k];
                    }
                    for a in 0..q {
                        for b in 0..q {
                            acc[a * q + b].add(c * d[a] * d[b]);
                        }
                    }
                }
                _ => {
                    let c = dij * weights[j] / expansion;
                    for a in 0..q {
                        for b in 0..q {
                            acc[a * q + b].add(c * (wu_i[a] * uj[b] + uj[a] * wu_i[b]));
                        }
                    }
                }
            }
        }
    }
    let n2 = (chain.frame_size() as f64) * (chain.frame_size() as f64);
    Ok(Matrix::from_vec(q, q, acc.iter().map(|s| s.value() / n2).collect()))
}

fn scalar_double_sum(
    chain: &PhaseChain,
    over: Phase,
    delta: Phase,
    expand: &[Phase],
    weights: &[f64],
    u: &[f64],
    style: VarianceStyle,
    approx: bool,
) -> Result<f64> {
    Ok(design_double_sum(chain, over, delta, expand, weights, &Matrix::column_vector(u), style, approx)?[(0, 0)])
}

fn centered(values: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    let m = weighted_mean(values, pi)?;
    Ok(values.iter().map(|v| v - m).collect())
}

fn inverse(pi: &[f64]) -> Vec<f64> {
    pi.iter().map(|p| 1.0 / p).collect()
}

fn balance_kind(chain: &PhaseChain, phase: Phase, fallback_dim: usize) -> Result<TermKind> {
    Ok(match chain.level(phase)?.balance() {
        Some(r) => TermKind::Balance { dim: r.dim(), gamma_sq: r.gamma_sq },
        None => TermKind::Balance { dim: fallback_dim, gamma_sq: f64::INFINITY },
    })
}

fn check_inner(chain: &PhaseChain, y: &[f64], phase: Phase) -> Result<()> {
    let level = chain.level(phase)?;
    if y.len() != level.len() {
        return Err(Error::Config("one value per unit of the phase is required".into()));
    }
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(())
}

/// Pieces of the simple-random-sampling forms.
#[derive(Debug, Clone, PartialEq)]
pub struct SrsMoments {
    pub n_ii: usize,
    pub n_i: usize,
    pub frame_size: usize,
    /// `β̂ᵀ V̂_xx β̂ + V̂_ee`.
    pub v_yy: f64,
    /// Residual variance with divisor `n_II − p − 1`.
    pub v_ee: f64,
    /// `β̂ᵀ V̂_xx β̂` over the plain sample variance of `y`, clamped to `[0, 1]`.
    pub r_squared: f64,
    pub fit: RegressionFit,
}

/// Sample moments behind the closed forms, from the phase-II units.
pub fn srs_moments(chain: &PhaseChain, pop: &FinitePopulation, x_cols: &[usize], y: &[f64]) -> Result<SrsMoments> {
    check_inner(chain, y, Phase::II)?;
    let n = y.len();
    let p = x_cols.len();
    if n <= p + 1 {
        return Err(Error::DegreesOfFreedom { n, p });
    }
    let x = chain.x_rows(pop, Phase::II, x_cols)?;
    let fit = fit_regression_vec(&vec![1.0; n], &x, y)?;
    let beta = fit.beta();
    let mut sxx = Matrix::zeros(p, p);
    let mut dx = vec![0.0; p];
    let mut see = NeumaierSum::new();
    let mut syy = NeumaierSum::new();
    for (r, &yr) in y.iter().enumerate() {
        for (k, v) in x.row(r).iter().enumerate() {
            dx[k] = v - fit.center_x[k];
        }
        sxx.add_outer(1.0, &dx, &dx);
        let dy = yr - fit.center_y[0];
        let e = dy - dx.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        see.add(e * e);
        syy.add(dy * dy);
    }
    let explained = sxx.scale(1.0 / (n as f64 - 1.0)).quad_form(&beta);
    let v_ee = see.value() / (n - p - 1) as f64;
    let s_yy = syy.value() / (n as f64 - 1.0);
    let r_squared = if s_yy > 0.0 { (explained / s_yy).clamp(0.0, 1.0) } else { 0.0 };
    Ok(SrsMoments {
        n_ii: n,
        n_i: chain.level(Phase::I)?.len(),
        frame_size: chain.frame_size(),
        v_yy: explained + v_ee,
        v_ee,
        r_squared,
        fit,
    })
}

/// Closed-form variance of the phase-II mean under two-phase simple random
/// sampling with rejection:
/// `n⁻¹[(1 − f){1 − (1 − v)R̂²} + f(1 − n_I/N)]V̂_yy`, `f = n_II/n_I`.
pub fn vhat_srs_mean(chain: &PhaseChain, pop: &FinitePopulation, x_cols: &[usize], y: &[f64]) -> Result<VarianceComponents> {
    let m = srs_moments(chain, pop, x_cols, y)?;
    let n = m.n_ii as f64;
    let f = n / m.n_i as f64;
    let f_i = m.n_i as f64 / m.frame_size as f64;
    let mut out = VarianceComponents::new(VarianceStyle::SrsClosedForm);
    out.push("balance", balance_kind(chain, Phase::II, x_cols.len())?, (1.0 - f) * m.r_squared * m.v_yy / n);
    out.push("residual", TermKind::Normal, (1.0 - f) * (1.0 - m.r_squared) * m.v_yy / n);
    out.push("outer", TermKind::Normal, f * (1.0 - f_i) * m.v_yy / n);
    Ok(out)
}

/// Closed-form variance of the two-phase regression estimator:
/// `n⁻¹{f(1 − n_I/N)V̂_yy + (1 − f)V̂_ee}`.
pub fn vhat_srs_reg(chain: &PhaseChain, pop: &FinitePopulation, x_cols: &[usize], y: &[f64]) -> Result<VarianceComponents> {
    let m = srs_moments(chain, pop, x_cols, y)?;
    let n = m.n_ii as f64;
    let f = n / m.n_i as f64;
    let f_i = m.n_i as f64 / m.frame_size as f64;
    let mut out = VarianceComponents::new(VarianceStyle::SrsClosedForm);
    out.push("residual", TermKind::Normal, (1.0 - f) * m.v_ee / n);
    out.push("outer", TermKind::Normal, f * (1.0 - f_i) * m.v_yy / n);
    Ok(out)
}

/// Design-based variance for two-phase estimators from the phase-II sample:
/// balance `β̂ᵀ var(x̄_II − x̄_I | A) β̂`, the phase-II residual double sum
/// and the phase-I double sum of `y`.
///
/// `approx` replaces unknown joint probabilities by `π_i π_j`.
pub fn vhat_general(
    chain: &PhaseChain,
    pop: &FinitePopulation,
    x_cols: &[usize],
    y: &[f64],
    estimator: EstimatorKind,
    style: VarianceStyle,
    approx: bool,
) -> Result<VarianceComponents> {
    if style == VarianceStyle::SrsClosedForm {
        return match estimator {
            EstimatorKind::Mean => vhat_srs_mean(chain, pop, x_cols, y),
            EstimatorKind::Regression => vhat_srs_reg(chain, pop, x_cols, y),
        };
    }
    check_inner(chain, y, Phase::II)?;
    let level = chain.level(Phase::II)?;
    let x = chain.x_rows(pop, Phase::II, x_cols)?;
    let fit = fit_regression_vec(&inverse(level.pi_star()), &x, y)?;
    let residual = centered(&fit.residuals(&x, y, 0), level.pi_star())?;
    let v2 = scalar_double_sum(chain, Phase::II, Phase::II, &[Phase::II], &inverse(level.pi_star()), &residual, style, approx)?;
    let outer_probs = phase_probs(chain, Phase::II, Phase::I)?;
    let w_i: Vec<f64> = (0..y.len()).map(|i| 1.0 / outer_probs.pi(i)).collect();
    let yc = centered(y, level.pi_star())?;
    let v3 = scalar_double_sum(chain, Phase::II, Phase::I, &[Phase::I, Phase::II], &w_i, &yc, style, approx)?;
    let mut out = VarianceComponents::new(style);
    if estimator == EstimatorKind::Mean {
        let phase_i = chain.level(Phase::I)?;
        let x_i = chain.x_rows(pop, Phase::I, x_cols)?;
        let diff = phase2_diff_covariance_general(
            &x_i,
            phase_i.pi_star(),
            level.sample().first_order(),
            level.sample().rule(),
            chain.frame_size(),
        )?;
        out.push("balance", balance_kind(chain, Phase::II, x_cols.len())?, diff.quad_form(&fit.beta()));
    }
    out.push("residual", TermKind::Normal, v2);
    out.push("outer", TermKind::Normal, v3);
    Ok(out)
}

/// Variance of the three-phase mean or regression estimator from the
/// phase-III sample. The chain must come from three-phase rejective
/// sampling balanced on `x_cols` (phase II) and `(x_cols, a)` (phase III).
pub fn vhat_three_phase(
    chain: &PhaseChain,
    pop: &FinitePopulation,
    x_cols: &[usize],
    y: &[f64],
    estimator: EstimatorKind,
    style: VarianceStyle,
    approx: bool,
) -> Result<VarianceComponents> {
    if style == VarianceStyle::SrsClosedForm {
        return Err(Error::Config("no closed form for three-phase sampling; use ht or syg".into()));
    }
    check_inner(chain, y, Phase::III)?;
    let level = chain.level(Phase::III)?;
    let w_iii = inverse(level.pi_star());
    let x = chain.x_rows(pop, Phase::III, x_cols)?;
    let c = three_phase_design_rows(chain, pop, x_cols)?;
    let fit_yc = fit_regression_vec(&w_iii, &c, y)?;
    let fit_yx = fit_regression_vec(&w_iii, &x, y)?;
    let e_yc = centered(&fit_yc.residuals(&c, y, 0), level.pi_star())?;
    let e_yx = centered(&fit_yx.residuals(&x, y, 0), level.pi_star())?;
    let yc = centered(y, level.pi_star())?;

    let probs_i = phase_probs(chain, Phase::III, Phase::I)?;
    let w_i: Vec<f64> = (0..y.len()).map(|i| 1.0 / probs_i.pi(i)).collect();
    let pi_star_ii: Vec<f64> = chain
        .positions(Phase::III, Phase::III)?
        .iter()
        .map(|&k| chain.level(Phase::II).map(|l| l.pi_star()[k]))
        .collect::<Result<_>>()?;
    let w_ii = inverse(&pi_star_ii);
    let all = [Phase::I, Phase::II, Phase::III];
    let v_yy = scalar_double_sum(chain, Phase::III, Phase::I, &all, &w_i, &yc, style, approx)?;
    let v_eyx = scalar_double_sum(chain, Phase::III, Phase::II, &all[1..], &w_ii, &e_yx, style, approx)?;
    let v_eyc = scalar_double_sum(chain, Phase::III, Phase::III, &all[2..], &w_iii, &e_yc, style, approx)?;

    let mut out = VarianceComponents::new(style);
    if estimator == EstimatorKind::Mean {
        let record_ii = chain.level(Phase::II)?.balance().ok_or_else(|| Error::Config("phase II carries no balance record".into()))?;
        let record_iii =
            chain.level(Phase::III)?.balance().ok_or_else(|| Error::Config("phase III carries no balance record".into()))?;
        if record_ii.dim() != x.cols() || record_iii.dim() != c.cols() {
            return Err(Error::Config("balance records do not match the regression columns".into()));
        }
        out.push(
            "balance_c",
            TermKind::Balance { dim: record_iii.dim(), gamma_sq: record_iii.gamma_sq },
            record_iii.diff_covariance.quad_form(&fit_yc.beta()),
        );
        out.push(
            "balance_x",
            TermKind::Balance { dim: record_ii.dim(), gamma_sq: record_ii.gamma_sq },
            record_ii.diff_covariance.quad_form(&fit_yx.beta()),
        );
    }
    out.push("residual_c", TermKind::Normal, v_eyc);
    out.push("residual_x", TermKind::Normal, v_eyx);
    out.push("outer", TermKind::Normal, v_yy);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_and_mixture() {
        let mut c = VarianceComponents::new(VarianceStyle::Ht);
        c.push("balance", TermKind::Balance { dim: 1, gamma_sq: f64::INFINITY }, 2.0);
        c.push("residual", TermKind::Normal, 1.0);
        assert_eq!(c.total(), 3.0);
        assert!(!c.has_balance_terms());
        let (lo, hi) = confidence_interval(10.0, &c, 0.05, None).unwrap();
        assert!((hi - 10.0 - 1.959963984540054 * 3f64.sqrt()).abs() < 1e-9);
        assert!((10.0 - lo - (hi - 10.0)).abs() < 1e-12);
        assert_eq!(confidence_interval(10.0, &c, 1.0, None).unwrap(), (10.0, 10.0));
        assert!(confidence_interval(10.0, &c, 0.0, None).is_err());
    }

    #[test]
    fn balance_term_shrinks() {
        let mut c = VarianceComponents::new(VarianceStyle::Ht);
        c.push("balance", TermKind::Balance { dim: 1, gamma_sq: 0.01 }, 1.0);
        assert!((c.total() - v_pgamma(1, 0.01)).abs() < 1e-15);
        assert_eq!(c.unrestricted_total(), 1.0);
    }
}
