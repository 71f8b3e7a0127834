//! Point estimators of the frame mean.
//!
//! All weighted means are Hájek means (estimated denominators) unless a
//! function says otherwise; weighted regressions center at Hájek means.

use alloc::vec;
use alloc::vec::Vec;

use crate::balance::{hajek_column_means, hstack};
use crate::chain::{Phase, PhaseChain};
use crate::designs::DrawnSample;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymFactor};
use crate::population::FinitePopulation;
use crate::sum::NeumaierSum;

/// `Σ u_i/π_i / Σ 1/π_i`.
pub fn weighted_mean(values: &[f64], pi: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut num = NeumaierSum::new();
    let mut den = NeumaierSum::new();
    for (&v, &p) in values.iter().zip(pi) {
        num.add(v / p);
        den.add(1.0 / p);
    }
    Ok(num.value() / den.value())
}

/// Hájek mean of `values` (one per sampled unit, in index order).
pub fn hajek_mean(sample: &DrawnSample, values: &[f64]) -> Result<f64> {
    if values.len() != sample.len() {
        return Err(Error::Config("one value per sampled unit is required".into()));
    }
    let pi: Vec<f64> = sample.indices().iter().map(|&i| sample.pi(i)).collect();
    weighted_mean(values, &pi)
}

/// Denominator of the double-expansion estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    /// `Σ 1/π*` over the sample.
    #[default]
    Hajek,
    /// The frame size `N`.
    FrameSize,
}

/// Double-expansion (`π*`) mean of values observed on the units of `phase`.
pub fn pi_star_mean(chain: &PhaseChain, phase: Phase, values: &[f64], denominator: Denominator) -> Result<f64> {
    let level = chain.level(phase)?;
    if values.len() != level.len() {
        return Err(Error::Config("one value per unit of the phase is required".into()));
    }
    match denominator {
        Denominator::Hajek => weighted_mean(values, level.pi_star()),
        Denominator::FrameSize => {
            if values.is_empty() {
                return Err(Error::EmptySample);
            }
            let total: NeumaierSum = values.iter().zip(level.pi_star()).map(|(v, p)| v / p).collect();
            Ok(total.value() / chain.frame_size() as f64)
        }
    }
}

/// Reweighted expansion estimator for two-phase stratified designs: phase-I
/// expansion of each stratum's size times the phase-II weighted stratum mean,
/// summed and divided by `N`.
///
/// `stratum_of` labels every frame unit; `values` are observed on phase II.
pub fn ree(chain: &PhaseChain, stratum_of: &[usize], values: &[f64]) -> Result<f64> {
    let phase_i = chain.level(Phase::I)?;
    let phase_ii = chain.level(Phase::II)?;
    if values.len() != phase_ii.len() {
        return Err(Error::Config("one value per phase-II unit is required".into()));
    }
    let n_strata = stratum_of.iter().copied().max().map_or(0, |m| m + 1);
    let mut size = vec![0.0; n_strata];
    for (&u, &p) in phase_i.units().iter().zip(phase_i.pi_star()) {
        size[stratum_of[u]] += 1.0 / p;
    }
    let mut num = vec![0.0; n_strata];
    let mut den = vec![0.0; n_strata];
    for ((&u, &p), &y) in phase_ii.units().iter().zip(phase_ii.pi_star()).zip(values) {
        num[stratum_of[u]] += y / p;
        den[stratum_of[u]] += 1.0 / p;
    }
    let mut total = NeumaierSum::new();
    for h in 0..n_strata {
        if size[h] > 0.0 {
            if den[h] == 0.0 {
                return Err(Error::UndefinedRatio { stratum: h });
            }
            total.add(size[h] * num[h] / den[h]);
        }
    }
    Ok(total.value() / chain.frame_size() as f64)
}

/// Weighted least-squares fit with Hájek-weighted centers.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    /// `p × q` coefficients, one column per response.
    pub coefficients: Matrix,
    pub center_x: Vec<f64>,
    pub center_y: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RegressionFit {
    /// `(x − x̄)ᵀ B`, one entry per response.
    pub fn predict_centered(&self, x: &[f64]) -> Vec<f64> {
        let q = self.coefficients.cols();
        let mut out = vec![0.0; q];
        for (k, (xv, c)) in x.iter().zip(&self.center_x).enumerate() {
            let d = xv - c;
            for (j, o) in out.iter_mut().enumerate() {
                *o += d * self.coefficients[(k, j)];
            }
        }
        out
    }

    /// Coefficients of the first response.
    pub fn beta(&self) -> Vec<f64> {
        self.coefficients.column(0)
    }

    /// Residuals `y_i − x_iᵀβ̂` of response `j` (uncentered intercept-free form).
    pub fn residuals(&self, x: &Matrix, y: &[f64], j: usize) -> Vec<f64> {
        (0..x.rows())
            .map(|r| y[r] - x.row(r).iter().enumerate().map(|(k, v)| v * self.coefficients[(k, j)]).sum::<f64>())
            .collect()
    }
}

/// Solve `{Σ w (x − x̄)(x − x̄)ᵀ} B = Σ w (x − x̄)(y − ȳ)ᵀ`.
pub fn fit_regression(weights: &[f64], x: &Matrix, y: &Matrix) -> Result<RegressionFit> {
    let n = x.rows();
    let p = x.cols();
    if y.rows() != n || weights.len() != n {
        return Err(Error::Config("regression inputs disagree on the number of units".into()));
    }
    if n <= p {
        return Err(Error::InsufficientData { n, p });
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::Config(alloc::format!("regression weight {w} must be positive")));
    }
    let pi: Vec<f64> = weights.iter().map(|w| 1.0 / w).collect();
    let center_x = hajek_column_means(x, &pi);
    let center_y = hajek_column_means(y, &pi);
    let mut gram = Matrix::zeros(p, p);
    let mut cross = Matrix::zeros(p, y.cols());
    let mut dx = vec![0.0; p];
    let mut dy = vec![0.0; y.cols()];
    for r in 0..n {
        for (k, v) in x.row(r).iter().enumerate() {
            dx[k] = v - center_x[k];
        }
        for (k, v) in y.row(r).iter().enumerate() {
            dy[k] = v - center_y[k];
        }
        gram.add_outer(weights[r], &dx, &dx);
        cross.add_outer(weights[r], &dx, &dy);
    }
    let factor = SymFactor::new(&gram).map_err(|_| Error::Collinear { context: "weighted regression" })?;
    Ok(RegressionFit { coefficients: factor.solve(&cross), center_x, center_y, weights: weights.to_vec() })
}

/// Single-response convenience wrapper.
pub fn fit_regression_vec(weights: &[f64], x: &Matrix, y: &[f64]) -> Result<RegressionFit> {
    fit_regression(weights, x, &Matrix::column_vector(y))
}

fn inverse_weights(pi: &[f64]) -> Vec<f64> {
    pi.iter().map(|p| 1.0 / p).collect()
}

/// `ȳ_in − (x̄_in − x̄_out)ᵀ β̂` where `in` is `phase` (observing `y`) and
/// `out` the phase it was drawn from.
pub fn regression_estimate_two_phase(
    chain: &PhaseChain,
    pop: &FinitePopulation,
    phase: Phase,
    x_cols: &[usize],
    y: &[f64],
) -> Result<(f64, RegressionFit)> {
    let outer = phase.previous().ok_or_else(|| Error::Config("regression needs an outer phase".into()))?;
    let level = chain.level(phase)?;
    if y.len() != level.len() {
        return Err(Error::Config("one value per unit of the phase is required".into()));
    }
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    let x_in = chain.x_rows(pop, phase, x_cols)?;
    let x_out = chain.x_rows(pop, outer, x_cols)?;
    let fit = fit_regression_vec(&inverse_weights(level.pi_star()), &x_in, y)?;
    let outer_mean = hajek_column_means(&x_out, chain.level(outer)?.pi_star());
    let beta = fit.beta();
    let shift: f64 = fit.center_x.iter().zip(&outer_mean).zip(&beta).map(|((a, b), c)| (a - b) * c).sum();
    Ok((fit.center_y[0] - shift, fit))
}

/// Rows `c_i = (x_i, a_i)` over the phase-III units.
pub fn three_phase_design_rows(chain: &PhaseChain, pop: &FinitePopulation, x_cols: &[usize]) -> Result<Matrix> {
    let derived = chain.derived().ok_or_else(|| Error::Config("chain carries no phase-II covariate a".into()))?;
    let x = chain.x_rows(pop, Phase::III, x_cols)?;
    let pos = chain.positions(Phase::III, Phase::III)?;
    let a = derived.a.select(&pos, &(0..derived.a.cols()).collect::<Vec<_>>());
    Ok(hstack(&x, &a))
}

/// `ȳ_III + (x̄_I − x̄_III, −ā_III)ᵀ β̂_{yc,III}`; `ā_II = 0` by construction of `a`.
pub fn regression_estimate_three_phase(
    chain: &PhaseChain,
    pop: &FinitePopulation,
    x_cols: &[usize],
    y: &[f64],
) -> Result<(f64, RegressionFit)> {
    let level = chain.level(Phase::III)?;
    if y.len() != level.len() {
        return Err(Error::Config("one value per phase-III unit is required".into()));
    }
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    let c = three_phase_design_rows(chain, pop, x_cols)?;
    let fit = fit_regression_vec(&inverse_weights(level.pi_star()), &c, y)?;
    let x_i = chain.x_rows(pop, Phase::I, x_cols)?;
    let mean_i = hajek_column_means(&x_i, chain.level(Phase::I)?.pi_star());
    let beta = fit.beta();
    let mut adjust = 0.0;
    for (k, b) in beta.iter().enumerate() {
        let target = if k < x_cols.len() { mean_i[k] } else { 0.0 };
        adjust += (target - fit.center_x[k]) * b;
    }
    Ok((fit.center_y[0] + adjust, fit))
}

/// Regression weights and how many are negative.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionWeights {
    pub weights: Vec<f64>,
    pub negative_count: usize,
}

/// Weights `ω_i` with `Σ ω_i y_i` equal to the two-phase regression estimate:
/// `ω_i = w_i/W + (x̄_out − x̄_in)ᵀ S⁻¹ w_i (x_i − x̄_in)`, `w = 1/π*`,
/// `W = Σ w`, `S = Σ w (x − x̄_in)(x − x̄_in)ᵀ`. They sum to one.
pub fn regression_weights(chain: &PhaseChain, pop: &FinitePopulation, phase: Phase, x_cols: &[usize]) -> Result<RegressionWeights> {
    let outer = phase.previous().ok_or_else(|| Error::Config("regression needs an outer phase".into()))?;
    let level = chain.level(phase)?;
    let n = level.len();
    let p = x_cols.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if n <= p {
        return Err(Error::InsufficientData { n, p });
    }
    let x_in = chain.x_rows(pop, phase, x_cols)?;
    let x_out = chain.x_rows(pop, outer, x_cols)?;
    let w = inverse_weights(level.pi_star());
    let total: f64 = w.iter().sum();
    let mean_in = hajek_column_means(&x_in, level.pi_star());
    let mean_out = hajek_column_means(&x_out, chain.level(outer)?.pi_star());
    let mut gram = Matrix::zeros(p, p);
    let mut d = vec![0.0; p];
    for r in 0..n {
        for (k, v) in x_in.row(r).iter().enumerate() {
            d[k] = v - mean_in[k];
        }
        gram.add_outer(w[r], &d, &d);
    }
    let factor = SymFactor::new(&gram).map_err(|_| Error::Collinear { context: "regression weights" })?;
    let gap: Vec<f64> = mean_out.iter().zip(&mean_in).map(|(o, i)| o - i).collect();
    let direction = factor.solve_vec(&gap);
    let weights: Vec<f64> = (0..n)
        .map(|r| {
            let lift: f64 = x_in.row(r).iter().zip(&mean_in).zip(&direction).map(|((v, m), g)| (v - m) * g).sum();
            w[r] / total + w[r] * lift
        })
        .collect();
    let negative_count = weights.iter().filter(|&&v| v < 0.0).count();
    Ok(RegressionWeights { weights, negative_count })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hajek_by_hand() {
        assert!((weighted_mean(&[1.0, 3.0], &[0.5, 0.25]).unwrap() - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(weighted_mean(&[4.0], &[0.3]).unwrap(), 4.0);
        assert_eq!(weighted_mean(&[], &[]), Err(Error::EmptySample));
    }

    #[test]
    fn scalar_fit_matches_closed_form() {
        let x = [0.0, 1.0, 2.0, 4.0, 7.0];
        let y = [1.0, 0.5, 3.0, 2.0, 6.0];
        let w = [1.0, 2.0, 0.5, 3.0, 1.5];
        let fit = fit_regression_vec(&w, &Matrix::column_vector(&x), &y).unwrap();
        let wt: f64 = w.iter().sum();
        let mx: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wt;
        let my: f64 = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / wt;
        let sxy: f64 = (0..5).map(|i| w[i] * (x[i] - mx) * (y[i] - my)).sum();
        let sxx: f64 = (0..5).map(|i| w[i] * (x[i] - mx) * (x[i] - mx)).sum();
        assert!((fit.beta()[0] - sxy / sxx).abs() < 1e-14);
    }

    #[test]
    fn identity_response() {
        let x = Matrix::from_vec(4, 2, vec![1.0, 0.0, 2.0, 1.0, 0.5, 3.0, 4.0, 1.0]);
        let fit = fit_regression(&[1.0; 4], &x, &x).unwrap();
        assert!(fit.coefficients.sub(&Matrix::identity(2)).max_abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let x = Matrix::column_vector(&[1.0, 1.0, 1.0]);
        assert!(matches!(fit_regression_vec(&[1.0; 3], &x, &[1.0, 2.0, 3.0]), Err(Error::Collinear { .. })));
        let x = Matrix::column_vector(&[1.0]);
        assert_eq!(fit_regression_vec(&[1.0], &x, &[1.0]), Err(Error::InsufficientData { n: 1, p: 1 }));
    }
}
