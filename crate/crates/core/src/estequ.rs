//! Parameters defined by estimating equations `Σ s(y_i; ξ)/π*_i = 0` over
//! the phase-II sample, and their design-based variance.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::balance::phase2_diff_covariance_general;
use crate::chain::{Phase, PhaseChain};
use crate::error::{Error, Result};
use crate::estimators::{fit_regression, weighted_mean};
use crate::linalg::Matrix;
use crate::population::FinitePopulation;
use crate::variance::{design_double_sum, TermKind, VarianceComponents, VarianceStyle};

/// A user-supplied differentiable score `s(y; ξ) ∈ R^q`.
pub trait Score: fmt::Debug + Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, y: f64, xi: &[f64], out: &mut [f64]);

    /// Write `∂s/∂ξ` (`q × q`, rows index score components) and return
    /// `true`, or return `false` to fall back to numeric differentiation.
    fn derivative(&self, _y: f64, _xi: &[f64], _out: &mut Matrix) -> bool {
        false
    }

    /// Starting value for the solver.
    fn start(&self, y: &[f64], weights: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub enum EstimatingFunction {
    /// `y − ξ`.
    Mean,
    /// `1{y < c} − ξ`.
    ProportionBelow(f64),
    /// `(y − ξ₁, (y − ξ₁)² − ξ₂)`; `ξ₂` uses divisor `Σ w`.
    Variance,
    /// `1{y ≤ ξ} − τ`, solved as `inf{ξ : s̄(ξ) ≥ 0}`.
    Quantile(f64),
    Custom(Arc<dyn Score>),
}

impl EstimatingFunction {
    pub fn dim(&self) -> usize {
        match self {
            EstimatingFunction::Variance => 2,
            EstimatingFunction::Custom(s) => s.dim(),
            _ => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            EstimatingFunction::Quantile(tau) if !(*tau > 0.0 && *tau < 1.0) => {
                Err(Error::Config(alloc::format!("quantile level {tau} outside (0, 1)")))
            }
            EstimatingFunction::ProportionBelow(c) if !c.is_finite() => Err(Error::Config("proportion cut must be finite".into())),
            EstimatingFunction::Custom(s) if s.dim() == 0 => Err(Error::Config("score dimension must be positive".into())),
            _ => Ok(()),
        }
    }

    /// `s(y; ξ)`.
    pub fn eval(&self, y: f64, xi: &[f64], out: &mut [f64]) {
        match self {
            EstimatingFunction::Mean => out[0] = y - xi[0],
            EstimatingFunction::ProportionBelow(c) => out[0] = f64::from(u8::from(y < *c)) - xi[0],
            EstimatingFunction::Variance => {
                let d = y - xi[0];
                out[0] = d;
                out[1] = d * d - xi[1];
            }
            EstimatingFunction::Quantile(tau) => out[0] = f64::from(u8::from(y <= xi[0])) - tau,
            EstimatingFunction::Custom(s) => s.eval(y, xi, out),
        }
    }

    /// Analytic `∂s/∂ξ` when available.
    fn derivative(&self, y: f64, xi: &[f64], out: &mut Matrix) -> bool {
        match self {
            EstimatingFunction::Mean | EstimatingFunction::ProportionBelow(_) => {
                out[(0, 0)] = -1.0;
                true
            }
            EstimatingFunction::Variance => {
                out[(0, 0)] = -1.0;
                out[(0, 1)] = 0.0;
                out[(1, 0)] = -2.0 * (y - xi[0]);
                out[(1, 1)] = -1.0;
                true
            }
            EstimatingFunction::Quantile(_) => false,
            EstimatingFunction::Custom(s) => s.derivative(y, xi, out),
        }
    }
}

/// Solution of an estimating equation on the phase-II sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EEFit {
    pub xi_hat: Vec<f64>,
    /// Weighted mean of `∂s/∂ξ` at `ξ̂` (density estimate for quantiles).
    pub gamma_s_hat: Matrix,
    /// `p × q` regression of the scores on `x`.
    pub b_hat: Matrix,
    /// Scores `s_i(ξ̂)`, one row per phase-II unit.
    pub scores: Matrix,
    /// `ê^s_i = s_i − B̂ᵀx_i`, centered at its weighted mean.
    pub residual_block: Matrix,
    pub iterations: usize,
}

/// Newton settings.
pub const SOLVER_TOLERANCE: f64 = 1e-10;
pub const SOLVER_MAX_ITERATIONS: usize = 100;
pub const SOLVER_MAX_HALVINGS: usize = 30;

struct WeightedScore<'a> {
    func: &'a EstimatingFunction,
    y: &'a [f64],
    w: &'a [f64],
    total: f64,
}

impl WeightedScore<'_> {
    fn mean(&self, xi: &[f64]) -> Vec<f64> {
        let q = self.func.dim();
        let mut out = vec![0.0; q];
        let mut s = vec![0.0; q];
        for (&y, &w) in self.y.iter().zip(self.w) {
            self.func.eval(y, xi, &mut s);
            for (o, v) in out.iter_mut().zip(&s) {
                *o += w * v;
            }
        }
        out.iter().map(|v| v / self.total).collect()
    }

    fn jacobian(&self, xi: &[f64]) -> Matrix {
        let q = self.func.dim();
        let mut d = Matrix::zeros(q, q);
        let mut acc = Matrix::zeros(q, q);
        let mut analytic = true;
        for (&y, &w) in self.y.iter().zip(self.w) {
            if !self.func.derivative(y, xi, &mut d) {
                analytic = false;
                break;
            }
            acc = acc.add(&d.scale(w / self.total));
        }
        if analytic {
            return acc;
        }
        let mut out = Matrix::zeros(q, q);
        for k in 0..q {
            let h = 1e-6 * xi[k].abs().max(1.0);
            let mut up = xi.to_vec();
            let mut down = xi.to_vec();
            up[k] += h;
            down[k] -= h;
            let (a, b) = (self.mean(&up), self.mean(&down));
            for r in 0..q {
                out[(r, k)] = (a[r] - b[r]) / (2.0 * h);
            }
        }
        out
    }
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|a| a * a).sum::<f64>())
}

fn start(func: &EstimatingFunction, y: &[f64], w: &[f64], total: f64) -> Vec<f64> {
    let mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    match func {
        EstimatingFunction::Mean => vec![mean],
        EstimatingFunction::ProportionBelow(c) => {
            vec![y.iter().zip(w).filter(|(v, _)| **v < *c).map(|(_, b)| b).sum::<f64>() / total]
        }
        EstimatingFunction::Variance => {
            let var = y.iter().zip(w).map(|(a, b)| b * (a - mean) * (a - mean)).sum::<f64>() / total;
            vec![mean, var]
        }
        EstimatingFunction::Quantile(_) => vec![mean],
        EstimatingFunction::Custom(s) => s.start(y, w),
    }
}

fn newton(score: &WeightedScore<'_>, mut xi: Vec<f64>) -> Result<(Vec<f64>, usize)> {
    let mut current = score.mean(&xi);
    let scale = 1.0 + score.y.iter().zip(score.w).map(|(y, w)| w * y.abs()).sum::<f64>() / score.total;
    let tol = SOLVER_TOLERANCE * scale;
    for iteration in 0..=SOLVER_MAX_ITERATIONS {
        let r = norm(&current);
        if r <= tol {
            return Ok((xi, iteration));
        }
        if iteration == SOLVER_MAX_ITERATIONS {
            break;
        }
        let jac = score.jacobian(&xi);
        let step = solve_square(&jac, &current).ok_or(Error::NonIdentification)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=SOLVER_MAX_HALVINGS {
            let candidate: Vec<f64> = xi.iter().zip(&step).map(|(x, s)| x - t * s).collect();
            let value = score.mean(&candidate);
            if norm(&value) < r {
                xi = candidate;
                current = value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Solver { iterations: iteration + 1, residual: r });
        }
    }
    Err(Error::Solver { iterations: SOLVER_MAX_ITERATIONS, residual: norm(&current) })
}

/// Gaussian elimination with partial pivoting for small nonsymmetric systems.
fn solve_square(a: &Matrix, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = a.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs()))?;
        if m[(pivot, col)].abs() <= 1e-12 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                let tmp = m[(col, k)];
                m[(col, k)] = m[(pivot, k)];
                m[(pivot, k)] = tmp;
            }
            rhs.swap(col, pivot);
        }
        for r in (col + 1)..n {
            let f = m[(r, col)] / m[(col, col)];
            for k in col..n {
                m[(r, k)] -= f * m[(col, k)];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|k| m[(r, k)] * x[k]).sum();
        x[r] = (rhs[r] - s) / m[(r, r)];
    }
    Some(x)
}

/// `inf{ξ : Σ w(1{y ≤ ξ} − τ) ≥ 0}` by a scan over the sorted values.
pub fn weighted_quantile(y: &[f64], w: &[f64], tau: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let total: f64 = w.iter().sum();
    let mut cum = 0.0;
    let mut k = 0;
    while k < order.len() {
        // ties enter together
        let v = y[order[k]];
        while k < order.len() && y[order[k]] == v {
            cum += w[order[k]];
            k += 1;
        }
        if cum - tau * total >= -1e-12 * total {
            return Ok(v);
        }
    }
    Ok(y[order[order.len() - 1]])
}

/// Difference quotient of the weighted empirical CDF at `xi` over
/// `±1.06 σ̂ n^{−1/5}`.
pub fn density_at(y: &[f64], w: &[f64], xi: f64) -> f64 {
    let total: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let var = y.iter().zip(w).map(|(a, b)| b * (a - mean) * (a - mean)).sum::<f64>() / total;
    let h = 1.06 * libm::sqrt(var) * libm::pow(y.len() as f64, -0.2);
    if !(h > 0.0) {
        return 0.0;
    }
    let mass: f64 = y.iter().zip(w).filter(|(v, _)| **v > xi - h && **v <= xi + h).map(|(_, b)| b).sum();
    mass / total / (2.0 * h)
}

/// Solve the estimating equation on the phase-II sample of a two-phase chain.
pub fn solve_ee(
    chain: &PhaseChain,
    pop: &FinitePopulation,
    x_cols: &[usize],
    y: &[f64],
    func: &EstimatingFunction,
) -> Result<EEFit> {
    func.validate()?;
    if chain.n_phases() != 2 {
        return Err(Error::Config("estimating equations need a two-phase chain".into()));
    }
    let level = chain.level(Phase::II)?;
    if y.len() != level.len() {
        return Err(Error::Config("one value per phase-II unit is required".into()));
    }
    if y.is_empty() {
        return Err(Error::EmptySample);
    }
    let w: Vec<f64> = level.pi_star().iter().map(|p| 1.0 / p).collect();
    let total: f64 = w.iter().sum();
    let q = func.dim();
    let score = WeightedScore { func, y, w: &w, total };
    let (xi_hat, gamma, iterations) = match func {
        EstimatingFunction::Quantile(tau) => {
            let xi = weighted_quantile(y, &w, *tau)?;
            let f = density_at(y, &w, xi);
            (vec![xi], Matrix::from_vec(1, 1, vec![f]), 0)
        }
        _ => {
            let (xi, it) = newton(&score, start(func, y, &w, total))?;
            let g = score.jacobian(&xi);
            (xi, g, it)
        }
    };
    let mut scores = Matrix::zeros(y.len(), q);
    for (r, &v) in y.iter().enumerate() {
        func.eval(v, &xi_hat, scores.row_mut(r));
    }
    let x = chain.x_rows(pop, Phase::II, x_cols)?;
    let fit = fit_regression(&w, &x, &scores)?;
    let mut residual_block = Matrix::zeros(y.len(), q);
    for r in 0..y.len() {
        let xr = x.row(r);
        for j in 0..q {
            let pred: f64 = xr.iter().enumerate().map(|(k, v)| v * fit.coefficients[(k, j)]).sum();
            residual_block[(r, j)] = scores[(r, j)] - pred;
        }
    }
    for j in 0..q {
        let col = residual_block.column(j);
        let m = weighted_mean(&col, level.pi_star())?;
        for r in 0..y.len() {
            residual_block[(r, j)] -= m;
        }
    }
    Ok(EEFit { xi_hat, gamma_s_hat: gamma, b_hat: fit.coefficients, scores, residual_block, iterations })
}

/// Variance of `ξ̂`: the full covariance and, per component, the terms of
/// its limiting law.
#[derive(Debug, Clone, PartialEq)]
pub struct EEVariance {
    pub covariance: Matrix,
    pub components: Vec<VarianceComponents>,
}

/// Sandwich `Γ̂⁻¹(D₁ v + D₂ + D₃)Γ̂⁻ᵀ` with `D₁ = B̂ᵀ var(x̄_II − x̄_I | A) B̂`
/// and `D₂`, `D₃` the phase-II residual and phase-I score double sums.
pub fn ee_variance(
    chain: &PhaseChain,
    pop: &FinitePopulation,
    x_cols: &[usize],
    fit: &EEFit,
    style: VarianceStyle,
    approx: bool,
) -> Result<EEVariance> {
    let style = if style == VarianceStyle::SrsClosedForm { VarianceStyle::Ht } else { style };
    let level = chain.level(Phase::II)?;
    let q = fit.xi_hat.len();
    let gamma_factor = GammaInverse::new(&fit.gamma_s_hat)?;
    let phase_i = chain.level(Phase::I)?;
    let x_i = chain.x_rows(pop, Phase::I, x_cols)?;
    let diff = phase2_diff_covariance_general(
        &x_i,
        phase_i.pi_star(),
        level.sample().first_order(),
        level.sample().rule(),
        chain.frame_size(),
    )?;
    let d1 = fit.b_hat.transpose().matmul(&diff).matmul(&fit.b_hat);
    let w_ii: Vec<f64> = level.pi_star().iter().map(|p| 1.0 / p).collect();
    let d2 = design_double_sum(chain, Phase::II, Phase::II, &[Phase::II], &w_ii, &fit.residual_block, style, approx)?;
    let pos = chain.positions(Phase::II, Phase::I)?;
    let sample_i = phase_i.sample();
    let w_i: Vec<f64> = pos.iter().map(|&k| 1.0 / sample_i.pi(k)).collect();
    let mut centered = fit.scores.clone();
    for j in 0..q {
        let m = weighted_mean(&fit.scores.column(j), level.pi_star())?;
        for r in 0..centered.rows() {
            centered[(r, j)] -= m;
        }
    }
    let d3 = design_double_sum(chain, Phase::II, Phase::I, &[Phase::I, Phase::II], &w_i, &centered, style, approx)?;
    let sandwich = |m: &Matrix| gamma_factor.sandwich(m);
    let (s1, s2, s3) = (sandwich(&d1), sandwich(&d2), sandwich(&d3));
    let kind = match level.balance() {
        Some(r) => TermKind::Balance { dim: r.dim(), gamma_sq: r.gamma_sq },
        None => TermKind::Balance { dim: x_cols.len(), gamma_sq: f64::INFINITY },
    };
    let mut components = Vec::with_capacity(q);
    for j in 0..q {
        let mut c = VarianceComponents::new(style);
        c.push("balance", kind, s1[(j, j)]);
        c.push("residual", TermKind::Normal, s2[(j, j)]);
        c.push("outer", TermKind::Normal, s3[(j, j)]);
        components.push(c);
    }
    let v = match kind {
        TermKind::Balance { dim, gamma_sq } => crate::ldist::v_pgamma(dim, gamma_sq),
        TermKind::Normal => 1.0,
    };
    let covariance = s1.scale(v).add(&s2).add(&s3);
    Ok(EEVariance { covariance, components })
}

/// `Γ⁻¹ M Γ⁻ᵀ` for a possibly nonsymmetric `Γ`.
struct GammaInverse {
    inverse: Matrix,
}

impl GammaInverse {
    fn new(gamma: &Matrix) -> Result<Self> {
        let q = gamma.rows();
        let mut inverse = Matrix::zeros(q, q);
        for k in 0..q {
            let mut e = vec![0.0; q];
            e[k] = 1.0;
            let col = solve_square(gamma, &e).ok_or(Error::NonIdentification)?;
            for r in 0..q {
                inverse[(r, k)] = col[r];
            }
        }
        if !inverse.is_finite() {
            return Err(Error::NonIdentification);
        }
        Ok(Self { inverse })
    }

    fn sandwich(&self, m: &Matrix) -> Matrix {
        self.inverse.matmul(m).matmul(&self.inverse.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_scan() {
        assert_eq!(weighted_quantile(&[1.0, 2.0, 3.0], &[1.0; 3], 0.5).unwrap(), 2.0);
        assert_eq!(weighted_quantile(&[3.0, 1.0, 2.0], &[1.0; 3], 0.1).unwrap(), 1.0);
        assert_eq!(weighted_quantile(&[1.0, 2.0], &[3.0, 1.0], 0.75).unwrap(), 1.0);
        assert_eq!(weighted_quantile(&[1.0, 2.0], &[3.0, 1.0], 0.76).unwrap(), 2.0);
    }

    #[test]
    fn variance_kind_by_hand() {
        let y = [1.0, 3.0];
        let w = [1.0, 1.0];
        let f = EstimatingFunction::Variance;
        let s = WeightedScore { func: &f, y: &y, w: &w, total: 2.0 };
        let (xi, _) = newton(&s, vec![0.0, 0.5]).unwrap();
        assert!((xi[0] - 2.0).abs() < 1e-9 && (xi[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn small_solve() {
        let a = Matrix::from_rows(&[&[0.0, 2.0], &[1.0, 1.0]]);
        let x = solve_square(&a, &[4.0, 3.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert!(solve_square(&Matrix::zeros(2, 2), &[1.0, 1.0]).is_none());
    }
}
