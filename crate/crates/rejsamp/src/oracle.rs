//! Exact enumeration of two-phase SRS with rejection on tiny frames.
use rejsamp_core::balance::{mahalanobis_q, phase2_diff_covariance_srs};
use rejsamp_core::{Column, Error as CoreError, FinitePopulation, Matrix};

use crate::error::Result;

/// Largest `C(N, n_I)·C(n_I, n_II)` enumerated.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;

/// One phase-I sample with every phase-II subset and its acceptance.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOneOutcome {
    pub a: Vec<usize>,
    /// Every size-`n_II` subset of `a`, as frame indices.
    pub b: Vec<Vec<usize>>,
    pub accepted: Vec<bool>,
}

impl PhaseOneOutcome {
    pub fn n_accepted(&self) -> usize {
        self.accepted.iter().filter(|&&a| a).count()
    }

    /// Accepted phase-II samples; each has probability `1/n_accepted` given `a`.
    pub fn accepted_samples(&self) -> impl Iterator<Item = &[usize]> {
        self.b.iter().zip(&self.accepted).filter(|(_, &a)| a).map(|(b, _)| b.as_slice())
    }
}

/// Joint law of `(A, B)`: `A` uniform over size-`n_I` subsets, `B` uniform
/// over the accepted size-`n_II` subsets of `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumeration {
    pub n_units: usize,
    pub n_i: usize,
    pub n_ii: usize,
    pub gamma_sq: f64,
    pub outcomes: Vec<PhaseOneOutcome>,
}

impl Enumeration {
    /// `E f(A, B)` under the joint law.
    pub fn expectation(&self, mut f: impl FnMut(&[usize], &[usize]) -> f64) -> f64 {
        let p_a = 1.0 / self.outcomes.len() as f64;
        self.outcomes
            .iter()
            .map(|o| {
                let p_b = 1.0 / o.n_accepted() as f64;
                o.accepted_samples().map(|b| f(&o.a, b)).sum::<f64>() * p_b * p_a
            })
            .sum()
    }

    /// Probability of the pair `(a, b)`; zero if it cannot occur.
    pub fn probability(&self, a: &[usize], b: &[usize]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        self.outcomes
            .iter()
            .find(|o| o.a == a)
            .and_then(|o| o.b.iter().zip(&o.accepted).find(|(s, _)| **s == b).map(|(_, &acc)| (acc, o.n_accepted())))
            .map_or(0.0, |(acc, n)| if acc { 1.0 / (self.outcomes.len() * n) as f64 } else { 0.0 })
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// All size-`k` subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return out;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Enumerate two-phase SRSWOR balanced on every `x` column with threshold
/// `gamma_sq` (`f64::INFINITY` accepts everything). Every phase-I sample
/// must have at least one accepted phase-II subset.
pub fn enumerate_two_phase(pop: &FinitePopulation, n_i: usize, n_ii: usize, gamma_sq: f64) -> Result<Enumeration> {
    let n = pop.n_units();
    if !(1..=n).contains(&n_i) || !(1..=n_i).contains(&n_ii) {
        return Err(CoreError::Config(format!("need 1 <= n_II <= n_I <= N, got {n_ii}, {n_i}, {n}")).into());
    }
    let combos = binomial(n, n_i).saturating_mul(binomial(n_i, n_ii));
    if combos > ENUMERATION_BUDGET {
        return Err(CoreError::Size { combinations: combos, budget: ENUMERATION_BUDGET }.into());
    }
    let p = pop.p();
    let cols: Vec<usize> = (0..p).collect();
    let inner = combinations(n_i, n_ii);
    let mut outcomes = Vec::new();
    for a in combinations(n, n_i) {
        let x_a = pop.x().select(&a, &cols);
        let normalizer = if gamma_sq.is_infinite() { None } else { Some(phase2_diff_covariance_srs(&x_a, n_ii)?) };
        let mean_a = column_means(&x_a, &(0..n_i).collect::<Vec<_>>());
        let mut b_sets = Vec::with_capacity(inner.len());
        let mut accepted = Vec::with_capacity(inner.len());
        for local in &inner {
            let ok = match &normalizer {
                None => true,
                Some(norm) => {
                    let diff: Vec<f64> = column_means(&x_a, local).iter().zip(&mean_a).map(|(b, a)| b - a).collect();
                    mahalanobis_q(&diff, norm)? < gamma_sq
                }
            };
            b_sets.push(local.iter().map(|&i| a[i]).collect());
            accepted.push(ok);
        }
        let outcome = PhaseOneOutcome { a, b: b_sets, accepted };
        if outcome.n_accepted() == 0 {
            return Err(CoreError::Design(format!("no phase-II sample of {:?} is accepted", outcome.a)).into());
        }
        outcomes.push(outcome);
    }
    Ok(Enumeration { n_units: n, n_i, n_ii, gamma_sq, outcomes })
}

fn column_means(rows: &Matrix, which: &[usize]) -> Vec<f64> {
    let mut m = vec![0.0; rows.cols()];
    for &r in which {
        for (acc, v) in m.iter_mut().zip(rows.row(r)) {
            *acc += v;
        }
    }
    m.iter().map(|s| s / which.len() as f64).collect()
}

/// Sample mean and covariance (divisor `n − 1`) of two columns over `units`.
fn sample_moments(u: &[f64], v: &[f64], units: &[usize]) -> (f64, f64, f64) {
    let n = units.len() as f64;
    let mu = units.iter().map(|&i| u[i]).sum::<f64>() / n;
    let mv = units.iter().map(|&i| v[i]).sum::<f64>() / n;
    let cov = if units.len() > 1 { units.iter().map(|&i| (u[i] - mu) * (v[i] - mv)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mu, mv, cov)
}

/// Largest absolute deviations from the three exact identities of two-phase
/// SRS without rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityErrors {
    /// `E ȳ_II` against the frame mean, with the `N`-denominator double
    /// expansion estimator.
    pub unbiased_mean: f64,
    /// `cov(ū_II, v̄_II | A)` against `(1/n_II − 1/n_I) V_{uv,I}`.
    pub conditional_covariance: f64,
    /// `E(V_{uv,II} | A)` against `V_{uv,I}`.
    pub conditional_sample_covariance: f64,
}

/// Check the identities for the columns `u` and `v` (and `y` for the mean).
pub fn identity_errors(pop: &FinitePopulation, e: &Enumeration, u: Column, v: Column) -> Result<IdentityErrors> {
    let y = pop.y()?;
    let u = pop.column(u)?;
    let v = pop.column(v)?;
    let frame_mean = y.iter().sum::<f64>() / y.len() as f64;
    // N-denominator π* estimator: Σ_B y_i / π*_i / N with π* = n_II/N
    let pi_star = e.n_ii as f64 / e.n_units as f64;
    let expected = e.expectation(|_, b| b.iter().map(|&i| y[i] / pi_star).sum::<f64>() / e.n_units as f64);
    let unbiased_mean = (expected - frame_mean).abs();

    let mut conditional_covariance: f64 = 0.0;
    let mut conditional_sample_covariance: f64 = 0.0;
    let factor = 1.0 / e.n_ii as f64 - 1.0 / e.n_i as f64;
    for o in &e.outcomes {
        let (_, _, v_a) = sample_moments(&u, &v, &o.a);
        let w = 1.0 / o.n_accepted() as f64;
        let moments: Vec<(f64, f64, f64)> = o.accepted_samples().map(|b| sample_moments(&u, &v, b)).collect();
        let eu: f64 = moments.iter().map(|m| m.0).sum::<f64>() * w;
        let ev: f64 = moments.iter().map(|m| m.1).sum::<f64>() * w;
        let cov: f64 = moments.iter().map(|m| (m.0 - eu) * (m.1 - ev)).sum::<f64>() * w;
        let e_vb: f64 = moments.iter().map(|m| m.2).sum::<f64>() * w;
        conditional_covariance = conditional_covariance.max((cov - factor * v_a).abs());
        conditional_sample_covariance = conditional_sample_covariance.max((e_vb - v_a).abs());
    }
    Ok(IdentityErrors { unbiased_mean, conditional_covariance, conditional_sample_covariance })
}
