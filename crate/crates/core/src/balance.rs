//! Mahalanobis balance statistics and the rejective draw loops: two-phase
//! rejective sampling, its sequential tiered variant, and three-phase
//! rejective sampling.
//!
//! Weighted acceptance rules of the form `Σ ω_k Q[k] < Kγ²` are not provided;
//! tiers are always checked one by one against `γ²/ω_k`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::chain::{BalanceRecord, DerivedCovariate, Phase, PhaseChain};
use crate::designs::{Design, DesignTag, PairwiseRule, PreparedDesign};
use crate::error::{Error, Result};
use crate::estimators::fit_regression;
use crate::ldist::{chisq_cdf, chisq_quantile};
use crate::linalg::{Matrix, SymFactor};
use crate::population::FinitePopulation;

/// A balance threshold `γ² > 0`; `+∞` means "accept the first draw".
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct GammaSq(f64);

impl GammaSq {
    pub const INFINITE: GammaSq = GammaSq(f64::INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 {
            Ok(Self(value))
        } else {
            Err(Error::Config(format!("gamma_sq must be positive, got {value}")))
        }
    }

    /// The `prob` quantile of `χ²_p`, so that roughly a fraction `prob` of
    /// candidate samples is accepted.
    pub fn chisq_quantile(p: usize, prob: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("chi-square quantile needs p >= 1".into()));
        }
        Self::new(chisq_quantile(p, prob)?)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

/// Which normalizer scales the between-phase mean difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizerConvention {
    /// Closed form when every phase so far is SRSWOR, general otherwise.
    #[default]
    Auto,
    /// `(1/n_inner − 1/n_outer) V_xx` with divisor `n_outer − 1`.
    SrsClosedForm,
    /// The design covariance double sum with combined `π*` weights.
    General,
}

/// Ordered blocks of balance columns with weights `ω_k > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tiers {
    blocks: Vec<Vec<usize>>,
    weights: Vec<f64>,
}

impl Tiers {
    /// `blocks` index the criterion's balance columns (0-based positions in
    /// `BalanceCriterion::columns`).
    pub fn new(blocks: Vec<Vec<usize>>, weights: Vec<f64>) -> Result<Self> {
        if blocks.is_empty() || blocks.len() != weights.len() {
            return Err(Error::Config(format!("{} tier blocks but {} weights", blocks.len(), weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("tier weight {w} must be positive and finite")));
        }
        if blocks.iter().any(Vec::is_empty) {
            return Err(Error::Config("empty tier block".into()));
        }
        Ok(Self { blocks, weights })
    }

    /// One tier holding all `p` columns with weight 1.
    pub fn single(p: usize) -> Self {
        Self { blocks: vec![(0..p).collect()], weights: vec![1.0] }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn check_partition(&self, p: usize) -> Result<()> {
        let mut seen = vec![false; p];
        for &c in self.blocks.iter().flatten() {
            if c >= p || seen[c] {
                return Err(Error::Config(format!("tier column {c} is out of range or repeated")));
            }
            seen[c] = true;
        }
        if seen.iter().all(|&s| s) {
            Ok(())
        } else {
            Err(Error::Config("tiers must cover every balance column".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceCriterion {
    pub gamma_sq: GammaSq,
    /// Balance covariates as x column indices. The phase-III criterion of
    /// three-phase sampling ignores this and balances on `(x, a)`.
    pub columns: Vec<usize>,
    pub tiers: Option<Tiers>,
    pub max_draws: Option<u64>,
    pub convention: NormalizerConvention,
    /// Optional `λ` added to the normalizer diagonal; zero by default.
    pub ridge: f64,
}

impl BalanceCriterion {
    pub fn new(gamma_sq: GammaSq, columns: Vec<usize>) -> Self {
        Self { gamma_sq, columns, tiers: None, max_draws: None, convention: NormalizerConvention::Auto, ridge: 0.0 }
    }

    /// No rejection on the given columns.
    pub fn unrestricted(columns: Vec<usize>) -> Self {
        Self::new(GammaSq::INFINITE, columns)
    }

    pub fn with_tiers(mut self, tiers: Tiers) -> Self {
        self.tiers = Some(tiers);
        self
    }

    pub fn with_max_draws(mut self, max_draws: u64) -> Self {
        self.max_draws = Some(max_draws);
        self
    }

    pub fn with_convention(mut self, convention: NormalizerConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    fn tiers_for(&self, p: usize) -> Result<Tiers> {
        let tiers = self.tiers.clone().unwrap_or_else(|| Tiers::single(p));
        tiers.check_partition(p)?;
        Ok(tiers)
    }

    /// Asymptotic acceptance probability `Π_k P(χ²_{p_k} ≤ γ²/ω_k)`.
    pub fn acceptance_probability(&self, p: usize) -> Result<f64> {
        if self.gamma_sq.is_infinite() {
            return Ok(1.0);
        }
        let tiers = self.tiers_for(p)?;
        Ok(tiers
            .blocks
            .iter()
            .zip(&tiers.weights)
            .map(|(b, w)| chisq_cdf(b.len(), self.gamma_sq.value() / w))
            .product())
    }

    /// Draw cap: the configured value, else `max(10⁶, 50⌈1/P⌉)`.
    pub fn effective_max_draws(&self, p: usize) -> Result<u64> {
        if let Some(m) = self.max_draws {
            return Ok(m.max(1));
        }
        let prob = self.acceptance_probability(p)?;
        let expected = if prob > 0.0 { libm::ceil(1.0 / prob) } else { f64::INFINITY };
        Ok(if expected * 50.0 > 1e6 { (expected * 50.0).min(u64::MAX as f64) as u64 } else { 1_000_000 })
    }
}

/// `diffᵀ normalizer⁻¹ diff`.
pub fn mahalanobis_q(diff: &[f64], normalizer: &Matrix) -> Result<f64> {
    if normalizer.rows() != diff.len() || !normalizer.is_square() {
        return Err(Error::Config("normalizer dimension does not match the difference".into()));
    }
    Ok(SymFactor::new(normalizer)?.inv_quad_form(diff))
}

/// Column means of `rows` with weights `1/π`.
pub fn hajek_column_means(rows: &Matrix, pi: &[f64]) -> Vec<f64> {
    let mut mean = vec![0.0; rows.cols()];
    let mut total = 0.0;
    for (r, &p) in pi.iter().enumerate() {
        let w = 1.0 / p;
        total += w;
        for (m, v) in mean.iter_mut().zip(rows.row(r)) {
            *m += w * v;
        }
    }
    for m in mean.iter_mut() {
        *m /= total;
    }
    mean
}

/// `(1/n_inner − 1/n_outer) V_xx` with `V_xx` the sample covariance of the
/// outer rows (divisor `n_outer − 1`).
pub fn phase2_diff_covariance_srs(x_outer: &Matrix, n_inner: usize) -> Result<Matrix> {
    let m = x_outer.rows();
    if m < 2 {
        return Err(Error::DegeneratePopulation { n_units: m });
    }
    if n_inner == 0 || n_inner > m {
        return Err(Error::Config(format!("inner sample size {n_inner} not in 1..={m}")));
    }
    if n_inner == m {
        return Err(Error::ZeroVariance);
    }
    let p = x_outer.cols();
    let mean = hajek_column_means(x_outer, &vec![1.0; m]);
    let mut cov = Matrix::zeros(p, p);
    let mut d = vec![0.0; p];
    for r in 0..m {
        for (k, v) in x_outer.row(r).iter().enumerate() {
            d[k] = v - mean[k];
        }
        cov.add_outer(1.0, &d, &d);
    }
    let factor = (1.0 / n_inner as f64 - 1.0 / m as f64) / (m as f64 - 1.0);
    Ok(cov.scale(factor))
}

/// Design covariance of the inner Hájek mean given the outer sample:
/// `N⁻² Σ_i Σ_j (π_ij − π_i π_j)/(π*_i π*_j) (u_i − ū)(u_j − ū)ᵀ`, where
/// `π*` combines the outer weights with the inner conditional probabilities
/// and `ū` is the outer Hájek mean.
///
/// The off-diagonal part is summed in closed form per group of constant
/// `π_ij − π_i π_j`, so the cost is linear in the outer size.
pub fn phase2_diff_covariance_general(
    u_outer: &Matrix,
    outer_pi_star: &[f64],
    inner_first_order: &[f64],
    rule: &PairwiseRule,
    frame_size: usize,
) -> Result<Matrix> {
    let m = u_outer.rows();
    if outer_pi_star.len() != m || inner_first_order.len() != m {
        return Err(Error::Config("probability vectors do not match the outer sample".into()));
    }
    let (groups, deltas) = rule
        .offdiagonal_delta()
        .ok_or(Error::Capability("joint inclusion probabilities are unknown for this design"))?;
    let p = u_outer.cols();
    let mean = hajek_column_means(u_outer, outer_pi_star);
    let mut total = Matrix::zeros(p, p);
    let mut group_sums = vec![vec![0.0; p]; deltas.len()];
    let mut d = vec![0.0; p];
    for r in 0..m {
        let pi = inner_first_order[r];
        let star = outer_pi_star[r] * pi;
        if !(star > 0.0) {
            return Err(Error::Design(format!("unit at position {r} has zero combined inclusion probability")));
        }
        let w = 1.0 / star;
        for (k, v) in u_outer.row(r).iter().enumerate() {
            d[k] = v - mean[k];
        }
        let g = groups.as_ref().map_or(0, |g| g[r]);
        // diagonal Δ_ii = π_i(1 − π_i), minus the i = j term the group sum will add
        total.add_outer(w * w * (pi * (1.0 - pi) - deltas[g]), &d, &d);
        for (s, dk) in group_sums[g].iter_mut().zip(&d) {
            *s += w * dk;
        }
    }
    for (s, &delta) in group_sums.iter().zip(&deltas) {
        if delta != 0.0 {
            total.add_outer(delta, s, s);
        }
    }
    let n2 = (frame_size as f64) * (frame_size as f64);
    Ok(total.scale(1.0 / n2))
}

/// Block Gram–Schmidt transform `T` with `g = T x`: tier `k` becomes its
/// residual after projecting on the earlier tiers in the `metric` inner
/// product. Also returns the factorized diagonal blocks of `T metric Tᵀ`.
pub fn tier_transform(metric: &Matrix, tiers: &Tiers) -> Result<(Matrix, Vec<SymFactor>)> {
    let p = metric.rows();
    tiers.check_partition(p)?;
    let mut t = Matrix::zeros(p, p);
    let mut factors = Vec::with_capacity(tiers.blocks.len());
    let mut earlier: Vec<usize> = Vec::new();
    for (k, block) in tiers.blocks.iter().enumerate() {
        for &c in block {
            t[(c, c)] = 1.0;
        }
        if !earlier.is_empty() {
            let lead = metric.select(&earlier, &earlier);
            let lead_factor = SymFactor::new(&lead).map_err(|_| Error::TierCollinearity { tier: k.saturating_sub(1) })?;
            // coefficients V_{<k,<k}⁻¹ V_{<k,k}
            let cross = metric.select(&earlier, block);
            let coef = lead_factor.solve(&cross);
            for (bi, &c) in block.iter().enumerate() {
                for (ei, &e) in earlier.iter().enumerate() {
                    t[(c, e)] = -coef[(ei, bi)];
                }
            }
        }
        let rows = t.select(block, &(0..p).collect::<Vec<_>>());
        let block_cov = rows.matmul(metric).matmul(&rows.transpose());
        let factor = SymFactor::new(&block_cov).map_err(|_| Error::TierCollinearity { tier: k })?;
        factors.push(factor);
        earlier.extend_from_slice(block);
    }
    Ok((t, factors))
}

/// The orthogonalized covariates `g` (one row per outer unit).
pub fn gram_schmidt_blocks(x_outer: &Matrix, tiers: &Tiers, metric: &Matrix) -> Result<Matrix> {
    let (t, _) = tier_transform(metric, tiers)?;
    Ok(x_outer.matmul(&t.transpose()))
}

/// Per-outer-sample state of a rejection loop.
struct Balancer {
    values: Matrix,
    outer_pi_star: Vec<f64>,
    outer_mean: Vec<f64>,
    record: BalanceRecord,
    /// Transform rows and factorized normalizer per tier; `None` when the
    /// normalizer is singular and no rejection is needed.
    checks: Option<Vec<(Matrix, SymFactor)>>,
}

impl Balancer {
    fn new(
        values: Matrix,
        outer_pi_star: Vec<f64>,
        inner: &PreparedDesign,
        srs_form: bool,
        criterion: &BalanceCriterion,
        frame_size: usize,
    ) -> Result<Self> {
        let p = values.cols();
        if p == 0 {
            return Err(Error::Config("balance criterion has no covariates".into()));
        }
        let tiers = criterion.tiers_for(p)?;
        let diff_covariance = if srs_form {
            let n_inner = match inner.rule() {
                PairwiseRule::Srswor { n, .. } => *n,
                _ => return Err(Error::Config("closed-form normalizer needs an SRSWOR inner design".into())),
            };
            phase2_diff_covariance_srs(&values, n_inner)
        } else {
            phase2_diff_covariance_general(&values, &outer_pi_star, inner.first_order(), inner.rule(), frame_size)
        };
        // a census inner phase has nothing to balance; only a rejective draw needs a normalizer
        let mut diff_covariance = match diff_covariance {
            Err(Error::ZeroVariance) if criterion.gamma_sq.is_infinite() => Matrix::zeros(p, p),
            other => other?,
        };
        if criterion.ridge > 0.0 {
            diff_covariance = diff_covariance.add(&Matrix::identity(p).scale(criterion.ridge));
        }
        let g = criterion.gamma_sq.value();
        let thresholds: Vec<f64> = tiers.weights.iter().map(|w| g / w).collect();
        let tier_dims: Vec<usize> = tiers.blocks.iter().map(Vec::len).collect();
        let checks = match tier_transform(&diff_covariance, &tiers) {
            Ok((t, factors)) => Some(
                tiers
                    .blocks
                    .iter()
                    .zip(factors)
                    .map(|(b, f)| (t.select(b, &(0..p).collect::<Vec<_>>()), f))
                    .collect(),
            ),
            Err(e) if !criterion.gamma_sq.is_infinite() => {
                return Err(match (e, criterion.tiers.is_some()) {
                    (Error::TierCollinearity { tier: 0 }, false) => {
                        let smallest = SymFactor::new(&diff_covariance).err().map_or(0.0, |e| match e {
                            Error::SingularNormalizer { smallest_pivot } => smallest_pivot,
                            _ => 0.0,
                        });
                        Error::SingularNormalizer { smallest_pivot: smallest }
                    }
                    (e, _) => e,
                })
            }
            Err(_) => None,
        };
        let outer_mean = hajek_column_means(&values, &outer_pi_star);
        let record = BalanceRecord {
            gamma_sq: g,
            q: vec![f64::NAN; tier_dims.len()],
            thresholds,
            tier_dims,
            diff_covariance,
        };
        Ok(Self { values, outer_pi_star, outer_mean, record, checks })
    }

    /// Per-tier statistics for a candidate, or `None` if it is empty.
    fn statistics(&self, indices: &[usize], inner_pi: &[f64]) -> Option<Vec<f64>> {
        let checks = self.checks.as_ref()?;
        if indices.is_empty() {
            return None;
        }
        let p = self.values.cols();
        let mut mean = vec![0.0; p];
        let mut total = 0.0;
        for &i in indices {
            let w = 1.0 / (self.outer_pi_star[i] * inner_pi[i]);
            total += w;
            for (m, v) in mean.iter_mut().zip(self.values.row(i)) {
                *m += w * v;
            }
        }
        let diff: Vec<f64> = mean.iter().zip(&self.outer_mean).map(|(m, o)| m / total - o).collect();
        Some(checks.iter().map(|(rows, factor)| factor.inv_quad_form(&rows.mul_vec(&diff))).collect())
    }

    fn accepts(&self, q: &[f64]) -> bool {
        q.iter().zip(&self.record.thresholds).all(|(q, t)| q < t)
    }
}

/// Draw from `inner` until the balance statistics fall below their thresholds.
fn draw_balanced<R: Rng + ?Sized>(
    rng: &mut R,
    inner: &mut PreparedDesign,
    balancer: Balancer,
    criterion: &BalanceCriterion,
) -> Result<(crate::designs::DrawnSample, BalanceRecord, u64)> {
    let dims = balancer.record.dim();
    if criterion.gamma_sq.is_infinite() {
        let sample = inner.draw(rng);
        let mut record = balancer.record.clone();
        if let Some(q) = balancer.statistics(sample.indices(), inner.first_order()) {
            record.q = q;
        }
        return Ok((sample, record, 1));
    }
    let max_draws = criterion.effective_max_draws(dims)?;
    for attempt in 1..=max_draws {
        let sample = inner.draw(rng);
        if let Some(q) = balancer.statistics(sample.indices(), inner.first_order()) {
            if balancer.accepts(&q) {
                let mut record = balancer.record;
                record.q = q;
                return Ok((sample, record, attempt));
            }
        }
    }
    Err(Error::AcceptanceFailure { attempts: max_draws, accepted: 0 })
}

fn use_srs_form(convention: NormalizerConvention, chain: &PhaseChain, inner: DesignTag) -> bool {
    match convention {
        NormalizerConvention::SrsClosedForm => true,
        NormalizerConvention::General => false,
        NormalizerConvention::Auto => {
            inner == DesignTag::Srswor && chain.levels().iter().all(|l| l.sample().tag() == DesignTag::Srswor)
        }
    }
}

/// Add one phase to `chain`, balancing `values` (rows = current innermost
/// units) under `criterion`.
fn add_rejective_phase<R: Rng + ?Sized>(
    rng: &mut R,
    chain: &mut PhaseChain,
    pop: &FinitePopulation,
    design: &Design,
    values: Matrix,
    criterion: &BalanceCriterion,
) -> Result<()> {
    let parent = chain.levels().last().ok_or_else(|| Error::Config("no outer phase to draw from".into()))?;
    let mut inner = design.prepare(pop, parent.units())?;
    let srs_form = use_srs_form(criterion.convention, chain, inner.tag());
    let balancer = Balancer::new(values, parent.pi_star().to_vec(), &inner, srs_form, criterion, chain.frame_size())?;
    let (sample, record, draws) = draw_balanced(rng, &mut inner, balancer, criterion)?;
    chain.push(sample, Some(record), draws);
    Ok(())
}

fn draw_phase_one<R: Rng + ?Sized>(rng: &mut R, pop: &FinitePopulation, design: &Design) -> Result<PhaseChain> {
    let all: Vec<usize> = (0..pop.n_units()).collect();
    let mut prepared = design.prepare(pop, &all)?;
    let mut chain = PhaseChain::new(pop.n_units());
    let sample = prepared.draw(rng);
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    chain.push(sample, None, 1);
    Ok(chain)
}

/// Two-phase rejective sampling: phase I once, then phase II redrawn until
/// the phase-II mean of the balance covariates is close to the phase-I mean.
///
/// Tiers on the criterion switch to sequential tiered acceptance.
pub fn draw_tprs<R: Rng + ?Sized>(
    rng: &mut R,
    pop: &FinitePopulation,
    design_i: &Design,
    design_ii: &Design,
    criterion: &BalanceCriterion,
) -> Result<PhaseChain> {
    let mut chain = draw_phase_one(rng, pop, design_i)?;
    let x = chain.x_rows(pop, Phase::I, &criterion.columns)?;
    add_rejective_phase(rng, &mut chain, pop, design_ii, x, criterion)?;
    Ok(chain)
}

/// [`draw_tprs`] with tiers required.
pub fn draw_sequential_tprs<R: Rng + ?Sized>(
    rng: &mut R,
    pop: &FinitePopulation,
    design_i: &Design,
    design_ii: &Design,
    criterion: &BalanceCriterion,
) -> Result<PhaseChain> {
    if criterion.tiers.is_none() {
        return Err(Error::Config("sequential rejection needs tiers".into()));
    }
    draw_tprs(rng, pop, design_i, design_ii, criterion)
}

/// The phase-II covariate `a_i = z_i − z̄_II − (x_i − x̄_II)ᵀ β̂_{zx,II}` over
/// the phase-II units, with `π*` weights.
pub fn derive_phase2_covariate(chain: &PhaseChain, pop: &FinitePopulation, x_cols: &[usize]) -> Result<DerivedCovariate> {
    let z = pop.z().ok_or_else(|| Error::Config("phase-II covariates z are not configured".into()))?;
    let level = chain.level(Phase::II)?;
    let x = chain.x_rows(pop, Phase::II, x_cols)?;
    let zc: Vec<usize> = (0..z.cols()).collect();
    let z_rows = z.select(level.units(), &zc);
    let weights: Vec<f64> = level.pi_star().iter().map(|p| 1.0 / p).collect();
    let fit = fit_regression(&weights, &x, &z_rows).map_err(|e| match e {
        Error::Collinear { .. } => Error::Collinear { context: "phase-II covariate derivation" },
        e => e,
    })?;
    let mut a = Matrix::zeros(level.len(), z.cols());
    for r in 0..level.len() {
        let pred = fit.predict_centered(x.row(r));
        for k in 0..z.cols() {
            a[(r, k)] = z_rows[(r, k)] - fit.center_y[k] - pred[k];
        }
    }
    Ok(DerivedCovariate { a, beta_zx: fit.coefficients })
}

/// Three-phase rejective sampling. Phase II is balanced on `x` under
/// `criterion_ii`; phase III is balanced on `c = (x, a)` under
/// `criterion_iii` with the derived covariate `a`.
pub fn draw_three_phase<R: Rng + ?Sized>(
    rng: &mut R,
    pop: &FinitePopulation,
    designs: [&Design; 3],
    criterion_ii: &BalanceCriterion,
    criterion_iii: &BalanceCriterion,
) -> Result<PhaseChain> {
    if criterion_iii.tiers.is_some() {
        return Err(Error::Config("tiers are not supported for the phase-III criterion".into()));
    }
    let mut chain = draw_tprs(rng, pop, designs[0], designs[1], criterion_ii)?;
    if chain.level(Phase::II)?.is_empty() {
        return Err(Error::EmptySample);
    }
    let derived = derive_phase2_covariate(&chain, pop, &criterion_ii.columns)?;
    let x = chain.x_rows(pop, Phase::II, &criterion_ii.columns)?;
    let c = hstack(&x, &derived.a);
    chain.set_derived(derived);
    add_rejective_phase(rng, &mut chain, pop, designs[2], c, criterion_iii).map_err(|e| match e {
        Error::SingularNormalizer { .. } => Error::Collinear { context: "phase-III balance normalizer" },
        e => e,
    })?;
    Ok(chain)
}

/// Side-by-side concatenation of two blocks with equal row counts.
pub fn hstack(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows(), b.rows());
    let mut out = Matrix::zeros(a.rows(), a.cols() + b.cols());
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..a.cols()].copy_from_slice(a.row(r));
        row[a.cols()..].copy_from_slice(b.row(r));
    }
    out
}
