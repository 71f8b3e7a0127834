//! Sampling designs with closed-form first- and second-order inclusion
//! probabilities.
//!
//! A design is drawn from a *parent*: the frame for phase I, or the previous
//! phase's sample afterwards. Sample indices are positions into the parent.
//! Joint inclusion probabilities are never materialized; [`PairwiseRule`]
//! computes them on demand from the design parameters.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::population::{Column, FinitePopulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignTag {
    Srswor,
    Poisson,
    Stratified,
    /// Externally supplied sample with unknown joint probabilities.
    Custom,
}

/// Closed-form `π_ij` for `i ≠ j`, in parent positions.
#[derive(Debug, Clone, PartialEq)]
pub enum PairwiseRule {
    Srswor { parent_size: usize, n: usize },
    /// Independent inclusion: `π_ij = π_i π_j`.
    Poisson,
    Stratified { stratum_of: Arc<[usize]>, sizes: Arc<[usize]>, take: Arc<[usize]> },
    Unknown,
}

fn srswor_joint(parent_size: usize, n: usize) -> f64 {
    if parent_size < 2 {
        return 0.0;
    }
    (n as f64 * (n as f64 - 1.0)) / (parent_size as f64 * (parent_size as f64 - 1.0))
}

impl PairwiseRule {
    /// `π_ij` for distinct parent positions, or `None` when the rule is unknown.
    pub fn joint(&self, i: usize, j: usize, pi_i: f64, pi_j: f64) -> Option<f64> {
        match self {
            PairwiseRule::Srswor { parent_size, n } => Some(srswor_joint(*parent_size, *n)),
            PairwiseRule::Poisson => Some(pi_i * pi_j),
            PairwiseRule::Stratified { stratum_of, sizes, take } => {
                let (hi, hj) = (stratum_of[i], stratum_of[j]);
                if hi == hj {
                    Some(srswor_joint(sizes[hi], take[hi]))
                } else {
                    Some(pi_i * pi_j)
                }
            }
            PairwiseRule::Unknown => None,
        }
    }

    /// Groups of parent positions within which `π_ij − π_i π_j` is one
    /// constant for `i ≠ j`; across groups it is zero. `None` when unknown.
    ///
    /// Returns `(group_of, delta_per_group)`; `group_of` is `None` when every
    /// unit is in group 0.
    pub fn offdiagonal_delta(&self) -> Option<(Option<Arc<[usize]>>, Vec<f64>)> {
        match self {
            PairwiseRule::Srswor { parent_size, n } => {
                let pi = *n as f64 / *parent_size as f64;
                Some((None, alloc::vec![srswor_joint(*parent_size, *n) - pi * pi]))
            }
            PairwiseRule::Poisson => Some((None, alloc::vec![0.0])),
            PairwiseRule::Stratified { stratum_of, sizes, take } => {
                let deltas = sizes
                    .iter()
                    .zip(take.iter())
                    .map(|(&m, &r)| {
                        let pi = if m == 0 { 0.0 } else { r as f64 / m as f64 };
                        srswor_joint(m, r) - pi * pi
                    })
                    .collect();
                Some((Some(stratum_of.clone()), deltas))
            }
            PairwiseRule::Unknown => None,
        }
    }
}

/// Per-stratum SRSWOR plan over a parent of `stratum_of.len()` units.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumPlan {
    pub stratum_of: Vec<usize>,
    pub take: Vec<usize>,
}

impl StratumPlan {
    /// Stratum population sizes `m_h`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = alloc::vec![0; self.take.len()];
        for &h in &self.stratum_of {
            if h < sizes.len() {
                sizes[h] += 1;
            }
        }
        sizes
    }

    fn validate(&self) -> Result<Vec<usize>> {
        if self.take.is_empty() {
            return Err(Error::Design("stratified plan has no strata".into()));
        }
        if let Some(&h) = self.stratum_of.iter().find(|&&h| h >= self.take.len()) {
            return Err(Error::Design(format!("unit assigned to stratum {h} but only {} takes given", self.take.len())));
        }
        let sizes = self.sizes();
        for (h, (&m, &r)) in sizes.iter().zip(&self.take).enumerate() {
            if r > m {
                return Err(Error::Design(format!("stratum {h} has {m} units but take is {r}")));
            }
        }
        Ok(sizes)
    }
}

/// One realized sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawnSample {
    indices: Vec<usize>,
    first_order: Arc<[f64]>,
    rule: PairwiseRule,
    tag: DesignTag,
}

impl DrawnSample {
    /// A sample from some external procedure. Joint probabilities are unknown,
    /// so design-based variance estimation needs the independence
    /// approximation to be switched on explicitly.
    pub fn custom(mut indices: Vec<usize>, first_order: Vec<f64>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        for &i in &indices {
            match first_order.get(i) {
                Some(&p) if p > 0.0 && p <= 1.0 => {}
                _ => return Err(Error::Design(format!("unit {i} lacks a first-order probability in (0, 1]"))),
            }
        }
        Ok(Self { indices, first_order: first_order.into(), rule: PairwiseRule::Unknown, tag: DesignTag::Custom })
    }

    /// Sorted parent positions of the sampled units.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `π_i` for every parent unit.
    pub fn first_order(&self) -> &[f64] {
        &self.first_order
    }

    pub fn pi(&self, parent_pos: usize) -> f64 {
        self.first_order[parent_pos]
    }

    pub fn rule(&self) -> &PairwiseRule {
        &self.rule
    }

    pub fn tag(&self) -> DesignTag {
        self.tag
    }

    pub fn parent_size(&self) -> usize {
        self.first_order.len()
    }

    /// `π_ij` by parent positions; `π_ii = π_i`.
    pub fn pairwise(&self, i: usize, j: usize) -> Result<f64> {
        if i == j {
            return Ok(self.pi(i));
        }
        self.rule
            .joint(i, j, self.pi(i), self.pi(j))
            .ok_or(Error::Capability("joint inclusion probabilities are unknown for this design"))
    }

    /// `π_ij`, falling back to `π_i π_j` for unknown rules when `approx` is set.
    pub fn pairwise_or_independent(&self, i: usize, j: usize, approx: bool) -> Result<f64> {
        match self.pairwise(i, j) {
            Err(Error::Capability(_)) if approx => Ok(self.pi(i) * self.pi(j)),
            other => other,
        }
    }

    /// `Σ_i π_i` over the parent, the expected sample size.
    pub fn expected_size(&self) -> f64 {
        self.first_order.iter().sum()
    }
}

/// How Poisson inclusion probabilities are obtained for a parent.
#[derive(Debug, Clone, PartialEq)]
pub enum ProbSource {
    /// One probability per frame unit.
    Fixed(Arc<[f64]>),
    /// `π_i = E(n) · size_i / Σ_parent size`, clamped to 1.
    Proportional { size: SizeMeasure, expected_n: f64 },
}

/// A size measure for probability-proportional-to-size designs.
#[derive(Debug, Clone, PartialEq)]
pub enum SizeMeasure {
    Column(Column),
    /// Sum of several columns, e.g. all phase-II covariates.
    SumOf(Vec<Column>),
}

impl SizeMeasure {
    pub fn value(&self, pop: &FinitePopulation, unit: usize) -> Result<f64> {
        match self {
            SizeMeasure::Column(c) => pop.value(*c, unit),
            SizeMeasure::SumOf(cols) => cols.iter().map(|c| pop.value(*c, unit)).sum(),
        }
    }
}

/// A design description, independent of any parent.
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    Srswor { n: usize },
    Poisson { probs: ProbSource },
    /// `stratum_of` labels every frame unit; `take[h]` units are drawn from
    /// the parent's members of stratum `h`.
    Stratified { stratum_of: Arc<[usize]>, take: Vec<usize> },
}

/// Probabilities `p_i ∝ size_i` with `Σ p_i = 1`.
pub fn pps_probabilities(sizes: &[f64]) -> Result<Vec<f64>> {
    if let Some(s) = sizes.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        return Err(Error::Design(format!("size measure {s} is negative or not finite")));
    }
    let total: f64 = sizes.iter().sum();
    if total <= 0.0 {
        return Err(Error::Design("size measures sum to zero".into()));
    }
    Ok(sizes.iter().map(|s| s / total).collect())
}

/// `π_i = E(n)·p_i` clamped at 1; returns the probabilities and how many were clamped.
fn scaled_probabilities(p: &[f64], expected_n: f64) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let probs = p
        .iter()
        .map(|&pi| {
            let v = pi * expected_n;
            if v > 1.0 {
                clamped += 1;
                1.0
            } else {
                v
            }
        })
        .collect();
    (probs, clamped)
}

impl Design {
    pub fn tag(&self) -> DesignTag {
        match self {
            Design::Srswor { .. } => DesignTag::Srswor,
            Design::Poisson { .. } => DesignTag::Poisson,
            Design::Stratified { .. } => DesignTag::Stratified,
        }
    }

    /// Bind the design to a parent given by frame positions.
    pub fn prepare(&self, pop: &FinitePopulation, parent_units: &[usize]) -> Result<PreparedDesign> {
        let m = parent_units.len();
        match self {
            Design::Srswor { n } => PreparedDesign::srswor(m, *n),
            Design::Poisson { probs } => {
                let (values, clamped) = match probs {
                    ProbSource::Fixed(all) => {
                        if all.len() != pop.n_units() {
                            return Err(Error::Design(format!(
                                "{} fixed probabilities for a frame of {} units",
                                all.len(),
                                pop.n_units()
                            )));
                        }
                        let mut clamped = 0;
                        let values = parent_units
                            .iter()
                            .map(|&u| {
                                let p = all[u];
                                if p > 1.0 {
                                    clamped += 1;
                                    1.0
                                } else {
                                    p
                                }
                            })
                            .collect::<Vec<_>>();
                        (values, clamped)
                    }
                    ProbSource::Proportional { size, expected_n } => {
                        if !(*expected_n > 0.0) {
                            return Err(Error::Design(format!("expected sample size {expected_n} must be positive")));
                        }
                        let sizes = parent_units.iter().map(|&u| size.value(pop, u)).collect::<Result<Vec<_>>>()?;
                        let p = pps_probabilities(&sizes)?;
                        scaled_probabilities(&p, *expected_n)
                    }
                };
                let mut prepared = PreparedDesign::poisson(values)?;
                prepared.clamped = clamped;
                Ok(prepared)
            }
            Design::Stratified { stratum_of, take } => {
                let local = parent_units
                    .iter()
                    .map(|&u| {
                        stratum_of
                            .get(u)
                            .copied()
                            .ok_or_else(|| Error::Design(format!("unit {u} has no stratum label")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                PreparedDesign::stratified(&StratumPlan { stratum_of: local, take: take.clone() })
            }
        }
    }
}

/// A design bound to a concrete parent, reusable across many draws.
#[derive(Debug, Clone)]
pub struct PreparedDesign {
    tag: DesignTag,
    first_order: Arc<[f64]>,
    rule: PairwiseRule,
    /// Units of each stratum (one group for SRSWOR), permuted in place by
    /// the partial Fisher–Yates draw and restored afterwards.
    groups: Vec<Vec<usize>>,
    takes: Vec<usize>,
    clamped: usize,
}

impl PreparedDesign {
    pub fn srswor(parent_size: usize, n: usize) -> Result<Self> {
        if n == 0 || n > parent_size {
            return Err(Error::Design(format!("SRSWOR size {n} must lie in 1..={parent_size}")));
        }
        let pi = n as f64 / parent_size as f64;
        Ok(Self {
            tag: DesignTag::Srswor,
            first_order: alloc::vec![pi; parent_size].into(),
            rule: PairwiseRule::Srswor { parent_size, n },
            groups: alloc::vec![(0..parent_size).collect()],
            takes: alloc::vec![n],
            clamped: 0,
        })
    }

    /// Poisson design; probabilities above 1 are clamped and counted.
    pub fn poisson(probs: Vec<f64>) -> Result<Self> {
        let mut clamped = 0;
        let mut probs = probs;
        for p in probs.iter_mut() {
            if !(*p >= 0.0) || !p.is_finite() {
                return Err(Error::Design(format!("Poisson probability {p} is negative or not finite")));
            }
            if *p > 1.0 {
                *p = 1.0;
                clamped += 1;
            }
        }
        Ok(Self {
            tag: DesignTag::Poisson,
            first_order: probs.into(),
            rule: PairwiseRule::Poisson,
            groups: Vec::new(),
            takes: Vec::new(),
            clamped,
        })
    }

    pub fn stratified(plan: &StratumPlan) -> Result<Self> {
        let sizes = plan.validate()?;
        let mut groups = alloc::vec![Vec::new(); plan.take.len()];
        for (i, &h) in plan.stratum_of.iter().enumerate() {
            groups[h].push(i);
        }
        let first_order: Vec<f64> = plan
            .stratum_of
            .iter()
            .map(|&h| plan.take[h] as f64 / sizes[h] as f64)
            .collect();
        Ok(Self {
            tag: DesignTag::Stratified,
            first_order: first_order.into(),
            rule: PairwiseRule::Stratified {
                stratum_of: plan.stratum_of.clone().into(),
                sizes: sizes.into(),
                take: plan.take.clone().into(),
            },
            groups,
            takes: plan.take.clone(),
            clamped: 0,
        })
    }

    pub fn tag(&self) -> DesignTag {
        self.tag
    }

    pub fn parent_size(&self) -> usize {
        self.first_order.len()
    }

    pub fn first_order(&self) -> &Arc<[f64]> {
        &self.first_order
    }

    pub fn rule(&self) -> &PairwiseRule {
        &self.rule
    }

    /// Number of Poisson probabilities that exceeded 1 and were clamped.
    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    /// True when every sample has the same size.
    pub fn is_fixed_size(&self) -> bool {
        self.tag != DesignTag::Poisson
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> DrawnSample {
        let mut indices = match self.tag {
            DesignTag::Poisson => self
                .first_order
                .iter()
                .enumerate()
                .filter_map(|(i, &p)| (p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p)).then_some(i))
                .collect(),
            _ => {
                let mut out = Vec::with_capacity(self.takes.iter().sum());
                for (group, &take) in self.groups.iter_mut().zip(&self.takes) {
                    partial_shuffle_take(rng, group, take, &mut out);
                }
                out
            }
        };
        indices.sort_unstable();
        DrawnSample { indices, first_order: self.first_order.clone(), rule: self.rule.clone(), tag: self.tag }
    }
}

/// Appends a uniform `take`-subset of `items` to `out`, leaving `items` in
/// its original order so the result never depends on earlier draws.
fn partial_shuffle_take<R: Rng + ?Sized>(rng: &mut R, items: &mut [usize], take: usize, out: &mut Vec<usize>) {
    let len = items.len();
    let mut swaps = Vec::with_capacity(take);
    for k in 0..take {
        let j = rng.random_range(k..len);
        items.swap(k, j);
        swaps.push(j);
    }
    out.extend_from_slice(&items[..take]);
    for (k, j) in swaps.into_iter().enumerate().rev() {
        items.swap(k, j);
    }
}

pub fn draw_srswor<R: Rng + ?Sized>(rng: &mut R, parent_size: usize, n: usize) -> Result<DrawnSample> {
    Ok(PreparedDesign::srswor(parent_size, n)?.draw(rng))
}

pub fn draw_poisson<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> Result<DrawnSample> {
    Ok(PreparedDesign::poisson(probs.to_vec())?.draw(rng))
}

pub fn draw_stratified<R: Rng + ?Sized>(rng: &mut R, plan: &StratumPlan) -> Result<DrawnSample> {
    Ok(PreparedDesign::stratified(plan)?.draw(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn census_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = draw_srswor(&mut rng, 7, 7).unwrap();
        assert_eq!(s.indices(), &[0, 1, 2, 3, 4, 5, 6]);
        assert!(s.first_order().iter().all(|&p| p == 1.0));
        assert!(draw_srswor(&mut rng, 3, 4).is_err());
        assert!(draw_srswor(&mut rng, 3, 0).is_err());
    }

    #[test]
    fn srswor_joint_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = draw_srswor(&mut rng, 5, 2).unwrap();
        assert!((s.pairwise(0, 3).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(s.pairwise(2, 2).unwrap(), 0.4);
        // Σ_j π_ij = n π_i
        let total: f64 = (0..5).map(|j| s.pairwise(1, j).unwrap()).sum();
        assert!((total - 2.0 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn draws_do_not_depend_on_history() {
        let mut design = PreparedDesign::srswor(50, 7).unwrap();
        let mut warm = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            design.draw(&mut warm);
        }
        let a = design.draw(&mut ChaCha8Rng::seed_from_u64(4));
        let b = PreparedDesign::srswor(50, 7).unwrap().draw(&mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(a, b);
    }

    #[test]
    fn poisson_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(draw_poisson(&mut rng, &[1.0; 4]).unwrap().len(), 4);
        assert!(draw_poisson(&mut rng, &[0.0; 4]).unwrap().is_empty());
        assert!(draw_poisson(&mut rng, &[0.5, -0.1]).is_err());
        let clamped = PreparedDesign::poisson(alloc::vec![1.5, 0.2]).unwrap();
        assert_eq!(clamped.clamped_count(), 1);
        let s = draw_poisson(&mut rng, &[0.3, 0.6]).unwrap();
        assert_eq!(s.pairwise(0, 1).unwrap() - 0.3 * 0.6, 0.0);
    }

    #[test]
    fn stratified_probabilities() {
        let plan = StratumPlan { stratum_of: alloc::vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1], take: alloc::vec![2, 3] };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = draw_stratified(&mut rng, &plan).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.first_order().iter().all(|&p| p == 0.5));
        assert_eq!(s.pairwise(0, 5).unwrap(), 0.25);
        assert!((s.pairwise(0, 1).unwrap() - 2.0 / 12.0).abs() < 1e-15);
        assert_eq!(s.indices().iter().filter(|&&i| i < 4).count(), 2);

        let bad = StratumPlan { stratum_of: alloc::vec![0, 0, 1], take: alloc::vec![1, 2] };
        assert!(draw_stratified(&mut rng, &bad).is_err());
    }

    #[test]
    fn pps_rejects_negative_sizes() {
        assert!(pps_probabilities(&[1.0, -2.0]).is_err());
        let p = pps_probabilities(&[1.0, 3.0]).unwrap();
        assert_eq!(p, [0.25, 0.75]);
    }

    #[test]
    fn custom_sample_has_no_joint_rule() {
        let s = DrawnSample::custom(alloc::vec![2, 0], alloc::vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(s.indices(), &[0, 2]);
        assert!(matches!(s.pairwise(0, 2), Err(Error::Capability(_))));
        assert_eq!(s.pairwise_or_independent(0, 2, true).unwrap(), 0.25);
    }
}
