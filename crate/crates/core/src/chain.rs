//! The nested record of accepted samples across phases.

use alloc::vec::Vec;

use crate::designs::DrawnSample;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::population::{Column, FinitePopulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    I,
    II,
    III,
}

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::I => 0,
            Phase::II => 1,
            Phase::III => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Phase> {
        match i {
            0 => Some(Phase::I),
            1 => Some(Phase::II),
            2 => Some(Phase::III),
            _ => None,
        }
    }

    pub fn previous(self) -> Option<Phase> {
        self.index().checked_sub(1).and_then(Phase::from_index)
    }
}

/// Balance bookkeeping for a phase drawn under a criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceRecord {
    /// Threshold `γ²` (infinite when no rejection was applied).
    pub gamma_sq: f64,
    /// Accepted statistic per tier (one entry without tiers); NaN when the
    /// normalizer was singular and no rejection was requested.
    pub q: Vec<f64>,
    /// Per-tier thresholds `γ²/ω_k`.
    pub thresholds: Vec<f64>,
    /// Dimension per tier.
    pub tier_dims: Vec<usize>,
    /// Design covariance of the between-phase mean difference of the
    /// balance covariates; carries its own scale.
    pub diff_covariance: Matrix,
}

impl BalanceRecord {
    /// Total dimension of the balance covariates.
    pub fn dim(&self) -> usize {
        self.tier_dims.iter().sum()
    }

    pub fn is_rejective(&self) -> bool {
        self.gamma_sq.is_finite()
    }
}

/// One phase of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseLevel {
    pub(crate) sample: DrawnSample,
    pub(crate) units: Vec<usize>,
    pub(crate) pi_star: Vec<f64>,
    pub(crate) balance: Option<BalanceRecord>,
    pub(crate) draws: u64,
}

impl PhaseLevel {
    /// The draw of this phase, in positions of the previous phase.
    pub fn sample(&self) -> &DrawnSample {
        &self.sample
    }

    /// Frame positions of the units in this phase, ascending.
    pub fn units(&self) -> &[usize] {
        &self.units
    }

    /// Combined `π*` of every unit in this phase.
    pub fn pi_star(&self) -> &[f64] {
        &self.pi_star
    }

    pub fn balance(&self) -> Option<&BalanceRecord> {
        self.balance.as_ref()
    }

    /// Candidate samples drawn, the accepted one included.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// The phase-II covariate `a` of three-phase sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedCovariate {
    /// One row per phase-II unit.
    pub a: Matrix,
    /// `β̂_{zx,II}`, `p × q`.
    pub beta_zx: Matrix,
}

/// Accepted samples of every phase, outermost first.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseChain {
    frame_size: usize,
    levels: Vec<PhaseLevel>,
    derived: Option<DerivedCovariate>,
}

impl PhaseChain {
    pub(crate) fn new(frame_size: usize) -> Self {
        Self { frame_size, levels: Vec::new(), derived: None }
    }

    /// Append a phase drawn from the current innermost phase (or the frame).
    pub(crate) fn push(&mut self, sample: DrawnSample, balance: Option<BalanceRecord>, draws: u64) {
        let (units, pi_star) = match self.levels.last() {
            None => (sample.indices().to_vec(), sample.indices().iter().map(|&i| sample.pi(i)).collect()),
            Some(parent) => (
                sample.indices().iter().map(|&i| parent.units[i]).collect(),
                sample.indices().iter().map(|&i| parent.pi_star[i] * sample.pi(i)).collect(),
            ),
        };
        self.levels.push(PhaseLevel { sample, units, pi_star, balance, draws });
    }

    pub(crate) fn set_derived(&mut self, derived: DerivedCovariate) {
        self.derived = Some(derived);
    }

    /// Build a chain from samples drawn elsewhere, outermost first.
    pub fn from_samples(frame_size: usize, samples: Vec<DrawnSample>) -> Result<Self> {
        let mut chain = Self::new(frame_size);
        let mut parent_size = frame_size;
        for sample in samples {
            if sample.parent_size() != parent_size {
                return Err(Error::Config(alloc::format!(
                    "sample drawn from {} units but its parent has {parent_size}",
                    sample.parent_size()
                )));
            }
            parent_size = sample.len();
            chain.push(sample, None, 1);
        }
        if chain.levels.len() > 3 {
            return Err(Error::Config("at most three phases are supported".into()));
        }
        Ok(chain)
    }

    pub fn frame_size(&self) -> usize {
        self.frame_size
    }

    pub fn n_phases(&self) -> usize {
        self.levels.len()
    }

    pub fn innermost(&self) -> Phase {
        Phase::from_index(self.levels.len().saturating_sub(1)).unwrap_or(Phase::I)
    }

    pub fn level(&self, phase: Phase) -> Result<&PhaseLevel> {
        self.levels
            .get(phase.index())
            .ok_or_else(|| Error::Config(alloc::format!("chain has no phase {phase:?}")))
    }

    pub fn levels(&self) -> &[PhaseLevel] {
        &self.levels
    }

    pub fn derived(&self) -> Option<&DerivedCovariate> {
        self.derived.as_ref()
    }

    /// Positions of the units of phase `of` inside the parent that phase
    /// `design` was drawn from (the frame when `design` is phase I).
    pub fn positions(&self, of: Phase, design: Phase) -> Result<Vec<usize>> {
        if design > of {
            return Err(Error::Config("a phase cannot be located in an inner phase".into()));
        }
        let mut pos: Vec<usize> = (0..self.level(of)?.len()).collect();
        let mut k = of.index();
        loop {
            let sample = &self.levels[k].sample;
            for p in pos.iter_mut() {
                *p = sample.indices()[*p];
            }
            if k == design.index() {
                return Ok(pos);
            }
            k -= 1;
        }
    }

    /// Combined `π*` of a frame unit at `phase`: the product of its
    /// conditional inclusion probabilities up to that phase.
    pub fn inclusion_product(&self, phase: Phase, unit: usize) -> Result<f64> {
        let level = self.level(phase)?;
        let k = level.units.binary_search(&unit).map_err(|_| Error::Lookup { unit })?;
        Ok(level.pi_star[k])
    }

    /// Values of one column over the units of `phase`.
    pub fn column(&self, pop: &FinitePopulation, phase: Phase, column: Column) -> Result<Vec<f64>> {
        self.level(phase)?.units.iter().map(|&u| pop.value(column, u)).collect()
    }

    /// Rows of the selected x columns over the units of `phase`.
    pub fn x_rows(&self, pop: &FinitePopulation, phase: Phase, cols: &[usize]) -> Result<Matrix> {
        let units = &self.level(phase)?.units;
        let mut out = Matrix::zeros(units.len(), cols.len());
        for &c in cols {
            if c >= pop.p() {
                return Err(Error::Config(alloc::format!("x column {c} out of range")));
            }
        }
        for (r, &u) in units.iter().enumerate() {
            let row = pop.x_row(u);
            for (k, &c) in cols.iter().enumerate() {
                out[(r, k)] = row[c];
            }
        }
        Ok(out)
    }

    /// Study values over the units of `phase`.
    pub fn y(&self, pop: &FinitePopulation, phase: Phase) -> Result<Vec<f64>> {
        let y = pop.y()?;
        Ok(self.level(phase)?.units.iter().map(|&u| y[u]).collect())
    }
}
