//! Design-based estimation under two-phase, tiered and three-phase rejective
//! sampling.
//!
//! The crate is `no_std` and only needs `alloc`. Everything that touches the
//! filesystem, configuration files or threads lives in the `rejsamp` crate.
//!
//! Module map:
//!
//! - [`population`]: finite frames, synthetic generators, finite-population moments
//! - [`designs`]: SRSWOR, Poisson and stratified draws with closed-form
//!   first- and second-order inclusion probabilities
//! - [`balance`]: Mahalanobis balance statistics and the accept/reject loops
//! - [`estimators`]: Hájek, double-expansion, REE and regression estimators
//! - [`variance`]: variance estimators and confidence intervals
//! - [`ldist`]: the truncated-ball limiting law `L_{p,γ²}` and mixture quantiles
//! - [`estequ`]: parameters defined by estimating equations

#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod balance;
pub mod chain;
pub mod designs;
mod error;
pub mod estequ;
pub mod estimators;
pub mod ldist;
pub mod linalg;
pub mod population;
mod sum;
pub mod variance;

pub use balance::{BalanceCriterion, GammaSq, NormalizerConvention, Tiers};
pub use chain::{Phase, PhaseChain};
pub use designs::{Design, DesignTag, DrawnSample, PairwiseRule, PreparedDesign, StratumPlan};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use population::{Column, FinitePopulation, MomentPair};
pub use sum::NeumaierSum;
