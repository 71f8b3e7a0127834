use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
#[non_exhaustive]
pub enum Error {
    /// Invalid sizes, thresholds or other configuration values.
    Config(String),
    /// A design cannot be drawn as specified.
    Design(String),
    /// Fewer than two units where a covariance is required.
    DegeneratePopulation { n_units: usize },
    /// The balance normalizer is not positive definite.
    SingularNormalizer { smallest_pivot: f64 },
    /// Phase-II census: the between-phase difference has no variance.
    ZeroVariance,
    /// The rejection loop hit its draw cap.
    AcceptanceFailure { attempts: u64, accepted: u64 },
    /// A Gram–Schmidt tier carries no variation beyond the earlier tiers.
    TierCollinearity { tier: usize },
    /// A weighted Gram matrix could not be factorized.
    Collinear { context: &'static str },
    /// Not enough units to fit `p` regressors.
    InsufficientData { n: usize, p: usize },
    /// Residual degrees of freedom are not positive.
    DegreesOfFreedom { n: usize, p: usize },
    /// An estimator was handed an empty sample.
    EmptySample,
    /// A stratum has phase-I mass but no phase-II units.
    UndefinedRatio { stratum: usize },
    /// The unit is not part of the requested sample.
    Lookup { unit: usize },
    /// A pairwise inclusion probability is required but unknown.
    Capability(&'static str),
    /// The estimating-equation solver did not converge.
    Solver { iterations: usize, residual: f64 },
    /// The estimating-equation Jacobian is singular.
    NonIdentification,
    /// Every scale of a mixture law is zero.
    DegenerateDistribution,
    /// The study variable is not observed on this frame.
    UnobservedOutcome,
    /// Exhaustive enumeration would exceed its combinatorial budget.
    Size { combinations: u128, budget: u128 },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "configuration error: {msg}"),
            Error::Design(msg) => write!(f, "design error: {msg}"),
            Error::DegeneratePopulation { n_units } => {
                write!(f, "degenerate population: {n_units} unit(s), need at least 2")
            }
            Error::SingularNormalizer { smallest_pivot } => {
                write!(f, "balance normalizer is singular (smallest pivot {smallest_pivot:e})")
            }
            Error::ZeroVariance => {
                write!(f, "phase-II sample equals phase-I sample; balance criterion undefined")
            }
            Error::AcceptanceFailure { attempts, accepted } => {
                let rate = *accepted as f64 / (*attempts).max(1) as f64;
                write!(
                    f,
                    "no balanced sample after {attempts} draws (empirical acceptance rate {rate:.3e})"
                )
            }
            Error::TierCollinearity { tier } => {
                write!(f, "tier {} is collinear with the preceding tiers", tier + 1)
            }
            Error::Collinear { context } => write!(f, "collinear design matrix in {context}"),
            Error::InsufficientData { n, p } => {
                write!(f, "insufficient data: {n} unit(s) for {p} regressor(s)")
            }
            Error::DegreesOfFreedom { n, p } => {
                write!(f, "no residual degrees of freedom: n = {n}, p = {p}")
            }
            Error::EmptySample => write!(f, "empty sample"),
            Error::UndefinedRatio { stratum } => {
                write!(f, "stratum {stratum} has phase-I units but no phase-II units")
            }
            Error::Lookup { unit } => write!(f, "unit {unit} is not in the sample"),
            Error::Capability(what) => write!(f, "unsupported: {what}"),
            Error::Solver { iterations, residual } => write!(
                f,
                "estimating equation did not converge after {iterations} iterations (|s| = {residual:e})"
            ),
            Error::NonIdentification => write!(f, "singular estimating-equation Jacobian"),
            Error::DegenerateDistribution => write!(f, "all mixture scales are zero"),
            Error::UnobservedOutcome => write!(f, "study variable y is not observed on this frame"),
            Error::Size { combinations, budget } => {
                write!(f, "{combinations} sample pairs exceed the enumeration budget of {budget}")
            }
        }
    }
}

impl core::error::Error for Error {}
