use thiserror::Error;

/// Errors raised by model validation and the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("NonStochasticInitial: initial vector must be nonnegative and sum to 1 ({0})")]
    NonStochasticInitial(String),

    #[error("NotSubgenerator: {0}")]
    NotSubgenerator(String),

    #[error("SingularGenerator: {0}")]
    SingularGenerator(String),

    #[error("InvalidParameter: {name} = {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("DegenerateTargets: need alpha0 > 0, alpha1 > 0 and alpha0 + alpha1 < 1, got ({alpha0}, {alpha1})")]
    DegenerateTargets { alpha0: f64, alpha1: f64 },

    #[error("SeriesOverflow: {0}")]
    SeriesOverflow(String),

    #[error("InversionDiverged: {0}")]
    InversionDiverged(String),

    #[error("SingularTransform: F(s) is singular at s = {re} + {im}i")]
    SingularTransform { re: f64, im: f64 },

    #[error("IllConditionedSolve: {0}")]
    IllConditionedSolve(String),

    #[error("QuadratureFailed: {0}")]
    QuadratureFailed(String),

    #[error("RouteMismatch: H1 routes disagree ({first} vs {second})")]
    RouteMismatch { first: f64, second: f64 },

    #[error("OutsideOptimalityRegion: {0}")]
    OutsideOptimalityRegion(String),

    #[error("NoConvergence: {0}")]
    NoConvergence(String),

    #[error("AllCapped: all {0} replications hit the step cap")]
    AllCapped(u64),

    #[error("at grid node {index}: {source}")]
    GridNode {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for rejections of malformed input, false for numerical failures.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::DimensionMismatch(_)
            | Error::NonStochasticInitial(_)
            | Error::NotSubgenerator(_)
            | Error::SingularGenerator(_)
            | Error::InvalidParameter { .. }
            | Error::DegenerateTargets { .. } => true,
            Error::GridNode { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    /// Short variant name, used in CLI diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonStochasticInitial(_) => "NonStochasticInitial",
            Error::NotSubgenerator(_) => "NotSubgenerator",
            Error::SingularGenerator(_) => "SingularGenerator",
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::DegenerateTargets { .. } => "DegenerateTargets",
            Error::SeriesOverflow(_) => "SeriesOverflow",
            Error::InversionDiverged(_) => "InversionDiverged",
            Error::SingularTransform { .. } => "SingularTransform",
            Error::IllConditionedSolve(_) => "IllConditionedSolve",
            Error::QuadratureFailed(_) => "QuadratureFailed",
            Error::RouteMismatch { .. } => "RouteMismatch",
            Error::OutsideOptimalityRegion(_) => "OutsideOptimalityRegion",
            Error::NoConvergence(_) => "NoConvergence",
            Error::AllCapped(_) => "AllCapped",
            Error::GridNode { source, .. } => source.name(),
        }
    }

    pub(crate) fn at_node(self, index: usize) -> Error {
        Error::GridNode {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_param(
    name: &'static str,
    value: f64,
    ok: bool,
    reason: &'static str,
) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason,
        })
    }
}
