//! Exact boundaries, error probabilities and sample-size characteristics of
//! Wald's sequential probability ratio test when the null law is phase-type and
//! the alternative is its exponential tilt.

pub mod error;
mod mp;
pub mod phasetype;
pub mod quad;
pub mod rootfind;
pub mod scale;

pub use error::{Error, Result};
pub use phasetype::{PhaseTypeDist, TiltResult};
pub use scale::{MapModel, ScaleMatrix, ScaleMethod};
pub mod sim;
pub mod solver;
pub mod sprt;

pub use sim::{SimConfig, SimResult};
pub use solver::{BayesOutcome, PenaltySpec, PosteriorBoundaries, RegionBoundary};
pub use sprt::{Boundaries, ErrorPair, Hypothesis, TestProblem};
