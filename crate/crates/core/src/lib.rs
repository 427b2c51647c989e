//! Spectral and f-norm ergodicity analysis of finite continuous-time Markov
//! chains.
//!
//! [`chain`] builds and validates generators, [`spectral`] computes the gap,
//! the spectrum and the ergodicity constants, [`semigroup`] evaluates
//! `P_t = exp(tQ)` and f-norm decay curves, [`htransform`] checks the
//! h-transform identities numerically and [`montecarlo`] samples paths as an
//! independent oracle.

pub mod chain;
pub mod drift;
pub mod error;
pub mod htransform;
pub mod montecarlo;
pub mod semigroup;
pub mod spec_file;
pub mod spectral;
pub mod tol;
pub mod verify;

pub use chain::{ChainSpec, Distribution, RateMatrix, WeightFunction};
pub use error::{ErgoError, Result};
pub use semigroup::{DecayCurve, RateFit, Semigroup};
pub use spectral::SpectralReport;
pub use tol::Tolerances;
