//! Numerical tolerances shared across the crate.

use serde::{Deserialize, Serialize};

/// Row-sum tolerance, scaled by `max|q_ij|`.
pub const ROW_TOL: f64 = 1e-10;
/// Stationarity residual tolerance, scaled by `max|q_ij|`.
pub const STAT_TOL: f64 = 1e-10;
/// Relative detailed-balance tolerance.
pub const REV_TOL: f64 = 1e-9;
/// Zero-eigenvalue tolerance, scaled by `max|q_ij|`.
pub const EIG_TOL: f64 = 1e-9;
/// Probability vectors must sum to one within this.
pub const SUM_TOL: f64 = 1e-10;
/// f-norms below this are treated as numerical noise by the rate fit.
pub const NOISE_FLOOR: f64 = 1e-14;
/// Negative semigroup entries above `-NEG_DUST` are clamped silently.
pub const NEG_DUST: f64 = 1e-12;
/// Largest dimension accepted by the sign-vector norm enumeration.
pub const BRUTE_FORCE_MAX_N: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub row: f64,
    pub stationary: f64,
    pub reversibility: f64,
    pub eigen: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            row: ROW_TOL,
            stationary: STAT_TOL,
            reversibility: REV_TOL,
            eigen: EIG_TOL,
        }
    }
}

impl Tolerances {
    pub fn is_default(&self) -> bool {
        *self == Self::default()
    }
}
