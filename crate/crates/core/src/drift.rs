//! Foster-Lyapunov drift condition `Qf <= -c f + b 1_C` for the weight `f`.

use serde::Serialize;

use crate::chain::ChainSpec;
use crate::error::{ErgoError, Result};
use crate::spectral::gap_with;
use crate::tol::Tolerances;

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub small_set: Vec<usize>,
    /// `(Qf)_i` for every state.
    pub qf: Vec<f64>,
    /// Largest `c` with `(Qf)_i <= -c f_i` off the small set.
    pub c_max: f64,
    /// Smallest `b` with `(Qf)_i <= -c_max f_i + b` on the small set.
    pub b_min: f64,
    /// Spectral gap, the sharp rate for comparison.
    pub gap: f64,
}

pub fn drift(spec: &ChainSpec, small_set: &[usize]) -> Result<DriftReport> {
    drift_with(spec, small_set, &Tolerances::default())
}

pub fn drift_with(spec: &ChainSpec, small_set: &[usize], tol: &Tolerances) -> Result<DriftReport> {
    let n = spec.n();
    let mut set = small_set.to_vec();
    set.sort_unstable();
    set.dedup();
    if set.is_empty() {
        return Err(ErgoError::InvalidSmallSet("small set is empty".into()));
    }
    if let Some(&s) = set.iter().find(|&&s| s >= n) {
        return Err(ErgoError::StateOutOfRange { state: s, n });
    }
    if set.len() == n {
        return Err(ErgoError::InvalidSmallSet(
            "small set covers every state".into(),
        ));
    }
    let f = spec.weight().as_slice();
    let q = spec.rate_matrix();
    let qf = q.apply(f);
    let inside = |i: usize| set.binary_search(&i).is_ok();
    let c_max = (0..n)
        .filter(|&i| !inside(i))
        .map(|i| -qf[i] / f[i])
        .fold(f64::INFINITY, f64::min);
    if c_max <= tol.row * q.max_rate() {
        return Err(ErgoError::NoDrift { c: c_max });
    }
    let b_min = set
        .iter()
        .map(|&i| qf[i] + c_max * f[i])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let gap = gap_with(q, spec.stationary(), tol)?;
    Ok(DriftReport {
        small_set: set,
        qf,
        c_max,
        b_min,
        gap,
    })
}
