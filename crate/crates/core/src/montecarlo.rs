//! Trajectory sampling: exponential holding times and embedded jumps.
//!
//! Path `k` draws from a ChaCha8 stream keyed by `(seed, k)`, so ensembles
//! are bit-identical regardless of thread count or scheduling.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{ChainSpec, Distribution, WeightFunction};
use crate::error::{ErgoError, Result};
use crate::semigroup::{check_grid, fmt_f64};

/// Initial condition of every path.
#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    State(usize),
    Law(Distribution),
}

/// Per-state holding-time totals over all sampled sojourns.
#[derive(Debug, Clone, Serialize)]
pub struct HoldingStats {
    pub count: Vec<u64>,
    pub sum: Vec<f64>,
    pub sum_sq: Vec<f64>,
}

impl HoldingStats {
    fn new(n: usize) -> Self {
        Self {
            count: vec![0; n],
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
        }
    }

    fn merge(&mut self, other: &Self) {
        for k in 0..self.count.len() {
            self.count[k] += other.count[k];
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
        }
    }

    pub fn mean(&self, k: usize) -> Option<f64> {
        (self.count[k] > 0).then(|| self.sum[k] / self.count[k] as f64)
    }

    /// Standard error of [`HoldingStats::mean`].
    pub fn stderr(&self, k: usize) -> Option<f64> {
        let c = self.count[k];
        if c < 2 {
            return None;
        }
        let m = self.sum[k] / c as f64;
        let var = (self.sum_sq[k] / c as f64 - m * m).max(0.0) * c as f64 / (c - 1) as f64;
        Some((var / c as f64).sqrt())
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub label: String,
    pub start: Start,
    pub times: Vec<f64>,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    n_states: usize,
    /// `occupancy[p * times.len() + k]` is the state of path `p` at `times[k]`.
    occupancy: Vec<u32>,
    pub holding: HoldingStats,
}

impl TrajectoryEnsemble {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn state_at(&self, path: usize, k: usize) -> usize {
        self.occupancy[path * self.times.len() + k] as usize
    }

    /// Occupation counts per state at `times[k]`.
    pub fn counts(&self, k: usize) -> Vec<u64> {
        let mut c = vec![0; self.n_states];
        for p in 0..self.n_paths {
            c[self.state_at(p, k)] += 1;
        }
        c
    }

    /// Empirical law at `times[k]`.
    pub fn empirical_law(&self, k: usize) -> Vec<f64> {
        let n = self.n_paths as f64;
        self.counts(k).iter().map(|&c| c as f64 / n).collect()
    }
}

struct JumpTable {
    rate: Vec<f64>,
    /// Cumulative off-diagonal rates `(target, running sum)` per state.
    targets: Vec<Vec<(usize, f64)>>,
}

impl JumpTable {
    fn new(spec: &ChainSpec) -> Self {
        let q = spec.rate_matrix();
        let n = q.n();
        let mut rate = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for i in 0..n {
            let mut acc = 0.0;
            let mut row = Vec::new();
            for j in (0..n).filter(|&j| j != i) {
                let r = q.rate(i, j);
                if r > 0.0 {
                    acc += r;
                    row.push((j, acc));
                }
            }
            rate.push(acc);
            targets.push(row);
        }
        Self { rate, targets }
    }

    fn jump(&self, i: usize, rng: &mut ChaCha8Rng) -> usize {
        let row = &self.targets[i];
        let u = rng.random::<f64>() * self.rate[i];
        row.iter()
            .find(|(_, c)| u < *c)
            .map_or(row[row.len() - 1].0, |&(j, _)| j)
    }
}

fn draw_categorical(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (k, pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

fn exp_draw(rate: f64, rng: &mut ChaCha8Rng) -> f64 {
    // 1 - U lies in (0, 1]
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// Samples `n_paths` independent trajectories and records their states on
/// the grid `times`.
pub fn sample_paths(
    spec: &ChainSpec,
    start: Start,
    times: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    if n_paths == 0 {
        return Err(ErgoError::InsufficientData("n_paths must be >= 1".into()));
    }
    check_grid(times)?;
    let n = spec.n();
    match &start {
        Start::State(i) => spec.check_state(*i)?,
        Start::Law(mu) if mu.len() != n => {
            return Err(ErgoError::DimensionMismatch {
                expected: n,
                got: mu.len(),
            })
        }
        Start::Law(_) => {}
    }
    let table = JumpTable::new(spec);
    let horizon = times[times.len() - 1];
    let m = times.len();

    let per_path: Vec<(Vec<u32>, HoldingStats)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut state = match &start {
                Start::State(i) => *i,
                Start::Law(mu) => draw_categorical(mu.as_slice(), &mut rng),
            };
            let mut stats = HoldingStats::new(n);
            let mut out = Vec::with_capacity(m);
            let mut clock = 0.0;
            let mut k = 0;
            loop {
                let hold = exp_draw(table.rate[state], &mut rng);
                stats.count[state] += 1;
                stats.sum[state] += hold;
                stats.sum_sq[state] += hold * hold;
                let leave = clock + hold;
                while k < m && times[k] < leave {
                    out.push(state as u32);
                    k += 1;
                }
                if k == m || leave > horizon {
                    while k < m {
                        out.push(state as u32);
                        k += 1;
                    }
                    break;
                }
                clock = leave;
                state = table.jump(state, &mut rng);
            }
            (out, stats)
        })
        .collect();

    let mut occupancy = Vec::with_capacity(n_paths * m);
    let mut holding = HoldingStats::new(n);
    for (states, stats) in &per_path {
        occupancy.extend_from_slice(states);
        holding.merge(stats);
    }
    Ok(TrajectoryEnsemble {
        label: spec.label.clone(),
        start,
        times: times.to_vec(),
        horizon,
        n_paths,
        seed,
        n_states: n,
        occupancy,
        holding,
    })
}

/// Per-time f-norm estimates of `(empirical law) - pi`.
#[derive(Debug, Clone, Serialize)]
pub struct FnormEstimate {
    pub times: Vec<f64>,
    pub fnorm_est: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl FnormEstimate {
    /// CSV with header `t,fnorm_est,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,fnorm_est,stderr\n");
        for k in 0..self.times.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_f64(self.times[k]),
                fmt_f64(self.fnorm_est[k]),
                fmt_f64(self.stderr[k])
            );
        }
        out
    }
}

/// `sum_j f_j |p_j - pi_j|` for the empirical law `p`, with a delta-method
/// standard error from the multinomial covariance of `p`.
pub fn empirical_fnorm(
    ensemble: &TrajectoryEnsemble,
    pi: &Distribution,
    f: &WeightFunction,
) -> Result<FnormEstimate> {
    let n = ensemble.n_states;
    for len in [pi.len(), f.len()] {
        if len != n {
            return Err(ErgoError::DimensionMismatch {
                expected: n,
                got: len,
            });
        }
    }
    let paths = ensemble.n_paths as f64;
    let mut fnorm_est = Vec::with_capacity(ensemble.times.len());
    let mut stderr = Vec::with_capacity(ensemble.times.len());
    for k in 0..ensemble.times.len() {
        let p = ensemble.empirical_law(k);
        let mut est = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..n {
            let d = p[j] - pi.get(j);
            est += f.get(j) * d.abs();
            let g = f.get(j) * d.signum();
            m1 += g * p[j];
            m2 += g * g * p[j];
        }
        fnorm_est.push(est);
        stderr.push(((m2 - m1 * m1).max(0.0) / paths).sqrt());
    }
    Ok(FnormEstimate {
        times: ensemble.times.clone(),
        fnorm_est,
        stderr,
    })
}
