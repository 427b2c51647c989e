//! Finite-state continuous-time Markov chains: generator validation,
//! stationary laws, time reversal and the built-in chain families.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{ErgoError, Result};
use crate::tol::{Tolerances, SUM_TOL};

/// How [`RateMatrix::validate`] treats the diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Validation {
    /// Rows must already sum to zero within the row tolerance.
    #[default]
    Strict,
    /// The diagonal is overwritten with the negative off-diagonal row sum.
    Repair,
}

/// A conservative, irreducible Q-matrix on `n >= 2` states.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix {
    q: DMatrix<f64>,
    max_rate: f64,
}

impl RateMatrix {
    /// Validates `q` in strict mode with default tolerances.
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        Self::validate(q, Validation::Strict, &Tolerances::default())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for row in rows {
            if row.len() != n {
                return Err(ErgoError::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
        }
        let q = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(q)
    }

    pub fn validate(mut q: DMatrix<f64>, mode: Validation, tol: &Tolerances) -> Result<Self> {
        let (rows, cols) = q.shape();
        if rows != cols {
            return Err(ErgoError::NotSquare { rows, cols });
        }
        let n = rows;
        if n < 2 {
            return Err(ErgoError::TooFewStates(n));
        }
        for i in 0..n {
            for j in 0..n {
                let v = q[(i, j)];
                if !v.is_finite() {
                    return Err(ErgoError::NonFinite { row: i, col: j });
                }
                if i != j && v < 0.0 {
                    return Err(ErgoError::NegativeRate {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        if mode == Validation::Repair {
            for i in 0..n {
                let off: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)]).sum();
                q[(i, i)] = -off;
            }
        }
        let max_rate = q.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let row_tol = tol.row * max_rate.max(f64::MIN_POSITIVE);
        for i in 0..n {
            let sum: f64 = q.row(i).iter().sum();
            if sum.abs() > row_tol {
                return Err(ErgoError::NonConservative {
                    row: i,
                    sum,
                    tol: row_tol,
                });
            }
        }
        if let Some(state) = first_unreachable(&q) {
            return Err(ErgoError::Reducible { state });
        }
        Ok(Self { q, max_rate })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[(i, j)]
    }

    /// `max |q_ij|` over all entries.
    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    /// `(Qg)_i = sum_j q_ij g_j`.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let v = &self.q * DVector::from_column_slice(g);
        v.iter().copied().collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| self.q.row(i).iter().copied().collect())
            .collect()
    }
}

/// Returns a state that is not mutually reachable with state 0 along
/// positive-rate edges, or `None` when the graph is strongly connected.
fn first_unreachable(q: &DMatrix<f64>) -> Option<usize> {
    let n = q.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let w = if forward { q[(u, v)] } else { q[(v, u)] };
                if v != u && w > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let bwd = reach(false);
    (0..n).find(|&i| !fwd[i] || !bwd[i])
}

/// A strictly positive probability vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Distribution {
    p: Vec<f64>,
}

impl Distribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(ErgoError::InvalidDistribution("empty vector".into()));
        }
        if let Some((i, v)) = p
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v <= 0.0)
        {
            return Err(ErgoError::InvalidDistribution(format!(
                "entry {i} = {v} is not strictly positive"
            )));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(ErgoError::InvalidDistribution(format!(
                "entries sum to {sum}, not 1"
            )));
        }
        Ok(Self { p })
    }

    /// Normalizes positive weights into a distribution.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let sum: f64 = w.iter().sum();
        if !(sum.is_finite() && sum > 0.0) {
            return Err(ErgoError::InvalidDistribution(
                "weights must have a positive finite sum".into(),
            ));
        }
        Self::new(w.iter().map(|x| x / sum).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            p: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, i: usize) -> f64 {
        self.p[i]
    }

    /// `pi(g) = sum_i pi_i g_i`.
    pub fn mean(&self, g: &[f64]) -> f64 {
        self.p.iter().zip(g).map(|(p, x)| p * x).sum()
    }

    /// `(a, b)_pi`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.p
            .iter()
            .zip(a.iter().zip(b))
            .map(|(p, (x, y))| p * x * y)
            .sum()
    }

    pub fn variance(&self, g: &[f64]) -> f64 {
        let m = self.mean(g);
        self.p
            .iter()
            .zip(g)
            .map(|(p, x)| p * (x - m) * (x - m))
            .sum()
    }
}

/// Weight function `f >= 1` defining the f-norm.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WeightFunction {
    f: Vec<f64>,
}

impl WeightFunction {
    pub fn new(f: Vec<f64>) -> Result<Self> {
        for (index, &value) in f.iter().enumerate() {
            if !value.is_finite() || value < 1.0 {
                return Err(ErgoError::InvalidWeight { index, value });
            }
        }
        Ok(Self { f })
    }

    pub fn ones(n: usize) -> Self {
        Self { f: vec![1.0; n] }
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.f
    }

    pub fn get(&self, i: usize) -> f64 {
        self.f[i]
    }

    /// `pi(f^2)`.
    pub fn second_moment(&self, pi: &Distribution) -> f64 {
        pi.as_slice()
            .iter()
            .zip(&self.f)
            .map(|(p, f)| p * f * f)
            .sum()
    }
}

/// A generator together with its weight function and stationary law.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub label: String,
    rate_matrix: RateMatrix,
    weight: WeightFunction,
    stationary: Distribution,
}

impl ChainSpec {
    /// Builds a spec, solving for the stationary law when `stationary` is
    /// `None` and checking the residual `||pi Q||_inf` when it is given.
    pub fn new(
        label: impl Into<String>,
        rate_matrix: RateMatrix,
        weight: WeightFunction,
        stationary: Option<Distribution>,
    ) -> Result<Self> {
        Self::with_tolerances(
            label,
            rate_matrix,
            weight,
            stationary,
            &Tolerances::default(),
        )
    }

    pub fn with_tolerances(
        label: impl Into<String>,
        rate_matrix: RateMatrix,
        weight: WeightFunction,
        stationary: Option<Distribution>,
        tol: &Tolerances,
    ) -> Result<Self> {
        let n = rate_matrix.n();
        if weight.len() != n {
            return Err(ErgoError::DimensionMismatch {
                expected: n,
                got: weight.len(),
            });
        }
        let stationary = match stationary {
            Some(pi) => {
                if pi.len() != n {
                    return Err(ErgoError::DimensionMismatch {
                        expected: n,
                        got: pi.len(),
                    });
                }
                let residual = stationary_residual(&rate_matrix, &pi);
                let limit = tol.stationary * rate_matrix.max_rate();
                if residual > limit {
                    return Err(ErgoError::NotStationary {
                        residual,
                        tol: limit,
                    });
                }
                pi
            }
            None => stationary_with(&rate_matrix, tol)?,
        };
        Ok(Self {
            label: label.into(),
            rate_matrix,
            weight,
            stationary,
        })
    }

    pub fn rate_matrix(&self) -> &RateMatrix {
        &self.rate_matrix
    }

    pub fn weight(&self) -> &WeightFunction {
        &self.weight
    }

    pub fn stationary(&self) -> &Distribution {
        &self.stationary
    }

    pub fn n(&self) -> usize {
        self.rate_matrix.n()
    }

    /// Same chain with a different weight function.
    pub fn with_weight(&self, weight: WeightFunction) -> Result<Self> {
        if weight.len() != self.n() {
            return Err(ErgoError::DimensionMismatch {
                expected: self.n(),
                got: weight.len(),
            });
        }
        Ok(Self {
            weight,
            ..self.clone()
        })
    }

    pub fn check_state(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(ErgoError::StateOutOfRange {
                state: i,
                n: self.n(),
            });
        }
        Ok(())
    }
}

/// `||pi Q||_inf`.
pub fn stationary_residual(q: &RateMatrix, pi: &Distribution) -> f64 {
    let row = DVector::from_column_slice(pi.as_slice()).transpose() * q.matrix();
    row.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn stationary(q: &RateMatrix) -> Result<Distribution> {
    stationary_with(q, &Tolerances::default())
}

/// Solves `pi Q = 0, sum pi = 1` by replacing the last balance equation
/// with the normalization row.
pub fn stationary_with(q: &RateMatrix, tol: &Tolerances) -> Result<Distribution> {
    let n = q.n();
    let mut a = q.matrix().transpose();
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let lu = a.clone().lu();
    let mut x = lu.solve(&rhs).ok_or(ErgoError::SingularSystem)?;
    // one step of iterative refinement
    let r = &rhs - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    if x.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(ErgoError::SingularSystem);
    }
    let sum: f64 = x.iter().sum();
    let pi = Distribution::new(x.iter().map(|v| v / sum).collect())?;
    if stationary_residual(q, &pi) > tol.stationary * q.max_rate() {
        return Err(ErgoError::SingularSystem);
    }
    Ok(pi)
}

/// Outcome of a detailed-balance test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReversibilityCheck {
    pub reversible: bool,
    /// `max_{i != j} |pi_i q_ij - pi_j q_ji|`.
    pub max_violation: f64,
    /// `max_{i != j} pi_i q_ij`, the scale the violation is compared to.
    pub scale: f64,
}

pub fn is_reversible(q: &RateMatrix, pi: &Distribution) -> ReversibilityCheck {
    is_reversible_with(q, pi, &Tolerances::default())
}

pub fn is_reversible_with(
    q: &RateMatrix,
    pi: &Distribution,
    tol: &Tolerances,
) -> ReversibilityCheck {
    let n = q.n();
    let mut max_violation = 0.0_f64;
    let mut scale = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let flow = pi.get(i) * q.rate(i, j);
            scale = scale.max(flow);
            max_violation = max_violation.max((flow - pi.get(j) * q.rate(j, i)).abs());
        }
    }
    ReversibilityCheck {
        reversible: max_violation <= tol.reversibility * scale,
        max_violation,
        scale,
    }
}

/// Time-reversed generator `q^_ij = pi_j q_ji / pi_i`.
pub fn dual(q: &RateMatrix, pi: &Distribution) -> Result<RateMatrix> {
    let n = q.n();
    let p = pi.as_slice();
    let m = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            p[j] * q.rate(j, i) / p[i]
        }
    });
    RateMatrix::validate(m, Validation::Repair, &Tolerances::default())
}

/// Additive reversibilization `(Q + Q^) / 2`.
pub fn reversibilize(q: &RateMatrix, pi: &Distribution) -> Result<RateMatrix> {
    let dual = dual(q, pi)?;
    let m = (q.matrix() + dual.matrix()) * 0.5;
    RateMatrix::validate(m, Validation::Repair, &Tolerances::default())
}

/// Dirichlet form `(-Qg, g)_pi`.
pub fn dirichlet_form(q: &RateMatrix, pi: &Distribution, g: &[f64]) -> f64 {
    let qg = q.apply(g);
    -pi.inner(&qg, g)
}

/// Complete-graph chain `q_ij = pi_j` with weight `f = (1, beta, ..., beta)`.
pub fn build_example21(pi: &Distribution, beta: f64) -> Result<ChainSpec> {
    if !(beta.is_finite() && beta > 1.0) {
        return Err(ErgoError::InvalidBeta(beta));
    }
    let n = pi.len();
    if n < 2 {
        return Err(ErgoError::TooFewStates(n));
    }
    let p = pi.as_slice();
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { p[j] });
    let q = RateMatrix::validate(m, Validation::Repair, &Tolerances::default())?;
    let mut f = vec![beta; n];
    f[0] = 1.0;
    ChainSpec::new(
        format!("example21(n={n}, beta={beta})"),
        q,
        WeightFunction::new(f)?,
        Some(pi.clone()),
    )
}

/// Generator of the three-state irreversible cycle example.
pub fn example22_matrix() -> RateMatrix {
    RateMatrix::from_rows(&[
        vec![-0.5, 0.5, 0.0],
        vec![0.0, -1.0, 1.0],
        vec![1.0, 0.0, -1.0],
    ])
    .expect("built-in generator is valid")
}

/// The fixed three-state irreversible chain; `f` defaults to `(1, 1, 1)`.
pub fn build_example22(f: Option<WeightFunction>) -> Result<ChainSpec> {
    let weight = f.unwrap_or_else(|| WeightFunction::ones(3));
    ChainSpec::new("example22", example22_matrix(), weight, None)
}

/// Tridiagonal chain with `birth[k]` the rate `k -> k+1` and `death[k]` the
/// rate `k+1 -> k`, for `k = 0..n-1`.
pub fn build_birth_death(
    birth: &[f64],
    death: &[f64],
    f: Option<WeightFunction>,
) -> Result<ChainSpec> {
    if birth.len() != death.len() {
        return Err(ErgoError::DimensionMismatch {
            expected: birth.len(),
            got: death.len(),
        });
    }
    let n = birth.len() + 1;
    if n < 2 {
        return Err(ErgoError::TooFewStates(n));
    }
    for (k, (&b, &d)) in birth.iter().zip(death).enumerate() {
        if !(b.is_finite() && b > 0.0) {
            return Err(ErgoError::ZeroRate { index: k });
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(ErgoError::ZeroRate { index: k + 1 });
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for k in 0..n - 1 {
        m[(k, k + 1)] = birth[k];
        m[(k + 1, k)] = death[k];
    }
    let q = RateMatrix::validate(m, Validation::Repair, &Tolerances::default())?;
    let weight = f.unwrap_or_else(|| WeightFunction::ones(n));
    ChainSpec::new(format!("birth_death(n={n})"), q, weight, None)
}

/// Generator rule for a chain on the countable state space `{0, 1, 2, ...}`.
pub trait CountableChain {
    /// Off-diagonal rate `q_ij`, `i != j`.
    fn rate(&self, i: usize, j: usize) -> f64;

    fn weight(&self, _i: usize) -> f64 {
        1.0
    }

    /// Stationary mass of state `i` of the untruncated chain, when known.
    fn stationary_mass(&self, _i: usize) -> Option<f64> {
        None
    }
}

/// Countable complete-graph chain `q_ij = pi_j` with geometric
/// `pi_i = (1 - r) r^i` and `f = (1, beta, beta, ...)`.
#[derive(Debug, Clone, Copy)]
pub struct GeometricCompleteGraph {
    pub ratio: f64,
    pub beta: f64,
}

impl CountableChain for GeometricCompleteGraph {
    fn rate(&self, _i: usize, j: usize) -> f64 {
        self.stationary_mass(j).unwrap_or(0.0)
    }

    fn weight(&self, i: usize) -> f64 {
        if i == 0 {
            1.0
        } else {
            self.beta
        }
    }

    fn stationary_mass(&self, i: usize) -> Option<f64> {
        Some((1.0 - self.ratio) * self.ratio.powi(i as i32))
    }
}

/// Countable birth-death chain with constant rates (an M/M/1 queue).
#[derive(Debug, Clone, Copy)]
pub struct ConstantBirthDeath {
    pub birth: f64,
    pub death: f64,
}

impl CountableChain for ConstantBirthDeath {
    fn rate(&self, i: usize, j: usize) -> f64 {
        if j == i + 1 {
            self.birth
        } else if i == j + 1 {
            self.death
        } else {
            0.0
        }
    }

    fn stationary_mass(&self, i: usize) -> Option<f64> {
        let r = self.birth / self.death;
        (r < 1.0).then(|| (1.0 - r) * r.powi(i as i32))
    }
}

/// Finite window of a countable chain.
#[derive(Debug, Clone)]
pub struct Truncation {
    pub spec: ChainSpec,
    pub size: usize,
    /// `sum_{i < N} pi_i` of the untruncated stationary law, when known.
    pub retained_mass: Option<f64>,
}

/// Restricts a countable chain to `{0, ..., size-1}`. Rates leaving the
/// window are dropped and diagonals recomputed (reflecting truncation).
pub fn truncate(rule: &dyn CountableChain, size: usize) -> Result<Truncation> {
    if size < 2 {
        return Err(ErgoError::TooFewStates(size));
    }
    let m = DMatrix::from_fn(
        size,
        size,
        |i, j| if i == j { 0.0 } else { rule.rate(i, j) },
    );
    let q = RateMatrix::validate(m, Validation::Repair, &Tolerances::default())?;
    let f = WeightFunction::new((0..size).map(|i| rule.weight(i)).collect())?;
    let retained_mass = (0..size)
        .map(|i| rule.stationary_mass(i))
        .sum::<Option<f64>>();
    let spec = ChainSpec::new(format!("truncated(N={size})"), q, f, None)?;
    Ok(Truncation {
        spec,
        size,
        retained_mass,
    })
}
