//! Spectral gap, full spectrum and the f-ergodicity rate and constants.
//!
//! For a reversible generator the gap is read off the symmetric matrix
//! `S = D^{1/2} (-Q) D^{-1/2}` with `D = diag(pi)`. The Dirichlet form
//! `(-Qg, g)_pi` only sees the symmetric part of `Q` in `L^2(pi)`, so for an
//! irreversible generator the gap is that of the additive reversibilization.
//! The true asymptotic decay rate of an irreversible chain comes from the
//! complex spectrum of `Q` and can exceed the gap.

use nalgebra::{Complex, DMatrix, Schur, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::chain::{
    is_reversible_with, reversibilize, ChainSpec, Distribution, RateMatrix, WeightFunction,
};
use crate::error::{ErgoError, Result};
use crate::tol::Tolerances;

const MAX_SWEEPS: usize = 100_000;
/// Deflation thresholds tried in turn, in units of machine epsilon.
const SCHUR_EPS: [f64; 4] = [1.0, 4.0, 16.0, 64.0];

/// Eigen-decomposition of `S = D^{1/2} (-Q) D^{-1/2}`, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors of `S`, one per column.
    pub vectors: DMatrix<f64>,
    pub sqrt_pi: Vec<f64>,
}

impl SymmetricSpectrum {
    /// Eigenfunction of `-Q` for eigenvalue `values[k]`, normalized in `L^2(pi)`.
    pub fn eigenfunction(&self, k: usize) -> Vec<f64> {
        self.vectors
            .column(k)
            .iter()
            .zip(&self.sqrt_pi)
            .map(|(v, s)| v / s)
            .collect()
    }

    pub fn gap(&self) -> f64 {
        self.values[1]
    }
}

/// Symmetric spectrum of a generator that is reversible with respect to `pi`.
/// Any antisymmetric residue in `S` is discarded.
pub fn symmetric_spectrum(q: &RateMatrix, pi: &Distribution) -> Result<SymmetricSpectrum> {
    let n = q.n();
    let sqrt_pi: Vec<f64> = pi.as_slice().iter().map(|p| p.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| {
        let a = -sqrt_pi[i] * q.rate(i, j) / sqrt_pi[j];
        let b = -sqrt_pi[j] * q.rate(j, i) / sqrt_pi[i];
        0.5 * (a + b)
    });
    let eig =
        SymmetricEigen::try_new(s, f64::EPSILON, MAX_SWEEPS).ok_or(ErgoError::EigenFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(n, n, |i, c| eig.eigenvectors[(i, order[c])]);
    Ok(SymmetricSpectrum {
        values,
        vectors,
        sqrt_pi,
    })
}

/// Spectral gap of `Q` in `L^2(pi)`.
pub fn gap(q: &RateMatrix, pi: &Distribution) -> Result<f64> {
    gap_with(q, pi, &Tolerances::default())
}

pub fn gap_with(q: &RateMatrix, pi: &Distribution, tol: &Tolerances) -> Result<f64> {
    if is_reversible_with(q, pi, tol).reversible {
        Ok(symmetric_spectrum(q, pi)?.gap().max(0.0))
    } else {
        let bar = reversibilize(q, pi)?;
        Ok(symmetric_spectrum(&bar, pi)?.gap().max(0.0))
    }
}

/// Full spectrum of `Q`, sorted by descending real part, then ascending
/// imaginary part.
pub fn eigenvalues(q: &RateMatrix) -> Result<Vec<Complex<f64>>> {
    // Francis iterations can stall on highly degenerate spectra (e.g. the
    // complete-graph chain, eigenvalue -1 of multiplicity n-1); a slightly
    // looser deflation test resolves those.
    let schur = SCHUR_EPS
        .iter()
        .find_map(|&k| Schur::try_new(q.matrix().clone(), k * f64::EPSILON, MAX_SWEEPS))
        .ok_or(ErgoError::EigenFailure)?;
    let mut values: Vec<Complex<f64>> = schur.complex_eigenvalues().iter().copied().collect();
    values.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    Ok(values)
}

/// `-max Re(lambda)` over the nonzero eigenvalues of `Q`.
pub fn true_decay_rate(q: &RateMatrix) -> Result<f64> {
    true_decay_rate_with(q, &Tolerances::default())
}

pub fn true_decay_rate_with(q: &RateMatrix, tol: &Tolerances) -> Result<f64> {
    decay_rate_from(&eigenvalues(q)?, tol.eigen * q.max_rate())
}

fn decay_rate_from(values: &[Complex<f64>], zero_tol: f64) -> Result<f64> {
    let zeros = values.iter().filter(|l| l.norm() <= zero_tol).count();
    if zeros == 0 {
        return Err(ErgoError::EigenFailure);
    }
    values
        .iter()
        .filter(|l| l.norm() > zero_tol)
        .map(|l| -l.re)
        .reduce(f64::min)
        .ok_or(ErgoError::EigenFailure)
}

/// `C(i, f) = pi(f^2)^{1/2} (1/pi_i - 1)^{1/2}` for every state.
pub fn ergodicity_constants(pi: &Distribution, f: &WeightFunction) -> Vec<f64> {
    let scale = f.second_moment(pi).sqrt();
    pi.as_slice()
        .iter()
        .map(|p| scale * (1.0 / p - 1.0).max(0.0).sqrt())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    /// Reversible chain: the gap is the optimal f-ergodicity rate.
    Exact,
    /// Irreversible chain: the gap of the reversibilization is a certified
    /// rate but not necessarily the best one.
    LowerBound,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub gap: f64,
    #[serde(serialize_with = "complex_pairs")]
    pub eigenvalues: Vec<Complex<f64>>,
    pub reversible: bool,
    pub reversibility_violation: f64,
    pub rate_epsilon_max: f64,
    pub rate_kind: RateKind,
    pub true_decay_rate: f64,
    pub constants: Vec<f64>,
}

fn complex_pairs<S: Serializer>(v: &[Complex<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|c| [c.re, c.im]))
}

pub fn ergodicity_report(spec: &ChainSpec) -> Result<SpectralReport> {
    ergodicity_report_with(spec, &Tolerances::default())
}

pub fn ergodicity_report_with(spec: &ChainSpec, tol: &Tolerances) -> Result<SpectralReport> {
    let q = spec.rate_matrix();
    let pi = spec.stationary();
    let rev = is_reversible_with(q, pi, tol);
    let gap = gap_with(q, pi, tol)?;
    let eigenvalues = eigenvalues(q)?;
    let true_decay_rate = decay_rate_from(&eigenvalues, tol.eigen * q.max_rate())?;
    Ok(SpectralReport {
        gap,
        eigenvalues,
        reversible: rev.reversible,
        reversibility_violation: rev.max_violation,
        rate_epsilon_max: gap,
        rate_kind: if rev.reversible {
            RateKind::Exact
        } else {
            RateKind::LowerBound
        },
        true_decay_rate,
        constants: ergodicity_constants(pi, spec.weight()),
    })
}
