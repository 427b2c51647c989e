//! Transition semigroup `P_t = exp(tQ)`, f-norm decay curves and rate fits.
//!
//! Two routes evaluate the semigroup. Reversible chains use the symmetric
//! eigen-decomposition, `P_t - Pi = D^{-1/2} V' exp(-t L') V'^T D^{1/2}` with
//! the zero mode removed. Everything else uses Padé(13) scaling and
//! squaring. Decay curves need `P_t - Pi` to full relative precision long
//! after `P_t` itself has converged to working precision, so the Padé route
//! squares the deviation `E_s = P_s - Pi` directly (`E_{2s} = E_s^2`, since
//! `P Pi = Pi P = Pi`) instead of subtracting `Pi` at the end.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{dual, is_reversible, ChainSpec, Distribution, RateMatrix, WeightFunction};
use crate::error::{ErgoError, Result};
use crate::spectral::{symmetric_spectrum, SpectralReport, SymmetricSpectrum};
use crate::tol::{BRUTE_FORCE_MAX_N, NEG_DUST, NOISE_FLOOR, SUM_TOL};

/// Padé(13) numerator coefficients (Higham 2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;
const MAX_SQUARINGS: i32 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpmMethod {
    Spectral,
    PadeScalingSquaring,
}

/// Returns `(s, exp(A / 2^s))` with `||A / 2^s||_1 <= theta_13`.
fn scaled_pade(a: &DMatrix<f64>) -> Result<(i32, DMatrix<f64>)> {
    let norm = a
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if !norm.is_finite() {
        return Err(ErgoError::Overflow(norm));
    }
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    if s > MAX_SQUARINGS {
        return Err(ErgoError::Overflow(norm));
    }
    let scaled = a * 2f64.powi(-s);
    Ok((s, pade13(&scaled)?))
}

fn pade13(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let num = &v + &u;
    let den = &v - &u;
    den.lu()
        .solve(&num)
        .ok_or(ErgoError::Overflow(f64::INFINITY))
}

/// `exp(A)` for an arbitrary real square matrix via Padé(13) scaling and
/// squaring.
pub fn pade_expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (s, mut e) = scaled_pade(a)?;
    for _ in 0..s {
        e = &e * &e;
    }
    Ok(e)
}

/// `P_t` at one time, with negative floating-point dust clamped.
#[derive(Debug, Clone)]
pub struct SemigroupSnapshot {
    pub t: f64,
    pub p: DMatrix<f64>,
    pub method: ExpmMethod,
    /// Smallest entry before clamping; below `-NEG_DUST` it signals a
    /// loss of accuracy rather than rounding.
    pub min_raw_entry: f64,
}

impl SemigroupSnapshot {
    fn from_raw(t: f64, mut p: DMatrix<f64>, method: ExpmMethod) -> Self {
        let min_raw_entry = p.iter().copied().fold(f64::INFINITY, f64::min);
        for v in p.iter_mut() {
            if *v < 0.0 && *v >= -NEG_DUST {
                *v = 0.0;
            }
        }
        Self {
            t,
            p,
            method,
            min_raw_entry,
        }
    }

    pub fn has_negative_entries(&self) -> bool {
        self.min_raw_entry < -NEG_DUST
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.p.row(i).iter().copied().collect()
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(ErgoError::InvalidTime(format!(
            "t = {t} must be finite and >= 0"
        )));
    }
    Ok(())
}

/// `exp(tQ)` by Padé(13) scaling and squaring.
pub fn expm(q: &RateMatrix, t: f64) -> Result<SemigroupSnapshot> {
    check_time(t)?;
    let a = q.matrix() * t;
    let p = pade_expm(&a).map_err(|_| ErgoError::Overflow(t * q.max_rate()))?;
    Ok(SemigroupSnapshot::from_raw(
        t,
        p,
        ExpmMethod::PadeScalingSquaring,
    ))
}

/// `||nu||_f = sum_i f_i |nu_i|`.
pub fn f_norm(nu: &[f64], f: &WeightFunction) -> f64 {
    nu.iter().zip(f.as_slice()).map(|(v, w)| w * v.abs()).sum()
}

#[derive(Debug, Clone)]
enum Route {
    Spectral(SymmetricSpectrum),
    Pade,
}

/// Semigroup of a chain with a fixed evaluation route.
#[derive(Debug, Clone)]
pub struct Semigroup {
    spec: ChainSpec,
    route: Route,
}

impl Semigroup {
    /// Spectral route when the chain is reversible, Padé otherwise.
    pub fn new(spec: &ChainSpec) -> Result<Self> {
        if is_reversible(spec.rate_matrix(), spec.stationary()).reversible {
            Self::with_method(spec, ExpmMethod::Spectral)
        } else {
            Self::with_method(spec, ExpmMethod::PadeScalingSquaring)
        }
    }

    /// Forces a route. The spectral route symmetrizes `Q` and is only
    /// meaningful for reversible chains.
    pub fn with_method(spec: &ChainSpec, method: ExpmMethod) -> Result<Self> {
        let route = match method {
            ExpmMethod::Spectral => {
                Route::Spectral(symmetric_spectrum(spec.rate_matrix(), spec.stationary())?)
            }
            ExpmMethod::PadeScalingSquaring => Route::Pade,
        };
        Ok(Self {
            spec: spec.clone(),
            route,
        })
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn method(&self) -> ExpmMethod {
        match self.route {
            Route::Spectral(_) => ExpmMethod::Spectral,
            Route::Pade => ExpmMethod::PadeScalingSquaring,
        }
    }

    fn limit(&self) -> DMatrix<f64> {
        let n = self.spec.n();
        let pi = self.spec.stationary().as_slice();
        DMatrix::from_fn(n, n, |_, j| pi[j])
    }

    /// `P_t - Pi` where `Pi` has every row equal to `pi`.
    pub fn deviation(&self, t: f64) -> Result<DMatrix<f64>> {
        check_time(t)?;
        let n = self.spec.n();
        match &self.route {
            Route::Spectral(sp) => {
                let decay: Vec<f64> = sp.values.iter().map(|l| (-l * t).exp()).collect();
                Ok(DMatrix::from_fn(n, n, |i, j| {
                    let s: f64 = (1..n)
                        .map(|k| decay[k] * sp.vectors[(i, k)] * sp.vectors[(j, k)])
                        .sum();
                    s * sp.sqrt_pi[j] / sp.sqrt_pi[i]
                }))
            }
            Route::Pade => {
                let q = self.spec.rate_matrix();
                let a = q.matrix() * t;
                let (s, e) = scaled_pade(&a).map_err(|_| ErgoError::Overflow(t * q.max_rate()))?;
                let mut d = e - self.limit();
                for _ in 0..s {
                    d = &d * &d;
                }
                Ok(d)
            }
        }
    }

    pub fn snapshot(&self, t: f64) -> Result<SemigroupSnapshot> {
        let p = self.deviation(t)? + self.limit();
        Ok(SemigroupSnapshot::from_raw(t, p, self.method()))
    }

    /// Row `i` of `P_t - Pi`, with entries of `P_t` in `[-NEG_DUST, 0)`
    /// clamped to zero.
    pub fn row_deviation(&self, i: usize, t: f64) -> Result<Vec<f64>> {
        self.spec.check_state(i)?;
        let pi = self.spec.stationary().as_slice();
        let row: Vec<f64> = match &self.route {
            Route::Spectral(sp) => {
                check_time(t)?;
                let n = self.spec.n();
                let coef: Vec<f64> = (0..n)
                    .map(|k| (-sp.values[k] * t).exp() * sp.vectors[(i, k)])
                    .collect();
                (0..n)
                    .map(|j| {
                        let s: f64 = (1..n).map(|k| coef[k] * sp.vectors[(j, k)]).sum();
                        s * sp.sqrt_pi[j] / sp.sqrt_pi[i]
                    })
                    .collect()
            }
            Route::Pade => self.deviation(t)?.row(i).iter().copied().collect(),
        };
        Ok(row
            .into_iter()
            .zip(pi)
            .map(|(d, p)| {
                let raw = d + p;
                if raw < 0.0 && raw >= -NEG_DUST {
                    -p
                } else {
                    d
                }
            })
            .collect())
    }

    /// `||P_t(i, .) - pi||_f`.
    pub fn fnorm(&self, i: usize, t: f64) -> Result<f64> {
        Ok(f_norm(&self.row_deviation(i, t)?, self.spec.weight()))
    }

    /// Decay curve of state `i` with envelope `C(i,f) exp(-rate t)` taken
    /// from `report`.
    pub fn decay_curve(
        &self,
        report: &SpectralReport,
        i: usize,
        times: &[f64],
    ) -> Result<DecayCurve> {
        self.spec.check_state(i)?;
        check_grid(times)?;
        let fnorms = times
            .par_iter()
            .map(|&t| self.fnorm(i, t))
            .collect::<Result<Vec<f64>>>()?;
        let rate = report.rate_epsilon_max;
        let constant = report.constants[i];
        let envelope = times.iter().map(|t| constant * (-rate * t).exp()).collect();
        Ok(DecayCurve {
            state: i,
            times: times.to_vec(),
            fnorms,
            envelope,
            rate,
            constant,
        })
    }
}

pub(crate) fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(ErgoError::InvalidTime("empty time grid".into()));
    }
    check_time(times[0])?;
    if times
        .windows(2)
        .any(|w| !(w[1] > w[0]) || !w[1].is_finite())
    {
        return Err(ErgoError::InvalidTime(
            "grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Sampled `||P_t(i, .) - pi||_f` with its theoretical envelope.
#[derive(Debug, Clone, Serialize)]
pub struct DecayCurve {
    pub state: usize,
    pub times: Vec<f64>,
    pub fnorms: Vec<f64>,
    pub envelope: Vec<f64>,
    /// Exponential rate of the envelope.
    pub rate: f64,
    /// `C(i, f)`.
    pub constant: f64,
}

impl DecayCurve {
    /// CSV with header `t,fnorm,envelope`, one row per grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,fnorm,envelope\n");
        for k in 0..self.times.len() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_f64(self.times[k]),
                fmt_f64(self.fnorms[k]),
                fmt_f64(self.envelope[k])
            );
        }
        out
    }

    /// Largest `fnorm - envelope` over the grid.
    pub fn max_excess(&self) -> f64 {
        self.fnorms
            .iter()
            .zip(&self.envelope)
            .map(|(a, b)| a - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Shortest round-trip decimal form, switching to exponent notation for
/// very small or large magnitudes.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-5..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Convenience wrapper building the semigroup and report for `spec`.
pub fn decay_curve(spec: &ChainSpec, i: usize, times: &[f64]) -> Result<DecayCurve> {
    let report = crate::spectral::ergodicity_report(spec)?;
    Semigroup::new(spec)?.decay_curve(&report, i, times)
}

/// `points` log-spaced times on `[t_min, t_max]`.
pub fn log_grid(t_min: f64, t_max: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![t_min];
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..points)
        .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

/// `points` equally spaced times on `[t0, t1]`.
pub fn uniform_grid(t0: f64, t1: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![t0];
    }
    (0..points)
        .map(|k| t0 + (t1 - t0) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Rate used to scale default grids and fit windows: the gap for reversible
/// chains, the true decay rate otherwise.
pub fn characteristic_rate(report: &SpectralReport) -> f64 {
    if report.reversible {
        report.gap
    } else {
        report.true_decay_rate
    }
}

/// 60 log-spaced points on `[0.01, 10 / rate]`.
pub fn default_grid(report: &SpectralReport) -> Vec<f64> {
    log_grid(0.01, 10.0 / characteristic_rate(report), 60)
}

/// `[2 / rate, 6 / rate]`.
pub fn default_window(rate_guess: f64) -> (f64, f64) {
    (2.0 / rate_guess, 6.0 / rate_guess)
}

/// [`default_window`] at the characteristic rate, stretched to span at least
/// two periods of the slowest oscillating mode so peak fits see several
/// maxima.
pub fn default_window_for(report: &SpectralReport) -> (f64, f64) {
    let rate = characteristic_rate(report);
    let (a, b) = default_window(rate);
    let omega = report
        .eigenvalues
        .iter()
        .filter(|l| (l.re + report.true_decay_rate).abs() <= 1e-9 * rate.max(1.0))
        .map(|l| l.im.abs())
        .fold(0.0, f64::max);
    if report.reversible || omega <= 1e-9 * rate {
        return (a, b);
    }
    (a, b.max(a + 2.0 * std::f64::consts::TAU / omega))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Peak-envelope when the log-curve oscillates around its regression
    /// line, linear otherwise.
    Auto,
    Linear,
    PeakEnvelope,
}

/// Exponential fit `log fnorm ~ intercept - rate * t`.
#[derive(Debug, Clone, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub window: [f64; 2],
    /// Max absolute deviation of `log fnorm` from the fitted line over the
    /// fitted points.
    pub residual: f64,
    pub mode: FitMode,
    pub points: usize,
}

/// Linear residual above which a log-curve with local maxima of its
/// detrended profile is treated as oscillating.
const OSCILLATION_RESIDUAL: f64 = 1e-6;
const PEAK_ITERATIONS: usize = 50;

/// Least-squares rate fit over `window` (default `[2/rate, 6/rate]` using
/// the curve's envelope rate).
///
/// In peak-envelope mode the log-curve is detrended by the current slope,
/// the 3-point local maxima of the detrended profile are located (refined
/// by a parabola), their upper hull is fitted, and the process repeats
/// until the slope settles. For `log fnorm = -a t + periodic` the maxima
/// repeat once per period on a line of slope `-a`.
pub fn fit_rate(curve: &DecayCurve, window: Option<(f64, f64)>, mode: FitMode) -> Result<RateFit> {
    let (t_min, t_max) = window.unwrap_or_else(|| default_window(curve.rate));
    if !(t_min <= t_max) {
        return Err(ErgoError::InvalidTime(format!(
            "window [{t_min}, {t_max}] is empty"
        )));
    }
    let idx: Vec<usize> = (0..curve.times.len())
        .filter(|&k| curve.times[k] >= t_min && curve.times[k] <= t_max)
        .collect();
    if idx.len() < 5 {
        return Err(ErgoError::InsufficientData(format!(
            "{} grid points in window, need at least 5",
            idx.len()
        )));
    }
    if let Some(&k) = idx.iter().find(|&&k| !(curve.fnorms[k] > NOISE_FLOOR)) {
        return Err(ErgoError::NoiseFloor {
            t: curve.times[k],
            value: curve.fnorms[k],
        });
    }
    let pts: Vec<(f64, f64)> = idx
        .iter()
        .map(|&k| (curve.times[k], curve.fnorms[k].ln()))
        .collect();
    let linear = line_fit(&pts);

    let mode = match mode {
        FitMode::Auto => {
            let above = detrended_maxima(&pts, -linear.0)
                .iter()
                .filter(|(t, l)| *l > linear.1 + linear.0 * t)
                .count();
            if linear.2 > OSCILLATION_RESIDUAL && above >= 2 {
                FitMode::PeakEnvelope
            } else {
                FitMode::Linear
            }
        }
        m => m,
    };

    let (slope, intercept, residual, used) = match mode {
        FitMode::PeakEnvelope => {
            let mut rate = -linear.0;
            let mut fit = None;
            for _ in 0..PEAK_ITERATIONS {
                let hull = envelope_vertices(&upper_hull(&detrended_maxima(&pts, rate)));
                if hull.len() < 2 {
                    return Err(ErgoError::InsufficientData(format!(
                        "{} local maxima in window, need at least 2",
                        hull.len()
                    )));
                }
                let (s, b, r) = line_fit(&hull);
                let done = (-s - rate).abs() <= 1e-13 * rate.abs().max(1e-300);
                rate = -s;
                fit = Some((s, b, r, hull.len()));
                if done {
                    break;
                }
            }
            fit.expect("at least one iteration")
        }
        _ => (linear.0, linear.1, linear.2, pts.len()),
    };
    Ok(RateFit {
        rate: -slope,
        intercept,
        window: [t_min, t_max],
        residual,
        mode,
        points: used,
    })
}

/// Local maxima of `log fnorm + rate * t` over the window, returned in
/// `(t, log fnorm)` coordinates after parabolic refinement.
fn detrended_maxima(pts: &[(f64, f64)], rate: f64) -> Vec<(f64, f64)> {
    let r: Vec<f64> = pts.iter().map(|(t, l)| l + rate * t).collect();
    (1..pts.len().saturating_sub(1))
        .filter(|&k| r[k] > r[k - 1] && r[k] >= r[k + 1])
        .map(|k| {
            let (t0, t1, t2) = (pts[k - 1].0, pts[k].0, pts[k + 1].0);
            let (r0, r1, r2) = (r[k - 1], r[k], r[k + 1]);
            let d01 = (r1 - r0) / (t1 - t0);
            let d12 = (r2 - r1) / (t2 - t1);
            let curv = (d12 - d01) / (t2 - t0);
            let (tv, rv) = if curv < 0.0 {
                // vertex of the interpolating parabola
                let tv = (0.5 * (t0 + t1) - d01 / (2.0 * curv)).clamp(t0, t2);
                (tv, r1 + (tv - t1) * (d01 + curv * (tv - t0)))
            } else {
                (t1, r1)
            };
            (tv, rv - rate * tv)
        })
        .collect()
}

/// Upper concave hull of points sorted by abscissa; collinear points kept.
fn upper_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross > 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    hull
}

/// Vertices of the hull edges whose horizontal span is close to the longest
/// one. Successive dominant peaks are one period apart; edges touching a
/// window boundary or a secondary peak are shorter.
fn envelope_vertices(hull: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if hull.len() < 3 {
        return hull.to_vec();
    }
    let longest = hull.windows(2).map(|w| w[1].0 - w[0].0).fold(0.0, f64::max);
    let mut out: Vec<(f64, f64)> = Vec::new();
    for w in hull.windows(2) {
        if w[1].0 - w[0].0 >= 0.75 * longest {
            if out.last() != Some(&w[0]) {
                out.push(w[0]);
            }
            out.push(w[1]);
        }
    }
    out
}

/// Least-squares line; returns `(slope, intercept, max |residual|)`.
fn line_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let (slope, intercept) = least_squares(points);
    let residual = points
        .iter()
        .map(|(t, y)| (y - (intercept + slope * t)).abs())
        .fold(0.0, f64::max);
    (slope, intercept, residual)
}

/// Returns `(slope, intercept)`.
fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mt)
}

/// `||mu P_t - pi||_f` computed directly and through the dual semigroup.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MuNormCheck {
    pub t: f64,
    pub direct: f64,
    pub via_dual: f64,
    pub residual: f64,
}

/// Evaluates `||mu P_t - pi||_f` from `exp(tQ)` and, independently, as
/// `||f (P*_t h - 1)||_{L^1(pi)}` with `h = mu / pi` and `P*_t` the
/// exponential of the dual generator.
pub fn mu_ft_norm(mu: &[f64], spec: &ChainSpec, t: f64) -> Result<MuNormCheck> {
    let n = spec.n();
    if mu.len() != n {
        return Err(ErgoError::DimensionMismatch {
            expected: n,
            got: mu.len(),
        });
    }
    if mu.iter().any(|m| !m.is_finite() || *m < 0.0)
        || (mu.iter().sum::<f64>() - 1.0).abs() > SUM_TOL
    {
        return Err(ErgoError::InvalidDistribution(
            "mu must be a probability vector".into(),
        ));
    }
    let pi = spec.stationary();
    let f = spec.weight();

    let p = expm(spec.rate_matrix(), t)?;
    let mu_p = DVector::from_column_slice(mu).transpose() * &p.p;
    let signed: Vec<f64> = mu_p.iter().zip(pi.as_slice()).map(|(a, b)| a - b).collect();
    let direct = f_norm(&signed, f);

    let p_star = expm(&dual(spec.rate_matrix(), pi)?, t)?;
    let h = DVector::from_iterator(n, mu.iter().zip(pi.as_slice()).map(|(m, p)| m / p));
    let ph = &p_star.p * h;
    let via_dual = (0..n)
        .map(|i| pi.get(i) * f.get(i) * (ph[i] - 1.0).abs())
        .sum::<f64>();

    Ok(MuNormCheck {
        t,
        direct,
        via_dual,
        residual: (direct - via_dual).abs(),
    })
}

/// Maximum of `objective(A g)` over sign vectors `g in {-1, +1}^n`, walking
/// the cube in Gray-code order. `objective` must be even in its argument.
fn sign_vector_max(a: &DMatrix<f64>, objective: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let n = a.ncols();
    if n > BRUTE_FORCE_MAX_N {
        return Err(ErgoError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX_N,
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let m = a.nrows();
    let mut g = vec![1.0; n];
    let mut y: Vec<f64> = (0..m).map(|i| a.row(i).iter().sum()).collect();
    let mut best = objective(&y);
    // the last sign stays fixed: g and -g give the same value
    for k in 1u64..(1u64 << (n - 1)) {
        let j = k.trailing_zeros() as usize;
        let step = -2.0 * g[j];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi += step * a[(i, j)];
        }
        g[j] = -g[j];
        best = best.max(objective(&y));
    }
    Ok(best)
}

/// `||A||_{L^inf(nu) -> L^1(nu)} = max_g sum_i nu_i |(Ag)_i|` over sign
/// vectors; the maximum of a convex function over the cube sits at a vertex.
pub fn opnorm_inf_to_1(a: &DMatrix<f64>, nu: &[f64]) -> Result<f64> {
    sign_vector_max(a, |y| y.iter().zip(nu).map(|(v, w)| w * v.abs()).sum())
}

/// `||A||^2_{L^inf(nu) -> L^2(nu)} = max_g sum_i nu_i (Ag)_i^2` over sign
/// vectors.
pub fn opnorm_inf_to_2_squared(a: &DMatrix<f64>, nu: &[f64]) -> Result<f64> {
    sign_vector_max(a, |y| y.iter().zip(nu).map(|(v, w)| w * v * v).sum())
}

/// `||g||_{L^2(w)}` for a positive weight vector `w`.
pub fn weighted_l2(g: &[f64], w: &[f64]) -> f64 {
    g.iter().zip(w).map(|(x, p)| p * x * x).sum::<f64>().sqrt()
}

/// `pi P_t`, used to check stationarity.
pub fn propagate(dist: &Distribution, snapshot: &SemigroupSnapshot) -> Vec<f64> {
    let row = DVector::from_column_slice(dist.as_slice()).transpose() * &snapshot.p;
    row.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{build_birth_death, build_example21, build_example22};
    use crate::spectral::ergodicity_report;

    fn two_state(a: f64, b: f64) -> ChainSpec {
        let q = RateMatrix::from_rows(&[vec![-a, a], vec![b, -b]]).unwrap();
        ChainSpec::new("two", q, WeightFunction::ones(2), None).unwrap()
    }

    #[test]
    fn identity_at_zero() {
        let spec = build_example22(None).unwrap();
        let p = expm(spec.rate_matrix(), 0.0).unwrap();
        assert!((p.p - DMatrix::identity(3, 3)).amax() == 0.0);
    }

    #[test]
    fn two_state_closed_form() {
        // P_t(0,0) = b/(a+b) + a/(a+b) e^{-(a+b)t}
        for (a, b, t) in [(1.0, 1.0, 1.0), (0.3, 2.0, 0.7), (4.0, 1.5, 2.5)] {
            let spec = two_state(a, b);
            let want = b / (a + b) + a / (a + b) * (-(a + b) * t).exp();
            let pade = expm(spec.rate_matrix(), t).unwrap();
            assert!((pade.p[(0, 0)] - want).abs() <= 1e-14);
            let sg = Semigroup::with_method(&spec, ExpmMethod::Spectral).unwrap();
            assert!((sg.snapshot(t).unwrap().p[(0, 0)] - want).abs() <= 1e-14);
            let sg = Semigroup::with_method(&spec, ExpmMethod::PadeScalingSquaring).unwrap();
            let dev = a / (a + b) * (-(a + b) * t).exp();
            assert!((sg.deviation(t).unwrap()[(0, 0)] - dev).abs() <= 1e-14 * dev.max(1e-2));
        }
        let spec = two_state(1.0, 1.0);
        let p = expm(spec.rate_matrix(), 1.0).unwrap();
        assert!((p.p[(0, 0)] - (0.5 + 0.5 * (-2.0_f64).exp())).abs() <= 1e-15);
    }

    #[test]
    fn pade_matches_nalgebra_exp() {
        let spec = build_example22(None).unwrap();
        for t in [0.1, 1.0, 7.5, 40.0] {
            let a = spec.rate_matrix().matrix() * t;
            let ours = pade_expm(&a).unwrap();
            let theirs = a.exp();
            assert!((ours - theirs).amax() <= 1e-12);
        }
    }

    #[test]
    fn deflated_squaring_keeps_relative_accuracy() {
        let spec = build_birth_death(&[1.0, 2.0, 0.5], &[1.5, 1.0, 3.0], None).unwrap();
        let spectral = Semigroup::with_method(&spec, ExpmMethod::Spectral).unwrap();
        let pade = Semigroup::with_method(&spec, ExpmMethod::PadeScalingSquaring).unwrap();
        for t in [0.5, 5.0, 20.0, 40.0] {
            let a = spectral.deviation(t).unwrap();
            let b = pade.deviation(t).unwrap();
            let scale = a.amax();
            assert!((a - b).amax() <= 1e-9 * scale, "t = {t}");
        }
    }

    #[test]
    fn example22_limit_matrix() {
        let spec = build_example22(None).unwrap();
        let p = expm(spec.rate_matrix(), 40.0).unwrap();
        for i in 0..3 {
            for (j, want) in [0.5, 0.25, 0.25].into_iter().enumerate() {
                assert!((p.p[(i, j)] - want).abs() <= 1e-9);
            }
        }
        assert!(!p.has_negative_entries());
    }

    #[test]
    fn f_norm_by_hand() {
        let f1 = WeightFunction::ones(2);
        assert_eq!(f_norm(&[0.0, 0.0], &f1), 0.0);
        assert_eq!(f_norm(&[0.5, -0.5], &f1), 1.0);
        let pi = [0.5, 0.25, 0.25];
        let beta = 3.0;
        let f = WeightFunction::new(vec![1.0, beta, beta]).unwrap();
        let nu: Vec<f64> = (0..3)
            .map(|j| if j == 0 { 1.0 } else { 0.0 } - pi[j])
            .collect();
        assert!((f_norm(&nu, &f) - (1.0 + beta) * (1.0 - pi[0])).abs() <= 1e-15);
    }

    #[test]
    fn curve_starts_at_point_mass_distance() {
        let pi = Distribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let spec = build_example21(&pi, 2.0).unwrap();
        let curve = decay_curve(&spec, 1, &[0.0, 0.5, 1.0]).unwrap();
        let want = 0.2 * 1.0 + 0.7 * 2.0 + 0.5 * 2.0;
        assert!((curve.fnorms[0] - want).abs() <= 1e-14);
        // complete-graph chain: P_t - Pi = e^{-t} (I - Pi)
        assert!((curve.fnorms[2] - want * (-1.0_f64).exp()).abs() <= 1e-14);
        let csv = curve.to_csv();
        assert!(csv.starts_with("t,fnorm,envelope\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn total_variation_is_monotone_for_reversible_chain() {
        let spec = build_birth_death(&[1.0, 0.3, 2.0, 1.0], &[0.5, 1.0, 1.0, 4.0], None).unwrap();
        let report = ergodicity_report(&spec).unwrap();
        let grid = default_grid(&report);
        let sg = Semigroup::new(&spec).unwrap();
        for i in 0..spec.n() {
            let c = sg.decay_curve(&report, i, &grid).unwrap();
            assert!(c.fnorms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn fit_recovers_pure_exponential() {
        let times = uniform_grid(0.0, 5.0, 51);
        let curve = DecayCurve {
            state: 0,
            fnorms: times.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect(),
            envelope: times.iter().map(|t| 3.0 * (-2.0 * t).exp()).collect(),
            times,
            rate: 2.0,
            constant: 3.0,
        };
        let fit = fit_rate(&curve, Some((0.5, 4.5)), FitMode::Auto).unwrap();
        assert_eq!(fit.mode, FitMode::Linear);
        assert!((fit.rate - 2.0).abs() <= 1e-10 * 2.0);
        assert!(fit.residual <= 1e-10);
        assert!((fit.intercept - 3.0_f64.ln()).abs() <= 1e-10);
        // default window [1, 3]
        let fit = fit_rate(&curve, None, FitMode::Linear).unwrap();
        assert_eq!(fit.window, [1.0, 3.0]);
    }

    #[test]
    fn fit_errors() {
        let times = uniform_grid(0.0, 40.0, 41);
        let curve = DecayCurve {
            state: 0,
            fnorms: times.iter().map(|t| (-t).exp()).collect(),
            envelope: vec![0.0; 41],
            times,
            rate: 1.0,
            constant: 1.0,
        };
        let err = fit_rate(&curve, Some((0.0, 3.0)), FitMode::Linear).unwrap_err();
        assert_eq!(err.kind(), "InsufficientData");
        let err = fit_rate(&curve, Some((20.0, 40.0)), FitMode::Linear).unwrap_err();
        assert_eq!(err.kind(), "NoiseFloor");
        let err = fit_rate(&curve, Some((1.0, 10.0)), FitMode::PeakEnvelope).unwrap_err();
        assert_eq!(err.kind(), "InsufficientData");
    }

    #[test]
    fn mu_norm_routes_agree() {
        let spec = build_example22(None).unwrap();
        let c = mu_ft_norm(&[1.0, 0.0, 0.0], &spec, 1.0).unwrap();
        assert!(c.residual <= 1e-10);
        let pi = spec.stationary().as_slice().to_vec();
        let c = mu_ft_norm(&pi, &spec, 0.8).unwrap();
        assert!(c.direct <= 1e-12 && c.via_dual <= 1e-12);
        let sg = Semigroup::new(&spec).unwrap();
        let c = mu_ft_norm(&[0.0, 1.0, 0.0], &spec, 2.0).unwrap();
        assert!((c.direct - sg.fnorm(1, 2.0).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn brute_force_norms() {
        let z = DMatrix::zeros(4, 4);
        let nu = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(opnorm_inf_to_1(&z, &nu).unwrap(), 0.0);
        let id = DMatrix::identity(4, 4);
        assert!((opnorm_inf_to_1(&id, &nu).unwrap() - 1.0).abs() <= 1e-15);
        assert!((opnorm_inf_to_2_squared(&id, &nu).unwrap() - 1.0).abs() <= 1e-15);
        let big = DMatrix::zeros(21, 21);
        assert_eq!(
            opnorm_inf_to_1(&big, &[1.0; 21]).unwrap_err(),
            ErgoError::TooLarge { n: 21, max: 20 }
        );
    }

    #[test]
    fn gray_code_matches_direct_enumeration() {
        let a = DMatrix::from_fn(5, 5, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * i as f64
        });
        let nu = [0.3, 0.1, 0.25, 0.2, 0.15];
        let mut best = 0.0_f64;
        for mask in 0u32..32 {
            let g: Vec<f64> = (0..5)
                .map(|j| if mask >> j & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let y = &a * DVector::from_vec(g);
            best = best.max(y.iter().zip(&nu).map(|(v, w)| w * v.abs()).sum());
        }
        assert!((opnorm_inf_to_1(&a, &nu).unwrap() - best).abs() <= 1e-12);
    }

    #[test]
    fn invalid_times() {
        let spec = two_state(1.0, 2.0);
        assert_eq!(
            expm(spec.rate_matrix(), -1.0).unwrap_err().kind(),
            "InvalidTime"
        );
        assert_eq!(
            decay_curve(&spec, 0, &[1.0, 0.5]).unwrap_err().kind(),
            "InvalidTime"
        );
        assert_eq!(
            decay_curve(&spec, 5, &[1.0]).unwrap_err().kind(),
            "StateOutOfRange"
        );
    }
}
