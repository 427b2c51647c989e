//! Property battery over the built-in chain families.
//!
//! Each check reports a nonnegative residual and the tolerance it must stay
//! under. Groups can be selected by name (`chain`, `reversibility`,
//! `spectral`, `semigroup`, `lemma31`, `lemma32`, `lemma33`, `lemma34`,
//! `hfunction`, `drift`, `fit`).

use serde::Serialize;

use crate::chain::{
    build_birth_death, build_example21, build_example22, dual, is_reversible_with, reversibilize,
    ChainSpec, Distribution, RateMatrix, Validation, WeightFunction,
};
use crate::drift::drift_with;
use crate::error::{ErgoError, Result};
use crate::htransform::{check_lemma31, check_lemma32, check_lemma33, h_function, transform};
use crate::semigroup::{
    characteristic_rate, default_grid, default_window, expm, fit_rate, mu_ft_norm, propagate,
    uniform_grid, ExpmMethod, FitMode, Semigroup,
};
use crate::spectral::{ergodicity_report_with, gap_with, true_decay_rate_with};
use crate::tol::{Tolerances, BRUTE_FORCE_MAX_N};

pub const GROUPS: [&str; 11] = [
    "chain",
    "reversibility",
    "spectral",
    "semigroup",
    "lemma31",
    "lemma32",
    "lemma33",
    "lemma34",
    "hfunction",
    "drift",
    "fit",
];

/// Deliberate defects used to exercise the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Adds an asymmetric rate to the birth-death chain, breaking detailed
    /// balance while keeping the chain valid.
    AsymmetricPerturbation,
}

impl std::str::FromStr for Fault {
    type Err = ErgoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asymmetric" | "asymmetric_perturbation" => Ok(Fault::AsymmetricPerturbation),
            other => Err(ErgoError::Parse(format!("unknown fault '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub only: Option<Vec<String>>,
    /// State count of the sized families.
    pub n: usize,
    pub fault: Option<Fault>,
    pub tol: Tolerances,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            only: None,
            n: 5,
            fault: None,
            tol: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub group: String,
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub n: usize,
    pub fault: Option<Fault>,
    pub checks: Vec<CheckResult>,
    pub passed: usize,
    pub failed: usize,
    pub first_failure: Option<String>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }

    /// Fixed-width table, one line per check.
    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<4} {:<12} {:<44} {:>12.3e} <= {:.0e}\n",
                if c.pass { "ok" } else { "FAIL" },
                c.group,
                c.name,
                c.residual,
                c.tol
            ));
        }
        out
    }
}

struct Battery {
    checks: Vec<CheckResult>,
}

impl Battery {
    fn push(&mut self, group: &str, name: impl Into<String>, residual: f64, tol: f64) {
        self.checks.push(CheckResult {
            group: group.into(),
            name: name.into(),
            residual,
            tol,
            // NaN residuals fail
            pass: residual <= tol,
        });
    }
}

struct Families {
    example21: ChainSpec,
    birth_death: ChainSpec,
    example22: ChainSpec,
}

impl Families {
    fn reversible(&self) -> [&ChainSpec; 2] {
        [&self.example21, &self.birth_death]
    }

    fn all(&self) -> [&ChainSpec; 3] {
        [&self.example21, &self.birth_death, &self.example22]
    }
}

fn families(n: usize, fault: Option<Fault>, tol: &Tolerances) -> Result<Families> {
    let weights: Vec<f64> = (0..n).map(|k| 1.0 + 0.5 * ((k + 1) as f64).sin()).collect();
    let example21 = build_example21(&Distribution::from_weights(&weights)?, 2.0)?;
    let birth: Vec<f64> = (0..n - 1)
        .map(|k| 1.0 + 0.4 * (k as f64 * 1.3).cos())
        .collect();
    let death: Vec<f64> = (0..n - 1)
        .map(|k| 1.2 + 0.3 * (k as f64 * 0.7).sin())
        .collect();
    let f = WeightFunction::new((0..n).map(|k| 1.0 + (k % 3) as f64).collect())?;
    let mut birth_death = build_birth_death(&birth, &death, Some(f))?;
    if fault == Some(Fault::AsymmetricPerturbation) {
        let mut m = birth_death.rate_matrix().matrix().clone();
        m[(0, n - 1)] += 0.5;
        let q = RateMatrix::validate(m, Validation::Repair, tol)?;
        birth_death = ChainSpec::with_tolerances(
            birth_death.label.clone(),
            q,
            birth_death.weight().clone(),
            None,
            tol,
        )?;
    }
    let example22 = build_example22(Some(WeightFunction::new(vec![1.0, 2.0, 1.5])?))?;
    Ok(Families {
        example21,
        birth_death,
        example22,
    })
}

pub fn run_battery(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if let Some(only) = &cfg.only {
        if let Some(bad) = only.iter().find(|g| !GROUPS.contains(&g.as_str())) {
            return Err(ErgoError::Parse(format!(
                "unknown check group '{bad}' (expected one of {})",
                GROUPS.join(", ")
            )));
        }
    }
    if cfg.n < 3 || cfg.n > BRUTE_FORCE_MAX_N {
        return Err(ErgoError::Parse(format!(
            "n must lie in 3..={BRUTE_FORCE_MAX_N}, got {}",
            cfg.n
        )));
    }
    let tol = &cfg.tol;
    let fam = families(cfg.n, cfg.fault, tol)?;
    let wanted = |g: &str| cfg.only.as_ref().is_none_or(|o| o.iter().any(|x| x == g));
    let mut b = Battery { checks: Vec::new() };

    if wanted("chain") {
        for spec in fam.all() {
            let q = spec.rate_matrix();
            let rows = q.matrix().column_sum().amax() / q.max_rate();
            b.push("chain", format!("row_sums[{}]", spec.label), rows, tol.row);
            let res = crate::chain::stationary_residual(q, spec.stationary()) / q.max_rate();
            b.push(
                "chain",
                format!("stationary[{}]", spec.label),
                res,
                tol.stationary,
            );
            let dd = dual(&dual(q, spec.stationary())?, spec.stationary())?;
            let inv = (dd.matrix() - q.matrix()).amax() / q.max_rate();
            b.push(
                "chain",
                format!("dual_involution[{}]", spec.label),
                inv,
                1e-12,
            );
            let bar = reversibilize(q, spec.stationary())?;
            let r = is_reversible_with(&bar, spec.stationary(), tol);
            b.push(
                "chain",
                format!("reversibilize[{}]", spec.label),
                r.max_violation / r.scale,
                tol.reversibility,
            );
        }
    }

    if wanted("reversibility") {
        for spec in fam.reversible() {
            let r = is_reversible_with(spec.rate_matrix(), spec.stationary(), tol);
            b.push(
                "reversibility",
                format!("detailed_balance[{}]", spec.label),
                r.max_violation / r.scale,
                tol.reversibility,
            );
        }
    }

    if wanted("spectral") {
        let g = gap_with(fam.example21.rate_matrix(), fam.example21.stationary(), tol)?;
        b.push("spectral", "example21_gap", (g - 1.0).abs(), 1e-9);
        let q22 = fam.example22.rate_matrix();
        let g = gap_with(q22, fam.example22.stationary(), tol)?;
        b.push("spectral", "example22_gap", (g - 1.0).abs(), 1e-9);
        let r = true_decay_rate_with(q22, tol)?;
        b.push("spectral", "example22_decay_rate", (r - 1.25).abs(), 1e-9);
        for spec in fam.all() {
            let (q, pi) = (spec.rate_matrix(), spec.stationary());
            let g = gap_with(q, pi, tol)?;
            let gd = gap_with(&dual(q, pi)?, pi, tol)?;
            b.push(
                "spectral",
                format!("dual_gap[{}]", spec.label),
                (g - gd).abs(),
                1e-9,
            );
            let r = true_decay_rate_with(q, tol)?;
            b.push(
                "spectral",
                format!("decay_ge_gap[{}]", spec.label),
                (g - r).max(0.0),
                1e-9,
            );
        }
    }

    if wanted("semigroup") {
        for spec in fam.all() {
            let q = spec.rate_matrix();
            let (t, s) = (0.7, 1.3);
            let ck = &expm(q, t)?.p * &expm(q, s)?.p - &expm(q, t + s)?.p;
            b.push(
                "semigroup",
                format!("chapman_kolmogorov[{}]", spec.label),
                ck.amax(),
                1e-8,
            );
            let mut worst = 0.0_f64;
            for t in [0.1, 1.0, 5.0] {
                let row = propagate(spec.stationary(), &expm(q, t)?);
                for (a, p) in row.iter().zip(spec.stationary().as_slice()) {
                    worst = worst.max((a - p).abs());
                }
            }
            b.push(
                "semigroup",
                format!("stationarity[{}]", spec.label),
                worst,
                1e-10,
            );
        }
        for spec in fam.reversible() {
            let report = ergodicity_report_with(spec, tol)?;
            if !report.reversible {
                b.push(
                    "semigroup",
                    format!("envelope[{}]", spec.label),
                    f64::INFINITY,
                    1e-9,
                );
                continue;
            }
            let sg = Semigroup::new(spec)?;
            let grid = default_grid(&report);
            let mut worst = f64::NEG_INFINITY;
            for i in 0..spec.n() {
                worst = worst.max(sg.decay_curve(&report, i, &grid)?.max_excess());
            }
            b.push(
                "semigroup",
                format!("envelope[{}]", spec.label),
                worst.max(0.0),
                1e-9,
            );
        }
    }

    let lemma_chains: Vec<&ChainSpec> = fam.reversible().into_iter().collect();

    if wanted("lemma31") {
        for spec in &lemma_chains {
            let tr = transform(spec)?;
            let n = spec.n();
            let g1: Vec<f64> = (0..n).map(|k| (k as f64 * 0.9).sin()).collect();
            let g2: Vec<f64> = (0..n).map(|k| 1.0 - (k as f64 * 0.4).cos()).collect();
            let r = check_lemma31(&tr, 0.7, 0.3, &g1, &g2)?;
            b.push(
                "lemma31",
                format!("residuals[{}]", spec.label),
                r.max(),
                1e-9,
            );
        }
    }

    if wanted("lemma32") {
        for spec in &lemma_chains {
            let tr = transform(spec)?;
            for t in [0.0, 0.5, 1.0] {
                let c = check_lemma32(&tr, t, 1e-9)?;
                b.push(
                    "lemma32",
                    format!("t={t}[{}]", spec.label),
                    c.residual,
                    1e-9,
                );
            }
        }
    }

    if wanted("lemma33") {
        for spec in &lemma_chains {
            let tr = transform(spec)?;
            for t in [0.0, 0.5, 2.0] {
                let c = check_lemma33(&tr, t, 1e-9)?;
                b.push(
                    "lemma33",
                    format!("t={t}[{}]", spec.label),
                    c.residual,
                    1e-9,
                );
            }
        }
    }

    if wanted("lemma34") {
        for spec in fam.all() {
            let n = spec.n();
            let mut worst = 0.0_f64;
            let mut mu = vec![0.0; n];
            mu[0] = 1.0;
            for t in [0.0, 0.3, 1.0, 4.0] {
                worst = worst.max(mu_ft_norm(&mu, spec, t)?.residual);
            }
            let spread =
                Distribution::from_weights(&(0..n).map(|k| (k + 1) as f64).collect::<Vec<_>>())?;
            worst = worst.max(mu_ft_norm(spread.as_slice(), spec, 0.8)?.residual);
            b.push(
                "lemma34",
                format!("dual_identity[{}]", spec.label),
                worst,
                1e-10,
            );
        }
    }

    if wanted("hfunction") {
        for spec in fam.all() {
            let mut mean = 0.0_f64;
            let mut closed = 0.0_f64;
            for i in 0..spec.n() {
                for s in [0.25, 1.0] {
                    let h = h_function(spec, i, s)?;
                    mean = mean.max(h.projection_residual);
                    if let Some(c) = h.closed_form {
                        closed = closed.max((c - h.norm_sq).abs());
                    }
                }
            }
            b.push(
                "hfunction",
                format!("mean_zero[{}]", spec.label),
                mean,
                1e-12,
            );
            if !std::ptr::eq(spec, &fam.example22) {
                b.push(
                    "hfunction",
                    format!("closed_form[{}]", spec.label),
                    closed,
                    1e-10,
                );
            }
        }
    }

    if wanted("drift") {
        let spec = &fam.example21;
        let r = drift_with(spec, &[0], tol)?;
        let p0 = spec.stationary().get(0);
        let beta = spec.weight().get(1);
        let c = p0 * (1.0 - 1.0 / beta);
        b.push("drift", "example21_c_max", (r.c_max - c).abs(), 1e-12);
        b.push(
            "drift",
            "example21_b_min",
            (r.b_min - (beta * (1.0 - p0) + p0 + c - 1.0)).abs(),
            1e-12,
        );
        b.push("drift", "c_max_below_gap", (r.c_max - r.gap).max(0.0), 0.0);
    }

    if wanted("fit") {
        let spec = &fam.example21;
        let report = ergodicity_report_with(spec, tol)?;
        let rate = characteristic_rate(&report);
        let (a, z) = default_window(rate);
        let sg = Semigroup::with_method(spec, ExpmMethod::PadeScalingSquaring)?;
        let curve = sg.decay_curve(&report, 1, &uniform_grid(0.0, z, 121))?;
        let fit = fit_rate(&curve, Some((a, z)), FitMode::Auto)?;
        b.push("fit", "example21_rate", (fit.rate - 1.0).abs(), 1e-6);

        let spec = &fam.example22;
        let report = ergodicity_report_with(spec, tol)?;
        let sg = Semigroup::new(spec)?;
        let curve = sg.decay_curve(&report, 0, &uniform_grid(0.0, 20.0, 801))?;
        let fit = fit_rate(&curve, Some((2.0, 20.0)), FitMode::PeakEnvelope)?;
        b.push("fit", "example22_peak_rate", (fit.rate - 1.25).abs(), 1e-3);
    }

    let failed = b.checks.iter().filter(|c| !c.pass).count();
    let first_failure = b
        .checks
        .iter()
        .find(|c| !c.pass)
        .map(|c| format!("{}:{}", c.group, c.name));
    Ok(VerifyReport {
        n: cfg.n,
        fault: cfg.fault,
        passed: b.checks.len() - failed,
        failed,
        first_failure,
        checks: b.checks,
    })
}
