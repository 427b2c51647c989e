//! Doob h-transform of the semigroup by the weight function `f`.
//!
//! `P^f_t g = (1/f) P_t(f g)`, `Q^f g = (1/f) Q(f g)` and
//! `pi^f g = (1/f) pi(f g)`, all acting on functions in `L^2(nu)` with the
//! unnormalized reference measure `nu_i = f_i^2 pi_i`. `P^f_t` is not a
//! Markov semigroup; nothing here assumes its rows sum to one.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::chain::{is_reversible, ChainSpec};
use crate::error::{ErgoError, Result};
use crate::semigroup::{opnorm_inf_to_1, opnorm_inf_to_2_squared, weighted_l2, Semigroup};

/// The h-transformed objects of a chain.
#[derive(Debug, Clone)]
pub struct TransformedSemigroup {
    base: ChainSpec,
    semigroup: Semigroup,
    nu: Vec<f64>,
    generator: DMatrix<f64>,
    projection: DMatrix<f64>,
}

impl TransformedSemigroup {
    pub fn new(spec: &ChainSpec) -> Result<Self> {
        let n = spec.n();
        let f = spec.weight().as_slice();
        let pi = spec.stationary().as_slice();
        let q = spec.rate_matrix();
        let nu = (0..n).map(|i| f[i] * f[i] * pi[i]).collect();
        let generator = DMatrix::from_fn(n, n, |i, j| q.rate(i, j) * f[j] / f[i]);
        let projection = DMatrix::from_fn(n, n, |i, j| pi[j] * f[j] / f[i]);
        Ok(Self {
            base: spec.clone(),
            semigroup: Semigroup::new(spec)?,
            nu,
            generator,
            projection,
        })
    }

    pub fn base(&self) -> &ChainSpec {
        &self.base
    }

    /// `nu_i = f_i^2 pi_i`; total mass `pi(f^2)`.
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn is_reversible(&self) -> bool {
        is_reversible(self.base.rate_matrix(), self.base.stationary()).reversible
    }

    /// Matrix of `Q^f`: `diag(1/f) Q diag(f)`.
    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Matrix of `pi^f`: entries `pi_j f_j / f_i`.
    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// Matrix of `P^f_t = diag(1/f) exp(tQ) diag(f)`.
    pub fn operator(&self, t: f64) -> Result<DMatrix<f64>> {
        let p = self.semigroup.snapshot(t)?.p;
        Ok(self.conjugate(p))
    }

    /// Matrix of `P^f_t - pi^f = diag(1/f) (P_t - Pi) diag(f)`, evaluated
    /// without cancellation.
    pub fn centered_operator(&self, t: f64) -> Result<DMatrix<f64>> {
        let d = self.semigroup.deviation(t)?;
        Ok(self.conjugate(d))
    }

    fn conjugate(&self, mut m: DMatrix<f64>) -> DMatrix<f64> {
        let f = self.base.weight().as_slice();
        let n = f.len();
        for j in 0..n {
            for i in 0..n {
                m[(i, j)] *= f[j] / f[i];
            }
        }
        m
    }

    /// `(Q^f g)_i = (1/f_i) sum_j q_ij f_j g_j`, evaluated in that order.
    pub fn apply_generator(&self, g: &[f64]) -> Vec<f64> {
        let f = self.base.weight().as_slice();
        let fg: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
        self.base
            .rate_matrix()
            .apply(&fg)
            .iter()
            .zip(f)
            .map(|(v, fi)| v / fi)
            .collect()
    }

    /// `(pi^f g)_i = (1/f_i) sum_j pi_j f_j g_j`.
    pub fn apply_projection(&self, g: &[f64]) -> Vec<f64> {
        let f = self.base.weight().as_slice();
        let pi = self.base.stationary().as_slice();
        let s: f64 = (0..f.len()).map(|j| pi[j] * f[j] * g[j]).sum();
        f.iter().map(|fi| s / fi).collect()
    }

    pub fn apply(&self, t: f64, g: &[f64]) -> Result<Vec<f64>> {
        let v = self.operator(t)? * DVector::from_column_slice(g);
        Ok(v.iter().copied().collect())
    }

    /// `(a, b)_nu`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.nu
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    pub fn norm(&self, g: &[f64]) -> f64 {
        weighted_l2(g, &self.nu)
    }
}

pub fn transform(spec: &ChainSpec) -> Result<TransformedSemigroup> {
    TransformedSemigroup::new(spec)
}

/// Residuals of the semigroup, self-adjointness and projection identities.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Lemma31Residuals {
    /// `|P^f_{t+s} g1 - P^f_t P^f_s g1|_inf`.
    pub semigroup: f64,
    /// `|(P^f_t g1, g2)_nu - (g1, P^f_t g2)_nu|`.
    pub conjugacy: f64,
    /// `|(pi^f g1, g2)_nu - (g1, pi^f g2)_nu|`.
    pub projection_conjugacy: f64,
    /// Max of `|pi^f P^f_t g1 - pi^f g1|_inf` and `|P^f_t pi^f g1 - pi^f g1|_inf`.
    pub projection: f64,
}

impl Lemma31Residuals {
    pub fn max(&self) -> f64 {
        self.semigroup
            .max(self.conjugacy)
            .max(self.projection_conjugacy)
            .max(self.projection)
    }
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn check_lemma31(
    tr: &TransformedSemigroup,
    t: f64,
    s: f64,
    g1: &[f64],
    g2: &[f64],
) -> Result<Lemma31Residuals> {
    let n = tr.base.n();
    for g in [g1, g2] {
        if g.len() != n {
            return Err(ErgoError::DimensionMismatch {
                expected: n,
                got: g.len(),
            });
        }
    }
    let pts = tr.apply(t + s, g1)?;
    let ps_g1 = tr.apply(s, g1)?;
    let pt_ps = tr.apply(t, &ps_g1)?;
    let semigroup = sup_diff(&pts, &pt_ps);

    let pt_g1 = tr.apply(t, g1)?;
    let pt_g2 = tr.apply(t, g2)?;
    let conjugacy = (tr.inner(&pt_g1, g2) - tr.inner(g1, &pt_g2)).abs();

    let pf_g1 = tr.apply_projection(g1);
    let pf_g2 = tr.apply_projection(g2);
    let projection_conjugacy = (tr.inner(&pf_g1, g2) - tr.inner(g1, &pf_g2)).abs();

    let a = tr.apply_projection(&pt_g1);
    let b = tr.apply(t, &pf_g1)?;
    let projection = sup_diff(&a, &pf_g1).max(sup_diff(&b, &pf_g1));

    Ok(Lemma31Residuals {
        semigroup,
        conjugacy,
        projection_conjugacy,
        projection,
    })
}

/// Two sides of a numerical identity or inequality, serialized as
/// `{lemma, inputs, lhs, rhs, residual, pass}`.
#[derive(Debug, Clone, Serialize)]
pub struct LemmaCheck {
    pub lemma: String,
    pub inputs: serde_json::Value,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub pass: bool,
}

/// Compares `||P^f_t - pi^f||^2_{L^inf(nu) -> L^2(nu)}` with
/// `||P^f_{2t} - pi^f||_{L^inf(nu) -> L^1(nu)}`, both by sign-vector
/// enumeration. Equal for reversible base chains.
pub fn check_lemma32(tr: &TransformedSemigroup, t: f64, tol: f64) -> Result<LemmaCheck> {
    let lhs = opnorm_inf_to_2_squared(&tr.centered_operator(t)?, &tr.nu)?;
    let rhs = opnorm_inf_to_1(&tr.centered_operator(2.0 * t)?, &tr.nu)?;
    let residual = (lhs - rhs).abs();
    Ok(LemmaCheck {
        lemma: "lemma32".into(),
        inputs: serde_json::json!({ "label": tr.base.label, "n": tr.base.n(), "t": t }),
        lhs,
        rhs,
        residual,
        pass: residual <= tol,
    })
}

/// Compares `||P^f_t - pi^f||_{L^inf(nu) -> L^1(nu)}` with
/// `sum_i pi_i f_i ||P_t(i, .) - pi||_f`; the first never exceeds the second.
pub fn check_lemma33(tr: &TransformedSemigroup, t: f64, tol: f64) -> Result<LemmaCheck> {
    let lhs = opnorm_inf_to_1(&tr.centered_operator(t)?, &tr.nu)?;
    let pi = tr.base.stationary();
    let f = tr.base.weight();
    let mut rhs = 0.0;
    for i in 0..tr.base.n() {
        rhs += pi.get(i) * f.get(i) * tr.semigroup.fnorm(i, t)?;
    }
    let residual = (lhs - rhs).max(0.0);
    Ok(LemmaCheck {
        lemma: "lemma33".into(),
        inputs: serde_json::json!({ "label": tr.base.label, "n": tr.base.n(), "t": t }),
        lhs,
        rhs,
        residual,
        pass: lhs <= rhs + tol,
    })
}

/// `h_s(i, j) = P_s(i, j) / (f_j pi_j) - 1 / f_j` and its `L^2(nu)` norm.
#[derive(Debug, Clone, Serialize)]
pub struct HFunction {
    pub s: f64,
    pub state: usize,
    pub values: Vec<f64>,
    /// `||h_s(i, .)||^2_{L^2(nu)}` summed directly.
    pub norm_sq: f64,
    /// `P_{2s}(i, i) / pi_i - 1`, only valid for reversible chains.
    pub closed_form: Option<f64>,
    /// `sup_j |(pi^f h_s(i, .))_j|`, zero up to rounding.
    pub projection_residual: f64,
}

pub fn h_function(spec: &ChainSpec, i: usize, s: f64) -> Result<HFunction> {
    spec.check_state(i)?;
    if !(s.is_finite() && s > 0.0) {
        return Err(ErgoError::InvalidTime(format!("s = {s} must be > 0")));
    }
    let tr = TransformedSemigroup::new(spec)?;
    let f = spec.weight().as_slice();
    let pi = spec.stationary().as_slice();
    // P_s(i, j) / pi_j - 1 from the deviation keeps precision for large s
    let dev = tr.semigroup.row_deviation(i, s)?;
    let values: Vec<f64> = (0..spec.n()).map(|j| dev[j] / (pi[j] * f[j])).collect();
    let norm_sq = tr.inner(&values, &values);
    let closed_form = if tr.is_reversible() {
        Some(tr.semigroup.row_deviation(i, 2.0 * s)?[i] / pi[i])
    } else {
        None
    };
    let projection_residual = tr
        .apply_projection(&values)
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    Ok(HFunction {
        s,
        state: i,
        values,
        norm_sq,
        closed_form,
        projection_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{
        build_birth_death, build_example21, build_example22, Distribution, WeightFunction,
    };
    use crate::spectral::gap;

    fn example21(n: usize, beta: f64) -> ChainSpec {
        let w: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.7).sin().abs()).collect();
        build_example21(&Distribution::from_weights(&w).unwrap(), beta).unwrap()
    }

    #[test]
    fn unit_weight_is_identity_transform() {
        let spec = build_birth_death(&[1.0, 2.0], &[0.5, 1.5], None).unwrap();
        let tr = transform(&spec).unwrap();
        assert_eq!(tr.nu(), spec.stationary().as_slice());
        let p = Semigroup::new(&spec).unwrap().snapshot(0.6).unwrap().p;
        assert!((tr.operator(0.6).unwrap() - p).amax() <= 1e-12);
        let g = [0.3, -1.0, 2.0];
        let pg = tr.apply_projection(&g);
        let mean = spec.stationary().mean(&g);
        assert!(pg.iter().all(|v| (v - mean).abs() <= 1e-15));
    }

    #[test]
    fn nu_for_example21() {
        let spec = example21(4, 2.0);
        let tr = transform(&spec).unwrap();
        let pi = spec.stationary();
        assert_eq!(tr.nu()[0], pi.get(0));
        for i in 1..4 {
            assert!((tr.nu()[i] - 4.0 * pi.get(i)).abs() <= 1e-15);
        }
    }

    #[test]
    fn generator_two_evaluation_orders() {
        let spec =
            build_example22(Some(WeightFunction::new(vec![1.0, 2.5, 1.5]).unwrap())).unwrap();
        let tr = transform(&spec).unwrap();
        for k in 0..10 {
            let g: Vec<f64> = (0..3).map(|j| ((k * 3 + j) as f64 * 1.3).cos()).collect();
            let direct = tr.apply_generator(&g);
            let via_matrix = tr.generator() * DVector::from_column_slice(&g);
            for j in 0..3 {
                assert!((direct[j] - via_matrix[j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn conjugation_matches_exp_of_transformed_generator() {
        let spec =
            build_example22(Some(WeightFunction::new(vec![1.0, 3.0, 2.0]).unwrap())).unwrap();
        let tr = transform(&spec).unwrap();
        for t in [0.2, 1.0, 3.0] {
            let a = tr.operator(t).unwrap();
            let b = crate::semigroup::pade_expm(&(tr.generator() * t)).unwrap();
            assert!((a - b).amax() <= 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let spec = example21(5, 3.0);
        let tr = transform(&spec).unwrap();
        let g = [1.0, -2.0, 0.5, 3.0, 0.0];
        let once = tr.apply_projection(&g);
        let twice = tr.apply_projection(&once);
        assert!(sup_diff(&once, &twice) <= 1e-12);
    }

    #[test]
    fn lemma31_zero_times() {
        let spec = example21(4, 2.0);
        let tr = transform(&spec).unwrap();
        let r =
            check_lemma31(&tr, 0.0, 0.0, &[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0, 0.0, -1.0]).unwrap();
        assert!(r.max() <= 1e-12);
    }

    #[test]
    fn lemma31_holds_for_reversible_but_not_conjugacy_for_irreversible() {
        let spec = example21(5, 2.0);
        let tr = transform(&spec).unwrap();
        let g1 = [0.3, -1.2, 2.0, 0.1, 0.9];
        let g2 = [1.0, 0.0, -0.5, 2.2, -1.1];
        let r = check_lemma31(&tr, 0.7, 0.3, &g1, &g2).unwrap();
        assert!(r.max() <= 1e-9, "{r:?}");

        let spec =
            build_example22(Some(WeightFunction::new(vec![1.0, 2.0, 1.5]).unwrap())).unwrap();
        let tr = transform(&spec).unwrap();
        let r = check_lemma31(&tr, 0.7, 0.3, &[1.0, 0.0, -1.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!(r.semigroup <= 1e-9);
        assert!(r.projection <= 1e-9);
        assert!(r.conjugacy > 1e-3);
    }

    #[test]
    fn lemma32_and_33_on_small_chains() {
        let spec = example21(5, 2.0);
        let tr = transform(&spec).unwrap();
        let c = check_lemma32(&tr, 0.5, 1e-9).unwrap();
        assert!(c.pass, "{c:?}");
        let c = check_lemma33(&tr, 0.5, 1e-9).unwrap();
        assert!(c.pass && c.lhs <= c.rhs, "{c:?}");

        let bd = build_birth_death(
            &[1.0, 0.5, 2.0, 1.0, 0.7],
            &[0.8, 1.5, 1.0, 2.0, 1.2],
            Some(WeightFunction::new(vec![1.0, 3.0, 3.0, 3.0, 3.0, 3.0]).unwrap()),
        )
        .unwrap();
        let tr = transform(&bd).unwrap();
        let c = check_lemma32(&tr, 1.0, 1e-9).unwrap();
        assert!(c.pass, "{c:?}");

        // at t = 0 the pairing is still (t, 2t): compared numerically
        let spec = build_birth_death(&[1.0, 1.0], &[1.0, 1.0], None).unwrap();
        let tr = transform(&spec).unwrap();
        let c = check_lemma32(&tr, 0.0, 1e-9).unwrap();
        assert!(c.pass, "{c:?}");
        let c = check_lemma33(&tr, 0.0, 1e-9).unwrap();
        assert!(c.pass);
    }

    #[test]
    fn lemma33_total_variation_case_and_decay() {
        let spec = build_birth_death(&[1.0, 2.0, 1.0], &[1.0, 0.5, 2.0], None).unwrap();
        let tr = transform(&spec).unwrap();
        let c = check_lemma33(&tr, 0.4, 1e-9).unwrap();
        let sg = Semigroup::new(&spec).unwrap();
        let tv: f64 = (0..4)
            .map(|i| spec.stationary().get(i) * sg.fnorm(i, 0.4).unwrap())
            .sum();
        assert!((c.rhs - tv).abs() <= 1e-14);
        let late = check_lemma33(&tr, 60.0, 1e-9).unwrap();
        assert!(late.lhs <= 1e-12 && late.rhs <= 1e-12);
    }

    #[test]
    fn h_function_closed_form_and_mean_zero() {
        let spec = build_birth_death(&[0.7], &[1.3], None).unwrap();
        let h = h_function(&spec, 0, 0.5).unwrap();
        assert!((h.norm_sq - h.closed_form.unwrap()).abs() <= 1e-10);
        assert!(h.projection_residual <= 1e-12);

        let h = h_function(&spec, 0, 50.0).unwrap();
        assert!(h.norm_sq <= 1e-30);

        let spec = build_example22(None).unwrap();
        let h = h_function(&spec, 1, 0.3).unwrap();
        assert!(h.closed_form.is_none());
        assert!(h.projection_residual <= 1e-12);
        assert!(h_function(&spec, 0, 0.0).is_err());
    }

    #[test]
    fn h_function_bound_chain() {
        // ||P_t(i,.) - pi||_f <= pi(f^2)^{1/2} e^{-gap (t - s)} ||h_s(i,.)||_{L^2(nu)}
        let spec = build_birth_death(
            &[1.0, 0.4, 2.0],
            &[0.6, 1.0, 1.5],
            Some(WeightFunction::new(vec![1.0, 2.0, 3.5, 1.2]).unwrap()),
        )
        .unwrap();
        let g = gap(spec.rate_matrix(), spec.stationary()).unwrap();
        let sg = Semigroup::new(&spec).unwrap();
        let m2 = spec.weight().second_moment(spec.stationary()).sqrt();
        for i in 0..4 {
            for (s, t) in [(0.1, 0.5), (0.5, 2.0), (1.0, 1.0), (0.2, 6.0)] {
                let h = h_function(&spec, i, s).unwrap();
                let bound = m2 * (-g * (t - s)).exp() * h.norm_sq.sqrt();
                assert!(sg.fnorm(i, t).unwrap() <= bound + 1e-12);
            }
        }
    }
}
