use ergorate::chain::{
    build_birth_death, build_example21, dirichlet_form, dual, is_reversible, reversibilize,
    stationary, stationary_residual, ChainSpec, Distribution, RateMatrix, Validation,
    WeightFunction,
};
use ergorate::htransform::{h_function, transform};
use ergorate::montecarlo::{sample_paths, Start};
use ergorate::semigroup::{
    expm, fit_rate, log_grid, mu_ft_norm, propagate, uniform_grid, weighted_l2, DecayCurve,
    FitMode, Semigroup,
};
use ergorate::spec_file::ChainFile;
use ergorate::spectral::{
    eigenvalues, ergodicity_report, gap, symmetric_spectrum, true_decay_rate,
};
use ergorate::Tolerances;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Raw {
    n: usize,
    pi_weights: Vec<f64>,
    rates: Vec<f64>,
    f: Vec<f64>,
}

fn raw(max_n: usize) -> impl Strategy<Value = Raw> {
    (2..=max_n).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec(0.1..1.0_f64, n),
            prop::collection::vec(0.05..2.0_f64, n * n),
            prop::collection::vec(1.0..4.0_f64, n),
        )
            .prop_map(|(n, pi_weights, rates, f)| Raw {
                n,
                pi_weights,
                rates,
                f,
            })
    })
}

/// Dense chain with `pi_i q_ij = c_ij`, `c` symmetric.
fn reversible_chain(r: &Raw) -> ChainSpec {
    let n = r.n;
    let pi = Distribution::from_weights(&r.pi_weights).unwrap();
    let c = |i: usize, j: usize| r.rates[i.min(j) * n + i.max(j)];
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { c(i, j) / pi.get(i) });
    let q = RateMatrix::validate(m, Validation::Repair, &Tolerances::default()).unwrap();
    ChainSpec::new(
        "reversible",
        q,
        WeightFunction::new(r.f.clone()).unwrap(),
        Some(pi),
    )
    .unwrap()
}

fn general_chain(r: &Raw) -> ChainSpec {
    let n = r.n;
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { r.rates[i * n + j] });
    let q = RateMatrix::validate(m, Validation::Repair, &Tolerances::default()).unwrap();
    ChainSpec::new(
        "general",
        q,
        WeightFunction::new(r.f.clone()).unwrap(),
        None,
    )
    .unwrap()
}

/// Mean-zero, unit `L^2(pi)` vector from arbitrary entries.
fn centered_unit(pi: &Distribution, g: &[f64]) -> Option<Vec<f64>> {
    let m = pi.mean(g);
    let c: Vec<f64> = g.iter().map(|x| x - m).collect();
    let norm = pi.inner(&c, &c).sqrt();
    (norm > 1e-6).then(|| c.iter().map(|x| x / norm).collect())
}

fn vectors(n: usize, count: usize, seed: &[f64]) -> Vec<Vec<f64>> {
    (0..count)
        .map(|k| {
            (0..n)
                .map(|j| ((k * 7 + j * 13) as f64 * 0.37 + seed[j % seed.len()] * 5.0).sin())
                .collect()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn valid_chains_have_consistent_stationary_law(r in raw(8)) {
        let spec = general_chain(&r);
        let q = spec.rate_matrix();
        let row = q.matrix().column_sum().amax();
        prop_assert!(row <= 1e-10 * q.max_rate());
        let pi = stationary(q).unwrap();
        prop_assert!(stationary_residual(q, &pi) <= 1e-10 * q.max_rate());
        prop_assert!(pi.as_slice().iter().all(|p| *p > 0.0));
        prop_assert!((pi.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn dual_is_an_involution(r in raw(8)) {
        let spec = general_chain(&r);
        let (q, pi) = (spec.rate_matrix(), spec.stationary());
        let qh = dual(q, pi).unwrap();
        prop_assert!(stationary_residual(&qh, pi) <= 1e-10 * qh.max_rate());
        let back = dual(&qh, pi).unwrap();
        prop_assert!((back.matrix() - q.matrix()).amax() <= 1e-12 * q.max_rate());
    }

    #[test]
    fn reversibilization_is_reversible_with_same_law(r in raw(8)) {
        let spec = general_chain(&r);
        let (q, pi) = (spec.rate_matrix(), spec.stationary());
        let bar = reversibilize(q, pi).unwrap();
        prop_assert!(is_reversible(&bar, pi).reversible);
        let pi_bar = stationary(&bar).unwrap();
        for i in 0..r.n {
            prop_assert!((pi_bar.get(i) - pi.get(i)).abs() <= 1e-10);
        }
        // same Dirichlet form
        for g in vectors(r.n, 5, &r.f) {
            let a = dirichlet_form(q, pi, &g);
            let b = dirichlet_form(&bar, pi, &g);
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn complete_graph_dirichlet_form_is_variance(r in raw(10)) {
        let pi = Distribution::from_weights(&r.pi_weights).unwrap();
        let spec = build_example21(&pi, 2.0).unwrap();
        for g in vectors(r.n, 50, &r.rates) {
            let Some(g) = centered_unit(&pi, &g) else { continue };
            let d = dirichlet_form(spec.rate_matrix(), &pi, &g);
            prop_assert!((d - pi.variance(&g)).abs() <= 1e-10);
        }
    }

    #[test]
    fn birth_death_builder_is_reversible(r in raw(10)) {
        let n = r.n;
        let spec = build_birth_death(&r.rates[..n - 1], &r.rates[n..2 * n - 1], None).unwrap();
        prop_assert!(is_reversible(spec.rate_matrix(), spec.stationary()).reversible);
    }

    #[test]
    fn gap_is_the_poincare_constant(r in raw(8)) {
        let spec = reversible_chain(&r);
        let (q, pi) = (spec.rate_matrix(), spec.stationary());
        let g = gap(q, pi).unwrap();
        for v in vectors(r.n, 100, &r.f) {
            let Some(v) = centered_unit(pi, &v) else { continue };
            prop_assert!(dirichlet_form(q, pi, &v) >= g * pi.variance(&v) - 1e-9);
        }
        let sp = symmetric_spectrum(q, pi).unwrap();
        let phi = sp.eigenfunction(1);
        let rayleigh = dirichlet_form(q, pi, &phi) / pi.variance(&phi);
        prop_assert!((rayleigh - g).abs() <= 1e-9 * g.max(1.0));
    }

    #[test]
    fn gap_is_invariant_under_duality(r in raw(8)) {
        let spec = general_chain(&r);
        let (q, pi) = (spec.rate_matrix(), spec.stationary());
        let a = gap(q, pi).unwrap();
        let b = gap(&dual(q, pi).unwrap(), pi).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn spectrum_has_one_zero_and_decay_bounds_gap(r in raw(8)) {
        let spec = general_chain(&r);
        let q = spec.rate_matrix();
        let ev = eigenvalues(q).unwrap();
        let tol = 1e-9 * q.max_rate();
        prop_assert_eq!(ev.iter().filter(|l| l.norm() <= tol).count(), 1);
        prop_assert!(ev.iter().filter(|l| l.norm() > tol).all(|l| l.re < 0.0));
        let g = gap(q, spec.stationary()).unwrap();
        prop_assert!(true_decay_rate(q).unwrap() >= g - 1e-9);
    }

    #[test]
    fn reversible_spectrum_is_real_and_rates_agree(r in raw(8)) {
        let spec = reversible_chain(&r);
        let q = spec.rate_matrix();
        let ev = eigenvalues(q).unwrap();
        prop_assert!(ev.iter().all(|l| l.im.abs() <= 1e-9 * q.max_rate()));
        let g = gap(q, spec.stationary()).unwrap();
        prop_assert!((true_decay_rate(q).unwrap() - g).abs() <= 1e-9 * g.max(1.0));
    }

    #[test]
    fn semigroup_is_stochastic_and_chapman_kolmogorov(
        r in raw(8), t in 0.0..5.0_f64, s in 0.0..5.0_f64
    ) {
        let spec = general_chain(&r);
        let q = spec.rate_matrix();
        let pt = expm(q, t).unwrap();
        let ps = expm(q, s).unwrap();
        let pts = expm(q, t + s).unwrap();
        prop_assert!((&pt.p * &ps.p - &pts.p).amax() <= 1e-8);
        prop_assert!(pt.min_raw_entry >= -1e-12);
        for i in 0..r.n {
            prop_assert!((pt.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }
        let moved = propagate(spec.stationary(), &pt);
        for i in 0..r.n {
            prop_assert!((moved[i] - spec.stationary().get(i)).abs() <= 1e-10);
        }
    }

    #[test]
    fn reversible_envelope_dominates(r in raw(8)) {
        let spec = reversible_chain(&r);
        let report = ergodicity_report(&spec).unwrap();
        let sg = Semigroup::new(&spec).unwrap();
        let grid = log_grid(0.01, 10.0 / report.gap, 40);
        for i in 0..r.n {
            let c = sg.decay_curve(&report, i, &grid).unwrap();
            prop_assert!(c.max_excess() <= 1e-9);
        }
    }

    #[test]
    fn dual_route_matches_direct_fnorm(r in raw(8), t in 0.0..5.0_f64, k in 0usize..8) {
        let spec = general_chain(&r);
        let mut mu: Vec<f64> = r.pi_weights.iter().rev().cloned().collect();
        mu[k % r.n] = 0.0;
        let total: f64 = mu.iter().sum();
        mu.iter_mut().for_each(|m| *m /= total);
        prop_assert!(mu_ft_norm(&mu, &spec, t).unwrap().residual <= 1e-10);
    }

    #[test]
    fn l2_contraction_at_gap_rate(r in raw(8), t in 0.0..5.0_f64) {
        let spec = reversible_chain(&r);
        let pi = spec.stationary();
        let g = gap(spec.rate_matrix(), pi).unwrap();
        let p = expm(spec.rate_matrix(), t).unwrap().p;
        for v in vectors(r.n, 10, &r.rates) {
            let m = pi.mean(&v);
            let c: Vec<f64> = v.iter().map(|x| x - m).collect();
            let pv = &p * DVector::from_column_slice(&v);
            let d: Vec<f64> = pv.iter().map(|x| x - m).collect();
            let lhs = pi.inner(&d, &d).sqrt();
            let rhs = (-g * t).exp() * pi.inner(&c, &c).sqrt();
            prop_assert!(lhs <= rhs + 1e-9);
        }
    }

    #[test]
    fn fit_recovers_synthetic_rates(rate in 0.05..20.0_f64, c in 0.1..10.0_f64) {
        let times = uniform_grid(0.0, 6.0 / rate, 61);
        let fnorms: Vec<f64> = times.iter().map(|t| c * (-rate * t).exp()).collect();
        let curve = DecayCurve {
            state: 0,
            envelope: fnorms.clone(),
            fnorms,
            times,
            rate,
            constant: c,
        };
        let fit = fit_rate(&curve, None, FitMode::Auto).unwrap();
        prop_assert!((fit.rate - rate).abs() <= 1e-10 * rate);
    }

    #[test]
    fn unit_weight_transform_is_trivial(r in raw(8), t in 0.0..3.0_f64) {
        let spec = reversible_chain(&r).with_weight(WeightFunction::ones(r.n)).unwrap();
        let tr = transform(&spec).unwrap();
        prop_assert_eq!(tr.nu(), spec.stationary().as_slice());
        let p = expm(spec.rate_matrix(), t).unwrap().p;
        prop_assert!((tr.operator(t).unwrap() - p).amax() <= 1e-12);
    }

    #[test]
    fn transformed_semigroup_is_nu_reversible(r in raw(8), t in 0.0..3.0_f64) {
        let spec = reversible_chain(&r);
        let tr = transform(&spec).unwrap();
        let pf = tr.operator(t).unwrap();
        let nu = tr.nu();
        for i in 0..r.n {
            for j in 0..r.n {
                let (a, b) = (nu[i] * pf[(i, j)], nu[j] * pf[(j, i)]);
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn projection_identities(r in raw(8), t in 0.0..3.0_f64) {
        let spec = general_chain(&r);
        let tr = transform(&spec).unwrap();
        for g in vectors(r.n, 5, &r.rates) {
            let pg = tr.apply_projection(&g);
            let ppg = tr.apply_projection(&pg);
            let ptg = tr.apply(t, &g).unwrap();
            let a = tr.apply_projection(&ptg);
            let b = tr.apply(t, &pg).unwrap();
            for k in 0..r.n {
                prop_assert!((ppg[k] - pg[k]).abs() <= 1e-12 * (1.0 + pg[k].abs()));
                prop_assert!((a[k] - pg[k]).abs() <= 1e-9);
                prop_assert!((b[k] - pg[k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn transformed_l2_decay_at_gap_rate(r in raw(8), t in 0.0..4.0_f64) {
        let spec = reversible_chain(&r);
        let g = gap(spec.rate_matrix(), spec.stationary()).unwrap();
        let tr = transform(&spec).unwrap();
        for v in vectors(r.n, 5, &r.pi_weights) {
            let pv = tr.apply_projection(&v);
            let c: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
            let moved = tr.apply(t, &v).unwrap();
            let d: Vec<f64> = moved.iter().zip(&pv).map(|(a, b)| a - b).collect();
            prop_assert!(weighted_l2(&d, tr.nu()) <= (-g * t).exp() * weighted_l2(&c, tr.nu()) + 1e-9);
        }
    }

    #[test]
    fn h_function_is_mean_zero(r in raw(8), s in 0.01..4.0_f64) {
        let spec = general_chain(&r);
        for i in 0..r.n {
            let h = h_function(&spec, i, s).unwrap();
            prop_assert!(h.projection_residual <= 1e-12);
        }
    }

    #[test]
    fn spec_file_round_trip(r in raw(8)) {
        let spec = general_chain(&r);
        let text = ChainFile::from_spec(&spec).to_json();
        let back = ChainFile::parse(&text).unwrap().build().unwrap();
        prop_assert_eq!(back.rate_matrix(), spec.rate_matrix());
        prop_assert_eq!(back.weight(), spec.weight());
        prop_assert_eq!(back.stationary(), spec.stationary());
        prop_assert_eq!(&back.label, &spec.label);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn sampling_is_reproducible(r in raw(5), seed in any::<u64>()) {
        let spec = general_chain(&r);
        let grid = [0.0, 0.5, 2.0];
        let a = sample_paths(&spec, Start::State(0), &grid, 300, seed).unwrap();
        let b = sample_paths(&spec, Start::State(0), &grid, 300, seed).unwrap();
        for k in 0..grid.len() {
            prop_assert_eq!(a.counts(k), b.counts(k));
        }
        prop_assert_eq!(a.counts(0)[0], 300);
    }
}
