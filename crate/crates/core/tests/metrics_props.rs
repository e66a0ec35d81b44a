mod common;

use common::{arb_event, close, normal_equations, recount, recount_ratios};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veclens_core::metrics::{
    aggregate, compute_metrics, ols_columns, ols_regression, phase_weight_table, total, Group, GroupBy, MetricsError,
};

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn recount_equivalence(events in prop::collection::vec(arb_event(256), 0..300)) {
        let groups = aggregate(&events, GroupBy::Phase);
        let whole = aggregate(&events, GroupBy::WholeRun)[&Group::WholeRun];
        prop_assert_eq!(total(groups.values()), whole);
        let r = recount(&events);
        prop_assert_eq!(
            (whole.c_t, whole.c_v, whole.i_t, whole.i_v, whole.i_cfg, whole.sum_vl, whole.m_l1, whole.m_l2),
            (r.cycles, r.vec_cycles, r.instrs, r.vec_instrs, r.cfg_instrs, r.vl_sum, r.l1, r.l2)
        );
        let m = compute_metrics(&whole, 256);
        prop_assert!(m.in_range(256));
        let want = recount_ratios(&r, 256);
        let got = [opt(m.m_v), opt(m.a_v), opt(m.c_v), opt(m.avl), opt(m.e_v)];
        for (g, w) in got.iter().zip(want) {
            prop_assert!(close(*g, w, 1e-12), "{} vs {}", g, w);
        }
        for (g, rc) in &groups {
            let Group::Phase(p) = g else { unreachable!() };
            let sub = recount(events.iter().filter(|e| e.phase == *p));
            prop_assert_eq!((rc.c_t, rc.i_t, rc.sum_vl), (sub.cycles, sub.instrs, sub.vl_sum));
        }
    }

    #[test]
    fn weights_and_mix_consistent(events in prop::collection::vec(arb_event(256), 1..300)) {
        let per_phase = aggregate(&events, GroupBy::Phase)
            .into_iter()
            .map(|(g, rc)| match g { Group::Phase(p) => (p, rc), Group::WholeRun => unreachable!() })
            .collect();
        let w = phase_weight_table(&per_phase).unwrap();
        let sum: f64 = w.iter().map(|(_, v)| v).sum();
        prop_assert!((sum - 100.0).abs() < 1e-9);
        prop_assert!(w.windows(2).all(|p| p[0].0 < p[1].0));
        let whole = total(per_phase.values());
        let weighted: f64 = per_phase
            .values()
            .map(|rc| compute_metrics(rc, 256).m_v.unwrap() * rc.i_t as f64)
            .sum::<f64>() / whole.i_t as f64;
        prop_assert!(close(weighted, compute_metrics(&whole, 256).m_v.unwrap(), 1e-12));
    }

    #[test]
    fn r2_affine_invariant(seed in any::<u64>(), col in 0usize..2, scale in prop_oneof![-1e3..-1e-3f64, 1e-3..1e3f64], shift in -1e3..1e3f64) {
        let (y, cols) = dataset(seed, 30, 2, 0.5);
        let base = ols_columns(&y, &cols).unwrap();
        let mut moved = cols.clone();
        moved[col].iter_mut().for_each(|v| *v = *v * scale + shift);
        let fit = ols_columns(&y, &moved).unwrap();
        prop_assert!((fit.r_squared - base.r_squared).abs() < 1e-9, "{} vs {}", fit.r_squared, base.r_squared);
        prop_assert!(close(fit.coefficients[col] * scale, base.coefficients[col], 1e-8));
    }
}

fn dataset(seed: u64, n: usize, p: usize, noise: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|_| (0..n).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let b0 = rng.random_range(-10.0..10.0);
    let y = (0..n)
        .map(|i| b0 + (0..p).map(|j| beta[j] * cols[j][i]).sum::<f64>() + noise * rng.random_range(-1.0..1.0))
        .collect();
    (y, cols)
}

#[test]
fn ols_matches_normal_equations() {
    for seed in 0..20u64 {
        let p = 1 + (seed % 3) as usize;
        let (y, cols) = dataset(seed, 50, p, 1.0);
        let fit = ols_columns(&y, &cols).unwrap();
        let (b0, beta, r2) = normal_equations(&y, &cols);
        assert!(
            (fit.intercept - b0).abs() < 1e-10,
            "seed {seed}: {} vs {b0}",
            fit.intercept
        );
        for (a, b) in fit.coefficients.iter().zip(&beta) {
            assert!((a - b).abs() < 1e-10, "seed {seed}: {a} vs {b}");
        }
        assert!((fit.r_squared - r2).abs() < 1e-10, "seed {seed}");
    }
}

#[test]
fn exact_fit_and_errors() {
    let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.7).collect();
    let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
    let fit = ols_columns(&y, std::slice::from_ref(&x)).unwrap();
    assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
    assert!((fit.intercept - 3.0).abs() < 1e-12);
    assert_eq!(fit.r_squared, 1.0);
    assert_eq!(
        ols_columns(&[4.0; 10], std::slice::from_ref(&x)),
        Err(MetricsError::DegenerateResponse)
    );
    let dup = DMatrix::from_fn(10, 2, |i, _| x[i]);
    assert_eq!(ols_regression(&y, &dup), Err(MetricsError::SingularDesign));
}
