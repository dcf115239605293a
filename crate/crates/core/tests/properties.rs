mod common;

use common::{fixture, path3};
use iges_dse::estimator::{kf_update, KalmanState};
use iges_dse::eval::{filter_coefficient, total_variance};
use iges_dse::gas::{boundary_vector, build_transition, step_gas};
use iges_dse::matpower::parse_case;
use iges_dse::power::{
    build_admittance, electric_measurement_matrix, holt_step, ElectricMeterPlan, HoltState,
};
use iges_dse::model::BranchEnd;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

fn vec_in(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(lo..hi, n).prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gas_step_solves_the_implicit_system(
        x in vec_in(7, 1.0, 50.0),
        loads in prop::collection::vec(-5.0f64..20.0, 2),
        rho in 20.0f64..40.0,
    ) {
        let net = path3();
        let tr = build_transition(&net).unwrap();
        let u = boundary_vector(&net, &[rho], &loads).unwrap();
        let next = step_gas(&tr, &x, &u).unwrap();
        let resid = &tr.a * &next - &tr.b * &x - &u;
        let scale = 1.0 + (&tr.a * &next).amax();
        prop_assert!(resid.amax() < 1e-10 * scale);
    }

    #[test]
    fn gas_step_is_linear(
        x1 in vec_in(7, -10.0, 10.0),
        x2 in vec_in(7, -10.0, 10.0),
        l1 in prop::collection::vec(-5.0f64..5.0, 2),
        l2 in prop::collection::vec(-5.0f64..5.0, 2),
        a in -2.0f64..2.0,
    ) {
        let net = path3();
        let tr = build_transition(&net).unwrap();
        let u1 = boundary_vector(&net, &[1.0], &l1).unwrap();
        let u2 = boundary_vector(&net, &[2.0], &l2).unwrap();
        let lhs = step_gas(&tr, &(&x1 * a + &x2), &(&u1 * a + &u2)).unwrap();
        let rhs = step_gas(&tr, &x1, &u1).unwrap() * a + step_gas(&tr, &x2, &u2).unwrap();
        prop_assert!((&lhs - &rhs).amax() < 1e-9 * (1.0 + rhs.amax()));
    }

    #[test]
    fn holt_prediction_decomposes(
        level in vec_in(3, -2.0, 2.0),
        trend in vec_in(3, -1.0, 1.0),
        obs in vec_in(3, -2.0, 2.0),
        alpha in 0.05f64..0.95,
        beta in 0.05f64..0.95,
    ) {
        let h = HoltState { level: level.clone(), trend: trend.clone(), alpha, beta };
        let (next, pred, u) = holt_step(&h, &obs).unwrap();
        let l = &obs * alpha + (&level + &trend) * (1.0 - alpha);
        let t = (&l - &level) * beta + &trend * (1.0 - beta);
        prop_assert!((&next.level - &l).amax() < 1e-12);
        prop_assert!((&next.trend - &t).amax() < 1e-12);
        prop_assert!((&pred - (&l + &t)).amax() < 1e-12);
        prop_assert!((&pred - (&obs * alpha + &u)).amax() < 1e-12);
    }

    #[test]
    fn metrics_scale_equivariant(
        base in prop::collection::vec((-5.0f64..5.0, -1.0f64..1.0, -1.0f64..1.0), 3..40),
        c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
    ) {
        let t: Vec<f64> = base.iter().map(|v| v.0).collect();
        let e: Vec<f64> = base.iter().map(|v| v.0 + v.1).collect();
        let m: Vec<f64> = base.iter().map(|v| v.0 + v.2 + 0.5).collect();
        let sc = |v: &[f64]| v.iter().map(|x| x * c).collect::<Vec<f64>>();
        let e1 = filter_coefficient(&e, &m, &t).unwrap();
        let e1c = filter_coefficient(&sc(&e), &sc(&m), &sc(&t)).unwrap();
        prop_assert!((e1 - e1c).abs() <= 1e-9 * e1.max(1e-12));
        let e2 = total_variance(&e, &t).unwrap();
        let e2c = total_variance(&sc(&e), &sc(&t)).unwrap();
        prop_assert!((e2c - c * c * e2).abs() <= 1e-9 * (c * c * e2).max(1e-300));
    }

    #[test]
    fn filter_coefficient_bounds_total_variance(
        base in prop::collection::vec((-5.0f64..5.0, -1.0f64..1.0, -1.0f64..1.0), 3..40),
    ) {
        let t: Vec<f64> = base.iter().map(|v| v.0).collect();
        let e: Vec<f64> = base.iter().map(|v| v.0 + v.1).collect();
        let m: Vec<f64> = base.iter().map(|v| v.0 + v.2 + 0.5).collect();
        let e1 = filter_coefficient(&e, &m, &t).unwrap();
        let est = total_variance(&e, &t).unwrap();
        let meas = total_variance(&m, &t).unwrap();
        prop_assert!((est - e1 * meas).abs() <= 1e-12 * meas);
        if e1 < 1.0 {
            prop_assert!(est <= meas);
        }
    }

    #[test]
    fn electric_rows_match_complex_currents(
        em in vec_in(39, 0.9, 1.1),
        ang in vec_in(39, -0.5, 0.5),
    ) {
        let grid = parse_case(&std::fs::read_to_string(fixture("case39.m")).unwrap()).unwrap();
        let adm = build_admittance(&grid);
        let plan = ElectricMeterPlan::full(&grid);
        let h = electric_measurement_matrix(&grid, &adm, &plan);
        let v: Vec<Complex64> = (0..39).map(|i| Complex64::from_polar(em[i], ang[i])).collect();
        let x = DVector::from_fn(78, |k, _| if k % 2 == 0 { v[k / 2].re } else { v[k / 2].im });
        let z = &h * &x;
        let nv = plan.voltage_meters.len();
        for (k, &(br, end)) in plan.branch_current_meters.iter().enumerate() {
            let b = &grid.branches[br - 1];
            let [yff, yft, ytf, ytt] = iges_dse::power::branch_two_port(b.r, b.x, b.b, b.tap_ratio, b.shift);
            let (vi, vj) = (v[b.from - 1], v[b.to - 1]);
            let cur = match end {
                BranchEnd::From => yff * vi + yft * vj,
                BranchEnd::To => ytf * vi + ytt * vj,
            };
            let row = 2 * (nv + k);
            prop_assert!((z[row] - cur.re).abs() < 1e-9 && (z[row + 1] - cur.im).abs() < 1e-9);
        }
        let off = 2 * (nv + plan.branch_current_meters.len());
        for (k, &bus) in plan.injection_meters.iter().enumerate() {
            let cur: Complex64 = (0..39).map(|j| adm.y(bus - 1, j) * v[j]).sum();
            prop_assert!((z[off + 2 * k] - cur.re).abs() < 1e-9 && (z[off + 2 * k + 1] - cur.im).abs() < 1e-9);
        }
    }

    #[test]
    fn sequential_update_equals_block_update(
        seed in 0u64..1000,
        n in 2usize..6,
        m in 1usize..7,
    ) {
        use rand_chacha::rand_core::{RngCore, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut u = || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
        let a = DMatrix::from_fn(n, n, |_, _| u());
        let p = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        let x = DVector::from_fn(n, |_, _| u());
        let h = DMatrix::from_fn(m, n, |_, _| u());
        let z = DVector::from_fn(m, |_, _| u());
        let r = DVector::from_fn(m, |_, _| 0.05 + u().abs());
        let kf = KalmanState { x, p };
        let block = kf_update(&kf, &z, &h, &r).unwrap();
        let mut seq = kf.clone();
        for i in 0..m {
            let hi = h.rows(i, 1).into_owned();
            seq = kf_update(&seq, &DVector::from_element(1, z[i]), &hi, &DVector::from_element(1, r[i])).unwrap();
        }
        prop_assert!((&block.x - &seq.x).amax() < 1e-10);
        prop_assert!((&block.p - &seq.p).amax() < 1e-10);
    }
}
