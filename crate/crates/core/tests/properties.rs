//! Property tests over random states, random matrices and the shipped
//! scenarios.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use voltbound::anchor_solver::{controlling_pseudo_saddle, detect_singular_hit, restore_to_psi, SaddleOptions};
use voltbound::fixture::{shipped, ScenarioOptions};
use voltbound::grid_model::kron_reduce;
use voltbound::manifold_margin::{build_manifold, manifold_value};
use voltbound::regularizer::{
    adjugate_cofactor, adjugate_spectral, eigendecompose, eigendecompose_tracked, sigma_dprime_field, sigma_lambda_field,
    sigma_prime_field,
};
use voltbound::simulator::{compute_cct, post_fault_equilibrium, simulate, Topology};
use voltbound::singularity::pseudo_equilibrium_residual;
use voltbound::{Scenario, Thresholds};

fn scenarios() -> &'static Vec<(&'static str, Scenario)> {
    static S: OnceLock<Vec<(&'static str, Scenario)>> = OnceLock::new();
    S.get_or_init(fixtures)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn reconstruction_and_biorthonormality(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = separated_spectrum(&mut rng, n);
        let a = with_spectrum(&mut rng, &spec);
        let es = eigendecompose(&a, &Thresholds::default()).unwrap();
        let vtu = es.v.transpose() * &es.u;
        prop_assert!((vtu - DMatrix::identity(n, n)).amax() < 1e-10);
        prop_assert!(rel_err(&es.reconstruct(), &a) < 1e-10);
        for i in 1..n {
            prop_assert!(es.lambdas[i - 1].abs() <= es.lambdas[i].abs());
        }
    }

    #[test]
    fn determinant_sign_matches_eigenvalue_product(seed in any::<u64>(), n in 2usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = separated_spectrum(&mut rng, n);
        let a = with_spectrum(&mut rng, &spec);
        let es = eigendecompose(&a, &Thresholds::default()).unwrap();
        let lu = a.clone().lu().determinant();
        let prod: f64 = spec.iter().product();
        prop_assert_eq!(lu.signum(), prod.signum());
        prop_assert_eq!(es.determinant().signum(), prod.signum());
        prop_assert!((es.determinant() - lu).abs() <= 1e-9 * lu.abs());
    }

    #[test]
    fn adjugate_is_determinant_times_inverse(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = separated_spectrum(&mut rng, n);
        let a = with_spectrum(&mut rng, &spec);
        let es = eigendecompose(&a, &Thresholds::default()).unwrap();
        let inv = a.clone().try_inverse().unwrap() * es.determinant();
        prop_assert!(rel_err(&adjugate_spectral(&es).unwrap(), &inv) < 1e-9);
        prop_assert!(rel_err(&adjugate_cofactor(&a), &inv) < 1e-9);
    }

    #[test]
    fn symmetric_input_has_equal_left_and_right_vectors(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(n, n, |_, _| uniform(&mut rng, 1.0)).qr().q();
        let spec = separated_spectrum(&mut rng, n);
        let a = &q * DMatrix::from_diagonal(&DVector::from_vec(spec)) * q.transpose();
        let es = eigendecompose(&a, &Thresholds::default()).unwrap();
        prop_assert!((&es.u - &es.v).amax() < 1e-9);
    }

    #[test]
    fn kron_reduction_preserves_currents(seed in any::<u64>(), n in 3usize..8, keep in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let b = Complex::new(0.0, -1.0 / (0.05 + uniform(&mut rng, 0.5).abs()));
                y[(i, j)] -= b;
                y[(j, i)] -= b;
                y[(i, i)] += b;
                y[(j, j)] += b;
            }
            y[(i, i)] += Complex::new(0.1, 0.2 * uniform(&mut rng, 1.0));
        }
        let retained: Vec<usize> = (0..keep).collect();
        let yr = kron_reduce(&y, &retained).unwrap();
        // full solve with zero injection at every eliminated bus
        let vr = DVector::from_fn(keep, |_, _| Complex::new(1.0 + uniform(&mut rng, 0.1), uniform(&mut rng, 0.3)));
        let ne = n - keep;
        let yee = y.view((keep, keep), (ne, ne)).into_owned();
        let yer = y.view((keep, 0), (ne, keep)).into_owned();
        let ve = yee.lu().solve(&(-(yer * &vr))).unwrap();
        let mut v = DVector::zeros(n);
        v.rows_mut(0, keep).copy_from(&vr);
        v.rows_mut(keep, ne).copy_from(&ve);
        let i_full = &y * v;
        let i_red = yr * vr;
        for k in 0..keep {
            prop_assert!((i_full[k] - i_red[k]).norm() < 1e-9 * (1.0 + i_red[k].norm()));
        }
        for k in keep..n {
            prop_assert!(i_full[k].norm() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn jacobians_match_finite_differences(seed in any::<u64>(), which in 0usize..5) {
        let (_, sc) = &scenarios()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(sc, &mut rng);
        let m = sc.model(Topology::PostFault);
        let nd = fd_jacobian(|yy| m.g(&s.x, yy).unwrap(), &s.y, 1e-6);
        prop_assert!(rel_err(&m.dyg(&s.y).unwrap(), &nd) < 1e-6);
        let nd = fd_jacobian(|xx| m.g(xx, &s.y).unwrap(), &s.x, 1e-6);
        prop_assert!(rel_err(&m.dxg(&s.x).unwrap(), &nd) < 1e-6);
        let (fx, _) = m.fjac(&s.x, &s.y).unwrap();
        let nd = fd_jacobian(|xx| m.f(xx, &s.y).unwrap(), &s.x, 1e-6);
        prop_assert!(rel_err(&fx, &nd) < 1e-6);
    }

    #[test]
    fn speed_and_field_voltage_never_enter_the_network(seed in any::<u64>(), which in 0usize..5) {
        let (_, sc) = &scenarios()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(sc, &mut rng);
        let l = sc.devices.layout();
        let dxg = sc.model(Topology::PreFault).dxg(&s.x).unwrap();
        for k in 0..sc.devices.len() {
            prop_assert_eq!(dxg.column(l.omega(k)).amax(), 0.0);
            prop_assert_eq!(dxg.column(l.efd(k)).amax(), 0.0);
        }
    }

    #[test]
    fn regularized_fields_are_rescalings(seed in any::<u64>(), which in 0usize..5, sign in prop::bool::ANY) {
        let (_, sc) = &scenarios()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(sc, &mut rng);
        let m = sc.model(Topology::PostFault);
        let sign = if sign { 1.0 } else { -1.0 };
        let (fx, fy) = sigma_prime_field(&m, &s.x, &s.y).unwrap();
        let lf = sigma_lambda_field(&m, &s.x, &s.y, sign, None).unwrap();
        let scale = sign * lf.lambda1();
        prop_assert!((&lf.dx - &fx * scale).amax() <= 1e-9 * (1.0 + lf.dx.amax()));
        prop_assert!((&lf.dy - &fy * scale).amax() <= 1e-8 * (1.0 + lf.dy.amax()));
        let (dx, dy) = sigma_dprime_field(&m, &s.x, &s.y).unwrap();
        let det = lf.eig.determinant();
        prop_assert!((&dx - &fx * det).amax() <= 1e-9 * dx.amax());
        prop_assert!((&dy - &fy * det).amax() <= 1e-7 * dy.amax());
    }
}

/// Saddle of the single-machine load scenario with its hit and scenario.
fn saddle() -> &'static (Scenario, DVector<f64>, DVector<f64>, f64) {
    static S: OnceLock<(Scenario, DVector<f64>, DVector<f64>, f64)> = OnceLock::new();
    S.get_or_init(|| {
        let sc = shipped::<f64>("single_machine_load", &ScenarioOptions::default()).unwrap();
        let tr = simulate(&sc).unwrap();
        let hit = detect_singular_hit(&sc, &tr).unwrap();
        let ps = {
            let m = sc.model(Topology::PostFault);
            controlling_pseudo_saddle(&m, &hit, &SaddleOptions { sign: tr.sign, ..Default::default() }).unwrap()
        };
        (sc, ps.z_cps.z(), hit.z_sp.z(), ps.distance)
    })
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn saddle_is_locally_closest(seed in any::<u64>()) {
        let (sc, z_cps, z_sp, d) = saddle();
        let m = sc.model(Topology::PostFault);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = z_cps.map(|v| v + uniform(&mut rng, 0.01));
        if let Some(r) = restore_to_psi(&m, &z, &[], 30).unwrap() {
            let (x, y) = m.split(&r);
            prop_assume!(pseudo_equilibrium_residual(&m, &x, &y).unwrap().accepted(&sc.thresholds));
            prop_assert!((&r - z_sp).norm() >= d - 1e-6);
        }
    }
}

#[test]
fn kappa_vanishes_at_the_saddle() {
    let (sc, z_cps, _, _) = saddle();
    let m = sc.model(Topology::PostFault);
    let (x, y) = m.split(z_cps);
    let r = pseudo_equilibrium_residual(&m, &x, &y).unwrap();
    assert!(r.kappa_norm < sc.thresholds.eps_psi);
    assert!(r.lambda1.abs() < sc.thresholds.eps_sing);
}

#[test]
fn manifold_value_changes_sign_across_the_saddle() {
    let (sc, z_cps, _, _) = saddle();
    let m = sc.model(Topology::PostFault);
    let tr = simulate(sc).unwrap();
    let hit = detect_singular_hit(sc, &tr).unwrap();
    let ps = controlling_pseudo_saddle(&m, &hit, &SaddleOptions { sign: tr.sign, ..Default::default() }).unwrap();
    let sep = post_fault_equilibrium(sc).unwrap();
    let model = build_manifold(z_cps, ps.mu_unstable, &ps.eta, &sep);
    let step = &ps.eta * 1e-3;
    let (a, b) = (manifold_value(&(z_cps + &step), &model), manifold_value(&(z_cps - &step), &model));
    assert!(a * b < 0.0, "{a} {b}");
    assert!(manifold_value(z_cps, &model).abs() < 1e-12);
}

#[test]
fn lambda1_moves_continuously_along_a_trajectory() {
    let sc = three_machine_35();
    let tr = simulate(&sc).unwrap();
    let mut prev: Option<DVector<f64>> = None;
    let mut last: Option<f64> = None;
    for (k, s) in tr.states.iter().enumerate() {
        let m = sc.model(tr.topology[k]);
        let es = eigendecompose_tracked(&m.dyg(&s.y).unwrap(), &sc.thresholds, prev.as_ref()).unwrap();
        if let (Some(l0), Some(t0)) = (last, k.checked_sub(1).map(|j| tr.topology[j])) {
            if t0 == tr.topology[k] {
                let l1: f64 = es.lambda1();
                assert!((l1 - l0).abs() < 0.5 * (1.0 + l0.abs()), "jump {l0} -> {l1} at t={}", tr.times[k]);
            }
        }
        last = Some(es.lambda1());
        prev = Some(es.u1());
    }
}

#[test]
fn halving_the_step_cap_keeps_the_trajectory() {
    let mut sc = shipped::<f64>("smib", &ScenarioOptions::default()).unwrap();
    sc.t_end = 1.0;
    let a = simulate(&sc).unwrap();
    sc.dt_max *= 0.5;
    let b = simulate(&sc).unwrap();
    let (ea, eb) = (a.last().unwrap(), b.last().unwrap());
    assert!((ea.z() - eb.z()).amax() < 1e-6);
}

#[test]
fn cct_history_is_consistent() {
    let sc = shipped::<f64>("smib", &ScenarioOptions::default()).unwrap();
    let c = compute_cct(&sc, 0.01, 0.6, 0.02).unwrap();
    assert!(!c.inverted);
    assert!(c.lo < c.hi && c.hi - c.lo <= 0.02);
    assert!(c.history[0].1.stable && !c.history[1].1.stable);
    for (d, v) in &c.history {
        assert_eq!(v.stable, *d <= c.lo, "duration {d}");
    }
}
