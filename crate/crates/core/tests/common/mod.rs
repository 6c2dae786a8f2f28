//! Helpers shared by the integration tests: shipped scenarios, random
//! states around an operating point and central-difference Jacobians.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use voltbound::fixture::{shipped, ScenarioOptions};
use voltbound::model::SystemState;
use voltbound::Scenario;

/// Shipped scenarios with the load mixes used throughout the tests.
pub fn fixtures() -> Vec<(&'static str, Scenario)> {
    let with_rho = |stem: &str, rho: Option<f64>| shipped(stem, &ScenarioOptions { rho, ..Default::default() }).unwrap();
    vec![
        ("smib", with_rho("smib", None)),
        ("single_machine_load", with_rho("single_machine_load", None)),
        ("three_machine", with_rho("three_machine", Some(0.35))),
        ("three_machine_gfl", with_rho("three_machine_gfl", None)),
        ("three_machine_gfm", with_rho("three_machine_gfm", None)),
    ]
}

/// The three-machine scenario with 35% constant-power load.
pub fn three_machine_35() -> Scenario {
    shipped("three_machine", &ScenarioOptions { rho: Some(0.35), ..Default::default() }).unwrap()
}

pub fn uniform<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    rng.gen_range(-half_width..half_width)
}

/// Random state near the pre-fault equilibrium. Angles move by up to 0.2 rad,
/// speeds by 0.01, EMFs by 0.05, field voltages by 0.1 and each voltage
/// component by 0.03 per unit.
pub fn random_state<R: Rng>(sc: &Scenario, rng: &mut R) -> SystemState<f64> {
    let l = sc.devices.layout();
    let mut x = sc.initial.x.clone();
    for k in 0..sc.devices.len() {
        x[l.delta(k)] += uniform(rng, 0.2);
        x[l.omega(k)] += uniform(rng, 0.01);
        x[l.e(k)] += uniform(rng, 0.05);
        x[l.efd(k)] += uniform(rng, 0.1);
    }
    let y = sc.initial.y.map(|v| v + uniform(rng, 0.03));
    SystemState::new(x, y)
}

/// Central-difference Jacobian of `fun` at `z`.
pub fn fd_jacobian<F>(fun: F, z: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let f0 = fun(z);
    let mut j = DMatrix::zeros(f0.len(), z.len());
    for col in 0..z.len() {
        let mut zp = z.clone();
        let mut zm = z.clone();
        zp[col] += h;
        zm[col] -= h;
        j.set_column(col, &((fun(&zp) - fun(&zm)) / (2.0 * h)));
    }
    j
}

/// Largest entry error relative to the largest reference entry.
pub fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.amax();
    if scale == 0.0 {
        return a.amax();
    }
    (a - reference).amax() / scale
}

/// Arclength of a polyline through `pts`.
pub fn arclength(pts: &[DVector<f64>]) -> Vec<f64> {
    let mut s = vec![0.0];
    for w in pts.windows(2) {
        s.push(s[s.len() - 1] + (&w[1] - &w[0]).norm());
    }
    s
}

/// Point at arclength `s` on the polyline, by linear interpolation.
pub fn at_arclength(pts: &[DVector<f64>], arc: &[f64], s: f64) -> DVector<f64> {
    let k = arc.partition_point(|a| *a < s).clamp(1, arc.len() - 1);
    let (a0, a1) = (arc[k - 1], arc[k]);
    let w = if a1 > a0 { ((s - a0) / (a1 - a0)).clamp(0.0, 1.0) } else { 0.0 };
    &pts[k - 1] + (&pts[k] - &pts[k - 1]) * w
}

/// Random matrix with real eigenvalues `lambdas`, built as `S diag S^-1`
/// with a well-conditioned random `S`.
pub fn with_spectrum<R: Rng>(rng: &mut R, lambdas: &[f64]) -> DMatrix<f64> {
    let n = lambdas.len();
    let s = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + uniform(rng, 0.3));
    let si = s.clone().try_inverse().unwrap();
    &s * DMatrix::from_diagonal(&DVector::from_row_slice(lambdas)) * si
}

/// Real spectrum whose moduli are at least 0.5 apart and at least 0.5 from
/// zero, with random signs.
pub fn separated_spectrum<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let m = 0.5 + i as f64 + rng.gen_range(0.0..0.4);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}
