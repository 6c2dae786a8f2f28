//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line even when output capture is
//! on; the process exits non-zero if any criterion fails.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};
use voltbound::anchor_solver::{controlling_pseudo_saddle, detect_singular_hit, restore_to_psi, SaddleOptions};
use voltbound::fixture::{shipped, ScenarioOptions};
use voltbound::manifold_margin::{
    build_manifold, error_law_slope, margin_series, numeric_transformed_jacobian, split_spectrum, stable_manifold_samples,
    transformed_jacobian, ManifoldSampling,
};
use voltbound::regularizer::{
    adjugate_cofactor, adjugate_spectral, eigendecompose, eigenvalue_derivative, eigenvector_derivatives,
};
use voltbound::simulator::{
    compute_cct_with, post_fault_equilibrium, simulate, simulate_transformed, CctOptions, Termination, Topology, TransformedOptions,
};
use voltbound::singularity::{sample_near_singular, semi_singular_scalar};
use voltbound::{Scenario, Thresholds};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: u64) -> bool {
    elapsed <= Duration::from_secs(limit_s)
}

fn jacobian_oracles() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut e_dyg, mut e_dxg, mut e_f, mut e_j) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut worst = String::new();
    for (name, sc) in fixtures() {
        for topo in [Topology::PreFault, Topology::PostFault] {
            let m = sc.model(topo);
            let (nx, ny) = (m.nx(), m.ny());
            for trial in 0..10 {
                let s = random_state(&sc, &mut rng);
                let (x, y) = (&s.x, &s.y);
                let dyg = m.dyg(y).unwrap();
                let nd = fd_jacobian(|yy| m.g(x, yy).unwrap(), y, 1e-6);
                e_dyg = e_dyg.max(rel_err(&dyg, &nd));
                let dxg = m.dxg(x).unwrap();
                let nd = fd_jacobian(|xx| m.g(xx, y).unwrap(), x, 1e-6);
                e_dxg = e_dxg.max(rel_err(&dxg, &nd));
                let (fx, fy) = m.fjac(x, y).unwrap();
                let z = s.z();
                let nf = fd_jacobian(|zz| m.f(&zz.rows(0, nx).into_owned(), &zz.rows(nx, ny).into_owned()).unwrap(), &z, 1e-6);
                let mut af = DMatrix::zeros(nx, nx + ny);
                af.view_mut((0, 0), (nx, nx)).copy_from(&fx);
                af.view_mut((0, nx), (nx, ny)).copy_from(&fy);
                e_f = e_f.max(rel_err(&af, &nf));
                let sign = if trial % 2 == 0 { 1.0 } else { -1.0 };
                let j = transformed_jacobian(&m, x, y, sign, false, None).unwrap().j;
                let nj = numeric_transformed_jacobian(&m, x, y, sign, 1e-6).unwrap();
                let e = rel_err(&j, &nj);
                if e > e_j {
                    e_j = e;
                    worst = format!("{name}/{topo:?}#{trial}");
                }
            }
        }
    }
    let el = t0.elapsed();
    check(
        e_dyg < 1e-6 && e_dxg < 1e-6 && e_f < 1e-6 && e_j < 1e-4 && within(el, 60),
        format!(
            "max rel err D_y g {e_dyg:.1e}, D_x g {e_dxg:.1e}, df/dz {e_f:.1e}, transformed J {e_j:.1e} ({worst}); 20 states x 5 fixtures in {:.1} s",
            el.as_secs_f64()
        ),
    )
}

/// Aligns the sign of `b` with `a`.
fn aligned(a: &DVector<f64>, b: DVector<f64>) -> DVector<f64> {
    if a.dot(&b) < 0.0 {
        -b
    } else {
        b
    }
}

fn eigen_derivatives() -> Outcome {
    let t0 = Instant::now();
    let thr = Thresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (mut e_l, mut e_u, mut e_v, mut e_norm) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let h = 1e-6;
    for trial in 0..100 {
        let n = 3 + trial % 6;
        let spec = separated_spectrum(&mut rng, n);
        let a = with_spectrum(&mut rng, &spec);
        let da = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let es = eigendecompose(&a, &thr).unwrap();
        let (du, dv) = eigenvector_derivatives(&es, &da, &thr).unwrap();
        let ep = eigendecompose(&(&a + &da * h), &thr).unwrap();
        let em = eigendecompose(&(&a - &da * h), &thr).unwrap();
        for i in 0..n {
            let dl = eigenvalue_derivative(&es, &da, i);
            let fd = (ep.lambdas[i] - em.lambdas[i]) / (2.0 * h);
            e_l = e_l.max((dl - fd).abs() / fd.abs().max(1.0));
            let ui = es.u.column(i).into_owned();
            let up = aligned(&ui, ep.u.column(i).into_owned());
            let um = aligned(&ui, em.u.column(i).into_owned());
            let fdu = (up - um) / (2.0 * h);
            e_u = e_u.max((du.column(i) - &fdu).amax() / fdu.amax().max(1.0));
            // left vectors follow the right ones through V = U^-T
            let s = if ui.dot(&ep.u.column(i)) < 0.0 { -1.0 } else { 1.0 };
            let t = if ui.dot(&em.u.column(i)) < 0.0 { -1.0 } else { 1.0 };
            let fdv = (ep.v.column(i) * s - em.v.column(i) * t) / (2.0 * h);
            e_v = e_v.max((dv.column(i) - &fdv).amax() / fdv.amax().max(1.0));
            let dnorm = dv.column(i).dot(&es.u.column(i)) + es.v.column(i).dot(&du.column(i));
            e_norm = e_norm.max(dnorm.abs());
        }
    }
    check(
        e_l < 1e-4 && e_u < 1e-4 && e_v < 1e-4 && e_norm < 1e-8,
        format!(
            "100 trials n=3..8: dlambda {e_l:.1e}, du {e_u:.1e}, dv {e_v:.1e}, d(v^T u) {e_norm:.1e} in {:.2} s",
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn adjugate_identities() -> Outcome {
    let thr = Thresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (mut e_cof, mut e_sing) = (0.0f64, 0.0f64);
    for trial in 0..60 {
        let n = 2 + trial % 4;
        let spec = separated_spectrum(&mut rng, n);
        let a = with_spectrum(&mut rng, &spec);
        let es = eigendecompose(&a, &thr).unwrap();
        let adj = adjugate_spectral(&es).unwrap();
        let cof = adjugate_cofactor(&a);
        e_cof = e_cof.max(rel_err(&adj, &cof));
        let mut sing = spec.clone();
        sing[0] = 0.0;
        let b = with_spectrum(&mut rng, &sing);
        let es = eigendecompose(&b, &thr).unwrap();
        let adj = adjugate_spectral(&es).unwrap();
        let prod = (&b * &adj).norm() / (adj.norm() * b.norm());
        e_sing = e_sing.max(prod);
    }
    check(
        e_cof < 1e-8 && e_sing < 1e-8,
        format!("spectral vs cofactor adjugate n<=5: {e_cof:.1e}; |A adj(A)| / (|A| |adj|) at singular A: {e_sing:.1e}"),
    )
}

/// Largest distance between the post-fault DAE path and the transformed path
/// over their common arclength, sampled at every DAE point.
fn path_gap(dae: &[DVector<f64>], tr: &[DVector<f64>]) -> (f64, f64) {
    let (ad, at) = (arclength(dae), arclength(tr));
    let common = ad[ad.len() - 1].min(at[at.len() - 1]);
    let mut gap = 0.0f64;
    for (k, s) in ad.iter().enumerate() {
        if *s > common {
            break;
        }
        gap = gap.max((&dae[k] - at_arclength(tr, &at, *s)).norm());
    }
    (gap, common)
}

fn transformation_equivalence() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    // angle instability: the machine slips against the source
    let smib = shipped::<f64>("smib", &ScenarioOptions { fault_duration: Some(0.5), ..Default::default() }).unwrap();
    // voltage instability: the load bus collapses on the first swing
    let sml = shipped::<f64>("single_machine_load", &ScenarioOptions::default()).unwrap();
    for (label, mut sc) in [("angle (smib)", smib), ("voltage (single_machine_load)", sml)] {
        // both paths are compared as polylines, so both are sampled densely
        sc.dt_max = 2e-4;
        let sc = &sc;
        let dae = simulate(sc).unwrap();
        let ci = dae.clearing_index.unwrap();
        let start = &dae.states[ci];
        let dae_pts: Vec<_> = dae.states[ci..].iter().map(|s| s.z()).collect();
        let t_last = dae.times[dae.len() - 1];
        let base = TransformedOptions { sign: dae.sign, h_max: 1e-4, ..TransformedOptions::default() };
        let sl = simulate_transformed(sc, Topology::PostFault, start, dae.times[ci], &TransformedOptions { t_stop: Some(t_last), stop_at_surface: true, ..base.clone() }).unwrap();
        let sl_pts: Vec<_> = sl.states.iter().map(|s| s.z()).collect();
        let (gap, common) = path_gap(&dae_pts, &sl_pts);
        let mut line = format!("{label}: DAE {} at t={t_last:.3}, path gap {gap:.1e} over arclength {common:.3}", dae.termination);
        ok &= gap < 1e-4;
        if dae.termination == Termination::SingularSurface {
            // run on past the surface in transformed time
            let tau_hit = *sl.tau.as_ref().unwrap().last().unwrap();
            let through = simulate_transformed(sc, Topology::PostFault, start, dae.times[ci], &TransformedOptions { tau_max: 1.1 * tau_hit, ..base.clone() }).unwrap();
            let l = &through.lambda1;
            let crossed = l.iter().any(|v| v.signum() != l[0].signum());
            let after = l.iter().filter(|v| v.signum() != l[0].signum()).count();
            let gmax = through.residual.iter().cloned().fold(0.0, f64::max);
            let finite = through.states.iter().all(|s| s.z().iter().all(|v| v.is_finite()));
            line += &format!(
                "; Sigma_lambda continues through lambda1=0 ({} samples past it, {}{}, max |g| {gmax:.1e})",
                after,
                through.termination,
                through.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
            );
            ok &= crossed && after > 5 && finite && gmax < 1e-6 && through.termination == Termination::Completed;
        } else {
            ok &= dae.termination == Termination::Divergence;
        }
        lines.push(line);
    }
    check(ok, lines.join(" | "))
}

fn lu_det(a: &DMatrix<f64>) -> f64 {
    a.clone().lu().determinant()
}

fn determinant_vs_eigenvalue() -> Outcome {
    let sc = three_machine_35();
    let thr = &sc.thresholds;
    let m0 = sc.model(Topology::PreFault);
    let d0 = m0.dyg(&sc.initial.y).unwrap();
    let (det0, l0) = (lu_det(&d0), eigendecompose(&d0, thr).unwrap().lambda1());
    let tr = simulate(&sc).unwrap();
    let hit = detect_singular_hit(&sc, &tr).unwrap();
    let m = sc.model(*tr.topology.last().unwrap());
    let d1 = m.dyg(&hit.z_sp.y).unwrap();
    let (det1, l1) = (lu_det(&d1), eigendecompose(&d1, thr).unwrap().lambda1());
    check(
        det0.abs() > 1e12 && (1.0..=100.0).contains(&l0.abs()) && l1.abs() < 1e-4 && det1.abs() > 1e8,
        format!("SEP: det {det0:.2e}, lambda1 {l0:.2e}; singular hit at t={:.4}: det {det1:.2e}, lambda1 {l1:.2e}", hit.t_hit),
    )
}

/// Feasible points on a grid over two coordinates around `z_cps`, each
/// restored onto the pseudo-equilibrium set with those coordinates fixed.
/// Returns the smallest distance to `z_sp` found, the grid step and the
/// number of feasible points.
fn grid_oracle(sc: &Scenario, topo: Topology, z_cps: &DVector<f64>, z_sp: &DVector<f64>, half: usize, step: f64) -> (f64, usize) {
    let m = sc.model(topo);
    let diff = z_cps - z_sp;
    let mut idx: Vec<usize> = (0..diff.len()).collect();
    idx.sort_by(|a, b| diff[*b].abs().partial_cmp(&diff[*a].abs()).unwrap());
    let (i, j) = (idx[0], idx[1]);
    let mut best = f64::INFINITY;
    let mut feasible = 0;
    let k = half as i64;
    for a in -k..=k {
        for b in -k..=k {
            let mut z = z_cps.clone();
            z[i] += a as f64 * step;
            z[j] += b as f64 * step;
            if let Ok(Some(r)) = restore_to_psi(&m, &z, &[i, j], 30) {
                feasible += 1;
                best = best.min((&r - z_sp).norm());
            }
        }
    }
    (best, feasible)
}

fn pseudo_saddle_pipeline() -> Outcome {
    let t0 = Instant::now();
    let sc = shipped::<f64>("single_machine_load", &ScenarioOptions::default()).unwrap();
    let tr = simulate(&sc).unwrap();
    let hit = detect_singular_hit(&sc, &tr).unwrap();
    let topo = *tr.topology.last().unwrap();
    let m = sc.model(topo);
    let ps = controlling_pseudo_saddle(&m, &hit, &SaddleOptions { sign: tr.sign, ..Default::default() }).map_err(|e| e.to_string())?;
    let thr = &sc.thresholds;
    let r = ps.residuals;
    let feasible = r.g_norm < thr.eps_g && r.lambda1.abs() < thr.eps_sing && r.kappa_norm < thr.eps_psi;
    let j = transformed_jacobian(&m, &ps.z_cps.x, &ps.z_cps.y, tr.sign, true, None).unwrap();
    let sp = split_spectrum(&j.j, thr.eps_eig_rel);
    let z_sp = hit.z_sp.z();
    let step = ps.distance / 10.0;
    let (best, n_feasible) = grid_oracle(&sc, topo, &ps.z_cps.z(), &z_sp, 3, step);
    let optimal = n_feasible > 0 && best >= ps.distance - step;
    let el = t0.elapsed();
    check(
        feasible && sp.positive.len() == 1 && sp.negative.len() == 1 && optimal && within(el, 300),
        format!(
            "residuals g {:.1e} lambda1 {:.1e} kappa {:.1e}; spectrum +{:?} -{:?}; distance {:.4}, grid best {:.4} over {n_feasible} feasible points (step {step:.4}); {:.1} s",
            r.g_norm,
            r.lambda1.abs(),
            r.kappa_norm,
            sp.positive,
            sp.negative,
            ps.distance,
            best,
            el.as_secs_f64()
        ),
    )
}

fn semi_singular_sign() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let runs = [
        ("single_machine_load", shipped::<f64>("single_machine_load", &ScenarioOptions::default()).unwrap()),
        ("three_machine", three_machine_35()),
    ];
    for (name, sc) in runs {
        let tr = simulate(&sc).unwrap();
        let hit = detect_singular_hit(&sc, &tr).unwrap();
        let m = sc.model(*tr.topology.last().unwrap());
        let pts = sample_near_singular(&m, &hit.z_sp, 50, 1e-3, &mut rng).unwrap();
        let vals: Vec<f64> = pts.iter().map(|p| semi_singular_scalar(&m, &p.y).unwrap().exact).collect();
        let min_abs = vals.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let same = vals.iter().all(|v| v.signum() == vals[0].signum());
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |a, v| (a.0.min(*v), a.1.max(*v)));
        ok &= vals.len() == 50 && min_abs > sc.thresholds.eps_xi && same;
        lines.push(format!("{name}: {} points, (D_y lambda1) u1 in [{lo:.3e}, {hi:.3e}]", vals.len()));
    }
    check(ok, lines.join(" | "))
}

fn margin_ordering() -> Outcome {
    let sc = three_machine_35();
    let tr = simulate(&sc).unwrap();
    let hit = detect_singular_hit(&sc, &tr).unwrap();
    let m = sc.model(*tr.topology.last().unwrap());
    let ps = controlling_pseudo_saddle(&m, &hit, &SaddleOptions { sign: tr.sign, ..Default::default() }).map_err(|e| e.to_string())?;
    let sep = post_fault_equilibrium(&sc).unwrap();
    let model = build_manifold(&ps.z_cps.z(), ps.mu_unstable, &ps.eta, &sep);
    let ms = margin_series(&tr, &sep, &model).unwrap();
    let cv0 = ms.cv_zero_crossing();
    let l0 = ms.lambda1_crossing(sc.thresholds.eps_sing);
    let ok = matches!((cv0, l0), (Some(a), Some(b)) if a < b);
    check(ok, format!("C_V zero crossing at {cv0:?} s, lambda1 crossing at {l0:?} s"))
}

fn cct_threads() -> usize {
    std::env::var("VOLTBOUND_THREADS").ok().and_then(|s| s.parse().ok()).unwrap_or(2).max(1)
}

fn cct_ordering() -> Outcome {
    let t0 = Instant::now();
    let levels = [4.0, 5.0, 6.0];
    let opts = CctOptions { threads: cct_threads(), ..CctOptions::default() };
    let mut table: Vec<(f64, f64, f64)> = Vec::new();
    for p in levels {
        let run = |stem: &str| -> Result<f64, String> {
            let sc = shipped::<f64>(stem, &ScenarioOptions { converter_p: Some(p), ..Default::default() }).map_err(|e| e.to_string())?;
            let c = compute_cct_with(&sc, 0.0, 1.0, &opts).map_err(|e| format!("{stem} at {p}: {e}"))?;
            if c.inverted {
                return Err(format!("{stem} at {p}: inverted bisection history"));
            }
            Ok(c.cct)
        };
        table.push((p, run("three_machine_gfl")?, run("three_machine_gfm")?));
    }
    let gfm_wins = table.iter().all(|r| r.2 > r.1);
    let mono = table.windows(2).all(|w| w[1].1 >= w[0].1 && w[1].2 >= w[0].2);
    let el = t0.elapsed();
    let rows: Vec<String> = table.iter().map(|r| format!("P={} GFL {:.4} GFM {:.4}", r.0, r.1, r.2)).collect();
    check(gfm_wins && mono && within(el, 600), format!("{}; {:.1} s", rows.join(", "), el.as_secs_f64()))
}

/// Critical clearing time of the classical SMIB from the equal-area
/// criterion. Reactances are read off the fixture: x'_d + XA = 0.4 before
/// the fault point, the two 0.5 lines plus the 0.05 source reactance after
/// it, and the 1e4 fault shunt. The fault-on swing time to the critical angle
/// comes from Simpson quadrature of `dt = d delta / omega` with a
/// square-root substitution for the start-point singularity.
fn eac_cct(e: f64, d0: f64, pm: f64, m: f64, w0: f64) -> f64 {
    let (x1, x2, xf) = (0.4, 0.3, 1e-4);
    let p_fault = e / (x1 + x2 + x1 * x2 / xf);
    let p_post = e / (x1 + 0.5 + 0.05);
    let d_max = std::f64::consts::PI - (pm / p_post).asin();
    let cos_dc = (pm * (d_max - d0) + p_post * d_max.cos() - p_fault * d0.cos()) / (p_post - p_fault);
    let dc = cos_dc.acos();
    let work = |d: f64| pm * (d - d0) + p_fault * (d.cos() - d0.cos());
    let smax = (dc - d0).sqrt();
    let f = |s: f64| {
        if s == 0.0 {
            2.0 / (2.0 * w0 * (pm - p_fault * d0.sin()) / m).sqrt()
        } else {
            2.0 * s / (2.0 * w0 * work(d0 + s * s) / m).sqrt()
        }
    };
    let n = 4000;
    let h = smax / n as f64;
    let mut acc = f(0.0) + f(smax);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn smib_equal_area() -> Outcome {
    let sc = shipped::<f64>("smib", &ScenarioOptions::default()).unwrap();
    let l = sc.devices.layout();
    let (d0, e) = (sc.initial.x[l.delta(0)], sc.initial.x[l.e(0)]);
    let oracle = eac_cct(e, d0, 0.8, 6.0, 2.0 * std::f64::consts::PI * 60.0);
    let c = compute_cct_with(&sc, 0.01, 0.6, &CctOptions { threads: cct_threads(), ..CctOptions::default() }).map_err(|e| e.to_string())?;
    check(
        (c.cct - oracle).abs() < 0.01 && !c.inverted,
        format!("bisection CCT {:.4} s [{:.4}, {:.4}], equal-area {oracle:.4} s", c.cct, c.lo, c.hi),
    )
}

fn manifold_error_law() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let runs = [
        ("single_machine_load", shipped::<f64>("single_machine_load", &ScenarioOptions::default()).unwrap()),
        ("three_machine", three_machine_35()),
    ];
    for (name, sc) in runs {
        let tr = simulate(&sc).unwrap();
        let hit = detect_singular_hit(&sc, &tr).unwrap();
        let m = sc.model(*tr.topology.last().unwrap());
        let ps = controlling_pseudo_saddle(&m, &hit, &SaddleOptions { sign: tr.sign, ..Default::default() }).map_err(|e| e.to_string())?;
        let sep = post_fault_equilibrium(&sc).unwrap();
        let model = build_manifold(&ps.z_cps.z(), ps.mu_unstable, &ps.eta, &sep);
        let samples = stable_manifold_samples(&m, &model, tr.sign, &ManifoldSampling::default()).unwrap();
        let slope = error_law_slope(&samples);
        ok &= matches!(slope, Some(s) if s >= 1.8);
        lines.push(format!("{name}: slope {:.3} from {} samples", slope.unwrap_or(f64::NAN), samples.len()));
    }
    check(ok, lines.join(" | "))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("Jacobian finite-difference oracles", jacobian_oracles),
        ("eigenvalue and eigenvector derivatives", eigen_derivatives),
        ("adjugate identities", adjugate_identities),
        ("DAE and Sigma_lambda path equivalence", transformation_equivalence),
        ("determinant vs minimum-modulus eigenvalue", determinant_vs_eigenvalue),
        ("controlling pseudo-saddle pipeline", pseudo_saddle_pipeline),
        ("semi-singular scalar sign", semi_singular_sign),
        ("C_V crosses zero before lambda1", margin_ordering),
        ("CCT ordering GFM vs GFL", cct_ordering),
        ("SMIB CCT vs equal-area criterion", smib_equal_area),
        ("second-order manifold error law", manifold_error_law),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let res = std::panic::catch_unwind(run).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match res {
            Ok(d) => println!("PASS criterion {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {:>2} {name}: {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
