//! Stability verdicts and critical-clearing-time bisection.

use super::{angle_excursion, find_equilibrium, simulate_with, Scenario, SimSettings, Termination, Topology, Trajectory};
use crate::error::{Error, Result};
use crate::model::SystemState;
use crate::scalar::{c, Real};
use nalgebra::DVector;

/// Post-fault stable equilibrium, found by Newton from the pre-fault one.
pub fn post_fault_equilibrium<T: Real>(sc: &Scenario<T>) -> Result<SystemState<T>> {
    find_equilibrium(&sc.model(Topology::PostFault), &sc.initial, 1e-10)
}

/// Outcome of one fault-duration trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub stable: bool,
    pub termination: Termination,
    /// Least-squares slope of `ln |x - x_s|` over the last 20% of the run
    /// (1/s). Infinite when the run did not complete.
    pub decay_slope: f64,
    /// Peak of `|x - x_s|` over the last tenth of the run divided by the peak
    /// over the tenth before it.
    pub envelope_ratio: f64,
}

/// Differential state with angles taken relative to the centre of angle when
/// there is no fixed source.
fn frame<T: Real>(sc: &Scenario<T>, x: &DVector<T>) -> DVector<T> {
    let mut v = x.clone();
    if !sc.has_reference() {
        let l = sc.devices.layout();
        let mut num = T::zero();
        let mut den = T::zero();
        for (k, d) in sc.devices.devices.iter().enumerate() {
            num += d.inertia() * x[l.delta(k)];
            den += d.inertia();
        }
        for k in 0..sc.devices.len() {
            v[l.delta(k)] -= num / den;
        }
    }
    v
}

/// Stable when the run completed and the distance to the post-fault SEP is
/// not growing over the last 20% of the horizon: either the regression of
/// the log distance on time has negative slope (robust to beating between
/// modes) or the peak over the final tenth is no more than 5% above the peak
/// over the tenth before (bounded undamped swings).
pub fn is_stable<T: Real>(sc: &Scenario<T>, traj: &Trajectory<T>, sep: &SystemState<T>) -> Verdict {
    if traj.termination != Termination::Completed || traj.is_empty() {
        return Verdict { stable: false, termination: traj.termination, decay_slope: f64::INFINITY, envelope_ratio: f64::INFINITY };
    }
    let t_end = traj.times[traj.len() - 1].as_f64();
    let span = t_end - sc.fault_end().as_f64();
    let (a0, a1) = (t_end - 0.2 * span, t_end - 0.1 * span);
    let xs = frame(sc, &sep.x);
    let (mut n, mut st, mut sl, mut stt, mut stl) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    let (mut ea, mut eb) = (0.0f64, 0.0f64);
    for (t, s) in traj.times.iter().zip(&traj.states) {
        let t = t.as_f64();
        if t < a0 {
            continue;
        }
        let d = (frame(sc, &s.x) - &xs).norm().as_f64();
        if t < a1 {
            ea = ea.max(d);
        } else {
            eb = eb.max(d);
        }
        let l = d.max(1e-300).ln();
        n += 1.0;
        st += t;
        sl += l;
        stt += t * t;
        stl += t * l;
    }
    let den = n * stt - st * st;
    let slope = if n >= 2.0 && den > 0.0 { (n * stl - st * sl) / den } else { 0.0 };
    let ratio = if ea > 0.0 { eb / ea } else if eb > 0.0 { f64::INFINITY } else { 0.0 };
    Verdict {
        stable: eb < 1e-6 || slope < 0.0 || ratio <= 1.05,
        termination: traj.termination,
        decay_slope: slope,
        envelope_ratio: ratio,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CctOptions {
    /// Bisection stops once the bracket is no wider than this (s).
    pub tol: f64,
    /// Worker threads for the two bracket checks.
    pub threads: usize,
    pub sim: SimSettings,
}

impl Default for CctOptions {
    fn default() -> Self {
        Self { tol: 0.005, threads: 1, sim: SimSettings::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Cct {
    /// Last bisection midpoint (s).
    pub cct: f64,
    /// Largest duration judged stable (s).
    pub lo: f64,
    /// Smallest duration judged unstable (s).
    pub hi: f64,
    /// `(duration, verdict)` in evaluation order, bracket ends first.
    pub history: Vec<(f64, Verdict)>,
    /// A stable verdict was seen above an unstable one.
    pub inverted: bool,
}

fn trial<T: Real>(sc: &Scenario<T>, sep: &SystemState<T>, duration: f64, set: &SimSettings) -> Result<Verdict> {
    let s = sc.with_fault_duration(c(duration));
    let traj = simulate_with(&s, set)?;
    let mut v = is_stable(&s, &traj, sep);
    if v.stable && angle_excursion(&s, &traj.states[traj.len() - 1].x) > c(set.angle_limit) {
        v.stable = false;
    }
    Ok(v)
}

/// Bisection on the fault duration with the default options and tolerance
/// `tol`.
pub fn compute_cct<T: Real>(sc: &Scenario<T>, t_lo: f64, t_hi: f64, tol: f64) -> Result<Cct> {
    compute_cct_with(sc, t_lo, t_hi, &CctOptions { tol, ..CctOptions::default() })
}

pub fn compute_cct_with<T: Real>(sc: &Scenario<T>, t_lo: f64, t_hi: f64, opts: &CctOptions) -> Result<Cct> {
    if !(t_lo >= 0.0 && t_hi > t_lo && opts.tol > 0.0) {
        return Err(Error::BracketInvalid { detail: format!("need 0 <= t_lo < t_hi and tol > 0, got [{t_lo}, {t_hi}], tol {}", opts.tol) });
    }
    let sep = post_fault_equilibrium(sc)?;
    let (v_lo, v_hi) = if opts.threads > 1 {
        std::thread::scope(|s| {
            let a = s.spawn(|| trial(sc, &sep, t_lo, &opts.sim));
            let b = trial(sc, &sep, t_hi, &opts.sim);
            (a.join().unwrap_or_else(|_| Err(Error::InvalidParameter("worker panicked".into()))), b)
        })
    } else {
        (trial(sc, &sep, t_lo, &opts.sim), trial(sc, &sep, t_hi, &opts.sim))
    };
    let (v_lo, v_hi) = (v_lo?, v_hi?);
    if !v_lo.stable || v_hi.stable {
        return Err(Error::BracketInvalid {
            detail: format!(
                "duration {t_lo} is {} ({}), duration {t_hi} is {} ({})",
                if v_lo.stable { "stable" } else { "unstable" },
                v_lo.termination,
                if v_hi.stable { "stable" } else { "unstable" },
                v_hi.termination
            ),
        });
    }
    let mut history = vec![(t_lo, v_lo), (t_hi, v_hi)];
    let (mut lo, mut hi) = (t_lo, t_hi);
    let mut mid;
    loop {
        mid = 0.5 * (lo + hi);
        if hi - lo <= opts.tol && history.len() > 2 {
            break;
        }
        let v = trial(sc, &sep, mid, &opts.sim)?;
        if v.stable {
            lo = mid;
        } else {
            hi = mid;
        }
        history.push((mid, v));
        if hi - lo <= opts.tol {
            break;
        }
    }
    let max_stable = history.iter().filter(|h| h.1.stable).map(|h| h.0).fold(f64::NEG_INFINITY, f64::max);
    let min_unstable = history.iter().filter(|h| !h.1.stable).map(|h| h.0).fold(f64::INFINITY, f64::min);
    Ok(Cct { cct: mid, lo, hi, history, inverted: max_stable > min_unstable })
}
