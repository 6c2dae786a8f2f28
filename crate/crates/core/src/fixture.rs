//! Scenario files.
//!
//! A scenario is a TOML document describing the full (unreduced) network, the
//! devices, the loads, an optional fixed voltage source, the fault and the
//! simulation horizon. All quantities are per unit on the system base; times
//! are seconds.
//!
//! ```toml
//! name = "example"
//! frequency = 60.0            # Hz
//!
//! [[line]]
//! name = "L1"                 # needed only for lines tripped by the fault
//! from = 1
//! to = 2
//! r = 0.0
//! x = 0.2
//! b = 0.0                     # total charging susceptance
//!
//! [[machine]]                 # classical flux-decay machine with exciter
//! bus = 1
//! p = 0.8                     # dispatch
//! v = 1.02                    # terminal voltage setpoint
//! m = 0.05
//! d = 0.0
//! td0 = 6.0
//! xd = 1.0
//! xd_prime = 0.25
//! ta = 0.05
//! ka = 50.0
//!
//! [[gfm]]                     # grid-forming converter (VSM)
//! bus = 3
//! p = 1.0
//! v = 1.0
//! m = 0.05
//! d = 0.5
//! ki = 0.1
//! tu = 0.05
//! kq = 1.0
//! xl = 0.15
//!
//! [[gfl]]                     # grid-following converter, constant power
//! bus = 3
//! p = 1.0
//! q = 0.0
//!
//! [[load]]
//! bus = 2
//! p = 0.8
//! q = 0.3
//! rho = 0.4                   # constant-power share
//!
//! [source]                    # fixed EMF behind a reactance
//! bus = 4
//! v = 1.0
//! angle = 0.0                 # rad
//! x = 0.05
//!
//! [fault]
//! bus = 2                     # omit for a pure line trip
//! start = 0.2
//! duration = 0.06
//! shunt = 1e4                 # fault susceptance magnitude
//! trip = ["L1"]               # lines removed at clearing
//!
//! [sim]
//! t_end = 5.0
//! dt_max = 0.01
//! ```
//!
//! Retained buses are ordered device terminals first (machines, then
//! grid-forming converters), followed by load, grid-following and source
//! buses in ascending label order. All other buses are eliminated.

use crate::config::Thresholds;
use crate::device_dynamics::{Device, DeviceSet, GfmParams, MachineParams};
use crate::error::{Error, Result};
use crate::grid_model::{build_constant_impedance_loads, kron_reduce, PowerNetwork};
use crate::model::{Model, SystemState};
use crate::powerflow::{injections, solve_power_flow, BusKind, PfBus};
use crate::scalar::{c, cabs, carg, Real};
use crate::simulator::Scenario;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::Deserialize;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub name: String,
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    #[serde(default)]
    pub line: Vec<LineSpec>,
    #[serde(default)]
    pub shunt: Vec<ShuntSpec>,
    #[serde(default)]
    pub machine: Vec<MachineSpec>,
    #[serde(default)]
    pub gfm: Vec<GfmSpec>,
    #[serde(default)]
    pub gfl: Vec<GflSpec>,
    #[serde(default)]
    pub load: Vec<LoadSpec>,
    pub source: Option<SourceSpec>,
    pub fault: Option<FaultSpec>,
    pub sim: SimSpec,
}

fn default_frequency() -> f64 {
    60.0
}

fn default_shunt() -> f64 {
    1e4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub name: Option<String>,
    pub from: u32,
    pub to: u32,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuntSpec {
    pub bus: u32,
    #[serde(default)]
    pub g: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineSpec {
    pub bus: u32,
    pub p: f64,
    pub v: f64,
    pub m: f64,
    #[serde(default)]
    pub d: f64,
    pub td0: f64,
    pub xd: f64,
    pub xd_prime: f64,
    pub ta: f64,
    pub ka: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfmSpec {
    pub bus: u32,
    pub p: f64,
    pub v: f64,
    pub m: f64,
    #[serde(default)]
    pub d: f64,
    pub ki: f64,
    pub tu: f64,
    pub kq: f64,
    pub xl: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GflSpec {
    pub bus: u32,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub bus: u32,
    pub p: f64,
    pub q: f64,
    #[serde(default)]
    pub rho: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub bus: u32,
    pub v: f64,
    #[serde(default)]
    pub angle: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub bus: Option<u32>,
    pub start: f64,
    pub duration: f64,
    #[serde(default = "default_shunt")]
    pub shunt: f64,
    #[serde(default)]
    pub trip: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub t_end: f64,
    pub dt_max: f64,
}

/// Adjustments applied while building a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioOptions {
    /// Overrides the constant-power share of every load.
    pub rho: Option<f64>,
    /// Overrides the fault duration.
    pub fault_duration: Option<f64>,
    /// Overrides the active output of every converter (grid-forming and
    /// grid-following).
    pub converter_p: Option<f64>,
    pub thresholds: Option<Thresholds>,
}

impl FixtureSpec {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Directory of the scenario files shipped with the crate.
pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Loads a shipped scenario by file stem.
pub fn shipped<T: Real>(stem: &str, opts: &ScenarioOptions) -> Result<Scenario<T>> {
    load_scenario(&fixtures_dir().join(format!("{stem}.toml")), opts)
}

pub fn load_scenario<T: Real>(path: &Path, opts: &ScenarioOptions) -> Result<Scenario<T>> {
    build_scenario(&FixtureSpec::load(path)?, opts)
}

pub fn parse_scenario<T: Real>(text: &str, opts: &ScenarioOptions) -> Result<Scenario<T>> {
    build_scenario(&FixtureSpec::parse(text)?, opts)
}

type C<T> = Complex<T>;

fn cx<T: Real>(re: f64, im: f64) -> C<T> {
    C::new(c(re), c(im))
}

fn add_branch<T: Real>(y: &mut DMatrix<C<T>>, i: usize, j: usize, adm: C<T>, half_b: C<T>) {
    y[(i, i)] += adm + half_b;
    y[(j, j)] += adm + half_b;
    y[(i, j)] -= adm;
    y[(j, i)] -= adm;
}

struct DeviceRef {
    bus: usize,
    p: f64,
    v: f64,
    x: f64,
}

/// Builds the three networks and the pre-fault equilibrium.
pub fn build_scenario<T: Real>(spec: &FixtureSpec, opts: &ScenarioOptions) -> Result<Scenario<T>> {
    // bus labels
    let mut labels = BTreeSet::new();
    for l in &spec.line {
        labels.insert(l.from);
        labels.insert(l.to);
    }
    spec.machine.iter().for_each(|d| {
        labels.insert(d.bus);
    });
    spec.gfm.iter().for_each(|d| {
        labels.insert(d.bus);
    });
    spec.gfl.iter().for_each(|d| {
        labels.insert(d.bus);
    });
    spec.load.iter().for_each(|d| {
        labels.insert(d.bus);
    });
    spec.shunt.iter().for_each(|d| {
        labels.insert(d.bus);
    });
    if let Some(s) = &spec.source {
        labels.insert(s.bus);
    }
    let index: BTreeMap<u32, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let n = index.len();
    let idx = |b: u32| index[&b];
    if let Some(f) = &spec.fault {
        if let Some(b) = f.bus {
            if !index.contains_key(&b) {
                return Err(Error::Parse(format!("fault bus {b} is not in the network")));
            }
        }
    }

    // devices
    let mut devs: Vec<DeviceRef> = Vec::new();
    let conv_p = |p: f64| opts.converter_p.unwrap_or(p);
    for m in &spec.machine {
        devs.push(DeviceRef { bus: idx(m.bus), p: m.p, v: m.v, x: m.xd_prime });
    }
    for g in &spec.gfm {
        devs.push(DeviceRef { bus: idx(g.bus), p: conv_p(g.p), v: g.v, x: g.xl });
    }
    let dev_buses: BTreeSet<usize> = devs.iter().map(|d| d.bus).collect();
    if dev_buses.len() != devs.len() {
        return Err(Error::Parse("two devices share a terminal bus".into()));
    }
    for l in &spec.load {
        if dev_buses.contains(&idx(l.bus)) {
            return Err(Error::Parse(format!("load at device terminal bus {}", l.bus)));
        }
    }
    for g in &spec.gfl {
        if dev_buses.contains(&idx(g.bus)) {
            return Err(Error::Parse(format!("grid-following converter at device terminal bus {}", g.bus)));
        }
    }
    if devs.is_empty() {
        return Err(Error::Parse("scenario has no machine or grid-forming converter".into()));
    }

    // line admittances
    let mut names = BTreeSet::new();
    for l in &spec.line {
        if l.x == 0.0 && l.r == 0.0 {
            return Err(Error::Parse(format!("line {}-{} has zero impedance", l.from, l.to)));
        }
        if let Some(nm) = &l.name {
            if !names.insert(nm.clone()) {
                return Err(Error::Parse(format!("duplicate line name {nm}")));
            }
        }
    }
    let line_adm = |l: &LineSpec| -> (C<T>, C<T>) {
        let z = C::new(c::<T>(l.r), c::<T>(l.x));
        (C::new(T::one(), T::zero()) / z, cx(0.0, l.b / 2.0))
    };
    let mut y_lines = DMatrix::<C<T>>::zeros(n, n);
    for l in &spec.line {
        let (a, h) = line_adm(l);
        add_branch(&mut y_lines, idx(l.from), idx(l.to), a, h);
    }
    for s in &spec.shunt {
        let i = idx(s.bus);
        y_lines[(i, i)] += cx(s.g, s.b);
    }

    // power flow, with the source EMF as an extra slack node
    let ext = spec.source.is_some() as usize;
    let npf = n + ext;
    let mut y_pf = DMatrix::<C<T>>::zeros(npf, npf);
    y_pf.view_mut((0, 0), (n, n)).copy_from(&y_lines);
    let mut pf: Vec<PfBus<T>> = (0..npf)
        .map(|_| PfBus { kind: BusKind::Pq, p: T::zero(), q: T::zero(), v: T::one(), angle: T::zero() })
        .collect();
    for l in &spec.load {
        let i = idx(l.bus);
        pf[i].p -= c(l.p);
        pf[i].q -= c(l.q);
    }
    for g in &spec.gfl {
        let i = idx(g.bus);
        pf[i].p += c(conv_p(g.p));
        pf[i].q += c(g.q);
    }
    for d in &devs {
        pf[d.bus] = PfBus { kind: BusKind::Pv, p: c(d.p), q: T::zero(), v: c(d.v), angle: T::zero() };
    }
    if let Some(s) = &spec.source {
        let i = idx(s.bus);
        let a = C::new(T::one(), T::zero()) / cx::<T>(0.0, s.x);
        add_branch(&mut y_pf, n, i, a, C::new(T::zero(), T::zero()));
        pf[n] = PfBus { kind: BusKind::Slack, p: T::zero(), q: T::zero(), v: c(s.v), angle: c(s.angle) };
    } else {
        let b = devs[0].bus;
        pf[b].kind = BusKind::Slack;
        pf[b].angle = T::zero();
    }
    let v_pf = solve_power_flow(&y_pf, &pf, 1e-12, 50)?;
    let s_pf = injections(&y_pf, &v_pf);
    let v_bus = v_pf.rows(0, n).into_owned();

    // retained ordering
    let mut retained: Vec<usize> = devs.iter().map(|d| d.bus).collect();
    let mut rest = BTreeSet::new();
    for l in &spec.load {
        rest.insert(idx(l.bus));
    }
    for g in &spec.gfl {
        rest.insert(idx(g.bus));
    }
    if let Some(s) = &spec.source {
        rest.insert(idx(s.bus));
    }
    for r in rest {
        if !dev_buses.contains(&r) {
            retained.push(r);
        }
    }
    let nb = retained.len();
    let pos: BTreeMap<usize, usize> = retained.iter().enumerate().map(|(k, b)| (*b, k)).collect();

    // loads
    let mut s_l = vec![C::new(T::zero(), T::zero()); n];
    let mut rho_bus = vec![T::zero(); n];
    let mut weight = vec![T::zero(); n];
    for l in &spec.load {
        let i = idx(l.bus);
        let rho = opts.rho.unwrap_or(l.rho);
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::Parse(format!("rho {rho} outside [0, 1]")));
        }
        let s = cx::<T>(l.p, l.q);
        s_l[i] += s;
        // share weighted by apparent power when several loads sit on one bus
        rho_bus[i] += c::<T>(rho) * cabs(s);
        weight[i] += cabs(s);
    }
    for i in 0..n {
        if weight[i] > T::zero() {
            rho_bus[i] /= weight[i];
        }
    }
    let yz = build_constant_impedance_loads(&s_l, &rho_bus, v_bus.as_slice())?;

    // full admittance with device, source and impedance-load shunts
    let mut y_full = y_lines.clone();
    for d in &devs {
        y_full[(d.bus, d.bus)] += C::new(T::one(), T::zero()) / cx::<T>(0.0, d.x);
    }
    let mut source = DVector::from_element(nb, C::new(T::zero(), T::zero()));
    if let Some(s) = &spec.source {
        let i = idx(s.bus);
        let zs = cx::<T>(0.0, s.x);
        y_full[(i, i)] += C::new(T::one(), T::zero()) / zs;
        let e = C::new(c::<T>(s.v * s.angle.cos()), c::<T>(s.v * s.angle.sin()));
        source[pos[&i]] = e / zs;
    }
    for i in 0..n {
        y_full[(i, i)] += yz[i];
    }

    let mut y_fault = y_full.clone();
    let mut y_post = y_full.clone();
    let (fault_start, mut fault_duration) = match &spec.fault {
        Some(f) => (f.start, f.duration),
        None => (0.0, 0.0),
    };
    if let Some(d) = opts.fault_duration {
        fault_duration = d;
    }
    if let Some(f) = &spec.fault {
        if let Some(b) = f.bus {
            let i = idx(b);
            y_fault[(i, i)] += cx::<T>(0.0, -f.shunt);
        }
        for t in &f.trip {
            let l = spec
                .line
                .iter()
                .find(|l| l.name.as_deref() == Some(t.as_str()))
                .ok_or_else(|| Error::Parse(format!("tripped line {t} not found")))?;
            let (a, h) = line_adm(l);
            add_branch(&mut y_post, idx(l.from), idx(l.to), -a, -h);
        }
    }

    // constant-power injections on retained buses
    let mut p = DVector::zeros(nb);
    let mut q = DVector::zeros(nb);
    let mut rho_r = DVector::zeros(nb);
    let mut yz_r = DVector::from_element(nb, C::new(T::zero(), T::zero()));
    for (k, &b) in retained.iter().enumerate() {
        p[k] = -rho_bus[b] * s_l[b].re;
        q[k] = -rho_bus[b] * s_l[b].im;
        rho_r[k] = rho_bus[b];
        yz_r[k] = yz[b];
    }
    for g in &spec.gfl {
        let k = pos[&idx(g.bus)];
        p[k] += c(conv_p(g.p));
        q[k] += c(g.q);
    }

    let omega0 = c::<T>(2.0 * std::f64::consts::PI * spec.frequency);
    let x_int: Vec<T> = devs.iter().map(|d| c(d.x)).collect();
    let mk = |y: &DMatrix<C<T>>| -> Result<PowerNetwork<T>> {
        let red = kron_reduce(y, &retained)?;
        PowerNetwork::from_admittance(&red, &x_int, p.clone(), q.clone(), rho_r.clone(), yz_r.clone(), source.clone(), omega0)
    };
    let pre = mk(&y_full)?;
    let fault_on = mk(&y_fault)?;
    let post = mk(&y_post)?;

    // device parameters and initial states
    let nd = devs.len();
    let mut x0 = DVector::zeros(4 * nd);
    let mut devices = Vec::with_capacity(nd);
    let mut k = 0;
    let init = |bus: usize, xp: f64| -> (T, T, T, T, T) {
        let v = v_pf[bus];
        let s = s_pf[bus];
        let i = (s / v).conj();
        let e = v + cx::<T>(0.0, xp) * i;
        let (em, delta) = (cabs(e), carg(e));
        let t = crate::device_dynamics::terminal(delta, em, v.re, v.im, c(xp));
        (delta, em, t.id, t.pe, t.qe)
    };
    for m in &spec.machine {
        let (delta, e, id, pe, _) = init(idx(m.bus), m.xd_prime);
        let efd = e + c::<T>(m.xd - m.xd_prime) * id;
        let vmag = cabs(v_pf[idx(m.bus)]);
        devices.push(Device::Machine(MachineParams {
            m: c(m.m),
            d: c(m.d),
            td0: c(m.td0),
            xd: c(m.xd),
            xd_prime: c(m.xd_prime),
            ta: c(m.ta),
            ka: c(m.ka),
            vref: vmag + efd / c(m.ka),
            pm: pe,
        }));
        x0[k] = delta;
        x0[2 * nd + k] = e;
        x0[3 * nd + k] = efd;
        k += 1;
    }
    for g in &spec.gfm {
        let (delta, e, _, pe, qe) = init(idx(g.bus), g.xl);
        let vmag = cabs(v_pf[idx(g.bus)]);
        devices.push(Device::Gfm(GfmParams {
            m: c(g.m),
            d: c(g.d),
            ki: c(g.ki),
            tu: c(g.tu),
            kq: c(g.kq),
            pref: pe,
            qref: qe,
            vref: vmag,
            xl: c(g.xl),
        }));
        x0[k] = delta;
        x0[2 * nd + k] = e;
        k += 1;
    }
    let devices = DeviceSet::new(devices, omega0)?;
    let mut y0 = DVector::zeros(2 * nb);
    for (k, &b) in retained.iter().enumerate() {
        y0[k] = v_pf[b].re;
        y0[nb + k] = v_pf[b].im;
    }

    let thresholds = opts.thresholds.clone().unwrap_or_default();
    let sc = Scenario {
        name: spec.name.clone(),
        pre_fault: pre,
        fault_on,
        post_fault: post,
        devices,
        fault_start: c(fault_start),
        fault_duration: c(fault_duration),
        t_end: c(spec.sim.t_end),
        dt_max: c(spec.sim.dt_max),
        constant_power_share: c(opts.rho.unwrap_or_else(|| spec.load.first().map(|l| l.rho).unwrap_or(0.0))),
        initial: SystemState::new(x0, y0),
        thresholds,
        bus_labels: retained.iter().map(|b| labels.iter().nth(*b).unwrap().to_string()).collect(),
    };
    sc.validate()?;
    let m = Model::new(&sc.pre_fault, &sc.devices, &sc.thresholds)?;
    let f = m.f(&sc.initial.x, &sc.initial.y)?.amax().as_f64();
    let g = m.g(&sc.initial.x, &sc.initial.y)?.amax().as_f64();
    if f > 1e-8 || g > 1e-8 {
        return Err(Error::InvalidInitialCondition { f_norm: f, g_norm: g });
    }
    Ok(sc)
}

#[cfg(test)]
pub(crate) const TWO_BUS_TOML: &str = r#"
name = "two-bus"
[[line]]
name = "L"
from = 1
to = 2
x = 0.3
[[machine]]
bus = 1
p = 0.5
v = 1.0
m = 0.1
td0 = 5.0
xd = 1.0
xd_prime = 0.3
ta = 0.05
ka = 20.0
[[load]]
bus = 2
p = 0.5
q = 0.1
rho = 0.5
[sim]
t_end = 1.0
dt_max = 0.01
"#;
