//! `voltbound` command-line tool.
//!
//! Every subcommand reads one scenario, runs its pipeline entirely in memory
//! and only then writes its files into `--out`, so a failed run leaves no
//! partial output behind.

mod output;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use output::{fmt_num, Artifact, Meta};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use voltbound::anchor_solver::{controlling_pseudo_saddle, detect_singular_hit, SaddleOptions};
use voltbound::fixture::{fixtures_dir, load_scenario, ScenarioOptions};
use voltbound::manifold_margin::{build_manifold, margin_series, stability_margin};
use voltbound::simulator::{compute_cct_with, post_fault_equilibrium, simulate, CctOptions, Topology};
use voltbound::singularity::classify;
use voltbound::{ErrorFamily, Scenario, Thresholds, Trajectory};

/// Environment variable capping the worker threads of the CCT search.
const THREADS_ENV: &str = "VOLTBOUND_THREADS";

#[derive(Parser, Debug)]
#[command(name = "voltbound", version, about = "Voltage-stability boundary analysis for power-system DAE models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Time-domain fault simulation; writes trajectory.csv and trajectory.meta.
    Simulate(Common),
    /// Controlling pseudo-saddle of a run that reaches the singular surface.
    Saddle(Common),
    /// C_V margin along the post-fault trajectory.
    Margin(Common),
    /// Critical clearing time by bisection on the fault duration.
    Cct {
        #[command(flatten)]
        common: Common,
        /// Lower end of the bracket (s), must be stable.
        #[arg(long, default_value_t = 0.0)]
        lo: f64,
        /// Upper end of the bracket (s), must be unstable.
        #[arg(long, default_value_t = 1.0)]
        hi: f64,
        /// Bracket width at which bisection stops (s).
        #[arg(long, default_value_t = 0.005)]
        tol: f64,
    },
    /// Singularity classification of every trajectory sample.
    Report {
        #[command(flatten)]
        common: Common,
        /// Classify every n-th sample only.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Scenario file, or the stem of a shipped scenario (e.g. `smib`).
    #[arg(long)]
    scenario: String,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Threshold or scenario override; repeatable. Scenario keys are rho,
    /// fault_duration, converter_p, t_end and dt_max.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for randomized restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<voltbound::Error>()).map(|e| e.family()) {
        Some(ErrorFamily::Parse) => 2,
        Some(ErrorFamily::Numeric) => 3,
        Some(ErrorFamily::NonConvergence) => 4,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn resolve_path(s: &str) -> PathBuf {
    let p = Path::new(s);
    if p.exists() || s.contains(['/', '.']) {
        p.to_path_buf()
    } else {
        fixtures_dir().join(format!("{s}.toml"))
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.trim().parse::<f64>().map_err(|e| voltbound::Error::Parse(format!("{key}={v}: {e}")).into())
}

/// Loads the scenario with every override applied.
fn load(common: &Common) -> Result<Scenario> {
    let mut thr = Thresholds::default();
    let mut opts = ScenarioOptions::default();
    let (mut t_end, mut dt_max) = (None, None);
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| voltbound::Error::Parse(format!("override `{kv}` is not KEY=VALUE")))?;
        let k = k.trim();
        match k {
            "rho" => opts.rho = Some(parse_f64(k, v)?),
            "fault_duration" => opts.fault_duration = Some(parse_f64(k, v)?),
            "converter_p" => opts.converter_p = Some(parse_f64(k, v)?),
            "t_end" => t_end = Some(parse_f64(k, v)?),
            "dt_max" => dt_max = Some(parse_f64(k, v)?),
            _ => thr.set(k, v)?,
        }
    }
    info!("thresholds: {thr}");
    opts.thresholds = Some(thr);
    let path = resolve_path(&common.scenario);
    let mut sc = load_scenario(&path, &opts).with_context(|| format!("loading scenario {}", path.display()))?;
    if let Some(t) = t_end {
        sc.t_end = t;
    }
    if let Some(d) = dt_max {
        sc.dt_max = d;
    }
    sc.validate().with_context(|| format!("scenario {}", sc.name))?;
    info!("scenario {}: {} buses, {} devices", sc.name, sc.initial.n_bus(), sc.devices.len());
    Ok(sc)
}

fn threads() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(THREADS_ENV).ok().and_then(|s| s.parse::<usize>().ok()) {
        Some(n) => n.clamp(1, avail.max(1)),
        None => avail.min(2),
    }
}

fn run(cmd: Command) -> Result<()> {
    let (common, artifacts) = match cmd {
        Command::Simulate(c) => {
            let sc = load(&c)?;
            let tr = simulate(&sc).with_context(|| format!("simulating {}", sc.name))?;
            (c, simulate_artifacts(&sc, &tr)?)
        }
        Command::Saddle(c) => {
            let sc = load(&c)?;
            (c.clone(), saddle_artifacts(&sc, c.seed)?)
        }
        Command::Margin(c) => {
            let sc = load(&c)?;
            (c.clone(), margin_artifacts(&sc, c.seed)?)
        }
        Command::Cct { common, lo, hi, tol } => {
            let sc = load(&common)?;
            (common, cct_artifacts(&sc, lo, hi, tol)?)
        }
        Command::Report { common, every } => {
            let sc = load(&common)?;
            (common, report_artifacts(&sc, every.max(1))?)
        }
    };
    output::write_all(&common.out, &artifacts)
}

fn state_names(sc: &Scenario) -> Vec<String> {
    let mut names = sc.devices.layout().names(&sc.devices.devices);
    for axis in ["Vx", "Vy"] {
        names.extend(sc.bus_labels.iter().map(|b| format!("{axis}_{b}")));
    }
    names
}

fn run_meta(sc: &Scenario, tr: &Trajectory) -> Meta {
    let mut m = Meta::new();
    m.push("scenario", &sc.name);
    m.push("termination", tr.termination.as_str());
    if let Some(d) = &tr.detail {
        m.push("detail", d);
    }
    m.num("t_final", tr.times.last().copied().unwrap_or(0.0));
    m.push("samples", tr.len());
    m.num("fault_start", sc.fault_start);
    m.num("fault_duration", sc.fault_duration);
    m.num("orientation_sign", tr.sign);
    m
}

fn simulate_artifacts(sc: &Scenario, tr: &Trajectory) -> Result<Vec<Artifact>> {
    let mut header = vec!["time".to_string()];
    header.extend(state_names(sc));
    header.push("lambda1".into());
    header.push("g_inf".into());
    let mut rows = Vec::with_capacity(tr.len());
    for k in 0..tr.len() {
        let mut r = vec![fmt_num(tr.times[k])];
        r.extend(tr.states[k].z().iter().map(|v| fmt_num(*v)));
        r.push(fmt_num(tr.lambda1[k]));
        r.push(fmt_num(tr.residual[k]));
        rows.push(r);
    }
    Ok(vec![Artifact::csv("trajectory.csv", header, rows)?, Artifact::text("trajectory.meta", run_meta(sc, tr).render())])
}

struct SaddleRun {
    tr: Trajectory,
    hit_time: f64,
    z_sp: voltbound::model::SystemState<f64>,
    saddle: voltbound::PseudoSaddle,
}

fn find_saddle(sc: &Scenario, seed: u64) -> Result<SaddleRun> {
    let tr = simulate(sc).with_context(|| format!("simulating {}", sc.name))?;
    let hit = detect_singular_hit(sc, &tr).with_context(|| format!("scenario {}", sc.name))?;
    let m = sc.model(tr.topology.last().copied().unwrap_or(Topology::PostFault));
    let opts = SaddleOptions { sign: tr.sign, seed, ..SaddleOptions::default() };
    let saddle = controlling_pseudo_saddle(&m, &hit, &opts)
        .with_context(|| format!("scenario {}, singular hit at t = {}", sc.name, fmt_num(hit.t_hit)))?;
    Ok(SaddleRun { hit_time: hit.t_hit, z_sp: hit.z_sp, saddle, tr })
}

fn saddle_artifacts(sc: &Scenario, seed: u64) -> Result<Vec<Artifact>> {
    let run = find_saddle(sc, seed)?;
    let ps = &run.saddle;
    let names = state_names(sc);
    let (zc, zs) = (ps.z_cps.z(), run.z_sp.z());
    let header = ["coordinate", "z_cps", "z_sp", "eta"].map(String::from).to_vec();
    let rows = (0..zc.len())
        .map(|i| vec![names[i].clone(), fmt_num(zc[i]), fmt_num(zs[i]), fmt_num(ps.eta[i])])
        .collect();
    let mut m = Meta::new();
    m.push("scenario", &sc.name);
    m.push("trajectory", &run.tr.id);
    m.num("t_hit", run.hit_time);
    m.num("distance", ps.distance);
    m.num("mu_unstable", ps.mu_unstable);
    m.num("mu_stable", ps.mu_stable);
    m.num("residual_g", ps.residuals.g_norm);
    m.num("residual_lambda1", ps.residuals.lambda1);
    m.num("residual_kappa", ps.residuals.kappa_norm);
    m.num("stationarity", ps.stationarity);
    m.push("iterations", ps.iterations);
    m.push("seed", seed);
    Ok(vec![Artifact::csv("saddle.csv", header, rows)?, Artifact::text("saddle.meta", m.render())])
}

fn margin_artifacts(sc: &Scenario, seed: u64) -> Result<Vec<Artifact>> {
    let run = find_saddle(sc, seed)?;
    let ps = &run.saddle;
    let sep = post_fault_equilibrium(sc).with_context(|| format!("post-fault equilibrium of {}", sc.name))?;
    let model = build_manifold(&ps.z_cps.z(), ps.mu_unstable, &ps.eta, &sep);
    let series = margin_series(&run.tr, &sep, &model)?;
    let header = ["time", "C_V", "d_p", "lambda1"].map(String::from).to_vec();
    let rows = (0..series.times.len())
        .map(|i| vec![fmt_num(series.times[i]), fmt_num(series.cv[i]), fmt_num(series.d_p[i]), fmt_num(series.lambda1[i])])
        .collect();
    let mut m = Meta::new();
    m.push("scenario", &sc.name);
    m.push("termination", run.tr.termination.as_str());
    if let Some(z_f1) = run.tr.clearing_state() {
        m.num("cv_at_clearing", stability_margin(&z_f1.z(), &sep.z(), &model)?);
    }
    m.opt("cv_zero_crossing", series.cv_zero_crossing());
    m.opt("lambda1_crossing", series.lambda1_crossing(sc.thresholds.eps_sing));
    m.num("mu", model.mu);
    m.num("eta_norm", model.eta.norm());
    m.num("d_p_sep", series.d_p.first().map(|_| voltbound::manifold_margin::manifold_value(&sep.z(), &model)).unwrap_or(f64::NAN));
    m.num("saddle_distance", ps.distance);
    Ok(vec![Artifact::csv("margin.csv", header, rows)?, Artifact::text("margin.meta", m.render())])
}

fn cct_artifacts(sc: &Scenario, lo: f64, hi: f64, tol: f64) -> Result<Vec<Artifact>> {
    let n = threads();
    info!("cct search on [{lo}, {hi}] with tol {tol}, {n} threads");
    let opts = CctOptions { tol, threads: n, ..CctOptions::default() };
    let c = compute_cct_with(sc, lo, hi, &opts).with_context(|| format!("scenario {}", sc.name))?;
    let header = ["duration", "stable", "termination", "decay_slope", "envelope_ratio"].map(String::from).to_vec();
    let rows = c
        .history
        .iter()
        .map(|(d, v)| {
            vec![fmt_num(*d), v.stable.to_string(), v.termination.as_str().to_string(), fmt_num(v.decay_slope), fmt_num(v.envelope_ratio)]
        })
        .collect();
    let mut m = Meta::new();
    m.push("scenario", &sc.name);
    m.num("cct", c.cct);
    m.num("stable_bound", c.lo);
    m.num("unstable_bound", c.hi);
    m.num("tol", tol);
    m.push("inverted", c.inverted);
    Ok(vec![Artifact::csv("cct.csv", header, rows)?, Artifact::text("cct.meta", m.render())])
}

fn report_artifacts(sc: &Scenario, every: usize) -> Result<Vec<Artifact>> {
    let tr = simulate(sc).with_context(|| format!("simulating {}", sc.name))?;
    let header = ["time", "lambda1", "g_norm", "psi_residual", "xi_scalar", "xi_approx", "classification"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    // the final sample is always reported: it is the contact point when the
    // run ends on the singular surface
    let mut picks: Vec<usize> = (0..tr.len()).step_by(every).collect();
    if !tr.is_empty() && picks.last() != Some(&(tr.len() - 1)) {
        picks.push(tr.len() - 1);
    }
    for k in picks {
        let s = &tr.states[k];
        let m = sc.model(tr.topology[k]);
        let r = classify(&m, &s.x, &s.y).with_context(|| format!("scenario {}, t = {}", sc.name, fmt_num(tr.times[k])))?;
        let opt = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
        rows.push(vec![
            fmt_num(tr.times[k]),
            fmt_num(r.lambda1),
            fmt_num(r.g_norm),
            fmt_num(r.psi_residual),
            opt(r.xi_scalar),
            opt(r.xi_approx),
            r.classification.as_str().to_string(),
        ]);
    }
    Ok(vec![Artifact::csv("report.csv", header, rows)?, Artifact::text("report.meta", run_meta(sc, &tr).render())])
}
