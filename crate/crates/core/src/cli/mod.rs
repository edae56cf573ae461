//! Command-line driver: `nhflow <subcommand> [config.toml] [--override key=value]...`
//!
//! Exit codes: 0 ok, 1 config or precondition, 2 degeneracy, 3 blowup or
//! no convergence, 4 verification failure.

pub mod config;
pub mod snapshot;
pub mod verify;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::calculus::periods;
use crate::diagnostics::{decay_rate_fit, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::flows::{run_flow_with, DegeneracyEvent, EventCause, FlowRun, FlowState, RunOptions};
use crate::forms::{check_nondegenerate, FlowScheme, TwoForm};
use crate::grid::{PeriodicGrid, ScalarField};
use crate::reduced::{run_reduced_with, ReducedModel, ReducedOptions, ReducedSample, ReducedState};
use crate::scenarios::{example_310_series, random_ab_pair, Example310};
use crate::soliton::{manufactured_forcing, solve_soliton_with, SolitonMethod, SolitonOptions, SolitonProblem};

pub use config::RunConfig;
use snapshot::{snapshot_write, SnapshotMeta};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DEGENERACY: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "nhflow", version, about = "Flows of symplectic forms on the flat 4-torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML run configuration; every section is optional.
    config: Option<PathBuf>,
    /// Set a config key, e.g. `--override flow.t_end=2` (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve a 2-form on T⁴ by one of the flow schemes.
    Flow(Common),
    /// Run a reduced 1D/2D model.
    Reduced(Common),
    /// Linear-flow counterexample with a volume form that degenerates.
    Counterexample(Common),
    /// Solve the reduced translating-soliton equation on T².
    Soliton(Common),
    /// Run a check suite (`verify.suite`, `verify.resolution`).
    Verify(Common),
    /// Poincaré ratio probes.
    Poincare(Common),
}

/// Error to exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::DegenerateForm { .. } => EXIT_DEGENERACY,
        Error::NumericalBlowup(_) | Error::NoConvergence { .. } => EXIT_BLOWUP,
        _ => EXIT_CONFIG,
    }
}

/// Parses arguments, runs, and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (common, cmd): (&Common, fn(&RunConfig) -> Result<i32>) = match &cli.command {
        Command::Flow(c) => (c, cmd_flow),
        Command::Reduced(c) => (c, cmd_reduced),
        Command::Counterexample(c) => (c, cmd_counterexample),
        Command::Soliton(c) => (c, cmd_soliton),
        Command::Verify(c) => (c, cmd_verify),
        Command::Poincare(c) => (c, cmd_poincare),
    };
    let cfg = match RunConfig::load(common.config.as_deref(), &common.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match cmd(&cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.output)?;
    Ok(cfg.output.clone())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn csv_row(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        let _ = write!(s, "{v:.17e}");
    }
    s.push('\n');
    s
}

pub fn series_csv(records: &[TrajectoryRecord]) -> String {
    let mut s = TrajectoryRecord::HEADER.join(",");
    s.push('\n');
    for r in records {
        s.push_str(&csv_row(&r.values()));
    }
    s
}

fn nan_record(t: f64, dt: f64) -> TrajectoryRecord {
    let n = f64::NAN;
    TrajectoryRecord {
        t,
        dt,
        e: n,
        e0: n,
        min_u: n,
        max_u: n,
        mean_u: n,
        min_lambda2: n,
        max_lambda1: n,
        sup_grad_log_u: n,
        q1: n,
        f_max: n,
        d_rho_residual: n,
        period_drift: n,
    }
}

/// Appends a terminal row at the event time when the run's last record
/// stops short of it.
fn with_terminal(run: &FlowRun) -> Vec<TrajectoryRecord> {
    let mut recs = run.trajectory.clone();
    if let Some(e) = &run.event {
        if recs.last().map_or(true, |r| r.t != e.t) {
            recs.push(nan_record(e.t, run.final_state.dt));
        }
    }
    recs
}

fn event_code(e: &Option<DegeneracyEvent>) -> i32 {
    match e {
        None => EXIT_OK,
        Some(e) if e.cause == EventCause::UFloor => EXIT_DEGENERACY,
        Some(_) => EXIT_BLOWUP,
    }
}

fn status(code: i32) -> &'static str {
    match code {
        EXIT_OK => "completed",
        EXIT_DEGENERACY => "degeneracy",
        EXIT_BLOWUP => "blowup",
        _ => "error",
    }
}

/// Decay fit of E₀ over the second half of the accepted steps.
fn decay_summary(run: &FlowRun) -> serde_json::Value {
    let tail: Vec<(f64, f64)> = run.steps.iter().skip(run.steps.len() / 2).map(|s| (s.t, s.e0)).collect();
    match decay_rate_fit(&tail) {
        Ok((rate, r2)) => json!({"rate": rate, "r2": r2, "samples": tail.len()}),
        Err(e) => json!({"error": e.to_string()}),
    }
}

fn initial_state(cfg: &RunConfig, grid: &PeriodicGrid, scheme: FlowScheme) -> Result<FlowState> {
    if let Some(path) = &cfg.flow.resume {
        let (state, meta) = snapshot::snapshot_read(path)?;
        if state.rho.grid().dims() != grid.dims() || state.rho.grid().lengths() != grid.lengths() {
            return Err(Error::Format(format!(
                "snapshot grid {:?} does not match the configured grid {:?}",
                state.rho.grid().dims(),
                grid.dims()
            )));
        }
        if let Some(m) = meta {
            if m.scheme != scheme.to_string() {
                return Err(Error::Config(format!("snapshot was written by scheme {}, config asks for {scheme}", m.scheme)));
            }
        }
        return Ok(state);
    }
    Ok(FlowState::new(cfg.scenario.build(grid, cfg.seed)?))
}

/// Initial data that fail the floor are a precondition error, not an event.
fn precondition(rho: &TwoForm, floor: f64) -> Result<()> {
    check_nondegenerate(rho, floor).map(|_| ()).map_err(|e| Error::Precondition(e.to_string()))
}

fn flow_options(cfg: &RunConfig) -> RunOptions {
    let mut opts = RunOptions::new(cfg.flow.sample_every);
    opts.params.u_floor = cfg.flow.u_floor;
    opts.params.cfl_safety = cfg.flow.cfl_safety;
    opts.params.fixed_dt = cfg.flow.fixed_dt;
    opts.checkpoint_every = cfg.flow.snapshot_every;
    opts.monitor = cfg.monitor.into();
    opts
}

/// Runs a flow and writes series.csv, snapshots and summary.json. Returns the
/// exit code and the run.
fn drive_flow(
    cfg: &RunConfig,
    state: FlowState,
    scheme: FlowScheme,
    t_end: f64,
    opts: &RunOptions,
    extra: serde_json::Value,
) -> Result<(i32, FlowRun)> {
    let dir = out_dir(cfg)?;
    let snaps = dir.join("snapshots");
    std::fs::create_dir_all(&snaps)?;
    let digest = cfg.digest();
    let reference = periods(&state.rho);
    let meta = |s: &FlowState| SnapshotMeta {
        scheme: scheme.to_string(),
        t: s.t,
        step: s.step,
        dt: s.dt,
        config_digest: digest.clone(),
        periods: periods(&s.rho),
    };
    let mut checkpoint = |s: &FlowState| snapshot_write(s, &snaps.join(format!("snap_{:08}.nhf", s.step)), &meta(s));
    let run = run_flow_with(state, scheme, t_end, opts, &mut checkpoint)?;
    std::fs::write(dir.join("series.csv"), series_csv(&with_terminal(&run)))?;
    snapshot_write(&run.final_state, &snaps.join("final.nhf"), &meta(&run.final_state))?;

    let code = event_code(&run.event);
    let first = run.trajectory.first().copied();
    let last = run.trajectory.last().copied();
    let drift = periods(&run.final_state.rho)
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let summary = json!({
        "status": status(code),
        "exit_code": code,
        "scheme": scheme.to_string(),
        "t_end": t_end,
        "t_reached": run.final_state.t,
        "steps": run.steps.len(),
        "event": run.event,
        "decay_fit_e0": decay_summary(&run),
        "initial_e0": first.map(|r| r.e0),
        "final_e0": last.map(|r| r.e0),
        "max_period_drift": drift,
        "config_digest": digest,
        "details": extra,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    match &run.event {
        Some(e) => println!("{} at t = {:.6} (min u = {:.3e}, index {:?})", status(code), e.t, e.min_u, e.location),
        None => println!("completed t = {} in {} steps", run.final_state.t, run.steps.len()),
    }
    Ok((code, run))
}

pub fn cmd_flow(cfg: &RunConfig) -> Result<i32> {
    let grid = cfg.grid.build()?;
    let scheme = cfg.flow.scheme()?;
    let state = initial_state(cfg, &grid, scheme)?;
    precondition(&state.rho, cfg.flow.u_floor)?;
    let opts = flow_options(cfg);
    let (code, _) = drive_flow(cfg, state, scheme, cfg.flow.t_end, &opts, json!({"scenario": cfg.scenario}))?;
    Ok(code)
}

pub fn cmd_counterexample(cfg: &RunConfig) -> Result<i32> {
    let c = &cfg.counterexample;
    let g1 = PeriodicGrid::new(&[c.n1d], &[2.0 * std::f64::consts::PI])?;
    let ex = Example310::new(&g1, c.a0)?;
    let lengths = vec![2.0 * std::f64::consts::PI; 4];
    let g4 = PeriodicGrid::new(&c.dims, &lengths)?;

    // heat solver against the Fourier series at t = 1
    let (f1, h1) = ex.components(1.0)?;
    let mut oracle = 0.0f64;
    for j in 0..c.n1d {
        let (fs, hs) = example_310_series(g1.coord(0, j), 1.0, c.oracle_terms);
        oracle = oracle.max((f1.values()[j] - fs).abs()).max((h1.values()[j] - hs).abs());
    }
    let u1 = ex.volume_at(1.0, 64)?;
    let rho = ex.two_form_at(0.0, &g4)?;
    precondition(&rho, cfg.flow.u_floor)?;
    let mut opts = flow_options(cfg);
    opts.sample_every = c.sample_every;
    let extra = json!({
        "threshold_a": ex.threshold,
        "a0": ex.a0,
        "a0_over_threshold_e": ex.a0 / (ex.threshold * std::f64::consts::E),
        "oracle_max_diff_t1": oracle,
        "analytic_min_u_t1": u1.min(),
    });
    println!(
        "A = {:.6}, A0 = {:.6}, oracle diff {:.2e}, analytic min u(1) = {:.6}",
        ex.threshold,
        ex.a0,
        oracle,
        u1.min()
    );
    let (code, _) = drive_flow(cfg, FlowState::new(rho), FlowScheme::Linear, c.t_end, &opts, extra)?;
    Ok(code)
}

fn reduced_initial(cfg: &RunConfig) -> Result<ReducedState> {
    let r = &cfg.reduced;
    let g = PeriodicGrid::new(&r.dims, &vec![2.0 * std::f64::consts::PI; r.dims.len()])?;
    let fields = match r.model {
        ReducedModel::AbSystem => {
            let (a, b) = random_ab_pair(&g, r.amplitude, r.band, cfg.seed);
            vec![a, b]
        }
        _ => vec![ScalarField::from_fn(&g, |x| 1.0 + r.amplitude * x[0].sin())],
    };
    ReducedState::new(r.model, fields)
}

fn reduced_row(s: &ReducedSample) -> [f64; 6] {
    [s.t, s.dt, s.min, s.max, s.mass, s.sup_dev_from_mean]
}

pub fn cmd_reduced(cfg: &RunConfig) -> Result<i32> {
    let r = &cfg.reduced;
    let state = reduced_initial(cfg)?;
    // the initial check of a zero-length run is the precondition
    let probe = ReducedOptions { u_floor: r.u_floor, ..Default::default() };
    run_reduced_with(state.clone(), state.t, &probe).map_err(|e| Error::Precondition(e.to_string()))?;

    let opts = ReducedOptions { u_floor: r.u_floor, cfl_safety: r.cfl_safety, fixed_dt: None, sample_every: None };
    let dir = out_dir(cfg)?;
    let mut rows = vec![];
    let mut state = state;
    let mut code = EXIT_OK;
    let mut failure = None;
    let mut k = 0usize;
    loop {
        let t_next = (((k + 1) as f64) * r.sample_every).min(r.t_end);
        match run_reduced_with(state.clone(), t_next, &opts) {
            Ok(run) => {
                if k == 0 {
                    rows.push(run.samples[0]);
                }
                rows.push(*run.samples.last().expect("endpoint sample"));
                state = run.final_state;
            }
            Err(e) => {
                code = exit_code(&e);
                let mut last = *rows.last().expect("initial row");
                last.dt = f64::NAN;
                for v in [&mut last.min, &mut last.max, &mut last.mass, &mut last.sup_dev_from_mean] {
                    *v = f64::NAN;
                }
                rows.push(last);
                failure = Some(e.to_string());
                break;
            }
        }
        k += 1;
        if t_next >= r.t_end {
            break;
        }
    }
    let mut csv = String::from("t,dt,min,max,mass,supDevFromMean\n");
    for s in &rows {
        csv.push_str(&csv_row(&reduced_row(s)));
    }
    std::fs::write(dir.join("series.csv"), csv)?;
    let good: Vec<&ReducedSample> = rows.iter().filter(|s| s.min.is_finite()).collect();
    let m0 = good[0].mass;
    let drift = good.iter().map(|s| (s.mass - m0).abs()).fold(0.0, f64::max) / m0.abs().max(f64::MIN_POSITIVE);
    let min_nondecreasing = good.windows(2).all(|w| w[1].min >= w[0].min - 1e-9);
    let max_nonincreasing = good.windows(2).all(|w| w[1].max <= w[0].max + 1e-9);
    let summary = json!({
        "status": status(code),
        "exit_code": code,
        "model": r.model,
        "t_reached": state.t,
        "relative_mass_drift": drift,
        "min_nondecreasing": min_nondecreasing,
        "max_nonincreasing": max_nonincreasing,
        "final_sup_dev_from_mean": good.last().map(|s| s.sup_dev_from_mean),
        "failure": failure,
        "config_digest": cfg.digest(),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!("{} t = {} mass drift {:.2e}", status(code), state.t, drift);
    Ok(code)
}

pub fn cmd_soliton(cfg: &RunConfig) -> Result<i32> {
    let s = &cfg.soliton;
    let g = PeriodicGrid::cube(2, s.n)?;
    let amp = s.amplitude;
    let star = ScalarField::from_fn(&g, |x| 2.0 + amp * x[0].cos() * x[1].cos());
    let (a0, forcing) = if s.manufactured {
        (ScalarField::constant(&g, s.initial), Some(manufactured_forcing(&star, s.v)?))
    } else {
        (ScalarField::from_fn(&g, |x| s.initial + amp * x[0].cos() * x[1].cos()), None)
    };
    let problem = SolitonProblem { a: a0, v: s.v, forcing };
    let method = if s.explicit { SolitonMethod::Explicit } else { SolitonMethod::Preconditioned };
    let opts = SolitonOptions { method, tau: s.tau, u_floor: cfg.flow.u_floor };
    let dir = out_dir(cfg)?;
    let (code, a, residual, iterations) = match solve_soliton_with(&problem, s.tol, s.max_iter, &opts) {
        Ok(sol) => (EXIT_OK, sol.a, sol.residual_norm, sol.iterations),
        Err(Error::NoConvergence { iterations, residual, best }) => (EXIT_BLOWUP, *best, residual, iterations),
        Err(e) => return Err(e),
    };
    std::fs::write(dir.join("solution.nhf"), snapshot::encode(&g, &[a.values()]))?;
    let summary = json!({
        "status": if code == EXIT_OK { "converged" } else { "no_convergence" },
        "exit_code": code,
        "residual": residual,
        "iterations": iterations,
        "mean": a.mean(),
        "min": a.min(),
        "max": a.max(),
        "error_vs_manufactured": if s.manufactured { Some(a.max_abs_diff(&star)) } else { None },
        "config_digest": cfg.digest(),
    });
    write_json(&dir.join("summary.json"), &summary)?;
    println!("residual {residual:.3e} after {iterations} iterations");
    Ok(code)
}

fn report(checks: &[verify::Check]) -> i32 {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for c in checks {
        let _ = writeln!(out, "{c}");
    }
    if checks.iter().all(|c| c.passed()) {
        EXIT_OK
    } else {
        EXIT_VERIFY
    }
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<i32> {
    let v = &cfg.verify;
    Ok(report(&verify::run_suite(v.suite, v.resolution, v.samples, cfg.seed)?))
}

pub fn cmd_poincare(cfg: &RunConfig) -> Result<i32> {
    let p = &cfg.poincare;
    let n = cfg.grid.dims.first().copied().unwrap_or(16);
    Ok(report(&verify::inequality_checks(n, p.probes, p.eps, p.band, cfg.seed)?))
}
