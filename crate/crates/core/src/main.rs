use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use algdelay::dynamics::{cosine_seed, find_manifold_point, integrate, IntegrateOptions};
use algdelay::scenario::Scenario;
use algdelay::transform::TransformContext;
use algdelay::verify::run_suite;
use algdelay::{Error, StatePoint};

#[derive(Parser)]
#[command(name = "algdelay", version, about = "Solution manifolds and semiflows of algebraic-delay systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full verification suite and write a JSON report.
    Verify(Common),
    /// Find a manifold point and integrate from it; writes CSV plus a JSON sidecar.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Amplitude of the cosine seed (0 gives the point found from a zero seed).
        #[arg(long)]
        amplitude: Option<f64>,
        /// Start from this point file instead of searching.
        #[arg(long)]
        point: Option<PathBuf>,
    },
    /// Apply the flattening map or its inverse to a point file.
    Transform {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        point: PathBuf,
        #[arg(long, value_enum, default_value_t = Direction::Forward)]
        direction: Direction,
        /// Also map back and report the C^1 round-trip error.
        #[arg(long)]
        roundtrip: bool,
    },
    /// Newton search for a point of the solution manifold.
    FindPoint {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        amplitude: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Forward,
    Inverse,
}

#[derive(Args)]
struct Common {
    /// Built-in name (echo, lin2, pair, lin2box) or scenario JSON path.
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mesh: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn scenario(&self) -> Result<Scenario, Error> {
        let mut s = Scenario::load(&self.scenario)?;
        if let Some(x) = self.seed {
            s.seed = x;
        }
        if let Some(x) = self.mesh {
            s.mesh = x;
        }
        if let Some(x) = self.dt {
            s.dt = x;
        }
        if let Some(x) = self.t_end {
            s.t_end = x;
        }
        if let Some(x) = self.tol {
            s.tol = x;
        }
        s.check_settings()?;
        Ok(s)
    }
}

/// Carries the process exit status next to the error.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::InvalidModel(_) | Error::Expr(_) | Error::Json(_) | Error::Io(_) => 2,
        _ => 3,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure { code: exit_code(&e), error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error.downcast_ref::<Error>().map_or(2, exit_code);
        Failure { code, error }
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn output(value: &serde_json::Value, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => write_json(p, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

/// Header shared by every JSON output.
fn provenance(s: &Scenario) -> serde_json::Value {
    json!({
        "scenario": s.model.name,
        "scenario_sha256": algdelay::report::sha256_hex(s.canonical_json().as_bytes()),
        "settings": s.settings_json(),
    })
}

/// Reads a bare `{r, phi}` point or any object carrying one under `point`.
fn read_point(path: &Path) -> Result<StatePoint, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        code: 2,
        error: anyhow::anyhow!("reading {}: {e}", path.display()),
    })?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    if let Some(inner) = value.get_mut("point") {
        value = inner.take();
    }
    Ok(serde_json::from_value(value).map_err(Error::from)?)
}

fn search(s: &Scenario, amplitude: f64) -> Result<StatePoint, Error> {
    let phi = cosine_seed(s.model.h, s.mesh, s.model.n, amplitude)?;
    find_manifold_point(&s.model, &StatePoint::new(s.r_seed.clone(), phi))
}

fn verify(common: &Common) -> Result<u8, Failure> {
    let s = common.scenario()?;
    let report = run_suite(&s)?;
    for c in &report.checks {
        println!("{}", c.summary_line());
    }
    println!("{} ({} checks, seed {})", if report.pass { "PASS" } else { "FAIL" }, report.checks.len(), s.seed);
    if let Some(p) = &common.out {
        std::fs::write(p, report.to_json()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if report.pass { 0 } else { 1 })
}

fn simulate(common: &Common, amplitude: Option<f64>, point: Option<&Path>) -> Result<u8, Failure> {
    let s = common.scenario()?;
    let out = common
        .out
        .clone()
        .ok_or_else(|| Error::Usage("simulate needs --out <file.csv>".into()))?;
    let p0 = match point {
        Some(p) => read_point(p)?,
        None => search(&s, amplitude.unwrap_or(s.amplitude))?,
    };
    let opts = IntegrateOptions::for_model(&s.model);
    let traj = integrate(&s.model, &p0, s.t_end, s.dt, opts)?;
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    traj.write_csv(&mut w).map_err(Error::from)?;
    w.flush().map_err(Error::from)?;
    let sidecar = json!({
        "provenance": provenance(&s),
        "dt": traj.dt,
        "t_end": s.t_end,
        "t_e": traj.t_e,
        "steps": traj.steps(),
        "delta_min": traj.delta_min,
        "mesh": p0.phi.intervals(),
        "stopped": traj.stopped.as_ref().map(|st| json!({"t": st.t, "reason": st.reason})),
        "max_delta_residual": traj.max_delta_residual(),
        "max_ode_residual": traj.max_ode_residual(),
        "min_abs_det": traj.min_abs_det(),
    });
    write_json(&out.with_extension("json"), &sidecar)?;
    match &traj.stopped {
        Some(st) => {
            eprintln!("integration stopped at t = {}: {}", st.t, st.reason);
            Ok(3)
        }
        None => {
            println!(
                "{} steps to t = {}; max |Δ| = {:.3e}, max |x' - G| = {:.3e}",
                traj.steps(),
                traj.t_e,
                traj.max_delta_residual(),
                traj.max_ode_residual()
            );
            Ok(0)
        }
    }
}

fn transform(common: &Common, point: &Path, direction: Direction, roundtrip: bool) -> Result<u8, Failure> {
    let s = common.scenario()?;
    let p = read_point(point)?;
    let ctx = TransformContext::new(s.model.clone(), p.phi.intervals())?;
    // A rejected input point is a usage error, not a numerical one.
    let rejected = |e: Error| match e {
        Error::NotInU(_) | Error::NotInO(_) | Error::OutOfDomain { .. } | Error::Dimension(_) | Error::MeshMismatch => {
            Failure { code: 2, error: e.into() }
        }
        e => e.into(),
    };
    let mapped = match direction {
        Direction::Forward => ctx.t_map(&p),
        Direction::Inverse => ctx.y_map(&p),
    }
    .map_err(rejected)?;
    let back = if roundtrip {
        Some(match direction {
            Direction::Forward => ctx.y_map(&mapped)?,
            Direction::Inverse => ctx.t_map(&mapped)?,
        })
    } else {
        None
    };
    let mut residuals = json!({
        "input": ctx.classify_point(&p, s.tol),
        "output": ctx.classify_point(&mapped, s.tol),
    });
    if let Some(b) = &back {
        let r_err = b.r.iter().zip(&p.r).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        residuals["roundtrip_c1_error"] = json!(b.phi.c1_distance(&p.phi)?);
        residuals["roundtrip_r_error"] = json!(r_err);
    }
    let value = json!({
        "provenance": provenance(&s),
        "direction": match direction { Direction::Forward => "forward", Direction::Inverse => "inverse" },
        "mesh": p.phi.intervals(),
        "tolerances": ctx.tol,
        "point": mapped,
        "residuals": residuals,
    });
    output(&value, common.out.as_deref())?;
    Ok(0)
}

fn find_point(common: &Common, amplitude: Option<f64>) -> Result<u8, Failure> {
    let s = common.scenario()?;
    let p = search(&s, amplitude.unwrap_or(s.amplitude))?;
    let res = s.model.manifold_residuals(&p.r, &p.phi)?;
    let value = json!({
        "provenance": provenance(&s),
        "mesh": s.mesh,
        "point": p,
        "residuals": res,
    });
    output(&value, common.out.as_deref())?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify(c) => verify(c),
        Command::Simulate { common, amplitude, point } => simulate(common, *amplitude, point.as_deref()),
        Command::Transform { common, point, direction, roundtrip } => transform(common, point, *direction, *roundtrip),
        Command::FindPoint { common, amplitude } => find_point(common, *amplitude),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
