//! The `plcauchy` command line.
//!
//! Exit codes: 0 success, 1 a `verify` check failed, 2 usage or
//! configuration error, 3 solver failure (the report is still written).

mod io;
mod verify;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{RunConfig, Scenario};
use crate::error::{Error, Result};
use crate::grid::HalfPlaneGrid;
use crate::operators::Sign;
use crate::quasiregular;
use crate::solver::{nonlinear_solve, SolverReport, QR_EPS};

pub use io::{field_csv, json, read_field_csv, trace_csv};
pub use verify::{Check, Suite, VerifyReport};

#[derive(Debug, Parser)]
#[command(
    name = "plcauchy",
    version,
    about = "p-Laplace gradients above Lipschitz graphs via Cauchy integrals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the boundary value problem described by a TOML config.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: output.dir of the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run built-in checks with known answers.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply the Cauchy operators to the boundary data of a config.
    Operators {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Beltrami coefficient and distortion of a field written by `solve`.
    QrAnalyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Config supplying the graph (default: flat).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Relative cutoff below which `|d_z f|` is flagged.
        #[arg(long, default_value_t = QR_EPS)]
        eps: f64,
    },
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = check_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    let out = match cli.command {
        Command::Solve { config, out } => solve(&config, out.as_deref()),
        Command::Verify { suite, out } => run_verify(suite, out.as_deref()),
        Command::Operators { config, out } => operators(&config, out.as_deref()),
        Command::QrAnalyze {
            input,
            out,
            config,
            eps,
        } => qr_analyze(&input, &out, config.as_deref(), eps),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Io(_) => 2,
                _ => 3,
            }
        }
    }
}

/// Validates PLCAUCHY_THREADS; the quadrature backend sizes its pool from it.
fn check_threads() -> Result<()> {
    let Ok(v) = std::env::var("PLCAUCHY_THREADS") else {
        return Ok(());
    };
    let _: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "PLCAUCHY_THREADS must be a positive integer, got {v:?}"
        ))
    })?;
    Ok(())
}

fn out_dir(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir());
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunReport<'a> {
    #[serde(flatten)]
    report: &'a SolverReport,
    run_config: RunConfig,
}

fn solve(config: &Path, out: Option<&Path>) -> Result<i32> {
    let cfg = RunConfig::load(config)?;
    let Scenario {
        grid,
        backend,
        solver,
        data,
        ..
    } = cfg.scenario()?;
    let dir = out_dir(&cfg, out)?;
    let write_report = |r: &SolverReport| {
        let text = json(&RunReport {
            report: r,
            run_config: cfg.resolved(),
        })?;
        io::write_text(&dir.join("report.json"), &text)
    };
    match nonlinear_solve(backend.as_ref(), &solver, &data) {
        Ok(sol) => {
            io::write_text(&dir.join("field.csv"), &field_csv(&grid, &sol.field))?;
            io::write_text(&dir.join("trace.csv"), &trace_csv(&grid, &sol.trace))?;
            write_report(&sol.report)?;
            let r = &sol.report;
            println!(
                "converged: p = {}, {} outer iterations, boundary residual {:.3e}, representation residual {:.3e}",
                solver.p,
                r.outer_history.len(),
                r.boundary_residual.unwrap_or(f64::NAN),
                r.representation_residual.unwrap_or(f64::NAN),
            );
            Ok(0)
        }
        Err(fail) => {
            if let Some(f) = &fail.field {
                io::write_text(&dir.join("field.csv"), &field_csv(&grid, f))?;
            }
            write_report(&fail.report)?;
            eprintln!("error: {}", fail.error);
            Ok(match fail.error {
                Error::Config(_) => 2,
                _ => 3,
            })
        }
    }
}

fn run_verify(suite: Suite, out: Option<&Path>) -> Result<i32> {
    let r = verify::run(suite)?;
    for b in &r.trace_bench {
        println!("trace bench sigma = {}", b.sigma);
        println!(
            "  {:<24} {:>8} {:>14} {:>14} {:>10}",
            "field", "lambda", "gagliardo", "weighted_h1", "ratio"
        );
        for e in &b.entries {
            println!(
                "  {:<24} {:>8} {:>14.6e} {:>14.6e} {:>10.4}",
                e.name, e.dilation, e.gagliardo, e.weighted_h1, e.ratio
            );
        }
        println!("  band {:.4}", b.band);
    }
    for c in &r.checks {
        println!(
            "{} [{}] {}: {:.3e} (tolerance {:.1e})",
            if c.pass { "PASS" } else { "FAIL" },
            c.suite,
            c.name,
            c.value,
            c.tolerance
        );
    }
    if let Some(path) = out {
        create_parent(path)?;
        io::write_text(path, &json(&r)?)?;
    }
    Ok(if r.pass { 0 } else { 1 })
}

/// `E+ g` and `E- g` on the boundary, then `S0 g`, `D S0 g` on the layers,
/// and `S~`, `S` applied to `S0 g`.
fn operators(config: &Path, out: Option<&Path>) -> Result<i32> {
    let cfg = RunConfig::load(config)?;
    let Scenario {
        grid,
        backend,
        data,
        ..
    } = cfg.scenario()?;
    let dir = out_dir(&cfg, out)?;
    let g = &data.values;
    let plus = backend.hardy_projection(g, Sign::Plus)?;
    let minus = backend.hardy_projection(g, Sign::Minus)?;
    io::write_text(&dir.join("hardy_plus.csv"), &trace_csv(&grid, &plus.values))?;
    io::write_text(
        &dir.join("hardy_minus.csv"),
        &trace_csv(&grid, &minus.values),
    )?;
    let (s0, ds0) = backend.boundary_cauchy_field(g)?;
    io::write_text(&dir.join("boundary_cauchy.csv"), &field_csv(&grid, &s0))?;
    io::write_text(&dir.join("boundary_cauchy_d.csv"), &field_csv(&grid, &ds0))?;
    let (st, sb) = backend.solid_cauchy_and_beurling(&s0)?;
    io::write_text(&dir.join("solid_cauchy.csv"), &field_csv(&grid, &st))?;
    io::write_text(&dir.join("beurling.csv"), &field_csv(&grid, &sb))?;
    println!("wrote operator outputs to {}", dir.display());
    Ok(0)
}

#[derive(Serialize)]
struct QrReport {
    mu_max: f64,
    mu_p999: f64,
    #[serde(rename = "K_est")]
    k_est: Option<f64>,
    orientation_violations: usize,
    flagged_fraction: f64,
    eps: f64,
}

fn qr_analyze(input: &Path, out: &Path, config: Option<&Path>, eps: f64) -> Result<i32> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Config(format!(
            "--eps must lie in (0, 1), got {eps}"
        )));
    }
    let (grid, field): (HalfPlaneGrid, _) = read_field_csv(input)?;
    let graph = match config {
        Some(p) => crate::geometry::LipschitzGraph::from_spec(&RunConfig::load(p)?.phi)?,
        None => crate::geometry::LipschitzGraph::flat(),
    };
    graph.check_lipschitz(&grid.xs())?;
    let bel = quasiregular::beltrami(&grid, &graph, &field, eps);
    let dil = quasiregular::dilatation(&grid, &graph, &field, eps);
    let r = QrReport {
        mu_max: bel.k_sup,
        mu_p999: bel.k_p999,
        k_est: Some(dil.k_est).filter(|k| k.is_finite()),
        orientation_violations: dil.orientation_violations,
        flagged_fraction: bel.flagged_fraction,
        eps,
    };
    create_parent(out)?;
    io::write_text(out, &json(&r)?)?;
    println!(
        "mu_max {:.4}, mu_p999 {:.4}, orientation violations {}",
        r.mu_max, r.mu_p999, r.orientation_violations
    );
    Ok(0)
}
