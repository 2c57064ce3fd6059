//! The `verify` suites: small, fixed scenarios with known answers.

use std::f64::consts::PI;

use clap::ValueEnum;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::LipschitzGraph;
use crate::grid::{BoundaryTrace, GradientField, HalfPlaneGrid, C64};
use crate::operators::{CauchyOperators, QuadratureBackend, SRule, Sign, SpectralBackend};
use crate::solver::{nonlinear_solve, BoundaryComponent, SolverConfig};
use crate::verification::{exact_linear, gaussian_family, trace_bench, TraceBenchReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    All,
    Trace,
    Operators,
    Solver,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub trace_bench: Vec<TraceBenchReport>,
    pub pass: bool,
}

fn below(suite: &'static str, name: impl Into<String>, value: f64, tolerance: f64) -> Check {
    Check {
        suite,
        name: name.into(),
        value,
        tolerance,
        pass: value <= tolerance,
    }
}

fn rel(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

fn field_rel(a: &GradientField, b: &GradientField) -> f64 {
    rel(&a.values, &b.values)
}

pub fn run(suite: Suite) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let mut bench = Vec::new();
    if matches!(suite, Suite::All | Suite::Trace) {
        bench = trace_suite(&mut checks)?;
    }
    if matches!(suite, Suite::All | Suite::Operators) {
        operators_suite(&mut checks)?;
    }
    if matches!(suite, Suite::All | Suite::Solver) {
        solver_suite(&mut checks)?;
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport {
        suite,
        checks,
        trace_bench: bench,
        pass,
    })
}

/// Trace-vs-extension ratios stay in a factor-3 band across the family and
/// dilations.
fn trace_suite(checks: &mut Vec<Check>) -> Result<Vec<TraceBenchReport>> {
    let family = gaussian_family();
    let mut out = Vec::new();
    for sigma in [0.3, 0.5, 0.7] {
        let grid = HalfPlaneGrid::geometric_to(2048, 200.0, 1e-3, 200.0, 96, sigma)?;
        let r = trace_bench(&grid, sigma, &family, &[2.0, 4.0, 8.0])?;
        checks.push(below(
            "trace",
            format!("ratio band, sigma = {sigma}"),
            r.band,
            3.0,
        ));
        out.push(r);
    }
    Ok(out)
}

fn bump_layers(g: &HalfPlaneGrid) -> GradientField {
    GradientField::from_fn(g, |x, t| {
        C64::new(1.0, 0.5 * x)
            * (-(x - 0.4) * (x - 0.4) / 1.2).exp()
            * (-(t - 0.8) * (t - 0.8)).exp()
    })
}

fn bump(g: &HalfPlaneGrid) -> Vec<C64> {
    let v: Vec<C64> = g
        .xs()
        .iter()
        .map(|&x| C64::new(1.0, 0.3 * x) * (-x * x / 0.8).exp())
        .collect();
    let mean = v.iter().sum::<C64>() / v.len() as f64;
    v.iter().map(|z| z - mean).collect()
}

fn operators_suite(checks: &mut Vec<Check>) -> Result<()> {
    let s = "operators";
    let g = HalfPlaneGrid::geometric_to(128, 20.0, 1e-2, 20.0, 16, 0.5)?;
    let sp = SpectralBackend::new(g.clone(), SRule::Trapezoid);
    let qu = QuadratureBackend::new(g.clone(), LipschitzGraph::flat(), 1e-6)?;

    // S0 e^{iax} = e^{iax - at}
    let a = 2.0 * PI * 3.0 / 20.0;
    let wave: Vec<C64> = g.xs().iter().map(|&x| C64::new(0.0, a * x).exp()).collect();
    let (f, _) = sp.boundary_cauchy_field(&wave)?;
    let want = GradientField::from_fn(&g, |x, t| C64::new(0.0, a * x).exp() * (-a * t).exp());
    checks.push(below(
        s,
        "spectral S0 against e^{-t xi}",
        field_rel(&f, &want),
        1e-10,
    ));

    let h = bump(&g);
    let fine = HalfPlaneGrid::geometric_to(128, 20.0, 1e-4, 20.0, 24, 0.5)?;
    let sf = SpectralBackend::new(fine.clone(), SRule::Trapezoid);
    let hb = bump(&fine);
    let ep = sf.hardy_projection(&hb, Sign::Plus)?;
    let lim = fine.trace_limit(&sf.boundary_cauchy_field(&hb)?.0, 1e-3)?;
    checks.push(below(
        s,
        "jump relation lim S0 g = E+ g",
        rel(&lim.values, &ep.values),
        1e-4,
    ));
    for (name, op, tol) in [
        ("spectral", &sp as &dyn CauchyOperators, 1e-8),
        ("quadrature", &qu, 1e-4),
    ] {
        let p = op.hardy_projection(&h, Sign::Plus)?;
        let m = op.hardy_projection(&h, Sign::Minus)?;
        let sum: Vec<C64> = p.values.iter().zip(&m.values).map(|(a, b)| a + b).collect();
        checks.push(below(s, format!("{name} E+ + E- = I"), rel(&sum, &h), tol));
        let pp = op.hardy_projection(&p.values, Sign::Plus)?;
        checks.push(below(
            s,
            format!("{name} E+ idempotent"),
            rel(&pp.values, &p.values),
            tol,
        ));
    }

    let hf = bump_layers(&g);
    for rule in [SRule::Trapezoid, SRule::Cell] {
        let sp = SpectralBackend::new(g.clone(), rule);
        let qu =
            QuadratureBackend::new(g.clone(), LipschitzGraph::flat(), 1e-6)?.with_s_rule(rule)?;
        let (a, sa) = sp.solid_cauchy_and_beurling(&hf)?;
        let (b, sb) = qu.solid_cauchy_and_beurling(&hf)?;
        checks.push(below(
            s,
            format!("backends agree on S~ ({rule:?} rule)"),
            field_rel(&b, &a),
            1e-5,
        ));
        checks.push(below(
            s,
            format!("backends agree on S ({rule:?} rule)"),
            field_rel(&sb, &sa),
            1e-5,
        ));
    }
    let (st, sb) =
        SpectralBackend::new(g.clone(), SRule::Exponential).solid_cauchy_and_beurling(&hf)?;
    checks.push(below(s, "S = D S~", field_rel(&g.d_field(&st), &sb), 1e-4));
    Ok(())
}

fn solver_suite(checks: &mut Vec<Check>) -> Result<()> {
    let s = "solver";
    let g = HalfPlaneGrid::geometric_to(256, 40.0, 1e-3, 40.0, 32, 0.5)?;
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let data = BoundaryTrace::new(
        g.xs()
            .iter()
            .map(|&x| C64::new(-2.0 * x * (-x * x).exp(), 0.0))
            .collect(),
    );
    let solve = |cfg: &SolverConfig, h: &BoundaryTrace| nonlinear_solve(&op, cfg, h);

    let p2 = solve(&SolverConfig::default(), &data).map_err(|f| f.error)?;
    checks.push(below(
        s,
        "p = 2 takes one outer iteration",
        p2.report.outer_history.len() as f64,
        1.0,
    ));
    checks.push(below(
        s,
        "p = 2 representation residual",
        p2.report.representation_residual.unwrap_or(f64::NAN),
        1e-12,
    ));

    let cfg = SolverConfig {
        p: 2.1,
        tol_outer: 1e-7,
        tol_boundary: 1e-7,
        ..Default::default()
    };
    let r = solve(&cfg, &data).map_err(|f| f.error)?.report;
    let increases = r.outer_history.windows(2).filter(|w| w[1] >= w[0]).count();
    checks.push(below(
        s,
        "p = 2.1 outer history increases",
        increases as f64,
        0.0,
    ));
    checks.push(below(
        s,
        "p = 2.1 representation residual",
        r.representation_residual.unwrap_or(f64::NAN),
        1e-3,
    ));
    checks.push(below(
        s,
        "p = 2.1 boundary residual",
        r.boundary_residual.unwrap_or(f64::NAN),
        1e-4,
    ));

    // affine u = x + y/2: constant data, recovered modulo constants
    let u = exact_linear(1.0, 0.5)?;
    let flat = LipschitzGraph::flat();
    let h = u.boundary_data(&g, &flat, BoundaryComponent::Dx)?;
    let sol = solve(
        &SolverConfig {
            p: 3.0,
            ..Default::default()
        },
        &h,
    )
    .map_err(|f| f.error)?;
    let exact = u.sample(&g, &flat)?;
    let shift = exact.values[0] - sol.field.values[0];
    let err = sol
        .field
        .values
        .iter()
        .zip(&exact.values)
        .map(|(a, b)| (a + shift - b).norm())
        .fold(0.0, f64::max);
    checks.push(below(s, "affine solution modulo constants", err, 1e-12));

    let fail = solve(
        &SolverConfig {
            p: 3.5,
            ..Default::default()
        },
        &data,
    );
    let ok = match fail {
        Err(f) => {
            matches!(f.error, Error::ContractionFailure { .. })
                && !f.report.outer_history.is_empty()
        }
        Ok(_) => false,
    };
    checks.push(below(
        s,
        "p = 3.5 reports contraction failure",
        if ok { 0.0 } else { 1.0 },
        0.0,
    ));
    Ok(())
}
