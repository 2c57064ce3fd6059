//! Exact p-harmonic functions for round-trip tests, and the trace-theorem
//! bench comparing the Gagliardo seminorm of a trace with the weighted `H^1`
//! seminorm of the field.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::LipschitzGraph;
use crate::grid::{BoundaryTrace, GradientField, HalfPlaneGrid, C64};
use crate::solver::BoundaryComponent;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactKind {
    /// `u = a x + b y`, every p.
    Linear { a: f64, b: f64 },
    /// `u = |z - z0|^{(p-2)/(p-1)}`, p != 2, pole below the graph.
    Fundamental { p: f64, pole: (f64, f64) },
    /// `u = Re(e^{i a z}) / a`, p = 2 only.
    HarmonicMode { a: f64 },
}

#[derive(Clone, PartialEq)]
pub struct ExactSolution {
    pub name: String,
    pub kind: ExactKind,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({:?})", self.name, self.kind)
    }
}

pub fn exact_linear(a: f64, b: f64) -> Result<ExactSolution> {
    if a == 0.0 && b == 0.0 {
        return Err(Error::Config("exact_linear needs (a, b) != 0".into()));
    }
    Ok(ExactSolution {
        name: format!("linear({a}, {b})"),
        kind: ExactKind::Linear { a, b },
    })
}

/// Relative finite-difference residual a fundamental-type solution must meet
/// before it is admitted, at spacing `1e-3 d`.
pub const ADMISSION_RESIDUAL: f64 = 1e-6;

pub fn exact_fundamental(
    p: f64,
    pole: (f64, f64),
    graph: &LipschitzGraph,
) -> Result<ExactSolution> {
    if !(p > 1.0) || p == 2.0 {
        return Err(Error::Config(format!(
            "exact_fundamental needs p > 1, p != 2 (got {p}); at p = 2 use log|z - z0|"
        )));
    }
    let d = graph.eval_phi(pole.0)? - pole.1;
    if !(d > 0.0) {
        return Err(Error::Config(format!(
            "pole ({}, {}) is not strictly below the graph",
            pole.0, pole.1
        )));
    }
    let sol = ExactSolution {
        name: format!("fundamental(p = {p}, pole = ({}, {}))", pole.0, pole.1),
        kind: ExactKind::Fundamental { p, pole },
    };
    // admission gate: dense difference residual on points at distance d..4d
    let m = graph.lipschitz_bound();
    let reach = d / (1.0 + m * m).sqrt();
    let mut pts = Vec::new();
    for i in 0..24 {
        let th = std::f64::consts::PI * (i as f64 + 0.5) / 24.0;
        for r in [1.5, 2.0, 4.0] {
            pts.push((
                pole.0 + r * reach * th.cos(),
                pole.1 + d + r * reach * th.sin(),
            ));
        }
    }
    let res = sol.fd_residual(p, &pts, 1e-3 * d);
    if !(res < ADMISSION_RESIDUAL) {
        return Err(Error::Invariant(format!(
            "{} fails its p-harmonic residual gate: {res:.3e}",
            sol.name
        )));
    }
    Ok(sol)
}

/// `u = Re(e^{i a z}) / a`; `a` should be a multiple of `2 pi / L` for use on
/// a periodic grid.
pub fn exact_harmonic_mode(a: f64) -> Result<ExactSolution> {
    if !(a > 0.0) {
        return Err(Error::Config("harmonic mode needs a > 0".into()));
    }
    Ok(ExactSolution {
        name: format!("harmonic_mode({a})"),
        kind: ExactKind::HarmonicMode { a },
    })
}

impl ExactSolution {
    /// Whether `u` is p-harmonic for this `p`.
    pub fn valid_for(&self, p: f64) -> bool {
        match self.kind {
            ExactKind::Linear { .. } => true,
            ExactKind::Fundamental { p: q, .. } => p == q,
            ExactKind::HarmonicMode { .. } => p == 2.0,
        }
    }

    pub fn potential(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            ExactKind::Linear { a, b } => a * x + b * y,
            ExactKind::Fundamental { p, pole } => {
                let r2 = (x - pole.0).powi(2) + (y - pole.1).powi(2);
                r2.powf(0.5 * (p - 2.0) / (p - 1.0))
            }
            ExactKind::HarmonicMode { a } => (-a * y).exp() * (a * x).cos() / a,
        }
    }

    /// `(u_x, u_y)`.
    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        match self.kind {
            ExactKind::Linear { a, b } => [a, b],
            ExactKind::Fundamental { p, pole } => {
                let (dx, dy) = (x - pole.0, y - pole.1);
                let r2 = dx * dx + dy * dy;
                let e = (p - 2.0) / (p - 1.0);
                let s = e * r2.powf(0.5 * e - 1.0);
                [s * dx, s * dy]
            }
            ExactKind::HarmonicMode { a } => {
                let w = (-a * y).exp();
                [-w * (a * x).sin(), -w * (a * x).cos()]
            }
        }
    }

    /// `f = u_x - i u_y`.
    pub fn f(&self, x: f64, y: f64) -> C64 {
        let [gx, gy] = self.gradient(x, y);
        C64::new(gx, -gy)
    }

    /// `f` at the pulled-back grid points.
    pub fn sample(&self, grid: &HalfPlaneGrid, graph: &LipschitzGraph) -> Result<GradientField> {
        let phi: Vec<f64> = grid
            .xs()
            .iter()
            .map(|&x| graph.eval_phi(x))
            .collect::<Result<_>>()?;
        let mut out = GradientField::zeros(grid.k(), grid.n());
        for (k, &t) in grid.layers().iter().enumerate() {
            for (j, ph) in phi.iter().enumerate() {
                out.set(k, j, self.f(grid.x(j), t + ph));
            }
        }
        Ok(out)
    }

    /// The prescribed component of the gradient along the graph.
    pub fn boundary_data(
        &self,
        grid: &HalfPlaneGrid,
        graph: &LipschitzGraph,
        component: BoundaryComponent,
    ) -> Result<BoundaryTrace> {
        let values = grid
            .xs()
            .iter()
            .map(|&x| Ok(C64::new(component.of(self.f(x, graph.eval_phi(x)?)), 0.0)))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundaryTrace::new(values))
    }

    /// Largest relative residual `|div V| / (|d_x V1| + |d_y V2|)` of
    /// `V = |grad u|^{p-2} grad u` by fourth-order central differences with
    /// step `h`.
    pub fn fd_residual(&self, p: f64, points: &[(f64, f64)], h: f64) -> f64 {
        let v = |x: f64, y: f64| {
            let g = self.gradient(x, y);
            let n = (g[0] * g[0] + g[1] * g[1]).sqrt();
            let w = if n > 0.0 { n.powf(p - 2.0) } else { 0.0 };
            [w * g[0], w * g[1]]
        };
        points
            .iter()
            .map(|&(x, y)| {
                // fourth-order central differences
                let d = |g: &dyn Fn(f64) -> f64| {
                    (8.0 * (g(h) - g(-h)) - (g(2.0 * h) - g(-2.0 * h))) / (12.0 * h)
                };
                let a = d(&|s| v(x + s, y)[0]);
                let b = d(&|s| v(x, y + s)[1]);
                let scale = a.abs() + b.abs();
                if scale == 0.0 {
                    0.0
                } else {
                    (a + b).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

/// A field given in closed form on `(x, t)`, `t >= 0`.
pub struct BenchField {
    pub name: String,
    pub f: Box<dyn Fn(f64, f64) -> C64 + Send + Sync>,
}

impl BenchField {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64, f64) -> C64 + Send + Sync + 'static,
    ) -> Self {
        BenchField {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

/// `e^{i a x} e^{-((x - c)/w)^2} e^{-t / tau}`.
pub fn gaussian_field(a: f64, c: f64, w: f64, tau: f64) -> BenchField {
    BenchField::new(
        format!("gauss(a={a}, c={c}, w={w}, tau={tau})"),
        move |x, t| {
            let s = (x - c) / w;
            C64::new(0.0, a * x).exp() * (-s * s - t / tau).exp()
        },
    )
}

/// Ten Gaussian packets whose t-decay matches their x-scale (the regime
/// where trace and extension norms are comparable).
pub fn gaussian_family() -> Vec<BenchField> {
    let params: [(f64, f64, f64); 10] = [
        (0.0, 0.0, 1.0),
        (1.0, 0.0, 1.0),
        (2.0, 0.5, 1.0),
        (0.0, -1.0, 2.0),
        (0.5, 1.0, 2.0),
        (3.0, 0.0, 0.7),
        (-1.5, 0.0, 1.5),
        (1.0, -2.0, 3.0),
        (4.0, 1.0, 1.0),
        (-2.5, 0.5, 0.8),
    ];
    params
        .iter()
        .map(|&(a, c, w)| {
            // decay on the scale of the packet's dominant wavelength
            let tau = 1.0 / (a.abs() + 1.0 / w);
            gaussian_field(a, c, w, tau)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceBenchEntry {
    pub name: String,
    pub dilation: f64,
    pub gagliardo: f64,
    pub weighted_h1: f64,
    /// `gagliardo^2 / weighted_h1^2`
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceBenchReport {
    pub sigma: f64,
    pub entries: Vec<TraceBenchEntry>,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// `max_ratio / min_ratio`
    pub band: f64,
}

/// Ratios for every member at every dilation `f(x / lambda, t / lambda)`.
/// Members whose field vanishes on the grid are skipped.
pub fn trace_bench(
    grid: &HalfPlaneGrid,
    sigma: f64,
    family: &[BenchField],
    dilations: &[f64],
) -> Result<TraceBenchReport> {
    if family.is_empty() || dilations.is_empty() {
        return Err(Error::Config(
            "trace bench needs a nonempty family and at least one dilation".into(),
        ));
    }
    let mut entries = Vec::new();
    for member in family {
        for &lam in dilations {
            let field = GradientField::from_fn(grid, |x, t| (member.f)(x / lam, t / lam));
            let trace: Vec<C64> = grid
                .xs()
                .iter()
                .map(|&x| (member.f)(x / lam, 0.0))
                .collect();
            let w = grid.weighted_h1_seminorm(&field, sigma);
            let gag = grid.gagliardo_seminorm(&trace, sigma);
            if w == 0.0 {
                continue;
            }
            entries.push(TraceBenchEntry {
                name: member.name.clone(),
                dilation: lam,
                gagliardo: gag,
                weighted_h1: w,
                ratio: gag * gag / (w * w),
            });
        }
    }
    let min_ratio = entries
        .iter()
        .map(|e| e.ratio)
        .fold(f64::INFINITY, f64::min);
    let max_ratio = entries.iter().map(|e| e.ratio).fold(0.0, f64::max);
    Ok(TraceBenchReport {
        sigma,
        entries,
        min_ratio,
        max_ratio,
        band: max_ratio / min_ratio,
    })
}
