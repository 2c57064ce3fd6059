//! The Cauchy-integral solver.
//!
//! With `M = B0 - B` (pointwise), the system `d_t f + B D f = 0` reads
//! `(d_t + B0 D) f = M D f`, so every solution decaying at infinity is
//!
//! ```text
//! f = S0 g + S~(M v),   v = D f = (I - S M)^{-1} D S0 g
//! ```
//!
//! for some `g` in the upper Hardy space, plus a mean mode. The periodic
//! operators annihilate x-constants, so `S~` inverts `d_t + B0 D` only up to
//! the x-mean of `M v`; the missing part is the decaying solution
//! `fbar(t) = -int_t^inf mean(M v)(s) ds` of `d_t fbar = mean(M v)`. It has
//! `D fbar = 0`, so it only enters `f` and its trace, never `v`. At p = 2 it
//! vanishes; otherwise the x-mean of `d_y u` is not zero.
//!
//! `linear_solve` evaluates this for a frozen `B` (Neumann series for the
//! inverse), `boundary_fit` picks `g` so that one component of the trace of
//! `f` matches the data, and `nonlinear_solve` iterates `B <- B(f)`.

use serde::{Deserialize, Serialize};

use crate::coefficients::{
    accretivity_kappa, b_plaplace, b_zero, closeness_to_b0, CoefficientMatrix,
};
use crate::error::{Error, Result};
use crate::geometry::LipschitzGraph;
use crate::grid::{BoundaryTrace, GradientField, HalfPlaneGrid, C64};
use crate::operators::{trace_weights, trapezoid_weights, CauchyOperators, Sign};
use crate::quasiregular;

/// Which derivative of `u` is prescribed on the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryComponent {
    /// `d_x u = Re f`
    #[serde(rename = "d_x")]
    Dx,
    /// `d_y u = -Im f`
    #[serde(rename = "d_y")]
    Dy,
}

impl BoundaryComponent {
    pub fn of(self, v: C64) -> f64 {
        match self {
            BoundaryComponent::Dx => v.re,
            BoundaryComponent::Dy => -v.im,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub p: f64,
    pub sigma: f64,
    pub max_outer: usize,
    pub max_neumann: usize,
    pub max_boundary: usize,
    pub tol_outer: f64,
    pub tol_neumann: f64,
    pub tol_boundary: f64,
    /// Initial Richardson damping of the boundary fit; halved on stagnation.
    pub damping: f64,
    pub boundary_component: BoundaryComponent,
    pub eps_zero: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            p: 2.0,
            sigma: 0.5,
            max_outer: 60,
            max_neumann: 200,
            max_boundary: 60,
            tol_outer: 1e-8,
            tol_neumann: 1e-10,
            tol_boundary: 1e-8,
            damping: 1.0,
            boundary_component: BoundaryComponent::Dx,
            eps_zero: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.p > 1.0) || !self.p.is_finite() {
            return bad(format!(
                "p = {} but the p-Laplace problem requires p > 1",
                self.p
            ));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad(format!("sigma = {} must lie in (0, 1)", self.sigma));
        }
        for (name, v) in [
            ("tol_outer", self.tol_outer),
            ("tol_neumann", self.tol_neumann),
            ("tol_boundary", self.tol_boundary),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        for (name, v) in [
            ("max_outer", self.max_outer),
            ("max_neumann", self.max_neumann),
            ("max_boundary", self.max_boundary),
        ] {
            if v < 1 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad(format!("damping = {} must lie in (0, 1]", self.damping));
        }
        if !(self.eps_zero >= 0.0) {
            return bad(format!("eps_zero = {} must be non-negative", self.eps_zero));
        }
        Ok(())
    }

    fn alpha(&self) -> f64 {
        1.0 - 2.0 * self.sigma
    }
}

/// A matrix per grid point, row-major like [`GradientField`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    k: usize,
    n: usize,
    pub values: Vec<CoefficientMatrix>,
}

impl CoefficientField {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn at(&self, k: usize, j: usize) -> &CoefficientMatrix {
        &self.values[k * self.n + j]
    }

    /// `B0` on every layer.
    pub fn b_zero(k: usize, slopes: &[f64]) -> Self {
        let n = slopes.len();
        let values = (0..k * n).map(|i| b_zero(slopes[i % n])).collect();
        CoefficientField { k, n, values }
    }

    /// `B(f)` for the p-Laplacian.
    pub fn p_laplace(f: &GradientField, p: f64, slopes: &[f64], eps_zero: f64) -> Result<Self> {
        let n = f.n();
        if slopes.len() != n {
            return Err(Error::Shape(format!(
                "{} slopes for {} columns",
                slopes.len(),
                n
            )));
        }
        let scale = f.sup_norm();
        let values = f
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| b_plaplace(p, v, slopes[i % n], eps_zero * scale))
            .collect::<Result<Vec<_>>>()?;
        Ok(CoefficientField {
            k: f.k(),
            n,
            values,
        })
    }

    pub fn sub(&self, o: &CoefficientField) -> CoefficientField {
        let values = self
            .values
            .iter()
            .zip(&o.values)
            .map(|(a, b)| a.sub(b))
            .collect();
        CoefficientField {
            k: self.k,
            n: self.n,
            values,
        }
    }

    pub fn apply(&self, f: &GradientField) -> GradientField {
        let mut out = f.clone();
        for (v, m) in out.values.iter_mut().zip(&self.values) {
            *v = m.apply(*v);
        }
        out
    }

    /// `sup` of the pointwise operator norms.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|m| m.spectral_norm())
            .fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|m| *m == CoefficientMatrix::ZERO)
    }
}

/// Slopes `phi'` at the grid columns.
pub fn slopes(grid: &HalfPlaneGrid, graph: &LipschitzGraph) -> Vec<f64> {
    grid.xs().iter().map(|&x| graph.eval_phi_prime(x)).collect()
}

#[derive(Debug, Clone)]
pub struct Perturbation {
    /// `E = I - B0^{-1} B(f)`
    pub field: CoefficientField,
    pub sup: f64,
}

/// The multiplier field `E = I - B0^{-1} B(f)` of the p-Laplacian.
pub fn perturbation(
    grid: &HalfPlaneGrid,
    graph: &LipschitzGraph,
    f: &GradientField,
    p: f64,
    eps_zero: f64,
) -> Result<Perturbation> {
    let s = slopes(grid, graph);
    let b = CoefficientField::p_laplace(f, p, &s, eps_zero)?;
    let n = s.len();
    let values: Vec<CoefficientMatrix> = b
        .values
        .iter()
        .enumerate()
        .map(|(i, m)| crate::coefficients::perturbation_matrix(m, s[i % n]))
        .collect();
    let field = CoefficientField { k: b.k, n, values };
    let sup = field.sup_norm();
    Ok(Perturbation { field, sup })
}

/// `f = S0 g + S~(M v)` for one frozen coefficient field.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub field: GradientField,
    /// `v = D f`
    pub df: GradientField,
    /// `f` at `t = 0`
    pub trace: Vec<C64>,
    /// Weighted L2 norms of the Neumann increments `(S M)^k D S0 g`.
    pub neumann_history: Vec<f64>,
    /// Ratio of the last two increments, an estimate of `||S M||`.
    pub norm_estimate: f64,
}

impl LinearSolution {
    pub fn terms(&self) -> usize {
        self.neumann_history.len()
    }
}

/// Consecutive growing increments that count as divergence.
const DIVERGENCE_RUN: usize = 3;

pub fn linear_solve(
    op: &dyn CauchyOperators,
    b: &CoefficientField,
    g: &[C64],
    cfg: &SolverConfig,
) -> Result<LinearSolution> {
    let grid = op.grid();
    let s = slopes(grid, op.graph());
    let m = CoefficientField::b_zero(grid.k(), &s).sub(b);
    linear_solve_m(op, &m, g, cfg)
}

fn linear_solve_m(
    op: &dyn CauchyOperators,
    m: &CoefficientField,
    g: &[C64],
    cfg: &SolverConfig,
) -> Result<LinearSolution> {
    let grid = op.grid();
    let alpha = cfg.alpha();
    let (s0, ds0) = op.boundary_cauchy_field(g)?;
    let e0 = op.hardy_projection(g, Sign::Plus)?.values;
    let first = grid.weighted_l2_norm(&ds0, alpha);
    if m.is_zero() {
        return Ok(LinearSolution {
            field: s0,
            df: ds0,
            trace: e0,
            neumann_history: vec![first],
            norm_estimate: 0.0,
        });
    }
    let mut history = vec![first];
    let mut v = ds0.clone();
    let mut inc = ds0;
    let mut growing = 0;
    let mut ratio = 0.0;
    loop {
        inc = op.beurling(&m.apply(&inc))?;
        let size = grid.weighted_l2_norm(&inc, alpha);
        let prev = *history.last().unwrap_or(&0.0);
        ratio = if prev > 0.0 { size / prev } else { ratio };
        history.push(size);
        if !size.is_finite() {
            return Err(Error::ContractionFailure { estimate: ratio });
        }
        v = v.add(&inc);
        growing = if size > prev { growing + 1 } else { 0 };
        if growing >= DIVERGENCE_RUN {
            return Err(Error::ContractionFailure { estimate: ratio });
        }
        if size <= cfg.tol_neumann * grid.weighted_l2_norm(&v, alpha) {
            break;
        }
        if history.len() > cfg.max_neumann {
            // not diverging outright, but too slow to be a contraction worth using
            return Err(Error::ContractionFailure { estimate: ratio });
        }
    }
    let mv = m.apply(&v);
    let (bar, bar0) = mean_mode(grid, &mv);
    let mut field = s0.add(&op.solid_cauchy(&mv)?);
    for (k, c) in bar.iter().enumerate() {
        field.layer_mut(k).iter_mut().for_each(|v| *v += c);
    }
    let tail = op.solid_cauchy_trace(&mv)?;
    let trace = e0.iter().zip(&tail).map(|(a, b)| a + b + bar0).collect();
    Ok(LinearSolution {
        field,
        df: v,
        trace,
        neumann_history: history,
        norm_estimate: ratio,
    })
}

/// `-int_t^inf mean_x(h)(s) ds` on every layer and at `t = 0`, with the same
/// trapezoid weights as the solid Cauchy integral.
pub fn mean_mode(grid: &HalfPlaneGrid, h: &GradientField) -> (Vec<C64>, C64) {
    let t = grid.layers();
    let means: Vec<C64> = (0..h.k())
        .map(|k| h.layer(k).iter().sum::<C64>() / h.n() as f64)
        .collect();
    let integrate = |w: &[f64]| -> C64 { -w.iter().zip(&means).map(|(w, m)| m * w).sum::<C64>() };
    let layers = (0..t.len())
        .map(|k| integrate(&trapezoid_weights(t, k).1))
        .collect();
    (layers, integrate(&trace_weights(t)))
}

#[derive(Debug, Clone)]
pub struct BoundaryFit {
    pub g: Vec<C64>,
    pub solution: LinearSolution,
    /// Relative `H^sigma` residuals, one per iteration.
    pub residuals: Vec<f64>,
}

/// Scalar data in the prescribed component lifted to the boundary datum
/// whose p = 2 flat solution has exactly that component.
fn lift(op: &dyn CauchyOperators, r: &[f64], component: BoundaryComponent) -> Result<Vec<C64>> {
    let rc: Vec<C64> = r.iter().map(|&v| C64::new(v, 0.0)).collect();
    let e = op.hardy_projection(&rc, Sign::Plus)?.values;
    let factor = match component {
        BoundaryComponent::Dx => C64::new(2.0, 0.0),
        BoundaryComponent::Dy => C64::new(0.0, -2.0),
    };
    Ok(e.into_iter().map(|v| v * factor).collect())
}

/// The data with its mean and Nyquist mode removed. Neither can be matched:
/// the mean because the problem is posed modulo constants, the Nyquist mode
/// because it belongs to neither Hardy projection.
fn fittable_part(grid: &HalfPlaneGrid, data: &[f64]) -> Vec<f64> {
    let mut hh = grid.fft(&data.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>());
    hh[0] = C64::new(0.0, 0.0);
    if hh.len().is_multiple_of(2) {
        let nyq = hh.len() / 2;
        hh[nyq] = C64::new(0.0, 0.0);
    }
    grid.ifft(&hh).iter().map(|v| v.re).collect()
}

/// Stagnation window: fewer than 1% reduction over this many iterations.
const STAGNATION_WINDOW: usize = 5;
const MIN_DAMPING: f64 = 1.0 / 64.0;

pub fn boundary_fit(
    op: &dyn CauchyOperators,
    b: &CoefficientField,
    h: &BoundaryTrace,
    cfg: &SolverConfig,
    g0: Option<&[C64]>,
) -> Result<BoundaryFit> {
    let grid = op.grid();
    let component = cfg.boundary_component;
    let as_c = |v: &[f64]| v.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>();
    let data = fittable_part(grid, &h.values.iter().map(|v| v.re).collect::<Vec<_>>());
    let h_norm = grid.sobolev_norm(&as_c(&data), cfg.sigma);
    if !(h_norm > 0.0) {
        return Err(Error::Config(
            "boundary data is constant; the problem is posed modulo constants".into(),
        ));
    }
    let s = slopes(grid, op.graph());
    let m = CoefficientField::b_zero(grid.k(), &s).sub(b);
    let mut g = match g0 {
        Some(g) => g.to_vec(),
        None => lift(op, &data, component)?,
    };
    let mut damping = cfg.damping;
    let mut residuals = Vec::new();
    let mut since_damping = 0;
    loop {
        let sol = linear_solve_m(op, &m, &g, cfg)?;
        let comp: Vec<f64> = sol.trace.iter().map(|&v| component.of(v)).collect();
        let cm = comp.iter().sum::<f64>() / comp.len() as f64;
        let r: Vec<f64> = data.iter().zip(&comp).map(|(a, c)| a - (c - cm)).collect();
        let res = grid.sobolev_norm(&as_c(&r), cfg.sigma) / h_norm;
        residuals.push(res);
        since_damping += 1;
        if res < cfg.tol_boundary {
            return Ok(BoundaryFit {
                g,
                solution: sol,
                residuals,
            });
        }
        if residuals.len() >= cfg.max_boundary || !res.is_finite() {
            return Err(Error::BoundaryFitFailure {
                iterations: residuals.len(),
                residual: res,
            });
        }
        if since_damping > STAGNATION_WINDOW {
            let old = residuals[residuals.len() - 1 - STAGNATION_WINDOW];
            if res > 0.99 * old {
                damping *= 0.5;
                since_damping = 0;
                if damping < MIN_DAMPING {
                    return Err(Error::BoundaryFitFailure {
                        iterations: residuals.len(),
                        residual: res,
                    });
                }
            }
        }
        let step = lift(op, &r, component)?;
        for (a, d) in g.iter_mut().zip(step) {
            *a += d * damping;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdeResiduals {
    /// `||d_t f + B(f) D f|| / (||d_t f|| + ||D f||)`
    pub system: f64,
    /// `||div(|grad u|^{p-2} grad u)||`, relative to the sizes of its two terms.
    pub divergence: f64,
    /// `||curl grad u||`, relative to the sizes of its two terms.
    pub curl: f64,
}

fn drop_edge_layers(f: &mut GradientField) {
    let k = f.k();
    if k >= 3 {
        f.layer_mut(0).fill(C64::new(0.0, 0.0));
        f.layer_mut(k - 1).fill(C64::new(0.0, 0.0));
    }
}

// a numerator at round-off level of `floor` counts as an exact zero
fn ratio(num: f64, den: f64, floor: f64) -> f64 {
    if num <= floor {
        0.0
    } else {
        num / den
    }
}

/// Residuals of the first-order system and of the divergence-form equation,
/// weighted L2 with weight `t^{1 - 2 sigma}` over the interior layers.
pub fn pde_residual(
    grid: &HalfPlaneGrid,
    graph: &LipschitzGraph,
    f: &GradientField,
    p: f64,
    sigma: f64,
    eps_zero: f64,
) -> Result<PdeResiduals> {
    if grid.k() < 3 {
        return Err(Error::Shape("pde_residual needs at least 3 layers".into()));
    }
    let alpha = 1.0 - 2.0 * sigma;
    let norm = |mut v: GradientField| {
        drop_edge_layers(&mut v);
        grid.weighted_l2_norm(&v, alpha)
    };
    let s = slopes(grid, graph);
    let b = CoefficientField::p_laplace(f, p, &s, eps_zero)?;
    let ft = grid.dt_field(f);
    let df = grid.d_field(f);
    let floor = 1e-12 * norm(f.clone());
    let system = ratio(
        norm(ft.add(&b.apply(&df))),
        norm(ft.clone()) + norm(df),
        floor,
    );

    // grad u = (f1, -f2), V = |grad u|^{p-2} grad u, packed as V1 + i V2
    let scale = f.sup_norm();
    let mut vf = f.clone();
    for v in vf.values.iter_mut() {
        let r = v.norm();
        let w = if r > eps_zero * scale && r > 0.0 {
            r.powf(p - 2.0)
        } else {
            0.0
        };
        *v = C64::new(v.re, -v.im) * w;
    }
    let vx = grid.dx_field(&vf);
    let vt = grid.dt_field(&vf);
    let (mut div, mut t1, mut t2) = (vf.clone(), vf.clone(), vf.clone());
    let fx = grid.dx_field(f);
    let (mut curl, mut c1, mut c2) = (vf.clone(), vf.clone(), vf);
    let n = grid.n();
    for k in 0..grid.k() {
        for j in 0..n {
            let i = k * n + j;
            // d_x|_y = d_x|_t - phi' d_t, d_y = d_t
            let a = vx.values[i].re - s[j] * vt.values[i].re;
            let c = vt.values[i].im;
            div.values[i] = C64::new(a + c, 0.0);
            t1.values[i] = C64::new(a, 0.0);
            t2.values[i] = C64::new(c, 0.0);
            // curl (f1, -f2) = d_x(-f2) - d_y f1
            let x = -(fx.values[i].im - s[j] * ft.values[i].im);
            let y = ft.values[i].re;
            curl.values[i] = C64::new(x - y, 0.0);
            c1.values[i] = C64::new(x, 0.0);
            c2.values[i] = C64::new(y, 0.0);
        }
    }
    let divergence = ratio(norm(div), norm(t1) + norm(t2), floor);
    let curl = ratio(norm(curl), norm(c1) + norm(c2), floor);
    Ok(PdeResiduals {
        system,
        divergence,
        curl,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Norms {
    /// `||h||_{H^sigma}` of the boundary data
    pub h_sigma: f64,
    /// weighted H^1 seminorm of `f`
    pub weighted_h1: Option<f64>,
}

/// Everything recorded by [`nonlinear_solve`], present whether or not the
/// solve succeeds (values that could not be computed are `None`).
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolverReport {
    pub status: String,
    pub config: Option<SolverConfig>,
    /// `sup |B^(k+1) - B^(k)|` per outer iteration
    pub outer_history: Vec<f64>,
    /// Neumann terms used by the last linear solve of each outer iteration
    pub neumann_terms: Vec<usize>,
    /// Increment norms of the last Neumann series
    pub neumann_history: Vec<f64>,
    pub neumann_norm_estimate: Option<f64>,
    /// Final relative boundary residual of each outer iteration
    pub boundary_residuals: Vec<f64>,
    pub boundary_residual: Option<f64>,
    pub boundary_iterations: Vec<usize>,
    pub pde_residual_sys: Option<f64>,
    pub pde_residual_div: Option<f64>,
    pub curl_residual: Option<f64>,
    pub representation_residual: Option<f64>,
    pub kappa_min: Option<f64>,
    /// `sup |B(f) - B0|` over the computed field
    pub closeness: Option<f64>,
    /// `sup |B(f) - B0|` over all `f` and slopes, before solving
    pub closeness_a_priori: f64,
    pub mu_max: Option<f64>,
    pub mu_p999: Option<f64>,
    #[serde(rename = "K_est")]
    pub k_est: Option<f64>,
    pub orientation_violations: Option<usize>,
    pub flagged_fraction: Option<f64>,
    pub norms: Norms,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: GradientField,
    /// Boundary datum with `f = P^B g`.
    pub g: Vec<C64>,
    /// `f` at `t = 0`.
    pub trace: Vec<C64>,
    pub report: SolverReport,
}

/// A failed solve together with the report up to the failure.
#[derive(Debug)]
pub struct SolveFailure {
    pub error: Error,
    pub report: SolverReport,
    /// Last field computed before the failure, if any.
    pub field: Option<GradientField>,
}

/// Above this a priori closeness the smallness regime is unlikely to hold.
const CLOSENESS_WARNING: f64 = 0.5;

/// Top layer amplitude (relative to the field) that signals truncation in `t`.
const TRUNCATION_WARNING: f64 = 1e-3;

pub fn nonlinear_solve(
    op: &dyn CauchyOperators,
    cfg: &SolverConfig,
    h: &BoundaryTrace,
) -> std::result::Result<Solution, Box<SolveFailure>> {
    let mut report = SolverReport {
        status: "running".into(),
        config: Some(cfg.clone()),
        ..Default::default()
    };
    let fail = |error: Error, mut report: SolverReport, field: Option<GradientField>| {
        report.status = error.to_string();
        Box::new(SolveFailure {
            error,
            report,
            field,
        })
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, report, None));
    }
    let grid = op.grid();
    let graph = op.graph();
    let m_bound = graph.lipschitz_bound();
    report.closeness_a_priori = match closeness_to_b0(cfg.p, m_bound, 360) {
        Ok(c) => c,
        Err(e) => return Err(fail(e, report, None)),
    };
    if report.closeness_a_priori > CLOSENESS_WARNING {
        report.warnings.push(format!(
            "sup |B(f) - B0| = {:.3} over all f: outside the small-perturbation regime, the Neumann series may diverge",
            report.closeness_a_priori
        ));
    }
    let data: Vec<C64> = h.values.iter().map(|v| C64::new(v.re, 0.0)).collect();
    report.norms.h_sigma = grid.sobolev_norm(&data, cfg.sigma);
    if report.norms.h_sigma == 0.0 {
        let field = GradientField::zeros(grid.k(), grid.n());
        report.outer_history.push(0.0);
        report.neumann_terms.push(0);
        report.boundary_residuals.push(0.0);
        report.boundary_iterations.push(0);
        report.boundary_residual = Some(0.0);
        diagnostics(
            op,
            cfg,
            &field,
            &vec![C64::new(0.0, 0.0); grid.n()],
            &mut report,
        );
        report.status = "converged".into();
        return Ok(Solution {
            field,
            g: vec![C64::new(0.0, 0.0); grid.n()],
            trace: vec![C64::new(0.0, 0.0); grid.n()],
            report,
        });
    }
    let s = slopes(grid, graph);
    let mut b = CoefficientField::b_zero(grid.k(), &s);
    let mut g: Option<Vec<C64>> = None;
    let mut last: Option<GradientField> = None;
    for _ in 0..cfg.max_outer {
        let fit = match boundary_fit(op, &b, h, cfg, g.as_deref()) {
            Ok(fit) => fit,
            Err(e) => {
                if let Some(f) = &last {
                    diagnostics(op, cfg, f, g.as_deref().unwrap_or(&[]), &mut report);
                }
                return Err(fail(e, report, last));
            }
        };
        report.neumann_terms.push(fit.solution.terms());
        report.neumann_history = fit.solution.neumann_history.clone();
        report.neumann_norm_estimate = Some(fit.solution.norm_estimate);
        report.boundary_iterations.push(fit.residuals.len());
        let res = *fit.residuals.last().unwrap_or(&f64::NAN);
        report.boundary_residuals.push(res);
        report.boundary_residual = Some(res);
        let f = fit.solution.field;
        let trace = fit.solution.trace;
        let next = match CoefficientField::p_laplace(&f, cfg.p, &s, cfg.eps_zero) {
            Ok(next) => next,
            Err(e) => return Err(fail(e, report, Some(f))),
        };
        let change = next.sub(&b).sup_norm();
        report.outer_history.push(change);
        g = Some(fit.g);
        b = next;
        last = Some(f);
        if change < cfg.tol_outer {
            let field = last
                .take()
                .unwrap_or_else(|| GradientField::zeros(grid.k(), grid.n()));
            let g = g.unwrap_or_default();
            diagnostics(op, cfg, &field, &g, &mut report);
            report.status = "converged".into();
            return Ok(Solution {
                field,
                g,
                trace,
                report,
            });
        }
    }
    let last_change = *report.outer_history.last().unwrap_or(&f64::NAN);
    if let Some(f) = &last {
        diagnostics(op, cfg, f, g.as_deref().unwrap_or(&[]), &mut report);
    }
    Err(fail(
        Error::FixedPointFailure {
            iterations: cfg.max_outer,
            last_change,
        },
        report,
        last,
    ))
}

/// Fills the residual and quasiregularity entries of the report for `f`.
/// Failures here are recorded as warnings; they never abort a solve.
fn diagnostics(
    op: &dyn CauchyOperators,
    cfg: &SolverConfig,
    f: &GradientField,
    g: &[C64],
    report: &mut SolverReport,
) {
    let grid = op.grid();
    let graph = op.graph();
    let alpha = cfg.alpha();
    report.norms.weighted_h1 = Some(grid.weighted_h1_seminorm(f, cfg.sigma));
    match pde_residual(grid, graph, f, cfg.p, cfg.sigma, cfg.eps_zero) {
        Ok(r) => {
            report.pde_residual_sys = Some(r.system);
            report.pde_residual_div = Some(r.divergence);
            report.curl_residual = Some(r.curl);
        }
        Err(e) => report.warnings.push(format!("pde residual: {e}")),
    }
    let s = slopes(grid, graph);
    match CoefficientField::p_laplace(f, cfg.p, &s, cfg.eps_zero) {
        Ok(b) => {
            report.kappa_min = Some(
                b.values
                    .iter()
                    .map(accretivity_kappa)
                    .fold(f64::INFINITY, f64::min),
            );
            report.closeness = Some(b.sub(&CoefficientField::b_zero(grid.k(), &s)).sup_norm());
            if g.len() == grid.n() {
                match representation_residual(op, &b, f, g, alpha) {
                    Ok(r) => report.representation_residual = Some(r),
                    Err(e) => report
                        .warnings
                        .push(format!("representation residual: {e}")),
                }
            }
        }
        Err(e) => report
            .warnings
            .push(format!("coefficients of the final field: {e}")),
    }
    let bel = quasiregular::beltrami(grid, graph, f, QR_EPS);
    let dil = quasiregular::dilatation(grid, graph, f, QR_EPS);
    report.mu_max = Some(bel.k_sup);
    report.mu_p999 = Some(bel.k_p999);
    report.flagged_fraction = Some(bel.flagged_fraction);
    report.k_est = Some(dil.k_est).filter(|k| k.is_finite());
    report.orientation_violations = Some(dil.orientation_violations);
    if dil.orientation_violations > 0 {
        report.warnings.push(format!(
            "{} points with non-positive Jacobian",
            dil.orientation_violations
        ));
    }
    let sup = f.sup_norm();
    if f.k() > 0 && sup > 0.0 {
        let top = f
            .layer(f.k() - 1)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max);
        if top > TRUNCATION_WARNING * sup {
            report.warnings.push(format!(
                "field has not decayed at t_max (top layer {:.2e} of sup); raise grid.tmax",
                top / sup
            ));
        }
    }
}

/// Relative threshold below which `|d_z f|` counts as a zero of the map.
pub const QR_EPS: f64 = 1e-6;

/// `||f - S0 g - S~((B0 - B(f)) D f) - fbar|| / ||f||`, weighted L2.
pub fn representation_residual(
    op: &dyn CauchyOperators,
    b: &CoefficientField,
    f: &GradientField,
    g: &[C64],
    alpha: f64,
) -> Result<f64> {
    let grid = op.grid();
    let s = slopes(grid, op.graph());
    let m = CoefficientField::b_zero(grid.k(), &s).sub(b);
    let (s0, _) = op.boundary_cauchy_field(g)?;
    let h = m.apply(&grid.d_field(f));
    let mut rep = s0.add(&op.solid_cauchy(&h)?);
    for (k, c) in mean_mode(grid, &h).0.iter().enumerate() {
        rep.layer_mut(k).iter_mut().for_each(|v| *v += c);
    }
    let den = grid.weighted_l2_norm(f, alpha);
    Ok(ratio(grid.weighted_l2_norm(&f.sub(&rep), alpha), den, 0.0))
}
