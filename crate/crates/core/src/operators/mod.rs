//! Boundary Cauchy integral `S0`, solid Cauchy integral `S~`, Beurling
//! transform `S = D S~` and the Hardy projections `E0^+-`.
//!
//! All operators act on fields in pulled-back coordinates `(x, t)`, where the
//! point `(x, t)` is `x + i(t + phi(x))`. With `zeta(y, s) = y + i(s + phi(y))`
//! the solid Cauchy integral is
//!
//! ```text
//! (S~ h)(x, t) = int_0^inf (1/2 pi i) int h(y, s) zeta_y(y) / (zeta(y, s) - z(x, t)) dy ds
//! ```
//!
//! so that `(d_t + B0 D) S~ h = h`. On a flat graph this is
//! `int_0^t e^{-(t-s) xi} 1_{xi>0} h^_s ds - int_t^inf e^{-(s-t)|xi|} 1_{xi<0} h^_s ds`.
//!
//! The x-line is periodic with period `L`, so the kernels are periodized.
//! The periodization also fixes the zero mode: constants are annihilated by
//! every operator here, exactly as the frequency indicators do on a flat graph.

mod quadrature;
mod spectral;

pub use quadrature::QuadratureBackend;
pub use spectral::SpectralBackend;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::LipschitzGraph;
use crate::grid::{BoundaryTrace, GradientField, HalfPlaneGrid, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    SpectralFlat,
    QuadratureLipschitz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// How the `s`-integrals of `S~` and `S` are discretized on the t-layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SRule {
    /// Trapezoid on the layers, with `(0, t_1)` handled by a rectangle at
    /// `t_1`. Both backends implement it; it is the rule used to compare them.
    Trapezoid,
    /// Exact integration of the exponential kernel against the piecewise
    /// linear interpolant of `h` in `s` (spectral backend only). Accurate
    /// when `|xi| (t_{k+1} - t_k)` is not small.
    Exponential,
    /// `h` constant on each layer's cell (midpoint to midpoint, the first
    /// cell reaching down to `t = 0`), integrated exactly against the kernel
    /// in `s`. Both backends implement it.
    Cell,
}

pub trait CauchyOperators: Send + Sync {
    fn kind(&self) -> BackendKind;

    fn grid(&self) -> &HalfPlaneGrid;

    fn graph(&self) -> &LipschitzGraph;

    /// `E0^+ h` or `E0^- h`, mean removed.
    fn hardy_projection(&self, h: &[C64], sign: Sign) -> Result<BoundaryTrace>;

    /// `S0 g` at a single height `t != 0` (negative `t` evaluates the
    /// Cauchy integral below the graph).
    fn boundary_cauchy(&self, g: &[C64], t: f64) -> Result<Vec<C64>>;

    /// `S0 g` and `D S0 g` on every layer.
    fn boundary_cauchy_field(&self, g: &[C64]) -> Result<(GradientField, GradientField)>;

    /// `S~ h` and `S h = D S~ h` on every layer.
    fn solid_cauchy_and_beurling(
        &self,
        h: &GradientField,
    ) -> Result<(GradientField, GradientField)>;

    /// Limit of `S~ h` at `t = 0+` (on the graph).
    fn solid_cauchy_trace(&self, h: &GradientField) -> Result<Vec<C64>>;

    fn solid_cauchy(&self, h: &GradientField) -> Result<GradientField> {
        Ok(self.solid_cauchy_and_beurling(h)?.0)
    }

    fn beurling(&self, h: &GradientField) -> Result<GradientField> {
        Ok(self.solid_cauchy_and_beurling(h)?.1)
    }
}

pub fn make_backend(
    kind: BackendKind,
    grid: HalfPlaneGrid,
    graph: LipschitzGraph,
    tolerance: f64,
    s_rule: SRule,
) -> Result<Box<dyn CauchyOperators>> {
    match kind {
        BackendKind::SpectralFlat => {
            if !graph.is_flat() {
                return Err(Error::Config(
                    "backend spectral_flat requires phi.kind = \"flat\"".into(),
                ));
            }
            Ok(Box::new(SpectralBackend::new(grid, s_rule)))
        }
        BackendKind::QuadratureLipschitz => {
            if s_rule == SRule::Exponential {
                return Err(Error::Config(
                    "quadrature_lipschitz supports the trapezoid and cell s-rules".into(),
                ));
            }
            Ok(Box::new(
                QuadratureBackend::new(grid, graph, tolerance)?.with_s_rule(s_rule)?,
            ))
        }
    }
}

/// Trapezoid weights for the `s`-integrals at target layer `k`.
///
/// `lower[j]` (`j <= k`) integrates over `(0, t_k)`, the first node also
/// carrying the rectangle `(0, t_1)`; `upper[j]` (`j >= k`) integrates over
/// `(t_k, t_K)`. Entry `k` of each is the weight given to the one-sided limit
/// on the target layer itself.
pub(crate) fn trapezoid_weights(t: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let n = t.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    lower[0] += t[0];
    for j in 1..=k {
        let d = 0.5 * (t[j] - t[j - 1]);
        lower[j - 1] += d;
        lower[j] += d;
    }
    for j in k..n.saturating_sub(1) {
        let d = 0.5 * (t[j + 1] - t[j]);
        upper[j] += d;
        upper[j + 1] += d;
    }
    (lower, upper)
}

/// Weights for `S~ h` at `t = 0`: every layer lies above the target.
pub(crate) fn trace_weights(t: &[f64]) -> Vec<f64> {
    let (_, mut upper) = trapezoid_weights(t, 0);
    upper[0] += t[0];
    upper
}

/// Cells `[lo_j, hi_j]` of the cell rule.
pub(crate) fn layer_cells(t: &[f64]) -> Vec<(f64, f64)> {
    let n = t.len();
    (0..n)
        .map(|j| {
            let lo = if j == 0 { 0.0 } else { 0.5 * (t[j - 1] + t[j]) };
            let hi = if j + 1 == n {
                t[j]
            } else {
                0.5 * (t[j] + t[j + 1])
            };
            (lo, hi)
        })
        .collect()
}

/// Weights of `h_{k-1}` and `h_k` over one layer gap of the cell rule.
pub(crate) fn cell_pair_weights(d: f64, x: f64) -> (f64, f64) {
    let w = 0.5 * d * phi1(0.5 * d * x);
    ((-0.5 * d * x).exp() * w, w)
}

/// `(1 - e^{-a}) / a`.
pub(crate) fn phi1(a: f64) -> f64 {
    if a.abs() < 1e-5 {
        1.0 - a / 2.0 + a * a / 6.0
    } else {
        -(-a).exp_m1() / a
    }
}

/// `(1 - e^{-a}(1 + a)) / a^2`.
pub(crate) fn phi2(a: f64) -> f64 {
    if a.abs() < 0.05 {
        // sum_{n>=2} (-1)^n (n-1)/n! a^{n-2}
        let mut term_fact = 2.0;
        let mut pow = 1.0;
        let mut s = 0.0;
        for n in 2..12 {
            if n > 2 {
                term_fact *= n as f64;
                pow *= -a;
            }
            s += (n as f64 - 1.0) / term_fact * pow;
        }
        s
    } else {
        (1.0 - (-a).exp() * (1.0 + a)) / (a * a)
    }
}

/// Weights `(w_prev, w_here)` such that
/// `int_0^d e^{-tau x} [h_prev tau/d + h_here (1 - tau/d)] dtau
///  = w_prev h_prev + w_here h_here`, for `x >= 0`.
pub(crate) fn exponential_pair_weights(d: f64, x: f64) -> (f64, f64) {
    let a = x * d;
    let p2 = phi2(a);
    (d * p2, d * (phi1(a) - p2))
}
