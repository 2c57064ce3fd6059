//! Discrete half-plane grid: periodic x-lines at a stack of heights `t_k`,
//! the operator `D = -i d/dx`, and the norms used throughout.
//!
//! Fourier convention: `h^(xi) = sum_j h(x_j) e^{-i xi x_j} dx` with
//! `xi in (2 pi / L) {-N/2, ..., N/2 - 1}`. Internally the FFT is used without
//! the `e^{i xi L/2}` phase from `x_0 = -L/2`; only moduli and multipliers are
//! ever taken, for which the phase cancels.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Clone)]
pub struct HalfPlaneGrid {
    n: usize,
    l: f64,
    dx: f64,
    t: Vec<f64>,
    sigma: f64,
    xi: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for HalfPlaneGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HalfPlaneGrid")
            .field("n", &self.n)
            .field("l", &self.l)
            .field("layers", &self.t.len())
            .field("t1", &self.t[0])
            .field("tmax", &self.t[self.t.len() - 1])
            .field("sigma", &self.sigma)
            .finish()
    }
}

impl HalfPlaneGrid {
    pub fn new(n: usize, l: f64, t: Vec<f64>, sigma: f64) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid.N must be a power of two >= 8, got {n}"
            )));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Config(format!("grid.L must be positive, got {l}")));
        }
        if !(sigma > 0.0 && sigma < 1.0) {
            return Err(Error::Config(format!(
                "sigma must lie in (0, 1), got {sigma}"
            )));
        }
        if t.is_empty() || !(t[0] > 0.0) || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(
                "t-layers must be positive and strictly increasing".into(),
            ));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let dxi = 2.0 * PI / l;
        let xi = (0..n)
            .map(|k| {
                if k < n / 2 {
                    k as f64 * dxi
                } else {
                    (k as f64 - n as f64) * dxi
                }
            })
            .collect();
        Ok(HalfPlaneGrid {
            n,
            l,
            dx: l / n as f64,
            t,
            sigma,
            xi,
            fwd,
            inv,
        })
    }

    /// Geometric layers `t_k = t1 * growth^(k-1)`, `k = 1..=layers`.
    pub fn geometric(
        n: usize,
        l: f64,
        t1: f64,
        growth: f64,
        layers: usize,
        sigma: f64,
    ) -> Result<Self> {
        if !(growth > 1.0) || layers < 1 {
            return Err(Error::Config(format!(
                "need growth > 1 and layers >= 1, got {growth}, {layers}"
            )));
        }
        let t = (0..layers).map(|k| t1 * growth.powi(k as i32)).collect();
        Self::new(n, l, t, sigma)
    }

    /// Geometric layers from `t1` to `tmax` inclusive.
    pub fn geometric_to(
        n: usize,
        l: f64,
        t1: f64,
        tmax: f64,
        layers: usize,
        sigma: f64,
    ) -> Result<Self> {
        if layers < 2 || !(tmax > t1) {
            return Err(Error::Config("need layers >= 2 and tmax > t1".into()));
        }
        let growth = (tmax / t1).powf(1.0 / (layers - 1) as f64);
        let mut g = Self::geometric(n, l, t1, growth, layers, sigma)?;
        *g.t.last_mut().unwrap() = tmax;
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn k(&self) -> usize {
        self.t.len()
    }

    pub fn layers(&self) -> &[f64] {
        &self.t
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Same x-grid and layers with another sigma.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(self.n, self.l, self.t.clone(), sigma)
    }

    pub fn x(&self, j: usize) -> f64 {
        -0.5 * self.l + j as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Frequencies in FFT order; the Nyquist mode is negative.
    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    /// Unnormalized forward DFT.
    pub fn fft(&self, h: &[C64]) -> Vec<C64> {
        assert_eq!(h.len(), self.n, "line length");
        let mut buf = h.to_vec();
        self.fwd.process(&mut buf);
        buf
    }

    /// Inverse of [`Self::fft`].
    pub fn ifft(&self, hh: &[C64]) -> Vec<C64> {
        assert_eq!(hh.len(), self.n, "line length");
        let mut buf = hh.to_vec();
        self.inv.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|v| *v *= s);
        buf
    }

    pub fn apply_multiplier(&self, h: &[C64], m: impl Fn(f64) -> C64) -> Vec<C64> {
        let mut hh = self.fft(h);
        for (v, &xi) in hh.iter_mut().zip(&self.xi) {
            *v *= m(xi);
        }
        self.ifft(&hh)
    }

    /// `D = -i d/dx` on one line (multiplier `xi`).
    pub fn d_line(&self, h: &[C64]) -> Vec<C64> {
        self.apply_multiplier(h, |xi| C64::new(xi, 0.0))
    }

    /// `d/dx` on one line (multiplier `i xi`).
    pub fn dx_line(&self, h: &[C64]) -> Vec<C64> {
        self.apply_multiplier(h, |xi| C64::new(0.0, xi))
    }

    pub fn d_field(&self, f: &GradientField) -> GradientField {
        f.map_layers(|_, h| self.d_line(h))
    }

    pub fn dx_field(&self, f: &GradientField) -> GradientField {
        f.map_layers(|_, h| self.dx_line(h))
    }

    pub fn l2_norm(&self, h: &[C64]) -> f64 {
        (self.dx * h.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `(sum_{xi != 0} |xi|^{2 sigma} |h^(xi)|^2 / L)^{1/2}`, the grid version
    /// of `(int |xi|^{2 sigma} |h^|^2 dxi / 2 pi)^{1/2}`.
    pub fn sobolev_norm(&self, h: &[C64], sigma: f64) -> f64 {
        let hh = self.fft(h);
        let s: f64 = hh
            .iter()
            .zip(&self.xi)
            .skip(1)
            .map(|(v, xi)| xi.abs().powf(2.0 * sigma) * v.norm_sqr())
            .sum();
        (s * self.dx * self.dx / self.l).sqrt()
    }

    /// Square root of the double-sum approximation of
    /// `int int |h(x) - h(x')|^2 / |x - x'|^{1 + 2 sigma} dx dx'`.
    ///
    /// The trace is read as a function on the window `[-L/2, L/2)` that
    /// vanishes outside; the part of the integral with one point outside the
    /// window is added in closed form. Diagonal cells are excluded, and the
    /// leading error of doing so (the integrand behaves like
    /// `|h'|^2 |u|^{1-2 sigma}` near the diagonal) is removed with the
    /// zeta-function correction for sums of `|d|^a`.
    pub fn gagliardo_seminorm(&self, h: &[C64], sigma: f64) -> f64 {
        let n = self.n;
        let dx = self.dx;
        let kern: Vec<f64> = (0..n)
            .map(|d| {
                if d == 0 {
                    0.0
                } else {
                    (d as f64 * dx).powf(-1.0 - 2.0 * sigma)
                }
            })
            .collect();
        let mut inner = 0.0;
        for i in 0..n {
            let hi = h[i];
            let mut row = 0.0;
            for j in (i + 1)..n {
                row += (hi - h[j]).norm_sqr() * kern[j - i];
            }
            inner += row;
        }
        inner *= 2.0 * dx * dx;
        let half = 0.5 * self.l;
        let mut tail = 0.0;
        for (j, v) in h.iter().enumerate() {
            let x = self.x(j);
            let a = (half - x).max(0.5 * dx);
            let b = (half + x).max(0.5 * dx);
            tail += v.norm_sqr() * (a.powf(-2.0 * sigma) + b.powf(-2.0 * sigma)) / (2.0 * sigma);
        }
        let slope: f64 = self.dx_line(h).iter().map(|v| v.norm_sqr()).sum::<f64>() * dx;
        let diag = -2.0 * zeta(2.0 * sigma - 1.0) * dx.powf(2.0 - 2.0 * sigma) * slope;
        (inner + 2.0 * tail * dx + diag).max(0.0).sqrt()
    }

    /// Weights `w_k` with `int_0^inf F(t) t^alpha dt ~ sum_k w_k F(t_k)`.
    ///
    /// Trapezoid in `ln t` between `t_1` and `t_K` (so the weight `t^{alpha+1}`
    /// is carried exactly), plus `F(t_1) t_1^{alpha+1} / (alpha+1)` for
    /// `(0, t_1)`; nothing beyond `t_K`. Needs `alpha > -1`.
    pub fn t_weights(&self, alpha: f64) -> Vec<f64> {
        let t = &self.t;
        let k = t.len();
        let u: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        let mut w = vec![0.0; k];
        for i in 0..k {
            let left = if i > 0 { u[i] - u[i - 1] } else { 0.0 };
            let right = if i + 1 < k { u[i + 1] - u[i] } else { 0.0 };
            w[i] = t[i].powf(alpha + 1.0) * 0.5 * (left + right);
        }
        w[0] += t[0].powf(alpha + 1.0) / (alpha + 1.0);
        w
    }

    /// `d/dt` by three-point differences on the (non-uniform) layers,
    /// one-sided second order at the first and last layer.
    pub fn dt_field(&self, f: &GradientField) -> GradientField {
        let t = &self.t;
        let k = t.len();
        let mut out = GradientField::zeros(k, self.n);
        if k < 2 {
            return out;
        }
        if k == 2 {
            let s = 1.0 / (t[1] - t[0]);
            for j in 0..self.n {
                let d = (f.at(1, j) - f.at(0, j)) * s;
                out.set(0, j, d);
                out.set(1, j, d);
            }
            return out;
        }
        for i in 0..k {
            let (a, b, c, o) = if i == 0 {
                let (h1, h2) = (t[1] - t[0], t[2] - t[1]);
                (
                    -(2.0 * h1 + h2) / (h1 * (h1 + h2)),
                    (h1 + h2) / (h1 * h2),
                    -h1 / (h2 * (h1 + h2)),
                    0,
                )
            } else if i == k - 1 {
                let (h1, h2) = (t[k - 2] - t[k - 3], t[k - 1] - t[k - 2]);
                (
                    h2 / (h1 * (h1 + h2)),
                    -(h1 + h2) / (h1 * h2),
                    (h1 + 2.0 * h2) / (h2 * (h1 + h2)),
                    k - 3,
                )
            } else {
                let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
                (
                    -h2 / (h1 * (h1 + h2)),
                    (h2 - h1) / (h1 * h2),
                    h1 / (h2 * (h1 + h2)),
                    i - 1,
                )
            };
            for j in 0..self.n {
                out.set(
                    i,
                    j,
                    f.at(o, j) * a + f.at(o + 1, j) * b + f.at(o + 2, j) * c,
                );
            }
        }
        out
    }

    /// `(int int |f|^2 t^alpha dx dt)^{1/2}`.
    pub fn weighted_l2_norm(&self, f: &GradientField, alpha: f64) -> f64 {
        let w = self.t_weights(alpha);
        let s: f64 = (0..f.k())
            .map(|k| w[k] * self.dx * f.layer(k).iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum();
        s.sqrt()
    }

    /// `(int int (|d_x f|^2 + |d_t f|^2) t^{1 - 2 sigma} dx dt)^{1/2}`.
    pub fn weighted_h1_seminorm(&self, f: &GradientField, sigma: f64) -> f64 {
        let fx = self.dx_field(f);
        let ft = self.dt_field(f);
        let w = self.t_weights(1.0 - 2.0 * sigma);
        let s: f64 = (0..f.k())
            .map(|k| {
                let e: f64 = fx
                    .layer(k)
                    .iter()
                    .zip(ft.layer(k))
                    .map(|(a, b)| a.norm_sqr() + b.norm_sqr())
                    .sum();
                w[k] * self.dx * e
            })
            .sum();
        s.sqrt()
    }

    /// Linear extrapolation to `t = 0` from the two lowest layers, mean
    /// removed. The result is flagged when it differs from the quadratic
    /// extrapolation through three layers by more than `rel_tol` (relative to
    /// the sup norm of the trace).
    pub fn trace_limit(&self, f: &GradientField, rel_tol: f64) -> Result<BoundaryTrace> {
        if f.k() < 3 {
            return Err(Error::Shape("trace_limit needs at least 3 layers".into()));
        }
        let t = &self.t;
        let (t1, t2, t3) = (t[0], t[1], t[2]);
        let c1 = t2 / (t2 - t1);
        let c2 = -t1 / (t2 - t1);
        // Lagrange basis at 0
        let q1 = t2 * t3 / ((t1 - t2) * (t1 - t3));
        let q2 = t1 * t3 / ((t2 - t1) * (t2 - t3));
        let q3 = t1 * t2 / ((t3 - t1) * (t3 - t2));
        let mut lin = Vec::with_capacity(self.n);
        let mut diff = 0.0f64;
        for j in 0..self.n {
            let (a, b, c) = (f.at(0, j), f.at(1, j), f.at(2, j));
            let l = a * c1 + b * c2;
            let q = a * q1 + b * q2 + c * q3;
            diff = diff.max((l - q).norm());
            lin.push(l);
        }
        let mut trace = BoundaryTrace::new(lin);
        let scale = trace.sup_norm().max(f64::MIN_POSITIVE);
        trace.ill_resolved = diff > rel_tol * scale;
        Ok(trace)
    }
}

/// Continuum constant `c` in
/// `int int |h(x)-h(x')|^2/|x-x'|^{1+2s} = c * int |xi|^{2s} |h^|^2 dxi/2pi`,
/// `c = 2 pi / (sin(pi s) Gamma(1 + 2s))`.
pub fn gagliardo_constant(sigma: f64) -> f64 {
    2.0 * PI / ((PI * sigma).sin() * statrs::function::gamma::gamma(1.0 + 2.0 * sigma))
}

/// Riemann zeta function for real `s != 1` by Euler-Maclaurin summation,
/// accurate to about `1e-12` for `|s| <= 2`.
pub fn zeta(s: f64) -> f64 {
    const M: usize = 12;
    // B_2 / 2!, B_4 / 4!, ...
    const B: [f64; 5] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
    ];
    let m = M as f64;
    let mut sum: f64 = (1..M).map(|n| (n as f64).powf(-s)).sum();
    sum += m.powf(1.0 - s) / (s - 1.0) + 0.5 * m.powf(-s);
    // rising product s (s+1) ... (s+2k-2)
    let mut rising = s;
    for (k, b) in B.iter().enumerate() {
        sum += b * rising * m.powf(-s - 2.0 * k as f64 - 1.0);
        rising *= (s + 2.0 * k as f64 + 1.0) * (s + 2.0 * k as f64 + 2.0);
    }
    sum
}

/// Boundary data on the x-grid with the mean projected out.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub values: Vec<C64>,
    /// Set by [`HalfPlaneGrid::trace_limit`] when the extrapolation is unreliable.
    pub ill_resolved: bool,
}

impl BoundaryTrace {
    pub fn new(mut values: Vec<C64>) -> Self {
        let mean = values.iter().sum::<C64>() / values.len().max(1) as f64;
        values.iter_mut().for_each(|v| *v -= mean);
        BoundaryTrace {
            values,
            ill_resolved: false,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Samples `f(x_j, t_k)` stored layer by layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    k: usize,
    n: usize,
    pub values: Vec<C64>,
}

impl GradientField {
    pub fn zeros(k: usize, n: usize) -> Self {
        GradientField {
            k,
            n,
            values: vec![C64::new(0.0, 0.0); k * n],
        }
    }

    pub fn from_layers(layers: Vec<Vec<C64>>) -> Result<Self> {
        let k = layers.len();
        let n = layers.first().map_or(0, |l| l.len());
        if layers.iter().any(|l| l.len() != n) {
            return Err(Error::Shape("layers of unequal length".into()));
        }
        Ok(GradientField {
            k,
            n,
            values: layers.concat(),
        })
    }

    pub fn from_fn(grid: &HalfPlaneGrid, mut f: impl FnMut(f64, f64) -> C64) -> Self {
        let mut out = Self::zeros(grid.k(), grid.n());
        for (k, &t) in grid.layers().iter().enumerate() {
            for j in 0..grid.n() {
                out.set(k, j, f(grid.x(j), t));
            }
        }
        out
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, k: usize, j: usize) -> C64 {
        self.values[k * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, j: usize, v: C64) {
        self.values[k * self.n + j] = v;
    }

    pub fn layer(&self, k: usize) -> &[C64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn layer_mut(&mut self, k: usize) -> &mut [C64] {
        &mut self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn map_layers(&self, mut g: impl FnMut(usize, &[C64]) -> Vec<C64>) -> GradientField {
        let mut out = GradientField::zeros(self.k, self.n);
        for k in 0..self.k {
            let v = g(k, self.layer(k));
            out.layer_mut(k).copy_from_slice(&v);
        }
        out
    }

    pub fn sub(&self, o: &GradientField) -> GradientField {
        let values = self
            .values
            .iter()
            .zip(&o.values)
            .map(|(a, b)| a - b)
            .collect();
        GradientField {
            k: self.k,
            n: self.n,
            values,
        }
    }

    pub fn add(&self, o: &GradientField) -> GradientField {
        let values = self
            .values
            .iter()
            .zip(&o.values)
            .map(|(a, b)| a + b)
            .collect();
        GradientField {
            k: self.k,
            n: self.n,
            values,
        }
    }

    pub fn scale(&self, s: f64) -> GradientField {
        GradientField {
            k: self.k,
            n: self.n,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::function::gamma::gamma;

    fn grid(n: usize, l: f64) -> HalfPlaneGrid {
        HalfPlaneGrid::geometric_to(n, l, 1e-3, 60.0, 64, 0.5).unwrap()
    }

    fn gaussian(g: &HalfPlaneGrid, scale: f64) -> Vec<C64> {
        g.xs()
            .iter()
            .map(|x| C64::new((-(x * scale).powi(2) / 2.0).exp(), 0.0))
            .collect()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(HalfPlaneGrid::new(12, 1.0, vec![1.0], 0.5).is_err());
        assert!(HalfPlaneGrid::new(4, 1.0, vec![1.0], 0.5).is_err());
        assert!(HalfPlaneGrid::new(16, 0.0, vec![1.0], 0.5).is_err());
        assert!(HalfPlaneGrid::new(16, 1.0, vec![1.0, 1.0], 0.5).is_err());
        assert!(HalfPlaneGrid::new(16, 1.0, vec![0.0, 1.0], 0.5).is_err());
        assert!(HalfPlaneGrid::new(16, 1.0, vec![1.0], 1.0).is_err());
    }

    #[test]
    fn geometric_layers() {
        let g = HalfPlaneGrid::geometric_to(16, 1.0, 0.01, 10.0, 4, 0.5).unwrap();
        let t = g.layers();
        assert!((t[1] - 0.1).abs() < 1e-12 && (t[2] - 1.0).abs() < 1e-12 && t[3] == 10.0);
        assert_eq!(g.xi()[8], -8.0 * 2.0 * PI);
        assert_eq!(g.x(0), -0.5);
    }

    #[test]
    fn d_of_constant_is_zero() {
        let g = grid(64, 10.0);
        let h = vec![C64::new(3.0, -1.0); 64];
        assert!(g.d_line(&h).iter().all(|v| v.norm() < 1e-13));
    }

    #[test]
    fn d_of_exponential_and_cosine() {
        let g = grid(64, 10.0);
        let a = 2.0 * PI * 3.0 / 10.0;
        let h: Vec<C64> = g.xs().iter().map(|&x| C64::new(0.0, a * x).exp()).collect();
        for (d, v) in g.d_line(&h).iter().zip(&h) {
            assert!((d - v * a).norm() < 1e-12);
        }
        let c: Vec<C64> = g
            .xs()
            .iter()
            .map(|&x| C64::new((a * x).cos(), 0.0))
            .collect();
        for (d, &x) in g.d_line(&c).iter().zip(&g.xs()) {
            assert!((d - C64::new(0.0, a * (a * x).sin())).norm() < 1e-12);
        }
    }

    #[test]
    fn plancherel_round_trip() {
        let g = grid(256, 20.0);
        let h: Vec<C64> = g
            .xs()
            .iter()
            .map(|&x| C64::new((-x * x).exp() * x, (0.3 * x).sin() / (1.0 + x * x)))
            .collect();
        let back = g.ifft(&g.fft(&h));
        assert!(h.iter().zip(&back).all(|(a, b)| (a - b).norm() < 1e-12));
        let fourier: f64 =
            g.fft(&h).iter().map(|v| v.norm_sqr()).sum::<f64>() * g.dx() * g.dx() / g.l();
        assert!((fourier.sqrt() - g.l2_norm(&h)).abs() < 1e-12);
    }

    #[test]
    fn sobolev_endpoints() {
        let g = grid(256, 20.0);
        // mean-free data so that sigma = 0 is the plain L2 norm
        let h: Vec<C64> = g
            .xs()
            .iter()
            .map(|&x| {
                C64::new(
                    x * (-x * x).exp(),
                    (-(x - 1.0).powi(2)).exp() - (-(x + 1.0).powi(2)).exp(),
                )
            })
            .collect();
        assert!((g.sobolev_norm(&h, 0.0) - g.l2_norm(&h)).abs() < 1e-12);
        assert!((g.sobolev_norm(&h, 1.0) - g.l2_norm(&g.dx_line(&h))).abs() < 1e-12);
        assert_eq!(g.sobolev_norm(&vec![C64::new(0.0, 0.0); 256], 0.5), 0.0);
    }

    #[test]
    fn sobolev_of_gaussian_matches_gamma_oracle() {
        // int |xi|^{2s} (2 pi) e^{-xi^2} dxi / 2 pi = Gamma(s + 1/2); the
        // frequency spacing 2 pi / L limits agreement to O((2 pi / L)^{1+2s})
        let g = grid(1024, 320.0);
        let h = gaussian(&g, 1.0);
        assert!((g.sobolev_norm(&h, 0.5) - 1.0).abs() < 1e-4);
        for s in [0.25, 0.75] {
            let want = gamma(s + 0.5).sqrt();
            assert!(
                (g.sobolev_norm(&h, s) / want - 1.0).abs() < 2e-3,
                "sigma {s}"
            );
        }
    }

    #[test]
    fn zeta_values() {
        assert!((zeta(2.0) - PI * PI / 6.0).abs() < 1e-12);
        assert!((zeta(0.0) + 0.5).abs() < 1e-12);
        assert!((zeta(-1.0) + 1.0 / 12.0).abs() < 1e-12);
        assert!((zeta(0.5) + 1.4603545088095868).abs() < 1e-12);
        assert!((zeta(-0.5) + 0.20788622497735457).abs() < 1e-12);
    }

    #[test]
    fn gagliardo_matches_continuum_identity() {
        let g = grid(1024, 40.0);
        let h = gaussian(&g, 1.0);
        for s in [0.3, 0.5, 0.7] {
            let lhs = g.gagliardo_seminorm(&h, s).powi(2);
            let rhs = gagliardo_constant(s) * g.sobolev_norm(&h, s).powi(2);
            assert!((lhs / rhs - 1.0).abs() < 0.02, "sigma {s}: {lhs} vs {rhs}");
        }
        assert!((gagliardo_constant(0.5) - 2.0 * PI).abs() < 1e-12);
        assert_eq!(
            g.gagliardo_seminorm(&vec![C64::new(0.0, 0.0); 1024], 0.5),
            0.0
        );
    }

    #[test]
    fn gagliardo_dilation_covariance() {
        let g = grid(1024, 40.0);
        for s in [0.3, 0.5, 0.7] {
            let base = g.gagliardo_seminorm(&gaussian(&g, 0.5), s).powi(2);
            for lam in [2.0, 4.0, 8.0] {
                let v = g.gagliardo_seminorm(&gaussian(&g, 0.5 * lam), s).powi(2);
                let ratio = v / base / f64::powf(lam, 2.0 * s - 1.0);
                assert!(
                    (ratio - 1.0).abs() < 0.02,
                    "sigma {s} lambda {lam}: {ratio}"
                );
            }
        }
    }

    #[test]
    fn t_weights_integrate_powers() {
        // int_0^inf e^{-t} t^alpha dt = Gamma(alpha + 1)
        let g = HalfPlaneGrid::geometric_to(16, 1.0, 1e-4, 60.0, 64, 0.5).unwrap();
        for alpha in [-0.5, 0.0, 0.5] {
            let w = g.t_weights(alpha);
            let s: f64 = w.iter().zip(g.layers()).map(|(w, t)| w * (-t).exp()).sum();
            assert!(
                (s / gamma(alpha + 1.0) - 1.0).abs() < 1e-3,
                "alpha {alpha}: {s}"
            );
        }
    }

    #[test]
    fn weighted_h1_of_decaying_exponential() {
        let l = 40.0;
        let a = 2.0 * PI * 4.0 / l;
        for s in [0.25, 0.5, 0.75] {
            let g = HalfPlaneGrid::geometric_to(64, l, 1e-4, 80.0, 96, s).unwrap();
            let f = GradientField::from_fn(&g, |x, t| C64::new(-a * t, a * x).exp());
            let want =
                (l * a.powf(2.0 * s) * 2f64.powf(2.0 * s - 1.0) * gamma(2.0 - 2.0 * s)).sqrt();
            let got = g.weighted_h1_seminorm(&f, s);
            assert!(
                (got / want - 1.0).abs() < 2e-3,
                "sigma {s}: {got} vs {want}"
            );
        }
        let g = grid(64, 10.0);
        let c = GradientField::from_fn(&g, |_, _| C64::new(2.0, 1.0));
        assert!(g.weighted_h1_seminorm(&c, 0.5) < 1e-12);
    }

    #[test]
    fn weighted_h1_converges_under_refinement() {
        let l = 40.0;
        let a = 2.0 * PI * 4.0 / l;
        let want = (l * a * gamma(1.0)).sqrt();
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&k| {
                let g = HalfPlaneGrid::geometric_to(32, l, 1e-4, 80.0, k, 0.5).unwrap();
                let f = GradientField::from_fn(&g, |x, t| C64::new(-a * t, a * x).exp());
                (g.weighted_h1_seminorm(&f, 0.5) - want).abs()
            })
            .collect();
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    }

    #[test]
    fn dt_is_exact_on_quadratics() {
        let g = HalfPlaneGrid::geometric_to(8, 1.0, 0.1, 5.0, 7, 0.5).unwrap();
        let f = GradientField::from_fn(&g, |x, t| C64::new(t * t - 3.0 * t + x, 2.0 * t));
        let d = g.dt_field(&f);
        for (k, &t) in g.layers().iter().enumerate() {
            for j in 0..8 {
                assert!((d.at(k, j) - C64::new(2.0 * t - 3.0, 2.0)).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn trace_limit_cases() {
        let l = 20.0;
        let a = 2.0 * PI * 2.0 / l;
        let g = HalfPlaneGrid::geometric_to(64, l, 1e-3, 50.0, 48, 0.5).unwrap();
        let c = GradientField::from_fn(&g, |x, _| C64::new(x.sin(), 1.0));
        let tr = g.trace_limit(&c, 1e-3).unwrap();
        let mean = g.xs().iter().map(|x| x.sin()).sum::<f64>() / 64.0;
        assert!(tr
            .values
            .iter()
            .zip(g.xs())
            .all(|(v, x)| (v - C64::new(x.sin() - mean, 0.0)).norm() < 1e-12));
        assert!(!tr.ill_resolved);

        let f = GradientField::from_fn(&g, |x, t| C64::new(-a * t, a * x).exp());
        let tr = g.trace_limit(&f, 1e-3).unwrap();
        let t1 = g.layers()[0];
        let t2 = g.layers()[1];
        for (v, x) in tr.values.iter().zip(g.xs()) {
            assert!((v - C64::new(0.0, a * x).exp()).norm() < a * a * t1 * t2);
        }
        assert!(!tr.ill_resolved);

        let coarse = HalfPlaneGrid::geometric_to(64, l, 2.0, 50.0, 8, 0.5).unwrap();
        let f = GradientField::from_fn(&coarse, |x, t| C64::new(-a * t, a * x).exp());
        assert!(coarse.trace_limit(&f, 1e-3).unwrap().ill_resolved);
    }

    proptest! {
        #[test]
        fn sobolev_norm_is_homogeneous_and_shift_invariant(c in -3.0f64..3.0, shift in 0usize..64, s in 0.05f64..0.95) {
            let g = grid(64, 10.0);
            let h: Vec<C64> = g.xs().iter().map(|&x| C64::new((-x * x).exp(), x * (-x * x / 2.0).exp())).collect();
            let scaled: Vec<C64> = h.iter().map(|v| v * c).collect();
            let mut shifted = h.clone();
            shifted.rotate_left(shift);
            let base = g.sobolev_norm(&h, s);
            prop_assert!((g.sobolev_norm(&scaled, s) - c.abs() * base).abs() < 1e-12 * (1.0 + base));
            prop_assert!((g.sobolev_norm(&shifted, s) - base).abs() < 1e-12 * (1.0 + base));
        }
    }
}
