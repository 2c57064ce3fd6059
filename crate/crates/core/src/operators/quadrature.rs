//! Lipschitz graph: direct quadrature of the periodized Cauchy and Beurling
//! kernels along each layer curve `zeta(y) = y + i(s + phi(y))`.
//!
//! With `E = exp(2 pi i (zeta - z) / L)` the periodized kernels are
//!
//! ```text
//! K(zeta - z) = 1 / (L (E - 1))         target above the source curve
//!             = E / (L (E - 1))         target below
//! Q(zeta - z) = -4 (pi/L)^2 E / (E - 1)^2
//! ```
//!
//! (`K` is `(1/2 pi i)(pi/L) cot(pi w / L)` minus its constant mode, so that
//! constants are annihilated as on the Fourier side.) Far from the source
//! curve the trapezoid rule in `y` converges geometrically. When the target is
//! close to or on the curve, the density is replaced by
//! `h - sum_{n<=4} c_n q^n` with `q = (L / 2 pi i)(e^{2 pi i (zeta - zeta_c)/L} - 1)`,
//! the Taylor expansion of `h` in powers of `q` about the point `zeta_c`
//! straight below or above the target. The powers of `q` are polynomials in
//! `e^{2 pi i zeta / L}`, so their integrals follow by deforming the curve to
//! `Im zeta = -inf` (target above) or `+inf` (target below):
//!
//! ```text
//! target above:  int q^n K = q(z)^n - (-L / 2 pi i)^n,   int q^n Q = 2 pi i n q(z)^{n-1} q'(z)
//! target below:  int q^n K = 0,                         int q^n Q = 0
//! ```
//!
//! On the curve itself this yields the one-sided boundary limits (Plemelj).
//! The remainder is summed on a grid `REFINE` times finer than the x-grid
//! (density upsampled by zero-padding its spectrum): its trapezoid error
//! decays like `exp(-2 pi d REFINE / dx)` at distance `d`, against a
//! remainder of size `O(d^3)`.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::{
    layer_cells, trace_weights, trapezoid_weights, BackendKind, CauchyOperators, SRule, Sign,
};
use crate::error::{Error, Result};
use crate::geometry::{GraphKind, LipschitzGraph};
use crate::grid::{BoundaryTrace, GradientField, HalfPlaneGrid, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Source/target separations below `NEAR_FACTOR * dx * (1 + M)` use the
/// Taylor subtraction.
const NEAR_FACTOR: f64 = 8.0;

const REFINE: usize = 4;

/// Order of the Taylor subtraction.
const ORDER: usize = 4;

type Series = [C64; ORDER + 1];

fn series_mul(a: &Series, b: &Series) -> Series {
    let mut out = [ZERO; ORDER + 1];
    for i in 0..=ORDER {
        for j in 0..=ORDER - i {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

/// `sum_k coef[k] x^k` for a series `x` without constant term.
fn series_compose(coef: &Series, x: &Series) -> Series {
    let mut out = [ZERO; ORDER + 1];
    out[0] = coef[0];
    let mut pow = *x;
    for c in coef.iter().skip(1) {
        for i in 0..=ORDER {
            out[i] += c * pow[i];
        }
        pow = series_mul(&pow, x);
    }
    out
}

/// Inverse series of `q(tau) = sum_{k>=1} q_k tau^k`.
fn series_revert(q: &Series) -> Series {
    let mut tau = [ZERO; ORDER + 1];
    tau[1] = q[1].inv();
    // tau = (x - sum_{k>=2} q_k tau^k) / q_1, iterated to fixed point
    let mut higher = *q;
    higher[0] = ZERO;
    higher[1] = ZERO;
    for _ in 0..ORDER {
        let corr = series_compose(&higher, &tau);
        let mut next = [ZERO; ORDER + 1];
        next[1] = C64::new(1.0, 0.0);
        for i in 0..=ORDER {
            next[i] = (next[i] - corr[i]) * tau[1];
        }
        tau = next;
    }
    tau
}

/// Coefficients `c_n` with `h = sum_n c_n q^n` near `y = x`, from the
/// derivatives `h^(k)(x)` and `zeta^(k)(x)`.
fn taylor_in_q(h_derivs: &Series, zeta_derivs: &Series, l: f64) -> Series {
    let mut fact = 1.0;
    let mut hs = [ZERO; ORDER + 1];
    let mut w = [ZERO; ORDER + 1];
    let two_pi_i_over_l = C64::new(0.0, 2.0 * PI / l);
    for k in 0..=ORDER {
        if k > 0 {
            fact *= k as f64;
            w[k] = zeta_derivs[k] * two_pi_i_over_l / fact;
        }
        hs[k] = h_derivs[k] / fact;
    }
    // q = (L / 2 pi i)(e^w - 1)
    let mut exp_m1 = [ZERO; ORDER + 1];
    let mut pow = w;
    let mut jf = 1.0;
    for j in 1..=ORDER {
        jf *= j as f64;
        for i in 0..=ORDER {
            exp_m1[i] += pow[i] / jf;
        }
        pow = series_mul(&pow, &w);
    }
    let q: Series = exp_m1.map(|v| v / two_pi_i_over_l);
    series_compose(&hs, &series_revert(&q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Above,
    Below,
}

/// Per-source-layer data for the near-field subtraction.
struct Source {
    /// `h zeta' dx`
    hz: Vec<C64>,
    /// Taylor coefficients in powers of `q` at each node
    coef: Vec<Series>,
    /// `h` on the refined grid
    fine: Vec<C64>,
}

pub struct QuadratureBackend {
    grid: HalfPlaneGrid,
    graph: LipschitzGraph,
    tolerance: f64,
    /// `1 + i phi'(x_j)`
    zp: Vec<C64>,
    /// `zeta^(k)(x_j)`, `k = 0..=ORDER` (the `k = 0` entry is unused)
    zeta_derivs: Vec<Series>,
    /// `exp(2 pi i (y_m - x_i)/L - 2 pi (phi(y_m) - phi(x_i))/L) - 1`, row-major in `i`.
    am1: Vec<C64>,
    /// `zeta'` on the refined grid
    fine_zp: Vec<C64>,
    /// as `am1`, source points on the refined grid (`N x REFINE N`)
    fine_am1: Vec<C64>,
    fine_ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    near_cut: f64,
    s_rule: SRule,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for QuadratureBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuadratureBackend")
            .field("grid", &self.grid)
            .field("graph", &self.graph)
            .field("tolerance", &self.tolerance)
            .field("s_rule", &self.s_rule)
            .finish()
    }
}

/// `exp(z) - 1` without cancellation for small `|z|`.
fn cexpm1(z: C64) -> C64 {
    let (s, c) = z.im.sin_cos();
    let em1 = z.re.exp_m1();
    // e^a e^{ib} - 1 = (e^a - 1) e^{ib} + (e^{ib} - 1)
    let half = (0.5 * z.im).sin();
    C64::new(em1 * c - 2.0 * half * half, em1 * s + s)
}

/// `log(1 + w)` without cancellation for small `|w|`.
fn clog1p(w: C64) -> C64 {
    C64::new(
        0.5 * (2.0 * w.re + w.norm_sqr()).ln_1p(),
        w.im.atan2(1.0 + w.re),
    )
}

/// Pieces `(layer, sep0, sep1, side)` of the cell rule at height `t`, in the
/// separation `sep = t - s`.
fn cell_pieces(cells: &[(f64, f64)], t: f64) -> Vec<(usize, f64, f64, Side)> {
    let mut out = Vec::new();
    for (j, &(lo, hi)) in cells.iter().enumerate() {
        if lo < t {
            out.push((j, t - hi.min(t), t - lo, Side::Above));
        }
        if hi > t {
            out.push((j, t - hi, t - lo.max(t), Side::Below));
        }
    }
    out
}

/// Exact `sep`-integrals over `[s0, s1]` (target above) of the Taylor part:
/// `sum_n c_n (q_z^n - (-L/2 pi i)^n)` and `sum_n c_n 2 pi i n q_z^{n-1} q'_z`,
/// with `q_z = (L / 2 pi i)(e - 1)`, `q'_z = e`, `e = e^{-2 pi sep / L}`.
fn taylor_cell(coef: &Series, l: f64, s0: f64, s1: f64) -> (C64, C64) {
    let a = 2.0 * PI / l;
    let lq = C64::new(0.0, -l / (2.0 * PI));
    // int e^j over the interval
    let mut ints = [0.0; ORDER + 2];
    ints[0] = s1 - s0;
    for (j, v) in ints.iter_mut().enumerate().skip(1) {
        let aj = a * j as f64;
        *v = (-aj * s0).exp() * -(-aj * (s1 - s0)).exp_m1() / aj;
    }
    let binom =
        |n: usize, k: usize| (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    let sgn = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let tpi = C64::new(0.0, 2.0 * PI);
    let (mut cs, mut bs) = (ZERO, ZERO);
    let mut lq_n = C64::new(1.0, 0.0);
    for (n, c) in coef.iter().enumerate().skip(1) {
        let lq_prev = lq_n;
        lq_n *= lq;
        // (e - 1)^n - (-1)^n
        let mut p = 0.0;
        for j in 1..=n {
            p += binom(n, j) * sgn(n - j) * ints[j];
        }
        cs += c * lq_n * p;
        // (e - 1)^{n-1} e
        let mut r = 0.0;
        for j in 0..n {
            r += binom(n - 1, j) * sgn(n - 1 - j) * ints[j + 1];
        }
        bs += c * tpi * n as f64 * lq_prev * r;
    }
    (cs, bs)
}

impl QuadratureBackend {
    pub fn new(grid: HalfPlaneGrid, graph: LipschitzGraph, tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0) {
            return Err(Error::Config("backend.tolerance must be positive".into()));
        }
        let n = grid.n();
        let l = grid.l();
        let dx = grid.dx();
        let xs = grid.xs();
        let phi = xs
            .iter()
            .map(|&x| graph.eval_phi(x))
            .collect::<Result<Vec<f64>>>()?;
        let left = graph.eval_phi(-0.5 * l)?;
        let right = graph.eval_phi(0.5 * l)?;
        if (left - right).abs() > 1e-9 * (1.0 + left.abs().max(right.abs())) {
            return Err(Error::Config(format!(
                "quadrature_lipschitz needs phi(-L/2) = phi(L/2) for the periodized kernels, got {left} and {right}"
            )));
        }
        let zp: Vec<C64> = xs
            .iter()
            .map(|&x| C64::new(1.0, graph.eval_phi_prime(x)))
            .collect();
        // higher derivatives of phi: zero for flat and piecewise linear graphs,
        // spectral for closed forms (phi is periodic here)
        let mut phi_k: Vec<Vec<C64>> = vec![vec![ZERO; n]; ORDER + 1];
        if matches!(graph.kind(), GraphKind::ClosedForm { .. }) {
            let mut d = grid.dx_line(&phi.iter().map(|&v| C64::new(v, 0.0)).collect::<Vec<_>>());
            for row in phi_k.iter_mut().skip(2) {
                d = grid.dx_line(&d);
                *row = d.clone();
            }
        }
        let zeta_derivs: Vec<Series> = (0..n)
            .map(|j| {
                let mut z = [ZERO; ORDER + 1];
                z[1] = zp[j];
                for k in 2..=ORDER {
                    z[k] = C64::new(0.0, phi_k[k][j].re);
                }
                z
            })
            .collect();
        let mut am1 = vec![ZERO; n * n];
        for i in 0..n {
            for m in 0..n {
                let w = C64::new(
                    -2.0 * PI * (phi[m] - phi[i]) / l,
                    2.0 * PI * (xs[m] - xs[i]) / l,
                );
                am1[i * n + m] = cexpm1(w);
            }
        }
        let nf = REFINE * n;
        let fine_x: Vec<f64> = (0..nf)
            .map(|m| -0.5 * l + m as f64 * dx / REFINE as f64)
            .collect();
        let fine_phi = fine_x
            .iter()
            .map(|&x| graph.eval_phi(x))
            .collect::<Result<Vec<f64>>>()?;
        let fine_zp = fine_x
            .iter()
            .map(|&x| C64::new(1.0, graph.eval_phi_prime(x)))
            .collect();
        let mut fine_am1 = vec![ZERO; n * nf];
        for i in 0..n {
            for m in 0..nf {
                let w = C64::new(
                    -2.0 * PI * (fine_phi[m] - phi[i]) / l,
                    2.0 * PI * (fine_x[m] - xs[i]) / l,
                );
                fine_am1[i * nf + m] = cexpm1(w);
            }
        }
        let fine_ifft = rustfft::FftPlanner::new().plan_fft_inverse(nf);
        let threads = std::env::var("PLCAUCHY_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        let near_cut = NEAR_FACTOR * dx * (1.0 + graph.lipschitz_bound());
        Ok(QuadratureBackend {
            grid,
            graph,
            tolerance,
            zp,
            zeta_derivs,
            am1,
            fine_zp,
            fine_am1,
            fine_ifft,
            near_cut,
            s_rule: SRule::Trapezoid,
            pool,
        })
    }

    pub fn with_s_rule(mut self, s_rule: SRule) -> Result<Self> {
        if s_rule == SRule::Exponential {
            return Err(Error::Config(
                "quadrature_lipschitz supports the trapezoid and cell s-rules".into(),
            ));
        }
        self.s_rule = s_rule;
        Ok(self)
    }

    /// Relative amplitude of the top quarter of the spectrum; the Taylor
    /// subtraction needs this to be small. `floor` is a spectral energy
    /// below which a density is measured against the floor instead, so
    /// layers that carry almost nothing are not held to a relative test.
    fn check_resolution(&self, h: &[C64], floor: f64) -> Result<()> {
        let hh = self.grid.fft(h);
        let n = self.grid.n();
        let total: f64 = hh
            .iter()
            .skip(1)
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .max(floor);
        if total == 0.0 {
            return Ok(());
        }
        let top: f64 = hh
            .iter()
            .enumerate()
            .filter(|(m, _)| *m > 3 * n / 8 && *m < 5 * n / 8)
            .map(|(_, v)| v.norm_sqr())
            .sum();
        let frac = (top / total).sqrt();
        if frac > self.tolerance {
            return Err(Error::OperatorAccuracy(format!(
                "density under-resolved for the near-diagonal correction: top-quarter spectral amplitude {frac:.3e} exceeds tolerance {:.3e}",
                self.tolerance
            )));
        }
        Ok(())
    }

    fn layer_energy_floor(&self, h: &GradientField) -> f64 {
        // unnormalized FFT: spectral energy is n times the sample energy
        let energy = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>();
        self.grid.n() as f64 * (0..h.k()).map(|j| energy(h.layer(j))).fold(0.0, f64::max)
    }

    fn source(&self, h: &[C64], floor: f64) -> Result<Source> {
        self.check_resolution(h, floor)?;
        let g = &self.grid;
        let dx = g.dx();
        let l = g.l();
        let mut derivs = vec![h.to_vec()];
        for k in 1..=ORDER {
            derivs.push(g.dx_line(&derivs[k - 1]));
        }
        let hz = h.iter().zip(&self.zp).map(|(a, b)| a * b * dx).collect();
        let coef = (0..h.len())
            .map(|j| {
                let hd: Series = std::array::from_fn(|k| derivs[k][j]);
                taylor_in_q(&hd, &self.zeta_derivs[j], l)
            })
            .collect();
        Ok(Source {
            hz,
            coef,
            fine: self.upsample(h),
        })
    }

    /// Trigonometric interpolation onto the refined grid.
    fn upsample(&self, h: &[C64]) -> Vec<C64> {
        let n = h.len();
        let nf = REFINE * n;
        let hh = self.grid.fft(h);
        let mut buf = vec![ZERO; nf];
        for (k, v) in hh.iter().enumerate() {
            // the Nyquist bin counts as negative, as in the grid's frequency table
            let dst = if k < n / 2 { k } else { k + nf - n };
            buf[dst] = *v;
        }
        self.fine_ifft.process(&mut buf);
        let s = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= s);
        buf
    }

    /// Cauchy integral and `D` of it, of one source layer, at target `x_i`
    /// with `sep = t - s` (`sep = 0` evaluates the one-sided limit `side`).
    fn eval(&self, src: &Source, i: usize, sep: f64, side: Side, beurling: bool) -> (C64, C64) {
        let n = self.grid.n();
        let l = self.grid.l();
        let dx = self.grid.dx();
        let inv_l = 1.0 / l;
        let qfac = -4.0 * (PI / l) * (PI / l);
        let cm1 = (2.0 * PI * sep / l).exp_m1();
        let c = 1.0 + cm1;
        let row = &self.am1[i * n..(i + 1) * n];
        let below = side == Side::Below;
        let mut cs = ZERO;
        let mut bs = ZERO;
        if sep.abs() >= self.near_cut {
            for m in 0..n {
                let em1 = row[m] * c + cm1;
                let inv = em1.inv();
                let mut k = inv * inv_l;
                if below {
                    k += inv_l;
                }
                cs += src.hz[m] * k;
                if beurling {
                    bs += src.hz[m] * ((em1 + 1.0) * inv * inv) * qfac;
                }
            }
        } else {
            let coef = &src.coef[i];
            let lq = C64::new(0.0, -l / (2.0 * PI)); // L / (2 pi i)
            let nf = REFINE * n;
            let frow = &self.fine_am1[i * nf..(i + 1) * nf];
            let fdx = dx / REFINE as f64;
            for m in 0..nf {
                if sep == 0.0 && m == REFINE * i {
                    continue;
                }
                let q = lq * frow[m];
                let mut taylor = coef[ORDER];
                for c in coef[..ORDER].iter().rev() {
                    taylor = taylor * q + c;
                }
                let rem = (src.fine[m] - taylor) * self.fine_zp[m] * fdx;
                let em1 = frow[m] * c + cm1;
                let inv = em1.inv();
                let mut k = inv * inv_l;
                if below {
                    k += inv_l;
                }
                cs += rem * k;
                if beurling {
                    bs += rem * ((em1 + 1.0) * inv * inv) * qfac;
                }
            }
            if !below {
                let qp = (-2.0 * PI * sep / l).exp();
                let qz = lq * (-2.0 * PI * sep / l).exp_m1();
                let tpi = C64::new(0.0, 2.0 * PI);
                let (mut qz_n, mut qz_prev, mut u_n) =
                    (C64::new(1.0, 0.0), C64::new(1.0, 0.0), C64::new(1.0, 0.0));
                for (nn, c) in coef.iter().enumerate().skip(1) {
                    qz_prev = if nn == 1 { qz_prev } else { qz_n };
                    qz_n *= qz;
                    u_n *= -lq;
                    cs += c * (qz_n - u_n);
                    if beurling {
                        bs += c * tpi * nn as f64 * qz_prev * qp;
                    }
                }
            }
        }
        let d = if beurling {
            bs * self.zp[i] * (-1.0 / (2.0 * PI))
        } else {
            ZERO
        };
        (cs, d)
    }

    /// `int_{s0}^{s1} eval(src, i, sep, side) d sep`, with the kernels
    /// integrated exactly in `sep`. With `y = E(sep)`, `dy/dsep = 2 pi y / L`:
    ///
    /// ```text
    /// int K = (1 / 2 pi) log(1 - 1/y)   above,   (1 / 2 pi) log(y - 1)   below
    /// int Q = (2 pi / L) / (y - 1)
    /// ```
    ///
    /// Along `[s0, s1]` the point `1/y` (or `y`) moves on a ray, so the log
    /// of the endpoint ratio is the continuous branch.
    ///
    /// The Taylor part is a polynomial in `e^{-2 pi sep / L}`.
    fn eval_cell(
        &self,
        src: &Source,
        i: usize,
        s0: f64,
        s1: f64,
        side: Side,
        beurling: bool,
    ) -> (C64, C64) {
        let nc = self.near_cut;
        let (near, far) = match side {
            Side::Above => (
                (s0 < nc).then(|| (s0, s1.min(nc))),
                (s1 > nc).then(|| (s0.max(nc), s1)),
            ),
            Side::Below => (
                (s1 > -nc).then(|| (s0.max(-nc), s1)),
                (s0 < -nc).then(|| (s0, s1.min(-nc))),
            ),
        };
        let n = self.grid.n();
        let mut acc = (ZERO, ZERO);
        if let Some((a, b)) = far {
            let row = &self.am1[i * n..(i + 1) * n];
            let (c, d) = self.cell_sum(row, |m| src.hz[m], a, b, side, None, beurling);
            acc.0 += c;
            acc.1 += d;
        }
        if let Some((a, b)) = near {
            let l = self.grid.l();
            let coef = &src.coef[i];
            let lq = C64::new(0.0, -l / (2.0 * PI));
            let nf = REFINE * n;
            let frow = &self.fine_am1[i * nf..(i + 1) * nf];
            let fdx = self.grid.dx() / REFINE as f64;
            let touches = match side {
                Side::Above => a == 0.0,
                Side::Below => b == 0.0,
            };
            let rem = |m: usize| {
                let q = lq * frow[m];
                let mut taylor = coef[ORDER];
                for c in coef[..ORDER].iter().rev() {
                    taylor = taylor * q + c;
                }
                (src.fine[m] - taylor) * self.fine_zp[m] * fdx
            };
            let skip = touches.then_some(REFINE * i);
            let (c, d) = self.cell_sum(frow, rem, a, b, side, skip, beurling);
            acc.0 += c;
            acc.1 += d;
            if side == Side::Above {
                let (c, d) = taylor_cell(coef, l, a, b);
                acc.0 += c;
                acc.1 += d;
            }
        }
        let d = if beurling {
            acc.1 * self.zp[i] * (-1.0 / (2.0 * PI))
        } else {
            ZERO
        };
        (acc.0, d)
    }

    fn solid_trapezoid(&self, sources: &[Source]) -> Vec<(C64, C64)> {
        let t = self.grid.layers();
        let n = self.grid.n();
        let kk = t.len();
        let weights: Vec<(Vec<f64>, Vec<f64>)> = (0..kk).map(|k| trapezoid_weights(t, k)).collect();
        self.pool.install(|| {
            (0..kk * n)
                .into_par_iter()
                .map(|ki| {
                    let (k, i) = (ki / n, ki % n);
                    let (lower, upper) = &weights[k];
                    let mut acc = (ZERO, ZERO);
                    for j in 0..kk {
                        let mut add = |w: f64, side: Side| {
                            if w != 0.0 {
                                let (c, d) = self.eval(&sources[j], i, t[k] - t[j], side, true);
                                acc.0 += c * w;
                                acc.1 += d * w;
                            }
                        };
                        if j <= k {
                            add(lower[j], Side::Above);
                        }
                        if j >= k {
                            add(upper[j], Side::Below);
                        }
                    }
                    acc
                })
                .collect()
        })
    }

    /// `sum_m dens(m) int_{s0}^{s1} (K, Q)` over the source points of `row`.
    #[allow(clippy::too_many_arguments)]
    fn cell_sum(
        &self,
        row: &[C64],
        dens: impl Fn(usize) -> C64,
        s0: f64,
        s1: f64,
        side: Side,
        skip: Option<usize>,
        beurling: bool,
    ) -> (C64, C64) {
        let l = self.grid.l();
        let a = 2.0 * PI / l;
        let qfac = -4.0 * (PI / l) * (PI / l);
        let c0m1 = (a * s0).exp_m1();
        let c1m1 = (a * s1).exp_m1();
        let grow = (a * (s1 - s0)).exp_m1();
        let shrink = -(-a * (s1 - s0)).exp_m1();
        let mut cs = ZERO;
        let mut bs = ZERO;
        for (m, &r) in row.iter().enumerate() {
            if skip == Some(m) {
                continue;
            }
            let e0 = r * (1.0 + c0m1) + c0m1;
            let w = match side {
                Side::Above => shrink / e0,
                Side::Below => (e0 + 1.0) * grow / e0,
            };
            let h = dens(m);
            cs += h * clog1p(w);
            if beurling {
                let e1 = r * (1.0 + c1m1) + c1m1;
                bs += h * (e0.inv() - e1.inv());
            }
        }
        (cs / (2.0 * PI), bs * (qfac / a))
    }

    fn check_shape(&self, h: &GradientField) -> Result<()> {
        if h.k() != self.grid.k() || h.n() != self.grid.n() {
            return Err(Error::Shape(format!(
                "field is {}x{}, grid is {}x{}",
                h.k(),
                h.n(),
                self.grid.k(),
                self.grid.n()
            )));
        }
        Ok(())
    }
}

impl CauchyOperators for QuadratureBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::QuadratureLipschitz
    }

    fn grid(&self) -> &HalfPlaneGrid {
        &self.grid
    }

    fn graph(&self) -> &LipschitzGraph {
        &self.graph
    }

    fn hardy_projection(&self, h: &[C64], sign: Sign) -> Result<BoundaryTrace> {
        let src = self.source(h, 0.0)?;
        let n = self.grid.n();
        let v: Vec<C64> = self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| match sign {
                    Sign::Plus => self.eval(&src, i, 0.0, Side::Above, false).0,
                    Sign::Minus => -self.eval(&src, i, 0.0, Side::Below, false).0,
                })
                .collect()
        });
        Ok(BoundaryTrace::new(v))
    }

    fn boundary_cauchy(&self, g: &[C64], t: f64) -> Result<Vec<C64>> {
        if t == 0.0 {
            return Err(Error::Invariant(
                "boundary_cauchy at t = 0; use hardy_projection".into(),
            ));
        }
        let src = self.source(g, 0.0)?;
        let side = if t > 0.0 { Side::Above } else { Side::Below };
        let n = self.grid.n();
        Ok(self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| self.eval(&src, i, t, side, false).0)
                .collect()
        }))
    }

    fn boundary_cauchy_field(&self, g: &[C64]) -> Result<(GradientField, GradientField)> {
        let src = self.source(g, 0.0)?;
        let grid = &self.grid;
        let n = grid.n();
        let t = grid.layers();
        let vals: Vec<(C64, C64)> = self.pool.install(|| {
            (0..t.len() * n)
                .into_par_iter()
                .map(|ki| self.eval(&src, ki % n, t[ki / n], Side::Above, true))
                .collect()
        });
        let mut f = GradientField::zeros(t.len(), n);
        let mut df = GradientField::zeros(t.len(), n);
        for (ki, (a, b)) in vals.into_iter().enumerate() {
            f.values[ki] = a;
            df.values[ki] = b;
        }
        Ok((f, df))
    }

    fn solid_cauchy_and_beurling(
        &self,
        h: &GradientField,
    ) -> Result<(GradientField, GradientField)> {
        self.check_shape(h)?;
        let grid = &self.grid;
        let n = grid.n();
        let t = grid.layers();
        let kk = t.len();
        let floor = self.layer_energy_floor(h);
        let sources = (0..kk)
            .map(|j| self.source(h.layer(j), floor))
            .collect::<Result<Vec<_>>>()?;
        let vals: Vec<(C64, C64)> = if self.s_rule == SRule::Cell {
            let cells = layer_cells(t);
            let pieces: Vec<_> = t.iter().map(|&tk| cell_pieces(&cells, tk)).collect();
            self.pool.install(|| {
                (0..kk * n)
                    .into_par_iter()
                    .map(|ki| {
                        let (k, i) = (ki / n, ki % n);
                        let mut acc = (ZERO, ZERO);
                        for &(j, s0, s1, side) in &pieces[k] {
                            let (c, d) = self.eval_cell(&sources[j], i, s0, s1, side, true);
                            acc.0 += c;
                            acc.1 += d;
                        }
                        acc
                    })
                    .collect()
            })
        } else {
            self.solid_trapezoid(&sources)
        };
        let mut st = GradientField::zeros(kk, n);
        let mut sb = GradientField::zeros(kk, n);
        for (ki, (a, b)) in vals.into_iter().enumerate() {
            st.values[ki] = a;
            sb.values[ki] = b;
        }
        Ok((st, sb))
    }

    fn solid_cauchy_trace(&self, h: &GradientField) -> Result<Vec<C64>> {
        self.check_shape(h)?;
        let grid = &self.grid;
        let n = grid.n();
        let t = grid.layers();
        let floor = self.layer_energy_floor(h);
        let sources = (0..t.len())
            .map(|j| self.source(h.layer(j), floor))
            .collect::<Result<Vec<_>>>()?;
        if self.s_rule == SRule::Cell {
            let pieces = cell_pieces(&layer_cells(t), 0.0);
            return Ok(self.pool.install(|| {
                (0..n)
                    .into_par_iter()
                    .map(|i| {
                        pieces
                            .iter()
                            .map(|&(j, s0, s1, side)| {
                                self.eval_cell(&sources[j], i, s0, s1, side, false).0
                            })
                            .sum()
                    })
                    .collect()
            }));
        }
        let w = trace_weights(t);
        Ok(self.pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut acc = ZERO;
                    for j in 0..t.len() {
                        acc += self.eval(&sources[j], i, -t[j], Side::Below, false).0 * w[j];
                    }
                    acc
                })
                .collect()
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_in_q_reproduces_a_polynomial_in_q() {
        // h = 2 + 3q - q^2 + 0.5 q^4 on a curved curve: recover the coefficients
        let l = 7.0;
        let zd: Series = [
            ZERO,
            C64::new(1.0, 0.4),
            C64::new(0.0, -0.3),
            C64::new(0.0, 0.8),
            C64::new(0.0, 0.1),
        ];
        let want = [
            C64::new(2.0, 0.0),
            C64::new(3.0, 0.0),
            C64::new(-1.0, 0.0),
            ZERO,
            C64::new(0.5, 0.0),
        ];
        // derivatives of h(tau) = sum want_n q(tau)^n via the forward series
        let mut fact = 1.0;
        let mut w = [ZERO; ORDER + 1];
        for k in 1..=ORDER {
            fact *= k as f64;
            w[k] = zd[k] * C64::new(0.0, 2.0 * PI / l) / fact;
        }
        let mut e = [ZERO; ORDER + 1];
        let mut pow = w;
        let mut jf = 1.0;
        for j in 1..=ORDER {
            jf *= j as f64;
            for i in 0..=ORDER {
                e[i] += pow[i] / jf;
            }
            pow = series_mul(&pow, &w);
        }
        let q: Series = e.map(|v| v / C64::new(0.0, 2.0 * PI / l));
        let h_tau = series_compose(&want, &q);
        let mut derivs = h_tau;
        let mut f = 1.0;
        for k in 1..=ORDER {
            f *= k as f64;
            derivs[k] *= f;
        }
        let got = taylor_in_q(&derivs, &zd, l);
        for k in 0..=ORDER {
            assert!(
                (got[k] - want[k]).norm() < 1e-12,
                "{k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }

    #[test]
    fn cexpm1_matches_exp() {
        for z in [
            C64::new(1e-9, -2e-9),
            C64::new(0.3, 1.1),
            C64::new(-2.0, 5.0),
        ] {
            let want = z.exp() - 1.0;
            assert!((cexpm1(z) - want).norm() < 1e-15 * (1.0 + want.norm()) + 1e-24);
        }
        let tiny = C64::new(1e-12, 1e-12);
        assert!((cexpm1(tiny) - tiny).norm() < 1e-23);
    }
}
