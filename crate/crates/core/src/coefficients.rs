//! Pointwise coefficient matrices `B` for the first-order system
//! `d_t f + B(f) D f = 0`.
//!
//! A complex number `f = f1 + i f2` is treated as the real column `(f1, f2)`;
//! every matrix here acts on such columns.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Real 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientMatrix {
    pub b11: f64,
    pub b12: f64,
    pub b21: f64,
    pub b22: f64,
}

impl CoefficientMatrix {
    pub const IDENTITY: CoefficientMatrix = CoefficientMatrix {
        b11: 1.0,
        b12: 0.0,
        b21: 0.0,
        b22: 1.0,
    };
    pub const ZERO: CoefficientMatrix = CoefficientMatrix {
        b11: 0.0,
        b12: 0.0,
        b21: 0.0,
        b22: 0.0,
    };

    pub fn new(b11: f64, b12: f64, b21: f64, b22: f64) -> Self {
        CoefficientMatrix { b11, b12, b21, b22 }
    }

    /// Matrix of multiplication by the complex number `c`.
    pub fn from_complex(c: Complex64) -> Self {
        CoefficientMatrix {
            b11: c.re,
            b12: -c.im,
            b21: c.im,
            b22: c.re,
        }
    }

    #[inline]
    pub fn apply(&self, v: Complex64) -> Complex64 {
        Complex64::new(
            self.b11 * v.re + self.b12 * v.im,
            self.b21 * v.re + self.b22 * v.im,
        )
    }

    pub fn mul(&self, o: &CoefficientMatrix) -> CoefficientMatrix {
        CoefficientMatrix {
            b11: self.b11 * o.b11 + self.b12 * o.b21,
            b12: self.b11 * o.b12 + self.b12 * o.b22,
            b21: self.b21 * o.b11 + self.b22 * o.b21,
            b22: self.b21 * o.b12 + self.b22 * o.b22,
        }
    }

    pub fn sub(&self, o: &CoefficientMatrix) -> CoefficientMatrix {
        CoefficientMatrix {
            b11: self.b11 - o.b11,
            b12: self.b12 - o.b12,
            b21: self.b21 - o.b21,
            b22: self.b22 - o.b22,
        }
    }

    pub fn scale(&self, s: f64) -> CoefficientMatrix {
        CoefficientMatrix {
            b11: s * self.b11,
            b12: s * self.b12,
            b21: s * self.b21,
            b22: s * self.b22,
        }
    }

    pub fn det(&self) -> f64 {
        self.b11 * self.b22 - self.b12 * self.b21
    }

    pub fn inverse(&self) -> Option<CoefficientMatrix> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(CoefficientMatrix::new(
            self.b22 / d,
            -self.b12 / d,
            -self.b21 / d,
            self.b11 / d,
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.b11.is_finite() && self.b12.is_finite() && self.b21.is_finite() && self.b22.is_finite()
    }

    /// Largest singular value (operator norm on R^2), closed form.
    pub fn spectral_norm(&self) -> f64 {
        let s =
            self.b11 * self.b11 + self.b12 * self.b12 + self.b21 * self.b21 + self.b22 * self.b22;
        let d = self.det();
        let disc = (s * s - 4.0 * d * d).max(0.0);
        ((s + disc.sqrt()) / 2.0).sqrt()
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.b11
            .abs()
            .max(self.b12.abs())
            .max(self.b21.abs())
            .max(self.b22.abs())
    }
}

/// `B0(phi') = 1 / (1 + i phi')` as a real matrix.
pub fn b_zero(phi_prime: f64) -> CoefficientMatrix {
    // dividing (rather than scaling by 1/d) keeps b11 = 1 exact on flat graphs
    let d = 1.0 + phi_prime * phi_prime;
    CoefficientMatrix::new(1.0 / d, phi_prime / d, -phi_prime / d, 1.0 / d)
}

/// The p-Laplace coefficient matrix `B(f)` at slope `phi_prime`.
///
/// For `|f| <= eps_zero` the value is `B0(phi_prime)`: `B` is 0-homogeneous in
/// `f` and has no canonical value at the origin.
pub fn b_plaplace(
    p: f64,
    f: Complex64,
    phi_prime: f64,
    eps_zero: f64,
) -> Result<CoefficientMatrix> {
    let n2 = f.norm_sqr();
    if n2.sqrt() <= eps_zero || n2 == 0.0 {
        return Ok(b_zero(phi_prime));
    }
    // normalizing first keeps the entries O(1) regardless of |f|
    let u = f / n2.sqrt();
    let (f1, f2) = (u.re, u.im);
    let q = p - 2.0;
    let dp = phi_prime;
    let e11 = q * f2 * f2 + 1.0;
    let e22 = q * f1 * f1 + 1.0;
    let cross = q * f1 * f2;
    let delta = e11 + 2.0 * dp * cross + dp * dp * e22;
    if !(delta > 0.0) {
        return Err(Error::Invariant(format!(
            "Delta_p = {delta} <= 0 for p = {p}, f = {f}, phi' = {phi_prime}"
        )));
    }
    Ok(CoefficientMatrix::new(
        e11 / delta,
        e22 * dp / delta,
        (-2.0 * cross - dp * e22) / delta,
        e22 / delta,
    ))
}

/// `E = I - B0^{-1} B`.
pub fn perturbation_matrix(b: &CoefficientMatrix, phi_prime: f64) -> CoefficientMatrix {
    // B0^{-1} = 1 + i phi'
    let b0_inv = CoefficientMatrix::from_complex(Complex64::new(1.0, phi_prime));
    CoefficientMatrix::IDENTITY.sub(&b0_inv.mul(b))
}

/// Smallest eigenvalue of the symmetric part `(B + B^T) / 2`.
pub fn accretivity_kappa(b: &CoefficientMatrix) -> f64 {
    let a = b.b11;
    let d = b.b22;
    let c = 0.5 * (b.b12 + b.b21);
    0.5 * (a + d) - (0.25 * (a - d) * (a - d) + c * c).sqrt()
}

/// Empirical `sup |B(f) - B0|` over `f` on the unit circle (by 0-homogeneity
/// this covers all `f != 0`) and slopes in `[-M, M]`.
///
/// `sample_count` angles are used; the slope interval is sampled at 21 points
/// when `M > 0`.
pub fn closeness_to_b0(p: f64, m: f64, sample_count: usize) -> Result<f64> {
    let n = sample_count.max(1);
    let slopes: Vec<f64> = if m > 0.0 {
        (0..21).map(|i| -m + 2.0 * m * i as f64 / 20.0).collect()
    } else {
        vec![0.0]
    };
    let mut sup = 0.0f64;
    for &dp in &slopes {
        let b0 = b_zero(dp);
        for i in 0..n {
            let theta = std::f64::consts::PI * i as f64 / n as f64;
            let b = b_plaplace(p, Complex64::from_polar(1.0, theta), dp, 0.0)?;
            sup = sup.max(b.sub(&b0).spectral_norm());
        }
    }
    Ok(sup)
}

type FluxFn = dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync;
type JacobianFn = dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync;

/// How `grad a` is obtained.
#[derive(Clone)]
pub enum Jacobian {
    Analytic(Arc<JacobianFn>),
    /// Central differences with step `rel_step * |z|`.
    CentralDifference {
        rel_step: f64,
    },
}

/// A flux `a: R^2 -> R^2` for `div a(grad u) = 0` with growth/ellipticity
/// constants `0 < nu <= L` for exponent `p`.
#[derive(Clone)]
pub struct QuasilinearSymbol {
    pub a: Arc<FluxFn>,
    pub jacobian: Jacobian,
    pub p: f64,
    pub nu: f64,
    pub big_l: f64,
}

/// Outcome of [`b_general`]: the matrix plus a flag when the ellipticity
/// margin was breached.
#[derive(Debug, Clone, Copy)]
pub struct GeneralCoefficient {
    pub matrix: CoefficientMatrix,
    pub margin_warning: bool,
}

impl QuasilinearSymbol {
    /// `a(z) = |z|^{p-2} z` with its analytic Jacobian.
    pub fn p_laplace(p: f64) -> Self {
        let a = move |z: [f64; 2]| {
            let r2 = z[0] * z[0] + z[1] * z[1];
            if r2 == 0.0 {
                return [0.0, 0.0];
            }
            let s = r2.powf(0.5 * (p - 2.0));
            [s * z[0], s * z[1]]
        };
        let jac = move |z: [f64; 2]| {
            let r2 = z[0] * z[0] + z[1] * z[1];
            if r2 == 0.0 {
                return [[0.0; 2]; 2];
            }
            let s = r2.powf(0.5 * (p - 2.0));
            let q = (p - 2.0) / r2;
            [
                [s * (1.0 + q * z[0] * z[0]), s * q * z[0] * z[1]],
                [s * q * z[0] * z[1], s * (1.0 + q * z[1] * z[1])],
            ]
        };
        QuasilinearSymbol {
            a: Arc::new(a),
            jacobian: Jacobian::Analytic(Arc::new(jac)),
            p,
            nu: (p - 1.0).min(1.0),
            big_l: 1.0 + (p - 1.0).max(1.0),
        }
    }

    /// Same flux, Jacobian by central differences.
    pub fn p_laplace_numeric(p: f64, rel_step: f64) -> Self {
        let mut s = Self::p_laplace(p);
        s.jacobian = Jacobian::CentralDifference { rel_step };
        s
    }

    /// Flux given by two expressions in the variables `z1`, `z2`.
    pub fn from_expressions(a1: &str, a2: &str, p: f64, nu: f64, big_l: f64) -> Result<Self> {
        let parse = |s: &str| -> Result<meval::Expr> {
            let e = crate::expr::parse(s, "flux")?;
            crate::expr::eval2(&e, ["z1", "z2"], [0.5, 0.25])
                .ok_or_else(|| Error::Config(format!("cannot evaluate flux {s:?}")))?;
            Ok(e)
        };
        let (e1, e2) = (parse(a1)?, parse(a2)?);
        let a = move |z: [f64; 2]| {
            [
                crate::expr::eval2(&e1, ["z1", "z2"], z).unwrap_or(f64::NAN),
                crate::expr::eval2(&e2, ["z1", "z2"], z).unwrap_or(f64::NAN),
            ]
        };
        if !(0.0 < nu && nu <= big_l) {
            return Err(Error::Config(format!(
                "need 0 < nu <= L, got nu = {nu}, L = {big_l}"
            )));
        }
        Ok(QuasilinearSymbol {
            a: Arc::new(a),
            jacobian: Jacobian::CentralDifference { rel_step: 1e-6 },
            p,
            nu,
            big_l,
        })
    }

    /// `grad a(z)` as `[[d1 a1, d2 a1], [d1 a2, d2 a2]]`.
    pub fn jacobian_at(&self, z: [f64; 2]) -> [[f64; 2]; 2] {
        match &self.jacobian {
            Jacobian::Analytic(j) => j(z),
            Jacobian::CentralDifference { rel_step } => {
                let h = rel_step * (z[0] * z[0] + z[1] * z[1]).sqrt().max(f64::MIN_POSITIVE);
                let mut out = [[0.0; 2]; 2];
                for k in 0..2 {
                    let mut zp = z;
                    let mut zm = z;
                    zp[k] += h;
                    zm[k] -= h;
                    let (ap, am) = ((self.a)(zp), (self.a)(zm));
                    for i in 0..2 {
                        out[i][k] = (ap[i] - am[i]) / (2.0 * h);
                    }
                }
                out
            }
        }
    }

    /// Largest sampled `(|a(z)| + |grad a(z)||z|) / (L |z|^{p-1})` and smallest
    /// sampled `<grad a(z) xi, xi> / (nu |z|^{p-2} |xi|^2)` over a seeded sweep.
    /// The structure conditions hold on the sample when the first is `<= 1`
    /// and the second `>= 1`.
    pub fn structure_ratios(&self, samples: usize, seed: u64) -> (f64, f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut growth = 0.0f64;
        let mut ellip = f64::INFINITY;
        for _ in 0..samples {
            let r: f64 = 10f64.powf(rng.random_range(-2.0..2.0));
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let z = [r * th.cos(), r * th.sin()];
            let ps: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let xi = [ps.cos(), ps.sin()];
            let a = (self.a)(z);
            let j = self.jacobian_at(z);
            let jn = CoefficientMatrix::new(j[0][0], j[0][1], j[1][0], j[1][1]).spectral_norm();
            let an = (a[0] * a[0] + a[1] * a[1]).sqrt();
            growth = growth.max((an + jn * r) / (self.big_l * r.powf(self.p - 1.0)));
            let q = xi[0] * (j[0][0] * xi[0] + j[0][1] * xi[1])
                + xi[1] * (j[1][0] * xi[0] + j[1][1] * xi[1]);
            ellip = ellip.min(q / (self.nu * r.powf(self.p - 2.0)));
        }
        (growth, ellip)
    }
}

/// Coefficient matrix for a general flux; `grad a` is evaluated at the
/// gradient `(f1, -f2)` that `f` conjugates.
pub fn b_general(
    symbol: &QuasilinearSymbol,
    f: Complex64,
    phi_prime: f64,
    eps_zero: f64,
) -> Result<GeneralCoefficient> {
    let r = f.norm();
    if r <= eps_zero || r == 0.0 {
        return Ok(GeneralCoefficient {
            matrix: b_zero(phi_prime),
            margin_warning: false,
        });
    }
    let j = symbol.jacobian_at([f.re, -f.im]);
    let (d1a1, d2a1, d1a2, d2a2) = (j[0][0], j[0][1], j[1][0], j[1][1]);
    let dp = phi_prime;
    let delta = d2a2 - dp * (d1a2 + d2a1) + dp * dp * d1a1;
    if !(delta > 0.0) {
        return Err(Error::Invariant(format!(
            "Delta = {delta} <= 0 for f = {f}, phi' = {dp}"
        )));
    }
    let margin = symbol.nu * r.powf(symbol.p - 2.0) * (1.0 + dp * dp) / 2.0;
    let matrix =
        CoefficientMatrix::new(d2a2, d1a1 * dp, d2a1 + d1a2 - dp * d1a1, d1a1).scale(1.0 / delta);
    Ok(GeneralCoefficient {
        matrix,
        margin_warning: delta <= margin,
    })
}
