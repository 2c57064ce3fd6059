//! Quasiregularity diagnostics for computed fields: Wirtinger derivatives,
//! Beltrami coefficient, dilatation, the multiplier `B = -d_t f / D f` and the
//! elliptic matrix `A_mu` attached to a Beltrami coefficient.
//!
//! Statistics are taken over interior layers only; the first and last layers
//! carry one-sided t-differences.

use serde::Serialize;

use crate::coefficients::CoefficientMatrix;
use crate::error::{Error, Result};
use crate::geometry::LipschitzGraph;
use crate::grid::{GradientField, HalfPlaneGrid, C64};

/// `(d_z f, d_zbar f)` in ambient coordinates.
///
/// With `y = t + phi(x)`: `d_y = d_t` and `d_x|_y = d_x|_t - phi' d_t`.
pub fn wirtinger(
    grid: &HalfPlaneGrid,
    graph: &LipschitzGraph,
    f: &GradientField,
) -> (GradientField, GradientField) {
    let fx = grid.dx_field(f);
    let ft = grid.dt_field(f);
    let slopes: Vec<f64> = grid.xs().iter().map(|&x| graph.eval_phi_prime(x)).collect();
    let mut dz = GradientField::zeros(f.k(), f.n());
    let mut dzbar = GradientField::zeros(f.k(), f.n());
    let i = C64::new(0.0, 1.0);
    for k in 0..f.k() {
        for (j, &s) in slopes.iter().enumerate() {
            let dy = ft.at(k, j);
            let dx = fx.at(k, j) - dy * s;
            dz.set(k, j, 0.5 * (dx - i * dy));
            dzbar.set(k, j, 0.5 * (dx + i * dy));
        }
    }
    (dz, dzbar)
}

#[derive(Debug, Clone)]
pub struct BeltramiField {
    pub mu: GradientField,
    /// Points where `|d_z f|` is negligible; `mu` is 0 there.
    pub flagged: Vec<bool>,
    /// `sup |mu|` over unflagged interior points.
    pub k_sup: f64,
    /// 99.9th percentile of `|mu|` over the same points.
    pub k_p999: f64,
    pub flagged_fraction: f64,
}

fn interior(k: usize, layers: usize) -> bool {
    layers < 3 || (k > 0 && k + 1 < layers)
}

fn percentile(mut v: Vec<f64>, q: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

/// `mu = d_zbar f / d_z f`, flagged where `|d_z f| < eps_zero * sup |d_z f|`.
pub fn beltrami(
    grid: &HalfPlaneGrid,
    graph: &LipschitzGraph,
    f: &GradientField,
    eps_zero: f64,
) -> BeltramiField {
    let (dz, dzbar) = wirtinger(grid, graph, f);
    beltrami_from(&dz, &dzbar, eps_zero)
}

fn beltrami_from(dz: &GradientField, dzbar: &GradientField, eps_zero: f64) -> BeltramiField {
    let (kk, n) = (dz.k(), dz.n());
    let scale = (0..kk)
        .filter(|&k| interior(k, kk))
        .flat_map(|k| dz.layer(k).iter().map(|v| v.norm()))
        .fold(0.0, f64::max);
    let cut = eps_zero.max(1e-14) * scale;
    let mut mu = GradientField::zeros(kk, n);
    let mut flagged = vec![false; kk * n];
    let mut mags = Vec::new();
    let mut n_interior = 0usize;
    let mut n_flagged = 0usize;
    for k in 0..kk {
        for j in 0..n {
            let a = dz.at(k, j);
            if a.norm() <= cut {
                flagged[k * n + j] = true;
            } else {
                mu.set(k, j, dzbar.at(k, j) / a);
            }
            if interior(k, kk) {
                n_interior += 1;
                if flagged[k * n + j] {
                    n_flagged += 1;
                } else {
                    mags.push(mu.at(k, j).norm());
                }
            }
        }
    }
    let k_sup = mags.iter().copied().fold(0.0, f64::max);
    let k_p999 = percentile(mags, 0.999);
    let flagged_fraction = if n_interior > 0 {
        n_flagged as f64 / n_interior as f64
    } else {
        0.0
    };
    BeltramiField {
        mu,
        flagged,
        k_sup,
        k_p999,
        flagged_fraction,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Dilatation {
    /// Larger of the pointwise sup of `|grad f|^2 / J` and `(1 + k^2)/(1 - k^2)`.
    pub k_est: f64,
    /// Unflagged interior points with `J <= 0`.
    pub orientation_violations: usize,
}

pub fn dilatation(
    grid: &HalfPlaneGrid,
    graph: &LipschitzGraph,
    f: &GradientField,
    eps_zero: f64,
) -> Dilatation {
    let (dz, dzbar) = wirtinger(grid, graph, f);
    let b = beltrami_from(&dz, &dzbar, eps_zero);
    let kk = f.k();
    let mut pointwise = 1.0f64;
    let mut violations = 0;
    for k in (0..kk).filter(|&k| interior(k, kk)) {
        for j in 0..f.n() {
            if b.flagged[k * f.n() + j] {
                continue;
            }
            let a2 = dz.at(k, j).norm_sqr();
            let b2 = dzbar.at(k, j).norm_sqr();
            if a2 - b2 <= 0.0 {
                violations += 1;
                pointwise = f64::INFINITY;
            } else {
                pointwise = pointwise.max((a2 + b2) / (a2 - b2));
            }
        }
    }
    let from_k = if b.k_sup < 1.0 {
        (1.0 + b.k_sup * b.k_sup) / (1.0 - b.k_sup * b.k_sup)
    } else {
        f64::INFINITY
    };
    Dilatation {
        k_est: pointwise.max(from_k),
        orientation_violations: violations,
    }
}

/// The multiplier `B = -d_t f / D f`, with the points where `|D f|` is
/// negligible flagged (and `B` set to 0 there).
pub fn b_from_field(
    grid: &HalfPlaneGrid,
    f: &GradientField,
    eps_zero: f64,
) -> (Vec<C64>, Vec<bool>) {
    let ft = grid.dt_field(f);
    let df = grid.d_field(f);
    let scale = df.sup_norm();
    let cut = eps_zero.max(1e-14) * scale;
    let mut b = vec![C64::new(0.0, 0.0); f.values.len()];
    let mut flagged = vec![false; f.values.len()];
    for (i, (t, d)) in ft.values.iter().zip(&df.values).enumerate() {
        if scale == 0.0 || d.norm() <= cut {
            flagged[i] = true;
        } else {
            b[i] = -t / d;
        }
    }
    (b, flagged)
}

/// Real form of a complex multiplier.
pub fn multiplier_matrix(b: C64) -> CoefficientMatrix {
    CoefficientMatrix::from_complex(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipticMatrix {
    pub a: CoefficientMatrix,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

/// `A_mu = [[|1 - mu|^2, -2 Im mu], [-2 Im mu, |1 + mu|^2]] / (1 - |mu|^2)`,
/// symmetric with determinant 1, and its eigenvalues `c +- sqrt(c^2 - 1)`,
/// `c = (1 + |mu|^2)/(1 - |mu|^2)`.
pub fn beltrami_to_matrix(mu: C64) -> Result<EllipticMatrix> {
    let m2 = mu.norm_sqr();
    if !(m2 < 1.0) {
        return Err(Error::DegenerateEllipticity(mu.norm()));
    }
    let s = 1.0 / (1.0 - m2);
    let one = C64::new(1.0, 0.0);
    let a12 = -2.0 * mu.im * s;
    let a = CoefficientMatrix::new(
        (one - mu).norm_sqr() * s,
        a12,
        a12,
        (one + mu).norm_sqr() * s,
    );
    // (1 + |mu|)/(1 - |mu|) is c + sqrt(c^2 - 1) without the cancellation
    let r = mu.norm();
    let lambda_plus = (1.0 + r) / (1.0 - r);
    Ok(EllipticMatrix {
        a,
        lambda_plus,
        lambda_minus: 1.0 / lambda_plus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn grid() -> HalfPlaneGrid {
        HalfPlaneGrid::new(64, 10.0, (1..=40).map(|i| 0.05 * i as f64).collect(), 0.5).unwrap()
    }

    // periodic stand-in for z: w = (L / 2 pi) sin(2 pi z / L), w' = cos(2 pi z / L)
    fn w(l: f64, z: C64) -> (C64, C64) {
        let a = 2.0 * PI / l;
        ((a * z).sin() / a, (a * z).cos())
    }

    #[test]
    fn wirtinger_of_w_plus_conjugate() {
        let g = grid();
        let flat = LipschitzGraph::flat();
        let f = GradientField::from_fn(&g, |x, t| {
            let (v, _) = w(g.l(), C64::new(x, t));
            v + 0.3 * v.conj()
        });
        let (dz, dzbar) = wirtinger(&g, &flat, &f);
        for k in 1..g.k() - 1 {
            for j in 0..g.n() {
                let (_, d) = w(g.l(), C64::new(g.x(j), g.layers()[k]));
                assert!((dz.at(k, j) - d).norm() < 2e-3, "{k} {j}");
                assert!((dzbar.at(k, j) - 0.3 * d.conj()).norm() < 2e-3);
            }
        }
        let b = beltrami(&g, &flat, &f, 1e-3);
        assert!((b.k_sup - 0.3).abs() < 0.02, "{}", b.k_sup);
        let d = dilatation(&g, &flat, &f, 1e-3);
        assert_eq!(d.orientation_violations, 0);
        assert!((d.k_est - 1.09 / 0.91).abs() < 0.05, "{}", d.k_est);
    }

    #[test]
    fn holomorphic_field_has_zero_mu_and_b_one() {
        let g = grid();
        let a = 2.0 * PI / g.l() * 3.0;
        let f = GradientField::from_fn(&g, |x, t| C64::new(0.0, a * x).exp() * (-a * t).exp());
        let flat = LipschitzGraph::flat();
        let b = beltrami(&g, &flat, &f, 1e-6);
        assert!(b.k_sup < 2e-2, "{}", b.k_sup);
        let (bb, flagged) = b_from_field(&g, &f, 1e-6);
        for k in 1..g.k() - 1 {
            for j in 0..g.n() {
                assert!(!flagged[k * g.n() + j]);
                assert!((bb[k * g.n() + j] - 1.0).norm() < 1e-2);
            }
        }
        let (_, flagged) = b_from_field(&g, &GradientField::zeros(g.k(), g.n()), 1e-6);
        assert!(flagged.iter().all(|&x| x));
    }

    #[test]
    fn anti_holomorphic_field_violates_orientation() {
        let g = grid();
        let flat = LipschitzGraph::flat();
        let f = GradientField::from_fn(&g, |x, t| w(g.l(), C64::new(x, t)).0.conj());
        assert!(dilatation(&g, &flat, &f, 1e-3).orientation_violations > 0);
    }

    #[test]
    fn elliptic_matrix_examples() {
        let a = beltrami_to_matrix(C64::new(0.0, 0.0)).unwrap();
        assert_eq!(a.a, CoefficientMatrix::IDENTITY);
        assert_eq!((a.lambda_plus, a.lambda_minus), (1.0, 1.0));
        let a = beltrami_to_matrix(C64::new(0.5, 0.0)).unwrap().a;
        assert!((a.b11 - 1.0 / 3.0).abs() < 1e-15 && (a.b22 - 3.0).abs() < 1e-15 && a.b12 == 0.0);
        let a = beltrami_to_matrix(C64::new(0.0, 0.3)).unwrap().a;
        assert!((a.b11 - 1.09 / 0.91).abs() < 1e-15 && (a.b22 - 1.09 / 0.91).abs() < 1e-15);
        assert!((a.b12 + 0.6 / 0.91).abs() < 1e-15 && a.b12 == a.b21);
        assert!((a.det() - 1.0).abs() < 1e-12);
        assert!(matches!(
            beltrami_to_matrix(C64::new(0.6, 0.8)),
            Err(Error::DegenerateEllipticity(_))
        ));
    }

    #[test]
    fn elliptic_matrix_eigenvalues() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for beta in [0.3, 0.6, 0.9] {
            for _ in 0..2000 {
                let mu =
                    C64::from_polar(beta * rng.random::<f64>(), 2.0 * PI * rng.random::<f64>());
                let e = beltrami_to_matrix(mu).unwrap();
                let tr = e.a.b11 + e.a.b22;
                assert!((e.lambda_plus + e.lambda_minus - tr).abs() < 1e-12 * tr);
                assert!((e.lambda_plus * e.lambda_minus - e.a.det()).abs() < 1e-12);
                assert!(e.lambda_plus >= 1.0 && e.lambda_minus <= 1.0);
                assert!(e.lambda_plus <= (1.0 + beta) / (1.0 - beta) + 1e-12);
            }
        }
    }
}
