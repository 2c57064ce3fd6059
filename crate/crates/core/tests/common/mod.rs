#![allow(dead_code)]

use num_complex::Complex64 as C64;
use plcauchy::grid::{GradientField, HalfPlaneGrid};

pub fn rel_err(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

pub fn field_rel_err(a: &GradientField, b: &GradientField) -> f64 {
    rel_err(&a.values, &b.values)
}

/// Gaussian bump `amp * exp(-(x - c)^2 / (2 w^2))` with a complex amplitude.
pub fn bump(g: &HalfPlaneGrid, c: f64, w: f64, amp: C64) -> Vec<C64> {
    g.xs()
        .iter()
        .map(|&x| amp * (-(x - c) * (x - c) / (2.0 * w * w)).exp())
        .collect()
}

/// Ten Gaussian bumps of varying centre, width and phase.
pub fn bump_corpus(g: &HalfPlaneGrid) -> Vec<Vec<C64>> {
    (0..10)
        .map(|i| {
            let c = -2.0 + 0.45 * i as f64;
            let w = 0.6 + 0.12 * i as f64;
            let amp = C64::from_polar(1.0, 0.7 * i as f64);
            bump(g, c, w, amp)
        })
        .collect()
}

/// Mean-free version of a line.
pub fn demean(h: &[C64]) -> Vec<C64> {
    let m = h.iter().sum::<C64>() / h.len() as f64;
    h.iter().map(|v| v - m).collect()
}
