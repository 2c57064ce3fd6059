//! Flat graph: every operator is a Fourier multiplier in `x`, and the
//! `s`-integrals are evaluated per frequency by a one-pass recursion over the
//! layers (O(K N log N) overall).

use super::{
    cell_pair_weights, exponential_pair_weights, phi1, BackendKind, CauchyOperators, SRule, Sign,
};
use crate::error::{Error, Result};
use crate::geometry::LipschitzGraph;
use crate::grid::{BoundaryTrace, GradientField, HalfPlaneGrid, C64};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone)]
pub struct SpectralBackend {
    grid: HalfPlaneGrid,
    graph: LipschitzGraph,
    s_rule: SRule,
}

impl SpectralBackend {
    pub fn new(grid: HalfPlaneGrid, s_rule: SRule) -> Self {
        SpectralBackend {
            grid,
            graph: LipschitzGraph::flat(),
            s_rule,
        }
    }

    fn pair_weights(&self, d: f64, x: f64) -> (f64, f64) {
        match self.s_rule {
            SRule::Trapezoid => ((-d * x).exp() * 0.5 * d, 0.5 * d),
            SRule::Exponential => exponential_pair_weights(d, x),
            SRule::Cell => cell_pair_weights(d, x),
        }
    }

    /// Weight of `h_1` in `int_0^{t_1} e^{-(t_1 - s) x} h_s ds`.
    fn first_cell_weight(&self, x: f64) -> f64 {
        let t0 = self.grid.layers()[0];
        match self.s_rule {
            SRule::Trapezoid => t0,
            SRule::Exponential | SRule::Cell => t0 * phi1(x * t0),
        }
    }

    fn layer_transforms(&self, h: &GradientField) -> Result<Vec<Vec<C64>>> {
        let g = &self.grid;
        if h.k() != g.k() || h.n() != g.n() {
            return Err(Error::Shape(format!(
                "field is {}x{}, grid is {}x{}",
                h.k(),
                h.n(),
                g.k(),
                g.n()
            )));
        }
        Ok((0..h.k()).map(|k| g.fft(h.layer(k))).collect())
    }

    /// Per-frequency lower (`xi > 0`) and upper (`xi < 0`) s-integrals.
    fn s_integrals(&self, hh: &[Vec<C64>]) -> (Vec<Vec<C64>>, Vec<Vec<C64>>) {
        let g = &self.grid;
        let t = g.layers();
        let kk = t.len();
        let n = g.n();
        let mut lower = vec![vec![ZERO; n]; kk];
        let mut upper = vec![vec![ZERO; n]; kk];
        for (m, &xi) in g.xi().iter().enumerate() {
            if xi > 0.0 {
                let mut p = hh[0][m] * self.first_cell_weight(xi);
                lower[0][m] = p;
                for k in 1..kk {
                    let d = t[k] - t[k - 1];
                    let (wp, wh) = self.pair_weights(d, xi);
                    p = p * (-d * xi).exp() + hh[k - 1][m] * wp + hh[k][m] * wh;
                    lower[k][m] = p;
                }
            } else if xi < 0.0 {
                let x = -xi;
                let mut u = ZERO;
                for k in (0..kk - 1).rev() {
                    let d = t[k + 1] - t[k];
                    let (wp, wh) = self.pair_weights(d, x);
                    u = u * (-d * x).exp() + hh[k + 1][m] * wp + hh[k][m] * wh;
                    upper[k][m] = u;
                }
            }
        }
        (lower, upper)
    }
}

impl CauchyOperators for SpectralBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::SpectralFlat
    }

    fn grid(&self) -> &HalfPlaneGrid {
        &self.grid
    }

    fn graph(&self) -> &LipschitzGraph {
        &self.graph
    }

    fn hardy_projection(&self, h: &[C64], sign: Sign) -> Result<BoundaryTrace> {
        let v = self.grid.apply_multiplier(h, |xi| {
            let keep = match sign {
                Sign::Plus => xi > 0.0,
                Sign::Minus => xi < 0.0,
            };
            if keep {
                C64::new(1.0, 0.0)
            } else {
                ZERO
            }
        });
        Ok(BoundaryTrace::new(v))
    }

    fn boundary_cauchy(&self, g: &[C64], t: f64) -> Result<Vec<C64>> {
        if t == 0.0 {
            return Err(Error::Invariant(
                "boundary_cauchy at t = 0; use hardy_projection".into(),
            ));
        }
        Ok(self.grid.apply_multiplier(g, |xi| {
            if t > 0.0 && xi > 0.0 {
                C64::new((-t * xi).exp(), 0.0)
            } else if t < 0.0 && xi < 0.0 {
                C64::new(-(-t * xi).exp(), 0.0)
            } else {
                ZERO
            }
        }))
    }

    fn boundary_cauchy_field(&self, g: &[C64]) -> Result<(GradientField, GradientField)> {
        let grid = &self.grid;
        let gg = grid.fft(g);
        let mut f = GradientField::zeros(grid.k(), grid.n());
        let mut df = GradientField::zeros(grid.k(), grid.n());
        for (k, &t) in grid.layers().iter().enumerate() {
            let mut a = vec![ZERO; grid.n()];
            let mut b = vec![ZERO; grid.n()];
            for (m, &xi) in grid.xi().iter().enumerate() {
                if xi > 0.0 {
                    a[m] = gg[m] * (-t * xi).exp();
                    b[m] = a[m] * xi;
                }
            }
            f.layer_mut(k).copy_from_slice(&grid.ifft(&a));
            df.layer_mut(k).copy_from_slice(&grid.ifft(&b));
        }
        Ok((f, df))
    }

    fn solid_cauchy_and_beurling(
        &self,
        h: &GradientField,
    ) -> Result<(GradientField, GradientField)> {
        let g = &self.grid;
        let hh = self.layer_transforms(h)?;
        let (lower, upper) = self.s_integrals(&hh);
        let mut st = GradientField::zeros(g.k(), g.n());
        let mut sb = GradientField::zeros(g.k(), g.n());
        for k in 0..g.k() {
            let mut a = vec![ZERO; g.n()];
            let mut b = vec![ZERO; g.n()];
            for (m, &xi) in g.xi().iter().enumerate() {
                if xi > 0.0 {
                    a[m] = lower[k][m];
                    b[m] = lower[k][m] * xi;
                } else if xi < 0.0 {
                    a[m] = -upper[k][m];
                    b[m] = upper[k][m] * (-xi);
                }
            }
            st.layer_mut(k).copy_from_slice(&g.ifft(&a));
            sb.layer_mut(k).copy_from_slice(&g.ifft(&b));
        }
        Ok((st, sb))
    }

    fn solid_cauchy_trace(&self, h: &GradientField) -> Result<Vec<C64>> {
        let g = &self.grid;
        let hh = self.layer_transforms(h)?;
        let (_, upper) = self.s_integrals(&hh);
        let t0 = g.layers()[0];
        let mut a = vec![ZERO; g.n()];
        for (m, &xi) in g.xi().iter().enumerate() {
            if xi < 0.0 {
                let x = -xi;
                let first = match self.s_rule {
                    SRule::Trapezoid => hh[0][m] * ((-t0 * x).exp() * t0),
                    SRule::Exponential | SRule::Cell => hh[0][m] * (t0 * phi1(x * t0)),
                };
                a[m] = -(upper[0][m] * (-t0 * x).exp() + first);
            }
        }
        Ok(g.ifft(&a))
    }
}
