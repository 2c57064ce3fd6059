//! The boundary curve `y = phi(x)` and the pullback `(x, y) <-> (x, t)` with
//! `t = y - phi(x)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the graph function is represented.
#[derive(Clone)]
pub enum GraphKind {
    Flat,
    /// Knots sorted by strictly increasing abscissa; constant extension outside.
    PiecewiseLinear(Vec<(f64, f64)>),
    ClosedForm {
        source: String,
        expr: meval::Expr,
    },
}

impl fmt::Debug for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphKind::Flat => write!(f, "Flat"),
            GraphKind::PiecewiseLinear(k) => f.debug_tuple("PiecewiseLinear").field(k).finish(),
            GraphKind::ClosedForm { source, .. } => write!(f, "ClosedForm({source:?})"),
        }
    }
}

/// Serializable description of a graph, as it appears under `[phi]` in a run
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_bound: Option<f64>,
}

impl Default for GraphSpec {
    fn default() -> Self {
        GraphSpec {
            kind: "flat".into(),
            knots: None,
            expr: None,
            lipschitz_bound: None,
        }
    }
}

/// A Lipschitz graph `phi: R -> R` with `|phi'| <= M`.
#[derive(Debug, Clone)]
pub struct LipschitzGraph {
    kind: GraphKind,
    lipschitz_bound: f64,
}

impl LipschitzGraph {
    pub fn flat() -> Self {
        LipschitzGraph {
            kind: GraphKind::Flat,
            lipschitz_bound: 0.0,
        }
    }

    /// Piecewise-linear graph through `knots`. The bound `m` must dominate
    /// every segment slope.
    pub fn piecewise_linear(knots: Vec<(f64, f64)>, m: f64) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config(
                "phi.knots must contain at least one knot".into(),
            ));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Config("phi.knots must be finite".into()));
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config(
                    "phi.knots must have strictly increasing x".into(),
                ));
            }
            let slope = (w[1].1 - w[0].1) / (w[1].0 - w[0].0);
            if slope.abs() > m + 1e-12 {
                return Err(Error::Config(format!(
                    "segment slope {slope} exceeds phi.lipschitz_bound {m}"
                )));
            }
        }
        check_bound(m)?;
        Ok(LipschitzGraph {
            kind: GraphKind::PiecewiseLinear(knots),
            lipschitz_bound: m,
        })
    }

    /// Graph given by an expression in `x`, e.g. `0.3*sqrt(x^2+1)`.
    pub fn closed_form(source: &str, m: f64) -> Result<Self> {
        check_bound(m)?;
        let expr = crate::expr::parse(source, "phi.expr")?;
        let graph = LipschitzGraph {
            kind: GraphKind::ClosedForm {
                source: source.to_string(),
                expr,
            },
            lipschitz_bound: m,
        };
        graph.eval_phi(0.0)?;
        Ok(graph)
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self> {
        match spec.kind.as_str() {
            "flat" => {
                if spec.knots.is_some() || spec.expr.is_some() {
                    return Err(Error::Config("flat graph takes no knots or expr".into()));
                }
                if spec.lipschitz_bound.is_some_and(|m| m != 0.0) {
                    return Err(Error::Config("flat graph has lipschitz_bound 0".into()));
                }
                Ok(Self::flat())
            }
            "piecewise_linear" => {
                let knots = spec.knots.as_ref().ok_or_else(|| {
                    Error::Config("phi.knots required for piecewise_linear".into())
                })?;
                let m = spec
                    .lipschitz_bound
                    .ok_or_else(|| Error::Config("phi.lipschitz_bound required".into()))?;
                Self::piecewise_linear(knots.iter().map(|k| (k[0], k[1])).collect(), m)
            }
            "closed_form" => {
                let expr = spec
                    .expr
                    .as_ref()
                    .ok_or_else(|| Error::Config("phi.expr required for closed_form".into()))?;
                let m = spec
                    .lipschitz_bound
                    .ok_or_else(|| Error::Config("phi.lipschitz_bound required".into()))?;
                Self::closed_form(expr, m)
            }
            other => Err(Error::Config(format!("unknown phi.kind {other:?}"))),
        }
    }

    pub fn kind(&self) -> &GraphKind {
        &self.kind
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.kind, GraphKind::Flat)
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn eval_phi(&self, x: f64) -> Result<f64> {
        match &self.kind {
            GraphKind::Flat => Ok(0.0),
            GraphKind::PiecewiseLinear(knots) => Ok(pwl_value(knots, x)),
            GraphKind::ClosedForm { source, expr } => {
                crate::expr::eval1(expr, "x", x).ok_or_else(|| {
                    Error::Config(format!(
                        "phi.expr {source:?} cannot be evaluated at x = {x}"
                    ))
                })
            }
        }
    }

    /// `phi'(x)`. Knots take the slope of the segment to their left.
    pub fn eval_phi_prime(&self, x: f64) -> f64 {
        match &self.kind {
            GraphKind::Flat => 0.0,
            GraphKind::PiecewiseLinear(knots) => pwl_slope(knots, x),
            GraphKind::ClosedForm { .. } => {
                let h = f64::EPSILON.cbrt() * x.abs().max(1.0);
                // construction already evaluated the expression once; a failure
                // here only happens at isolated points and is reported as NaN
                let plus = self.eval_phi(x + h).unwrap_or(f64::NAN);
                let minus = self.eval_phi(x - h).unwrap_or(f64::NAN);
                (plus - minus) / (2.0 * h)
            }
        }
    }

    pub fn pullback_point(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let phi = self.eval_phi(x)?;
        if y <= phi {
            return Err(Error::OutsideDomain { x, y, phi });
        }
        Ok((x, y - phi))
    }

    pub fn pushforward_point(&self, x: f64, t: f64) -> Result<(f64, f64)> {
        Ok((x, t + self.eval_phi(x)?))
    }

    /// Largest `|phi'|` over the sample points, for checking the Lipschitz bound.
    pub fn sampled_max_slope(&self, xs: &[f64]) -> f64 {
        xs.iter()
            .map(|&x| self.eval_phi_prime(x).abs())
            .fold(0.0, f64::max)
    }

    /// Verifies `|phi'| <= M` over the sample points.
    pub fn check_lipschitz(&self, xs: &[f64]) -> Result<()> {
        let s = self.sampled_max_slope(xs);
        if s.is_nan() || s > self.lipschitz_bound + 1e-9 {
            return Err(Error::Config(format!(
                "sampled |phi'| = {s} exceeds lipschitz_bound {}",
                self.lipschitz_bound
            )));
        }
        Ok(())
    }
}

fn check_bound(m: f64) -> Result<()> {
    if !(m.is_finite() && m >= 0.0) {
        return Err(Error::Config(format!(
            "phi.lipschitz_bound must be finite and >= 0, got {m}"
        )));
    }
    Ok(())
}

fn pwl_value(knots: &[(f64, f64)], x: f64) -> f64 {
    let (x0, y0) = knots[0];
    let (xn, yn) = knots[knots.len() - 1];
    if x <= x0 {
        return y0;
    }
    if x >= xn {
        return yn;
    }
    let i = knots.partition_point(|k| k.0 < x);
    let (xa, ya) = knots[i - 1];
    let (xb, yb) = knots[i];
    ya + (yb - ya) * (x - xa) / (xb - xa)
}

fn pwl_slope(knots: &[(f64, f64)], x: f64) -> f64 {
    if knots.len() < 2 || x <= knots[0].0 || x > knots[knots.len() - 1].0 {
        return 0.0;
    }
    // first knot with abscissa >= x closes the containing segment on the right
    let i = knots.partition_point(|k| k.0 < x);
    let (xa, ya) = knots[i - 1];
    let (xb, yb) = knots[i];
    (yb - ya) / (xb - xa)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tent() -> LipschitzGraph {
        LipschitzGraph::piecewise_linear(vec![(-1.0, 0.0), (0.0, 0.5), (1.0, 0.0)], 0.5).unwrap()
    }

    #[test]
    fn flat_is_zero() {
        let g = LipschitzGraph::flat();
        assert_eq!(g.eval_phi(3.7).unwrap(), 0.0);
        assert_eq!(g.eval_phi_prime(-12.0), 0.0);
        assert_eq!(g.lipschitz_bound(), 0.0);
    }

    #[test]
    fn piecewise_linear_values_and_slopes() {
        let g = tent();
        assert!((g.eval_phi(0.5).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(g.eval_phi_prime(-0.5), 0.5);
        assert_eq!(g.eval_phi_prime(0.5), -0.5);
        // knot at 0 takes the left slope, the end knots the outer (flat) side
        assert_eq!(g.eval_phi_prime(0.0), 0.5);
        assert_eq!(g.eval_phi_prime(1.0), -0.5);
        assert_eq!(g.eval_phi_prime(-1.0), 0.0);
        assert_eq!(g.eval_phi(-7.0).unwrap(), 0.0);
        assert_eq!(g.eval_phi(9.0).unwrap(), 0.0);
        assert_eq!(g.eval_phi_prime(9.0), 0.0);
    }

    #[test]
    fn closed_form_value_and_derivative() {
        let g = LipschitzGraph::closed_form("0.3*sqrt(x^2+1)", 0.3).unwrap();
        assert!((g.eval_phi(0.0).unwrap() - 0.3).abs() < 1e-15);
        let expected = 0.3 / 2f64.sqrt();
        assert!((g.eval_phi_prime(1.0) - expected).abs() < 1e-9);
    }

    #[test]
    fn closed_form_errors() {
        assert!(matches!(
            LipschitzGraph::closed_form("0.3*", 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            LipschitzGraph::closed_form("y+1", 1.0),
            Err(Error::Config(_))
        ));
        let g = LipschitzGraph::closed_form("sqrt(x)", 1.0).unwrap();
        assert!(matches!(g.eval_phi(-1.0), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(LipschitzGraph::piecewise_linear(vec![(0.0, 0.0), (0.0, 1.0)], 5.0).is_err());
        assert!(LipschitzGraph::piecewise_linear(vec![(0.0, 0.0), (1.0, 1.0)], 0.5).is_err());
        assert!(LipschitzGraph::piecewise_linear(vec![], 0.5).is_err());
    }

    #[test]
    fn pullback_examples() {
        let flat = LipschitzGraph::flat();
        assert_eq!(flat.pullback_point(1.0, 2.0).unwrap(), (1.0, 2.0));
        assert!(matches!(
            flat.pullback_point(0.0, 0.0),
            Err(Error::OutsideDomain { .. })
        ));
        assert_eq!(tent().pullback_point(0.0, 1.0).unwrap(), (0.0, 0.5));
    }

    #[test]
    fn pullback_inverts_pushforward() {
        let graphs = [
            tent(),
            LipschitzGraph::closed_form("0.3*sqrt(x^2+1)", 0.3).unwrap(),
            LipschitzGraph::flat(),
        ];
        for g in &graphs {
            for i in 0..200 {
                let x = -5.0 + 0.05 * i as f64;
                let t = 0.01 + 0.1 * (i % 17) as f64;
                let (x1, y) = g.pushforward_point(x, t).unwrap();
                let (x2, t2) = g.pullback_point(x1, y).unwrap();
                assert_eq!(x2, x);
                assert!((t2 - t).abs() <= 4.0 * f64::EPSILON * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn sampled_slope_respects_bound() {
        let xs: Vec<f64> = (0..1_000_000)
            .map(|i| -10.0 + 20.0 * i as f64 / 1e6)
            .collect();
        for g in [
            tent(),
            LipschitzGraph::closed_form("0.3*sqrt(x^2+1)", 0.3).unwrap(),
        ] {
            assert!(g.sampled_max_slope(&xs) <= g.lipschitz_bound() + 1e-12);
            g.check_lipschitz(&xs).unwrap();
        }
    }

    #[test]
    fn spec_round_trip() {
        let spec = GraphSpec {
            kind: "piecewise_linear".into(),
            knots: Some(vec![[-1.0, 0.0], [0.0, 0.5], [1.0, 0.0]]),
            expr: None,
            lipschitz_bound: Some(0.5),
        };
        let g = LipschitzGraph::from_spec(&spec).unwrap();
        assert!((g.eval_phi(-0.5).unwrap() - 0.25).abs() < 1e-15);
        let bad = GraphSpec {
            kind: "spline".into(),
            ..GraphSpec::default()
        };
        assert!(LipschitzGraph::from_spec(&bad).is_err());
    }
}
