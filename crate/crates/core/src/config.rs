//! Run configuration: a TOML key tree with every key typed and checked
//! before any computation starts.
//!
//! ```toml
//! [problem]
//! p = 2.1
//! sigma = 0.5
//! component = "d_x"                 # which of u_x, u_y is prescribed
//! boundary = "-2*x*exp(-x^2)"       # or boundary_csv = "h.csv" (columns x,h)
//!
//! [phi]
//! kind = "flat"
//!
//! [grid]
//! N = 1024
//! L = 40.0
//! t1 = 1e-3
//! tmax = 40.0                       # or growth = 1.2
//! layers = 64
//!
//! [backend]
//! kind = "spectral_flat"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr;
use crate::geometry::{GraphSpec, LipschitzGraph};
use crate::grid::{BoundaryTrace, HalfPlaneGrid, C64};
use crate::operators::{make_backend, BackendKind, CauchyOperators, SRule};
use crate::solver::{BoundaryComponent, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub p: f64,
    #[serde(default = "half")]
    pub sigma: f64,
    #[serde(default = "dx_component")]
    pub component: BoundaryComponent,
    /// Expression in `x` for the prescribed derivative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<String>,
    /// CSV with header `x,h`, one row per grid abscissa. Relative paths are
    /// taken from the directory of the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_csv: Option<PathBuf>,
}

fn half() -> f64 {
    0.5
}

fn dx_component() -> BoundaryComponent {
    BoundaryComponent::Dx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    pub t1: f64,
    pub layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tmax: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
}

/// The iteration controls of [`SolverConfig`]; `p`, `sigma` and the
/// boundary component live under `[problem]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub max_outer: usize,
    pub max_neumann: usize,
    pub max_boundary: usize,
    pub tol_outer: f64,
    pub tol_neumann: f64,
    pub tol_boundary: f64,
    pub damping: f64,
    pub eps_zero: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        SolverSection {
            max_outer: d.max_outer,
            max_neumann: d.max_neumann,
            max_boundary: d.max_boundary,
            tol_outer: d.tol_outer,
            tol_neumann: d.tol_neumann,
            tol_boundary: d.tol_boundary,
            damping: d.damping,
            eps_zero: d.eps_zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default = "spectral")]
    pub kind: BackendKind,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Defaults to `exponential` on the spectral backend and `cell` on the
    /// quadrature backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_rule: Option<SRule>,
}

fn spectral() -> BackendKind {
    BackendKind::SpectralFlat
}

fn default_tolerance() -> f64 {
    1e-4
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection {
            kind: spectral(),
            tolerance: default_tolerance(),
            s_rule: None,
        }
    }
}

impl BackendSection {
    pub fn s_rule(&self) -> SRule {
        self.s_rule.unwrap_or(match self.kind {
            BackendKind::SpectralFlat => SRule::Exponential,
            BackendKind::QuadratureLipschitz => SRule::Cell,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: default_dir() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSection,
    #[serde(default = "flat_spec")]
    pub phi: GraphSpec,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub output: OutputSection,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn flat_spec() -> GraphSpec {
    GraphSpec {
        kind: "flat".into(),
        knots: None,
        expr: None,
        lipschitz_bound: None,
    }
}

/// Everything a run needs, built from a validated [`RunConfig`].
pub struct Scenario {
    pub grid: HalfPlaneGrid,
    pub graph: LipschitzGraph,
    pub backend: Box<dyn CauchyOperators>,
    pub solver: SolverConfig,
    pub data: BoundaryTrace,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// The config with every default written out, as recorded in reports.
    pub fn resolved(&self) -> RunConfig {
        let mut r = self.clone();
        r.backend.s_rule = Some(self.backend.s_rule());
        if r.grid.tmax.is_none() && r.grid.growth.is_none() {
            r.grid.tmax = Some(r.grid.l);
        }
        r
    }

    pub fn solver_config(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            p: self.problem.p,
            sigma: self.problem.sigma,
            max_outer: s.max_outer,
            max_neumann: s.max_neumann,
            max_boundary: s.max_boundary,
            tol_outer: s.tol_outer,
            tol_neumann: s.tol_neumann,
            tol_boundary: s.tol_boundary,
            damping: s.damping,
            boundary_component: self.problem.component,
            eps_zero: s.eps_zero,
        }
    }

    pub fn grid(&self) -> Result<HalfPlaneGrid> {
        let g = &self.grid;
        let sigma = self.problem.sigma;
        match (g.tmax, g.growth) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give grid.tmax or grid.growth, not both".into(),
            )),
            (None, Some(r)) => HalfPlaneGrid::geometric(g.n, g.l, g.t1, r, g.layers, sigma),
            (tmax, None) => {
                HalfPlaneGrid::geometric_to(g.n, g.l, g.t1, tmax.unwrap_or(g.l), g.layers, sigma)
            }
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output.dir)
    }

    fn boundary_data(&self, grid: &HalfPlaneGrid) -> Result<BoundaryTrace> {
        match (&self.problem.boundary, &self.problem.boundary_csv) {
            (Some(_), Some(_)) => Err(Error::Config(
                "give problem.boundary or problem.boundary_csv, not both".into(),
            )),
            (None, None) => Err(Error::Config(
                "problem.boundary or problem.boundary_csv is required".into(),
            )),
            (Some(src), None) => {
                let e = expr::parse(src, "problem.boundary")?;
                let values = grid
                    .xs()
                    .into_iter()
                    .map(|x| {
                        expr::eval1(&e, "x", x)
                            .map(|v| C64::new(v, 0.0))
                            .ok_or_else(|| {
                                Error::Config(format!("problem.boundary is not finite at x = {x}"))
                            })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(BoundaryTrace::new(values))
            }
            (None, Some(path)) => read_boundary_csv(&self.base_dir.join(path), grid),
        }
    }

    /// Validate every section and build the run.
    pub fn scenario(&self) -> Result<Scenario> {
        let solver = self.solver_config();
        solver.validate()?;
        let grid = self.grid()?;
        let graph = LipschitzGraph::from_spec(&self.phi)?;
        graph.check_lipschitz(&grid.xs())?;
        let backend = make_backend(
            self.backend.kind,
            grid.clone(),
            graph.clone(),
            self.backend.tolerance,
            self.backend.s_rule(),
        )?;
        let data = self.boundary_data(&grid)?;
        Ok(Scenario {
            grid,
            graph,
            backend,
            solver,
            data,
        })
    }
}

fn read_boundary_csv(path: &Path, grid: &HalfPlaneGrid) -> Result<BoundaryTrace> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .collect();
    if header != ["x", "h"] {
        return Err(Error::Config(format!(
            "{}: expected header x,h",
            path.display()
        )));
    }
    let xs = grid.xs();
    let mut values = Vec::with_capacity(xs.len());
    for (row, line) in lines.enumerate() {
        let bad = || Error::Config(format!("{}: bad row {}: {line:?}", path.display(), row + 2));
        let mut it = line.split(',').map(|v| v.trim().parse::<f64>());
        let (x, h) = match (it.next(), it.next(), it.next()) {
            (Some(Ok(x)), Some(Ok(h)), None) => (x, h),
            _ => return Err(bad()),
        };
        let want = xs.get(row).copied().ok_or_else(bad)?;
        if (x - want).abs() > 1e-9 * grid.l() || !h.is_finite() {
            return Err(Error::Config(format!(
                "{}: row {} has x = {x}, the grid abscissa is {want}",
                path.display(),
                row + 2
            )));
        }
        values.push(C64::new(h, 0.0));
    }
    if values.len() != xs.len() {
        return Err(Error::Config(format!(
            "{}: {} rows for a grid of {} points",
            path.display(),
            values.len(),
            xs.len()
        )));
    }
    Ok(BoundaryTrace::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
p = 2.0
boundary = "-2*x*exp(-x^2)"

[grid]
N = 64
L = 20.0
t1 = 1e-3
layers = 8
"#;

    #[test]
    fn defaults_are_filled_and_recorded() {
        let cfg = RunConfig::from_toml(BASE).unwrap();
        let r = cfg.resolved();
        assert_eq!(r.backend.s_rule, Some(SRule::Exponential));
        assert_eq!(r.grid.tmax, Some(20.0));
        assert_eq!(
            cfg.solver_config(),
            SolverConfig {
                p: 2.0,
                ..Default::default()
            }
        );
        let sc = cfg.scenario().unwrap();
        assert_eq!(sc.grid.layers().last().copied(), Some(20.0));
        assert_eq!(sc.data.values.len(), 64);
    }

    #[test]
    fn misspelled_keys_are_rejected() {
        for (from, to) in [
            ("layers = 8", "layer = 8"),
            ("p = 2.0", "p = 2.0\nsigmma = 0.5"),
            ("[grid]", "[solver]\ntol_outr = 1.0\n[grid]"),
        ] {
            let err = RunConfig::from_toml(&BASE.replace(from, to)).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{err}");
        }
    }

    #[test]
    fn invalid_values_fail_validation() {
        let cases = [
            BASE.replace("p = 2.0", "p = 1.0"),
            BASE.replace("N = 64", "N = 60"),
            BASE.replace("[grid]", "[phi]\nkind = \"closed_form\"\nexpr = \"0.1*sin(x)\"\nlipschitz_bound = 0.1\n[grid]"),
            BASE.replace("boundary = \"-2*x*exp(-x^2)\"", "boundary = \"1/(x-x)\""),
            BASE.replace("boundary = \"-2*x*exp(-x^2)\"", ""),
        ];
        for text in cases {
            let cfg = RunConfig::from_toml(&text).unwrap();
            assert!(matches!(cfg.scenario(), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn boundary_csv_must_sit_on_the_grid() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        let mut cfg = RunConfig::from_toml(
            &BASE.replace("boundary = \"-2*x*exp(-x^2)\"", "boundary_csv = \"h.csv\""),
        )
        .unwrap();
        cfg.base_dir = dir.clone();
        let grid = cfg.grid().unwrap();
        let mut text = String::from("x,h\n");
        for x in grid.xs() {
            text += &format!("{x},{}\n", (-x * x).exp());
        }
        std::fs::write(dir.join("h.csv"), &text).unwrap();
        assert!(cfg.scenario().is_ok());
        std::fs::write(dir.join("h.csv"), text.replace("x,h", "x,y")).unwrap();
        assert!(cfg.scenario().is_err());
    }
}
