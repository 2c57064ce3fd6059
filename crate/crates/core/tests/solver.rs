mod common;

use std::f64::consts::PI;

use common::{field_rel_err, rel_err};
use num_complex::Complex64 as C64;
use plcauchy::coefficients::CoefficientMatrix;
use plcauchy::error::Error;
use plcauchy::geometry::LipschitzGraph;
use plcauchy::grid::{BoundaryTrace, GradientField, HalfPlaneGrid};
use plcauchy::operators::{CauchyOperators, QuadratureBackend, SRule, SpectralBackend};
use plcauchy::solver::*;
use plcauchy::verification::exact_harmonic_mode;
use rand::{Rng, SeedableRng};

fn grid(n: usize, l: f64, layers: usize) -> HalfPlaneGrid {
    HalfPlaneGrid::geometric_to(n, l, 1e-3, 30.0, layers, 0.5).unwrap()
}

fn dgauss(g: &HalfPlaneGrid) -> BoundaryTrace {
    BoundaryTrace::new(
        g.xs()
            .iter()
            .map(|&x| C64::new(-2.0 * x * (-x * x).exp(), 0.0))
            .collect(),
    )
}

fn b0(g: &HalfPlaneGrid) -> CoefficientField {
    CoefficientField::b_zero(g.k(), &vec![0.0; g.n()])
}

#[test]
fn perturbation_examples() {
    let g = grid(16, 10.0, 4);
    let flat = LipschitzGraph::flat();
    let f = GradientField::from_fn(&g, |x, t| C64::new(x.sin() + 0.2, t));
    assert_eq!(perturbation(&g, &flat, &f, 2.0, 1e-12).unwrap().sup, 0.0);
    let ones = GradientField::from_fn(&g, |_, _| C64::new(1.0, 1.0));
    let e = perturbation(&g, &flat, &ones, 4.0, 1e-12).unwrap();
    let want = CoefficientMatrix::new(0.0, 0.0, 1.0, 0.0);
    assert!(e
        .field
        .values
        .iter()
        .all(|m| m.sub(&want).max_abs_entry() < 1e-15));
    let zero = GradientField::zeros(g.k(), g.n());
    assert_eq!(perturbation(&g, &flat, &zero, 4.0, 1e-12).unwrap().sup, 0.0);
}

#[test]
fn linear_solve_without_perturbation_is_the_boundary_cauchy_integral() {
    let g = grid(128, 20.0, 16);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let a = 2.0 * PI * 3.0 / 20.0;
    let data: Vec<C64> = g.xs().iter().map(|&x| C64::new(0.0, a * x).exp()).collect();
    let sol = linear_solve(&op, &b0(&g), &data, &SolverConfig::default()).unwrap();
    assert_eq!(sol.terms(), 1);
    assert_eq!(sol.field, op.boundary_cauchy_field(&data).unwrap().0);
    let want = GradientField::from_fn(&g, |x, t| C64::new(0.0, a * x).exp() * (-a * t).exp());
    assert!(field_rel_err(&sol.field, &want) < 1e-13);
}

#[test]
fn linear_solve_first_variation() {
    // B = B0 - theta M1: d/dtheta at 0 of P^B g is S~(M1 D S0 g) + its mean mode
    let g = grid(128, 20.0, 24);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let data: Vec<C64> = g
        .xs()
        .iter()
        .map(|&x| C64::new(0.0, 2.0 * PI * x / 20.0).exp() * (1.0 + 0.3 * (-x * x).exp()))
        .collect();
    let m1: Vec<CoefficientMatrix> = (0..g.k() * g.n())
        .map(|i| {
            let x = g.x(i % g.n());
            CoefficientMatrix::new(0.3, 0.1 * x.cos(), -0.2, 0.25 * (-x * x / 4.0).exp())
        })
        .collect();
    let at = |theta: f64| {
        let mut b = b0(&g);
        for (m, d) in b.values.iter_mut().zip(&m1) {
            *m = m.sub(&d.scale(theta));
        }
        linear_solve(&op, &b, &data, &SolverConfig::default())
            .unwrap()
            .field
    };
    let th = 1e-3;
    let fd = at(th).sub(&at(-th)).scale(0.5 / th);
    let (_, ds0) = op.boundary_cauchy_field(&data).unwrap();
    let mut h = ds0.clone();
    for (v, m) in h.values.iter_mut().zip(&m1) {
        *v = m.apply(*v);
    }
    let mut want = op.solid_cauchy(&h).unwrap();
    for (k, c) in mean_mode(&g, &h).0.iter().enumerate() {
        want.layer_mut(k).iter_mut().for_each(|v| *v += c);
    }
    assert!(
        field_rel_err(&fd, &want) < 1e-3,
        "{}",
        field_rel_err(&fd, &want)
    );
}

#[test]
fn boundary_fit_at_p2_is_a_riesz_projection_identity() {
    let g = grid(128, 20.0, 16);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let a = 2.0 * PI * 2.0 / 20.0;
    let h = BoundaryTrace::new(
        g.xs()
            .iter()
            .map(|&x| C64::new((a * x).cos() + 0.5 * (2.0 * a * x).sin(), 0.0))
            .collect(),
    );
    for component in [BoundaryComponent::Dx, BoundaryComponent::Dy] {
        let cfg = SolverConfig {
            boundary_component: component,
            ..Default::default()
        };
        let fit = boundary_fit(&op, &b0(&g), &h, &cfg, None).unwrap();
        assert!(fit.residuals.len() <= 2, "{:?}", fit.residuals);
        let comp: Vec<C64> = fit
            .solution
            .trace
            .iter()
            .map(|&v| C64::new(component.of(v), 0.0))
            .collect();
        assert!(rel_err(&comp, &h.values) < 1e-12);
    }
    let constant = BoundaryTrace {
        values: vec![C64::new(2.0, 0.0); g.n()],
        ill_resolved: false,
    };
    let err = boundary_fit(&op, &b0(&g), &constant, &SolverConfig::default(), None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn boundary_fit_recovers_a_manufactured_solution() {
    let g = grid(128, 20.0, 24);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let flat = LipschitzGraph::flat();
    let u = exact_harmonic_mode(2.0 * PI * 3.0 / 20.0).unwrap();
    let cfg = SolverConfig {
        boundary_component: BoundaryComponent::Dy,
        ..Default::default()
    };
    let h = u.boundary_data(&g, &flat, BoundaryComponent::Dy).unwrap();
    let fit = boundary_fit(&op, &b0(&g), &h, &cfg, None).unwrap();
    let want: Vec<C64> = g.xs().iter().map(|&x| u.f(x, 0.0)).collect();
    assert!(rel_err(&fit.g, &want) < 1e-12);
    assert!(field_rel_err(&fit.solution.field, &u.sample(&g, &flat).unwrap()) < 1e-12);
}

#[test]
fn p2_pipeline_is_the_linear_solve() {
    let g = grid(256, 40.0, 32);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let sol = nonlinear_solve(&op, &SolverConfig::default(), &dgauss(&g)).unwrap();
    assert_eq!(sol.report.outer_history.len(), 1);
    let lin = linear_solve(&op, &b0(&g), &sol.g, &SolverConfig::default()).unwrap();
    assert_eq!(sol.field, lin.field);
    assert!(sol.report.representation_residual.unwrap() < 1e-12);
    assert!(sol.report.pde_residual_sys.unwrap() < 2e-2);
}

#[test]
fn zero_data_gives_zero_field() {
    let g = grid(64, 20.0, 8);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let h = BoundaryTrace::new(vec![C64::new(0.0, 0.0); g.n()]);
    let sol = nonlinear_solve(
        &op,
        &SolverConfig {
            p: 2.3,
            ..Default::default()
        },
        &h,
    )
    .unwrap();
    assert_eq!(sol.field.sup_norm(), 0.0);
    assert!(!sol.report.outer_history.is_empty());
}

#[test]
fn near_p2_solve_contracts_and_satisfies_the_representation() {
    let g = grid(256, 40.0, 32);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let cfg = SolverConfig {
        p: 2.1,
        tol_outer: 1e-7,
        tol_boundary: 1e-7,
        ..Default::default()
    };
    let sol = nonlinear_solve(&op, &cfg, &dgauss(&g)).unwrap();
    let r = &sol.report;
    assert!(r.outer_history.len() > 2);
    assert!(
        r.outer_history.windows(2).all(|w| w[1] < w[0]),
        "{:?}",
        r.outer_history
    );
    assert!(r.representation_residual.unwrap() < 1e-3);
    assert!(r.boundary_residual.unwrap() < 1e-7);
    assert!(r.kappa_min.unwrap() > 0.0);
    assert!(r.mu_p999.unwrap() < 0.95);
    assert_eq!(r.orientation_violations, Some(0));
    // a converged B(f) is accretive and matches the multiplier read off f
    let res = pde_residual(&g, &LipschitzGraph::flat(), &sol.field, 2.1, 0.5, 1e-12).unwrap();
    assert_eq!(res.system, r.pde_residual_sys.unwrap());
    assert!(res.divergence < 2e-2 && res.curl < 2e-2, "{res:?}");
}

#[test]
fn curved_graph_solve_on_the_quadrature_backend() {
    let l = 20.0;
    let graph =
        LipschitzGraph::closed_form("0.3*sin(2*pi*x/20)", 0.3 * 2.0 * PI / 20.0 + 1e-9).unwrap();
    let g = HalfPlaneGrid::geometric_to(128, l, 1e-3, 30.0, 16, 0.5).unwrap();
    let op = QuadratureBackend::new(g.clone(), graph.clone(), 1e-2)
        .unwrap()
        .with_s_rule(SRule::Cell)
        .unwrap();
    let h = BoundaryTrace::new(
        g.xs()
            .iter()
            .map(|&x| C64::new(-x * (-x * x / 4.0).exp(), 0.0))
            .collect(),
    );
    let cfg = SolverConfig {
        p: 2.05,
        tol_outer: 1e-5,
        tol_boundary: 1e-5,
        ..Default::default()
    };
    let sol = nonlinear_solve(&op, &cfg, &h).unwrap();
    let r = &sol.report;
    // the cell rule keeps the Neumann series contracting on coarse upper layers
    assert!(r.neumann_norm_estimate.unwrap() < 0.1, "{r:?}");
    assert!(r.representation_residual.unwrap() < 1e-3, "{r:?}");
    assert!(r.boundary_residual.unwrap() < 1e-5);
    assert!(r.pde_residual_sys.unwrap() < 0.1, "{r:?}");
    assert!(r.kappa_min.unwrap() > 0.0);
}

#[test]
fn divergent_neumann_series_reports_contraction_failure() {
    let g = grid(256, 40.0, 32);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let cfg = SolverConfig {
        p: 3.5,
        ..Default::default()
    };
    let fail = nonlinear_solve(&op, &cfg, &dgauss(&g)).unwrap_err();
    match fail.error {
        Error::ContractionFailure { estimate } => assert!(estimate > 1.0),
        ref e => panic!("unexpected {e}"),
    }
    let r = &fail.report;
    assert!(!r.outer_history.is_empty() && !r.boundary_residuals.is_empty());
    assert!(r.pde_residual_sys.is_some() && r.kappa_min.is_some() && r.mu_max.is_some());
    assert!(r.status.contains("contraction"));
    assert!(!r.warnings.is_empty());
}

#[test]
fn invalid_configuration_is_rejected() {
    let g = grid(32, 10.0, 4);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    for cfg in [
        SolverConfig {
            p: 1.0,
            ..Default::default()
        },
        SolverConfig {
            sigma: 1.0,
            ..Default::default()
        },
        SolverConfig {
            tol_outer: 0.0,
            ..Default::default()
        },
        SolverConfig {
            max_neumann: 0,
            ..Default::default()
        },
        SolverConfig {
            damping: 1.5,
            ..Default::default()
        },
    ] {
        let fail = nonlinear_solve(&op, &cfg, &dgauss(&g)).unwrap_err();
        assert!(matches!(fail.error, Error::Config(_)), "{}", fail.error);
    }
    let msg = SolverConfig {
        p: 1.0,
        ..Default::default()
    }
    .validate()
    .unwrap_err()
    .to_string();
    assert!(msg.contains("p > 1"));
}

#[test]
fn solves_are_deterministic() {
    let g = grid(128, 40.0, 16);
    let op = SpectralBackend::new(g.clone(), SRule::Exponential);
    let cfg = SolverConfig {
        p: 2.2,
        tol_outer: 1e-6,
        tol_boundary: 1e-6,
        ..Default::default()
    };
    let a = nonlinear_solve(&op, &cfg, &dgauss(&g)).unwrap();
    let b = nonlinear_solve(&op, &cfg, &dgauss(&g)).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
    assert_eq!(a.field, b.field);
}

#[test]
fn pde_residual_controls() {
    let flat = LipschitzGraph::flat();
    let g = grid(64, 20.0, 16);
    let c = GradientField::from_fn(&g, |_, _| C64::new(0.4, -0.2));
    let r = pde_residual(&g, &flat, &c, 2.5, 0.5, 1e-12).unwrap();
    assert_eq!((r.system, r.divergence, r.curl), (0.0, 0.0, 0.0));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let noise = GradientField::from_fn(&g, |_, _| {
        C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    assert!(
        pde_residual(&g, &flat, &noise, 2.5, 0.5, 1e-12)
            .unwrap()
            .system
            > 0.3
    );
    // single p = 2 mode: residual is the t-difference error, falling under refinement
    let a = 2.0 * PI * 2.0 / 20.0;
    let errs: Vec<f64> = [16, 32, 64]
        .iter()
        .map(|&k| {
            let g = HalfPlaneGrid::geometric_to(64, 20.0, 1e-3, 10.0, k, 0.5).unwrap();
            let f = GradientField::from_fn(&g, |x, t| C64::new(0.0, a * x).exp() * (-a * t).exp());
            pde_residual(&g, &flat, &f, 2.0, 0.5, 1e-12).unwrap().system
        })
        .collect();
    assert!(
        errs[1] < errs[0] / 2.0 && errs[2] < errs[1] / 2.0,
        "{errs:?}"
    );
}
