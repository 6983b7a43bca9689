mod common;

use common::*;
use fractal_pde::experiments::{add_fields, decreasing_with_slack, perturbed, ratios, Equation, Mode, Problem};
use fractal_pde::fields::VectorField;
use fractal_pde::forms::{FieldSpec, FormCoefficients};
use fractal_pde::harmonic_structure::{Fractal, VertexFunction};
use fractal_pde::linalg::to_dense;
use fractal_pde::measures::SelfSimilarMeasure;
use fractal_pde::solvers::ParabolicOptions;
use fractal_pde::Error;

fn sin_data(p: &Problem, big: usize) -> Vec<f64> {
    harmonic(&p.fractal, &[0.0, 1.0, 0.5], big).iter().map(|t| (3.0 * t).sin()).collect()
}

#[test]
fn zero_perturbation_gives_identical_solutions() {
    let p = sg_drift_problem(4);
    let eq = Equation::Elliptic { f: sin_data(&p, 4) };
    let rows = p.run_single_space(&eq, 4, &[1, 2, 8], |_| Ok(p.coeffs.clone())).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.sup_error, 0.0);
        assert_eq!(r.l2_error, 0.0);
        assert_eq!(r.m, 4);
        assert!(r.c0 > 0.0 && r.lambda0 > 0.0);
    }
    assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![Some(1), Some(2), Some(8)]);
}

#[test]
fn perturbations_scale_with_one_over_n() {
    let p = sg_drift_problem(4);
    let eta = drift(3, 0.05, vec![0.0, 0.0, 1.0]);
    let c4 = perturbed(&p.fractal, &p.coeffs, 0.2, &eta, 4).unwrap();
    assert!(c4.a.values.iter().all(|v| (v - 1.05).abs() < 1e-15));
    let form = p.fractal.graph_form(3).unwrap();
    let want = p.coeffs.b.realize(&p.fractal, &form).unwrap().add(&eta.realize(&p.fractal, &form).unwrap().scale(0.25)).unwrap();
    let got = c4.b.realize(&p.fractal, &form).unwrap();
    assert!(got.values.iter().zip(&want.values).all(|(a, b)| (a - b).abs() < 1e-15));
    let eq = Equation::Elliptic { f: sin_data(&p, 4) };
    let ns = [1, 2, 4, 8, 16];
    let rows = p.run_single_space(&eq, 4, &ns, |n| perturbed(&p.fractal, &p.coeffs, 0.2, &eta, n)).unwrap();
    let errs: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
    assert!(decreasing_with_slack(&errs), "{errs:?}");
    // errors behave like C/n
    assert!(ratios(&errs).iter().all(|r| (1.6..2.4).contains(r)), "{:?}", ratios(&errs));
}

#[test]
fn field_sums() {
    let f = Fractal::preset("sg", 2).unwrap();
    let form = f.graph_form(2).unwrap();
    let x = drift(3, 1.0, vec![0.0, 1.0, 0.0]);
    let y = drift(3, 0.5, vec![1.0, 0.0, 0.0]);
    assert_eq!(add_fields(&f, &x, &FieldSpec::Zero, 3.0).unwrap(), x);
    let rx = x.realize(&f, &form).unwrap();
    let ry = y.realize(&f, &form).unwrap();
    let want = rx.add(&ry.scale(-2.0)).unwrap();
    let sym = add_fields(&f, &x, &y, -2.0).unwrap();
    assert!(matches!(sym, FieldSpec::Symbolic(_)));
    let got = sym.realize(&f, &form).unwrap();
    assert!(got.values.iter().zip(&want.values).all(|(a, b)| (a - b).abs() < 1e-15));
    let from_zero = add_fields(&f, &FieldSpec::Zero, &y, 2.0).unwrap().realize(&f, &form).unwrap();
    assert!(from_zero.values.iter().zip(&ry.values).all(|(a, b)| (a - 2.0 * b).abs() < 1e-15));
    let explicit = FieldSpec::Explicit(VectorField { level: 2, values: rx.values.clone() });
    let mixed = add_fields(&f, &explicit, &y, -2.0).unwrap();
    assert!(matches!(mixed, FieldSpec::Explicit(_)));
    let got = mixed.realize(&f, &form).unwrap();
    assert!(got.values.iter().zip(&want.values).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn single_cell_diagonal_equals_varying_space() {
    let big = 5;
    let p = sg_drift_problem(big);
    let eq = Equation::Elliptic { f: sin_data(&p, big) };
    let uref = p.reference(&eq, big).unwrap();
    let varying = p.run_varying_space(&eq, &[3], big, Mode::Graph, &uref).unwrap();
    let diag = p.run_diagonal(&eq, &[1], &[3], big, Mode::Graph, &uref, |_| Ok(p.coeffs.clone())).unwrap();
    assert_eq!(diag.len(), 1);
    assert_eq!(diag[0].sup_error, varying[0].sup_error);
    assert_eq!(diag[0].l2_error, varying[0].l2_error);
    assert_eq!(diag[0].n, Some(1));
    assert_eq!(varying[0].n, None);
}

#[test]
fn zero_drift_is_the_symmetric_case() {
    let big = 5;
    let f = Fractal::preset("sg", big).unwrap();
    let p = Problem::new(f, SelfSimilarMeasure::uniform(3), FormCoefficients::standard(3)).unwrap();
    for mode in [Mode::Graph, Mode::Metric { subdiv: 2 }] {
        let level = p.level(3, mode).unwrap();
        let a = to_dense(&level.af.stiffness);
        assert!((&a - a.transpose()).abs().max() < 1e-13);
        assert!(level.diag.k_sector.is_finite());
    }
    let eq = Equation::Elliptic { f: sin_data(&p, big) };
    let uref = p.reference(&eq, big).unwrap();
    let rows = p
        .run_diagonal(&eq, &[1, 2], &[2, 3, 4], big, Mode::Graph, &uref, |_| Ok(FormCoefficients::standard(3)))
        .unwrap();
    assert_eq!(rows.len(), 6);
    let errs: Vec<f64> = rows[..3].iter().map(|r| r.sup_error).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]));
    assert!(rows[..3].iter().zip(&rows[3..]).all(|(a, b)| a.sup_error == b.sup_error));
}

#[test]
fn manufactured_solutions_are_recovered_in_both_modes() {
    let big = 6;
    let p = sg_drift_problem(big);
    let mut r = rng(61);
    let u = VertexFunction::new(2, random_vec(&mut r, p.fractal.num_vertices(2)));
    for mode in [Mode::Graph, Mode::Metric { subdiv: 1 }, Mode::Metric { subdiv: 3 }] {
        let rows = p.run_manufactured(&u, &[2, 3, 4], big, mode).unwrap();
        assert!(rows.iter().all(|r| r.sup_error < 1e-8 && r.l2_error < 1e-8), "{mode:?}");
    }
    assert!(p.run_manufactured(&u, &[7], big, Mode::Graph).is_err());
}

#[test]
fn parabolic_self_convergence() {
    let big = 6;
    let p = sg_drift_problem(big);
    let opts = ParabolicOptions { t_final: 0.25, steps: 25, theta: 1.0, richardson_tol: None, ..Default::default() };
    let eq = Equation::Parabolic { u0: sin_data(&p, big), opts };
    let uref = p.reference(&eq, big).unwrap();
    let rows = p.run_varying_space(&eq, &[2, 3, 4], big, Mode::Graph, &uref).unwrap();
    let errs: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
}

#[test]
fn infeasible_levels_need_the_shift() {
    let f = Fractal::preset("interval", 4).unwrap();
    let mut coeffs = FormCoefficients::standard(2);
    coeffs.c = VertexFunction::constant(2, 2.0);
    let mut p = Problem::new(f, SelfSimilarMeasure::uniform(2), coeffs).unwrap();
    let eq = Equation::Elliptic { f: vec![1.0; p.fractal.num_vertices(4)] };
    let level = p.level(3, Mode::Graph).unwrap();
    assert!(!level.diag.feasible());
    assert!(matches!(p.solve(&level, &eq, 4), Err(Error::Infeasible(_))));
    p.allow_shift = true;
    let level = p.level(3, Mode::Graph).unwrap();
    assert!(level.diag.feasible() && level.af.shift > 0.0);
    assert!(p.solve(&level, &eq, 4).is_ok());
}

#[test]
fn slack_helpers() {
    assert!(decreasing_with_slack(&[]));
    assert!(decreasing_with_slack(&[1.0, 1.04]));
    assert!(!decreasing_with_slack(&[1.0, 1.06]));
    assert_eq!(ratios(&[8.0, 4.0, 1.0]), vec![2.0, 4.0]);
}
