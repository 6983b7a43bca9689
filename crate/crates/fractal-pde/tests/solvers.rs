mod common;

use common::*;
use fractal_pde::experiments::{Level, Mode};
use fractal_pde::forms::{assemble, diagnostics, FormCoefficients, HardyPolicy};
use fractal_pde::harmonic_structure::{Fractal, VertexFunction};
use fractal_pde::linalg::{self, PreconditionerKind, SolverOptions};
use fractal_pde::measures::{HarmonicIntegrator, SelfSimilarMeasure};
use fractal_pde::solvers::{green_apply, resolvent_apply, solve_elliptic, solve_elliptic_with, solve_parabolic, ParabolicOptions};
use fractal_pde::Error;
use proptest::prelude::*;

fn sg_level(m: usize) -> Level {
    sg_drift_problem(m).level(m, Mode::Graph).unwrap()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[test]
fn elliptic_solution_satisfies_the_weak_equation() {
    let level = sg_level(4);
    let (af, d) = (&level.af, &level.diag);
    let mut rng = rng(21);
    let f = random_vec(&mut rng, af.num_vertices());
    let sol = solve_elliptic(af, d, &f).unwrap();
    assert!(sol.residual < 1e-10);
    assert!(sol.bound_holds && sol.q1 <= sol.bound);
    for _ in 0..20 {
        let g = random_vec(&mut rng, af.num_vertices());
        let lhs = af.q(&sol.u, &g).unwrap();
        assert!((lhs + af.l2_inner(&f, &g).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn iterative_and_dense_paths_agree() {
    let level = sg_level(5);
    let (af, d) = (&level.af, &level.diag);
    let f: Vec<f64> = (0..af.num_vertices()).map(|p| ((p as f64) * 0.37).sin()).collect();
    let dense = solve_elliptic_with(af, d, &f, SolverOptions { dense_limit: usize::MAX, ..Default::default() }).unwrap();
    for pc in [PreconditionerKind::Ilu0, PreconditionerKind::Jacobi] {
        let it = solve_elliptic_with(af, d, &f, SolverOptions { dense_limit: 0, preconditioner: pc, ..Default::default() }).unwrap();
        assert!(it.iterations > 0);
        assert!(linalg::max_abs(&sub(&it.u, &dense.u)) < 1e-9, "{pc:?}");
    }
}

#[test]
fn green_operator_sign() {
    let level = sg_level(3);
    let (af, d) = (&level.af, &level.diag);
    let mut rng = rng(22);
    let f = random_vec(&mut rng, af.num_vertices());
    let neg: Vec<f64> = f.iter().map(|x| -x).collect();
    let g = green_apply(af, d, &neg).unwrap();
    let u = solve_elliptic(af, d, &f).unwrap().u;
    assert!(linalg::max_abs(&sub(&g, &u)) < 1e-11);
    // Q(G f, h) = <f, h>
    let gf = green_apply(af, d, &f).unwrap();
    let h = random_vec(&mut rng, af.num_vertices());
    assert!((af.q(&gf, &h).unwrap() - af.l2_inner(&f, &h).unwrap()).abs() < 1e-10);
}

#[test]
fn resolvent_identity() {
    let level = sg_level(4);
    let (af, d) = (&level.af, &level.diag);
    let mut rng = rng(23);
    let f = random_vec(&mut rng, af.num_vertices());
    for (a, b) in [(0.5, 2.0), (1.0, 7.0), (3.0, 0.25)] {
        let ga = resolvent_apply(af, d, a, &f).unwrap();
        let gb = resolvent_apply(af, d, b, &f).unwrap();
        let gagb = resolvent_apply(af, d, a, &gb).unwrap();
        let lhs = sub(&ga, &gb);
        let rhs: Vec<f64> = gagb.iter().map(|x| (b - a) * x).collect();
        assert!(linalg::max_abs(&sub(&lhs, &rhs)) < 1e-8 * linalg::max_abs(&lhs).max(1e-3));
    }
    assert!(resolvent_apply(af, d, 0.0, &f).is_err());
}

#[test]
fn infeasible_and_inconsistent_inputs_rejected() {
    let f = Fractal::preset("interval", 3).unwrap();
    let mu = SelfSimilarMeasure::uniform(2);
    let integ = HarmonicIntegrator::new(&f.hs, &mu).unwrap();
    let mut coeffs = FormCoefficients::standard(2);
    coeffs.c = VertexFunction::constant(2, 1.0);
    let af = assemble(&f, &integ, &coeffs, 3).unwrap();
    let d = diagnostics(&f, &mu, &af, HardyPolicy::default()).unwrap();
    let rhs = vec![1.0; af.num_vertices()];
    assert!(matches!(solve_elliptic(&af, &d, &rhs), Err(Error::Infeasible(_))));
    assert!(matches!(solve_elliptic(&af.shifted(3.0), &d, &rhs), Err(Error::InvalidArgument(_))));
    assert!(solve_elliptic(&af, &d, &rhs[1..]).is_err());
    let opts = ParabolicOptions { theta: 0.3, ..Default::default() };
    assert!(solve_parabolic(&af, &d, &rhs, opts).is_err());
    let opts = ParabolicOptions { steps: 0, ..Default::default() };
    assert!(solve_parabolic(&af, &d, &rhs, opts).is_err());
}

#[test]
fn interval_solution_matches_closed_form() {
    // u'' - u = -(1 + pi^2) cos(pi x) with Neumann data has u = cos(pi x)
    let big = 12;
    let f = Fractal::preset("interval", big).unwrap();
    let mu = SelfSimilarMeasure::uniform(2);
    let integ = HarmonicIntegrator::new(&f.hs, &mu).unwrap();
    let coeffs = FormCoefficients::standard(2);
    let m = 8;
    let af = assemble(&f, &integ, &coeffs, m).unwrap();
    let d = diagnostics(&f, &mu, &af, HardyPolicy::default()).unwrap();
    let x = harmonic(&f, &[0.0, 1.0], m);
    let pi = std::f64::consts::PI;
    let rhs: Vec<f64> = x.iter().map(|t| -(1.0 + pi * pi) * (pi * t).cos()).collect();
    let u = solve_elliptic(&af, &d, &rhs).unwrap().u;
    let err = u.iter().zip(&x).map(|(a, t)| (a - (pi * t).cos()).abs()).fold(0.0, f64::max);
    assert!(err < 1e-3, "{err}");
}

#[test]
fn single_implicit_step_is_a_resolvent() {
    let level = sg_level(3);
    let (af, d) = (&level.af, &level.diag);
    let mut rng = rng(24);
    let u0 = random_vec(&mut rng, af.num_vertices());
    let dt = 0.1;
    let opts = ParabolicOptions { t_final: dt, steps: 1, theta: 1.0, richardson_tol: None, ..Default::default() };
    let tr = solve_parabolic(af, d, &u0, opts).unwrap();
    let scaled: Vec<f64> = u0.iter().map(|x| x / dt).collect();
    let want = resolvent_apply(af, d, 1.0 / dt, &scaled).unwrap();
    assert!(linalg::max_abs(&sub(tr.final_state(), &want)) < 1e-10);
    assert_eq!(tr.times, vec![0.0, dt]);
    assert_eq!(tr.states[0], u0);
}

#[test]
fn parabolic_norms_decay() {
    let level = sg_level(3);
    let (af, d) = (&level.af, &level.diag);
    let mut rng = rng(25);
    let u0 = random_vec(&mut rng, af.num_vertices());
    let steps = 400;
    let opts = ParabolicOptions { t_final: 1.0, steps, theta: 1.0, richardson_tol: None, ..Default::default() };
    let tr = solve_parabolic(af, d, &u0, opts).unwrap();
    let dt = 1.0 / steps as f64;
    for (k, (t, n)) in tr.times.iter().zip(&tr.l2_norms).enumerate() {
        let discrete = (1.0 + d.c0 * dt).powi(-(k as i32)) * tr.l2_norms[0];
        assert!(*n <= discrete * (1.0 + 1e-10));
        // the continuous bound e^{-c0 t} up to the O(dt) scheme error
        assert!(*n <= (-d.c0 * t).exp() * tr.l2_norms[0] * (1.0 + d.c0 * d.c0 * dt * t));
    }
    assert!(tr.smoothing.iter().all(|s| s.is_finite() && *s >= 0.0));
}

#[test]
fn crank_nicolson_converges_faster() {
    let level = sg_level(3);
    let (af, d) = (&level.af, &level.diag);
    let mut rng = rng(26);
    let u0 = random_vec(&mut rng, af.num_vertices());
    let run = |theta: f64, steps: usize| {
        let opts = ParabolicOptions { t_final: 0.5, steps, theta, richardson_tol: None, ..Default::default() };
        solve_parabolic(af, d, &u0, opts).unwrap().final_state().to_vec()
    };
    let reference = run(0.5, 4096);
    let e1 = linalg::max_abs(&sub(&run(1.0, 64), &reference));
    let e2 = linalg::max_abs(&sub(&run(1.0, 128), &reference));
    let c1 = linalg::max_abs(&sub(&run(0.5, 64), &reference));
    let c2 = linalg::max_abs(&sub(&run(0.5, 128), &reference));
    assert!((1.7..2.3).contains(&(e1 / e2)), "{}", e1 / e2);
    assert!((3.4..4.6).contains(&(c1 / c2)), "{}", c1 / c2);
    assert!(c2 < e2);
}

#[test]
fn richardson_refinement_records_history() {
    let level = sg_level(3);
    let (af, d) = (&level.af, &level.diag);
    let ones = vec![1.0; af.num_vertices()];
    let opts = ParabolicOptions { t_final: 1.0, steps: 4, theta: 1.0, richardson_tol: Some(1e-3), max_refinements: 12 };
    let tr = solve_parabolic(af, d, &ones, opts).unwrap();
    assert!(!tr.refinement_history.is_empty());
    assert!(*tr.refinement_history.last().unwrap() < 1e-3);
    assert_eq!(tr.steps, 4 << tr.refinement_history.len());
    assert!(tr.extrapolated.is_some());
    let opts = ParabolicOptions { richardson_tol: Some(1e-14), max_refinements: 2, ..opts };
    assert!(matches!(solve_parabolic(af, d, &ones, opts), Err(Error::SolverFailure(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn elliptic_solve_is_linear(seed in any::<u64>(), s in -2.0f64..2.0) {
        let level = sg_level(3);
        let (af, d) = (&level.af, &level.diag);
        let mut rng = rng(seed);
        let n = af.num_vertices();
        let (f, g) = (random_vec(&mut rng, n), random_vec(&mut rng, n));
        let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + s * b).collect();
        let uf = solve_elliptic(af, d, &f).unwrap();
        let ug = solve_elliptic(af, d, &g).unwrap();
        let ufg = solve_elliptic(af, d, &fg).unwrap();
        prop_assert!(uf.bound_holds && ug.bound_holds && ufg.bound_holds);
        let combo: Vec<f64> = uf.u.iter().zip(&ug.u).map(|(a, b)| a + s * b).collect();
        prop_assert!(linalg::max_abs(&sub(&ufg.u, &combo)) < 1e-9);
    }
}
