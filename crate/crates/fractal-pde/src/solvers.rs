//! Weak elliptic solves, Green and resolvent operators, and a theta-scheme
//! for `du/dt = L u` with step-halving checks.

use crate::error::{Error, Result};
use crate::forms::{AssembledForm, Diagnostics};
use crate::harmonic_structure::check_len;
use crate::linalg::{self, LinearSolver, SolverKind, SolverOptions};

/// Relative slack allowed on the a-priori energy bound for rounding.
const BOUND_SLACK: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EllipticSolution {
    pub u: Vec<f64>,
    /// `max_p |Q(u, e_p) + <f, e_p>|`.
    pub residual: f64,
    /// `Q_1(u) = Q(u,u) + ||u||^2`.
    pub q1: f64,
    /// `(2/c0 + 4/c0^2) ||f||^2`.
    pub bound: f64,
    pub bound_holds: bool,
    pub solver: SolverKind,
    pub iterations: usize,
}

fn check_consistent(af: &AssembledForm, diag: &Diagnostics) -> Result<()> {
    if (af.shift - diag.shift).abs() > 1e-14 * af.shift.abs().max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "form carries shift {} but diagnostics describe shift {}",
            af.shift, diag.shift
        )));
    }
    if af.level != diag.level {
        return Err(Error::LevelMismatch { expected: af.level, got: diag.level });
    }
    Ok(())
}

fn require_feasible(diag: &Diagnostics) -> Result<()> {
    if diag.feasible() {
        Ok(())
    } else {
        Err(Error::Infeasible(format!(
            "lambda0 = {:.4e}, c0 = {:.4e} (gamma(b) = {:.4e}, gamma(b_hat) = {:.4e}); apply a shift",
            diag.lambda0, diag.c0, diag.b.gamma, diag.b_hat.gamma
        )))
    }
}

/// Solves `Q(u, g) = -<f, g>` for all `g` on `V_m`, i.e. `L u = f`.
pub fn solve_elliptic(af: &AssembledForm, diag: &Diagnostics, f: &[f64]) -> Result<EllipticSolution> {
    solve_elliptic_with(af, diag, f, SolverOptions::default())
}

pub fn solve_elliptic_with(af: &AssembledForm, diag: &Diagnostics, f: &[f64], opts: SolverOptions) -> Result<EllipticSolution> {
    check_len(af.num_vertices(), f.len())?;
    check_consistent(af, diag)?;
    require_feasible(diag)?;
    let rhs: Vec<f64> = f.iter().zip(&af.mass).map(|(x, m)| -x * m).collect();
    let solver = LinearSolver::new(&af.stiffness, opts)?;
    let rep = solver.solve(&rhs, None)?;
    let u = rep.x;
    let au = linalg::matvec(&af.stiffness, &u);
    let residual = au.iter().zip(&rhs).fold(0.0f64, |m, (a, r)| m.max((a - r).abs()));
    let q1 = linalg::dot(&u, &au) + af.l2_inner(&u, &u)?;
    let bound = diag.energy_bound_factor() * af.l2_inner(f, f)?;
    let bound_holds = q1 <= bound * (1.0 + BOUND_SLACK) + 1e-300;
    Ok(EllipticSolution { u, residual, q1, bound, bound_holds, solver: rep.kind, iterations: rep.iterations })
}

/// Green operator: `Q(G f, g) = <f, g>`.
pub fn green_apply(af: &AssembledForm, diag: &Diagnostics, f: &[f64]) -> Result<Vec<f64>> {
    check_len(af.num_vertices(), f.len())?;
    check_consistent(af, diag)?;
    require_feasible(diag)?;
    let rhs: Vec<f64> = f.iter().zip(&af.mass).map(|(x, m)| x * m).collect();
    Ok(LinearSolver::new(&af.stiffness, SolverOptions::default())?.solve(&rhs, None)?.x)
}

/// Resolvent: `Q_alpha(G_alpha f, g) = <f, g>` for `alpha > 0`.
pub fn resolvent_apply(af: &AssembledForm, diag: &Diagnostics, alpha: f64, f: &[f64]) -> Result<Vec<f64>> {
    check_len(af.num_vertices(), f.len())?;
    check_consistent(af, diag)?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument("resolvent parameter must be positive".into()));
    }
    if !(diag.lambda0 > 0.0 && diag.c0 + alpha > 0.0) {
        return Err(Error::Infeasible(format!("Q_alpha not coercive: lambda0 = {}, c0 + alpha = {}", diag.lambda0, diag.c0 + alpha)));
    }
    let rhs: Vec<f64> = f.iter().zip(&af.mass).map(|(x, m)| x * m).collect();
    Ok(LinearSolver::new(&af.with_mass(alpha), SolverOptions::default())?.solve(&rhs, None)?.x)
}

#[derive(Debug, Clone, Copy)]
pub struct ParabolicOptions {
    pub t_final: f64,
    pub steps: usize,
    pub theta: f64,
    /// Accept a run once halving the step changes `u(T)` by less than this
    /// (relative to `||u0||`). `None` runs once with `steps`.
    pub richardson_tol: Option<f64>,
    pub max_refinements: usize,
}

impl Default for ParabolicOptions {
    fn default() -> Self {
        ParabolicOptions { t_final: 1.0, steps: 100, theta: 1.0, richardson_tol: None, max_refinements: 8 }
    }
}

#[derive(Debug, Clone)]
pub struct ParabolicTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `||u(t_k)||_{mu^(m)}`.
    pub l2_norms: Vec<f64>,
    /// `t Q_1(u(t)) / ||u0||^2`.
    pub smoothing: Vec<f64>,
    pub steps: usize,
    pub theta: f64,
    /// Change of `u(T)` at each step halving, relative to `||u0||`.
    pub refinement_history: Vec<f64>,
    /// Richardson-extrapolated `u(T)` from the last two runs.
    pub extrapolated: Option<Vec<f64>>,
}

impl ParabolicTrajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has the initial state")
    }
}

fn run_theta(af: &AssembledForm, u0: &[f64], t_final: f64, steps: usize, theta: f64) -> Result<ParabolicTrajectory> {
    let dt = t_final / steps as f64;
    let lhs = af.with_mass(0.0);
    let lhs = linalg::lin_comb(theta * dt, &lhs, 1.0, &linalg::diag_csr(&af.mass));
    let solver = LinearSolver::new(&lhs, SolverOptions::default())?;
    let norm0 = af.l2_inner(u0, u0)?;
    let mut u = u0.to_vec();
    let mut times = vec![0.0];
    let mut states = vec![u.clone()];
    let mut l2_norms = vec![norm0.sqrt()];
    let mut smoothing = vec![0.0];
    for k in 1..=steps {
        let au = linalg::matvec(&af.stiffness, &u);
        let rhs: Vec<f64> =
            u.iter().zip(&au).zip(&af.mass).map(|((ui, ai), m)| m * ui - (1.0 - theta) * dt * ai).collect();
        u = solver.solve(&rhs, Some(&u))?.x;
        let t = k as f64 * dt;
        let q1 = af.q_alpha(&u, 1.0)?;
        times.push(t);
        l2_norms.push(af.l2_inner(&u, &u)?.sqrt());
        smoothing.push(if norm0 > 0.0 { t * q1 / norm0 } else { 0.0 });
        states.push(u.clone());
    }
    Ok(ParabolicTrajectory {
        times,
        states,
        l2_norms,
        smoothing,
        steps,
        theta,
        refinement_history: Vec::new(),
        extrapolated: None,
    })
}

/// Theta-scheme `(M + theta dt A) u^{k+1} = (M - (1-theta) dt A) u^k`.
pub fn solve_parabolic(af: &AssembledForm, diag: &Diagnostics, u0: &[f64], opts: ParabolicOptions) -> Result<ParabolicTrajectory> {
    check_len(af.num_vertices(), u0.len())?;
    check_consistent(af, diag)?;
    if !(0.5..=1.0).contains(&opts.theta) {
        return Err(Error::InvalidArgument(format!("theta = {} outside [1/2, 1]", opts.theta)));
    }
    if opts.steps == 0 || !(opts.t_final > 0.0) {
        return Err(Error::InvalidArgument("need a positive final time and at least one step".into()));
    }
    if !(diag.lambda0 > 0.0) {
        return Err(Error::Infeasible(format!("lambda0 = {:.4e} <= 0", diag.lambda0)));
    }
    let Some(tol) = opts.richardson_tol else {
        return run_theta(af, u0, opts.t_final, opts.steps, opts.theta);
    };
    let scale = af.l2_inner(u0, u0)?.sqrt().max(f64::MIN_POSITIVE);
    let order = if opts.theta == 0.5 { 2 } else { 1 };
    let mut coarse = run_theta(af, u0, opts.t_final, opts.steps, opts.theta)?;
    let mut history = Vec::new();
    let mut steps = opts.steps;
    for _ in 0..opts.max_refinements {
        steps *= 2;
        let mut fine = run_theta(af, u0, opts.t_final, steps, opts.theta)?;
        let d: Vec<f64> = fine.final_state().iter().zip(coarse.final_state()).map(|(a, b)| a - b).collect();
        let change = af.l2_inner(&d, &d)?.sqrt() / scale;
        history.push(change);
        if change < tol {
            let factor = 1.0 / ((1u32 << order) as f64 - 1.0);
            fine.extrapolated =
                Some(fine.final_state().iter().zip(&d).map(|(a, di)| a + factor * di).collect());
            fine.refinement_history = history;
            return Ok(fine);
        }
        coarse = fine;
    }
    Err(Error::SolverFailure(format!(
        "step halving did not settle below {tol:.1e} after {} refinements (last change {:.3e})",
        opts.max_refinements,
        history.last().copied().unwrap_or(f64::NAN)
    )))
}
