//! Convergence experiments: solutions on `V_m` (or `Gamma_m`) extended to a
//! reference level `M*` and compared with a reference solution there.

use crate::error::{Error, Result};
use crate::fields::{SymbolicField, VectorField};
use crate::forms::{self, AssembledForm, Diagnostics, FieldSpec, FormCoefficients, HardyPolicy};
use crate::harmonic_structure::{check_len, Fractal, VertexFunction};
use crate::identification::{self, KsError};
use crate::measures::{self, HarmonicIntegrator, SelfSimilarMeasure};
use crate::metric_graph::MetricGraph;
use crate::solvers::{self, ParabolicOptions};

/// Allowed growth factor between consecutive errors in a "decreasing" sequence.
pub const SLACK: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Graph,
    /// Metric graph with `subdiv` interior nodes per edge.
    Metric { subdiv: usize },
}

#[derive(Debug, Clone)]
pub enum Equation {
    /// `L u = f`, `f` given on `V_{M*}`.
    Elliptic { f: Vec<f64> },
    /// `du/dt = L u`, `u(0) = u0` given on `V_{M*}`; compares `u(T)`.
    Parabolic { u0: Vec<f64>, opts: ParabolicOptions },
}

/// Fractal, measure and coefficients of one problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub fractal: Fractal,
    pub measure: SelfSimilarMeasure,
    pub integ: HarmonicIntegrator,
    pub coeffs: FormCoefficients,
    pub policy: HardyPolicy,
    /// Shift infeasible forms by `c1` instead of failing.
    pub allow_shift: bool,
}

/// An assembled and certified discretisation at one level.
#[derive(Debug, Clone)]
pub struct Level {
    pub m: usize,
    pub af: AssembledForm,
    pub diag: Diagnostics,
    pub metric: Option<MetricGraph>,
}

impl Level {
    /// Vertex values on `V_m` of a node vector (identity in graph mode).
    pub fn vertex_part<'a>(&self, u: &'a [f64]) -> &'a [f64] {
        match &self.metric {
            Some(mg) => &u[..mg.num_vertices],
            None => u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    /// Coefficient index for single-space and diagonal runs.
    pub n: Option<usize>,
    pub m: usize,
    pub sup_error: f64,
    pub l2_error: f64,
    /// `Q_m(u_m, u_m)`.
    pub energy_q: f64,
    pub lambda0: f64,
    pub c0: f64,
    pub k_sector: f64,
}

impl Problem {
    pub fn new(fractal: Fractal, measure: SelfSimilarMeasure, coeffs: FormCoefficients) -> Result<Self> {
        let integ = HarmonicIntegrator::new(&fractal.hs, &measure)?;
        Ok(Problem { fractal, measure, integ, coeffs, policy: HardyPolicy::default(), allow_shift: false })
    }

    pub fn level(&self, m: usize, mode: Mode) -> Result<Level> {
        self.level_with(&self.coeffs, m, mode)
    }

    pub fn level_with(&self, coeffs: &FormCoefficients, m: usize, mode: Mode) -> Result<Level> {
        let (af, metric) = match mode {
            Mode::Graph => (forms::assemble(&self.fractal, &self.integ, coeffs, m)?, None),
            Mode::Metric { subdiv } => {
                let mg = MetricGraph::new(&self.fractal, m, subdiv)?;
                (mg.assemble(&self.fractal, &self.integ, coeffs)?, Some(mg))
            }
        };
        let diag = forms::certify(&self.fractal, &self.measure, &af, self.policy)?;
        let (af, diag) = if diag.feasible() || !self.allow_shift { (af, diag) } else { forms::apply_shift(&af, &diag)? };
        Ok(Level { m, af, diag, metric })
    }

    /// Moves data given on `V_{M*}` to the level's nodes with `Phi_m`.
    pub fn transport(&self, level: &Level, f: &[f64], big: usize) -> Result<Vec<f64>> {
        match &level.metric {
            None => identification::phi(&self.fractal, &self.integ, f, big, level.m),
            Some(mg) => mg.phi(&self.fractal, &self.integ, f, big),
        }
    }

    /// Solves the equation on one level with transported data; returns the node values.
    pub fn solve(&self, level: &Level, eq: &Equation, big: usize) -> Result<Vec<f64>> {
        match eq {
            Equation::Elliptic { f } => {
                let fm = self.transport(level, f, big)?;
                let sol = solvers::solve_elliptic(&level.af, &level.diag, &fm)?;
                if !sol.bound_holds {
                    return Err(Error::SolverFailure(format!(
                        "energy bound violated at level {}: Q_1(u) = {:.6e} > {:.6e}",
                        level.m, sol.q1, sol.bound
                    )));
                }
                Ok(sol.u)
            }
            Equation::Parabolic { u0, opts } => {
                let u0m = self.transport(level, u0, big)?;
                let tr = solvers::solve_parabolic(&level.af, &level.diag, &u0m, *opts)?;
                Ok(tr.extrapolated.clone().unwrap_or_else(|| tr.final_state().to_vec()))
            }
        }
    }

    /// Graph-mode solution at `big`, the reference for self-convergence.
    pub fn reference(&self, eq: &Equation, big: usize) -> Result<Vec<f64>> {
        let level = self.level(big, Mode::Graph)?;
        self.solve(&level, eq, big)
    }

    fn row(&self, level: &Level, u: &[f64], u_ref: &[f64], big: usize, n: Option<usize>) -> Result<Row> {
        let vm_big = measures::vertex_measure(&self.fractal, &self.integ, big)?;
        let KsError { sup, l2 } = identification::ks_strong_error(&self.fractal, &vm_big, level.vertex_part(u), level.m, u_ref)?;
        Ok(Row {
            n,
            m: level.m,
            sup_error: sup,
            l2_error: l2,
            energy_q: level.af.q(u, u)?,
            lambda0: level.diag.lambda0,
            c0: level.diag.c0,
            k_sector: level.diag.k_sector,
        })
    }

    /// Errors of `ext_m u_m` against `u_ref` on `V_{M*}` for every level.
    pub fn run_varying_space(&self, eq: &Equation, levels: &[usize], big: usize, mode: Mode, u_ref: &[f64]) -> Result<Vec<Row>> {
        check_len(self.fractal.num_vertices(big), u_ref.len())?;
        levels
            .iter()
            .map(|&m| {
                check_level(m, big)?;
                let level = self.level(m, mode)?;
                let u = self.solve(&level, eq, big)?;
                self.row(&level, &u, u_ref, big, None)
            })
            .collect()
    }

    /// Manufactured elliptic problems: on each level `f_m` is chosen so that
    /// the restriction of `u` (lifted edge-wise linearly in metric mode) is the
    /// exact discrete solution; recovery is checked on `V_{M*}`.
    pub fn run_manufactured(&self, u: &VertexFunction, levels: &[usize], big: usize, mode: Mode) -> Result<Vec<Row>> {
        let u_ref = u.at_level(&self.fractal, big)?;
        levels
            .iter()
            .map(|&m| {
                check_level(m, big)?;
                let level = self.level(m, mode)?;
                let um = u.at_level(&self.fractal, m)?;
                let um = match &level.metric {
                    Some(mg) => mg.lift(&um)?,
                    None => um,
                };
                let fm = identification::manufactured_rhs(&level.af, &um)?;
                let sol = solvers::solve_elliptic(&level.af, &level.diag, &fm)?;
                self.row(&level, &sol.u, &u_ref, big, None)
            })
            .collect()
    }

    /// Fixed level `m`; solutions for `coeffs(n)` against the solution for `self.coeffs`.
    pub fn run_single_space<F>(&self, eq: &Equation, m: usize, ns: &[usize], coeffs: F) -> Result<Vec<Row>>
    where
        F: Fn(usize) -> Result<FormCoefficients>,
    {
        let base = self.level(m, Mode::Graph)?;
        let u = self.solve(&base, eq, m)?;
        let vm = base.af.vertex_measure();
        ns.iter()
            .map(|&n| {
                let level = self.level_with(&coeffs(n)?, m, Mode::Graph)?;
                let un = self.solve(&level, eq, m)?;
                let d: Vec<f64> = un.iter().zip(&u).map(|(a, b)| a - b).collect();
                Ok(Row {
                    n: Some(n),
                    m,
                    sup_error: crate::linalg::max_abs(&d),
                    l2_error: measures::l2_norm(&vm, &d)?,
                    energy_q: level.af.q(&un, &un)?,
                    lambda0: level.diag.lambda0,
                    c0: level.diag.c0,
                    k_sector: level.diag.k_sector,
                })
            })
            .collect()
    }

    /// Grid over coefficient index `n` and level `m`, errors against the
    /// reference solution `u_ref` on `V_{M*}` for the limiting coefficients.
    pub fn run_diagonal<F>(&self, eq: &Equation, ns: &[usize], levels: &[usize], big: usize, mode: Mode, u_ref: &[f64], coeffs: F) -> Result<Vec<Row>>
    where
        F: Fn(usize) -> Result<FormCoefficients>,
    {
        let mut rows = Vec::with_capacity(ns.len() * levels.len());
        for &n in ns {
            let cn = coeffs(n)?;
            for &m in levels {
                check_level(m, big)?;
                let level = self.level_with(&cn, m, mode)?;
                let u = self.solve(&level, eq, big)?;
                rows.push(self.row(&level, &u, u_ref, big, Some(n))?);
            }
        }
        Ok(rows)
    }
}

fn check_level(m: usize, big: usize) -> Result<()> {
    if m > big {
        Err(Error::InvalidArgument(format!("level {m} above the reference level {big}")))
    } else {
        Ok(())
    }
}

/// `b + eta/n` and `a + da/n` style perturbations of a coefficient set.
pub fn perturbed(
    fractal: &Fractal,
    base: &FormCoefficients,
    da: f64,
    eta: &FieldSpec,
    n: usize,
) -> Result<FormCoefficients> {
    let s = 1.0 / n as f64;
    let mut c = base.clone();
    c.a = VertexFunction::new(base.a.level, base.a.values.iter().map(|v| v + da * s).collect());
    c.b = add_fields(fractal, &base.b, eta, s)?;
    Ok(c)
}

/// `x + s y` for field specs.
pub fn add_fields(fractal: &Fractal, x: &FieldSpec, y: &FieldSpec, s: f64) -> Result<FieldSpec> {
    Ok(match (x, y) {
        (_, FieldSpec::Zero) => x.clone(),
        (FieldSpec::Zero, FieldSpec::Symbolic(b)) => FieldSpec::Symbolic(SymbolicField::default().plus_scaled(b, s)),
        (FieldSpec::Symbolic(a), FieldSpec::Symbolic(b)) => FieldSpec::Symbolic(a.plus_scaled(b, s)),
        (_, _) => {
            let level = explicit_level(x).or(explicit_level(y)).unwrap_or(0);
            let form = fractal.graph_form(level)?;
            let vx: VectorField = x.realize(fractal, &form)?;
            let vy = y.realize(fractal, &form)?;
            FieldSpec::Explicit(vx.add(&vy.scale(s))?)
        }
    })
}

fn explicit_level(f: &FieldSpec) -> Option<usize> {
    match f {
        FieldSpec::Explicit(v) => Some(v.level),
        _ => None,
    }
}

/// `true` when every error is at most `SLACK` times its predecessor.
pub fn decreasing_with_slack(errors: &[f64]) -> bool {
    errors.windows(2).all(|w| w[1] <= SLACK * w[0])
}

/// Ratios `e_k / e_{k+1}`.
pub fn ratios(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}
