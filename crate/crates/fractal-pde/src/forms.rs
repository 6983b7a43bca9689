//! The non-symmetric form
//!
//! `Q(f,g) = <a.df, dg> - <g.b, df> - <f.b_hat, dg> - <c f, g>`
//!
//! on `V_m`, Hardy-type estimates for the drift fields and the derived
//! coercivity, continuity and sector constants.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fields::{self, SymbolicField, VectorField};
use crate::harmonic_structure::{check_len, Fractal, GraphForm, VertexFunction};
use crate::linalg::{self, Csr};
use crate::measures::{self, HarmonicIntegrator, SelfSimilarMeasure, VertexMeasure};

/// Margin by which the shift makes `c0 + c1` positive.
pub const SHIFT_MARGIN: f64 = 0.1;

/// A drift field: zero, symbolic `sum g_i . d f_i`, or given explicitly at one level.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum FieldSpec {
    #[default]
    Zero,
    Symbolic(SymbolicField),
    Explicit(VectorField),
}

impl FieldSpec {
    pub fn realize(&self, fractal: &Fractal, form: &GraphForm) -> Result<VectorField> {
        match self {
            FieldSpec::Zero => Ok(VectorField::zero(form)),
            FieldSpec::Symbolic(s) => s.realize(fractal, form),
            FieldSpec::Explicit(v) => {
                if v.level != form.level {
                    return Err(Error::LevelMismatch { expected: form.level, got: v.level });
                }
                check_len(form.edges.len(), v.values.len())?;
                Ok(v.clone())
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            FieldSpec::Zero => true,
            FieldSpec::Symbolic(s) => s.is_empty(),
            FieldSpec::Explicit(v) => v.is_zero(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FormCoefficients {
    pub a: VertexFunction,
    pub b: FieldSpec,
    pub b_hat: FieldSpec,
    pub c: VertexFunction,
    /// Ellipticity bounds `lambda < a < Lambda`.
    pub lambda: f64,
    pub big_lambda: f64,
}

impl FormCoefficients {
    /// `a = 1`, no drift, `c = -1`, bounds `(1/2, 2)`.
    pub fn standard(boundary_size: usize) -> Self {
        FormCoefficients {
            a: VertexFunction::constant(boundary_size, 1.0),
            b: FieldSpec::Zero,
            b_hat: FieldSpec::Zero,
            c: VertexFunction::constant(boundary_size, -1.0),
            lambda: 0.5,
            big_lambda: 2.0,
        }
    }
}

/// Constants in `||g.b||^2 <= delta E(g) + gamma ||g||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HardyEstimate {
    pub delta: f64,
    pub gamma: f64,
    /// The parameter `M` (`delta = 1/M`).
    pub m_param: f64,
    pub n0: usize,
    pub v_n0: f64,
    pub field_norm: f64,
}

/// Hardy constants from cell diameters: the smallest `n0 <= m` with
/// `max diam_R(X_w) <= 1/(2 M ||b||^2)` over `|w| = n0`, then
/// `delta = 1/M` and `gamma = 2 ||b||^2 / V(n0)`.
///
/// Cell diameters are bounded by `r_w diam_R(V_0)`, which dominates the
/// diameter measured in the full form.
pub fn hardy_bound(
    fractal: &Fractal,
    measure: &SelfSimilarMeasure,
    form: &GraphForm,
    b: &VectorField,
    m_param: f64,
) -> Result<HardyEstimate> {
    if !(m_param > 0.0) {
        return Err(Error::InvalidArgument("M must be positive".into()));
    }
    let norm2 = fields::inner(form, b, b)?;
    if norm2 == 0.0 {
        return Ok(HardyEstimate { delta: 1.0 / m_param, gamma: 0.0, m_param, n0: 0, v_n0: 1.0, field_norm: 0.0 });
    }
    let threshold = 1.0 / (2.0 * m_param * norm2);
    let mut n0 = 0;
    while fractal.intrinsic_max_cell_diameter(n0) > threshold {
        n0 += 1;
        if n0 > 10_000 {
            return Err(Error::InvalidArgument("cell diameters do not shrink".into()));
        }
    }
    if n0 > form.level {
        return Err(Error::NoAdmissibleLevel { max_level: form.level, required: n0 });
    }
    let v_n0 = measure.min_cell_mass(n0);
    Ok(HardyEstimate { delta: 1.0 / m_param, gamma: 2.0 * norm2 / v_n0, m_param, n0, v_n0, field_norm: norm2.sqrt() })
}

/// Quadratic form `g -> ||g.b||^2` as a dense matrix.
fn action_matrix(form: &GraphForm, b: &VectorField) -> Result<DMatrix<f64>> {
    check_len(form.edges.len(), b.values.len())?;
    let n = form.num_vertices;
    let mut m = DMatrix::zeros(n, n);
    for (e, v) in form.edges.iter().zip(&b.values) {
        let w = 0.25 * e.conductance * v * v;
        m[(e.p, e.p)] += w;
        m[(e.q, e.q)] += w;
        m[(e.p, e.q)] += w;
        m[(e.q, e.p)] += w;
    }
    Ok(m)
}

/// Smallest `gamma >= 0` with `||g.b||^2 <= delta E(g) + gamma ||g||^2_{mu^(m)}`
/// for all `g`: the top generalised eigenvalue of `B - delta L` against the
/// vertex masses, clamped at zero.
pub fn hardy_optimal(form: &GraphForm, b: &VectorField, delta: f64, vm: &VertexMeasure) -> Result<f64> {
    let n = form.num_vertices;
    if n > linalg::DENSE_LIMIT {
        return Err(Error::TooLarge { operation: "sharp Hardy constant", size: n, limit: linalg::DENSE_LIMIT });
    }
    check_len(n, vm.masses.len())?;
    let bm = action_matrix(form, b)?;
    let l = form.dense_laplacian();
    let s: Vec<f64> = vm.masses.iter().map(|m| 1.0 / m.sqrt()).collect();
    let sym = DMatrix::from_fn(n, n, |i, j| s[i] * (bm[(i, j)] - delta * l[(i, j)]) * s[j]);
    Ok(linalg::max_symmetric_eigenvalue(sym).max(0.0))
}

/// `Q` on `V_m`: `A[i][j] = Q(e_j, e_i)`, so `Q(f, g) = g^T A f`.
#[derive(Debug, Clone)]
pub struct AssembledForm {
    pub level: usize,
    pub form: GraphForm,
    pub stiffness: Csr,
    /// Lumped masses `mu^(m)(p)`.
    pub mass: Vec<f64>,
    /// Shift `c1` already added to the stiffness.
    pub shift: f64,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    pub b: VectorField,
    pub b_hat: VectorField,
    pub lambda: f64,
    pub big_lambda: f64,
}

pub fn assemble(
    fractal: &Fractal,
    integrator: &HarmonicIntegrator,
    coeffs: &FormCoefficients,
    m: usize,
) -> Result<AssembledForm> {
    let form = fractal.graph_form(m)?;
    let vm = measures::vertex_measure(fractal, integrator, m)?;
    let a = coeffs.a.at_level(fractal, m)?;
    let c = coeffs.c.at_level(fractal, m)?;
    let b = coeffs.b.realize(fractal, &form)?;
    let b_hat = coeffs.b_hat.realize(fractal, &form)?;
    assemble_from_parts(form, vm, a, c, b, b_hat, coeffs.lambda, coeffs.big_lambda)
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_from_parts(
    form: GraphForm,
    vm: VertexMeasure,
    a: Vec<f64>,
    c: Vec<f64>,
    b: VectorField,
    b_hat: VectorField,
    lambda: f64,
    big_lambda: f64,
) -> Result<AssembledForm> {
    let n = form.num_vertices;
    check_len(n, a.len())?;
    check_len(n, c.len())?;
    check_len(n, vm.masses.len())?;
    check_len(form.edges.len(), b.values.len())?;
    check_len(form.edges.len(), b_hat.values.len())?;
    if !(lambda > 0.0 && lambda < big_lambda) {
        return Err(Error::CoefficientBounds(format!("need 0 < lambda < Lambda, got ({lambda}, {big_lambda})")));
    }
    if let Some((p, v)) = a.iter().enumerate().find(|(_, v)| !(**v > lambda && **v < big_lambda)) {
        return Err(Error::CoefficientBounds(format!("a({p}) = {v} outside ({lambda}, {big_lambda})")));
    }
    let mut t = Vec::with_capacity(8 * form.edges.len() + n);
    for (k, e) in form.edges.iter().enumerate() {
        let (p, q, w) = (e.p, e.q, e.conductance);
        let diff = w * 0.5 * (a[p] + a[q]);
        t.extend_from_slice(&[(p, p, diff), (q, q, diff), (p, q, -diff), (q, p, -diff)]);
        // -1/2 sum w * avg(g) * b * (f(p) - f(q))
        let hb = 0.5 * w * b.values[k];
        t.extend_from_slice(&[(p, p, -hb), (p, q, hb), (q, p, -hb), (q, q, hb)]);
        // -1/2 sum w * avg(f) * b_hat * (g(p) - g(q))
        let hh = 0.5 * w * b_hat.values[k];
        t.extend_from_slice(&[(p, p, -hh), (p, q, -hh), (q, p, hh), (q, q, hh)]);
    }
    for p in 0..n {
        t.push((p, p, -c[p] * vm.masses[p]));
    }
    let stiffness = linalg::csr_from_triplets(n, &t);
    Ok(AssembledForm {
        level: form.level,
        form,
        stiffness,
        mass: vm.masses,
        shift: 0.0,
        a,
        c,
        b,
        b_hat,
        lambda,
        big_lambda,
    })
}

impl AssembledForm {
    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    pub fn vertex_measure(&self) -> VertexMeasure {
        VertexMeasure { level: self.level, masses: self.mass.clone() }
    }

    /// `Q(f, g)`.
    pub fn q(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        check_len(self.num_vertices(), f.len())?;
        check_len(self.num_vertices(), g.len())?;
        Ok(linalg::dot(g, &linalg::matvec(&self.stiffness, f)))
    }

    /// `Q_alpha(f) = Q(f, f) + alpha ||f||^2`.
    pub fn q_alpha(&self, f: &[f64], alpha: f64) -> Result<f64> {
        Ok(self.q(f, f)? + alpha * self.l2_inner(f, f)?)
    }

    pub fn l2_inner(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        check_len(self.num_vertices(), f.len())?;
        check_len(self.num_vertices(), g.len())?;
        Ok(linalg::weighted_dot(f, g, &self.mass))
    }

    /// `(Q(f,g) + Q(g,f)) / 2` as a matrix.
    pub fn symmetric_part(&self) -> Csr {
        let t = self.stiffness.transpose_view().to_csr();
        linalg::lin_comb(0.5, &self.stiffness, 0.5, &t)
    }

    /// `A + alpha M`.
    pub fn with_mass(&self, alpha: f64) -> Csr {
        linalg::lin_comb(1.0, &self.stiffness, alpha, &linalg::diag_csr(&self.mass))
    }

    /// The form `Q + c1 <., .>`.
    pub fn shifted(&self, c1: f64) -> AssembledForm {
        let mut out = self.clone();
        out.stiffness = self.with_mass(c1);
        out.shift += c1;
        out
    }

    pub fn energy(&self, f: &[f64]) -> Result<f64> {
        crate::harmonic_structure::energy(&self.form, f)
    }
}

/// How the Hardy parameter `M` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HardyPolicy {
    /// `M = max(16/lambda^2, at_least)`, which keeps `lambda0 >= lambda/4`.
    Auto { at_least: f64 },
    /// Use `M` as given.
    Exact(f64),
}

impl Default for HardyPolicy {
    fn default() -> Self {
        HardyPolicy::Auto { at_least: 0.0 }
    }
}

impl HardyPolicy {
    pub fn m_param(&self, lambda: f64) -> f64 {
        match *self {
            HardyPolicy::Auto { at_least } => (16.0 / (lambda * lambda)).max(at_least),
            HardyPolicy::Exact(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HardySource {
    /// Constants from cell diameters and cell masses.
    CellBound,
    /// Constants from the generalised eigenvalue problem on `V_m`.
    Sharp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConstants {
    pub delta: f64,
    pub gamma: f64,
    pub estimate: Option<HardyEstimate>,
}

impl FieldConstants {
    fn zero() -> Self {
        FieldConstants { delta: 0.0, gamma: 0.0, estimate: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub source: HardySource,
    pub level: usize,
    pub m_param: f64,
    pub b: FieldConstants,
    pub b_hat: FieldConstants,
    pub lambda: f64,
    pub big_lambda: f64,
    /// `||c||_inf` after the shift.
    pub c_sup: f64,
    pub lambda0: f64,
    pub c0: f64,
    pub big_lambda_inf: f64,
    pub c_inf: f64,
    /// Sector constant for `0 <= eps <= c0/2`.
    pub k_sector: f64,
    pub shift: f64,
}

impl Diagnostics {
    fn compute(
        source: HardySource,
        level: usize,
        m_param: f64,
        b: FieldConstants,
        b_hat: FieldConstants,
        lambda: f64,
        big_lambda: f64,
        essinf_neg_c: f64,
        c_sup: f64,
    ) -> Self {
        let (sdb, sdh) = (b.delta.sqrt(), b_hat.delta.sqrt());
        let lambda0 = 0.5 * (lambda - sdb - sdh);
        let c0 = essinf_neg_c - (b.gamma + b_hat.gamma) / (2.0 * lambda0);
        let big_lambda_inf = big_lambda + sdb + sdh + 1.0;
        let c_inf = 0.5 * (b.gamma + b_hat.gamma) + c_sup;
        let k_sector = if c0 > 0.0 && lambda0 > 0.0 {
            (big_lambda + sdb + sdh + b.gamma.sqrt() + b_hat.gamma.sqrt()) / lambda + 2.0 * c_sup / c0 + 1.0
        } else {
            f64::INFINITY
        };
        Diagnostics {
            source,
            level,
            m_param,
            b,
            b_hat,
            lambda,
            big_lambda,
            c_sup,
            lambda0,
            c0,
            big_lambda_inf,
            c_inf,
            k_sector,
            shift: 0.0,
        }
    }

    pub fn feasible(&self) -> bool {
        self.lambda0 > 0.0 && self.c0 > 0.0
    }

    /// Constants of `Q + c1 <.,.>`: `c0 -> c0 + c1`, `||c|| -> ||c|| + c1`.
    pub fn shifted(&self, c1: f64) -> Diagnostics {
        let mut d = Diagnostics::compute(
            self.source,
            self.level,
            self.m_param,
            self.b,
            self.b_hat,
            self.lambda,
            self.big_lambda,
            0.0,
            self.c_sup + c1,
        );
        d.c0 = self.c0 + c1;
        d.k_sector = if d.c0 > 0.0 && d.lambda0 > 0.0 {
            (d.big_lambda + d.b.delta.sqrt() + d.b_hat.delta.sqrt() + d.b.gamma.sqrt() + d.b_hat.gamma.sqrt())
                / d.lambda
                + 2.0 * d.c_sup / d.c0
                + 1.0
        } else {
            f64::INFINITY
        };
        d.shift = self.shift + c1;
        d
    }

    /// Energy bound `Q_1(u) <= (2/c0 + 4/c0^2) ||f||^2` for the weak solution.
    pub fn energy_bound_factor(&self) -> f64 {
        2.0 / self.c0 + 4.0 / (self.c0 * self.c0)
    }
}

fn coefficient_extremes(af: &AssembledForm) -> (f64, f64) {
    let essinf_neg_c = af.c.iter().map(|v| -v).fold(f64::INFINITY, f64::min);
    let c_sup = linalg::max_abs(&af.c);
    (essinf_neg_c, c_sup)
}

/// Constants from the cell-diameter Hardy bound. Zero fields get
/// `delta = gamma = 0`.
pub fn diagnostics(fractal: &Fractal, measure: &SelfSimilarMeasure, af: &AssembledForm, policy: HardyPolicy) -> Result<Diagnostics> {
    let m_param = policy.m_param(af.lambda);
    let fc = |v: &VectorField| -> Result<FieldConstants> {
        if v.is_zero() {
            return Ok(FieldConstants::zero());
        }
        let est = hardy_bound(fractal, measure, &af.form, v, m_param)?;
        Ok(FieldConstants { delta: est.delta, gamma: est.gamma, estimate: Some(est) })
    };
    let (b, b_hat) = (fc(&af.b)?, fc(&af.b_hat)?);
    let (ess, sup) = coefficient_extremes(af);
    let d = Diagnostics::compute(HardySource::CellBound, af.level, m_param, b, b_hat, af.lambda, af.big_lambda, ess, sup);
    Ok(if af.shift != 0.0 { d.shifted(af.shift) } else { d })
}

/// Constants from the sharp Hardy constants at `delta = 1/M`.
pub fn diagnostics_sharp(af: &AssembledForm, policy: HardyPolicy) -> Result<Diagnostics> {
    let m_param = policy.m_param(af.lambda);
    let vm = af.vertex_measure();
    let fc = |v: &VectorField| -> Result<FieldConstants> {
        if v.is_zero() {
            return Ok(FieldConstants::zero());
        }
        let delta = 1.0 / m_param;
        Ok(FieldConstants { delta, gamma: hardy_optimal(&af.form, v, delta, &vm)?, estimate: None })
    };
    let (b, b_hat) = (fc(&af.b)?, fc(&af.b_hat)?);
    let (ess, sup) = coefficient_extremes(af);
    let d = Diagnostics::compute(HardySource::Sharp, af.level, m_param, b, b_hat, af.lambda, af.big_lambda, ess, sup);
    Ok(if af.shift != 0.0 { d.shifted(af.shift) } else { d })
}

/// Cell-bound constants, falling back to sharp constants when the former
/// are infeasible and `V_m` is small enough for a dense eigenproblem.
pub fn certify(fractal: &Fractal, measure: &SelfSimilarMeasure, af: &AssembledForm, policy: HardyPolicy) -> Result<Diagnostics> {
    let cell = match diagnostics(fractal, measure, af, policy) {
        Ok(d) => d,
        Err(Error::NoAdmissibleLevel { .. }) if af.num_vertices() <= linalg::DENSE_LIMIT => {
            return diagnostics_sharp(af, policy);
        }
        Err(e) => return Err(e),
    };
    if cell.feasible() || af.num_vertices() > linalg::DENSE_LIMIT {
        return Ok(cell);
    }
    let sharp = diagnostics_sharp(af, policy)?;
    Ok(if sharp.feasible() { sharp } else { cell })
}

/// Adds the shift `c1 = margin - c0` when `c0 <= 0`.
pub fn apply_shift(af: &AssembledForm, diag: &Diagnostics) -> Result<(AssembledForm, Diagnostics)> {
    if diag.lambda0 <= 0.0 {
        return Err(Error::Infeasible(format!(
            "lambda0 = {:.4e} <= 0 with delta(b) = {:.4e}, delta(b_hat) = {:.4e}, lambda = {}",
            diag.lambda0, diag.b.delta, diag.b_hat.delta, diag.lambda
        )));
    }
    if diag.c0 > 0.0 {
        return Ok((af.clone(), diag.clone()));
    }
    let c1 = SHIFT_MARGIN - diag.c0;
    Ok((af.shifted(c1), diag.shifted(c1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(name: &str, m: usize) -> (Fractal, HarmonicIntegrator, SelfSimilarMeasure) {
        let f = Fractal::preset(name, m).unwrap();
        let mu = SelfSimilarMeasure::uniform(f.n_maps());
        let integ = HarmonicIntegrator::new(&f.hs, &mu).unwrap();
        (f, integ, mu)
    }

    #[test]
    fn zero_drift_constants() {
        let (f, integ, mu) = setup("sg", 3);
        let coeffs = FormCoefficients::standard(3);
        let af = assemble(&f, &integ, &coeffs, 3).unwrap();
        let d = diagnostics(&f, &mu, &af, HardyPolicy::default()).unwrap();
        assert_eq!(d.lambda0, 0.25);
        assert_eq!(d.c0, 1.0);
        assert_eq!(d.big_lambda_inf, 3.0);
        assert_eq!(d.c_inf, 1.0);
        assert!((d.k_sector - (2.0 / 0.5 + 3.0)).abs() < 1e-15);
    }

    #[test]
    fn hardy_bound_sg_level_one() {
        let (f, _, mu) = setup("sg", 3);
        let form = f.graph_form(3).unwrap();
        let h = VertexFunction::new(0, vec![0.0, 1.0, 0.5]);
        let mut b = fields::gradient(&form, &h.at_level(&f, 3).unwrap()).unwrap();
        let n = fields::norm(&form, &b).unwrap();
        b = b.scale(1.0 / n);
        let est = hardy_bound(&f, &mu, &form, &b, 1.0).unwrap();
        assert_eq!(est.n0, 1);
        assert!((est.gamma - 6.0).abs() < 1e-12);
        assert_eq!(est.delta, 1.0);
    }

    #[test]
    fn no_admissible_level() {
        let (f, _, mu) = setup("sg", 1);
        let form = f.graph_form(1).unwrap();
        let b = VectorField { level: 1, values: vec![10.0; form.edges.len()] };
        let err = hardy_bound(&f, &mu, &form, &b, 100.0).unwrap_err();
        assert!(matches!(err, Error::NoAdmissibleLevel { max_level: 1, .. }));
    }

    #[test]
    fn coefficient_bounds_enforced() {
        let (f, integ, _) = setup("interval", 2);
        let mut coeffs = FormCoefficients::standard(2);
        coeffs.a = VertexFunction::constant(2, 3.0);
        assert!(matches!(assemble(&f, &integ, &coeffs, 2), Err(Error::CoefficientBounds(_))));
    }

    #[test]
    fn shift_restores_feasibility() {
        let (f, integ, mu) = setup("interval", 3);
        let mut coeffs = FormCoefficients::standard(2);
        coeffs.c = VertexFunction::constant(2, 1.0);
        let af = assemble(&f, &integ, &coeffs, 3).unwrap();
        let d = diagnostics(&f, &mu, &af, HardyPolicy::default()).unwrap();
        assert!(!d.feasible());
        let (af2, d2) = apply_shift(&af, &d).unwrap();
        assert!((d2.c0 - SHIFT_MARGIN).abs() < 1e-14);
        assert!((d2.c_sup - (1.0 + 1.1)).abs() < 1e-14);
        let u = vec![1.0; af.num_vertices()];
        let lhs = af2.q(&u, &u).unwrap();
        assert!((lhs - (af.q(&u, &u).unwrap() + 1.1)).abs() < 1e-12);
    }
}
