//! Maps between functions on `V_m` and on the fractal (represented at a
//! reference level `M*`): the averaging map `Phi_m`, its adjoint `ext_m`
//! and the strong-convergence error.

use crate::error::{Error, Result};
use crate::forms::AssembledForm;
use crate::harmonic_structure::{check_len, Fractal};
use crate::linalg;
use crate::measures::{self, HarmonicIntegrator, VertexMeasure};

/// `Phi_m f(p) = <f, psi_{p,m}> / mu^(m)(p)` for `f` given as an
/// `M*`-harmonic function on `V_{M*}`. The inner products are exact.
pub fn phi(fractal: &Fractal, integ: &HarmonicIntegrator, f: &[f64], big: usize, m: usize) -> Result<Vec<f64>> {
    if m > big {
        return Err(Error::InvalidArgument(format!("level {m} above the reference level {big}")));
    }
    check_len(fractal.num_vertices(big), f.len())?;
    let mf = integ.mass_apply(fractal, f, big)?;
    let tested = fractal.extension_transpose(&mf, big, m)?;
    let vm = measures::vertex_measure(fractal, integ, m)?;
    Ok(tested.iter().zip(&vm.masses).map(|(t, w)| t / w).collect())
}

/// `ext_m v = sum_p v(p) psi_{p,m}`, evaluated on `V_{M*}`.
pub fn extend(fractal: &Fractal, v: &[f64], m: usize, big: usize) -> Result<Vec<f64>> {
    fractal.harmonic_extension(v, m, big)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsError {
    pub sup: f64,
    pub l2: f64,
}

/// Distance between `ext_m u_m` and a reference solution on `V_{M*}`, in
/// the sup norm and in `L^2(mu^(M*))`.
pub fn ks_strong_error(
    fractal: &Fractal,
    vm_big: &VertexMeasure,
    u_m: &[f64],
    m: usize,
    u_ref: &[f64],
) -> Result<KsError> {
    let big = vm_big.level;
    check_len(fractal.num_vertices(big), u_ref.len())?;
    let e = extend(fractal, u_m, m, big)?;
    let d: Vec<f64> = e.iter().zip(u_ref).map(|(a, b)| a - b).collect();
    Ok(KsError { sup: linalg::max_abs(&d), l2: measures::l2_norm(vm_big, &d)? })
}

/// Right-hand side making the restriction of `u` the exact discrete
/// solution on this level: `f = -M^{-1} A u`.
pub fn manufactured_rhs(af: &AssembledForm, u: &[f64]) -> Result<Vec<f64>> {
    check_len(af.num_vertices(), u.len())?;
    let au = linalg::matvec(&af.stiffness, u);
    Ok(au.iter().zip(&af.mass).map(|(a, m)| -a / m).collect())
}
