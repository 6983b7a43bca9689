#![allow(dead_code)]

use std::f64::consts::PI;

use fractal_pde::experiments::Problem;
use fractal_pde::fields::SymbolicField;
use fractal_pde::forms::{FieldSpec, FormCoefficients};
use fractal_pde::harmonic_structure::{Fractal, VertexFunction};
use fractal_pde::measures::SelfSimilarMeasure;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_in(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// `g . d f` with `g` constant and `f` given on `V_0`.
pub fn drift(b: usize, g: f64, f0: Vec<f64>) -> FieldSpec {
    FieldSpec::Symbolic(SymbolicField::single(VertexFunction::constant(b, g), VertexFunction::new(0, f0)))
}

/// `a = 1`, `b = 0.5 d x`, `c = -1` on the unit interval.
pub fn interval_drift_problem(big: usize) -> Problem {
    let f = Fractal::preset("interval", big).unwrap();
    let mut coeffs = FormCoefficients::standard(2);
    coeffs.b = drift(2, 0.5, vec![0.0, 1.0]);
    Problem::new(f, SelfSimilarMeasure::uniform(2), coeffs).unwrap()
}

/// Right-hand side with exact solution `cos(pi x)` for the interval drift problem.
pub fn interval_rhs(x: f64) -> f64 {
    -(1.0 + PI * PI) * (PI * x).cos() - 0.5 * PI * (PI * x).sin()
}

/// Feasible SG problem with a compatible drift field `0.15 d h`, `h` harmonic.
pub fn sg_drift_coefficients() -> FormCoefficients {
    let mut coeffs = FormCoefficients::standard(3);
    coeffs.lambda = 0.99;
    coeffs.b = drift(3, 0.15, vec![0.0, 1.0, 0.0]);
    coeffs
}

pub fn sg_drift_problem(big: usize) -> Problem {
    let f = Fractal::preset("sg", big).unwrap();
    Problem::new(f, SelfSimilarMeasure::uniform(3), sg_drift_coefficients()).unwrap()
}

/// Harmonic extension of a `V_0` function to `V_m`.
pub fn harmonic(fractal: &Fractal, v0: &[f64], m: usize) -> Vec<f64> {
    fractal.harmonic_extension(v0, 0, m).unwrap()
}
