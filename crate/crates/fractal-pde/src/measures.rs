//! Self-similar measures, exact integration of piecewise harmonic
//! functions and the lumped vertex measures `mu^(m)`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::harmonic_structure::{check_len, Fractal, HarmonicStructure};

pub const FIXED_POINT_TOL: f64 = 1e-13;
const MAX_POWER_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarMeasure {
    weights: Vec<f64>,
}

impl SelfSimilarMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidMeasure("weights must be positive".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {s}, not 1")));
        }
        Ok(SelfSimilarMeasure { weights })
    }

    pub fn uniform(n: usize) -> Self {
        SelfSimilarMeasure { weights: vec![1.0 / n as f64; n] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `mu(X_w)` for every word of length `m`, lexicographically.
    pub fn cell_masses(&self, m: usize) -> Vec<f64> {
        let mut s = vec![1.0];
        for _ in 0..m {
            s = s.iter().flat_map(|&x| self.weights.iter().map(move |&w| x * w)).collect();
        }
        s
    }

    /// `V(n) = min_{|w|=n} mu(X_w)`.
    pub fn min_cell_mass(&self, n: usize) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min).powi(n as i32)
    }
}

/// Exact integration of 0-harmonic functions and of products of two of them:
/// `int h dmu = beta . h|V_0` and `int h g dmu = h^T G g`.
#[derive(Debug, Clone)]
pub struct HarmonicIntegrator {
    measure: SelfSimilarMeasure,
    beta: Vec<f64>,
    gram: DMatrix<f64>,
    iterations: usize,
}

impl HarmonicIntegrator {
    /// Solves `beta = sum_j mu_j A_j^T beta` and `G = sum_j mu_j A_j^T G A_j`
    /// by power iteration.
    pub fn new(hs: &HarmonicStructure, measure: &SelfSimilarMeasure) -> Result<Self> {
        let n = hs.structure().n_maps();
        let b = hs.structure().boundary_size();
        if measure.weights().len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: measure.weights().len() });
        }
        let mu = measure.weights();
        let mut beta = nalgebra::DVector::from_element(b, 1.0 / b as f64);
        let mut iterations = 0;
        loop {
            let mut next = nalgebra::DVector::zeros(b);
            for j in 0..n {
                next += hs.extension_matrix(j).tr_mul(&beta) * mu[j];
            }
            let diff = (&next - &beta).amax();
            beta = next;
            iterations += 1;
            if diff < FIXED_POINT_TOL {
                break;
            }
            if iterations >= MAX_POWER_ITER {
                return Err(Error::SolverFailure("integrator fixed point did not converge".into()));
            }
        }
        let mut gram = DMatrix::from_diagonal(&beta);
        let mut it = 0;
        loop {
            let mut next = DMatrix::zeros(b, b);
            for j in 0..n {
                let a = hs.extension_matrix(j);
                next += a.transpose() * &gram * a * mu[j];
            }
            let diff = (&next - &gram).amax();
            gram = next;
            it += 1;
            if diff < FIXED_POINT_TOL {
                break;
            }
            if it >= MAX_POWER_ITER {
                return Err(Error::SolverFailure("gram fixed point did not converge".into()));
            }
        }
        let gram = (&gram + gram.transpose()) * 0.5;
        Ok(HarmonicIntegrator { measure: measure.clone(), beta: beta.as_slice().to_vec(), gram, iterations })
    }

    pub fn measure(&self) -> &SelfSimilarMeasure {
        &self.measure
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn beta_nonnegative(&self) -> bool {
        self.beta.iter().all(|&x| x >= 0.0)
    }

    /// `int u dmu` for `u` m-harmonic, given on `V_m`.
    pub fn integrate(&self, fractal: &Fractal, u: &[f64], m: usize) -> Result<f64> {
        fractal.cells.check_level(m)?;
        check_len(fractal.num_vertices(m), u.len())?;
        let b = fractal.boundary_size();
        let masses = self.measure.cell_masses(m);
        let verts = fractal.cells.all_cell_vertices(m);
        Ok(masses
            .iter()
            .enumerate()
            .map(|(c, mw)| mw * (0..b).map(|a| self.beta[a] * u[verts[c * b + a]]).sum::<f64>())
            .sum())
    }

    /// Consistent mass matrix applied to `f`: `(Mf)_p = int f psi_{p,m} dmu`.
    pub fn mass_apply(&self, fractal: &Fractal, f: &[f64], m: usize) -> Result<Vec<f64>> {
        fractal.cells.check_level(m)?;
        check_len(fractal.num_vertices(m), f.len())?;
        let b = fractal.boundary_size();
        let masses = self.measure.cell_masses(m);
        let verts = fractal.cells.all_cell_vertices(m);
        let mut out = vec![0.0; f.len()];
        for (c, mw) in masses.iter().enumerate() {
            let vs = &verts[c * b..(c + 1) * b];
            for a in 0..b {
                let s: f64 = (0..b).map(|k| self.gram[(a, k)] * f[vs[k]]).sum();
                out[vs[a]] += mw * s;
            }
        }
        Ok(out)
    }

    /// Exact `int u v dmu` for m-harmonic `u`, `v`.
    pub fn l2_inner_exact(&self, fractal: &Fractal, u: &[f64], v: &[f64], m: usize) -> Result<f64> {
        check_len(u.len(), v.len())?;
        let mu = self.mass_apply(fractal, u, m)?;
        Ok(crate::linalg::dot(&mu, v))
    }
}

/// `mu^(m)(p) = int psi_{p,m} dmu`.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexMeasure {
    pub level: usize,
    pub masses: Vec<f64>,
}

impl VertexMeasure {
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

pub fn vertex_measure(fractal: &Fractal, integrator: &HarmonicIntegrator, m: usize) -> Result<VertexMeasure> {
    fractal.cells.check_level(m)?;
    let b = fractal.boundary_size();
    let masses_w = integrator.measure().cell_masses(m);
    let verts = fractal.cells.all_cell_vertices(m);
    let mut masses = vec![0.0; fractal.num_vertices(m)];
    for (c, mw) in masses_w.iter().enumerate() {
        for a in 0..b {
            masses[verts[c * b + a]] += mw * integrator.beta()[a];
        }
    }
    Ok(VertexMeasure { level: m, masses })
}

/// `int u dmu` for `u` m-harmonic: `sum_p mu^(m)(p) u(p)`.
pub fn integrate_piecewise_harmonic(vm: &VertexMeasure, u: &[f64]) -> Result<f64> {
    check_len(vm.masses.len(), u.len())?;
    Ok(vm.masses.iter().zip(u).map(|(a, b)| a * b).sum())
}

/// `<u, v>_{mu^(m)}`.
pub fn l2_inner(vm: &VertexMeasure, u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(vm.masses.len(), u.len())?;
    check_len(vm.masses.len(), v.len())?;
    Ok(crate::linalg::weighted_dot(u, v, &vm.masses))
}

pub fn l2_norm(vm: &VertexMeasure, u: &[f64]) -> Result<f64> {
    Ok(l2_inner(vm, u, u)?.sqrt())
}
