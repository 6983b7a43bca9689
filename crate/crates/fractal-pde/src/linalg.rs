//! Sparse/dense linear algebra glue: CSR products, a dense LU path for small
//! systems and preconditioned (ILU(0) or Jacobi) BiCGSTAB for large ones.

use nalgebra::{DMatrix, DVector};
use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

/// Systems up to this many unknowns are factorised densely.
pub const DENSE_LIMIT: usize = 3000;
/// Relative residual target for the iterative path (or the rounding floor
/// `16 eps || |A| |x| ||` when that is larger).
pub const ITERATIVE_TOL: f64 = 1e-12;

pub type Csr = CsMat<f64>;

pub fn csr_from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Csr {
    let mut t = TriMat::with_capacity((n, n), triplets.len());
    for &(i, j, v) in triplets {
        t.add_triplet(i, j, v);
    }
    t.to_csr()
}

pub fn diag_csr(d: &[f64]) -> Csr {
    let trip: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
    csr_from_triplets(d.len(), &trip)
}

pub fn matvec(a: &Csr, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.rows()];
    matvec_into(a, x, &mut y);
    y
}

pub fn matvec_into(a: &Csr, x: &[f64], y: &mut [f64]) {
    debug_assert!(a.is_csr());
    let indptr = a.indptr();
    let ind = a.indices();
    let data = a.data();
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in indptr.outer_inds_sz(i) {
            s += data[k] * x[ind[k]];
        }
        *yi = s;
    }
}

/// `a*x + b*y` for sparse matrices of equal shape.
pub fn lin_comb(a: f64, x: &Csr, b: f64, y: &Csr) -> Csr {
    let xs = x.map(|v| a * v);
    let ys = y.map(|v| b * v);
    &xs + &ys
}

pub fn to_dense(a: &Csr) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.rows(), a.cols());
    for (v, (i, j)) in a.iter() {
        m[(i, j)] += *v;
    }
    m
}

pub fn diagonal(a: &Csr) -> Vec<f64> {
    let mut d = vec![0.0; a.rows()];
    for (v, (i, j)) in a.iter() {
        if i == j {
            d[i] += *v;
        }
    }
    d
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn weighted_dot(x: &[f64], y: &[f64], w: &[f64]) -> f64 {
    x.iter().zip(y).zip(w).map(|((a, b), c)| a * b * c).sum()
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub dense_limit: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { dense_limit: DENSE_LIMIT, tol: ITERATIVE_TOL, max_iter: 20_000, preconditioner: PreconditionerKind::Ilu0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreconditionerKind {
    Jacobi,
    Ilu0,
}

/// Incomplete LU factorisation with the sparsity pattern of `A`.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: Csr,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        let mut lu = a.to_csr();
        let n = lu.rows();
        let indptr: Vec<usize> = lu.indptr().raw_storage().to_vec();
        let ind = lu.indices().to_vec();
        let data = lu.data_mut();
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in indptr[i]..indptr[i + 1] {
                if ind[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::SolverFailure(format!("ILU(0): row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in indptr[i]..indptr[i + 1] {
                pos[ind[k]] = k;
            }
            for kk in indptr[i]..indptr[i + 1] {
                let k = ind[kk];
                if k >= i {
                    break;
                }
                let pivot = data[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(Error::SolverFailure("ILU(0): zero pivot".into()));
                }
                let lik = data[kk] / pivot;
                data[kk] = lik;
                for jj in diag_pos[k] + 1..indptr[k + 1] {
                    let p = pos[ind[jj]];
                    if p != usize::MAX {
                        data[p] -= lik * data[jj];
                    }
                }
            }
            for k in indptr[i]..indptr[i + 1] {
                pos[ind[k]] = usize::MAX;
            }
            if data[diag_pos[i]] == 0.0 {
                return Err(Error::SolverFailure("ILU(0): zero pivot".into()));
            }
        }
        Ok(Ilu0 { lu, diag_pos })
    }

    /// `z = (LU)^{-1} r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let indptr = self.lu.indptr();
        let ind = self.lu.indices();
        let data = self.lu.data();
        let n = r.len();
        for i in 0..n {
            let mut s = r[i];
            for k in indptr.outer_inds_sz(i) {
                if k >= self.diag_pos[i] {
                    break;
                }
                s -= data[k] * z[ind[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag_pos[i] + 1..indptr.outer_inds_sz(i).end {
                s -= data[k] * z[ind[k]];
            }
            z[i] = s / data[self.diag_pos[i]];
        }
    }
}

#[derive(Debug, Clone)]
pub enum Preconditioner {
    Jacobi(Vec<f64>),
    Ilu0(Ilu0),
}

impl Preconditioner {
    pub fn new(a: &Csr, kind: PreconditionerKind) -> Result<Self> {
        match kind {
            PreconditionerKind::Jacobi => {
                let d = diagonal(a);
                if d.iter().any(|v| *v == 0.0) {
                    return Err(Error::SolverFailure("zero diagonal entry, Jacobi preconditioner undefined".into()));
                }
                Ok(Preconditioner::Jacobi(d.iter().map(|v| 1.0 / v).collect()))
            }
            PreconditionerKind::Ilu0 => Ok(Preconditioner::Ilu0(Ilu0::new(a)?)),
        }
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Preconditioner::Jacobi(d) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(d) {
                    *zi = ri * di;
                }
            }
            Preconditioner::Ilu0(f) => f.apply(r, z),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverKind {
    DenseLu,
    Bicgstab,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub kind: SolverKind,
}

/// A prepared solver for `A x = b` with a fixed matrix.
pub enum LinearSolver {
    Dense { lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn> },
    Iterative { a: Csr, precond: Preconditioner, opts: SolverOptions },
}

impl LinearSolver {
    pub fn new(a: &Csr, opts: SolverOptions) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: a.cols() });
        }
        if n <= opts.dense_limit {
            let lu = to_dense(a).lu();
            // reject numerically singular matrices early
            let u = lu.u();
            let scale = u.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tiny = u.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if !(tiny > scale * 1e-14) {
                return Err(Error::SolverFailure("matrix is singular to working precision".into()));
            }
            Ok(LinearSolver::Dense { lu })
        } else {
            let precond = match Preconditioner::new(a, opts.preconditioner) {
                Ok(p) => p,
                Err(_) => Preconditioner::new(a, PreconditionerKind::Jacobi)?,
            };
            Ok(LinearSolver::Iterative { a: a.to_csr(), precond, opts })
        }
    }

    pub fn kind(&self) -> SolverKind {
        match self {
            LinearSolver::Dense { .. } => SolverKind::DenseLu,
            LinearSolver::Iterative { .. } => SolverKind::Bicgstab,
        }
    }

    pub fn solve(&self, b: &[f64], x0: Option<&[f64]>) -> Result<SolveReport> {
        match self {
            LinearSolver::Dense { lu } => {
                let rhs = DVector::from_column_slice(b);
                let x = lu
                    .solve(&rhs)
                    .ok_or_else(|| Error::SolverFailure("LU solve failed".into()))?;
                Ok(SolveReport { x: x.as_slice().to_vec(), iterations: 1, relative_residual: 0.0, kind: SolverKind::DenseLu })
            }
            LinearSolver::Iterative { a, precond, opts } => bicgstab(a, b, x0, precond, opts),
        }
    }
}

/// `16 eps || |A| |x| ||`: residuals below this are rounding noise.
fn rounding_floor(a: &Csr, x: &[f64]) -> f64 {
    let indptr = a.indptr();
    let ind = a.indices();
    let data = a.data();
    let mut s = 0.0;
    for i in 0..a.rows() {
        let mut row = 0.0;
        for k in indptr.outer_inds_sz(i) {
            row += (data[k] * x[ind[k]]).abs();
        }
        s += row * row;
    }
    16.0 * f64::EPSILON * s.sqrt()
}

/// Inner iterations between recomputations of the true residual.
const RESTART: usize = 500;

/// Right-preconditioned BiCGSTAB. Convergence is judged on the true residual.
pub fn bicgstab(a: &Csr, b: &[f64], x0: Option<&[f64]>, precond: &Preconditioner, opts: &SolverOptions) -> Result<SolveReport> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok(SolveReport { x: vec![0.0; n], iterations: 0, relative_residual: 0.0, kind: SolverKind::Bicgstab });
    }
    let target = opts.tol * bnorm;
    let mut ax = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut iter = 0;
    let mut best = f64::INFINITY;
    while iter < opts.max_iter {
        // (re)start from the true residual
        matvec_into(a, &x, &mut ax);
        let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let rn = norm2(&r);
        best = best.min(rn);
        let goal = target.max(rounding_floor(a, &x));
        if rn <= goal {
            return Ok(SolveReport { x, iterations: iter, relative_residual: rn / bnorm, kind: SolverKind::Bicgstab });
        }
        let r_hat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        loop {
            iter += 1;
            if iter >= opts.max_iter {
                break;
            }
            let rho_new = dot(&r_hat, &r);
            if rho_new.abs() < 1e-300 || omega == 0.0 {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            precond.apply(&p, &mut y);
            matvec_into(a, &y, &mut v);
            let denom = dot(&r_hat, &v);
            if denom.abs() < 1e-300 {
                break;
            }
            alpha = rho / denom;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm2(&s) <= 0.1 * goal {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                break;
            }
            precond.apply(&s, &mut z);
            matvec_into(a, &z, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm2(&r) <= 0.1 * goal || iter % RESTART == 0 {
                break;
            }
        }
    }
    Err(Error::SolverFailure(format!(
        "BiCGSTAB did not reach relative residual {:.1e} in {} iterations (best {:.3e})",
        opts.tol,
        opts.max_iter,
        best / bnorm
    )))
}

/// Conjugate gradients with Jacobi preconditioning for SPD systems.
pub fn conjugate_gradient(a: &Csr, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let inv_diag: Vec<f64> = diagonal(a).iter().map(|d| 1.0 / d).collect();
    let bnorm = norm2(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..max_iter {
        matvec_into(a, &p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm2(&r) <= tol * bnorm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = inv_diag[i] * r[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverFailure(format!("CG did not converge in {max_iter} iterations")))
}

/// Largest eigenvalue of a symmetric dense matrix.
pub fn max_symmetric_eigenvalue(m: DMatrix<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(m);
    eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag(n: usize, drift: f64) -> Csr {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + 1e-3));
            if i + 1 < n {
                t.push((i, i + 1, -1.0 + drift));
                t.push((i + 1, i, -1.0 - drift));
            }
        }
        csr_from_triplets(n, &t)
    }

    #[test]
    fn bicgstab_agrees_with_dense_lu() {
        let a = tridiag(400, 0.3);
        let b: Vec<f64> = (0..400).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let dense = LinearSolver::new(&a, SolverOptions::default()).unwrap().solve(&b, None).unwrap();
        let opts = SolverOptions { dense_limit: 0, ..Default::default() };
        let it = LinearSolver::new(&a, opts).unwrap().solve(&b, None).unwrap();
        assert_eq!(it.kind, SolverKind::Bicgstab);
        let err = dense.x.iter().zip(&it.x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-8, "err {err}");
        assert!(it.relative_residual <= 1e-12);
    }

    #[test]
    fn cg_solves_spd() {
        let a = tridiag(200, 0.0);
        let b = vec![1.0; 200];
        let x = conjugate_gradient(&a, &b, 1e-13, 10_000).unwrap();
        let r: Vec<f64> = matvec(&a, &x).iter().zip(&b).map(|(u, v)| u - v).collect();
        assert!(norm2(&r) < 1e-10);
    }

    #[test]
    fn singular_matrix_rejected() {
        let a = csr_from_triplets(2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        assert!(LinearSolver::new(&a, SolverOptions::default()).is_err());
    }
}
