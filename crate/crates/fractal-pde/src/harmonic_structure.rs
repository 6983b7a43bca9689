//! Regular harmonic structures, the graph forms `E_{V_m}`, traces,
//! effective resistance and harmonic extension.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::cell_structure::{CellStructure, SelfSimilarStructure};
use crate::error::{Error, Result};
use crate::linalg::{self, Csr};

/// Tolerance for the trace compatibility condition.
pub const COMPATIBILITY_TOL: f64 = 1e-10;

/// Base form `E_0` on `V_0` together with renormalisation factors `r_j`.
#[derive(Debug, Clone)]
pub struct HarmonicStructure {
    ss: SelfSimilarStructure,
    base: DMatrix<f64>,
    r: Vec<f64>,
    /// Harmonic values at the new `V_1` points from values on `V_0`.
    interior_ext: DMatrix<f64>,
    /// `A_j`: values on `F_j(V_0)` from values on `V_0`.
    ext: Vec<DMatrix<f64>>,
}

fn laplacian_from_conductance(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let mut l = -c.clone();
    for i in 0..n {
        l[(i, i)] = 0.0;
        let s: f64 = (0..n).filter(|&j| j != i).map(|j| c[(i, j)]).sum();
        l[(i, i)] = s;
    }
    l
}

fn conductance_from_laplacian(l: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = -l.clone();
    for i in 0..l.nrows() {
        c[(i, i)] = 0.0;
    }
    c
}

/// Schur complement of a Laplacian onto the index set `keep`.
fn schur(l: &DMatrix<f64>, keep: &[usize]) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let mut is_kept = vec![false; n];
    for &k in keep {
        if k >= n {
            return Err(Error::InvalidArgument(format!("vertex {k} outside the form")));
        }
        is_kept[k] = true;
    }
    let elim: Vec<usize> = (0..n).filter(|&i| !is_kept[i]).collect();
    let lbb = l.select_rows(keep).select_columns(keep);
    if elim.is_empty() {
        return Ok(lbb);
    }
    let lii = l.select_rows(&elim).select_columns(&elim);
    let lib = l.select_rows(&elim).select_columns(keep);
    let lbi = l.select_rows(keep).select_columns(&elim);
    let sol = lii
        .lu()
        .solve(&lib)
        .ok_or_else(|| Error::SolverFailure("interior block singular in trace".into()))?;
    Ok(lbb - lbi * sol)
}

fn level_one_laplacian(ss: &SelfSimilarStructure, base: &DMatrix<f64>, r: &[f64]) -> DMatrix<f64> {
    let b = ss.boundary_size();
    let n1 = ss.level_one_size();
    let mut c = DMatrix::zeros(n1, n1);
    for j in 0..ss.n_maps() {
        for a in 0..b {
            for bb in (a + 1)..b {
                let w = base[(a, bb)] / r[j];
                let (p, q) = (ss.level_one_vertex(j, a), ss.level_one_vertex(j, bb));
                c[(p, q)] += w;
                c[(q, p)] += w;
            }
        }
    }
    laplacian_from_conductance(&c)
}

impl HarmonicStructure {
    /// Builds and validates a regular harmonic structure. When `r` is `None`
    /// a uniform factor is derived from the trace of the level-1 form.
    pub fn new(ss: SelfSimilarStructure, base: DMatrix<f64>, r: Option<Vec<f64>>) -> Result<Self> {
        let b = ss.boundary_size();
        if base.nrows() != b || base.ncols() != b {
            return Err(Error::DimensionMismatch { expected: b, got: base.nrows() });
        }
        for i in 0..b {
            for j in 0..b {
                let (x, y) = (base[(i, j)], base[(j, i)]);
                if i != j && (x < 0.0 || (x - y).abs() > 1e-14 * x.abs().max(1.0)) {
                    return Err(Error::InvalidHarmonicStructure("base conductances must be symmetric and non-negative".into()));
                }
            }
        }
        let mut base = base;
        for i in 0..b {
            base[(i, i)] = 0.0;
        }
        if !connected(&base) {
            return Err(Error::InvalidHarmonicStructure("base form is not irreducible".into()));
        }
        let r = match r {
            Some(r) => r,
            None => vec![uniform_renormalisation(&ss, &base)?; ss.n_maps()],
        };
        if r.len() != ss.n_maps() {
            return Err(Error::DimensionMismatch { expected: ss.n_maps(), got: r.len() });
        }
        if r.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(Error::InvalidHarmonicStructure("every r_j must lie in (0,1)".into()));
        }
        let l1 = level_one_laplacian(&ss, &base, &r);
        let boundary: Vec<usize> = (0..b).collect();
        let trace = schur(&l1, &boundary)?;
        let l0 = laplacian_from_conductance(&base);
        let scale = l0.amax();
        let deviation = (&trace - &l0).amax() / scale;
        if deviation > COMPATIBILITY_TOL {
            return Err(Error::Incompatible { deviation, tolerance: COMPATIBILITY_TOL });
        }
        let n1 = ss.level_one_size();
        let interior: Vec<usize> = (b..n1).collect();
        let interior_ext = if interior.is_empty() {
            DMatrix::zeros(0, b)
        } else {
            let lii = l1.select_rows(&interior).select_columns(&interior);
            let lib = l1.select_rows(&interior).select_columns(&boundary);
            -lii.lu().solve(&lib).ok_or_else(|| Error::SolverFailure("level-1 interior block singular".into()))?
        };
        let mut ext = Vec::with_capacity(ss.n_maps());
        for j in 0..ss.n_maps() {
            let mut a = DMatrix::zeros(b, b);
            for alpha in 0..b {
                let v = ss.level_one_vertex(j, alpha);
                if v < b {
                    a[(alpha, v)] = 1.0;
                } else {
                    a.row_mut(alpha).copy_from(&interior_ext.row(v - b));
                }
            }
            ext.push(a);
        }
        Ok(HarmonicStructure { ss, base, r, interior_ext, ext })
    }

    pub fn interval() -> Self {
        let base = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        Self::new(SelfSimilarStructure::interval(), base, Some(vec![0.5, 0.5])).expect("interval preset")
    }

    pub fn sierpinski_gasket() -> Self {
        let base = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        Self::new(SelfSimilarStructure::sierpinski_gasket(), base, Some(vec![0.6; 3])).expect("sg preset")
    }

    pub fn vicsek() -> Self {
        let base = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        Self::new(SelfSimilarStructure::vicsek(), base, Some(vec![1.0 / 3.0; 5])).expect("vicsek preset")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "interval" => Ok(Self::interval()),
            "sg" | "sierpinski" => Ok(Self::sierpinski_gasket()),
            "vicsek" => Ok(Self::vicsek()),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn structure(&self) -> &SelfSimilarStructure {
        &self.ss
    }

    /// Conductances `c(0; p, q)` on `V_0`.
    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    /// Level-1 extension matrix `A_j`.
    pub fn extension_matrix(&self, j: usize) -> &DMatrix<f64> {
        &self.ext[j]
    }

    pub fn interior_extension(&self) -> &DMatrix<f64> {
        &self.interior_ext
    }

    /// Resistance diameter of `V_0` under `E_0`.
    pub fn base_diameter(&self) -> f64 {
        let l0 = laplacian_from_conductance(&self.base);
        let r = resistance_matrix_dense(&l0).expect("base form is connected");
        r.max()
    }
}

fn connected(c: &DMatrix<f64>) -> bool {
    let n = c.nrows();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..n {
            if !seen[j] && c[(i, j)] > 0.0 {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Uniform `r` such that the trace of the level-1 form equals `E_0`.
fn uniform_renormalisation(ss: &SelfSimilarStructure, base: &DMatrix<f64>) -> Result<f64> {
    let l1 = level_one_laplacian(ss, base, &vec![1.0; ss.n_maps()]);
    let boundary: Vec<usize> = (0..ss.boundary_size()).collect();
    let t = schur(&l1, &boundary)?;
    let l0 = laplacian_from_conductance(base);
    // least-squares ratio, then a proportionality check
    let rho = t.dot(&l0) / l0.dot(&l0);
    let dev = (&t - &l0 * rho).amax() / l0.amax();
    if dev > COMPATIBILITY_TOL {
        return Err(Error::Incompatible { deviation: dev, tolerance: COMPATIBILITY_TOL });
    }
    Ok(rho)
}

/// Fixed point of the renormalisation map with uniform `r`, starting from
/// the complete graph. Returns the normalised base conductances and `r`.
pub fn renormalise(ss: &SelfSimilarStructure, max_iter: usize) -> Result<(DMatrix<f64>, f64)> {
    let b = ss.boundary_size();
    let mut c = DMatrix::from_fn(b, b, |i, j| if i == j { 0.0 } else { 1.0 });
    let total0: f64 = c.sum();
    let boundary: Vec<usize> = (0..b).collect();
    for _ in 0..max_iter {
        let l1 = level_one_laplacian(ss, &c, &vec![1.0; ss.n_maps()]);
        let t = conductance_from_laplacian(&schur(&l1, &boundary)?);
        let next = &t * (total0 / t.sum());
        let diff = (&next - &c).amax();
        c = next;
        if diff < 1e-14 {
            let rho = {
                let l1 = level_one_laplacian(ss, &c, &vec![1.0; ss.n_maps()]);
                let t = schur(&l1, &boundary)?;
                let l0 = laplacian_from_conductance(&c);
                t.dot(&l0) / l0.dot(&l0)
            };
            return Ok((c, rho));
        }
    }
    Err(Error::InvalidHarmonicStructure("renormalisation did not converge".into()))
}

/// One edge of a graph form. `p < q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub p: usize,
    pub q: usize,
    pub conductance: f64,
    /// Owning level-m cell, if the form came from the cell structure.
    pub cell: Option<usize>,
}

/// A Dirichlet form on a finite vertex set, stored as an edge list.
#[derive(Debug, Clone)]
pub struct GraphForm {
    pub level: usize,
    pub num_vertices: usize,
    pub edges: Vec<Edge>,
}

impl GraphForm {
    pub fn from_conductance_matrix(level: usize, c: &DMatrix<f64>, drop_below: f64) -> Self {
        let n = c.nrows();
        let scale = c.amax();
        let mut edges = Vec::new();
        for p in 0..n {
            for q in (p + 1)..n {
                let w = 0.5 * (c[(p, q)] + c[(q, p)]);
                if w.abs() > drop_below * scale {
                    edges.push(Edge { p, q, conductance: w, cell: None });
                }
            }
        }
        GraphForm { level, num_vertices: n, edges }
    }

    pub fn conductance_matrix(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.num_vertices, self.num_vertices);
        for e in &self.edges {
            c[(e.p, e.q)] += e.conductance;
            c[(e.q, e.p)] += e.conductance;
        }
        c
    }

    /// Positive semi-definite Laplacian `L` with `u^T L u = E(u)`.
    pub fn laplacian(&self) -> Csr {
        let mut t = Vec::with_capacity(4 * self.edges.len());
        for e in &self.edges {
            t.push((e.p, e.p, e.conductance));
            t.push((e.q, e.q, e.conductance));
            t.push((e.p, e.q, -e.conductance));
            t.push((e.q, e.p, -e.conductance));
        }
        linalg::csr_from_triplets(self.num_vertices, &t)
    }

    pub fn dense_laplacian(&self) -> DMatrix<f64> {
        laplacian_from_conductance(&self.conductance_matrix())
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_vertices];
        for e in &self.edges {
            d[e.p] += 1;
            d[e.q] += 1;
        }
        d
    }

    pub fn neighbours(&self) -> Vec<Vec<(usize, f64)>> {
        let mut nb = vec![Vec::new(); self.num_vertices];
        for e in &self.edges {
            nb[e.p].push((e.q, e.conductance));
            nb[e.q].push((e.p, e.conductance));
        }
        nb
    }
}

/// `E(u) = 1/2 sum_p sum_q c(p,q) (u(p) - u(q))^2`.
pub fn energy(form: &GraphForm, u: &[f64]) -> Result<f64> {
    energy_pair(form, u, u)
}

pub fn energy_pair(form: &GraphForm, u: &[f64], v: &[f64]) -> Result<f64> {
    check_len(form.num_vertices, u.len())?;
    check_len(form.num_vertices, v.len())?;
    Ok(form
        .edges
        .iter()
        .map(|e| e.conductance * (u[e.p] - u[e.q]) * (v[e.p] - v[e.q]))
        .sum())
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// Energy measure `nu_f({p}) = 1/2 sum_q c(p,q) (f(p)-f(q))^2`.
pub fn energy_measure(form: &GraphForm, f: &[f64]) -> Result<Vec<f64>> {
    check_len(form.num_vertices, f.len())?;
    let mut nu = vec![0.0; form.num_vertices];
    for e in &form.edges {
        let w = 0.5 * e.conductance * (f[e.p] - f[e.q]).powi(2);
        nu[e.p] += w;
        nu[e.q] += w;
    }
    Ok(nu)
}

/// Trace of `form` onto `subset` (a Schur complement), relabelled in the given order.
pub fn trace_form(form: &GraphForm, subset: &[usize]) -> Result<GraphForm> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty vertex subset".into()));
    }
    let mut seen = vec![false; form.num_vertices];
    for &v in subset {
        if v >= form.num_vertices || seen[v] {
            return Err(Error::InvalidArgument(format!("vertex {v} invalid or repeated")));
        }
        seen[v] = true;
    }
    let s = schur(&form.dense_laplacian(), subset)?;
    Ok(GraphForm::from_conductance_matrix(form.level, &conductance_from_laplacian(&s), 1e-15))
}

/// All pairwise effective resistances of a small connected network.
fn resistance_matrix_dense(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if n == 1 {
        return Ok(DMatrix::zeros(1, 1));
    }
    let idx: Vec<usize> = (1..n).collect();
    let lg = l.select_rows(&idx).select_columns(&idx);
    let chol = lg
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("form is not connected".into()))?;
    let g = chol.inverse();
    let mut full = DMatrix::zeros(n, n);
    full.view_mut((1, 1), (n - 1, n - 1)).copy_from(&g);
    Ok(DMatrix::from_fn(n, n, |p, q| full[(p, p)] + full[(q, q)] - 2.0 * full[(p, q)]))
}

/// Effective resistance between two vertices of a connected form.
pub fn resistance(form: &GraphForm, p: usize, q: usize) -> Result<f64> {
    let n = form.num_vertices;
    if p >= n || q >= n {
        return Err(Error::InvalidArgument("vertex out of range".into()));
    }
    if p == q {
        return Ok(0.0);
    }
    if n == 2 {
        let c: f64 = form.edges.iter().map(|e| e.conductance).sum();
        return if c > 0.0 { Ok(1.0 / c) } else { Err(Error::InvalidArgument("form is not connected".into())) };
    }
    // ground at a vertex different from p: potential with unit current p -> q
    let ground = if p != 0 && q != 0 { 0 } else if p != 1 && q != 1 { 1 } else { 2 };
    let keep: Vec<usize> = (0..n).filter(|&i| i != ground).collect();
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in keep.iter().enumerate() {
        pos[i] = k;
    }
    let mut rhs = vec![0.0; n - 1];
    rhs[pos[p]] = 1.0;
    rhs[pos[q]] = -1.0;
    let x = if n <= linalg::DENSE_LIMIT {
        let lg = form.dense_laplacian().select_rows(&keep).select_columns(&keep);
        let chol = lg
            .cholesky()
            .ok_or_else(|| Error::InvalidArgument("form is not connected".into()))?;
        chol.solve(&DVector::from_vec(rhs)).as_slice().to_vec()
    } else {
        let l = form.laplacian();
        let mut trip = Vec::new();
        for (v, (i, j)) in l.iter() {
            if i != ground && j != ground {
                trip.push((pos[i], pos[j], *v));
            }
        }
        let lg = linalg::csr_from_triplets(n - 1, &trip);
        linalg::conjugate_gradient(&lg, &rhs, 1e-13, 100 * n)?
    };
    Ok(x[pos[p]] - x[pos[q]])
}

/// A function on `V_level`, indexed by nested vertex ids.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFunction {
    pub level: usize,
    pub values: Vec<f64>,
}

impl VertexFunction {
    pub fn new(level: usize, values: Vec<f64>) -> Self {
        VertexFunction { level, values }
    }

    /// A constant, represented on `V_0`.
    pub fn constant(boundary_size: usize, value: f64) -> Self {
        VertexFunction { level: 0, values: vec![value; boundary_size] }
    }

    /// Values on `V_m`: harmonic extension if `m >= level`, restriction otherwise.
    pub fn at_level(&self, fractal: &Fractal, m: usize) -> Result<Vec<f64>> {
        fractal.cells.check_level(self.level.max(m))?;
        check_len(fractal.cells.num_vertices(self.level), self.values.len())?;
        if m >= self.level {
            fractal.harmonic_extension(&self.values, self.level, m)
        } else {
            Ok(self.values[..fractal.cells.num_vertices(m)].to_vec())
        }
    }
}

/// A harmonic structure together with its cell hierarchy up to a fixed depth.
#[derive(Debug, Clone)]
pub struct Fractal {
    pub hs: HarmonicStructure,
    pub cells: CellStructure,
}

impl Fractal {
    pub fn new(hs: HarmonicStructure, max_level: usize) -> Result<Self> {
        let cells = CellStructure::new(hs.structure().clone(), max_level)?;
        Ok(Fractal { hs, cells })
    }

    pub fn preset(name: &str, max_level: usize) -> Result<Self> {
        Self::new(HarmonicStructure::preset(name)?, max_level)
    }

    pub fn max_level(&self) -> usize {
        self.cells.max_level()
    }

    pub fn num_vertices(&self, m: usize) -> usize {
        self.cells.num_vertices(m)
    }

    pub fn n_maps(&self) -> usize {
        self.hs.structure().n_maps()
    }

    pub fn boundary_size(&self) -> usize {
        self.hs.structure().boundary_size()
    }

    /// `r_w` for every level-m cell.
    pub fn cell_scales(&self, m: usize) -> Vec<f64> {
        let r = self.hs.r();
        let mut s = vec![1.0];
        for _ in 0..m {
            s = s.iter().flat_map(|&x| r.iter().map(move |&rj| x * rj)).collect();
        }
        s
    }

    /// `E_{V_m}(u) = sum_{|w|=m} r_w^{-1} E_0(u o F_w)`.
    pub fn graph_form(&self, m: usize) -> Result<GraphForm> {
        self.cells.check_level(m)?;
        let b = self.boundary_size();
        let base = self.hs.base();
        let scales = self.cell_scales(m);
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        for (c, rw) in scales.iter().enumerate() {
            let verts = self.cells.cell_vertices(m, c);
            for a in 0..b {
                for bb in (a + 1)..b {
                    let w = base[(a, bb)];
                    if w == 0.0 {
                        continue;
                    }
                    let (p, q) = (verts[a].min(verts[bb]), verts[a].max(verts[bb]));
                    match index.get(&(p, q)) {
                        Some(&k) => edges[k].conductance += w / rw,
                        None => {
                            index.insert((p, q), edges.len());
                            edges.push(Edge { p, q, conductance: w / rw, cell: Some(c) });
                        }
                    }
                }
            }
        }
        Ok(GraphForm { level: m, num_vertices: self.num_vertices(m), edges })
    }

    /// Harmonic extension of values on `V_n` to `V_m`, cell by cell.
    pub fn harmonic_extension(&self, u: &[f64], n: usize, m: usize) -> Result<Vec<f64>> {
        if n > m {
            return Err(Error::InvalidArgument(format!("cannot extend from level {n} down to {m}")));
        }
        self.cells.check_level(m)?;
        check_len(self.num_vertices(n), u.len())?;
        let e = self.hs.interior_extension();
        let b = self.boundary_size();
        let mut out = u.to_vec();
        out.resize(self.num_vertices(m), 0.0);
        let mut bv = vec![0.0; b];
        for k in n..m {
            for c in 0..self.cells.num_cells(k) {
                for (slot, &v) in bv.iter_mut().zip(self.cells.cell_vertices(k, c)) {
                    *slot = out[v];
                }
                for (i, &v) in self.cells.interior_vertices(k, c).iter().enumerate() {
                    out[v] = (0..b).map(|a| e[(i, a)] * bv[a]).sum();
                }
            }
        }
        Ok(out)
    }

    /// Transpose of the extension `V_n -> V_m`, mapping values on `V_m` to `V_n`.
    pub fn extension_transpose(&self, y: &[f64], m: usize, n: usize) -> Result<Vec<f64>> {
        if n > m {
            return Err(Error::InvalidArgument(format!("cannot restrict from level {m} up to {n}")));
        }
        self.cells.check_level(m)?;
        check_len(self.num_vertices(m), y.len())?;
        let e = self.hs.interior_extension();
        let b = self.boundary_size();
        let mut acc = y.to_vec();
        for k in (n..m).rev() {
            for c in 0..self.cells.num_cells(k) {
                let verts = self.cells.cell_vertices(k, c);
                for (i, &v) in self.cells.interior_vertices(k, c).iter().enumerate() {
                    let yi = acc[v];
                    for a in 0..b {
                        acc[verts[a]] += e[(i, a)] * yi;
                    }
                }
            }
        }
        acc.truncate(self.num_vertices(n));
        Ok(acc)
    }

    /// `H_n u`: restrict `u` on `V_big` to `V_n` and extend back.
    pub fn project(&self, u: &[f64], big: usize, n: usize) -> Result<Vec<f64>> {
        check_len(self.num_vertices(big), u.len())?;
        if n > big {
            return Err(Error::InvalidArgument("projection level above the function level".into()));
        }
        self.harmonic_extension(&u[..self.num_vertices(n)], n, big)
    }

    /// Upper bound `r_w diam_R(V_0)` for the resistance diameter of level-n cells.
    pub fn intrinsic_max_cell_diameter(&self, n: usize) -> f64 {
        let rmax = self.hs.r().iter().cloned().fold(0.0, f64::max);
        rmax.powi(n as i32) * self.hs.base_diameter()
    }

    /// Resistance diameter of a level-k cell, measured in `E_{V_m}` (`m >= k`).
    pub fn cell_diameter(&self, form: &GraphForm, k: usize, c: usize) -> Result<f64> {
        if k > form.level {
            return Err(Error::LevelMismatch { expected: form.level, got: k });
        }
        let verts = self.cells.cell_vertices(k, c);
        let mut d: f64 = 0.0;
        for a in 0..verts.len() {
            for b in (a + 1)..verts.len() {
                d = d.max(resistance(form, verts[a], verts[b])?);
            }
        }
        Ok(d)
    }

    /// `max_{|w|=k} diam_R(X_w)`, computed exactly from `E_{V_k}`.
    pub fn max_cell_diameter(&self, k: usize) -> Result<f64> {
        let form = self.graph_form(k)?;
        let n = form.num_vertices;
        if n > linalg::DENSE_LIMIT {
            return Err(Error::TooLarge { operation: "exact cell diameters", size: n, limit: linalg::DENSE_LIMIT });
        }
        let r = resistance_matrix_dense(&form.dense_laplacian())?;
        let mut d: f64 = 0.0;
        for c in 0..self.cells.num_cells(k) {
            let verts = self.cells.cell_vertices(k, c);
            for a in 0..verts.len() {
                for b in (a + 1)..verts.len() {
                    d = d.max(r[(verts[a], verts[b])]);
                }
            }
        }
        Ok(d)
    }

    /// Largest entrywise deviation between the trace of `E_{V_{m+1}}` onto
    /// `V_m` and `E_{V_m}`, relative to the largest conductance.
    pub fn compatibility_deviation(&self, m: usize) -> Result<f64> {
        let fine = self.graph_form(m + 1)?;
        let coarse = self.graph_form(m)?;
        let subset: Vec<usize> = (0..self.num_vertices(m)).collect();
        let t = trace_form(&fine, &subset)?.conductance_matrix();
        let c = coarse.conductance_matrix();
        Ok((&t - &c).amax() / c.amax())
    }
}

/// Checks the trace tower at level `m`, failing above the compatibility tolerance.
pub fn check_compatibility(fractal: &Fractal, m: usize) -> Result<f64> {
    let dev = fractal.compatibility_deviation(m)?;
    if dev > COMPATIBILITY_TOL {
        Err(Error::Incompatible { deviation: dev, tolerance: COMPATIBILITY_TOL })
    } else {
        Ok(dev)
    }
}
