//! Metric graph approximations `Gamma_m`: every edge of `V_m` becomes an
//! interval of length `l_e` carrying `s` interior nodes. Functions are
//! continuous and piecewise linear between nodes.
//!
//! With energy `E_Gamma(f) = sum_e w_e l_e int (f_e')^2` (`w_e` the graph
//! conductance, i.e. `c(0; .,.) r_w^{-1}`), a piecewise linear function is a
//! graph function on the subdivided graph whose segments have conductance
//! `w_e l_e / h`, `h = l_e/(s+1)`. Assembly therefore reuses the graph form.

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::forms::{self, AssembledForm, FormCoefficients};
use crate::harmonic_structure::{check_len, Edge, Fractal, GraphForm};
use crate::measures::{self, HarmonicIntegrator, VertexMeasure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricEdge {
    /// Initial vertex `i(e)`.
    pub p: usize,
    /// Terminal vertex `j(e)`.
    pub q: usize,
    pub length: f64,
    /// Graph conductance of the edge, `c(0; .,.) / r_w`.
    pub weight: f64,
    pub cell: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct MetricGraph {
    pub level: usize,
    pub num_vertices: usize,
    pub edges: Vec<MetricEdge>,
    pub subdiv: usize,
}

impl MetricGraph {
    /// `Gamma_m` with unit edge lengths and `subdiv` interior nodes per edge.
    pub fn new(fractal: &Fractal, m: usize, subdiv: usize) -> Result<Self> {
        let form = fractal.graph_form(m)?;
        Ok(Self::from_form(&form, subdiv))
    }

    pub fn from_form(form: &GraphForm, subdiv: usize) -> Self {
        let edges = form
            .edges
            .iter()
            .map(|e| MetricEdge { p: e.p, q: e.q, length: 1.0, weight: e.conductance, cell: e.cell })
            .collect();
        MetricGraph { level: form.level, num_vertices: form.num_vertices, edges, subdiv }
    }

    pub fn with_lengths(mut self, lengths: &[f64]) -> Result<Self> {
        check_len(self.edges.len(), lengths.len())?;
        if lengths.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidArgument("edge lengths must be positive".into()));
        }
        for (e, &l) in self.edges.iter_mut().zip(lengths) {
            e.length = l;
        }
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_vertices + self.edges.len() * self.subdiv
    }

    /// Node id of the `k`-th point along edge `e`, `k = 0..=s+1`.
    pub fn node(&self, e: usize, k: usize) -> usize {
        let edge = &self.edges[e];
        if k == 0 {
            edge.p
        } else if k == self.subdiv + 1 {
            edge.q
        } else {
            self.num_vertices + e * self.subdiv + (k - 1)
        }
    }

    /// Distance from `i(e)` of the `k`-th point along edge `e`.
    pub fn offset(&self, e: usize, k: usize) -> f64 {
        self.edges[e].length * k as f64 / (self.subdiv + 1) as f64
    }

    /// `(edge, offset)` for every interior node, in node order.
    pub fn interior_nodes(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.edges.len() * self.subdiv);
        for e in 0..self.edges.len() {
            for k in 1..=self.subdiv {
                out.push((self.node(e, k), e, self.offset(e, k)));
            }
        }
        out
    }

    fn segment_len(&self, e: usize) -> f64 {
        self.edges[e].length / (self.subdiv + 1) as f64
    }

    /// The subdivided graph; its energy equals `E_Gamma` on node-wise linear functions.
    pub fn segment_form(&self) -> GraphForm {
        let mut edges = Vec::with_capacity(self.edges.len() * (self.subdiv + 1));
        for (i, e) in self.edges.iter().enumerate() {
            let cond = e.weight * e.length / self.segment_len(i);
            for k in 0..=self.subdiv {
                let (a, b) = (self.node(i, k), self.node(i, k + 1));
                edges.push(Edge { p: a.min(b), q: a.max(b), conductance: cond, cell: e.cell });
            }
        }
        GraphForm { level: self.level, num_vertices: self.num_nodes(), edges }
    }

    /// Edge-wise linear interpolation of vertex values.
    pub fn lift(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.num_vertices, v.len())?;
        let mut out = v.to_vec();
        out.resize(self.num_nodes(), 0.0);
        let s = (self.subdiv + 1) as f64;
        for (i, e) in self.edges.iter().enumerate() {
            for k in 1..=self.subdiv {
                let t = k as f64 / s;
                out[self.node(i, k)] = (1.0 - t) * v[e.p] + t * v[e.q];
            }
        }
        Ok(out)
    }

    /// `H_Gamma`: keep vertex values, make every edge linear.
    pub fn el_projection(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len(self.num_nodes(), f.len())?;
        self.lift(&f[..self.num_vertices])
    }

    pub fn energy(&self, f: &[f64]) -> Result<f64> {
        check_len(self.num_nodes(), f.len())?;
        crate::harmonic_structure::energy(&self.segment_form(), f)
    }

    /// `int psi_{e,m} dmu` for every edge, with
    /// `psi_{e,m} = psi_{i(e)}/deg(i(e)) + psi_{j(e)}/deg(j(e))`.
    pub fn edge_masses(&self, vm: &VertexMeasure) -> Result<Vec<f64>> {
        check_len(self.num_vertices, vm.masses.len())?;
        let mut deg = vec![0usize; self.num_vertices];
        for e in &self.edges {
            deg[e.p] += 1;
            deg[e.q] += 1;
        }
        Ok(self
            .edges
            .iter()
            .map(|e| vm.masses[e.p] / deg[e.p] as f64 + vm.masses[e.q] / deg[e.q] as f64)
            .collect())
    }

    /// Lumped node masses of `mu_Gamma` (uniform density on each edge):
    /// every segment gives half its mass to each end node.
    pub fn node_masses(&self, vm: &VertexMeasure) -> Result<Vec<f64>> {
        let em = self.edge_masses(vm)?;
        let mut out = vec![0.0; self.num_nodes()];
        let share = 0.5 / (self.subdiv + 1) as f64;
        for (i, m) in em.iter().enumerate() {
            for k in 0..=self.subdiv {
                out[self.node(i, k)] += m * share;
                out[self.node(i, k + 1)] += m * share;
            }
        }
        Ok(out)
    }

    /// Per-edge drift constants `b_e` (slope units along `i(e) -> j(e)`)
    /// from a graph field: `b_e = -v(p, q) / l_e`.
    pub fn edge_drift(&self, v: &VectorField) -> Result<Vec<f64>> {
        check_len(self.edges.len(), v.values.len())?;
        Ok(self.edges.iter().zip(&v.values).map(|(e, x)| -x / e.length).collect())
    }

    /// Graph field on the segment graph realising the edge drifts `b_e`.
    fn segment_field(&self, b_edge: &[f64]) -> VectorField {
        let mut values = Vec::with_capacity(self.edges.len() * (self.subdiv + 1));
        for (i, be) in b_edge.iter().enumerate() {
            let h = self.segment_len(i);
            for k in 0..=self.subdiv {
                let (a, b) = (self.node(i, k), self.node(i, k + 1));
                values.push(if a < b { -h * be } else { h * be });
            }
        }
        VectorField { level: self.level, values }
    }

    /// Assembles `Q` on `Gamma_m` from graph-level coefficients: `a`, `c`
    /// interpolated linearly along edges, drifts constant per edge.
    pub fn assemble(&self, fractal: &Fractal, integ: &HarmonicIntegrator, coeffs: &FormCoefficients) -> Result<AssembledForm> {
        let m = self.level;
        let form = fractal.graph_form(m)?;
        check_len(form.edges.len(), self.edges.len())?;
        let vm = measures::vertex_measure(fractal, integ, m)?;
        let a = self.lift(&coeffs.a.at_level(fractal, m)?)?;
        let c = self.lift(&coeffs.c.at_level(fractal, m)?)?;
        let b = self.edge_drift(&coeffs.b.realize(fractal, &form)?)?;
        let b_hat = self.edge_drift(&coeffs.b_hat.realize(fractal, &form)?)?;
        self.assemble_nodes(&vm, a, c, &b, &b_hat, coeffs.lambda, coeffs.big_lambda)
    }

    /// Assembly from node values of `a`, `c` and per-edge drift constants.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble_nodes(
        &self,
        vm: &VertexMeasure,
        a: Vec<f64>,
        c: Vec<f64>,
        b_edge: &[f64],
        b_hat_edge: &[f64],
        lambda: f64,
        big_lambda: f64,
    ) -> Result<AssembledForm> {
        check_len(self.edges.len(), b_edge.len())?;
        check_len(self.edges.len(), b_hat_edge.len())?;
        let nodes = VertexMeasure { level: self.level, masses: self.node_masses(vm)? };
        forms::assemble_from_parts(
            self.segment_form(),
            nodes,
            a,
            c,
            self.segment_field(b_edge),
            self.segment_field(b_hat_edge),
            lambda,
            big_lambda,
        )
    }

    /// `Phi_m` on `Gamma_m`: on each edge the constant
    /// `<f, psi_{e,m}> / int psi_{e,m}`, stored as mass-weighted node values
    /// so that lumped inner products with node-wise linear functions are exact.
    pub fn phi(&self, fractal: &Fractal, integ: &HarmonicIntegrator, f: &[f64], big: usize) -> Result<Vec<f64>> {
        let m = self.level;
        let vm = measures::vertex_measure(fractal, integ, m)?;
        let tested = fractal.extension_transpose(&integ.mass_apply(fractal, f, big)?, big, m)?;
        let mut deg = vec![0usize; self.num_vertices];
        for e in &self.edges {
            deg[e.p] += 1;
            deg[e.q] += 1;
        }
        let em = self.edge_masses(&vm)?;
        let edge_val: Vec<f64> = self
            .edges
            .iter()
            .zip(&em)
            .map(|(e, m)| (tested[e.p] / deg[e.p] as f64 + tested[e.q] / deg[e.q] as f64) / m)
            .collect();
        let mut acc = vec![0.0; self.num_nodes()];
        let mut wsum = vec![0.0; self.num_nodes()];
        let share = 0.5 / (self.subdiv + 1) as f64;
        for (i, (v, m)) in edge_val.iter().zip(&em).enumerate() {
            for k in 0..=self.subdiv {
                for node in [self.node(i, k), self.node(i, k + 1)] {
                    acc[node] += v * m * share;
                    wsum[node] += m * share;
                }
            }
        }
        Ok(acc.iter().zip(&wsum).map(|(a, w)| a / w).collect())
    }

    /// `E_Gamma(fg - H_Gamma(fg))` for edge-wise linear `f`, `g` given on
    /// `V_m`: `(1/3) sum_e w_e l_e^4 (f_e' g_e')^2`.
    pub fn product_bump_energy(&self, f: &[f64], g: &[f64]) -> Result<f64> {
        check_len(self.num_vertices, f.len())?;
        check_len(self.num_vertices, g.len())?;
        Ok(self
            .edges
            .iter()
            .map(|e| {
                let fs = (f[e.q] - f[e.p]) / e.length;
                let gs = (g[e.q] - g[e.p]) / e.length;
                e.weight * e.length.powi(4) * (fs * gs).powi(2) / 3.0
            })
            .sum())
    }
}
