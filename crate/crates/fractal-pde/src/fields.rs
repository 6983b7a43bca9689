//! Discrete vector fields on `V_m`: antisymmetric edge functions with the
//! module structure of the space of 1-forms.

use crate::error::{Error, Result};
use crate::harmonic_structure::{check_len, Fractal, GraphForm, VertexFunction};

/// `v(p, q)` for every edge `(p, q)` of a level-m form (`p < q`);
/// `v(q, p) = -v(p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub level: usize,
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn zero(form: &GraphForm) -> Self {
        VectorField { level: form.level, values: vec![0.0; form.edges.len()] }
    }

    fn check(&self, form: &GraphForm) -> Result<()> {
        if self.level != form.level {
            return Err(Error::LevelMismatch { expected: form.level, got: self.level });
        }
        check_len(form.edges.len(), self.values.len())
    }

    pub fn add(&self, other: &VectorField) -> Result<VectorField> {
        if self.level != other.level {
            return Err(Error::LevelMismatch { expected: self.level, got: other.level });
        }
        check_len(self.values.len(), other.values.len())?;
        Ok(VectorField { level: self.level, values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect() })
    }

    pub fn scale(&self, s: f64) -> VectorField {
        VectorField { level: self.level, values: self.values.iter().map(|v| v * s).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// `d f(p, q) = f(p) - f(q)`.
pub fn gradient(form: &GraphForm, f: &[f64]) -> Result<VectorField> {
    check_len(form.num_vertices, f.len())?;
    Ok(VectorField { level: form.level, values: form.edges.iter().map(|e| f[e.p] - f[e.q]).collect() })
}

/// `(g . v)(p, q) = (g(p) + g(q))/2 * v(p, q)`.
pub fn act(form: &GraphForm, g: &[f64], v: &VectorField) -> Result<VectorField> {
    v.check(form)?;
    check_len(form.num_vertices, g.len())?;
    Ok(VectorField {
        level: v.level,
        values: form.edges.iter().zip(&v.values).map(|(e, x)| 0.5 * (g[e.p] + g[e.q]) * x).collect(),
    })
}

/// `<v, w> = 1/2 sum_p sum_q c(p,q) v(p,q) w(p,q)`.
pub fn inner(form: &GraphForm, v: &VectorField, w: &VectorField) -> Result<f64> {
    v.check(form)?;
    w.check(form)?;
    Ok(form.edges.iter().zip(v.values.iter().zip(&w.values)).map(|(e, (a, b))| e.conductance * a * b).sum())
}

pub fn norm(form: &GraphForm, v: &VectorField) -> Result<f64> {
    Ok(inner(form, v, v)?.sqrt())
}

/// `b = sum_i g_i . d f_i` with `g_i`, `f_i` given at some level `n_i`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SymbolicField {
    pub terms: Vec<(VertexFunction, VertexFunction)>,
}

impl SymbolicField {
    pub fn new(terms: Vec<(VertexFunction, VertexFunction)>) -> Self {
        SymbolicField { terms }
    }

    pub fn single(g: VertexFunction, f: VertexFunction) -> Self {
        SymbolicField { terms: vec![(g, f)] }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Highest level among the `g_i`, `f_i`.
    pub fn level(&self) -> usize {
        self.terms.iter().map(|(g, f)| g.level.max(f.level)).max().unwrap_or(0)
    }

    /// Adds the terms of `other` with `g_i` scaled by `s`.
    pub fn plus_scaled(&self, other: &SymbolicField, s: f64) -> SymbolicField {
        let mut terms = self.terms.clone();
        for (g, f) in &other.terms {
            let gs = VertexFunction::new(g.level, g.values.iter().map(|x| x * s).collect());
            terms.push((gs, f.clone()));
        }
        SymbolicField { terms }
    }

    /// `b^(m) = sum_i g_i . d f_i` with `g_i`, `f_i` extended harmonically to `V_m`.
    pub fn realize(&self, fractal: &Fractal, form: &GraphForm) -> Result<VectorField> {
        let m = form.level;
        let mut out = VectorField::zero(form);
        for (g, f) in &self.terms {
            if g.level > m || f.level > m {
                return Err(Error::LevelMismatch { expected: m, got: g.level.max(f.level) });
            }
            let gm = g.at_level(fractal, m)?;
            let fm = f.at_level(fractal, m)?;
            let term = act(form, &gm, &gradient(form, &fm)?)?;
            out = out.add(&term)?;
        }
        Ok(out)
    }
}

/// The field equal to `d h_alpha` on the edges inside each level-n cell
/// `alpha`, where every `h_alpha` is given on `V_n`.
pub fn restrict_cellwise(fractal: &Fractal, form: &GraphForm, n: usize, h: &[VertexFunction]) -> Result<VectorField> {
    let m = form.level;
    if n > m {
        return Err(Error::LevelMismatch { expected: m, got: n });
    }
    check_len(fractal.cells.num_cells(n), h.len())?;
    let ratio = fractal.n_maps().pow((m - n) as u32);
    let mut ext = Vec::with_capacity(h.len());
    for ha in h {
        if ha.level != n {
            return Err(Error::LevelMismatch { expected: n, got: ha.level });
        }
        ext.push(ha.at_level(fractal, m)?);
    }
    let mut values = Vec::with_capacity(form.edges.len());
    for e in &form.edges {
        let cell = e.cell.ok_or_else(|| Error::InvalidArgument("form edges carry no cell owner".into()))?;
        let u = &ext[cell / ratio];
        values.push(u[e.p] - u[e.q]);
    }
    Ok(VectorField { level: m, values })
}

/// `sup_p |f(p)|` times the field norm; the bound `||f.v|| <= sup|f| ||v||`.
pub fn action_bound(form: &GraphForm, f: &[f64], v: &VectorField) -> Result<f64> {
    Ok(crate::linalg::max_abs(f) * norm(form, v)?)
}
