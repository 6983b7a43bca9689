//! TOML problem descriptions.
//!
//! ```toml
//! preset = "sg"                      # or alphabet_size / boundary_size / gluing
//! seed = 7
//! a = 1.0
//! c = "constant:-1"
//! b = [{ g = 0.15, f = "coordinate" }]
//! f = "coordinate"
//! [measure]
//! weights = [0.2, 0.3, 0.5]
//! ```
//!
//! Function specs: a number, `"constant:v"`, `"coordinate"` (harmonic with
//! boundary values `alpha/(|V_0|-1)`), `"indicator:p"` / `"indicator:p@n"`,
//! `"random:n"` / `"random:n:lo:hi"` (seeded), or `{ level, values }`.

use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::cell_structure::{Gluing, SelfSimilarStructure};
use crate::error::{Error, Result};
use crate::experiments::Mode;
use crate::fields::SymbolicField;
use crate::forms::{FieldSpec, FormCoefficients, HardyPolicy};
use crate::harmonic_structure::{self, Fractal, HarmonicStructure, VertexFunction};
use crate::measures::SelfSimilarMeasure;
use crate::solvers::ParabolicOptions;

pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum FunctionSpec {
    Number(f64),
    Named(String),
    Table { level: usize, values: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
pub struct FieldTerm {
    pub g: FunctionSpec,
    pub f: FunctionSpec,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub levels: Option<Vec<usize>>,
    pub reference: Option<usize>,
    pub mode: Option<String>,
    pub subdiv: Option<usize>,
    pub equation: Option<String>,
    pub t_final: Option<f64>,
    pub steps: Option<usize>,
    pub theta: Option<f64>,
    pub richardson_tol: Option<f64>,
    /// Piecewise harmonic target solution for manufactured runs.
    pub manufactured: Option<FunctionSpec>,
    /// Single-space runs: fixed level, coefficient indices and perturbations.
    pub level: Option<usize>,
    pub ns: Option<Vec<usize>>,
    pub perturb_a: Option<f64>,
    pub perturb_b: Option<Vec<FieldTerm>>,
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: Option<String>,
    pub alphabet_size: Option<usize>,
    pub boundary_size: Option<usize>,
    pub gluing: Option<Vec<[usize; 4]>>,
    pub boundary_images: Option<Vec<[usize; 2]>>,
    pub r: Option<Vec<f64>>,
    pub c0: Option<Vec<(usize, usize, f64)>>,
    #[serde(default)]
    pub measure: MeasureConfig,
    pub a: Option<FunctionSpec>,
    pub c: Option<FunctionSpec>,
    pub b: Option<Vec<FieldTerm>>,
    pub b_hat: Option<Vec<FieldTerm>>,
    pub lambda: Option<f64>,
    #[serde(rename = "Lambda")]
    pub big_lambda: Option<f64>,
    #[serde(rename = "M")]
    pub m_param: Option<f64>,
    pub allow_shift: Option<bool>,
    pub f: Option<FunctionSpec>,
    pub u0: Option<FunctionSpec>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

/// Seeded generator used for all `random:` specs of one config.
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.random_range(lo..hi)).collect()
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn sampler(&self) -> Sampler {
        Sampler::new(self.seed())
    }

    pub fn structure(&self) -> Result<SelfSimilarStructure> {
        if let Some(name) = &self.preset {
            if self.alphabet_size.is_some() || self.gluing.is_some() {
                return Err(Error::Config("give either `preset` or an explicit structure, not both".into()));
            }
            return SelfSimilarStructure::preset(name);
        }
        let n = self.alphabet_size.ok_or_else(|| Error::Config("missing `alphabet_size` (or `preset`)".into()))?;
        let b = self.boundary_size.ok_or_else(|| Error::Config("missing `boundary_size`".into()))?;
        let gluing = self.gluing.as_ref().ok_or_else(|| Error::Config("missing `gluing`".into()))?;
        let gluing = gluing.iter().map(|g| Gluing::new(g[0], g[1], g[2], g[3])).collect();
        let images = self.boundary_images.as_ref().map(|v| v.iter().map(|p| (p[0], p[1])).collect());
        SelfSimilarStructure::new(n, b, gluing, images)
    }

    pub fn harmonic_structure(&self) -> Result<HarmonicStructure> {
        let ss = self.structure()?;
        let base = match &self.c0 {
            Some(entries) => {
                let b = ss.boundary_size();
                let mut m = DMatrix::zeros(b, b);
                for &(p, q, v) in entries {
                    if p >= b || q >= b {
                        return Err(Error::Config(format!("c0 entry ({p}, {q}) outside V_0 of size {b}")));
                    }
                    m[(p, q)] = v;
                    m[(q, p)] = v;
                }
                m
            }
            None => match &self.preset {
                Some(name) if self.r.is_none() => return HarmonicStructure::preset(name),
                Some(name) => HarmonicStructure::preset(name)?.base().clone(),
                None => {
                    let (base, r) = harmonic_structure::renormalise(&ss, 10_000)?;
                    let r = self.r.clone().unwrap_or_else(|| vec![r; ss.n_maps()]);
                    return HarmonicStructure::new(ss, base, Some(r));
                }
            },
        };
        HarmonicStructure::new(ss, base, self.r.clone())
    }

    pub fn fractal(&self, max_level: usize) -> Result<Fractal> {
        Fractal::new(self.harmonic_structure()?, max_level)
    }

    pub fn measure(&self, n_maps: usize) -> Result<SelfSimilarMeasure> {
        match &self.measure.weights {
            Some(w) => {
                if w.len() != n_maps {
                    return Err(Error::Config(format!("measure.weights has {} entries, expected {n_maps}", w.len())));
                }
                SelfSimilarMeasure::new(w.clone())
            }
            None => Ok(SelfSimilarMeasure::uniform(n_maps)),
        }
    }

    pub fn policy(&self) -> HardyPolicy {
        match self.m_param {
            Some(m) => HardyPolicy::Auto { at_least: m },
            None => HardyPolicy::default(),
        }
    }

    /// Coefficients; defaults are those of `FormCoefficients::standard`.
    pub fn coefficients(&self, fractal: &Fractal, sampler: &mut Sampler) -> Result<FormCoefficients> {
        let mut c = FormCoefficients::standard(fractal.boundary_size());
        if let Some(a) = &self.a {
            c.a = function(a, fractal, sampler)?;
        }
        if let Some(v) = &self.c {
            c.c = function(v, fractal, sampler)?;
        }
        if let Some(b) = &self.b {
            c.b = field(b, fractal, sampler)?;
        }
        if let Some(b) = &self.b_hat {
            c.b_hat = field(b, fractal, sampler)?;
        }
        if let Some(l) = self.lambda {
            c.lambda = l;
        }
        if let Some(l) = self.big_lambda {
            c.big_lambda = l;
        }
        Ok(c)
    }

    pub fn mode(&self, subdiv_override: Option<usize>) -> Result<Mode> {
        let subdiv = subdiv_override.or(self.experiment.subdiv).unwrap_or(1);
        match self.experiment.mode.as_deref() {
            None | Some("graph") => Ok(if subdiv_override.is_some() { Mode::Metric { subdiv } } else { Mode::Graph }),
            Some("metric") => Ok(Mode::Metric { subdiv }),
            Some(other) => Err(Error::Config(format!("unknown mode `{other}` (graph or metric)"))),
        }
    }

    pub fn parabolic_options(&self) -> ParabolicOptions {
        let d = ParabolicOptions::default();
        let e = &self.experiment;
        ParabolicOptions {
            t_final: e.t_final.unwrap_or(d.t_final),
            steps: e.steps.unwrap_or(d.steps),
            theta: e.theta.unwrap_or(d.theta),
            richardson_tol: e.richardson_tol,
            max_refinements: d.max_refinements,
        }
    }
}

/// Resolves a function spec to a vertex function.
pub fn function(spec: &FunctionSpec, fractal: &Fractal, sampler: &mut Sampler) -> Result<VertexFunction> {
    let b = fractal.boundary_size();
    match spec {
        FunctionSpec::Number(v) => Ok(VertexFunction::constant(b, *v)),
        FunctionSpec::Table { level, values } => {
            fractal.cells.check_level(*level)?;
            let n = fractal.num_vertices(*level);
            if values.len() != n {
                return Err(Error::Config(format!("level-{level} table needs {n} values, got {}", values.len())));
            }
            Ok(VertexFunction::new(*level, values.clone()))
        }
        FunctionSpec::Named(s) => named(s, fractal, sampler),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Config(format!("cannot parse {what} from `{s}`")))
}

fn named(s: &str, fractal: &Fractal, sampler: &mut Sampler) -> Result<VertexFunction> {
    let b = fractal.boundary_size();
    let (head, rest) = s.split_once(':').unwrap_or((s, ""));
    match head {
        "coordinate" => {
            let d = (b - 1).max(1) as f64;
            Ok(VertexFunction::new(0, (0..b).map(|a| a as f64 / d).collect()))
        }
        "constant" => Ok(VertexFunction::constant(b, parse_num(rest, "a constant")?)),
        "indicator" => {
            let (p, n) = match rest.split_once('@') {
                Some((p, n)) => (parse_num::<usize>(p, "a vertex")?, parse_num::<usize>(n, "a level")?),
                None => (parse_num::<usize>(rest, "a vertex")?, 0),
            };
            fractal.cells.check_level(n)?;
            let size = fractal.num_vertices(n);
            if p >= size {
                return Err(Error::Config(format!("vertex {p} not in V_{n} ({size} vertices)")));
            }
            let mut v = vec![0.0; size];
            v[p] = 1.0;
            Ok(VertexFunction::new(n, v))
        }
        "random" => {
            let parts: Vec<&str> = rest.split(':').collect();
            let n: usize = parse_num(parts[0], "a level")?;
            let (lo, hi) = match parts.len() {
                1 => (-1.0, 1.0),
                3 => (parse_num(parts[1], "a bound")?, parse_num(parts[2], "a bound")?),
                _ => return Err(Error::Config(format!("expected random:n or random:n:lo:hi, got `{s}`"))),
            };
            if !(lo < hi) {
                return Err(Error::Config(format!("empty range in `{s}`")));
            }
            fractal.cells.check_level(n)?;
            Ok(VertexFunction::new(n, sampler.uniform(lo, hi, fractal.num_vertices(n))))
        }
        _ => Err(Error::Config(format!("unknown function spec `{s}`"))),
    }
}

pub fn field(terms: &[FieldTerm], fractal: &Fractal, sampler: &mut Sampler) -> Result<FieldSpec> {
    if terms.is_empty() {
        return Ok(FieldSpec::Zero);
    }
    let mut out = Vec::with_capacity(terms.len());
    for t in terms {
        out.push((function(&t.g, fractal, sampler)?, function(&t.f, fractal, sampler)?));
    }
    Ok(FieldSpec::Symbolic(SymbolicField::new(out)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_preset_and_coefficients() {
        let cfg = Config::parse(
            r#"
            preset = "sg"
            seed = 3
            a = 1.5
            c = "constant:-2"
            b = [{ g = 0.1, f = "coordinate" }]
            lambda = 1.0
            Lambda = 2.0
            [measure]
            weights = [0.2, 0.3, 0.5]
            "#,
        )
        .unwrap();
        let f = cfg.fractal(2).unwrap();
        let mut s = cfg.sampler();
        let c = cfg.coefficients(&f, &mut s).unwrap();
        assert_eq!(c.a.values, vec![1.5; 3]);
        assert_eq!(c.c.values, vec![-2.0; 3]);
        assert!(matches!(c.b, FieldSpec::Symbolic(_)));
        assert_eq!(cfg.measure(3).unwrap().weights(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn explicit_structure_is_renormalised() {
        let cfg = Config::parse("alphabet_size = 3\nboundary_size = 3\ngluing = [[0,1,1,0],[0,2,2,0],[1,2,2,1]]\n").unwrap();
        let hs = cfg.harmonic_structure().unwrap();
        assert!(hs.r().iter().all(|r| (r - 0.6).abs() < 1e-10));
    }

    #[test]
    fn random_specs_are_seeded() {
        let cfg = Config::parse("preset = \"interval\"\nseed = 11\na = \"random:2:0.6:1.9\"\n").unwrap();
        let f = cfg.fractal(2).unwrap();
        let a1 = cfg.coefficients(&f, &mut cfg.sampler()).unwrap().a;
        let a2 = cfg.coefficients(&f, &mut cfg.sampler()).unwrap().a;
        assert_eq!(a1, a2);
        assert!(a1.values.iter().all(|v| (0.6..1.9).contains(v)));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse("preset = \"sg\"\nfoo = 1\n").is_err());
    }
}
