use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use fractal_pde::cell_structure::format_word;
use fractal_pde::config::{self, Config, Sampler};
use fractal_pde::experiments::{self, Equation, Level, Mode, Problem, Row};
use fractal_pde::forms::{self, Diagnostics, FormCoefficients, HardySource};
use fractal_pde::harmonic_structure::{Fractal, VertexFunction};
use fractal_pde::solvers::{self, ParabolicOptions};

#[derive(Parser)]
#[command(name = "fractal-pde", version, about = "Elliptic and parabolic equations on p.c.f. fractals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// TOML problem description.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in structure (interval, sg, vicsek) with default coefficients.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Discretisation {
    Graph,
    Metric,
}

#[derive(Args, Clone)]
struct SpaceArgs {
    /// Graph `V_m` or metric graph `Gamma_m`.
    #[arg(long, value_enum)]
    mode: Option<Discretisation>,
    /// Interior nodes per metric edge (implies --mode metric).
    #[arg(long)]
    subdiv: Option<usize>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Experiment {
    Single,
    Varying,
    Diagonal,
}

#[derive(Subcommand)]
enum Command {
    /// Export the vertex table (and optionally the edge list) of V_m.
    Build {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        level: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Edge list `p,q,conductance`.
        #[arg(long)]
        edges: Option<PathBuf>,
    },
    /// Print the Hardy, coercivity, continuity and sector constants.
    Diagnose {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        level: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve L u = f on one level.
    SolveElliptic {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        level: usize,
        #[command(flatten)]
        space: SpaceArgs,
        /// Add the minimal shift when c0 <= 0.
        #[arg(long)]
        shift: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Evolve du/dt = L u with the theta-scheme.
    SolveParabolic {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        level: usize,
        #[command(flatten)]
        space: SpaceArgs,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        theta: Option<f64>,
        /// Halve the step until u(T) changes by less than this.
        #[arg(long)]
        richardson_tol: Option<f64>,
        /// Write every k-th snapshot.
        #[arg(long, default_value_t = 1)]
        every: usize,
        #[arg(long)]
        shift: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Convergence tables across levels or coefficient sequences.
    Converge {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum, default_value_t = Experiment::Varying)]
        mode: Experiment,
        /// Graph or metric discretisation for varying/diagonal runs.
        #[arg(long, value_enum)]
        space: Option<Discretisation>,
        #[arg(long)]
        subdiv: Option<usize>,
        /// Levels, e.g. `2,3,4,5`.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
        /// Reference level M*.
        #[arg(long)]
        reference: Option<usize>,
        /// Coefficient indices for single/diagonal runs.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        /// Fixed level for single-space runs.
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn load(source: &Source) -> Result<Config> {
    match (&source.config, &source.preset) {
        (Some(p), _) => Ok(Config::from_file(p)?),
        (None, Some(name)) => Ok(Config { preset: Some(name.clone()), ..Default::default() }),
        (None, None) => bail!("give --config <file> or --preset <name>"),
    }
}

/// Problem built from a config with cells up to `max_level`.
struct Setup {
    cfg: Config,
    problem: Problem,
    sampler: Sampler,
}

impl Setup {
    fn new(cfg: Config, max_level: usize, shift: bool) -> Result<Self> {
        let fractal = cfg.fractal(max_level)?;
        let measure = cfg.measure(fractal.n_maps())?;
        let mut sampler = cfg.sampler();
        let coeffs = cfg.coefficients(&fractal, &mut sampler)?;
        let mut problem = Problem::new(fractal, measure, coeffs)?;
        problem.policy = cfg.policy();
        problem.allow_shift = shift || cfg.allow_shift.unwrap_or(false);
        Ok(Setup { cfg, problem, sampler })
    }

    fn function(&mut self, spec: &Option<config::FunctionSpec>, key: &str) -> Result<VertexFunction> {
        let spec = spec.as_ref().with_context(|| format!("the config needs `{key}`"))?;
        Ok(config::function(spec, &self.problem.fractal, &mut self.sampler)?)
    }

    fn fractal(&self) -> &Fractal {
        &self.problem.fractal
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(io::BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::BufWriter::new(io::stdout())),
    })
}

fn header(w: &mut dyn Write, pairs: &[(&str, String)]) -> Result<()> {
    for (k, v) in pairs {
        writeln!(w, "# {k}={v}")?;
    }
    Ok(())
}

fn spec_echo(cfg: &Config) -> Vec<(&'static str, String)> {
    let structure = cfg.preset.clone().unwrap_or_else(|| "custom".into());
    vec![("structure", structure), ("seed", cfg.seed().to_string())]
}

/// `x y` series file for plotting.
fn plot_series(dir: &Path, name: &str, xs: &[f64], ys: &[f64]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = io::BufWriter::new(File::create(dir.join(format!("{name}.dat")))?);
    for (x, y) in xs.iter().zip(ys) {
        writeln!(f, "{x} {y}")?;
    }
    Ok(())
}

fn space_mode(space: &SpaceArgs, cfg: &Config) -> Result<Mode> {
    match (space.mode, space.subdiv) {
        (Some(Discretisation::Graph), Some(_)) => bail!("--subdiv needs --mode metric"),
        (Some(Discretisation::Graph), None) => Ok(Mode::Graph),
        (Some(Discretisation::Metric), s) => Ok(Mode::Metric { subdiv: s.or(cfg.experiment.subdiv).unwrap_or(1) }),
        (None, s) => Ok(cfg.mode(s)?),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build { source, level, out, edges } => build(load(&source)?, level, out, edges),
        Command::Diagnose { source, level, out } => diagnose(load(&source)?, level, out),
        Command::SolveElliptic { source, level, space, shift, out, plot_data } => {
            let cfg = load(&source)?;
            let mode = space_mode(&space, &cfg)?;
            solve_elliptic(cfg, level, mode, shift, out, plot_data)
        }
        Command::SolveParabolic { source, level, space, t_final, steps, theta, richardson_tol, every, shift, out, plot_data } => {
            let cfg = load(&source)?;
            let mode = space_mode(&space, &cfg)?;
            let mut opts = cfg.parabolic_options();
            opts.t_final = t_final.unwrap_or(opts.t_final);
            opts.steps = steps.unwrap_or(opts.steps);
            opts.theta = theta.unwrap_or(opts.theta);
            opts.richardson_tol = richardson_tol.or(opts.richardson_tol);
            solve_parabolic(cfg, level, mode, opts, every.max(1), shift, out, plot_data)
        }
        Command::Converge { source, mode, space, subdiv, levels, reference, ns, level, out, plot_data } => {
            let cfg = load(&source)?;
            let space = SpaceArgs { mode: space, subdiv };
            let disc = space_mode(&space, &cfg)?;
            let req = ConvergeRequest { experiment: mode, mode: disc, levels, reference, ns, level };
            converge(cfg, req, out, plot_data)
        }
    }
}

fn build(cfg: Config, level: usize, out: Option<PathBuf>, edges: Option<PathBuf>) -> Result<()> {
    let fractal = cfg.fractal(level)?;
    let table = fractal.cells.build_vertices(level)?;
    let mut w = output(&out)?;
    header(&mut w, &spec_echo(&cfg))?;
    header(&mut w, &[("level", level.to_string()), ("vertices", table.entries.len().to_string()), ("cells", fractal.cells.num_cells(level).to_string())])?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(["vertex_id", "level", "word", "boundary_index"])?;
    for e in &table.entries {
        csv.write_record([e.id.to_string(), e.address.level.to_string(), format_word(&e.address.word), e.address.boundary_index.to_string()])?;
    }
    csv.flush()?;
    if let Some(path) = edges {
        let form = fractal.graph_form(level)?;
        let mut csv = csv::Writer::from_path(&path)?;
        csv.write_record(["p", "q", "conductance"])?;
        for e in &form.edges {
            csv.write_record([e.p.to_string(), e.q.to_string(), e.conductance.to_string()])?;
        }
        csv.flush()?;
    }
    Ok(())
}

fn diagnostics_lines(setup: &Setup, level: usize, d: &Diagnostics, af: &forms::AssembledForm) -> Result<Vec<(String, String)>> {
    let fractal = setup.fractal();
    let mut lines: Vec<(String, String)> = vec![
        ("level".into(), level.to_string()),
        ("vertices".into(), af.num_vertices().to_string()),
        ("source".into(), match d.source { HardySource::CellBound => "cell_bound", HardySource::Sharp => "sharp" }.into()),
        ("lambda".into(), d.lambda.to_string()),
        ("Lambda".into(), d.big_lambda.to_string()),
        ("M".into(), d.m_param.to_string()),
    ];
    for (name, fc, v) in [("b", &d.b, &af.b), ("b_hat", &d.b_hat, &af.b_hat)] {
        lines.push((format!("delta_{name}"), fc.delta.to_string()));
        lines.push((format!("gamma_{name}"), fc.gamma.to_string()));
        lines.push((format!("norm_{name}"), fractal_pde::fields::norm(&af.form, v)?.to_string()));
        if let Some(est) = fc.estimate {
            lines.push((format!("n0_{name}"), est.n0.to_string()));
            lines.push((format!("V_n0_{name}"), est.v_n0.to_string()));
        }
        if af.num_vertices() <= fractal_pde::linalg::DENSE_LIMIT {
            let delta = 1.0 / d.m_param;
            let g = forms::hardy_optimal(&af.form, v, delta, &af.vertex_measure())?;
            lines.push((format!("gamma_opt_{name}"), g.to_string()));
        }
    }
    let c1 = if d.c0 > 0.0 { 0.0 } else { forms::SHIFT_MARGIN - d.c0 };
    for (k, v) in [
        ("lambda0", d.lambda0),
        ("c0", d.c0),
        ("c1", c1),
        ("Lambda_inf", d.big_lambda_inf),
        ("c_inf", d.c_inf),
        ("K", d.k_sector),
        ("c_sup", d.c_sup),
        ("V_m", setup.problem.measure.min_cell_mass(level)),
    ] {
        lines.push((k.into(), v.to_string()));
    }
    lines.push(("feasible".into(), d.feasible().to_string()));
    for k in 0..=level {
        lines.push((format!("cell_diameter_bound_{k}"), fractal.intrinsic_max_cell_diameter(k).to_string()));
        if fractal.num_vertices(k) <= fractal_pde::linalg::DENSE_LIMIT {
            lines.push((format!("cell_diameter_{k}"), fractal.max_cell_diameter(k)?.to_string()));
        }
    }
    Ok(lines)
}

fn diagnose(cfg: Config, level: usize, out: Option<PathBuf>) -> Result<()> {
    let setup = Setup::new(cfg, level, false)?;
    let p = &setup.problem;
    let af = forms::assemble(&p.fractal, &p.integ, &p.coeffs, level)?;
    let d = forms::certify(&p.fractal, &p.measure, &af, p.policy)?;
    let mut w = output(&out)?;
    header(&mut w, &spec_echo(&setup.cfg))?;
    for (k, v) in diagnostics_lines(&setup, level, &d, &af)? {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}

/// Node rows `vertex_id,edge_id,offset` (metric columns empty in graph mode).
fn node_labels(level: &Level) -> Vec<[String; 3]> {
    let n = level.af.num_vertices();
    match &level.metric {
        None => (0..n).map(|v| [v.to_string(), String::new(), String::new()]).collect(),
        Some(mg) => {
            let mut out: Vec<[String; 3]> = (0..mg.num_vertices).map(|v| [v.to_string(), String::new(), String::new()]).collect();
            for (_, e, t) in mg.interior_nodes() {
                out.push([String::new(), e.to_string(), t.to_string()]);
            }
            out
        }
    }
}

fn level_for(setup: &Setup, level: usize, mode: Mode) -> Result<Level> {
    let lv = setup.problem.level(level, mode)?;
    if !lv.diag.feasible() {
        bail!(
            "coefficients are not certified at level {level}: lambda0 = {:.4e}, c0 = {:.4e}; rerun with --shift",
            lv.diag.lambda0,
            lv.diag.c0
        );
    }
    Ok(lv)
}

fn solve_elliptic(cfg: Config, level: usize, mode: Mode, shift: bool, out: Option<PathBuf>, plot: Option<PathBuf>) -> Result<()> {
    let f_spec = cfg.f.clone();
    let probe = cfg.clone();
    let f_level = match &f_spec {
        Some(config::FunctionSpec::Table { level: l, .. }) => *l,
        _ => 0,
    };
    let big = level.max(f_level).max(random_level(&probe));
    let mut setup = Setup::new(cfg, big, shift)?;
    let f = setup.function(&f_spec, "f")?;
    let lv = level_for(&setup, level, mode)?;
    let f_big = f.at_level(setup.fractal(), big)?;
    let fm = setup.problem.transport(&lv, &f_big, big)?;
    let sol = solvers::solve_elliptic(&lv.af, &lv.diag, &fm)?;
    eprintln!(
        "residual={:.3e} Q1={:.6e} bound={:.6e} bound_holds={} solver={:?} iterations={}",
        sol.residual, sol.q1, sol.bound, sol.bound_holds, sol.solver, sol.iterations
    );
    if !sol.bound_holds {
        bail!("energy bound violated: Q_1(u) = {:.6e} > {:.6e}", sol.q1, sol.bound);
    }
    let mut w = output(&out)?;
    let mut echo = spec_echo(&setup.cfg);
    echo.extend([
        ("level", level.to_string()),
        ("mode", mode_label(mode)),
        ("shift", lv.diag.shift.to_string()),
        ("residual", sol.residual.to_string()),
        ("q1", sol.q1.to_string()),
        ("bound", sol.bound.to_string()),
    ]);
    header(&mut w, &echo)?;
    let mut csv = csv::Writer::from_writer(w);
    let labels = node_labels(&lv);
    if lv.metric.is_some() {
        csv.write_record(["vertex_id", "edge_id", "offset", "value"])?;
        for (l, v) in labels.iter().zip(&sol.u) {
            csv.write_record([l[0].as_str(), &l[1], &l[2], &v.to_string()])?;
        }
    } else {
        csv.write_record(["vertex_id", "value"])?;
        for (l, v) in labels.iter().zip(&sol.u) {
            csv.write_record([l[0].as_str(), &v.to_string()])?;
        }
    }
    csv.flush()?;
    if let Some(dir) = plot {
        let xs: Vec<f64> = (0..sol.u.len()).map(|i| i as f64).collect();
        plot_series(&dir, "solution", &xs, &sol.u)?;
    }
    Ok(())
}

/// Highest level used by `random:n` specs, so cells are built deep enough.
fn random_level(cfg: &Config) -> usize {
    let mut specs: Vec<&config::FunctionSpec> = [&cfg.a, &cfg.c, &cfg.f, &cfg.u0].into_iter().flatten().collect();
    for terms in [&cfg.b, &cfg.b_hat].into_iter().flatten() {
        for t in terms {
            specs.push(&t.g);
            specs.push(&t.f);
        }
    }
    specs
        .into_iter()
        .map(|s| match s {
            config::FunctionSpec::Named(name) => {
                let rest = name.split_once(':').map(|(_, r)| r).unwrap_or("");
                if name.starts_with("random:") {
                    rest.split(':').next().and_then(|n| n.parse().ok()).unwrap_or(0)
                } else if name.starts_with("indicator:") {
                    rest.split_once('@').and_then(|(_, n)| n.parse().ok()).unwrap_or(0)
                } else {
                    0
                }
            }
            config::FunctionSpec::Table { level, .. } => *level,
            config::FunctionSpec::Number(_) => 0,
        })
        .max()
        .unwrap_or(0)
}

fn mode_label(mode: Mode) -> String {
    match mode {
        Mode::Graph => "graph".into(),
        Mode::Metric { subdiv } => format!("metric(subdiv={subdiv})"),
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_parabolic(
    cfg: Config,
    level: usize,
    mode: Mode,
    opts: ParabolicOptions,
    every: usize,
    shift: bool,
    out: Option<PathBuf>,
    plot: Option<PathBuf>,
) -> Result<()> {
    let spec = cfg.u0.clone();
    let big = level.max(random_level(&cfg));
    let mut setup = Setup::new(cfg, big, shift)?;
    let u0 = setup.function(&spec, "u0")?;
    let lv = setup.problem.level(level, mode)?;
    let u0_big = u0.at_level(setup.fractal(), big)?;
    let u0m = setup.problem.transport(&lv, &u0_big, big)?;
    let tr = solvers::solve_parabolic(&lv.af, &lv.diag, &u0m, opts)?;
    let mut w = output(&out)?;
    let mut echo = spec_echo(&setup.cfg);
    echo.extend([
        ("level", level.to_string()),
        ("mode", mode_label(mode)),
        ("theta", tr.theta.to_string()),
        ("steps", tr.steps.to_string()),
        ("dt", (opts.t_final / tr.steps as f64).to_string()),
        ("c0", lv.diag.c0.to_string()),
        ("shift", lv.diag.shift.to_string()),
        (
            "refinement_history",
            tr.refinement_history.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(";"),
        ),
    ]);
    header(&mut w, &echo)?;
    let labels = node_labels(&lv);
    let mut csv = csv::Writer::from_writer(w);
    let metric = lv.metric.is_some();
    if metric {
        csv.write_record(["vertex_id", "edge_id", "offset", "value", "time"])?;
    } else {
        csv.write_record(["vertex_id", "value", "time"])?;
    }
    for (k, (t, u)) in tr.times.iter().zip(&tr.states).enumerate() {
        if k % every != 0 && k + 1 != tr.times.len() {
            continue;
        }
        for (l, v) in labels.iter().zip(u) {
            if metric {
                csv.write_record([l[0].as_str(), &l[1], &l[2], &v.to_string(), &t.to_string()])?;
            } else {
                csv.write_record([l[0].as_str(), &v.to_string(), &t.to_string()])?;
            }
        }
    }
    if let Some(ex) = &tr.extrapolated {
        let t = format!("{}(extrapolated)", opts.t_final);
        for (l, v) in labels.iter().zip(ex) {
            if metric {
                csv.write_record([l[0].as_str(), &l[1], &l[2], &v.to_string(), &t])?;
            } else {
                csv.write_record([l[0].as_str(), &v.to_string(), &t])?;
            }
        }
    }
    csv.flush()?;
    if let Some(dir) = plot {
        plot_series(&dir, "l2_norm", &tr.times, &tr.l2_norms)?;
        plot_series(&dir, "smoothing", &tr.times, &tr.smoothing)?;
    }
    Ok(())
}

struct ConvergeRequest {
    experiment: Experiment,
    mode: Mode,
    levels: Option<Vec<usize>>,
    reference: Option<usize>,
    ns: Option<Vec<usize>>,
    level: Option<usize>,
}

const DEFAULT_NS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

fn converge(cfg: Config, req: ConvergeRequest, out: Option<PathBuf>, plot: Option<PathBuf>) -> Result<()> {
    let e = cfg.experiment.clone();
    let levels = req.levels.or(e.levels.clone()).unwrap_or_else(|| (2..=5).collect());
    let ns = req.ns.or(e.ns.clone()).unwrap_or_else(|| DEFAULT_NS.to_vec());
    let top = levels.iter().copied().max().unwrap_or(0);
    let big = req.reference.or(e.reference).unwrap_or(top + 2);
    let single_level = req.level.or(e.level).unwrap_or(top);
    if req.experiment != Experiment::Single && big < top + 2 {
        bail!("reference level {big} must be at least the top level + 2 = {}", top + 2);
    }
    let depth = big.max(single_level).max(random_level(&cfg));
    let mut setup = Setup::new(cfg, depth, false)?;
    let parabolic = match e.equation.as_deref() {
        None | Some("elliptic") => false,
        Some("parabolic") => true,
        Some(other) => bail!("unknown equation `{other}` (elliptic or parabolic)"),
    };
    let data_level = if req.experiment == Experiment::Single { single_level } else { big };
    let eq = if parabolic {
        let u0 = setup.function(&setup.cfg.u0.clone(), "u0")?;
        Equation::Parabolic { u0: u0.at_level(setup.fractal(), data_level)?, opts: setup.cfg.parabolic_options() }
    } else if e.manufactured.is_none() {
        let f = setup.function(&setup.cfg.f.clone(), "f")?;
        Equation::Elliptic { f: f.at_level(setup.fractal(), data_level)? }
    } else {
        Equation::Elliptic { f: Vec::new() }
    };

    let rows: Vec<Row> = match req.experiment {
        Experiment::Varying => {
            if let Some(spec) = &e.manufactured {
                let u = config::function(spec, &setup.problem.fractal, &mut setup.sampler)?;
                setup.problem.run_manufactured(&u, &levels, big, req.mode)?
            } else {
                let u_ref = setup.problem.reference(&eq, big)?;
                setup.problem.run_varying_space(&eq, &levels, big, req.mode, &u_ref)?
            }
        }
        Experiment::Single => {
            let eta = match &e.perturb_b {
                Some(terms) => config::field(terms, &setup.problem.fractal, &mut setup.sampler)?,
                None => forms::FieldSpec::Zero,
            };
            let da = e.perturb_a.unwrap_or(0.0);
            let p = &setup.problem;
            p.run_single_space(&eq, single_level, &ns, |n| experiments::perturbed(&p.fractal, &p.coeffs, da, &eta, n))?
        }
        Experiment::Diagonal => {
            let p = &setup.problem;
            let u_ref = p.reference(&eq, big)?;
            p.run_diagonal(&eq, &ns, &levels, big, req.mode, &u_ref, |n| truncated(p, &p.coeffs, n))?
        }
    };

    let mut w = output(&out)?;
    let mut echo = spec_echo(&setup.cfg);
    echo.extend([
        ("experiment", match req.experiment { Experiment::Single => "single", Experiment::Varying => "varying", Experiment::Diagonal => "diagonal" }.to_string()),
        ("mode", mode_label(req.mode)),
        ("equation", if parabolic { "parabolic" } else { "elliptic" }.to_string()),
        ("reference", big.to_string()),
        ("levels", levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(";")),
    ]);
    if req.experiment == Experiment::Single {
        echo.push(("level", single_level.to_string()));
    }
    let sups: Vec<f64> = rows.iter().map(|r| r.sup_error).collect();
    if req.experiment != Experiment::Diagonal {
        echo.push(("decreasing_with_slack", experiments::decreasing_with_slack(&sups).to_string()));
    }
    header(&mut w, &echo)?;
    let mut csv = csv::Writer::from_writer(w);
    let with_n = req.experiment != Experiment::Varying;
    let mut head = vec!["m", "sup_error", "l2_error", "energy_Qm", "lambda0", "c0", "K"];
    if with_n {
        head.insert(0, "n");
    }
    csv.write_record(&head)?;
    for r in &rows {
        let mut rec = vec![
            r.m.to_string(),
            r.sup_error.to_string(),
            r.l2_error.to_string(),
            r.energy_q.to_string(),
            r.lambda0.to_string(),
            r.c0.to_string(),
            r.k_sector.to_string(),
        ];
        if with_n {
            rec.insert(0, r.n.unwrap_or(0).to_string());
        }
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    if let Some(dir) = plot {
        let xs: Vec<f64> = rows.iter().map(|r| if with_n && req.experiment == Experiment::Single { r.n.unwrap_or(0) as f64 } else { r.m as f64 }).collect();
        let l2: Vec<f64> = rows.iter().map(|r| r.l2_error).collect();
        plot_series(&dir, "sup_error", &xs, &sups)?;
        plot_series(&dir, "l2_error", &xs, &l2)?;
    }
    Ok(())
}

/// Coefficients with `a` and `c` replaced by their `n`-harmonic approximations.
fn truncated(p: &Problem, base: &FormCoefficients, n: usize) -> fractal_pde::Result<FormCoefficients> {
    let cut = |v: &VertexFunction| -> fractal_pde::Result<VertexFunction> {
        if v.level <= n {
            Ok(v.clone())
        } else {
            Ok(VertexFunction::new(n, v.at_level(&p.fractal, n)?))
        }
    };
    let mut c = base.clone();
    c.a = cut(&base.a)?;
    c.c = cut(&base.c)?;
    Ok(c)
}
