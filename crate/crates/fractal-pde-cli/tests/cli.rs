use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

struct Output {
    ok: bool,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_fractal-pde")).args(args).output().unwrap();
    Output {
        ok: out.status.success(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.ok, "{args:?} failed: {}", out.stderr);
    out.stdout
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `# key=value` header lines.
fn header(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// `key=value` lines of a diagnostics dump.
fn dump(text: &str) -> HashMap<String, String> {
    text.lines().filter(|l| !l.starts_with('#')).filter_map(|l| l.split_once('=')).map(|(k, v)| (k.into(), v.into())).collect()
}

/// CSV body without comment lines: header row and records.
fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let head = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (head, rows)
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn column(head: &[String], rows: &[Vec<String>], name: &str) -> Vec<String> {
    let k = head.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].clone()).collect()
}

#[test]
fn build_exports_vertices_and_edges() {
    let dir = TempDir::new().unwrap();
    let edges = dir.path().join("edges.csv");
    let out = run_ok(&["build", "--preset", "sg", "--level", "2", "--edges", path(&edges)]);
    let h = header(&out);
    assert_eq!(h["structure"], "sg");
    assert_eq!(h["vertices"], "15");
    assert_eq!(h["cells"], "9");
    let (head, rows) = table(&out);
    assert_eq!(head, ["vertex_id", "level", "word", "boundary_index"]);
    assert_eq!(rows.len(), 15);
    assert_eq!(column(&head, &rows, "vertex_id"), (0..15).map(|i| i.to_string()).collect::<Vec<_>>());
    let (ehead, erows) = table(&std::fs::read_to_string(&edges).unwrap());
    assert_eq!(ehead, ["p", "q", "conductance"]);
    assert_eq!(erows.len(), 27);
    let out = run_ok(&["build", "--preset", "interval", "--level", "3"]);
    assert_eq!(header(&out)["vertices"], "9");
}

#[test]
fn diagnose_reports_constants() {
    let out = run_ok(&["diagnose", "--preset", "sg", "--level", "3"]);
    let d = dump(&out);
    assert_eq!(d["gamma_b"], "0");
    assert_eq!(d["gamma_b_hat"], "0");
    assert_eq!(d["lambda0"], "0.25");
    assert!((num(&d["c0"]) - 1.0).abs() < 1e-12);
    assert_eq!(d["c1"], "0");
    assert_eq!(d["feasible"], "true");
    assert!(d.contains_key("K") && d.contains_key("V_m") && d.contains_key("cell_diameter_bound_3"));
    for preset in ["interval", "vicsek"] {
        let d = dump(&run_ok(&["diagnose", "--preset", preset, "--level", "2"]));
        assert_eq!(d["feasible"], "true");
        // K = (Lambda + 0)/lambda + 2 ||c|| / c0 + 1 for the standard coefficients
        assert!((num(&d["K"]) - (2.0 / 0.5 + 2.0 + 1.0)).abs() < 1e-12);
    }
}

#[test]
fn diagnose_infeasible_reports_shift() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "c.toml", "preset = \"sg\"\nc = \"constant:2\"\n");
    let d = dump(&run_ok(&["diagnose", "--config", path(&cfg), "--level", "2"]));
    assert_eq!(d["feasible"], "false");
    assert!((num(&d["c0"]) + 2.0).abs() < 1e-12);
    assert!((num(&d["c1"]) - 2.1).abs() < 1e-12);
}

#[test]
fn diagnose_with_drift() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "b.toml", "preset = \"sg\"\nlambda = 0.99\nb = [{ g = 0.15, f = { level = 0, values = [0.0, 1.0, 0.0] } }]\n");
    let d = dump(&run_ok(&["diagnose", "--config", path(&cfg), "--level", "4"]));
    assert!(num(&d["gamma_b"]) > 0.0);
    assert!(num(&d["gamma_opt_b"]) <= num(&d["gamma_b"]));
    assert!(d.contains_key("n0_b"));
}

#[test]
fn elliptic_constant_solution_in_both_spaces() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "e.toml", "preset = \"sg\"\nf = -1.0\n");
    let out = run_ok(&["solve-elliptic", "--config", path(&cfg), "--level", "3"]);
    let h = header(&out);
    assert_eq!(h["mode"], "graph");
    assert!(num(&h["residual"]) < 1e-10);
    let (head, rows) = table(&out);
    assert_eq!(head, ["vertex_id", "value"]);
    assert_eq!(rows.len(), 42);
    assert!(column(&head, &rows, "value").iter().all(|v| (num(v) - 1.0).abs() < 1e-9));

    let out = run_ok(&["solve-elliptic", "--config", path(&cfg), "--level", "2", "--subdiv", "2"]);
    assert_eq!(header(&out)["mode"], "metric(subdiv=2)");
    let (head, rows) = table(&out);
    assert_eq!(head, ["vertex_id", "edge_id", "offset", "value"]);
    assert_eq!(rows.len(), 15 + 27 * 2);
    assert!(column(&head, &rows, "value").iter().all(|v| (num(v) - 1.0).abs() < 1e-9));
    let interior: Vec<_> = rows.iter().filter(|r| r[0].is_empty()).collect();
    assert_eq!(interior.len(), 54);
    assert!(interior.iter().all(|r| !r[1].is_empty() && num(&r[2]) > 0.0 && num(&r[2]) < 1.0));
    assert!(!run(&["solve-elliptic", "--config", path(&cfg), "--level", "2", "--mode", "graph", "--subdiv", "2"]).ok);
}

#[test]
fn elliptic_needs_shift_when_infeasible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "s.toml", "preset = \"interval\"\nc = \"constant:1\"\nf = \"coordinate\"\n");
    let out = run(&["solve-elliptic", "--config", path(&cfg), "--level", "4"]);
    assert!(!out.ok);
    assert!(out.stderr.contains("--shift"), "{}", out.stderr);
    let out = run_ok(&["solve-elliptic", "--config", path(&cfg), "--level", "4", "--shift"]);
    assert!((num(&header(&out)["shift"]) - 1.1).abs() < 1e-12);
}

#[test]
fn parabolic_decay_of_constants() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "p.toml", "preset = \"sg\"\nu0 = 1.0\n");
    let plots = dir.path().join("plots");
    let out = run_ok(&[
        "solve-parabolic", "--config", path(&cfg), "--level", "2", "--t-final", "1", "--steps", "8",
        "--richardson-tol", "1e-4", "--every", "4", "--plot-data", path(&plots),
    ]);
    let h = header(&out);
    assert_eq!(h["theta"], "1");
    assert!(!h["refinement_history"].is_empty());
    let (head, rows) = table(&out);
    assert_eq!(head, ["vertex_id", "value", "time"]);
    let last: Vec<_> = rows.iter().filter(|r| r[2] == "1(extrapolated)").collect();
    assert_eq!(last.len(), 15);
    assert!(last.iter().all(|r| (num(&r[1]) - (-1.0f64).exp()).abs() < 1e-4));
    assert!(plots.join("l2_norm.dat").exists() && plots.join("smoothing.dat").exists());
    let missing = write_config(&dir, "q.toml", "preset = \"sg\"\n");
    let out = run(&["solve-parabolic", "--config", path(&missing), "--level", "2"]);
    assert!(!out.ok && out.stderr.contains("u0"));
}

#[test]
fn converge_varying_manufactured() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "m.toml",
        "preset = \"sg\"\nlambda = 0.99\nseed = 4\nb = [{ g = 0.15, f = { level = 0, values = [0.0, 1.0, 0.0] } }]\n\
         [experiment]\nmanufactured = \"random:2\"\n",
    );
    let out = run_ok(&["converge", "--config", path(&cfg), "--levels", "2,3,4", "--reference", "6"]);
    let h = header(&out);
    assert_eq!(h["experiment"], "varying");
    assert_eq!(h["seed"], "4");
    let (head, rows) = table(&out);
    assert_eq!(head[0], "m");
    assert_eq!(rows.len(), 3);
    assert!(column(&head, &rows, "sup_error").iter().all(|v| num(v) < 1e-8));
    let out = run(&["converge", "--config", path(&cfg), "--levels", "2,3,4", "--reference", "5"]);
    assert!(!out.ok);
}

#[test]
fn converge_single_and_diagonal() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "s.toml",
        "preset = \"sg\"\nlambda = 0.99\nf = \"coordinate\"\nb = [{ g = 0.15, f = { level = 0, values = [0.0, 1.0, 0.0] } }]\n\
         [experiment]\nperturb_b = [{ g = 0.05, f = { level = 0, values = [0.0, 0.0, 1.0] } }]\n",
    );
    let plots = dir.path().join("plots");
    let out = run_ok(&["converge", "--config", path(&cfg), "--mode", "single", "--level", "3", "--ns", "1,2,4,8", "--plot-data", path(&plots)]);
    let h = header(&out);
    assert_eq!(h["experiment"], "single");
    assert_eq!(h["decreasing_with_slack"], "true");
    let (head, rows) = table(&out);
    assert_eq!(head[0], "n");
    assert_eq!(column(&head, &rows, "n"), ["1", "2", "4", "8"]);
    assert!(plots.join("sup_error.dat").exists());

    let out = run_ok(&["converge", "--config", path(&cfg), "--mode", "diagonal", "--levels", "2,3", "--ns", "1,2", "--reference", "5"]);
    let (head, rows) = table(&out);
    assert_eq!(rows.len(), 4);
    assert_eq!(column(&head, &rows, "n"), ["1", "1", "2", "2"]);
    assert_eq!(column(&head, &rows, "m"), ["2", "3", "2", "3"]);
}

#[test]
fn outputs_are_deterministic_given_the_seed() {
    let dir = TempDir::new().unwrap();
    let text = "preset = \"sg\"\nseed = 9\na = \"random:1:0.8:1.5\"\nf = \"random:2\"\n";
    let cfg = write_config(&dir, "r.toml", text);
    let args = ["solve-elliptic", "--config", path(&cfg), "--level", "3"];
    let a = run_ok(&args);
    let b = run_ok(&args);
    assert_eq!(a, b);
    assert_eq!(header(&a)["seed"], "9");
    let other = write_config(&dir, "r2.toml", &text.replace("seed = 9", "seed = 10"));
    let c = run_ok(&["solve-elliptic", "--config", path(&other), "--level", "3"]);
    assert_ne!(table(&a).1, table(&c).1);
}

#[test]
fn bad_invocations_fail_cleanly() {
    assert!(!run(&["build", "--level", "2"]).ok);
    let out = run(&["build", "--preset", "carpet", "--level", "2"]);
    assert!(!out.ok && out.stderr.starts_with("error:"));
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", "preset = \"sg\"\nunknown_key = 1\n");
    assert!(!run(&["diagnose", "--config", path(&cfg), "--level", "1"]).ok);
}
