use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sospl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sospl")).current_dir(dir).env("SOSPL_THREADS", "1").args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_str(stdout(o).trim()).unwrap()
}

fn workdir(files: &[(&str, &str)]) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, body) in files {
        std::fs::write(dir.path().join(name), body).unwrap();
    }
    dir
}

const FRECHET: &str = "var x : bool\nvar y : bool\nmoment: E[x] >= 0.6\nmoment: E[y] >= 0.7\nquery bound E[x*y] degree 2\n";
const CONTRADICTION: &str = "# E[x] cannot be both\nvar x : bool\nmoment: E[x] >= 0.8\nmoment: E[x] <= 0.2\nquery decide degree 2\n";

#[test]
fn contradictory_problem_rejects_and_writes_certificate() {
    let dir = workdir(&[("bad.txt", CONTRADICTION)]);
    let o = sospl(dir.path(), &["decide", "--problem", "bad.txt"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("REJECT"));
    let cert: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("bad.cert.json")).unwrap()).unwrap();
    assert!(cert["c"].as_f64().unwrap() > 0.0);
}

#[test]
fn certificate_goes_to_out_when_given() {
    let dir = workdir(&[("bad.txt", CONTRADICTION)]);
    let o = sospl(dir.path(), &["decide", "--problem", "bad.txt", "--out", "c.json", "--format", "json"]);
    assert_eq!(code(&o), 1);
    assert_eq!(json(&o)["certificate"], "c.json");
    assert!(dir.path().join("c.json").exists());
    assert!(!dir.path().join("bad.cert.json").exists());
}

#[test]
fn empty_problem_accepts() {
    let dir = workdir(&[("empty.txt", "# nothing here\n")]);
    let o = sospl(dir.path(), &["decide", "--problem", "empty.txt", "--degree", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ACCEPT"));
}

#[test]
fn malformed_problem_reports_position() {
    let dir = workdir(&[("mal.txt", "var x : bool\nmoment: E[x] >= zz\n")]);
    let o = sospl(dir.path(), &["decide", "--problem", "mal.txt", "--degree", "2"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("line 2, column"), "{}", stderr(&o));
}

#[test]
fn degree_is_required_without_a_query() {
    let dir = workdir(&[("p.txt", "var x : bool\n")]);
    let o = sospl(dir.path(), &["decide", "--problem", "p.txt"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("--degree"));
}

#[test]
fn lone_boolean_bound_is_unit_interval() {
    let dir = workdir(&[("x.txt", "var x : bool\n")]);
    let o = sospl(dir.path(), &["bound", "--problem", "x.txt", "--degree", "2", "--format", "json", "x"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&o);
    let iv = r["interval"].as_array().unwrap();
    assert!(iv[0].as_f64().unwrap().abs() <= 1e-3);
    assert!((iv[1].as_f64().unwrap() - 1.0).abs() <= 1e-3);
    assert_eq!(r["lower"], "certified");
    assert_eq!(r["upper"], "certified");
}

#[test]
fn frechet_lower_bound() {
    let dir = workdir(&[("f.txt", FRECHET)]);
    let o = sospl(dir.path(), &["bound", "--problem", "f.txt", "--side", "lower", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&o);
    assert_eq!(r["degree"], 2);
    let lo = r["interval"][0].as_f64().unwrap();
    assert!((lo - 0.3).abs() <= 1e-3, "lower bound {lo}");
    assert_eq!(r["upper"], "skipped");
}

#[test]
fn undeclared_variable_in_expression_is_an_error() {
    let dir = workdir(&[("f.txt", FRECHET)]);
    let o = sospl(dir.path(), &["bound", "--problem", "f.txt", "x*q"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("q"));
}

#[test]
fn bound_on_refuted_system_exits_one() {
    let dir = workdir(&[("bad.txt", CONTRADICTION)]);
    let o = sospl(dir.path(), &["bound", "--problem", "bad.txt", "x"]);
    assert_eq!(code(&o), 1, "{}", stdout(&o));
}

#[test]
fn check_cnf_unit_conflict() {
    let dir = workdir(&[("u.cnf", "c contradiction\np cnf 1 2\n1 0\n-1 0\n")]);
    let o = sospl(dir.path(), &["check-cnf", "--problem", "u.cnf", "--level", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("level-0 refuted; degree-1 infeasible; agree"), "{}", stdout(&o));
}

#[test]
fn check_cnf_satisfiable() {
    let dir = workdir(&[("s.cnf", "p cnf 2 2\n1 2 0\n-1 2 0\n")]);
    let o = sospl(dir.path(), &["check-cnf", "--problem", "s.cnf", "--level", "1"]);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    assert!(out.contains("not refuted") && out.contains("feasible"), "{out}");
}

#[test]
fn check_cnf_missing_file() {
    let dir = workdir(&[]);
    let o = sospl(dir.path(), &["check-cnf", "--problem", "missing.cnf", "--level", "0"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn export_lone_boolean() {
    let dir = workdir(&[("x.txt", "var x : bool\n")]);
    let o = sospl(dir.path(), &["export", "--problem", "x.txt", "--degree", "2", "--out", "x.dat-s"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.path().join("x.dat-s")).unwrap();
    let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('"') && !l.starts_with('*')).collect();
    let m: usize = lines[0].split_whitespace().next().unwrap().parse().unwrap();
    let nblocks: usize = lines[1].split_whitespace().next().unwrap().parse().unwrap();
    let sizes: Vec<i64> = lines[2].split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}' || c == '(' || c == ')').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
    assert_eq!(sizes.len(), nblocks);
    let costs = lines[3].split(|c: char| c.is_whitespace() || c == ',' || c == '{' || c == '}').filter(|s| !s.is_empty()).count();
    assert_eq!(costs, m);
    for l in &lines[4..] {
        let f: Vec<&str> = l.split_whitespace().collect();
        assert_eq!(f.len(), 5, "entry line `{l}`");
        let (mat, blk, i, j): (usize, usize, usize, usize) = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].parse().unwrap());
        assert!(mat <= m && blk >= 1 && blk <= nblocks && i <= j);
        let size = sizes[blk - 1].unsigned_abs() as usize;
        assert!(j <= size);
        f[4].parse::<f64>().unwrap();
    }
}

#[test]
fn export_with_data_has_a_moment_block_per_example() {
    let dir = workdir(&[("f.txt", FRECHET), ("d.csv", "x,y\n1,*\n0,1\n*,*\n1,*\n")]);
    let o = sospl(dir.path(), &["export", "--problem", "f.txt", "--data", "d.csv", "--out", "f.dat-s", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&o);
    assert_eq!(r["m"], 4);
    assert_eq!(r["moment_blocks"], 5);
    assert!(dir.path().join("f.dat-s").exists());
}

#[test]
fn export_to_unwritable_path_fails() {
    let dir = workdir(&[("x.txt", "var x : bool\n")]);
    let o = sospl(dir.path(), &["export", "--problem", "x.txt", "--degree", "2", "--out", "no/such/dir/x.dat-s"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn decide_with_data_reports_learning_diagnostics() {
    let dir = workdir(&[("f.txt", FRECHET), ("d.csv", "x,y\n1,1\n1,*\n*,1\n0,1\n1,0\n")]);
    let o = sospl(dir.path(), &["decide", "--problem", "f.txt", "--data", "d.csv", "--degree", "2", "--format", "json"]);
    assert!(code(&o) <= 2, "{}", stderr(&o));
    let r = json(&o);
    for key in ["verdict", "interval", "degree", "m", "n_d", "radii", "residuals", "iterations", "certificate", "witness_rate"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
    assert_eq!(r["m"], 5);
    assert!(!r["radii"].as_array().unwrap().is_empty());
}

#[test]
fn structured_output_is_deterministic() {
    let dir = workdir(&[("f.txt", FRECHET), ("d.csv", "x,y\n1,1\n1,*\n*,1\n0,1\n")]);
    let args = ["decide", "--problem", "f.txt", "--data", "d.csv", "--format", "json", "--seed", "7"];
    let a = sospl(dir.path(), &args);
    let b = sospl(dir.path(), &args);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["seed"], 7);
}

#[test]
fn config_file_and_flags() {
    let dir = workdir(&[("x.txt", "var x : bool\n"), ("c.toml", "tol-feas = 1e-7\nmax-iter = 20000\nseed = 3\n"), ("bad.toml", "tolerance = 1\n")]);
    let o = sospl(dir.path(), &["decide", "--problem", "x.txt", "--degree", "2", "--config", "c.toml", "--format", "json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&o)["seed"], 3);
    let o = sospl(dir.path(), &["decide", "--problem", "x.txt", "--degree", "2", "--config", "bad.toml"]);
    assert_eq!(code(&o), 3);
    let o = sospl(dir.path(), &["decide", "--problem", "x.txt", "--degree", "2", "--tol-feas", "2"]);
    assert_eq!(code(&o), 3);
    let o = sospl(dir.path(), &["decide", "--problem", "x.txt", "--degree", "2", "--delta", "0"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn help_exits_zero() {
    let o = Command::new(env!("CARGO_BIN_EXE_sospl")).arg("--help").output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("check-cnf"));
}
