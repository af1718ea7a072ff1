//! `sospl`: decide probability-logic queries, bound expectations, cross-check
//! CNF refutations and export relaxations.
//!
//! Exit status: 0 accept, 1 reject, 2 indeterminate, 3 usage or input error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

use sospl_core::learn::{load_examples, ExampleGrouping, witness_rate, LearnError, PartialExampleSet};
use sospl_core::model::{parse_dimacs, parse_problem, ConstraintSystem, ModelError, Origin};
use sospl_core::poly::{PolyError, Polynomial};
use sospl_core::query::{bound_expectation, decide, prepare, EndpointStatus, QueryError, QueryKind, QueryOptions, Side, Verdict};
use sospl_core::resolution::{crosscheck_sos, CrossCheckError};
use sospl_core::sdp::{sdpa::export_sdpa, thread_budget, Outcome, Residuals, SdpError, SolverOptions};

const EXIT_ERROR: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "sospl", version, about = "Sum-of-squares probability logic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML file with solver settings (tol-feas, tol-cert, tol-gap, max-iter, seed).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    tol_feas: Option<f64>,
    #[arg(long, global = true)]
    tol_cert: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Recorded in the output; the solver itself is deterministic.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(clap::Args, Debug)]
struct Input {
    /// Problem file.
    #[arg(long)]
    problem: PathBuf,
    /// CSV of partial examples; `*` marks a missing value.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Relaxation degree; defaults to the first matching query in the problem file.
    #[arg(long)]
    degree: Option<u32>,
    /// Confidence parameter of the empirical moment intervals.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Accept or reject the problem's system against the data.
    Decide {
        #[command(flatten)]
        input: Input,
        /// Where to write the refutation certificate on reject.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certified bounds on E[expr].
    Bound {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, value_enum, default_value_t = SideArg::Both)]
        side: SideArg,
        /// Polynomial such as `x*y + 0.5*~z`; defaults to the problem's bound query.
        expr: Option<String>,
    },
    /// Level-s resolution search against the degree-(s+1) relaxation of a DIMACS file.
    CheckCnf {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        level: u32,
    },
    /// Write the relaxation in sparse SDPA format.
    Export {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SideArg {
    Lower,
    Upper,
    Both,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Side {
        match s {
            SideArg::Lower => Side::Lower,
            SideArg::Upper => Side::Upper,
            SideArg::Both => Side::Both,
        }
    }
}

#[derive(Deserialize, Debug, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct FileConfig {
    tol_feas: Option<f64>,
    tol_cert: Option<f64>,
    tol_gap: Option<f64>,
    max_iter: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Problem { path: String, source: ModelError },
    #[error("config {path}: {source}")]
    Config { path: String, source: toml::de::Error },
    #[error("expression: {0}")]
    Expr(PolyError),
    #[error(transparent)]
    Data(#[from] LearnError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Solver(#[from] SdpError),
    #[error(transparent)]
    CrossCheck(#[from] CrossCheckError),
    #[error("{0}")]
    Usage(String),
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.display().to_string(), source })
}

fn solver_options(cli: &Cli) -> Result<SolverOptions, CliError> {
    let mut o = SolverOptions { threads: thread_budget(), ..SolverOptions::default() };
    if let Some(path) = &cli.config {
        let fc: FileConfig = toml::from_str(&read(path)?).map_err(|source| CliError::Config { path: path.display().to_string(), source })?;
        o.tol_feas = fc.tol_feas.unwrap_or(o.tol_feas);
        o.tol_cert = fc.tol_cert.unwrap_or(o.tol_cert);
        o.tol_gap = fc.tol_gap.unwrap_or(o.tol_gap);
        o.max_iter = fc.max_iter.unwrap_or(o.max_iter);
        o.seed = fc.seed.unwrap_or(o.seed);
    }
    o.tol_feas = cli.tol_feas.unwrap_or(o.tol_feas);
    o.tol_cert = cli.tol_cert.unwrap_or(o.tol_cert);
    o.max_iter = cli.max_iter.unwrap_or(o.max_iter);
    o.seed = cli.seed.unwrap_or(o.seed);
    for (name, v) in [("tol-feas", o.tol_feas), ("tol-cert", o.tol_cert), ("tol-gap", o.tol_gap)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(CliError::Usage(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    if o.max_iter == 0 {
        return Err(CliError::Usage("max-iter must be positive".into()));
    }
    Ok(o)
}

struct Loaded {
    sys: ConstraintSystem,
    queries: Vec<sospl_core::query::Query>,
    data: Option<PartialExampleSet>,
}

fn load(input: &Input) -> Result<Loaded, CliError> {
    let text = read(&input.problem)?;
    let (sys, queries) = parse_problem(&text).map_err(|source| CliError::Problem { path: input.problem.display().to_string(), source })?;
    let data = match &input.data {
        Some(p) => Some(load_examples(p, sys.vars())?),
        None => None,
    };
    if !(input.delta > 0.0 && input.delta < 1.0) {
        return Err(CliError::Usage(format!("delta must lie in (0, 1), got {}", input.delta)));
    }
    Ok(Loaded { sys, queries, data })
}

fn degree_for(input: &Input, l: &Loaded, want_bound: bool) -> Result<u32, CliError> {
    if let Some(d) = input.degree {
        return Ok(d);
    }
    l.queries
        .iter()
        .find(|q| matches!(q.kind, QueryKind::Bound { .. }) == want_bound)
        .or_else(|| l.queries.first())
        .map(|q| q.degree)
        .ok_or_else(|| CliError::Usage("no --degree given and the problem file has no query".into()))
}

fn query_options(solver: SolverOptions, delta: f64, epsilon: f64) -> QueryOptions {
    let mut q = QueryOptions { solver, epsilon, ..QueryOptions::default() };
    q.parallel = q.solver.threads > 1;
    q.learn.delta = delta;
    q
}

fn residuals_json(r: &Residuals) -> Value {
    json!({ "primal": r.primal, "dual": r.dual, "gap": r.gap, "eigenvalue_floor": r.eigenvalue_floor })
}

fn emit(format: Format, text: &str, record: Value) {
    match format {
        Format::Text => print!("{text}"),
        Format::Json => println!("{}", serde_json::to_string(&record).expect("records serialize")),
    }
}

/// Support constraints (including clauses) checked for witnessing.
fn testable_constraints(sys: &ConstraintSystem) -> Vec<Polynomial> {
    sys.inequalities().iter().filter(|c| matches!(c.origin, Origin::Support | Origin::Clause)).map(|c| c.poly.clone()).collect()
}

fn cmd_decide(cli: &Cli, input: &Input, out: Option<&Path>) -> Result<u8, CliError> {
    let l = load(input)?;
    let d = degree_for(input, &l, false)?;
    let opts = query_options(solver_options(cli)?, input.delta, 1e-3);
    let dec = decide(&l.sys, l.data.as_ref(), d, &opts)?;
    let p = &dec.prepared;
    let vars = &p.program.vars;
    let radii: Vec<Value> = p.intervals.iter().map(|iv| json!([iv.monomial.display(vars).to_string(), iv.radius])).collect();
    let rate = match &l.data {
        Some(ex) => Some(witness_rate(&testable_constraints(&l.sys), ex)?),
        None => None,
    };
    let mut cert_path = None;
    if let Some((cert, _)) = &dec.certificate {
        let path = out.map(Path::to_path_buf).unwrap_or_else(|| input.problem.with_extension("cert.json"));
        let body = serde_json::to_string_pretty(cert).expect("certificates serialize");
        std::fs::write(&path, body).map_err(|source| CliError::Write { path: path.display().to_string(), source })?;
        cert_path = Some(path.display().to_string());
    }
    let verdict = match dec.verdict {
        Verdict::Accept => "accept",
        Verdict::Reject => "reject",
        Verdict::Indeterminate => "indeterminate",
    };
    let mut text = format!("{}\n", verdict.to_uppercase());
    text += &format!("degree {d}, m = {}, N_d = {}\n", p.m, p.n_d);
    if !p.intervals.is_empty() {
        let (lo, hi) = p.intervals.iter().fold((f64::INFINITY, 0.0f64), |(a, b), iv| (a.min(iv.radius), b.max(iv.radius)));
        text += &format!("radii: {} monomials, min {lo:.5}, max {hi:.5}\n", p.intervals.len());
    }
    if let Some(r) = rate {
        text += &format!("witness rate of support constraints: {r:.4}\n");
    }
    for v in &p.violations {
        text += &format!("row {} violates `{}` (value {})\n", v.row + 1, v.constraint, v.value);
    }
    if let Some(path) = &cert_path {
        text += &format!("certificate written to {path}\n");
    }
    if let Some(reason) = &dec.reason {
        text += &format!("reason: {reason}\n");
    }
    text += &format!("iterations {}\n", dec.iterations);
    emit(
        cli.format,
        &text,
        json!({
            "command": "decide",
            "verdict": verdict,
            "interval": Value::Null,
            "degree": d,
            "m": p.m,
            "n_d": p.n_d,
            "radii": radii,
            "residuals": residuals_json(&dec.residuals),
            "witness_rate": rate,
            "violations": p.violations.len(),
            "certificate": cert_path,
            "iterations": dec.iterations,
            "seed": opts.solver.seed,
        }),
    );
    Ok(dec.verdict.exit_code() as u8)
}

fn status(s: EndpointStatus) -> &'static str {
    match s {
        EndpointStatus::Certified => "certified",
        EndpointStatus::Indeterminate => "indeterminate",
        EndpointStatus::Skipped => "skipped",
    }
}

fn cmd_bound(cli: &Cli, input: &Input, epsilon: f64, side: SideArg, expr: Option<&str>) -> Result<u8, CliError> {
    let l = load(input)?;
    let p = match expr {
        Some(e) => Polynomial::parse(e, l.sys.vars()).map_err(CliError::Expr)?,
        None => l
            .queries
            .iter()
            .find_map(|q| match &q.kind {
                QueryKind::Bound { poly, .. } => Some(poly.clone()),
                _ => None,
            })
            .ok_or_else(|| CliError::Usage("no expression given and the problem file has no bound query".into()))?,
    };
    let d = degree_for(input, &l, true)?;
    let opts = query_options(solver_options(cli)?, input.delta, epsilon);
    let r = bound_expectation(&l.sys, l.data.as_ref(), &p, side.into(), d, &opts)?;
    let shown = p.display(l.sys.vars()).to_string();
    let (text, code, verdict) = if r.is_refuted() {
        (format!("E[{shown}]: system refuted at degree {d}; no consistent distribution\n"), 1, "reject")
    } else {
        let mut t = format!("E[{shown}] in [{:.6}, {:.6}]\n", r.interval.lo, r.interval.hi);
        t += &format!("lower {}, upper {}\n", status(r.lower), status(r.upper));
        t += &format!("degree {d}, solves {}, iterations {}\n", r.solves, r.iterations);
        let open = r.lower == EndpointStatus::Indeterminate || r.upper == EndpointStatus::Indeterminate;
        (t, if open { 2 } else { 0 }, if open { "indeterminate" } else { "accept" })
    };
    let prepared_m = l.data.as_ref().map_or(0, |ex| ex.len());
    emit(
        cli.format,
        &text,
        json!({
            "command": "bound",
            "expression": shown,
            "verdict": verdict,
            "interval": [r.interval.lo, r.interval.hi],
            "lower": status(r.lower),
            "upper": status(r.upper),
            "degree": d,
            "m": prepared_m,
            "radii": Value::Null,
            "residuals": Value::Null,
            "solves": r.solves,
            "iterations": r.iterations,
            "seed": opts.solver.seed,
        }),
    );
    Ok(code)
}

fn cmd_check_cnf(cli: &Cli, path: &Path, level: u32) -> Result<u8, CliError> {
    let cnf = parse_dimacs(&read(path)?).map_err(|source| CliError::Problem { path: path.display().to_string(), source })?;
    let opts = solver_options(cli)?;
    let cc = crosscheck_sos(&cnf, level, &opts)?;
    let res = if cc.resolution_refutes { format!("level-{level} refuted") } else { format!("level-{level} not refuted") };
    let relax = format!("degree-{} {}", cc.degree, cc.relaxation.label());
    let agree = cc.consistent() && !matches!(cc.relaxation, Outcome::Indeterminate { .. });
    let mut text = format!("{res}; {relax}; {}\n", if agree { "agree" } else { "disagree" });
    if let Some(trace) = &cc.trace {
        text += &trace.to_text();
    }
    emit(
        cli.format,
        &text,
        json!({
            "command": "check-cnf",
            "verdict": cc.relaxation.label(),
            "level": level,
            "degree": cc.degree,
            "refuted": cc.resolution_refutes,
            "agree": agree,
            "iterations": cc.iterations,
        }),
    );
    Ok(if agree { 0 } else { 2 })
}

fn cmd_export(cli: &Cli, input: &Input, out: &Path) -> Result<u8, CliError> {
    let l = load(input)?;
    let d = degree_for(input, &l, false)?;
    let mut opts = query_options(solver_options(cli)?, input.delta, 1e-3);
    // one block group per example row so the file mirrors the data
    opts.learn.grouping = ExampleGrouping::PerExample;
    let p = prepare(&l.sys, l.data.as_ref(), d, &opts)?;
    export_sdpa(&p.program, out)?;
    let moment_blocks = p.program.blocks.iter().filter(|b| b.role == sospl_core::relax::BlockRole::Moment).count();
    let text = format!(
        "wrote {} ({} moments, {} PSD blocks, {} moment matrices, {} linear rows)\n",
        out.display(),
        p.program.num_moments() - 1,
        p.program.blocks.len(),
        moment_blocks,
        p.program.ineq_rows.len() + 2 * p.program.eq_rows.len()
    );
    emit(
        cli.format,
        &text,
        json!({
            "command": "export",
            "path": out.display().to_string(),
            "degree": d,
            "m": p.m,
            "moments": p.program.num_moments() - 1,
            "psd_blocks": p.program.blocks.len(),
            "moment_blocks": moment_blocks,
        }),
    );
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Decide { input, out } => cmd_decide(cli, input, out.as_deref()),
        Command::Bound { input, epsilon, side, expr } => cmd_bound(cli, input, *epsilon, *side, expr.as_deref()),
        Command::CheckCnf { problem, level } => cmd_check_cnf(cli, problem, *level),
        Command::Export { input, out } => cmd_export(cli, input, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
