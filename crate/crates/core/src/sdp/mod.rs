//! First-order conic solver for moment relaxations, refutation
//! certificates, and SDPA interchange.

mod admm;
mod certificate;
mod conic;
mod linalg;
pub mod sdpa;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use certificate::{extract_certificate, verify_certificate, verify_for_system, Certificate, CertificateCheck, GramBlock, RowMultiplier};

use crate::model::ConstraintSystem;
use crate::relax::{build_program, FeasibilityReport, RelaxError, Sense, SosProgram};

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error("program has no objective")]
    NoObjective,
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("SDPA format error on line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default)]
pub struct SolverOptions {
    pub tol_feas: f64,
    pub tol_cert: f64,
    pub tol_gap: f64,
    pub max_iter: usize,
    /// Carried for reproducibility records; the iteration itself is deterministic.
    pub seed: u64,
    /// Over-relaxation parameter.
    pub alpha: f64,
    /// Iterations between convergence checks.
    pub check_every: usize,
    /// Worker threads for per-block projections (1 = sequential).
    pub threads: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_feas: 1e-7,
            tol_cert: 1e-6,
            tol_gap: 1e-5,
            max_iter: 100_000,
            seed: 0,
            alpha: 1.6,
            check_every: 25,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// Smallest block eigenvalue of the last checked primal candidate, relative to trace.
    pub eigenvalue_floor: f64,
}

#[derive(Clone, Debug)]
pub enum Outcome {
    Feasible { moments: Vec<f64>, report: FeasibilityReport },
    Infeasible { certificate: Certificate, check: CertificateCheck },
    Indeterminate { reason: String },
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Feasible { .. } => "feasible",
            Outcome::Infeasible { .. } => "infeasible",
            Outcome::Indeterminate { .. } => "indeterminate",
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Outcome::Feasible { .. })
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Outcome::Infeasible { .. })
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub outcome: Outcome,
    pub iterations: usize,
    pub wall_time: Duration,
    pub residuals: Residuals,
}

#[derive(Clone, Debug)]
pub enum OptOutcome {
    /// `interval` brackets the optimum of `E[p]`: one end is the value at
    /// the witness, the other the (approximate) dual bound.
    Optimal { interval: (f64, f64), witness: Vec<f64>, report: FeasibilityReport },
    Infeasible { certificate: Certificate, check: CertificateCheck },
    Indeterminate { reason: String, witness: Option<Vec<f64>> },
}

#[derive(Clone, Debug)]
pub struct OptResult {
    pub outcome: OptOutcome,
    pub iterations: usize,
    pub wall_time: Duration,
    pub residuals: Residuals,
}

/// Decides feasibility of the relaxation.
pub fn solve(prog: &SosProgram, opts: &SolverOptions) -> Result<SolveResult, SdpError> {
    admm::solve_feasibility(prog, opts)
}

/// Optimizes the attached objective.
pub fn optimize(prog: &SosProgram, opts: &SolverOptions) -> Result<OptResult, SdpError> {
    let obj = prog.objective.as_ref().ok_or(SdpError::NoObjective)?;
    admm::solve_optimization(prog, obj.sense == Sense::Maximize, opts)
}

/// Builds the degree-`d` relaxation of `sys` and decides it.
pub fn decide_system(sys: &ConstraintSystem, d: u32, opts: &SolverOptions) -> Result<SolveResult, SdpError> {
    let prog = build_program(sys, d)?;
    solve(&prog, opts)
}

/// Worker count from `SOSPL_THREADS`, defaulting to the available cores.
pub fn thread_budget() -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("SOSPL_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(n) if n >= 1 => n,
        _ => hw,
    }
}
