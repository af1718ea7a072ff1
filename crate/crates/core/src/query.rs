//! Decision and bound procedures over a system, optionally learned from
//! partial examples.
//!
//! Bounds are found by bisection on cut rows `E[p] >= c` (upper side) and
//! `E[p] <= c` (lower side). A cut value is an outer endpoint once its
//! program is refuted by a verified certificate and an inner endpoint once
//! a feasible witness reaches it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learn::{build_learned_program_with, HoeffdingInterval, LearnError, LearnOptions, PartialExampleSet, Violation};
use crate::model::ConstraintSystem;
use crate::poly::{expression_bounds, IntervalBound, PartialAssignment, Polynomial, VarId};
use crate::relax::{attach_objective, build_program_with, index_size, RelaxError, Sense, SosProgram};
use crate::sdp::{optimize, solve, thread_budget, Certificate, CertificateCheck, OptOutcome, Outcome, Residuals, SdpError, SolverOptions};

pub const DEFAULT_EPSILON: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Lower,
    Upper,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QueryKind {
    Decide,
    Bound { poly: Polynomial, side: Side },
    /// `P(a | b)` for Boolean literals.
    ConditionalProb { a: VarId, b: VarId },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub kind: QueryKind,
    pub degree: u32,
    pub epsilon: f64,
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error(transparent)]
    Solver(#[from] SdpError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("query precision must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("`{0}` is not a Boolean literal")]
    NotBoolean(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryOptions {
    pub solver: SolverOptions,
    pub learn: LearnOptions,
    pub epsilon: f64,
    /// Seed the bisection with a direct optimization.
    pub fast_path: bool,
    /// Run the lower and upper searches on separate threads.
    pub parallel: bool,
    /// Times a probe may be retried with four times the iteration budget.
    pub escalations: u32,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions {
            solver: SolverOptions::default(),
            learn: LearnOptions::default(),
            epsilon: DEFAULT_EPSILON,
            fast_path: true,
            parallel: thread_budget() > 1,
            escalations: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
    Indeterminate,
}

impl Verdict {
    /// Process exit status used by the command-line tool.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Accept => 0,
            Verdict::Reject => 1,
            Verdict::Indeterminate => 2,
        }
    }
}

/// Relaxation of a system, learned when examples are present.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub program: SosProgram,
    pub m: usize,
    pub n_d: usize,
    pub intervals: Vec<HoeffdingInterval>,
    pub violations: Vec<Violation>,
}

pub fn prepare(sys: &ConstraintSystem, examples: Option<&PartialExampleSet>, d: u32, opts: &QueryOptions) -> Result<Prepared, QueryError> {
    match examples {
        Some(ex) => {
            let lp = build_learned_program_with(sys, ex, d, &opts.learn)?;
            Ok(Prepared { program: lp.program, m: lp.m, n_d: lp.n_d, intervals: lp.intervals, violations: lp.violations })
        }
        None => {
            let program = build_program_with(sys, d, &opts.learn.build)?;
            let all: Vec<VarId> = sys.vars().iter().map(|(id, _)| id).collect();
            let n_d = index_size(sys.vars(), &all, d);
            Ok(Prepared { program, m: 0, n_d, intervals: Vec::new(), violations: Vec::new() })
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decision {
    pub verdict: Verdict,
    pub degree: u32,
    pub prepared: Prepared,
    pub certificate: Option<(Certificate, CertificateCheck)>,
    pub moments: Option<Vec<f64>>,
    pub reason: Option<String>,
    pub iterations: usize,
    pub residuals: Residuals,
}

/// Accepts when the (learned) relaxation is feasible, rejects with a
/// verified refutation when it is not.
pub fn decide(sys: &ConstraintSystem, examples: Option<&PartialExampleSet>, d: u32, opts: &QueryOptions) -> Result<Decision, QueryError> {
    let prepared = prepare(sys, examples, d, opts)?;
    let res = solve_escalating(&prepared.program, opts)?;
    let (verdict, certificate, moments, reason) = match res.outcome {
        Outcome::Feasible { moments, .. } => (Verdict::Accept, None, Some(moments), None),
        Outcome::Infeasible { certificate, check } => (Verdict::Reject, Some((certificate, check)), None, None),
        Outcome::Indeterminate { reason } => (Verdict::Indeterminate, None, None, Some(reason)),
    };
    Ok(Decision { verdict, degree: d, prepared, certificate, moments, reason, iterations: res.iterations, residuals: res.residuals })
}

fn solve_escalating(prog: &SosProgram, opts: &QueryOptions) -> Result<crate::sdp::SolveResult, QueryError> {
    let mut so = opts.solver.clone();
    let mut res = solve(prog, &so)?;
    let mut total = res.iterations;
    for _ in 0..opts.escalations {
        if !matches!(res.outcome, Outcome::Indeterminate { .. }) {
            break;
        }
        so.max_iter = so.max_iter.saturating_mul(4);
        res = solve(prog, &so)?;
        total += res.iterations;
    }
    res.iterations = total;
    Ok(res)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointStatus {
    /// Within `epsilon` of a witnessed value and backed by a refutation or
    /// by the a-priori range.
    Certified,
    /// The search stopped early; the endpoint is the last sound bound.
    Indeterminate,
    /// Not requested; the endpoint is the a-priori range.
    Skipped,
}

#[derive(Clone, Debug)]
pub struct BoundResult {
    /// Outer interval: contains `E[p]` for every feasible pseudo-distribution.
    pub interval: IntervalBound,
    /// Values reached by feasible witnesses, when any was found.
    pub inner: Option<IntervalBound>,
    pub lower: EndpointStatus,
    pub upper: EndpointStatus,
    pub degree: u32,
    /// Set when the relaxation itself is infeasible.
    pub refutation: Option<(Certificate, CertificateCheck)>,
    /// Refutation of `E[p] >= hi` backing the upper endpoint, when one was found.
    pub upper_certificate: Option<Certificate>,
    /// Refutation of `E[p] <= lo` backing the lower endpoint.
    pub lower_certificate: Option<Certificate>,
    pub solves: usize,
    pub iterations: usize,
}

impl BoundResult {
    pub fn is_refuted(&self) -> bool {
        self.refutation.is_some()
    }
}

struct SideResult {
    inner: f64,
    outer: f64,
    status: EndpointStatus,
    certificate: Option<Certificate>,
    solves: usize,
    iterations: usize,
}

enum Probe {
    Refuted(Certificate),
    Reached(f64),
    Unknown,
}

/// `base` with the cut `E[p] >= value` (upper) or `E[p] <= value` (lower);
/// the program refuted by an endpoint certificate.
pub fn cut_program(base: &SosProgram, p: &Polynomial, upper: bool, value: f64) -> Result<SosProgram, RelaxError> {
    let mut prog = base.clone();
    let cut = if upper { p - &Polynomial::constant(value) } else { &Polynomial::constant(value) - p };
    prog.add_cut(cut)?;
    Ok(prog)
}

/// Tests `E[q] >= c` against `base`.
fn probe(base: &SosProgram, q: &Polynomial, c: f64, opts: &QueryOptions, side: &mut SideResult) -> Result<Probe, QueryError> {
    let mut prog = base.clone();
    prog.add_cut(q - &Polynomial::constant(c))?;
    let res = solve_escalating(&prog, opts)?;
    side.solves += 1;
    side.iterations += res.iterations;
    Ok(match res.outcome {
        Outcome::Infeasible { certificate, .. } => Probe::Refuted(certificate),
        Outcome::Feasible { moments, .. } => {
            let row = prog.ineq_rows.last().expect("cut row");
            Probe::Reached(row.form.eval(&moments) + c)
        }
        Outcome::Indeterminate { .. } => Probe::Unknown,
    })
}

/// Pushes the upper end of `E[q]` from `[inner, outer]` down to width `eps`.
fn search_upper(base: &SosProgram, q: &Polynomial, inner: f64, outer: f64, opts: &QueryOptions) -> Result<SideResult, QueryError> {
    let eps = opts.epsilon;
    let mut s = SideResult { inner, outer, status: EndpointStatus::Certified, certificate: None, solves: 0, iterations: 0 };
    if s.outer - s.inner <= eps {
        return Ok(s);
    }
    if opts.fast_path {
        let prog = attach_objective(base, q, Sense::Maximize)?;
        let res = optimize(&prog, &opts.solver)?;
        s.solves += 1;
        s.iterations += res.iterations;
        if let OptOutcome::Optimal { interval: (value, bound), .. } = res.outcome {
            s.inner = s.inner.max(value.min(s.outer));
            let c = bound.max(s.inner) + 0.5 * eps;
            if c < s.outer {
                match probe(base, q, c, opts, &mut s)? {
                    Probe::Refuted(cert) => {
                        s.outer = c;
                        s.certificate = Some(cert);
                    }
                    Probe::Reached(v) => s.inner = s.inner.max(v.min(s.outer)),
                    Probe::Unknown => {}
                }
            }
        }
    }
    while s.outer - s.inner > eps {
        let c = 0.5 * (s.inner + s.outer);
        match probe(base, q, c, opts, &mut s)? {
            Probe::Refuted(cert) => {
                s.outer = c;
                s.certificate = Some(cert);
            }
            Probe::Reached(v) => s.inner = s.inner.max(c.min(v)).max(v.min(s.outer)),
            Probe::Unknown => {
                s.status = EndpointStatus::Indeterminate;
                break;
            }
        }
    }
    Ok(s)
}

/// Certified outer interval for `E[p]` under the (learned) relaxation.
pub fn bound_expectation(
    sys: &ConstraintSystem,
    examples: Option<&PartialExampleSet>,
    p: &Polynomial,
    side: Side,
    d: u32,
    opts: &QueryOptions,
) -> Result<BoundResult, QueryError> {
    if !(opts.epsilon > 0.0) {
        return Err(QueryError::InvalidEpsilon(opts.epsilon));
    }
    let prepared = prepare(sys, examples, d, opts)?;
    bound_prepared(&prepared.program, sys, p, side, opts)
}

/// [`bound_expectation`] over an already built relaxation of `sys`.
pub fn bound_prepared(base: &SosProgram, sys: &ConstraintSystem, p: &Polynomial, side: Side, opts: &QueryOptions) -> Result<BoundResult, QueryError> {
    let d = base.degree;
    let p = p.reduce(&base.vars);
    // validates the degree of p before any solve
    attach_objective(base, &p, Sense::Maximize)?;
    let prior = expression_bounds(&p, &PartialAssignment::new(), sys.vars()).map_err(LearnError::from)?;
    let first = solve_escalating(base, opts)?;
    let mut result = BoundResult {
        interval: prior,
        inner: None,
        lower: EndpointStatus::Indeterminate,
        upper: EndpointStatus::Indeterminate,
        degree: d,
        refutation: None,
        upper_certificate: None,
        lower_certificate: None,
        solves: 1,
        iterations: first.iterations,
    };
    let witness = match first.outcome {
        Outcome::Feasible { moments, .. } => moments,
        Outcome::Infeasible { certificate, check } => {
            result.refutation = Some((certificate, check));
            return Ok(result);
        }
        Outcome::Indeterminate { .. } => return Ok(result),
    };
    let form = base.try_form(&p).expect("objective monomials are indexed");
    let v0 = form.eval(&witness).clamp(prior.lo, prior.hi);
    let neg = p.scale(-1.0);
    let want_upper = side != Side::Lower;
    let want_lower = side != Side::Upper;
    let run_upper = || if want_upper { search_upper(base, &p, v0, prior.hi, opts).map(Some) } else { Ok(None) };
    let run_lower = || if want_lower { search_upper(base, &neg, -v0, -prior.lo, opts).map(Some) } else { Ok(None) };
    let (up, lo) = if opts.parallel && want_upper && want_lower {
        std::thread::scope(|scope| {
            let h = scope.spawn(run_lower);
            let up = run_upper();
            (up, h.join().expect("lower search panicked"))
        })
    } else {
        (run_upper(), run_lower())
    };
    let (up, lo) = (up?, lo?);
    let mut inner = IntervalBound::point(v0);
    match up {
        Some(s) => {
            result.interval.hi = s.outer;
            inner.hi = s.inner;
            result.upper = s.status;
            result.upper_certificate = s.certificate;
            result.solves += s.solves;
            result.iterations += s.iterations;
        }
        None => result.upper = EndpointStatus::Skipped,
    }
    match lo {
        Some(s) => {
            result.interval.lo = -s.outer;
            inner.lo = -s.inner;
            result.lower = s.status;
            result.lower_certificate = s.certificate;
            result.solves += s.solves;
            result.iterations += s.iterations;
        }
        None => result.lower = EndpointStatus::Skipped,
    }
    result.inner = Some(inner);
    Ok(result)
}

/// `[lo(ab) / hi(b), hi(ab) / lo(b)]` clipped to `[0, 1]`; the upper end is
/// 1 when `b` may have probability at most `eps`.
pub fn ratio_interval(joint: IntervalBound, marginal: IntervalBound, eps: f64) -> IntervalBound {
    let lo = if marginal.hi > 0.0 { joint.lo / marginal.hi } else { 0.0 };
    let hi = if marginal.lo <= eps { 1.0 } else { joint.hi / marginal.lo };
    let lo = lo.clamp(0.0, 1.0);
    let hi = hi.clamp(0.0, 1.0);
    IntervalBound { lo: lo.min(hi), hi }
}

#[derive(Clone, Debug)]
pub struct ConditionalResult {
    pub interval: IntervalBound,
    pub joint: BoundResult,
    pub marginal: BoundResult,
}

/// Interval for `P(a | b)` from bounds on `E[a b]` and `E[b]`.
pub fn conditional_probability(
    sys: &ConstraintSystem,
    examples: Option<&PartialExampleSet>,
    a: VarId,
    b: VarId,
    d: u32,
    opts: &QueryOptions,
) -> Result<ConditionalResult, QueryError> {
    for v in [a, b] {
        if !sys.vars().is_boolean(v) {
            return Err(QueryError::NotBoolean(sys.vars().name(v).to_string()));
        }
    }
    if !(opts.epsilon > 0.0) {
        return Err(QueryError::InvalidEpsilon(opts.epsilon));
    }
    let prepared = prepare(sys, examples, d, opts)?;
    let ab = (&Polynomial::var(a) * &Polynomial::var(b)).reduce(sys.vars());
    let joint = bound_prepared(&prepared.program, sys, &ab, Side::Both, opts)?;
    let marginal = bound_prepared(&prepared.program, sys, &Polynomial::var(b), Side::Both, opts)?;
    let interval = ratio_interval(joint.interval, marginal.interval, opts.epsilon);
    Ok(ConditionalResult { interval, joint, marginal })
}
