//! Unit propagation and bounded-level refutations of CNF formulas, with a
//! cross-check against the moment relaxation of the clause encoding.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::{ClauseEncoding, ConstraintSystem, ModelError};
use crate::relax::build_program;
use crate::sdp::{solve, Outcome, SdpError, SolverOptions};

/// CNF over variables `1..=n`; literals are signed integers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfFormula {
    num_vars: usize,
    clauses: Vec<Vec<i32>>,
}

impl CnfFormula {
    /// Repeated literals are merged and tautological clauses dropped.
    pub fn new(num_vars: usize, clauses: Vec<Vec<i32>>) -> Self {
        let mut out = Vec::with_capacity(clauses.len());
        'next: for mut c in clauses {
            c.sort_by_key(|l| (l.unsigned_abs(), *l < 0));
            c.dedup();
            for w in c.windows(2) {
                if w[0] == -w[1] {
                    continue 'next;
                }
            }
            out.push(c);
        }
        CnfFormula { num_vars, clauses: out }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn clauses(&self) -> &[Vec<i32>] {
        &self.clauses
    }

    /// Brute-force satisfiability; for small formulas and tests.
    pub fn is_satisfiable_bruteforce(&self) -> bool {
        assert!(self.num_vars <= 24, "brute force limited to 24 variables");
        (0u32..1 << self.num_vars).any(|bits| {
            self.clauses.iter().all(|c| {
                c.iter().any(|&l| {
                    let val = bits >> (l.unsigned_abs() - 1) & 1 == 1;
                    val == (l > 0)
                })
            })
        })
    }
}

/// Partial assignment of CNF variables.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    values: Vec<Option<bool>>,
}

impl Assignment {
    pub fn empty(num_vars: usize) -> Self {
        Assignment { values: vec![None; num_vars + 1] }
    }

    pub fn from_literals(num_vars: usize, lits: &[i32]) -> Self {
        let mut a = Self::empty(num_vars);
        for &l in lits {
            a.set(l);
        }
        a
    }

    pub fn value(&self, var: usize) -> Option<bool> {
        self.values[var]
    }

    pub fn set(&mut self, lit: i32) {
        self.values[lit.unsigned_abs() as usize] = Some(lit > 0);
    }

    fn lit_value(&self, lit: i32) -> Option<bool> {
        self.values[lit.unsigned_abs() as usize].map(|v| v == (lit > 0))
    }

    /// Assigned literals in variable order.
    pub fn literals(&self) -> Vec<i32> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(v, val)| val.map(|b| if b { v as i32 } else { -(v as i32) }))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Propagation {
    /// New literals were implied (in order) and no clause is falsified.
    Extended { assignment: Assignment, implied: Vec<i32> },
    /// A clause is falsified; literals implied before the conflict are listed.
    Conflict { clause: usize, implied: Vec<i32> },
    Fixpoint,
}

/// Repeatedly assigns the last open literal of clauses whose other literals
/// are false.
pub fn unit_propagate(cnf: &CnfFormula, rho: &Assignment) -> Propagation {
    let mut a = rho.clone();
    let mut implied = Vec::new();
    loop {
        let mut changed = false;
        for (ci, clause) in cnf.clauses.iter().enumerate() {
            let mut open = None;
            let mut open_count = 0;
            let mut satisfied = false;
            for &l in clause {
                match a.lit_value(l) {
                    Some(true) => {
                        satisfied = true;
                        break;
                    }
                    Some(false) => {}
                    None => {
                        open_count += 1;
                        open = Some(l);
                    }
                }
            }
            if satisfied {
                continue;
            }
            match open_count {
                0 => return Propagation::Conflict { clause: ci, implied },
                1 => {
                    let l = open.expect("one open literal");
                    a.set(l);
                    implied.push(l);
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    if implied.is_empty() {
        Propagation::Fixpoint
    } else {
        Propagation::Extended { assignment: a, implied }
    }
}

/// Refutation tree: after propagating `implied`, each step probes a literal,
/// refutes it one level down, and asserts its negation (propagating
/// `then_implied`), until `conflict` is falsified.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefutationTrace {
    pub level: u32,
    pub implied: Vec<i32>,
    pub steps: Vec<ProbeStep>,
    pub conflict: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeStep {
    pub probe: i32,
    pub refutation: RefutationTrace,
    pub then_implied: Vec<i32>,
}

impl RefutationTrace {
    /// Indented human-readable rendering.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        self.render(0, &mut s);
        s
    }

    fn render(&self, depth: usize, s: &mut String) {
        let pad = "  ".repeat(depth);
        writeln!(s, "{pad}level {}: propagate {:?}", self.level, self.implied).unwrap();
        for st in &self.steps {
            writeln!(s, "{pad}  probe {}:", st.probe).unwrap();
            st.refutation.render(depth + 2, s);
            writeln!(s, "{pad}  assert {} and propagate {:?}", -st.probe, st.then_implied).unwrap();
        }
        writeln!(s, "{pad}conflict in clause {}", self.conflict).unwrap();
    }

    /// Replays the trace from `rho`; true when every step is justified.
    pub fn check(&self, cnf: &CnfFormula, rho: &Assignment) -> bool {
        let mut a = rho.clone();
        let mut pending = self.implied.clone();
        let mut steps = self.steps.iter();
        loop {
            match unit_propagate(cnf, &a) {
                Propagation::Conflict { clause, implied } => {
                    return implied == pending && clause == self.conflict && steps.next().is_none();
                }
                Propagation::Extended { assignment, implied } => {
                    if implied != pending {
                        return false;
                    }
                    a = assignment;
                }
                Propagation::Fixpoint => {
                    if !pending.is_empty() {
                        return false;
                    }
                }
            }
            let Some(st) = steps.next() else { return false };
            if self.level == 0 || st.refutation.level + 1 > self.level || a.lit_value(st.probe).is_some() {
                return false;
            }
            let mut probe = a.clone();
            probe.set(st.probe);
            if !st.refutation.check(cnf, &probe) {
                return false;
            }
            a.set(-st.probe);
            pending = st.then_implied.clone();
        }
    }
}

/// Searches for a level-`s` refutation of `cnf` under `rho`.
pub fn level_s_refute(cnf: &CnfFormula, rho: &Assignment, s: u32) -> Option<RefutationTrace> {
    let mut memo = HashMap::new();
    refute(cnf, rho, s, &mut memo)
}

fn refute(cnf: &CnfFormula, rho: &Assignment, s: u32, memo: &mut HashMap<(Assignment, u32), Option<RefutationTrace>>) -> Option<RefutationTrace> {
    let key = (rho.clone(), s);
    if let Some(hit) = memo.get(&key) {
        return hit.clone();
    }
    let result = refute_uncached(cnf, rho, s, memo);
    memo.insert(key, result.clone());
    result
}

fn refute_uncached(
    cnf: &CnfFormula,
    rho: &Assignment,
    s: u32,
    memo: &mut HashMap<(Assignment, u32), Option<RefutationTrace>>,
) -> Option<RefutationTrace> {
    let (mut a, implied) = match unit_propagate(cnf, rho) {
        Propagation::Conflict { clause, implied } => {
            return Some(RefutationTrace { level: s, implied, steps: Vec::new(), conflict: clause })
        }
        Propagation::Extended { assignment, implied } => (assignment, implied),
        Propagation::Fixpoint => (rho.clone(), Vec::new()),
    };
    if s == 0 {
        return None;
    }
    let mut steps = Vec::new();
    'scan: loop {
        for v in 1..=cnf.num_vars {
            if a.value(v).is_some() {
                continue;
            }
            for lit in [v as i32, -(v as i32)] {
                let mut probe = a.clone();
                probe.set(lit);
                let Some(sub) = refute(cnf, &probe, s - 1, memo) else { continue };
                a.set(-lit);
                match unit_propagate(cnf, &a) {
                    Propagation::Conflict { clause, implied: then } => {
                        steps.push(ProbeStep { probe: lit, refutation: sub, then_implied: then });
                        return Some(RefutationTrace { level: s, implied, steps, conflict: clause });
                    }
                    Propagation::Extended { assignment, implied: then } => {
                        steps.push(ProbeStep { probe: lit, refutation: sub, then_implied: then });
                        a = assignment;
                    }
                    Propagation::Fixpoint => {
                        steps.push(ProbeStep { probe: lit, refutation: sub, then_implied: Vec::new() });
                    }
                }
                continue 'scan;
            }
        }
        return None;
    }
}

/// Smallest level `<= max_level` at which `cnf` is refutable.
pub fn refutation_level(cnf: &CnfFormula, max_level: u32) -> Option<u32> {
    let empty = Assignment::empty(cnf.num_vars());
    (0..=max_level).find(|&s| level_s_refute(cnf, &empty, s).is_some())
}

#[derive(Debug, thiserror::Error)]
pub enum CrossCheckError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Clone, Debug)]
pub struct CrossCheck {
    pub level: u32,
    pub degree: u32,
    pub resolution_refutes: bool,
    pub trace: Option<RefutationTrace>,
    /// Outcome of the degree-`(s+1)` relaxation of the linear clause encoding.
    pub relaxation: Outcome,
    pub iterations: usize,
}

impl CrossCheck {
    /// A level-`s` refutation must be matched by an infeasible relaxation.
    pub fn consistent(&self) -> bool {
        !self.resolution_refutes || self.relaxation.is_infeasible()
    }
}

/// Runs the level-`s` search and the degree-`(s+1)` relaxation; the
/// iteration budget grows (up to 16x) while the relaxation is indeterminate.
pub fn crosscheck_sos(cnf: &CnfFormula, s: u32, opts: &SolverOptions) -> Result<CrossCheck, CrossCheckError> {
    let trace = level_s_refute(cnf, &Assignment::empty(cnf.num_vars()), s);
    let (sys, _) = ConstraintSystem::from_cnf(cnf, ClauseEncoding::Linear)?;
    let degree = s + 1;
    let prog = build_program(&sys, degree).map_err(SdpError::from)?;
    let mut o = opts.clone();
    let mut total = 0;
    let mut result = solve(&prog, &o)?;
    total += result.iterations;
    for _ in 0..2 {
        if !matches!(result.outcome, Outcome::Indeterminate { .. }) {
            break;
        }
        o.max_iter *= 4;
        result = solve(&prog, &o)?;
        total += result.iterations;
    }
    Ok(CrossCheck { level: s, degree, resolution_refutes: trace.is_some(), trace, relaxation: result.outcome, iterations: total })
}
