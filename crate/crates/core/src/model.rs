//! Constraint systems: variable declarations, standard axioms, support
//! constraints, moment bounds and clause encodings, plus the line-oriented
//! problem file format.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{monomial_bounds, Monomial, PartialAssignment, PolyError, Polynomial, VarId, VarKind, Variables};
use crate::query::{Query, QueryKind, Side, DEFAULT_EPSILON};
use crate::resolution::CnfFormula;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: {source}")]
    Semantic { line: usize, source: PolyError },
    #[error("constraint mentions variable #{0} which is not declared")]
    Undeclared(u32),
    #[error("clause mentions variable `{0}` more than once")]
    DuplicateLiteral(String),
}

/// Where a support constraint came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Origin {
    BooleanAxiom,
    Complementarity,
    Range,
    Bounding,
    Support,
    Clause,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub poly: Polynomial,
    pub origin: Origin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Le,
    Ge,
}

/// One-sided bound `E[p] <= gamma` or `E[p] >= gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentBound {
    pub poly: Polynomial,
    pub direction: Direction,
    pub gamma: f64,
}

impl MomentBound {
    /// The polynomial whose expectation must be nonnegative.
    pub fn slack(&self) -> Polynomial {
        match self.direction {
            Direction::Le => &Polynomial::constant(self.gamma) - &self.poly,
            Direction::Ge => &self.poly - &Polynomial::constant(self.gamma),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    /// The positive Boolean variable.
    pub var: VarId,
    pub positive: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub literals: Vec<Literal>,
}

impl Clause {
    pub fn new(literals: Vec<Literal>) -> Self {
        Clause { literals }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClauseEncoding {
    /// `sum of literals - 1 >= 0`
    #[default]
    Linear,
    /// `product of negated literals = 0`
    Monomial,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSystem {
    vars: Variables,
    inequalities: Vec<Constraint>,
    equalities: Vec<Constraint>,
    moment_bounds: Vec<MomentBound>,
    clauses: Vec<(Clause, ClauseEncoding)>,
}

impl ConstraintSystem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn vars(&self) -> &Variables {
        &self.vars
    }

    pub fn inequalities(&self) -> &[Constraint] {
        &self.inequalities
    }

    pub fn equalities(&self) -> &[Constraint] {
        &self.equalities
    }

    pub fn moment_bounds(&self) -> &[MomentBound] {
        &self.moment_bounds
    }

    pub fn clauses(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().map(|(c, _)| c)
    }

    /// Declares `x` and `~x` with the Boolean and complementarity axioms.
    pub fn declare_boolean(&mut self, name: &str) -> Result<(VarId, VarId), ModelError> {
        let (x, nx) = self.vars.add_boolean(name)?;
        for v in [x, nx] {
            let sq = Polynomial::term(1.0, Monomial::from_pairs([(v, 2)]));
            self.equalities.push(Constraint { poly: &sq - &Polynomial::var(v), origin: Origin::BooleanAxiom });
        }
        let comp = &(&Polynomial::var(x) + &Polynomial::var(nx)) - &Polynomial::constant(1.0);
        self.equalities.push(Constraint { poly: comp, origin: Origin::Complementarity });
        Ok((x, nx))
    }

    /// Declares a real in `[lo, hi]` with `max(lo^2, hi^2) - t^2 >= 0`.
    pub fn declare_bounded(&mut self, name: &str, lo: f64, hi: f64) -> Result<VarId, ModelError> {
        let t = self.vars.add_bounded(name, lo, hi)?;
        let r2 = (lo * lo).max(hi * hi);
        let poly = &Polynomial::constant(r2) - &Polynomial::term(1.0, Monomial::from_pairs([(t, 2)]));
        self.inequalities.push(Constraint { poly, origin: Origin::Range });
        Ok(t)
    }

    fn check_declared(&self, p: &Polynomial) -> Result<(), ModelError> {
        match p.variables().into_iter().find(|v| v.index() >= self.vars.len()) {
            Some(v) => Err(ModelError::Undeclared(v.0)),
            None => Ok(()),
        }
    }

    /// Registers the support constraint `p >= 0`.
    pub fn add_support_inequality(&mut self, p: Polynomial) -> Result<(), ModelError> {
        self.check_declared(&p)?;
        self.inequalities.push(Constraint { poly: p, origin: Origin::Support });
        Ok(())
    }

    /// Registers the support constraint `p = 0`.
    pub fn add_support_equality(&mut self, p: Polynomial) -> Result<(), ModelError> {
        self.check_declared(&p)?;
        self.equalities.push(Constraint { poly: p, origin: Origin::Support });
        Ok(())
    }

    pub fn add_moment_bound(&mut self, p: Polynomial, direction: Direction, gamma: f64) -> Result<(), ModelError> {
        self.check_declared(&p)?;
        self.moment_bounds.push(MomentBound { poly: p, direction, gamma });
        Ok(())
    }

    pub fn add_clause(&mut self, clause: Clause) -> Result<(), ModelError> {
        self.add_clause_with(clause, ClauseEncoding::Linear)
    }

    pub fn add_clause_with(&mut self, clause: Clause, encoding: ClauseEncoding) -> Result<(), ModelError> {
        let mut seen = Vec::new();
        let mut lits = Vec::new();
        for lit in &clause.literals {
            if lit.var.index() >= self.vars.len() {
                return Err(ModelError::Undeclared(lit.var.0));
            }
            let neg = match self.vars.get(lit.var).kind {
                VarKind::Boolean { negation } => negation,
                _ => return Err(PolyError::NotBoolean(self.vars.name(lit.var).to_string()).into()),
            };
            if seen.contains(&lit.var) {
                return Err(ModelError::DuplicateLiteral(self.vars.name(lit.var).to_string()));
            }
            seen.push(lit.var);
            lits.push(if lit.positive { (lit.var, neg) } else { (neg, lit.var) });
        }
        match encoding {
            ClauseEncoding::Linear => {
                let mut p = Polynomial::constant(-1.0);
                for &(l, _) in &lits {
                    p.add_term(Monomial::var(l), 1.0);
                }
                self.inequalities.push(Constraint { poly: p, origin: Origin::Clause });
            }
            ClauseEncoding::Monomial => {
                let m = Monomial::from_pairs(lits.iter().map(|&(_, nl)| (nl, 1)));
                self.equalities.push(Constraint { poly: Polynomial::term(1.0, m), origin: Origin::Clause });
            }
        }
        self.clauses.push((clause, encoding));
        Ok(())
    }

    /// Builds the system for a CNF, declaring `x1..xn`.
    pub fn from_cnf(cnf: &CnfFormula, encoding: ClauseEncoding) -> Result<(Self, Vec<VarId>), ModelError> {
        let mut sys = ConstraintSystem::new();
        let mut ids = Vec::with_capacity(cnf.num_vars());
        for i in 1..=cnf.num_vars() {
            ids.push(sys.declare_boolean(&format!("x{i}"))?.0);
        }
        for clause in cnf.clauses() {
            let literals = clause
                .iter()
                .map(|&l| Literal { var: ids[l.unsigned_abs() as usize - 1], positive: l > 0 })
                .collect();
            sys.add_clause_with(Clause::new(literals), encoding)?;
        }
        Ok((sys, ids))
    }

    /// Upper/lower bounding inequalities `B - m >= 0`, `m - L >= 0` for every
    /// multilinear monomial of degree `<= degree` that involves a real variable.
    pub fn generate_bounding_inequalities(&self, degree: u32) -> Vec<Polynomial> {
        let ids: Vec<VarId> = self.vars.iter().map(|(id, _)| id).collect();
        let mut out = Vec::new();
        let mut chosen = Vec::new();
        self.bounding_rec(&ids, 0, degree as usize, &mut chosen, &mut out);
        out
    }

    fn bounding_rec(&self, ids: &[VarId], start: usize, room: usize, chosen: &mut Vec<VarId>, out: &mut Vec<Polynomial>) {
        for i in start..ids.len() {
            if room == 0 {
                return;
            }
            chosen.push(ids[i]);
            if chosen.iter().any(|&v| !self.vars.is_boolean(v)) {
                let m = Monomial::from_pairs(chosen.iter().map(|&v| (v, 1)));
                let b = monomial_bounds(&m, &PartialAssignment::new(), &self.vars).expect("declared ranges are finite");
                out.push(&Polynomial::constant(b.hi) - &Polynomial::term(1.0, m.clone()));
                out.push(&Polynomial::term(1.0, m) - &Polynomial::constant(b.lo));
            }
            self.bounding_rec(ids, i + 1, room - 1, chosen, out);
            chosen.pop();
        }
    }

    /// Serializes the user-visible content (declarations, support constraints,
    /// clauses, moment bounds) plus the given queries.
    pub fn to_text(&self, queries: &[Query]) -> String {
        let mut s = String::new();
        for (_, v) in self.vars.iter() {
            match v.kind {
                VarKind::Boolean { .. } => writeln!(s, "var {} : bool", v.name).unwrap(),
                VarKind::BoundedReal { lo, hi } => writeln!(s, "var {} : real [{lo}, {hi}]", v.name).unwrap(),
                VarKind::BooleanNegation { .. } => {}
            }
        }
        for c in self.inequalities.iter().filter(|c| c.origin == Origin::Support) {
            writeln!(s, "support: {} >= 0", c.poly.display(&self.vars)).unwrap();
        }
        for c in self.equalities.iter().filter(|c| c.origin == Origin::Support) {
            writeln!(s, "support: {} = 0", c.poly.display(&self.vars)).unwrap();
        }
        for (clause, _) in &self.clauses {
            let lits: Vec<String> = clause
                .literals
                .iter()
                .map(|l| format!("{}{}", if l.positive { "" } else { "~" }, self.vars.name(l.var)))
                .collect();
            writeln!(s, "clause: {}", lits.join(" | ")).unwrap();
        }
        for mb in &self.moment_bounds {
            let op = if mb.direction == Direction::Le { "<=" } else { ">=" };
            writeln!(s, "moment: E[{}] {op} {}", mb.poly.display(&self.vars), mb.gamma).unwrap();
        }
        for q in queries {
            match &q.kind {
                QueryKind::Decide => writeln!(s, "query decide degree {}", q.degree).unwrap(),
                QueryKind::Bound { poly, .. } => {
                    writeln!(s, "query bound E[{}] degree {}", poly.display(&self.vars), q.degree).unwrap()
                }
                QueryKind::ConditionalProb { .. } => {}
            }
        }
        s
    }
}

/// Parses a problem file into a system and its queries.
pub fn parse_problem(text: &str) -> Result<(ConstraintSystem, Vec<Query>), ModelError> {
    let mut sys = ConstraintSystem::new();
    let mut queries = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        let offset = content.len() - trimmed.len();
        let cx = LineCtx { line: line_no, text: content };
        if let Some(rest) = trimmed.strip_prefix("var ").or_else(|| trimmed.strip_prefix("var\t")) {
            parse_var(&cx, offset + 4, rest, &mut sys)?;
        } else if let Some(rest) = trimmed.strip_prefix("support:") {
            parse_support(&cx, offset + 8, rest, &mut sys)?;
        } else if let Some(rest) = trimmed.strip_prefix("clause:") {
            parse_clause(&cx, offset + 7, rest, &mut sys)?;
        } else if let Some(rest) = trimmed.strip_prefix("moment:") {
            parse_moment(&cx, offset + 7, rest, &mut sys)?;
        } else if let Some(rest) = trimmed.strip_prefix("query ") {
            queries.push(parse_query(&cx, offset + 6, rest, &sys)?);
        } else {
            return Err(cx.syntax(offset, "expected `var`, `support:`, `clause:`, `moment:` or `query`"));
        }
    }
    Ok((sys, queries))
}

struct LineCtx<'a> {
    line: usize,
    text: &'a str,
}

impl LineCtx<'_> {
    /// `offset` is a byte offset into the line; columns are 1-based chars.
    fn syntax(&self, offset: usize, msg: impl Into<String>) -> ModelError {
        let col = self.text[..offset.min(self.text.len())].chars().count() + 1;
        ModelError::Syntax { line: self.line, col, msg: msg.into() }
    }

    fn semantic(&self, e: PolyError) -> ModelError {
        ModelError::Semantic { line: self.line, source: e }
    }

    /// Maps polynomial parse errors to line/column diagnostics.
    fn poly(&self, offset: usize, src: &str, vars: &Variables) -> Result<Polynomial, ModelError> {
        Polynomial::parse(src, vars).map_err(|e| match e {
            PolyError::Syntax { col, msg } => {
                let byte = src.char_indices().nth(col - 1).map(|(b, _)| b).unwrap_or(src.len());
                self.syntax(offset + byte, msg)
            }
            other => self.semantic(other),
        })
    }

    fn number(&self, offset: usize, src: &str) -> Result<f64, ModelError> {
        let t = src.trim();
        let lead = src.len() - src.trim_start().len();
        t.parse::<f64>().map_err(|_| self.syntax(offset + lead, format!("expected a number, found `{t}`")))
    }
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_') && chars.all(|c| c.is_alphanumeric() || c == '_')
}

fn parse_var(cx: &LineCtx, off: usize, rest: &str, sys: &mut ConstraintSystem) -> Result<(), ModelError> {
    let colon = rest.find(':').ok_or_else(|| cx.syntax(off + rest.len(), "expected `:` after variable name"))?;
    let name = rest[..colon].trim();
    if !is_name(name) {
        return Err(cx.syntax(off, format!("invalid variable name `{name}`")));
    }
    let ty_off = off + colon + 1;
    let ty = &rest[colon + 1..];
    let ty_trim = ty.trim();
    if ty_trim == "bool" {
        sys.declare_boolean(name).map_err(|e| match e {
            ModelError::Poly(p) => cx.semantic(p),
            other => other,
        })?;
        return Ok(());
    }
    let lead = ty.len() - ty.trim_start().len();
    let Some(range) = ty_trim.strip_prefix("real") else {
        return Err(cx.syntax(ty_off + lead, "expected `bool` or `real [L, B]`"));
    };
    let r = range.trim();
    let r_off = ty_off + lead + 4 + (range.len() - range.trim_start().len());
    if !(r.starts_with('[') && r.ends_with(']')) {
        return Err(cx.syntax(r_off, "expected `[L, B]`"));
    }
    let inner = &r[1..r.len() - 1];
    let comma = inner.find(',').ok_or_else(|| cx.syntax(r_off + 1, "expected `,` between bounds"))?;
    let lo = cx.number(r_off + 1, &inner[..comma])?;
    let hi = cx.number(r_off + 2 + comma, &inner[comma + 1..])?;
    sys.declare_bounded(name, lo, hi).map_err(|e| match e {
        ModelError::Poly(p) => cx.semantic(p),
        other => other,
    })?;
    Ok(())
}

fn parse_support(cx: &LineCtx, off: usize, rest: &str, sys: &mut ConstraintSystem) -> Result<(), ModelError> {
    let (lhs, rhs, op_at, is_eq) = if let Some(i) = rest.find(">=") {
        (&rest[..i], &rest[i + 2..], i, false)
    } else if let Some(i) = rest.find('=') {
        (&rest[..i], &rest[i + 1..], i, true)
    } else {
        return Err(cx.syntax(off + rest.len(), "expected `>= 0` or `= 0`"));
    };
    let rhs_off = off + op_at + if is_eq { 1 } else { 2 };
    let p = cx.poly(off, lhs, sys.vars())?;
    let q = cx.poly(rhs_off, rhs, sys.vars())?;
    let diff = &p - &q;
    if is_eq {
        sys.add_support_equality(diff)
    } else {
        sys.add_support_inequality(diff)
    }
}

fn parse_clause(cx: &LineCtx, off: usize, rest: &str, sys: &mut ConstraintSystem) -> Result<(), ModelError> {
    let mut literals = Vec::new();
    if !rest.trim().is_empty() {
        let mut pos = 0;
        for part in rest.split('|') {
            let lead = part.len() - part.trim_start().len();
            let t = part.trim();
            let (positive, name) = match t.strip_prefix('~') {
                Some(n) => (false, n.trim()),
                None => (true, t),
            };
            if !is_name(name) {
                return Err(cx.syntax(off + pos + lead, format!("expected a literal, found `{t}`")));
            }
            let var = sys
                .vars()
                .lookup(name)
                .ok_or_else(|| cx.semantic(PolyError::UnknownVariable(name.to_string())))?;
            if !matches!(sys.vars().get(var).kind, VarKind::Boolean { .. }) {
                return Err(cx.semantic(PolyError::NotBoolean(name.to_string())));
            }
            literals.push(Literal { var, positive });
            pos += part.len() + 1;
        }
    }
    sys.add_clause(Clause::new(literals)).map_err(|e| match e {
        ModelError::Poly(p) => cx.semantic(p),
        ModelError::DuplicateLiteral(n) => cx.syntax(off, format!("variable `{n}` appears twice in clause")),
        other => other,
    })
}

/// Parses `E[<poly>]` at the start of `s`; returns the polynomial and the
/// byte length consumed.
fn parse_expectation(cx: &LineCtx, off: usize, s: &str, vars: &Variables) -> Result<(Polynomial, usize), ModelError> {
    let lead = s.len() - s.trim_start().len();
    let t = &s[lead..];
    if !t.starts_with("E[") {
        return Err(cx.syntax(off + lead, "expected `E[`"));
    }
    let close = t.find(']').ok_or_else(|| cx.syntax(off + s.len(), "missing `]`"))?;
    let p = cx.poly(off + lead + 2, &t[2..close], vars)?;
    Ok((p, lead + close + 1))
}

fn parse_moment(cx: &LineCtx, off: usize, rest: &str, sys: &mut ConstraintSystem) -> Result<(), ModelError> {
    let (p, used) = parse_expectation(cx, off, rest, sys.vars())?;
    let tail = &rest[used..];
    let lead = tail.len() - tail.trim_start().len();
    let t = tail.trim_start();
    let (dir, num) = if let Some(n) = t.strip_prefix("<=") {
        (Direction::Le, n)
    } else if let Some(n) = t.strip_prefix(">=") {
        (Direction::Ge, n)
    } else {
        return Err(cx.syntax(off + used + lead, "expected `<=` or `>=`"));
    };
    let gamma = cx.number(off + used + lead + 2, num)?;
    sys.add_moment_bound(p, dir, gamma)
}

fn parse_degree(cx: &LineCtx, off: usize, s: &str) -> Result<u32, ModelError> {
    let lead = s.len() - s.trim_start().len();
    let t = s.trim();
    let Some(num) = t.strip_prefix("degree") else {
        return Err(cx.syntax(off + lead, "expected `degree <d>`"));
    };
    num.trim()
        .parse::<u32>()
        .map_err(|_| cx.syntax(off + lead + 6, format!("expected a degree, found `{}`", num.trim())))
}

fn parse_query(cx: &LineCtx, off: usize, rest: &str, sys: &ConstraintSystem) -> Result<Query, ModelError> {
    let lead = rest.len() - rest.trim_start().len();
    let t = rest.trim_start();
    if let Some(r) = t.strip_prefix("decide") {
        let degree = parse_degree(cx, off + lead + 6, r)?;
        Ok(Query { kind: QueryKind::Decide, degree, epsilon: DEFAULT_EPSILON })
    } else if let Some(r) = t.strip_prefix("bound") {
        let base = off + lead + 5;
        let (poly, used) = parse_expectation(cx, base, r, sys.vars())?;
        let degree = parse_degree(cx, base + used, &r[used..])?;
        Ok(Query { kind: QueryKind::Bound { poly, side: Side::Both }, degree, epsilon: DEFAULT_EPSILON })
    } else {
        Err(cx.syntax(off + lead, "expected `decide` or `bound`"))
    }
}

/// Parses DIMACS CNF text.
pub fn parse_dimacs(text: &str) -> Result<CnfFormula, ModelError> {
    let mut num_vars: Option<usize> = None;
    let mut clauses = Vec::new();
    let mut current: Vec<i32> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line_no = ln + 1;
        if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
            continue;
        }
        if line.starts_with('p') {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 || parts[1] != "cnf" {
                return Err(ModelError::Syntax { line: line_no, col: 1, msg: "expected `p cnf <vars> <clauses>`".into() });
            }
            num_vars = Some(parts[2].parse().map_err(|_| ModelError::Syntax {
                line: line_no,
                col: raw.find(parts[2]).unwrap_or(0) + 1,
                msg: "bad variable count".into(),
            })?);
            continue;
        }
        let n = num_vars.ok_or(ModelError::Syntax { line: line_no, col: 1, msg: "clause before `p cnf` header".into() })?;
        for tok in line.split_whitespace() {
            let col = raw.find(tok).unwrap_or(0) + 1;
            let lit: i32 = tok
                .parse()
                .map_err(|_| ModelError::Syntax { line: line_no, col, msg: format!("bad literal `{tok}`") })?;
            if lit == 0 {
                clauses.push(std::mem::take(&mut current));
            } else if lit.unsigned_abs() as usize > n {
                return Err(ModelError::Syntax { line: line_no, col, msg: format!("literal {lit} exceeds {n} variables") });
            } else {
                current.push(lit);
            }
        }
    }
    if !current.is_empty() {
        clauses.push(current);
    }
    let n = num_vars.ok_or(ModelError::Syntax { line: 1, col: 1, msg: "missing `p cnf` header".into() })?;
    Ok(CnfFormula::new(n, clauses))
}
