//! Sparse polynomials over named variables.
//!
//! Variables are either Boolean literals (a positive literal and its negation
//! twin, both ranging over {0, 1}) or reals with a declared finite range.
//! Monomials are sorted exponent lists; polynomials map monomials to `f64`
//! coefficients with graded-lexicographic term order.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("value {value} for `{name}` is outside its range [{lo}, {hi}]")]
    Domain { name: String, value: f64, lo: f64, hi: f64 },
    #[error("variable `{0}` is already declared")]
    DuplicateName(String),
    #[error("invalid range [{lo}, {hi}] for `{name}`: bounds must be finite with lo <= hi")]
    InvalidRange { name: String, lo: f64, hi: f64 },
    #[error("undeclared variable `{0}`")]
    UnknownVariable(String),
    #[error("`{0}` is not a Boolean variable")]
    NotBoolean(String),
    #[error("inconsistent Boolean pair `{name}`: literal and negation must sum to 1")]
    InconsistentPair { name: String },
    #[error("column {col}: {msg}")]
    Syntax { col: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum VarKind {
    Boolean { negation: VarId },
    BooleanNegation { partner: VarId },
    BoundedReal { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

/// Declaration table. A Boolean `x` is stored as two entries, `x` and `~x`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Variables {
    vars: Vec<Variable>,
    #[serde(skip)]
    by_name: HashMap<String, VarId>,
}

impl Variables {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: String, kind: VarKind) -> VarId {
        let id = VarId(self.vars.len() as u32);
        self.by_name.insert(name.clone(), id);
        self.vars.push(Variable { name, kind });
        id
    }

    fn check_name(&self, name: &str) -> Result<(), PolyError> {
        if self.by_name.contains_key(name) || self.by_name.contains_key(&format!("~{name}")) {
            return Err(PolyError::DuplicateName(name.to_string()));
        }
        Ok(())
    }

    /// Declares `name` and its negation `~name`; returns `(x, ~x)`.
    pub fn add_boolean(&mut self, name: &str) -> Result<(VarId, VarId), PolyError> {
        self.check_name(name)?;
        let pos = VarId(self.vars.len() as u32);
        let neg = VarId(pos.0 + 1);
        self.push(name.to_string(), VarKind::Boolean { negation: neg });
        self.push(format!("~{name}"), VarKind::BooleanNegation { partner: pos });
        Ok((pos, neg))
    }

    pub fn add_bounded(&mut self, name: &str, lo: f64, hi: f64) -> Result<VarId, PolyError> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(PolyError::InvalidRange { name: name.to_string(), lo, hi });
        }
        self.check_name(name)?;
        Ok(self.push(name.to_string(), VarKind::BoundedReal { lo, hi }))
    }

    /// Appends a copy of `v` (and its Boolean twin, when present) under a new
    /// name. Used to give each partial example its own indeterminates.
    pub(crate) fn add_copy(&mut self, v: VarId, suffix: &str) -> VarId {
        let var = self.get(v).clone();
        match var.kind {
            VarKind::BoundedReal { .. } => self.push(format!("{}{suffix}", var.name), var.kind),
            VarKind::Boolean { negation } => {
                let pos = VarId(self.vars.len() as u32);
                let neg = VarId(pos.0 + 1);
                let neg_name = self.get(negation).name.clone();
                self.push(format!("{}{suffix}", var.name), VarKind::Boolean { negation: neg });
                self.push(format!("{neg_name}{suffix}"), VarKind::BooleanNegation { partner: pos });
                pos
            }
            VarKind::BooleanNegation { partner } => {
                let pos = self.add_copy(partner, suffix);
                self.negation_of(pos).expect("copied Boolean has a twin")
            }
        }
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn get(&self, id: VarId) -> &Variable {
        &self.vars[id.index()]
    }

    pub fn name(&self, id: VarId) -> &str {
        &self.vars[id.index()].name
    }

    pub fn lookup(&self, name: &str) -> Option<VarId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, &Variable)> {
        self.vars.iter().enumerate().map(|(i, v)| (VarId(i as u32), v))
    }

    /// Range used for bounding; Boolean literals are treated as [0, 1].
    pub fn range(&self, id: VarId) -> (f64, f64) {
        match self.get(id).kind {
            VarKind::BoundedReal { lo, hi } => (lo, hi),
            _ => (0.0, 1.0),
        }
    }

    pub fn is_boolean(&self, id: VarId) -> bool {
        !matches!(self.get(id).kind, VarKind::BoundedReal { .. })
    }

    pub fn negation_of(&self, id: VarId) -> Option<VarId> {
        match self.get(id).kind {
            VarKind::Boolean { negation } => Some(negation),
            VarKind::BooleanNegation { partner } => Some(partner),
            VarKind::BoundedReal { .. } => None,
        }
    }

    /// Rebuilds the name lookup (needed after deserialization).
    pub fn reindex(&mut self) {
        self.by_name = self.iter().map(|(id, v)| (v.name.clone(), id)).collect();
    }
}

/// A product of variable powers; entries sorted by variable, exponents > 0.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial(Vec<(VarId, u32)>);

impl Monomial {
    pub fn one() -> Self {
        Monomial(Vec::new())
    }

    pub fn var(v: VarId) -> Self {
        Monomial(vec![(v, 1)])
    }

    pub fn from_pairs<I: IntoIterator<Item = (VarId, u32)>>(pairs: I) -> Self {
        let mut map: BTreeMap<VarId, u32> = BTreeMap::new();
        for (v, e) in pairs {
            *map.entry(v).or_insert(0) += e;
        }
        Monomial(map.into_iter().filter(|&(_, e)| e > 0).collect())
    }

    pub fn factors(&self) -> &[(VarId, u32)] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e).sum()
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_multilinear(&self) -> bool {
        self.0.iter().all(|&(_, e)| e == 1)
    }

    pub fn exponent(&self, v: VarId) -> u32 {
        self.0
            .binary_search_by_key(&v, |&(w, _)| w)
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }

    /// Boolean exponent reduction: `x^k -> x` for Boolean literals.
    pub fn reduce(&self, vars: &Variables) -> Monomial {
        Monomial(
            self.0
                .iter()
                .map(|&(v, e)| if vars.is_boolean(v) { (v, 1) } else { (v, e) })
                .collect(),
        )
    }

    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0.iter().map(|&(v, e)| point[v.index()].powi(e as i32)).product()
    }

    pub fn map_vars(&self, f: impl Fn(VarId) -> VarId) -> Monomial {
        Monomial::from_pairs(self.0.iter().map(|&(v, e)| (f(v), e)))
    }

    fn expanded(&self) -> impl Iterator<Item = VarId> + '_ {
        self.0.iter().flat_map(|&(v, e)| std::iter::repeat_n(v, e as usize))
    }

    pub fn display<'a>(&'a self, vars: &'a Variables) -> impl fmt::Display + 'a {
        MonomialDisplay { mono: self, vars }
    }
}

impl Ord for Monomial {
    /// Graded order; ties broken lexicographically on the sorted variable
    /// list, so `1 < x0 < x1 < x0^2 < x0*x1 < x1^2`.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.expanded().cmp(other.expanded()))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct MonomialDisplay<'a> {
    mono: &'a Monomial,
    vars: &'a Variables,
}

impl fmt::Display for MonomialDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.mono.is_one() {
            return write!(f, "1");
        }
        for (i, &(v, e)) in self.mono.0.iter().enumerate() {
            if i > 0 {
                write!(f, "*")?;
            }
            write!(f, "{}", self.vars.name(v))?;
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        Ok(())
    }
}

/// Sparse polynomial; no stored coefficient is exactly zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::term(c, Monomial::one())
    }

    pub fn var(v: VarId) -> Self {
        Self::term(1.0, Monomial::var(v))
    }

    pub fn term(c: f64, m: Monomial) -> Self {
        let mut p = Self::zero();
        p.add_term(m, c);
        p
    }

    pub fn from_terms<I: IntoIterator<Item = (Monomial, f64)>>(terms: I) -> Self {
        let mut p = Self::zero();
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        if c == 0.0 {
            return;
        }
        match self.terms.entry(m) {
            Entry::Vacant(e) => {
                e.insert(c);
            }
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if *e.get() == 0.0 {
                    e.remove();
                }
            }
        }
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn constant_term(&self) -> f64 {
        self.coefficient(&Monomial::one())
    }

    /// `Some(c)` when the polynomial is the constant `c` (zero included).
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => self.terms.get(&Monomial::one()).copied(),
            _ => None,
        }
    }

    pub fn variables(&self) -> Vec<VarId> {
        let mut vs: Vec<VarId> = self.terms.keys().flat_map(|m| m.0.iter().map(|&(v, _)| v)).collect();
        vs.sort();
        vs.dedup();
        vs
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(m, &c)| (m.clone(), c * s)))
    }

    pub fn reduce(&self, vars: &Variables) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(m, &c)| (m.reduce(vars), c)))
    }

    pub fn map_vars(&self, f: impl Fn(VarId) -> VarId) -> Polynomial {
        Polynomial::from_terms(self.terms.iter().map(|(m, &c)| (m.map_vars(&f), c)))
    }

    /// Evaluates at a total assignment indexed by `VarId`.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(point)).sum()
    }

    /// Substitutes the assigned variables of `rho` and collects terms.
    pub fn partial_eval(&self, rho: &PartialAssignment, vars: &Variables) -> Result<Polynomial, PolyError> {
        rho.validate(vars)?;
        let mut out = Polynomial::zero();
        for (m, &c) in &self.terms {
            let mut coef = c;
            let mut rest = Vec::with_capacity(m.0.len());
            for &(v, e) in &m.0 {
                match rho.get(v) {
                    Some(val) => coef *= val.powi(e as i32),
                    None => rest.push((v, e)),
                }
            }
            out.add_term(Monomial(rest), coef);
        }
        Ok(out)
    }

    /// Parses the text syntax, e.g. `2*x*y - 3*z^2 + ~b + 0.5`.
    pub fn parse(text: &str, vars: &Variables) -> Result<Polynomial, PolyError> {
        parse_polynomial(text, vars)
    }

    pub fn display<'a>(&'a self, vars: &'a Variables) -> impl fmt::Display + 'a {
        PolyDisplay { poly: self, vars }
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, &c) in &rhs.terms {
            out.add_term(m.clone(), c);
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, &c) in &rhs.terms {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut acc: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &rhs.terms {
                *acc.entry(a.mul(b)).or_insert(0.0) += ca * cb;
            }
        }
        Polynomial::from_terms(acc)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $f:ident) => {
        impl $tr for Polynomial {
            type Output = Polynomial;
            fn $f(self, rhs: Polynomial) -> Polynomial {
                (&self).$f(&rhs)
            }
        }
    };
}
forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Serialize for Polynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.terms.iter())
    }
}

impl<'de> Deserialize<'de> for Polynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let terms: Vec<(Monomial, f64)> = Vec::deserialize(d)?;
        let terms = terms.into_iter().map(|(m, c)| (Monomial::from_pairs(m.0), c));
        Ok(Polynomial::from_terms(terms))
    }
}

struct PolyDisplay<'a> {
    poly: &'a Polynomial,
    vars: &'a Variables,
}

impl fmt::Display for PolyDisplay<'_> {
    /// Highest degree first, graded order within a degree; coefficients of
    /// magnitude 1 are elided.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.poly.is_zero() {
            return write!(f, "0");
        }
        let mut terms: Vec<(&Monomial, f64)> = self.poly.terms().collect();
        terms.sort_by(|a, b| b.0.degree().cmp(&a.0.degree()).then_with(|| a.0.cmp(b.0)));
        for (i, (m, c)) in terms.into_iter().enumerate() {
            let mag = c.abs();
            match (i, c < 0.0) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            if m.is_one() {
                write!(f, "{mag}")?;
            } else if mag == 1.0 {
                write!(f, "{}", m.display(self.vars))?;
            } else {
                write!(f, "{mag}*{}", m.display(self.vars))?;
            }
        }
        Ok(())
    }
}

/// Assignment to a subset of the variables; absent means missing (`*`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialAssignment {
    values: BTreeMap<VarId, f64>,
}

impl PartialAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I: IntoIterator<Item = (VarId, f64)>>(pairs: I) -> Self {
        PartialAssignment { values: pairs.into_iter().collect() }
    }

    pub fn assign(&mut self, v: VarId, value: f64) {
        self.values.insert(v, value);
    }

    pub fn unassign(&mut self, v: VarId) {
        self.values.remove(&v);
    }

    pub fn get(&self, v: VarId) -> Option<f64> {
        self.values.get(&v).copied()
    }

    pub fn is_assigned(&self, v: VarId) -> bool {
        self.values.contains_key(&v)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarId, f64)> + '_ {
        self.values.iter().map(|(&v, &x)| (v, x))
    }

    /// Checks ranges, {0, 1} values for literals and pair consistency.
    pub fn validate(&self, vars: &Variables) -> Result<(), PolyError> {
        for (v, x) in self.iter() {
            let var = vars.get(v);
            let (lo, hi) = vars.range(v);
            let ok = if vars.is_boolean(v) { x == 0.0 || x == 1.0 } else { x >= lo && x <= hi };
            if !ok {
                return Err(PolyError::Domain { name: var.name.clone(), value: x, lo, hi });
            }
            if let Some(twin) = vars.negation_of(v) {
                if let Some(y) = self.get(twin) {
                    if x + y != 1.0 {
                        return Err(PolyError::InconsistentPair { name: var.name.clone() });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalBound {
    pub lo: f64,
    pub hi: f64,
}

impl IntervalBound {
    pub fn point(x: f64) -> Self {
        IntervalBound { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    fn times(self, other: IntervalBound) -> IntervalBound {
        let c = [self.lo * other.lo, self.lo * other.hi, self.hi * other.lo, self.hi * other.hi];
        IntervalBound {
            lo: c.iter().copied().fold(f64::INFINITY, f64::min),
            hi: c.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Range of `t^k` for `t` in `[lo, hi]`.
fn power_interval(lo: f64, hi: f64, k: u32) -> IntervalBound {
    let (a, b) = (lo.powi(k as i32), hi.powi(k as i32));
    if k % 2 == 1 {
        IntervalBound { lo: a, hi: b }
    } else if lo <= 0.0 && hi >= 0.0 {
        IntervalBound { lo: 0.0, hi: a.max(b) }
    } else {
        IntervalBound { lo: a.min(b), hi: a.max(b) }
    }
}

/// Lower and upper bound on a monomial over all in-range completions of `rho`.
///
/// Assigned variables contribute fixed powers. The unassigned factors are
/// swept left to right keeping the extreme achievable products, which are
/// the endpoints of the running product interval.
pub fn monomial_bounds(mono: &Monomial, rho: &PartialAssignment, vars: &Variables) -> Result<IntervalBound, PolyError> {
    let mut acc = IntervalBound::point(1.0);
    for &(v, e) in mono.factors() {
        let factor = match rho.get(v) {
            Some(x) => {
                let (lo, hi) = vars.range(v);
                if !(x >= lo && x <= hi) {
                    return Err(PolyError::Domain { name: vars.name(v).to_string(), value: x, lo, hi });
                }
                IntervalBound::point(x.powi(e as i32))
            }
            None => {
                let (lo, hi) = vars.range(v);
                power_interval(lo, hi, e)
            }
        };
        acc = acc.times(factor);
    }
    Ok(acc)
}

/// Term-wise interval bound of `p` under `rho`.
pub fn expression_bounds(p: &Polynomial, rho: &PartialAssignment, vars: &Variables) -> Result<IntervalBound, PolyError> {
    let (mut lo, mut hi) = (0.0, 0.0);
    for (m, c) in p.terms() {
        let b = monomial_bounds(m, rho, vars)?;
        if c > 0.0 {
            hi += c * b.hi;
            lo += c * b.lo;
        } else {
            hi += c * b.lo;
            lo += c * b.hi;
        }
    }
    Ok(IntervalBound { lo, hi })
}

pub fn naive_norm(p: &Polynomial, vars: &Variables) -> Result<f64, PolyError> {
    let b = expression_bounds(p, &PartialAssignment::new(), vars)?;
    Ok(b.hi.max(b.lo.abs()))
}

/// Whether `p >= 0` holds for every completion of `rho` by term-wise bounds.
pub fn is_witnessed(p: &Polynomial, rho: &PartialAssignment, vars: &Variables) -> Result<bool, PolyError> {
    Ok(expression_bounds(p, rho, vars)?.lo >= 0.0)
}

// ---------------------------------------------------------------------------
// Text syntax

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Tilde,
    Star,
    Caret,
    Plus,
    Minus,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, PolyError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '~' => {
                out.push((col, Tok::Tilde));
                i += 1
            }
            '*' => {
                out.push((col, Tok::Star));
                i += 1
            }
            '^' => {
                out.push((col, Tok::Caret));
                i += 1
            }
            '+' => {
                out.push((col, Tok::Plus));
                i += 1
            }
            '-' => {
                out.push((col, Tok::Minus));
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| PolyError::Syntax { col, msg: format!("bad number `{s}`") })?;
                out.push((col, Tok::Num(v)));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((col, Tok::Ident(chars[start..i].iter().collect())));
            }
            other => return Err(PolyError::Syntax { col, msg: format!("unexpected character `{other}`") }),
        }
    }
    Ok(out)
}

fn parse_polynomial(text: &str, vars: &Variables) -> Result<Polynomial, PolyError> {
    let toks = tokenize(text)?;
    let end_col = text.chars().count() + 1;
    let mut pos = 0;
    let mut poly = Polynomial::zero();
    if toks.is_empty() {
        return Err(PolyError::Syntax { col: end_col, msg: "empty expression".into() });
    }
    let col_at = |p: usize| toks.get(p).map(|t| t.0).unwrap_or(end_col);
    let mut first = true;
    while pos < toks.len() {
        let mut sign = 1.0;
        let mut saw_sign = false;
        while let Some((_, t @ (Tok::Plus | Tok::Minus))) = toks.get(pos) {
            if *t == Tok::Minus {
                sign = -sign;
            }
            saw_sign = true;
            pos += 1;
        }
        if !first && !saw_sign {
            return Err(PolyError::Syntax { col: col_at(pos), msg: "expected `+` or `-` between terms".into() });
        }
        first = false;
        let mut coef = sign;
        let mut factors = Vec::new();
        loop {
            match toks.get(pos) {
                Some((_, Tok::Num(v))) => {
                    coef *= v;
                    pos += 1;
                }
                Some((col, Tok::Tilde)) => {
                    pos += 1;
                    match toks.get(pos) {
                        Some((c2, Tok::Ident(name))) => {
                            let v = vars.lookup(name).ok_or_else(|| PolyError::UnknownVariable(name.clone()))?;
                            let neg = match vars.get(v).kind {
                                VarKind::Boolean { negation } => negation,
                                _ => {
                                    return Err(PolyError::Syntax {
                                        col: *c2,
                                        msg: format!("`~` applies only to Boolean variables, not `{name}`"),
                                    })
                                }
                            };
                            pos += 1;
                            let e = parse_power(&toks, &mut pos, end_col)?;
                            factors.push((neg, e));
                        }
                        _ => return Err(PolyError::Syntax { col: *col, msg: "expected variable after `~`".into() }),
                    }
                }
                Some((_, Tok::Ident(name))) => {
                    let v = vars.lookup(name).ok_or_else(|| PolyError::UnknownVariable(name.clone()))?;
                    pos += 1;
                    let e = parse_power(&toks, &mut pos, end_col)?;
                    factors.push((v, e));
                }
                _ => return Err(PolyError::Syntax { col: col_at(pos), msg: "expected a number or variable".into() }),
            }
            if let Some((_, Tok::Star)) = toks.get(pos) {
                pos += 1;
                continue;
            }
            break;
        }
        poly.add_term(Monomial::from_pairs(factors), coef);
    }
    Ok(poly)
}

fn parse_power(toks: &[(usize, Tok)], pos: &mut usize, end_col: usize) -> Result<u32, PolyError> {
    if let Some((col, Tok::Caret)) = toks.get(*pos) {
        *pos += 1;
        match toks.get(*pos) {
            Some((_, Tok::Num(v))) if *v >= 0.0 && v.fract() == 0.0 && *v <= u32::MAX as f64 => {
                *pos += 1;
                Ok(*v as u32)
            }
            Some((c, _)) => Err(PolyError::Syntax { col: *c, msg: "expected a nonnegative integer exponent".into() }),
            None => Err(PolyError::Syntax { col: end_col.max(*col + 1), msg: "missing exponent".into() }),
        }
    } else {
        Ok(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xyz() -> (Variables, VarId, VarId, VarId) {
        let mut vars = Variables::new();
        let x = vars.add_bounded("x", -5.0, 5.0).unwrap();
        let y = vars.add_bounded("y", -5.0, 5.0).unwrap();
        let z = vars.add_bounded("z", -5.0, 5.0).unwrap();
        (vars, x, y, z)
    }

    #[test]
    fn partial_eval_substitutes_and_collects() {
        let (vars, x, _, _) = xyz();
        let p = Polynomial::parse("x*y + 2*z", &vars).unwrap();
        let rho = PartialAssignment::from_pairs([(x, 2.0)]);
        let got = p.partial_eval(&rho, &vars).unwrap();
        assert_eq!(got, Polynomial::parse("2*y + 2*z", &vars).unwrap());
        assert_eq!(p.partial_eval(&PartialAssignment::new(), &vars).unwrap(), p);
    }

    #[test]
    fn partial_eval_total_gives_constant() {
        let (vars, x, y, _) = xyz();
        let p = Polynomial::parse("x^2*y", &vars).unwrap();
        let rho = PartialAssignment::from_pairs([(x, 3.0), (y, 0.5)]);
        let got = p.partial_eval(&rho, &vars).unwrap();
        let mut point = vec![0.0; 3];
        point[x.index()] = 3.0;
        point[y.index()] = 0.5;
        assert_eq!(got.as_constant(), Some(p.eval(&point)));
        assert_eq!(got.as_constant(), Some(4.5));
    }

    #[test]
    fn partial_eval_rejects_out_of_range() {
        let (vars, x, _, _) = xyz();
        let p = Polynomial::var(x);
        let rho = PartialAssignment::from_pairs([(x, 6.0)]);
        assert!(matches!(p.partial_eval(&rho, &vars), Err(PolyError::Domain { .. })));
    }

    #[test]
    fn monomial_bounds_examples() {
        let mut vars = Variables::new();
        let (a, _) = vars.add_boolean("a").unwrap();
        let (b, _) = vars.add_boolean("b").unwrap();
        let x = vars.add_bounded("x", -2.0, 3.0).unwrap();
        let y = vars.add_bounded("y", -1.0, 1.0).unwrap();
        let empty = PartialAssignment::new();
        let ab = Monomial::from_pairs([(a, 1), (b, 1)]);
        assert_eq!(monomial_bounds(&ab, &empty, &vars).unwrap(), IntervalBound { lo: 0.0, hi: 1.0 });
        let xy = Monomial::from_pairs([(x, 1), (y, 1)]);
        assert_eq!(monomial_bounds(&xy, &empty, &vars).unwrap(), IntervalBound { lo: -3.0, hi: 3.0 });
        assert_eq!(monomial_bounds(&Monomial::one(), &empty, &vars).unwrap(), IntervalBound::point(1.0));
        let rho = PartialAssignment::from_pairs([(x, -2.0)]);
        assert_eq!(monomial_bounds(&xy, &rho, &vars).unwrap(), IntervalBound { lo: -2.0, hi: 2.0 });
        // even power straddling zero
        let x2 = Monomial::from_pairs([(x, 2)]);
        assert_eq!(monomial_bounds(&x2, &empty, &vars).unwrap(), IntervalBound { lo: 0.0, hi: 9.0 });
    }

    /// Brute-force oracle: evaluates on a dense grid including the corners.
    fn grid_bounds(mono: &Monomial, vars: &Variables, nvars: usize) -> IntervalBound {
        let steps = 40;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let total = (steps + 1usize).pow(nvars as u32);
        for idx in 0..total {
            let mut point = vec![0.0; nvars];
            let mut k = idx;
            for (v, slot) in point.iter_mut().enumerate() {
                let (l, b) = vars.range(VarId(v as u32));
                *slot = l + (b - l) * (k % (steps + 1)) as f64 / steps as f64;
                k /= steps + 1;
            }
            let val = mono.eval(&point);
            lo = lo.min(val);
            hi = hi.max(val);
        }
        IntervalBound { lo, hi }
    }

    #[test]
    fn monomial_bounds_match_grid_oracle() {
        let mut vars = Variables::new();
        let x = vars.add_bounded("x", -2.0, 3.0).unwrap();
        let y = vars.add_bounded("y", -1.0, 1.0).unwrap();
        let z = vars.add_bounded("z", 0.5, 2.0).unwrap();
        for mono in [
            Monomial::from_pairs([(x, 1), (y, 1)]),
            Monomial::from_pairs([(x, 2), (y, 1)]),
            Monomial::from_pairs([(x, 3), (z, 1)]),
            Monomial::from_pairs([(y, 2), (z, 2)]),
            Monomial::from_pairs([(x, 1), (y, 1), (z, 1)]),
        ] {
            let got = monomial_bounds(&mono, &PartialAssignment::new(), &vars).unwrap();
            let oracle = grid_bounds(&mono, &vars, 3);
            assert!((got.lo - oracle.lo).abs() < 1e-12, "{mono:?}: {got:?} vs {oracle:?}");
            assert!((got.hi - oracle.hi).abs() < 1e-12, "{mono:?}: {got:?} vs {oracle:?}");
        }
    }

    #[test]
    fn expression_bounds_and_norm_examples() {
        let mut vars = Variables::new();
        let (x, _) = vars.add_boolean("x").unwrap();
        let (y, _) = vars.add_boolean("y").unwrap();
        let (z, _) = vars.add_boolean("z").unwrap();
        let t = vars.add_bounded("t", -2.0, 3.0).unwrap();
        let u = vars.add_bounded("u", -1.0, 1.0).unwrap();
        let empty = PartialAssignment::new();
        let p = Polynomial::parse("x + y", &vars).unwrap();
        assert_eq!(expression_bounds(&p, &empty, &vars).unwrap(), IntervalBound { lo: 0.0, hi: 2.0 });
        assert_eq!(naive_norm(&p, &vars).unwrap(), 2.0);
        let q = Polynomial::parse("2*x*y - 3*z", &vars).unwrap();
        assert_eq!(expression_bounds(&q, &empty, &vars).unwrap(), IntervalBound { lo: -3.0, hi: 2.0 });
        assert_eq!(naive_norm(&q, &vars).unwrap(), 3.0);
        let tu = Polynomial::parse("t*u", &vars).unwrap();
        assert_eq!(expression_bounds(&tu, &empty, &vars).unwrap(), IntervalBound { lo: -3.0, hi: 3.0 });
        assert_eq!(naive_norm(&Polynomial::constant(-1.0), &vars).unwrap(), 1.0);
        assert_eq!(naive_norm(&Polynomial::zero(), &vars).unwrap(), 0.0);
        let _ = (x, y, z, t, u);
    }

    #[test]
    fn witnessing_examples() {
        let mut vars = Variables::new();
        let (x, _) = vars.add_boolean("x").unwrap();
        let (y, _) = vars.add_boolean("y").unwrap();
        let t = vars.add_bounded("t", -2.0, 3.0).unwrap();
        let clause = Polynomial::parse("x + y - 1", &vars).unwrap();
        assert!(is_witnessed(&clause, &PartialAssignment::from_pairs([(x, 1.0)]), &vars).unwrap());
        assert!(!is_witnessed(&clause, &PartialAssignment::from_pairs([(y, 0.0)]), &vars).unwrap());
        let p = Polynomial::parse("3 - t", &vars).unwrap();
        assert!(is_witnessed(&p, &PartialAssignment::new(), &vars).unwrap());
        let _ = t;
    }

    #[test]
    fn parse_and_display_round_trip() {
        let mut vars = Variables::new();
        vars.add_boolean("x").unwrap();
        vars.add_boolean("y").unwrap();
        vars.add_bounded("z", 0.0, 1.0).unwrap();
        let p = Polynomial::parse(" 0.5 + 2 * x*y -3*z ", &vars).unwrap();
        assert_eq!(p.display(&vars).to_string(), "2*x*y - 3*z + 0.5");
        let q = Polynomial::parse("~x*z^2 - x + 1e-3", &vars).unwrap();
        let text = q.display(&vars).to_string();
        assert_eq!(text, "~x*z^2 - x + 0.001");
        assert_eq!(Polynomial::parse(&text, &vars).unwrap(), q);
        assert_eq!(Polynomial::parse("x*x", &vars).unwrap(), Polynomial::parse("x^2", &vars).unwrap());
    }

    #[test]
    fn parse_errors_carry_columns() {
        let mut vars = Variables::new();
        vars.add_boolean("x").unwrap();
        vars.add_bounded("t", 0.0, 1.0).unwrap();
        assert!(matches!(Polynomial::parse("x + q", &vars), Err(PolyError::UnknownVariable(_))));
        assert!(matches!(Polynomial::parse("x + ", &vars), Err(PolyError::Syntax { col: 5, .. })));
        assert!(matches!(Polynomial::parse("x $ 1", &vars), Err(PolyError::Syntax { col: 3, .. })));
        assert!(matches!(Polynomial::parse("~t", &vars), Err(PolyError::Syntax { .. })));
        assert!(matches!(Polynomial::parse("x y", &vars), Err(PolyError::Syntax { col: 3, .. })));
    }

    #[test]
    fn monomial_order_is_graded_lex() {
        let v = |i| VarId(i);
        let mut ms = vec![
            Monomial::from_pairs([(v(1), 2)]),
            Monomial::from_pairs([(v(0), 1), (v(1), 1)]),
            Monomial::var(v(1)),
            Monomial::one(),
            Monomial::from_pairs([(v(0), 2)]),
            Monomial::var(v(0)),
        ];
        ms.sort();
        assert_eq!(
            ms,
            vec![
                Monomial::one(),
                Monomial::var(v(0)),
                Monomial::var(v(1)),
                Monomial::from_pairs([(v(0), 2)]),
                Monomial::from_pairs([(v(0), 1), (v(1), 1)]),
                Monomial::from_pairs([(v(1), 2)]),
            ]
        );
    }

    #[test]
    fn boolean_reduction_and_cancellation() {
        let mut vars = Variables::new();
        let (x, nx) = vars.add_boolean("x").unwrap();
        let p = Polynomial::parse("x^2 - x", &vars).unwrap();
        assert!(p.reduce(&vars).is_zero());
        let q = &Polynomial::var(x) + &Polynomial::var(nx);
        let r = &q - &Polynomial::var(nx);
        assert_eq!(r, Polynomial::var(x));
        assert_eq!(r.num_terms(), 1);
    }

    #[test]
    fn assignment_validation() {
        let mut vars = Variables::new();
        let (x, nx) = vars.add_boolean("x").unwrap();
        let t = vars.add_bounded("t", -1.0, 1.0).unwrap();
        assert!(PartialAssignment::from_pairs([(x, 1.0), (nx, 0.0), (t, 0.3)]).validate(&vars).is_ok());
        assert!(PartialAssignment::from_pairs([(x, 1.0), (nx, 1.0)]).validate(&vars).is_err());
        assert!(PartialAssignment::from_pairs([(x, 0.5)]).validate(&vars).is_err());
        assert!(PartialAssignment::from_pairs([(t, 1.5)]).validate(&vars).is_err());
    }
}
