//! Learning from partial examples: CSV ingestion, the learned relaxation
//! with per-example blocks and Hoeffding linking rows, witnessing rates, and
//! a seeded generator of masked samples.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConstraintSystem, Origin};
use crate::poly::{is_witnessed, monomial_bounds, Monomial, PartialAssignment, PolyError, Polynomial, VarId, VarKind, Variables};
use crate::relax::{enumerate_monomials, index_size, BuildOptions, ProgramBuilder, RelaxError, RowKind, SosProgram};

/// Restricted constants within this distance of zero count as zero.
const CONSTANT_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` appears twice")]
    DuplicateColumn(String),
    #[error("line {line}: row has {found} cells, header has {expected}")]
    Ragged { line: u64, expected: u64, found: u64 },
    #[error("line {line}, column `{column}`: `{value}` is not a number or `*`")]
    Cell { line: u64, column: String, value: String },
    #[error("line {line}: {source}")]
    Range { line: u64, source: PolyError },
    #[error("example set is empty")]
    Empty,
    #[error("confidence parameter must lie in (0, 1), got {0}")]
    InvalidDelta(f64),
    #[error("sample size must be at least 1")]
    InvalidSampleSize,
    #[error("examples use a different variable schema than the system")]
    SchemaMismatch,
    #[error("invalid sampler: {0}")]
    Sampler(String),
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error(transparent)]
    Relax(#[from] RelaxError),
}

/// Partial examples over a fixed schema; unassigned variables are missing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialExampleSet {
    pub vars: Variables,
    pub rows: Vec<PartialAssignment>,
    pub note: String,
}

impl PartialExampleSet {
    /// Validates the rows and fills in missing Boolean twins.
    pub fn new(vars: Variables, rows: Vec<PartialAssignment>, note: impl Into<String>) -> Result<Self, LearnError> {
        if rows.is_empty() {
            return Err(LearnError::Empty);
        }
        let rows = rows
            .into_iter()
            .map(|r| {
                let r = complete_twins(&r, &vars);
                r.validate(&vars)?;
                Ok(r)
            })
            .collect::<Result<Vec<_>, PolyError>>()?;
        Ok(PartialExampleSet { vars, rows, note: note.into() })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Assigns `~x = 1 - x` (or `x = 1 - ~x`) wherever only one side is known.
fn complete_twins(rho: &PartialAssignment, vars: &Variables) -> PartialAssignment {
    let mut out = rho.clone();
    for (v, x) in rho.iter() {
        if let Some(t) = vars.negation_of(v) {
            if !out.is_assigned(t) {
                out.assign(t, 1.0 - x);
            }
        }
    }
    out
}

/// Reads examples from a CSV file whose header names declared variables.
pub fn load_examples(path: &Path, vars: &Variables) -> Result<PartialExampleSet, LearnError> {
    let text = std::fs::read_to_string(path).map_err(|source| LearnError::Io { path: path.display().to_string(), source })?;
    let mut set = parse_examples(&text, vars)?;
    set.note = format!("loaded from {}", path.display());
    Ok(set)
}

/// Parses CSV text; cells are numerals or `*` for missing.
pub fn parse_examples(text: &str, vars: &Variables) -> Result<PartialExampleSet, LearnError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(text.as_bytes());
    let mut columns = Vec::new();
    for name in rdr.headers()?.iter() {
        let id = vars.lookup(name).ok_or_else(|| LearnError::UnknownColumn(name.to_string()))?;
        if columns.contains(&id) {
            return Err(LearnError::DuplicateColumn(name.to_string()));
        }
        columns.push(id);
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => LearnError::Ragged {
                line: pos.as_ref().map(|p| p.line()).unwrap_or(0),
                expected: *expected_len,
                found: *len,
            },
            _ => LearnError::Csv(e),
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let mut rho = PartialAssignment::new();
        for (cell, &v) in rec.iter().zip(&columns) {
            if cell == "*" {
                continue;
            }
            let x: f64 = cell.parse().map_err(|_| LearnError::Cell { line, column: vars.name(v).to_string(), value: cell.to_string() })?;
            rho.assign(v, x);
        }
        let rho = complete_twins(&rho, vars);
        rho.validate(vars).map_err(|source| LearnError::Range { line, source })?;
        rows.push(rho);
    }
    PartialExampleSet::new(vars.clone(), rows, "parsed from text")
}

/// Two-sided Hoeffding radius for the empirical mean of `mono`, union-bounded
/// over `n_d` monomials.
pub fn hoeffding_radius(mono: &Monomial, vars: &Variables, m: usize, delta: f64, n_d: usize) -> Result<f64, LearnError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(LearnError::InvalidDelta(delta));
    }
    if m == 0 {
        return Err(LearnError::InvalidSampleSize);
    }
    let b = monomial_bounds(mono, &PartialAssignment::new(), vars)?;
    let n = n_d.max(1) as f64;
    Ok(b.width() * ((2.0 * n / delta).ln() / (2.0 * m as f64)).sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExampleGrouping {
    /// One block group per example row.
    PerExample,
    /// Rows with identical observations share one group, weighted by count.
    /// Equivalent to `PerExample` (average the duplicated groups) but smaller.
    #[default]
    Merged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnOptions {
    pub delta: f64,
    pub grouping: ExampleGrouping,
    pub build: BuildOptions,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions { delta: 0.05, grouping: ExampleGrouping::default(), build: BuildOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoeffdingInterval {
    pub monomial: Monomial,
    /// Average of the restricted monomial over the example groups, a
    /// polynomial in the per-example copies.
    pub mean: Polynomial,
    pub radius: f64,
}

/// A support constraint falsified outright by a fully observed example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub row: usize,
    pub constraint: String,
    pub value: f64,
    pub equality: bool,
}

#[derive(Clone, Debug)]
pub struct LearnedProgram {
    pub program: SosProgram,
    pub intervals: Vec<HoeffdingInterval>,
    pub violations: Vec<Violation>,
    pub m: usize,
    pub n_d: usize,
    /// Example rows behind each example group (group `i + 1` of the program).
    pub group_rows: Vec<Vec<usize>>,
    /// `(copy, original, example group)` for every per-example variable.
    pub copies: Vec<(VarId, VarId, usize)>,
}

impl LearnedProgram {
    /// Assigns each copy the value of its original in the complete point of
    /// the group's row, giving a point over all program variables. `None`
    /// when a group holds more than one row.
    pub fn completion(&self, truth: &[Vec<f64>]) -> Option<Vec<f64>> {
        let mut point = vec![0.0; self.program.vars.len()];
        for &(copy, orig, group) in &self.copies {
            let rows = &self.group_rows[group - 1];
            if rows.len() != 1 {
                return None;
            }
            point[copy.index()] = truth[rows[0]][orig.index()];
        }
        Some(point)
    }
}

fn same_schema(a: &Variables, b: &Variables) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|((_, x), (_, y))| x.name == y.name && x.kind == y.kind)
}

/// Support constraints (including bounding rows) checked per example.
fn restricted_constraints(sys: &ConstraintSystem, d: u32) -> (Vec<(Polynomial, Origin)>, Vec<(Polynomial, Origin)>) {
    let mut ineqs: Vec<(Polynomial, Origin)> = sys.inequalities().iter().map(|c| (c.poly.clone(), c.origin)).collect();
    ineqs.extend(sys.generate_bounding_inequalities(d).into_iter().map(|p| (p, Origin::Bounding)));
    let eqs = sys.equalities().iter().map(|c| (c.poly.clone(), c.origin)).collect();
    (ineqs, eqs)
}

/// Scans the examples for fully assigned support constraints that fail.
pub fn witnessed_violations(sys: &ConstraintSystem, examples: &PartialExampleSet) -> Result<Vec<Violation>, LearnError> {
    let vars = sys.vars();
    let mut out = Vec::new();
    for (row, rho) in examples.rows.iter().enumerate() {
        let rho = complete_twins(rho, vars);
        for (c, equality) in sys.inequalities().iter().map(|c| (c, false)).chain(sys.equalities().iter().map(|c| (c, true))) {
            let r = c.poly.partial_eval(&rho, vars)?.reduce(vars);
            if let Some(v) = r.as_constant() {
                let bad = if equality { v.abs() > CONSTANT_SLACK } else { v < -CONSTANT_SLACK };
                if bad {
                    out.push(Violation { row, constraint: c.poly.display(vars).to_string(), value: v, equality });
                }
            }
        }
    }
    Ok(out)
}

/// Hashable key for grouping identical observations.
fn row_key(rho: &PartialAssignment) -> Vec<(VarId, u64)> {
    rho.iter().map(|(v, x)| (v, x.to_bits())).collect()
}

pub fn build_learned_program(sys: &ConstraintSystem, examples: &PartialExampleSet, d: u32, delta: f64) -> Result<LearnedProgram, LearnError> {
    build_learned_program_with(sys, examples, d, &LearnOptions { delta, ..LearnOptions::default() })
}

/// Global relaxation of `sys`, one block group per example (or per distinct
/// observation pattern) over copies of its unobserved variables, and two
/// linking rows per global monomial of degree `<= d`.
pub fn build_learned_program_with(sys: &ConstraintSystem, examples: &PartialExampleSet, d: u32, opts: &LearnOptions) -> Result<LearnedProgram, LearnError> {
    if !same_schema(sys.vars(), &examples.vars) {
        return Err(LearnError::SchemaMismatch);
    }
    let m = examples.len();
    if m == 0 {
        return Err(LearnError::Empty);
    }
    if !(opts.delta > 0.0 && opts.delta < 1.0) {
        return Err(LearnError::InvalidDelta(opts.delta));
    }
    let base_vars = sys.vars().clone();
    let all: Vec<VarId> = base_vars.iter().map(|(id, _)| id).collect();
    let (ineqs, eqs) = restricted_constraints(sys, d);

    let mut b = ProgramBuilder::new(base_vars.clone(), d, opts.build.index_cap);
    b.add_group("global".into(), all.clone(), 1.0)?;
    for (g, origin) in &ineqs {
        b.add_inequality(0, g.clone(), *origin)?;
    }
    for (h, origin) in &eqs {
        b.add_equality(0, h.clone(), *origin)?;
    }
    if opts.build.literal_products {
        b.add_literal_products(0)?;
    }

    // (representative row, weight)
    let mut patterns: Vec<(PartialAssignment, f64)> = Vec::new();
    let mut group_rows: Vec<Vec<usize>> = Vec::new();
    match opts.grouping {
        ExampleGrouping::PerExample => {
            patterns.extend(examples.rows.iter().map(|r| (complete_twins(r, &base_vars), 1.0 / m as f64)));
            group_rows.extend((0..m).map(|i| vec![i]));
        }
        ExampleGrouping::Merged => {
            let mut seen: BTreeMap<Vec<(VarId, u64)>, usize> = BTreeMap::new();
            for (ri, r) in examples.rows.iter().enumerate() {
                let r = complete_twins(r, &base_vars);
                match seen.get(&row_key(&r)) {
                    Some(&i) => {
                        patterns[i].1 += 1.0 / m as f64;
                        group_rows[i].push(ri);
                    }
                    None => {
                        seen.insert(row_key(&r), patterns.len());
                        patterns.push((r, 1.0 / m as f64));
                        group_rows.push(vec![ri]);
                    }
                }
            }
        }
    }
    let mut copies = Vec::new();

    let globals = enumerate_monomials(&base_vars, &all, d);
    let n_d = index_size(&base_vars, &all, d);
    let mut means: Vec<Polynomial> = vec![Polynomial::zero(); globals.len()];

    for (pi, (rho, weight)) in patterns.iter().enumerate() {
        let mut copy_of: BTreeMap<VarId, VarId> = BTreeMap::new();
        let mut over = Vec::new();
        for &v in &all {
            if rho.is_assigned(v) || copy_of.contains_key(&v) {
                continue;
            }
            let c = b.add_copy(v, &format!("@{pi}"));
            copy_of.insert(v, c);
            over.push(c);
            if let (Some(t), Some(ct)) = (base_vars.negation_of(v), b.vars().negation_of(c)) {
                copy_of.insert(t, ct);
                over.push(ct);
            }
        }
        over.sort();
        copies.extend(copy_of.iter().map(|(&orig, &c)| (c, orig, pi + 1)));
        let restrict = |p: &Polynomial| -> Result<Polynomial, PolyError> {
            Ok(p.partial_eval(rho, &base_vars)?.map_vars(|v| copy_of[&v]))
        };
        let group = b.add_group(format!("example {pi}"), over, *weight)?;
        for (g, origin) in &ineqs {
            let r = restrict(g)?;
            if let Some(c) = r.as_constant() {
                if c >= -CONSTANT_SLACK {
                    continue;
                }
            }
            b.add_inequality(group, r, *origin)?;
        }
        for (h, origin) in &eqs {
            let r = restrict(h)?;
            if let Some(c) = r.as_constant() {
                if c.abs() <= CONSTANT_SLACK {
                    continue;
                }
            }
            b.add_equality(group, r, *origin)?;
        }
        if opts.build.literal_products {
            b.add_literal_products(group)?;
        }
        for (alpha, mean) in globals.iter().zip(means.iter_mut()) {
            let r = restrict(&Polynomial::term(1.0, alpha.clone()))?;
            *mean = &*mean + &r.scale(*weight);
        }
    }

    for (i, mb) in sys.moment_bounds().iter().enumerate() {
        b.add_linear_row(mb.slack(), RowKind::MomentBound(i))?;
    }

    let mut intervals = Vec::with_capacity(globals.len());
    for (alpha, mean) in globals.into_iter().zip(means) {
        if alpha.is_one() {
            continue;
        }
        let radius = hoeffding_radius(&alpha, &base_vars, m, opts.delta, n_d)?;
        let x = Polynomial::term(1.0, alpha.clone());
        let r = Polynomial::constant(radius);
        b.add_linear_row(&(&mean + &r) - &x, RowKind::Link { moment: alpha.clone(), upper: true })?;
        b.add_linear_row(&(&x - &mean) + &r, RowKind::Link { moment: alpha.clone(), upper: false })?;
        intervals.push(HoeffdingInterval { monomial: alpha, mean, radius });
    }

    let violations = witnessed_violations(sys, examples)?;
    Ok(LearnedProgram { program: b.finish(), intervals, violations, m, n_d, group_rows, copies })
}

/// Fraction of examples under which every `p >= 0` in `constraints` is
/// witnessed by term-wise bounds.
pub fn witness_rate(constraints: &[Polynomial], examples: &PartialExampleSet) -> Result<f64, LearnError> {
    if constraints.is_empty() || examples.is_empty() {
        return Ok(1.0);
    }
    let mut hits = 0usize;
    for rho in &examples.rows {
        let mut all = true;
        for p in constraints {
            if !is_witnessed(p, rho, &examples.vars)? {
                all = false;
                break;
            }
        }
        hits += all as usize;
    }
    Ok(hits as f64 / examples.len() as f64)
}

/// Masking process: which coordinates of a complete point to hide.
/// Hiding a Boolean literal also hides its twin.
pub trait Masking: Send + Sync {
    fn hidden(&self, point: &[f64], vars: &Variables, rng: &mut dyn RngCore) -> Vec<VarId>;
}

pub struct HideNothing;

impl Masking for HideNothing {
    fn hidden(&self, _: &[f64], _: &Variables, _: &mut dyn RngCore) -> Vec<VarId> {
        Vec::new()
    }
}

pub struct HideAll;

impl Masking for HideAll {
    fn hidden(&self, _: &[f64], vars: &Variables, _: &mut dyn RngCore) -> Vec<VarId> {
        vars.iter().map(|(id, _)| id).collect()
    }
}

/// Hides each variable independently with probability `rate`.
pub struct HideEach {
    pub rate: f64,
}

impl Masking for HideEach {
    fn hidden(&self, _: &[f64], vars: &Variables, rng: &mut dyn RngCore) -> Vec<VarId> {
        vars.iter()
            .filter(|(_, v)| !matches!(v.kind, VarKind::BooleanNegation { .. }))
            .filter(|_| rng.gen_bool(self.rate))
            .map(|(id, _)| id)
            .collect()
    }
}

/// Arbitrary, possibly value-dependent, masking rule.
pub struct HideWhen<F>(pub F);

impl<F> Masking for HideWhen<F>
where
    F: Fn(&[f64], &mut dyn RngCore) -> Vec<VarId> + Send + Sync,
{
    fn hidden(&self, point: &[f64], _: &Variables, rng: &mut dyn RngCore) -> Vec<VarId> {
        (self.0)(point, rng)
    }
}

/// A finite mixture of complete points together with a masking process.
pub struct MaskedSampler {
    vars: Variables,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    dist: WeightedIndex<f64>,
    masking: Box<dyn Masking>,
}

impl MaskedSampler {
    /// Points are indexed by `VarId`; twin coordinates are recomputed from
    /// their positive literal, so any value may be given there.
    pub fn new(vars: Variables, support: Vec<(Vec<f64>, f64)>, masking: Box<dyn Masking>) -> Result<Self, LearnError> {
        if support.is_empty() {
            return Err(LearnError::Sampler("empty support".into()));
        }
        let mut points = Vec::with_capacity(support.len());
        let mut weights = Vec::with_capacity(support.len());
        for (mut p, w) in support {
            if p.len() != vars.len() {
                return Err(LearnError::Sampler(format!("point has {} coordinates, schema has {}", p.len(), vars.len())));
            }
            for (id, v) in vars.iter() {
                if let VarKind::BooleanNegation { partner } = v.kind {
                    p[id.index()] = 1.0 - p[partner.index()];
                }
            }
            PartialAssignment::from_pairs(vars.iter().map(|(id, _)| (id, p[id.index()]))).validate(&vars)?;
            if !(w >= 0.0 && w.is_finite()) {
                return Err(LearnError::Sampler(format!("invalid weight {w}")));
            }
            points.push(p);
            weights.push(w);
        }
        let dist = WeightedIndex::new(&weights).map_err(|e| LearnError::Sampler(e.to_string()))?;
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(MaskedSampler { vars, points, weights, dist, masking })
    }

    pub fn vars(&self) -> &Variables {
        &self.vars
    }

    /// Support points with normalized weights.
    pub fn support(&self) -> Vec<(Vec<f64>, f64)> {
        self.points.iter().cloned().zip(self.weights.iter().copied()).collect()
    }

    /// Exact `E[mono]` under the ground-truth mixture.
    pub fn true_moment(&self, mono: &Monomial) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * mono.eval(p)).sum()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (PartialAssignment, &[f64]) {
        let p = &self.points[self.dist.sample(rng)];
        let mut rho = PartialAssignment::from_pairs(self.vars.iter().map(|(id, _)| (id, p[id.index()])));
        for v in self.masking.hidden(p, &self.vars, rng) {
            rho.unassign(v);
            if let Some(t) = self.vars.negation_of(v) {
                rho.unassign(t);
            }
        }
        (rho, p)
    }
}

/// Draws `m` masked rows; the same seed reproduces the same rows.
pub fn generate_masked(sampler: &MaskedSampler, m: usize, seed: u64) -> Result<PartialExampleSet, LearnError> {
    Ok(generate_masked_with_truth(sampler, m, seed)?.0)
}

/// Like [`generate_masked`], also returning the complete point behind each row.
pub fn generate_masked_with_truth(sampler: &MaskedSampler, m: usize, seed: u64) -> Result<(PartialExampleSet, Vec<Vec<f64>>), LearnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(m);
    let mut truth = Vec::with_capacity(m);
    for _ in 0..m {
        let (rho, p) = sampler.draw(&mut rng);
        rows.push(rho);
        truth.push(p.to_vec());
    }
    let set = PartialExampleSet::new(sampler.vars.clone(), rows, format!("masked sample, m = {m}, seed = {seed}"))?;
    Ok((set, truth))
}
