//! Degree-d moment relaxation: moment index, moment and localizing matrices,
//! equality rows and moment-bound rows, all linear in the moment vector.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConstraintSystem, Origin};
use crate::poly::{Monomial, Polynomial, VarId, VarKind, Variables};

/// Default ceiling on the number of monomials a single index may hold.
pub const DEFAULT_INDEX_CAP: usize = 6000;

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub index_cap: usize,
    /// Add the literal-product rows (see [`RowKind::LiteralProduct`]).
    pub literal_products: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { index_cap: DEFAULT_INDEX_CAP, literal_products: true }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxError {
    #[error("constraint `{constraint}` has degree {found}, above the relaxation degree {degree}")]
    DegreeOverflow { constraint: String, found: u32, degree: u32 },
    #[error("moment index would hold {count} monomials, above the cap of {cap}")]
    IndexTooLarge { count: usize, cap: usize },
}

/// Sparse linear functional over the moment vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    pub terms: Vec<(usize, f64)>,
}

impl LinearForm {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum()
    }

    pub fn l1(&self) -> f64 {
        self.terms.iter().map(|t| t.1.abs()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockRole {
    Moment,
    /// Localizing matrix of `inequalities[i]`.
    Localizing(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsdBlock {
    pub group: usize,
    pub role: BlockRole,
    pub basis: Vec<Monomial>,
    /// `1` for moment matrices, `g` for localizing matrices.
    pub multiplier: Polynomial,
    /// Upper triangle, row-major: `(0,0), (0,1), .., (0,k-1), (1,1), ..`.
    pub cells: Vec<LinearForm>,
}

impl PsdBlock {
    pub fn size(&self) -> usize {
        self.basis.len()
    }

    pub fn cell_index(&self, a: usize, b: usize) -> usize {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let k = self.size();
        a * k - a * (a + 1) / 2 + b
    }

    pub fn matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let k = self.size();
        let mut m = DMatrix::zeros(k, k);
        let mut idx = 0;
        for a in 0..k {
            for b in a..k {
                let v = self.cells[idx].eval(x);
                m[(a, b)] = v;
                m[(b, a)] = v;
                idx += 1;
            }
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RowKind {
    /// `shift * equalities[constraint] = 0`.
    Equality { constraint: usize, shift: Monomial },
    /// Slack of `moment_bounds[i]` is nonnegative in expectation.
    MomentBound(usize),
    /// Confidence band row tying a global moment to the example average.
    Link { moment: Monomial, upper: bool },
    /// `e(m * g) >= 0` for a product `m` of consistent literals, or
    /// `e(m) >= 0` when `constraint` is `None`. Since `m^2 = m` on Boolean
    /// points these are localizing entries of reduced degree `deg m + deg g`.
    LiteralProduct { constraint: Option<usize>, monomial: Monomial },
    /// Extra linear row added by a query (e.g. an objective cut).
    Cut,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub poly: Polynomial,
    pub form: LinearForm,
    pub kind: RowKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProgramConstraint {
    pub poly: Polynomial,
    pub origin: Origin,
    pub group: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub label: String,
    pub vars: Vec<VarId>,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Objective {
    pub poly: Polynomial,
    pub form: LinearForm,
    pub sense: Sense,
}

/// A moment relaxation. Position 0 of the moment vector is the moment of the
/// constant monomial, pinned to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SosProgram {
    pub degree: u32,
    pub vars: Variables,
    pub moments: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
    pub groups: Vec<Group>,
    pub inequalities: Vec<ProgramConstraint>,
    pub equalities: Vec<ProgramConstraint>,
    pub blocks: Vec<PsdBlock>,
    pub eq_rows: Vec<Row>,
    pub ineq_rows: Vec<Row>,
    pub objective: Option<Objective>,
}

impl SosProgram {
    pub fn num_moments(&self) -> usize {
        self.moments.len()
    }

    pub fn moment_position(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    /// Moment vector with entry `i` equal to `f(moments[i])`.
    pub fn moment_vector(&self, f: impl Fn(&Monomial) -> f64) -> Vec<f64> {
        self.moments.iter().map(f).collect()
    }

    /// Moments of a finitely supported distribution over points.
    pub fn moments_of(&self, support: &[(Vec<f64>, f64)]) -> Vec<f64> {
        self.moment_vector(|m| support.iter().map(|(pt, w)| w * m.eval(pt)).sum())
    }

    /// Linear form of a polynomial, registering monomials that are new.
    pub(crate) fn form_of(&mut self, p: &Polynomial) -> LinearForm {
        let reduced = p.reduce(&self.vars);
        let mut terms: Vec<(usize, f64)> = reduced.terms().map(|(m, c)| (self.position_or_insert(m), c)).collect();
        terms.sort_by_key(|t| t.0);
        LinearForm { terms }
    }

    fn position_or_insert(&mut self, m: &Monomial) -> usize {
        if let Some(&i) = self.index.get(m) {
            return i;
        }
        let i = self.moments.len();
        self.moments.push(m.clone());
        self.index.insert(m.clone(), i);
        i
    }

    /// Linear form of a polynomial whose monomials are all registered.
    pub fn try_form(&self, p: &Polynomial) -> Option<LinearForm> {
        let reduced = p.reduce(&self.vars);
        let mut terms = Vec::with_capacity(reduced.num_terms());
        for (m, c) in reduced.terms() {
            terms.push((self.moment_position(m)?, c));
        }
        terms.sort_by_key(|t| t.0);
        Some(LinearForm { terms })
    }

    /// Adds `p >= 0` as a linear row.
    pub fn add_cut(&mut self, p: Polynomial) -> Result<(), RelaxError> {
        self.check_degree(&p, "cut")?;
        let form = self.form_of(&p);
        self.ineq_rows.push(Row { poly: p.reduce(&self.vars), form, kind: RowKind::Cut });
        Ok(())
    }

    fn check_degree(&self, p: &Polynomial, what: &str) -> Result<(), RelaxError> {
        let deg = p.reduce(&self.vars).degree();
        if deg > self.degree {
            return Err(RelaxError::DegreeOverflow { constraint: what.to_string(), found: deg, degree: self.degree });
        }
        Ok(())
    }

    pub fn block_matrices(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        self.blocks.iter().map(|b| b.matrix(x)).collect()
    }

    /// Checks a moment vector against every row and block. Tolerances are
    /// relative: rows by the l1 norm of their form, blocks by their trace.
    pub fn check_feasible(&self, x: &[f64], tol: f64) -> FeasibilityReport {
        let mut rep = FeasibilityReport { normalization: (x[0] - 1.0).abs(), ..Default::default() };
        let mut ok = rep.normalization <= tol;
        for r in &self.eq_rows {
            let v = r.form.eval(x).abs();
            rep.max_equality_violation = rep.max_equality_violation.max(v);
            ok &= v <= tol * r.form.l1().max(1.0);
        }
        for r in &self.ineq_rows {
            let v = (-r.form.eval(x)).max(0.0);
            rep.max_inequality_violation = rep.max_inequality_violation.max(v);
            ok &= v <= tol * r.form.l1().max(1.0);
        }
        for b in &self.blocks {
            let m = b.matrix(x);
            let min_eig = min_eigenvalue(&m);
            let scale = m.trace().max(1.0);
            rep.min_block_eigenvalue = rep.min_block_eigenvalue.min(min_eig / scale);
            ok &= min_eig >= -tol * scale;
        }
        rep.feasible = ok;
        rep
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub normalization: f64,
    pub max_equality_violation: f64,
    pub max_inequality_violation: f64,
    /// Smallest block eigenvalue divided by `max(1, trace)`.
    pub min_block_eigenvalue: f64,
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)],
        _ => m.clone().symmetric_eigenvalues().min(),
    }
}

/// Number of reduced monomials of degree `<= d` over `over`.
pub fn index_size(vars: &Variables, over: &[VarId], d: u32) -> usize {
    let d = d as usize;
    let mut ways = vec![0usize; d + 1];
    ways[0] = 1;
    for &v in over {
        let max_e = if vars.is_boolean(v) { 1 } else { d };
        let mut next = vec![0usize; d + 1];
        for (deg, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for e in 0..=max_e.min(d - deg) {
                next[deg + e] = next[deg + e].saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0usize, |a, &b| a.saturating_add(b))
}

/// Reduced monomials of degree `<= d` over `over`, in graded order.
pub fn enumerate_monomials(vars: &Variables, over: &[VarId], d: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    enumerate_rec(vars, over, 0, d, &mut current, &mut out);
    out.sort();
    out
}

fn enumerate_rec(
    vars: &Variables,
    over: &[VarId],
    start: usize,
    room: u32,
    current: &mut Vec<(VarId, u32)>,
    out: &mut Vec<Monomial>,
) {
    out.push(Monomial::from_pairs(current.iter().copied()));
    for i in start..over.len() {
        let v = over[i];
        let max_e = if vars.is_boolean(v) { 1 } else { room };
        for e in 1..=max_e.min(room) {
            current.push((v, e));
            enumerate_rec(vars, over, i + 1, room - e, current, out);
            current.pop();
        }
    }
}

fn literal_products_rec(lits: &[(VarId, VarId)], start: usize, room: u32, current: &mut Vec<VarId>, out: &mut Vec<Monomial>) {
    out.push(Monomial::from_pairs(current.iter().map(|&v| (v, 1))));
    if room == 0 {
        return;
    }
    for i in start..lits.len() {
        for v in [lits[i].0, lits[i].1] {
            current.push(v);
            literal_products_rec(lits, i + 1, room - 1, current, out);
            current.pop();
        }
    }
}

/// Incremental construction shared by plain and learned relaxations.
pub(crate) struct ProgramBuilder {
    prog: SosProgram,
    cap: usize,
    basis_cache: HashMap<(usize, u32), Vec<Monomial>>,
}

impl ProgramBuilder {
    pub(crate) fn new(vars: Variables, degree: u32, cap: usize) -> Self {
        let mut prog = SosProgram {
            degree,
            vars,
            moments: Vec::new(),
            index: HashMap::new(),
            groups: Vec::new(),
            inequalities: Vec::new(),
            equalities: Vec::new(),
            blocks: Vec::new(),
            eq_rows: Vec::new(),
            ineq_rows: Vec::new(),
            objective: None,
        };
        prog.position_or_insert(&Monomial::one());
        ProgramBuilder { prog, cap, basis_cache: HashMap::new() }
    }

    pub(crate) fn vars(&self) -> &Variables {
        &self.prog.vars
    }

    pub(crate) fn add_copy(&mut self, v: VarId, suffix: &str) -> VarId {
        self.prog.vars.add_copy(v, suffix)
    }

    /// Starts a group over `over` and adds its moment matrix.
    pub(crate) fn add_group(&mut self, label: String, over: Vec<VarId>, weight: f64) -> Result<usize, RelaxError> {
        let count = index_size(&self.prog.vars, &over, self.prog.degree);
        if count > self.cap {
            return Err(RelaxError::IndexTooLarge { count, cap: self.cap });
        }
        let g = self.prog.groups.len();
        self.prog.groups.push(Group { label, vars: over, weight });
        let basis = self.basis(g, self.prog.degree / 2);
        self.push_block(g, BlockRole::Moment, basis, Polynomial::constant(1.0));
        Ok(g)
    }

    fn basis(&mut self, group: usize, half: u32) -> Vec<Monomial> {
        let vars = &self.prog.vars;
        let over = &self.prog.groups[group].vars;
        self.basis_cache.entry((group, half)).or_insert_with(|| enumerate_monomials(vars, over, half)).clone()
    }

    fn push_block(&mut self, group: usize, role: BlockRole, basis: Vec<Monomial>, multiplier: Polynomial) {
        let k = basis.len();
        let mut cells = Vec::with_capacity(k * (k + 1) / 2);
        for a in 0..k {
            for b in a..k {
                let ab = Polynomial::term(1.0, basis[a].mul(&basis[b]));
                let p = &ab * &multiplier;
                cells.push(self.prog.form_of(&p));
            }
        }
        self.prog.blocks.push(PsdBlock { group, role, basis, multiplier, cells });
    }

    fn overflow(&self, p: &Polynomial, found: u32) -> RelaxError {
        RelaxError::DegreeOverflow {
            constraint: p.display(&self.prog.vars).to_string(),
            found,
            degree: self.prog.degree,
        }
    }

    /// Localizing matrix for `g >= 0` within `group`. Range axioms above the
    /// relaxation degree are skipped; the linear bounding rows cover them.
    pub(crate) fn add_inequality(&mut self, group: usize, g: Polynomial, origin: Origin) -> Result<(), RelaxError> {
        let g = g.reduce(&self.prog.vars);
        let deg = g.degree();
        if deg > self.prog.degree {
            if origin == Origin::Range {
                return Ok(());
            }
            return Err(self.overflow(&g, deg));
        }
        let i = self.prog.inequalities.len();
        self.prog.inequalities.push(ProgramConstraint { poly: g.clone(), origin, group });
        let basis = self.basis(group, (self.prog.degree - deg) / 2);
        self.push_block(group, BlockRole::Localizing(i), basis, g);
        Ok(())
    }

    /// Rows `m * h = 0` for every index monomial `m` with `deg m <= d - deg h`.
    /// Constraints that vanish after Boolean reduction are absorbed.
    pub(crate) fn add_equality(&mut self, group: usize, h: Polynomial, origin: Origin) -> Result<(), RelaxError> {
        let h = h.reduce(&self.prog.vars);
        if h.is_zero() {
            return Ok(());
        }
        let deg = h.degree();
        if deg > self.prog.degree {
            return Err(self.overflow(&h, deg));
        }
        let k = self.prog.equalities.len();
        self.prog.equalities.push(ProgramConstraint { poly: h.clone(), origin, group });
        for shift in self.basis(group, self.prog.degree - deg) {
            let p = (&Polynomial::term(1.0, shift.clone()) * &h).reduce(&self.prog.vars);
            if p.is_zero() {
                continue;
            }
            let form = self.prog.form_of(&p);
            self.prog.eq_rows.push(Row { poly: p, form, kind: RowKind::Equality { constraint: k, shift } });
        }
        Ok(())
    }

    /// Literal-product rows for `group`: `e(m) >= 0` for every product of
    /// consistent literals of degree `<= d`, and `e(m * g) >= 0` for every
    /// inequality `g` of the group with `deg m + deg g <= d`. Entries already
    /// on the diagonal of a PSD block are skipped.
    pub(crate) fn add_literal_products(&mut self, group: usize) -> Result<(), RelaxError> {
        let d = self.prog.degree;
        let mut monos = Vec::new();
        let mut current = Vec::new();
        let lits: Vec<(VarId, VarId)> = self.prog.groups[group]
            .vars
            .iter()
            .filter_map(|&v| match self.prog.vars.get(v).kind {
                VarKind::Boolean { negation } => Some((v, negation)),
                _ => None,
            })
            .collect();
        literal_products_rec(&lits, 0, d, &mut current, &mut monos);
        monos.sort();
        for m in &monos {
            if m.degree() > d / 2 {
                self.add_linear_row(Polynomial::term(1.0, m.clone()), RowKind::LiteralProduct { constraint: None, monomial: m.clone() })?;
            }
        }
        let constraints: Vec<(usize, Polynomial)> = self
            .prog
            .inequalities
            .iter()
            .enumerate()
            .filter(|(_, c)| c.group == group)
            .map(|(i, c)| (i, c.poly.clone()))
            .collect();
        for (i, g) in constraints {
            let deg = g.degree();
            let half = (d - deg) / 2;
            for m in monos.iter().filter(|m| m.degree() > half && m.degree() + deg <= d) {
                let p = &Polynomial::term(1.0, m.clone()) * &g;
                self.add_linear_row(p, RowKind::LiteralProduct { constraint: Some(i), monomial: m.clone() })?;
            }
        }
        Ok(())
    }

    /// Adds `p >= 0` as a single linear row.
    pub(crate) fn add_linear_row(&mut self, p: Polynomial, kind: RowKind) -> Result<(), RelaxError> {
        let p = p.reduce(&self.prog.vars);
        let deg = p.degree();
        if deg > self.prog.degree {
            return Err(self.overflow(&p, deg));
        }
        let form = self.prog.form_of(&p);
        self.prog.ineq_rows.push(Row { poly: p, form, kind });
        Ok(())
    }

    pub(crate) fn finish(self) -> SosProgram {
        self.prog
    }
}

/// Builds the degree-`d` relaxation of a system.
pub fn build_program(sys: &ConstraintSystem, d: u32) -> Result<SosProgram, RelaxError> {
    build_program_with(sys, d, &BuildOptions::default())
}

pub fn build_program_with(sys: &ConstraintSystem, d: u32, opts: &BuildOptions) -> Result<SosProgram, RelaxError> {
    let vars = sys.vars().clone();
    let all: Vec<VarId> = vars.iter().map(|(id, _)| id).collect();
    let mut b = ProgramBuilder::new(vars, d, opts.index_cap);
    b.add_group("global".into(), all, 1.0)?;
    for c in sys.inequalities() {
        b.add_inequality(0, c.poly.clone(), c.origin)?;
    }
    for p in sys.generate_bounding_inequalities(d) {
        b.add_inequality(0, p, Origin::Bounding)?;
    }
    for c in sys.equalities() {
        b.add_equality(0, c.poly.clone(), c.origin)?;
    }
    if opts.literal_products {
        b.add_literal_products(0)?;
    }
    for (i, mb) in sys.moment_bounds().iter().enumerate() {
        b.add_linear_row(mb.slack(), RowKind::MomentBound(i))?;
    }
    Ok(b.finish())
}

/// Returns a copy of `prog` that optimizes `E[p]`.
pub fn attach_objective(prog: &SosProgram, p: &Polynomial, sense: Sense) -> Result<SosProgram, RelaxError> {
    prog.check_degree(p, "objective")?;
    let mut out = prog.clone();
    let form = out.form_of(p);
    out.objective = Some(Objective { poly: p.reduce(&out.vars), form, sense });
    Ok(out)
}
