//! Shared oracles and generators for the integration suites.
#![allow(dead_code)]

use microlp::{ComparisonOp, OptimizationDirection, Problem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sospl_core::model::{Clause, ConstraintSystem, Direction, Literal};
use sospl_core::poly::{naive_norm, Monomial, Polynomial, VarId, VarKind};
use sospl_core::relax::SosProgram;
use sospl_core::resolution::{level_s_refute, refutation_level, Assignment, CnfFormula};
use sospl_core::sdp::Certificate;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every 0/1 point of a purely Boolean system, twins filled in, that
/// satisfies its support constraints exactly.
pub fn support_atoms(sys: &ConstraintSystem) -> Vec<Vec<f64>> {
    let vars = sys.vars();
    let prim: Vec<VarId> = vars
        .iter()
        .filter(|(_, v)| matches!(v.kind, VarKind::Boolean { .. }))
        .map(|(id, _)| id)
        .collect();
    assert!(vars.iter().all(|(_, v)| !matches!(v.kind, VarKind::BoundedReal { .. })), "Boolean systems only");
    let mut out = Vec::new();
    for mask in 0u32..(1 << prim.len()) {
        let mut p = vec![0.0; vars.len()];
        for (i, &v) in prim.iter().enumerate() {
            let x = ((mask >> i) & 1) as f64;
            p[v.index()] = x;
            p[vars.negation_of(v).unwrap().index()] = 1.0 - x;
        }
        let ok = sys.inequalities().iter().all(|c| c.poly.eval(&p) >= -1e-12)
            && sys.equalities().iter().all(|c| c.poly.eval(&p).abs() <= 1e-12);
        if ok {
            out.push(p);
        }
    }
    out
}

/// Exact range of `E[p]` over distributions on the support atoms meeting the
/// moment bounds, by linear programming; `None` when no such distribution exists.
pub fn atom_interval(sys: &ConstraintSystem, p: &Polynomial) -> Option<(f64, f64)> {
    let atoms = support_atoms(sys);
    if atoms.is_empty() {
        return None;
    }
    let solve = |dir: OptimizationDirection| -> Option<f64> {
        let mut lp = Problem::new(dir);
        let w: Vec<_> = atoms.iter().map(|a| lp.add_var(p.eval(a), (0.0, f64::INFINITY))).collect();
        lp.add_constraint(w.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
        for mb in sys.moment_bounds() {
            let row: Vec<_> = w.iter().zip(&atoms).map(|(&v, a)| (v, mb.poly.eval(a))).collect();
            let op = if mb.direction == Direction::Ge { ComparisonOp::Ge } else { ComparisonOp::Le };
            lp.add_constraint(row, op, mb.gamma);
        }
        lp.solve().ok().map(|s| s.objective())
    };
    let lo = solve(OptimizationDirection::Minimize)?;
    let hi = solve(OptimizationDirection::Maximize)?;
    Some((lo, hi))
}

fn random_literal_monomial(rng: &mut ChaCha8Rng, sys: &ConstraintSystem, ids: &[VarId], max_deg: usize) -> Monomial {
    let deg = rng.gen_range(1..=max_deg.min(ids.len()));
    let mut pool = ids.to_vec();
    let mut factors = Vec::new();
    for _ in 0..deg {
        let v = pool.swap_remove(rng.gen_range(0..pool.len()));
        let lit = if rng.gen_bool(0.3) { sys.vars().negation_of(v).unwrap() } else { v };
        factors.push((lit, 1));
    }
    Monomial::from_pairs(factors)
}

/// Random Boolean system with `n` variables: a few clauses and moment
/// bounds, most of them calibrated against a random distribution on the
/// satisfying atoms.
pub fn random_boolean_system(rng: &mut ChaCha8Rng, n: usize) -> (ConstraintSystem, Vec<VarId>) {
    let mut sys = ConstraintSystem::new();
    let ids: Vec<VarId> = (0..n).map(|i| sys.declare_boolean(&format!("b{i}")).unwrap().0).collect();
    for _ in 0..rng.gen_range(0..=2) {
        let width = rng.gen_range(1..=n);
        let mut pool = ids.clone();
        let lits = (0..width)
            .map(|_| Literal { var: pool.swap_remove(rng.gen_range(0..pool.len())), positive: rng.gen() })
            .collect();
        sys.add_clause(Clause::new(lits)).unwrap();
    }
    let atoms = support_atoms(&sys);
    let weights: Vec<f64> = atoms.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    for _ in 0..rng.gen_range(1..=3) {
        let m = Polynomial::term(1.0, random_literal_monomial(rng, &sys, &ids, 2));
        let truth: f64 = atoms.iter().zip(&weights).map(|(a, w)| w * m.eval(a)).sum::<f64>() / total.max(1e-12);
        let dir = if rng.gen() { Direction::Ge } else { Direction::Le };
        let gamma = if rng.gen_bool(0.8) {
            let slack = rng.gen_range(0.0..0.2);
            if dir == Direction::Ge { truth - slack } else { truth + slack }
        } else {
            rng.gen_range(0.0..1.0)
        };
        sys.add_moment_bound(m, dir, (gamma * 1000.0).round() / 1000.0).unwrap();
    }
    (sys, ids)
}

/// Random objective of degree at most 2: one or two literal monomials with
/// coefficients in `[-1, 1]`.
pub fn random_objective(rng: &mut ChaCha8Rng, sys: &ConstraintSystem, ids: &[VarId]) -> Polynomial {
    let mut p = Polynomial::zero();
    for _ in 0..rng.gen_range(1..=2) {
        let c = (rng.gen_range(-1.0..1.0f64) * 100.0).round() / 100.0;
        let c = if c == 0.0 { 0.5 } else { c };
        p.add_term(random_literal_monomial(rng, sys, ids, 2), c);
    }
    p.reduce(sys.vars())
}

fn random_clause(rng: &mut ChaCha8Rng, n: usize, width: usize, distinct: bool) -> Vec<i32> {
    if distinct {
        let mut vs: Vec<i32> = (1..=n as i32).collect();
        for i in 0..width {
            let j = rng.gen_range(i..n);
            vs.swap(i, j);
        }
        vs[..width].iter().map(|&v| if rng.gen() { v } else { -v }).collect()
    } else {
        (0..width).map(|_| {
            let v = rng.gen_range(1..=n) as i32;
            if rng.gen() { v } else { -v }
        }).collect()
    }
}

/// Unsatisfiable CNFs with at most 10 variables whose minimal refutation
/// level is exactly `s`, `per_level` of each `s` in `0..=2`, each paired
/// with a replay-checked refutation trace.
pub fn refutable_corpus(seed: u64, per_level: usize) -> Vec<(CnfFormula, u32)> {
    let mut rng = rng(seed);
    let mut out = Vec::new();
    for level in 0..=2u32 {
        let mut found = 0;
        while found < per_level {
            let cnf = match level {
                0 => {
                    let n = rng.gen_range(2..=10);
                    let mut cl: Vec<Vec<i32>> = (0..rng.gen_range(1..=3)).map(|_| random_clause(&mut rng, n, 1, true)).collect();
                    cl.extend((0..rng.gen_range(n..=3 * n)).map(|_| {
                        let w = rng.gen_range(2..=3.min(n));
                        random_clause(&mut rng, n, w, true)
                    }));
                    CnfFormula::new(n, cl)
                }
                1 => {
                    let n = rng.gen_range(3..=10);
                    let m = (n as f64 * rng.gen_range(2.0..6.0)) as usize;
                    let cl = (0..m).map(|_| {
                        let w = if rng.gen_bool(0.5) { 2 } else { 3 };
                        random_clause(&mut rng, n, w, false)
                    }).collect();
                    CnfFormula::new(n, cl)
                }
                _ => {
                    let n = rng.gen_range(3..=7);
                    let m = (n as f64 * rng.gen_range(4.0..10.0)) as usize;
                    CnfFormula::new(n, (0..m).map(|_| random_clause(&mut rng, n, 3, true)).collect())
                }
            };
            if cnf.is_satisfiable_bruteforce() || refutation_level(&cnf, 2) != Some(level) {
                continue;
            }
            let root = Assignment::empty(cnf.num_vars());
            let trace = level_s_refute(&cnf, &root, level).expect("level found above");
            assert!(trace.check(&cnf, &root), "refutation trace must replay");
            out.push((cnf, level));
            found += 1;
        }
    }
    out
}

/// Re-expands a certificate against the program's own rows and blocks,
/// independently of the library verifier. Returns `(residual, scale)` where
/// residual is the naive norm of `expansion + c`.
pub fn independent_residual(prog: &SosProgram, cert: &Certificate) -> (f64, f64) {
    let vars = &prog.vars;
    let mut total = Polynomial::constant(cert.c);
    let mut scale = 0.0;
    let mut add = |p: Polynomial, total: &mut Polynomial| {
        let p = p.reduce(vars);
        scale += naive_norm(&p, vars).unwrap();
        *total = &*total + &p;
    };
    assert_eq!(cert.blocks.len(), prog.blocks.len());
    for (blk, g) in prog.blocks.iter().zip(&cert.blocks) {
        let k = blk.size();
        let mut sigma = Polynomial::zero();
        for a in 0..k {
            for b in 0..k {
                let w = g.gram[a * k + b];
                if w != 0.0 {
                    sigma.add_term(blk.basis[a].mul(&blk.basis[b]), w);
                }
            }
        }
        add(&sigma * &blk.multiplier, &mut total);
    }
    for (row, r) in prog.ineq_rows.iter().zip(&cert.inequality_rows) {
        assert!(r.multiplier >= 0.0);
        add(row.poly.scale(r.multiplier), &mut total);
    }
    for (row, r) in prog.eq_rows.iter().zip(&cert.equality_rows) {
        add(row.poly.scale(r.multiplier), &mut total);
    }
    (naive_norm(&total, vars).unwrap(), scale)
}

/// Largest `M_ab^2 - M_aa M_bb` over the global moment matrix at `x`.
pub fn cauchy_schwarz_excess(prog: &SosProgram, x: &[f64]) -> f64 {
    let blk = prog.blocks.iter().find(|b| b.group == 0).expect("global moment block");
    let m = blk.matrix(x);
    let mut worst = f64::NEG_INFINITY;
    for a in 0..blk.size() {
        for b in 0..blk.size() {
            worst = worst.max(m[(a, b)].powi(2) - m[(a, a)] * m[(b, b)]);
        }
    }
    worst
}
