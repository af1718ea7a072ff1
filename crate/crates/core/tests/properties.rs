mod common;

use proptest::prelude::*;

use sospl_core::learn::{hoeffding_radius, parse_examples, witness_rate};
use sospl_core::model::{parse_problem, Clause, ConstraintSystem, Direction, Literal};
use sospl_core::poly::{expression_bounds, is_witnessed, Monomial, PartialAssignment, Polynomial, VarId, Variables};
use sospl_core::relax::{build_program, index_size};
use sospl_core::resolution::{level_s_refute, unit_propagate, Assignment, CnfFormula, Propagation};
use sospl_core::sdp::sdpa::{read_sdpa, to_sdpa, write_sdpa};

/// Two Booleans (with twins) and two bounded reals.
fn mixed_vars() -> (Variables, Vec<VarId>) {
    let mut vars = Variables::new();
    let (a, na) = vars.add_boolean("a").unwrap();
    let (b, nb) = vars.add_boolean("b").unwrap();
    let s = vars.add_bounded("s", -1.5, 2.0).unwrap();
    let t = vars.add_bounded("t", 0.25, 3.0).unwrap();
    (vars, vec![a, na, b, nb, s, t])
}

fn poly_strategy(nvars: usize) -> impl Strategy<Value = Vec<(Vec<(usize, u32)>, f64)>> {
    prop::collection::vec((prop::collection::vec((0..nvars, 1u32..=3), 0..=3), -4.0f64..4.0), 0..=5)
}

fn build(ids: &[VarId], raw: &[(Vec<(usize, u32)>, f64)]) -> Polynomial {
    Polynomial::from_terms(raw.iter().map(|(f, c)| (Monomial::from_pairs(f.iter().map(|&(i, e)| (ids[i], e))), *c)))
}

/// A point in the box of `mixed_vars` with consistent twins, from unit-cube draws.
fn point(vars: &Variables, ids: &[VarId], u: &[f64; 4]) -> Vec<f64> {
    let mut p = vec![0.0; vars.len()];
    let a = (u[0] < 0.5) as u8 as f64;
    let b = (u[1] < 0.5) as u8 as f64;
    p[ids[0].index()] = a;
    p[ids[1].index()] = 1.0 - a;
    p[ids[2].index()] = b;
    p[ids[3].index()] = 1.0 - b;
    p[ids[4].index()] = -1.5 + 3.5 * u[2];
    p[ids[5].index()] = 0.25 + 2.75 * u[3];
    p
}

fn close(x: f64, y: f64, scale: f64) -> bool {
    (x - y).abs() <= 1e-9 * scale.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ring_operations_commute_with_evaluation(
        p in poly_strategy(6), q in poly_strategy(6), u in prop::array::uniform4(0.0f64..1.0)
    ) {
        let (vars, ids) = mixed_vars();
        let (p, q) = (build(&ids, &p), build(&ids, &q));
        let x = point(&vars, &ids, &u);
        let (pv, qv) = (p.eval(&x), q.eval(&x));
        let scale = 1e3 * (1.0 + pv.abs()) * (1.0 + qv.abs());
        prop_assert!(close((&p + &q).eval(&x), pv + qv, scale));
        prop_assert!(close((&p - &q).eval(&x), pv - qv, scale));
        prop_assert!(close((&p * &q).eval(&x), pv * qv, scale));
        prop_assert!(close((-&p).eval(&x), -pv, scale));
    }

    #[test]
    fn reduction_preserves_values_on_consistent_points(p in poly_strategy(6), u in prop::array::uniform4(0.0f64..1.0)) {
        let (vars, ids) = mixed_vars();
        let p = build(&ids, &p);
        let x = point(&vars, &ids, &u);
        let r = p.reduce(&vars);
        prop_assert!(close(r.eval(&x), p.eval(&x), 1e3 * (1.0 + p.eval(&x).abs())));
        prop_assert!(r.terms().all(|(m, _)| m.factors().iter().all(|&(v, e)| !vars.is_boolean(v) || e == 1)));
        prop_assert_eq!(r.reduce(&vars), r);
    }

    #[test]
    fn text_form_round_trips(p in poly_strategy(6)) {
        let (vars, ids) = mixed_vars();
        let p = build(&ids, &p);
        let text = p.display(&vars).to_string();
        let back = Polynomial::parse(&text, &vars).unwrap();
        prop_assert_eq!(&back, &p, "text `{}`", text);
        prop_assert_eq!(back.display(&vars).to_string(), text);
    }

    #[test]
    fn restriction_bounds_and_witnessing(
        p in poly_strategy(6), u in prop::array::uniform4(0.0f64..1.0), mask in 0u8..16
    ) {
        let (vars, ids) = mixed_vars();
        let p = build(&ids, &p);
        let x = point(&vars, &ids, &u);
        let mut rho = PartialAssignment::new();
        // twins are revealed together with their Boolean
        for (k, group) in [[0usize, 1], [2, 3], [4, 4], [5, 5]].iter().enumerate() {
            if mask >> k & 1 == 1 {
                for &i in group {
                    rho.assign(ids[i], x[ids[i].index()]);
                }
            }
        }
        let exact = p.eval(&x);
        let scale = 1e3 * p.terms().map(|(_, c)| c.abs()).sum::<f64>().max(1.0);
        prop_assert!(close(p.partial_eval(&rho, &vars).unwrap().eval(&x), exact, scale));
        let iv = expression_bounds(&p, &rho, &vars).unwrap();
        prop_assert!(iv.lo - 1e-9 * scale <= exact && exact <= iv.hi + 1e-9 * scale, "{exact} outside [{}, {}]", iv.lo, iv.hi);
        if is_witnessed(&p, &rho, &vars).unwrap() {
            prop_assert!(exact >= -1e-9 * scale);
        }
    }
}

fn boolean_system(n: usize, clauses: &[Vec<(usize, bool)>], bounds: &[(Vec<usize>, bool, f64)]) -> ConstraintSystem {
    let mut sys = ConstraintSystem::new();
    let ids: Vec<VarId> = (0..n).map(|i| sys.declare_boolean(&format!("v{i}")).unwrap().0).collect();
    for c in clauses {
        let lits = c.iter().map(|&(i, positive)| Literal { var: ids[i % n], positive }).collect();
        sys.add_clause(Clause::new(lits)).unwrap();
    }
    for (vs, ge, gamma) in bounds {
        let m = Monomial::from_pairs(vs.iter().map(|&i| (ids[i % n], 1)));
        let dir = if *ge { Direction::Ge } else { Direction::Le };
        sys.add_moment_bound(Polynomial::term(1.0, m), dir, *gamma).unwrap();
    }
    sys
}

/// Clauses over distinct variables of a 3-variable system.
fn clause_strategy() -> impl Strategy<Value = Vec<Vec<(usize, bool)>>> {
    let clause = (1u8..8, prop::array::uniform3(any::<bool>()))
        .prop_map(|(mask, signs)| (0..3).filter(|i| mask >> i & 1 == 1).map(|i| (i, signs[i])).collect());
    prop::collection::vec(clause, 0..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn problem_text_round_trips(
        clauses in clause_strategy(),
        bounds in prop::collection::vec((prop::collection::vec(0usize..3, 1..=2), any::<bool>(), 0.0f64..1.0), 0..=3)
    ) {
        let sys = boolean_system(3, &clauses, &bounds);
        let text = sys.to_text(&[]);
        let (back, queries) = parse_problem(&text).unwrap();
        prop_assert!(queries.is_empty());
        prop_assert_eq!(back.to_text(&[]), text);
        prop_assert_eq!(back.moment_bounds().len(), sys.moment_bounds().len());
    }

    #[test]
    fn atom_moments_satisfy_the_relaxation(clauses in clause_strategy(), w in prop::collection::vec(0.01f64..1.0, 8), d in 1u32..=3) {
        let sys = boolean_system(3, &clauses, &[]);
        let atoms = common::support_atoms(&sys);
        prop_assume!(!atoms.is_empty());
        let total: f64 = w.iter().take(atoms.len()).sum();
        let support: Vec<(Vec<f64>, f64)> = atoms.into_iter().zip(&w).map(|(a, &wi)| (a, wi / total)).collect();
        let prog = build_program(&sys, d).unwrap();
        let x = prog.moments_of(&support);
        let rep = prog.check_feasible(&x, 1e-9);
        prop_assert!(rep.feasible, "{rep:?}");
        for m in prog.block_matrices(&x) {
            prop_assert!((&m - m.transpose()).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn index_size_counts_enumerated_monomials(d in 0u32..=4) {
        let (vars, ids) = mixed_vars();
        let prog = build_program(&ConstraintSystem::new(), d.max(1)).unwrap();
        prop_assert!(prog.num_moments() >= 1);
        let all = sospl_core::relax::enumerate_monomials(&vars, &ids, d);
        prop_assert_eq!(all.len(), index_size(&vars, &ids, d));
        prop_assert!(all[0].is_one());
    }

    #[test]
    fn sdpa_text_round_trips(clauses in clause_strategy(), d in 1u32..=2) {
        let sys = boolean_system(3, &clauses, &[(vec![0], true, 0.25)]);
        let prob = to_sdpa(&build_program(&sys, d).unwrap());
        let back = read_sdpa(&write_sdpa(&prob)).unwrap();
        prop_assert_eq!(back, prob);
    }
}

fn cnf_strategy() -> impl Strategy<Value = (usize, Vec<Vec<i32>>)> {
    (2usize..=6).prop_flat_map(|n| {
        let lit = (1..=n as i32, any::<bool>()).prop_map(|(v, s)| if s { v } else { -v });
        (Just(n), prop::collection::vec(prop::collection::vec(lit, 1..=3), 1..=18))
    })
}

fn satisfying_assignments(n: usize, clauses: &[Vec<i32>]) -> Vec<Vec<bool>> {
    (0u32..1 << n)
        .map(|mask| (0..n).map(|i| mask >> i & 1 == 1).collect::<Vec<bool>>())
        .filter(|a| clauses.iter().all(|c| c.iter().any(|&l| a[l.unsigned_abs() as usize - 1] == (l > 0))))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn unit_propagation_is_sound((n, clauses) in cnf_strategy(), seed in prop::collection::vec(-6i32..=6, 0..=2)) {
        let seed: Vec<i32> = seed.into_iter().filter(|&l| l != 0 && l.unsigned_abs() as usize <= n).collect();
        let cnf = CnfFormula::new(n, clauses.clone());
        let rho = Assignment::from_literals(n, &seed);
        let models: Vec<Vec<bool>> = satisfying_assignments(n, &clauses)
            .into_iter()
            .filter(|a| seed.iter().all(|&l| a[l.unsigned_abs() as usize - 1] == (l > 0)))
            .collect();
        match unit_propagate(&cnf, &rho) {
            Propagation::Conflict { .. } => prop_assert!(models.is_empty()),
            Propagation::Extended { implied, .. } => {
                for m in &models {
                    prop_assert!(implied.iter().all(|&l| m[l.unsigned_abs() as usize - 1] == (l > 0)));
                }
            }
            Propagation::Fixpoint => {}
        }
    }

    #[test]
    fn refutations_replay_and_are_monotone((n, clauses) in cnf_strategy()) {
        let cnf = CnfFormula::new(n, clauses);
        let root = Assignment::empty(n);
        let mut found = false;
        for s in 0..=2 {
            match level_s_refute(&cnf, &root, s) {
                Some(trace) => {
                    prop_assert!(trace.check(&cnf, &root));
                    prop_assert!(!cnf.is_satisfiable_bruteforce());
                    found = true;
                }
                None => prop_assert!(!found, "level {s} lost a refutation found below it"),
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn examples_parse_and_witness_rates_are_fractions(
        cells in prop::collection::vec(prop::collection::vec(prop::option::of(any::<bool>()), 2), 1..=30)
    ) {
        let (vars, ids) = mixed_vars();
        let mut csv = String::from("a, b\n");
        for row in &cells {
            let f: Vec<&str> = row.iter().map(|c| match c { Some(true) => "1", Some(false) => "0", None => "*" }).collect();
            csv += &format!("{}\n", f.join(","));
        }
        let ex = parse_examples(&csv, &vars).unwrap();
        prop_assert_eq!(ex.len(), cells.len());
        for (row, c) in ex.rows.iter().zip(&cells) {
            match c[0] {
                Some(v) => {
                    prop_assert_eq!(row.get(ids[0]), Some(v as u8 as f64));
                    prop_assert_eq!(row.get(ids[1]), Some(1.0 - v as u8 as f64));
                }
                None => prop_assert!(!row.is_assigned(ids[0]) && !row.is_assigned(ids[1])),
            }
        }
        let clause = Polynomial::parse("a + b - 1", &vars).unwrap();
        let r = witness_rate(&[clause], &ex).unwrap();
        // a + b - 1 >= 0 is certain exactly when some revealed literal is true
        let expected = cells.iter().filter(|c| c.contains(&Some(true))).count() as f64 / cells.len() as f64;
        prop_assert!((r - expected).abs() <= 1e-12, "rate {r}, expected {expected}");
    }

    #[test]
    fn hoeffding_radius_shrinks_with_more_examples(m in 1usize..10_000, delta in 0.001f64..0.999) {
        let (vars, ids) = mixed_vars();
        let n_d = index_size(&vars, &ids, 2);
        for mono in [Monomial::var(ids[0]), Monomial::from_pairs([(ids[4], 1), (ids[5], 1)])] {
            let r1 = hoeffding_radius(&mono, &vars, m, delta, n_d).unwrap();
            let r2 = hoeffding_radius(&mono, &vars, 4 * m, delta, n_d).unwrap();
            prop_assert!(r1 > 0.0);
            prop_assert!((r2 - r1 / 2.0).abs() <= 1e-12 * r1);
        }
    }
}
