//! Encoder properties checked through the solver: frame soundness, state-map
//! pinning, field-table coherence, and semantics preservation on small
//! generated specifications.

mod common;

use common::{
    encode_sources, enumerate_encoded_projections, enumerate_loy_structures, examples_encoding,
    gen_loy_spec, project_model,
};
use loy::encoder::{encode_spec, field_rel_name, VAR_ID, VAR_S0, VAR_S1};
use loy::relational::{
    eval_expr, eval_formula, solve, Atom, Binding, RelExpr, RelFormula, SatResult, Scope,
    SolveOptions, TypeEnv,
};
use loy::resolve::resolve;
use std::collections::BTreeSet;

fn opts() -> SolveOptions {
    SolveOptions::default()
}

/// Evaluate `state.map[id].field` in a binding.
fn snapshot_field(b: &Binding, map: &str, state: &Atom, id: &Atom, rel: &str) -> BTreeSet<Vec<Atom>> {
    let expr = RelExpr::Literal(vec![vec![id.clone()]])
        .join(RelExpr::Literal(vec![vec![state.clone()]]).dot(map))
        .dot(rel);
    eval_expr(b, &expr).unwrap()
}

#[test]
fn method_query_verdicts_match_the_walkthrough() {
    let enc = examples_encoding();
    let scope = Scope::uniform(3);
    // Both assign specifications clash with the invariants across states.
    for (class, method) in [("Employee", "assign"), ("ManagedEmployee", "assign")] {
        let (q, env) = enc.encode_method_query(class, method).unwrap();
        let r = solve(&enc.problem, &q, &env, &scope, &opts()).unwrap();
        assert_eq!(r, SatResult::Unsat, "{class}.{method}");
    }
    // Removing Project's invariant makes them satisfiable.
    let mut sources = common::examples_sources();
    sources[0] = sources[0].replace("invariant some manager", "");
    let enc = encode_sources(&sources);
    for (class, method) in [("Employee", "assign"), ("ManagedEmployee", "assign")] {
        let (q, env) = enc.encode_method_query(class, method).unwrap();
        let r = solve(&enc.problem, &q, &env, &scope, &opts()).unwrap();
        assert!(r.is_sat(), "{class}.{method}");
    }
}

#[test]
fn trivial_method_query_is_satisfiable() {
    let enc = encode_sources(&["class A { f : A\n m () }".to_string()]);
    let (q, env) = enc.encode_method_query("A", "m").unwrap();
    let r = solve(&enc.problem, &q, &env, &Scope::uniform(2), &opts()).unwrap();
    assert!(r.is_sat());
}

/// Frame soundness on satisfiable method queries: in every model, maps of
/// classes the method cannot affect agree across states, and every Id other
/// than the receiver's keeps its snapshot in the receiver's class map.
#[test]
fn frame_pins_unmodified_fields_and_other_references() {
    let src = "\
class A {
  f : B
  m (p : B)
    ensures f' = p
    modifies f
}
class B { }
";
    let enc = encode_sources(&[src.to_string()]);
    let scope = Scope::uniform(3);

    let m = enc.method("A", "m").unwrap().clone();
    let query = RelFormula::And(vec![m.pre.clone(), m.post.clone(), m.frame.clone()]);
    // Force a second live reference so the per-Id pinning is exercised.
    let own = enc.state_model.maps["A"].clone();
    let bystander = RelFormula::exists(
        "y",
        "Id",
        RelFormula::And(vec![
            RelFormula::SetEqual(RelExpr::var("y"), RelExpr::var(VAR_ID)).negate(),
            RelFormula::NonEmpty(RelExpr::var("y").join(RelExpr::var(VAR_S0).dot(own.clone()))),
        ]),
    );
    let extra = RelFormula::And(vec![query, bystander]);
    let result = solve(&enc.problem, &extra, &m.type_env, &scope, &opts()).unwrap();
    let SatResult::Sat(model) = result else {
        panic!("expected a model with a bystander reference")
    };

    let i = model.vars[VAR_ID].clone();
    let s0 = model.vars[VAR_S0].clone();
    let s1 = model.vars[VAR_S1].clone();

    // The unaffected class's map is pinned wholesale.
    {
        let map = enc.state_model.maps["B"].clone();
        let before = eval_expr(
            &model,
            &RelExpr::Literal(vec![vec![s0.clone()]]).dot(map.clone()),
        )
        .unwrap();
        let after =
            eval_expr(&model, &RelExpr::Literal(vec![vec![s1.clone()]]).dot(map)).unwrap();
        assert_eq!(before, after, "map B changed");
    }
    // Every other Id keeps its exact snapshot in the receiver's class map.
    let mut bystanders = 0;
    for id in &model.elements["Id"] {
        if *id == i {
            continue;
        }
        let before = eval_expr(
            &model,
            &RelExpr::Literal(vec![vec![id.clone()]])
                .join(RelExpr::Literal(vec![vec![s0.clone()]]).dot(own.clone())),
        )
        .unwrap();
        let after = eval_expr(
            &model,
            &RelExpr::Literal(vec![vec![id.clone()]])
                .join(RelExpr::Literal(vec![vec![s1.clone()]]).dot(own.clone())),
        )
        .unwrap();
        assert_eq!(before, after);
        if !before.is_empty() {
            bystanders += 1;
        }
    }
    assert!(bystanders >= 1, "the bystander reference should be live");
}

/// A field pinned by the frame genuinely cannot differ: adding a
/// postcondition that changes an unmodified field makes the query
/// unsatisfiable.
#[test]
fn frame_blocks_changes_outside_modifies() {
    let src = "\
class A {
  f : A
  g : A
  m (p : A)
    ensures f' = p
    modifies f
}
";
    let enc = encode_sources(&[src.to_string()]);
    let scope = Scope::uniform(2);
    let (q, env) = enc.encode_method_query("A", "m").unwrap();
    assert!(solve(&enc.problem, &q, &env, &scope, &opts()).unwrap().is_sat());

    // Same method, but the postcondition also moves g.
    let src2 = src.replace("ensures f' = p", "ensures f' = p\n    ensures g' = p");
    let enc2 = encode_sources(&[src2]);
    let (q2, env2) = enc2.encode_method_query("A", "m").unwrap();
    // g' = p with g unmodified forces g = p in the before state too; a model
    // exists only when g already equals p. The query remains satisfiable but
    // every model has g = p beforehand.
    let r = solve(&enc2.problem, &q2, &env2, &scope, &opts()).unwrap();
    let model = r.model().expect("sat with pre-equal g");
    let i = model.vars[VAR_ID].clone();
    let s0 = model.vars[VAR_S0].clone();
    let p = model.vars["p"].clone();
    let g_before = snapshot_field(&model, &enc2.state_model.maps["A"], &s0, &i, &field_rel_name("A", "g"));
    assert_eq!(g_before, [vec![p]].into_iter().collect::<BTreeSet<_>>());
}

/// Depends closure: with `depends g <- f`, modifying f exempts g as well.
#[test]
fn depends_closure_lets_dependent_fields_change() {
    let src = "\
class A {
  f : A
  g : A
  depends g <- f
  m (p : A)
    ensures f' = p
    ensures g' = p
    modifies f
}
";
    let enc = encode_sources(&[src.to_string()]);
    let scope = Scope::uniform(2);
    let (q, env) = enc.encode_method_query("A", "m").unwrap();
    // Without the depends clause this forces g = p beforehand; with it, g may
    // change freely, so a model with g initially empty exists.
    let pin_g_empty = RelFormula::Empty(
        RelExpr::var(VAR_ID)
            .join(RelExpr::var(VAR_S0).dot(enc.state_model.maps["A"].clone()))
            .dot(field_rel_name("A", "g")),
    );
    let extra = RelFormula::And(vec![q, pin_g_empty.clone()]);
    assert!(solve(&enc.problem, &extra, &env, &scope, &opts()).unwrap().is_sat());

    let src2 = src.replace("  depends g <- f\n", "");
    let enc2 = encode_sources(&[src2]);
    let (q2, env2) = enc2.encode_method_query("A", "m").unwrap();
    let extra2 = RelFormula::And(vec![q2, pin_g_empty]);
    assert_eq!(
        solve(&enc2.problem, &extra2, &env2, &scope, &opts()).unwrap(),
        SatResult::Unsat
    );
}

/// Field-table coherence: in every model, the table row at a field's index
/// holds exactly the field's value.
#[test]
fn field_table_rows_mirror_field_values() {
    let enc = examples_encoding();
    let scope = Scope::uniform(2);
    let extra = RelFormula::NonEmpty(RelExpr::rel("ManagedEmployee"));
    let r = solve(&enc.problem, &extra, &TypeEnv::new(), &scope, &opts()).unwrap();
    let model = r.model().expect("sat");
    for cls in enc.resolved().classes.clone() {
        let table = &enc.field_tables[&cls.name];
        for atom in &model.elements[&cls.name] {
            // Only direct instances follow this class's table.
            let direct = !cls
                .subclasses
                .iter()
                .any(|s| model.elements[s].contains(atom));
            if !direct {
                continue;
            }
            for (k, fname) in table.fields.iter().enumerate() {
                let field = cls.field(fname).unwrap();
                let rel = field_rel_name(&field.declared_in, fname);
                let via_field: BTreeSet<Vec<Atom>> = model.tuples[&rel]
                    .iter()
                    .filter(|t| &t[0] == atom)
                    .map(|t| vec![t[1].clone()])
                    .collect();
                let via_table: BTreeSet<Vec<Atom>> = model.tuples["fields"]
                    .iter()
                    .filter(|t| &t[0] == atom && t[1] == Atom::new("Idx", k))
                    .map(|t| vec![t[2].clone()])
                    .collect();
                assert_eq!(via_field, via_table, "{}.{fname}", cls.name);
            }
        }
    }
}

/// Semantics preservation on a handful of generated specs: the canonical
/// Loy-level structures equal the canonical projections of the encoded
/// models.
#[test]
fn small_specs_preserve_semantics() {
    let scope = Scope::uniform(2);
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 6 {
        seed += 1;
        let spec = gen_loy_spec(seed);
        let Ok(resolved) = resolve(&spec) else { continue };
        if !loy::typecheck(&resolved).is_empty() {
            continue;
        }
        let enc = encode_spec(&resolved);

        let loy_side: BTreeSet<String> = enumerate_loy_structures(&resolved, &scope)
            .iter()
            .map(|s| s.canonical())
            .collect();
        let encoded_side: BTreeSet<String> = enumerate_encoded_projections(&enc, &scope, 4000)
            .iter()
            .map(|s| s.canonical())
            .collect();
        assert_eq!(loy_side, encoded_side, "seed {seed}");
        checked += 1;
    }
}

/// Every model the solver finds on an encoded problem projects onto a
/// structure that satisfies the declarations and invariants directly.
#[test]
fn models_project_to_valid_structures() {
    let enc = examples_encoding();
    let scope = Scope::uniform(2);
    let extra = RelFormula::NonEmpty(RelExpr::rel("Employee"));
    let r = solve(&enc.problem, &extra, &TypeEnv::new(), &scope, &opts()).unwrap();
    let model = r.model().expect("sat");
    assert_eq!(eval_formula(model, &enc.problem.gamma()), Ok(true));
    let structure = project_model(&enc, model);
    assert!(common::satisfies_invariants(enc.resolved(), &structure));
}
