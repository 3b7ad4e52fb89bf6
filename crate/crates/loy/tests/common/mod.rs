//! Shared test helpers: fixture loading, seeded generators for relational
//! problems, Loy specifications and closed formulas, and a Loy-level
//! structure enumerator that serves as an oracle completely independent of
//! the relational machinery.

#![allow(dead_code)]

use loy::ast::{
    ClassSpec, DependsClause, Expr, FieldDecl, FieldPath, Formula, Ident, LoySpec, MethodSpec,
    Multiplicity,
};
use loy::encoder::{encode_spec, field_rel_name, Encoding};
use loy::relational::{
    solve, Atom, Mult, RelExpr, RelFormula, RelProblem, SatResult, Scope, SolveOptions, TypeEnv,
};
use loy::resolve::{resolve, ResolvedSpec};
use loy::span::Span;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::collections::{BTreeMap, BTreeSet};

pub fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("cannot read {path}: {e}"))
}

pub fn golden(name: &str) -> String {
    let path = format!("{}/tests/goldens/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("cannot read {path}: {e}"))
}

pub fn examples_sources() -> Vec<String> {
    ["project.loy", "employee.loy", "managed_employee.loy", "manager.loy"]
        .iter()
        .map(|f| fixture(f))
        .collect()
}

pub fn encode_sources(sources: &[String]) -> Encoding {
    let spec = loy::parse_files(sources.iter().map(String::as_str)).expect("fixture parses");
    let resolved = resolve(&spec).expect("fixture resolves");
    let diags = loy::typecheck(&resolved);
    assert!(diags.is_empty(), "fixture should typecheck: {diags:?}");
    encode_spec(&resolved)
}

pub fn examples_encoding() -> Encoding {
    encode_sources(&examples_sources())
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// random relational problems (oracle-equivalence tests)
// ---------------------------------------------------------------------------

pub struct GeneratedProblem {
    pub problem: RelProblem,
    pub extra: RelFormula,
    pub env: TypeEnv,
    pub scope: Scope,
}

/// A random problem with at most two domains (the second nested under the
/// first), at most two binary relations, and small random formulas.
pub fn gen_problem(seed: u64) -> GeneratedProblem {
    let mut rng = rng(seed);
    let mut problem = RelProblem::new();
    let mut domains = vec!["D1".to_string()];
    problem.add_domain("D1");
    if rng.gen_bool(0.6) {
        problem.add_subdomain("D2", "D1");
        domains.push("D2".to_string());
    }
    let mut relations = Vec::new();
    for name in ["r1", "r2"] {
        if rng.gen_bool(0.7) {
            let c1 = domains[rng.gen_range(0..domains.len())].clone();
            let c2 = domains[rng.gen_range(0..domains.len())].clone();
            let m = if rng.gen_bool(0.4) { Mult::Lone } else { Mult::Any };
            problem.add_relation(name, &[&c1, &c2], &[Mult::Any, m]);
            relations.push(name.to_string());
        }
    }

    let mut env = TypeEnv::new();
    for v in ["v1", "v2"] {
        if rng.gen_bool(0.4) {
            env.push(v, domains[rng.gen_range(0..domains.len())].clone());
        }
    }
    let vars: Vec<String> = env.iter().map(|(v, _)| v.clone()).collect();

    let mut gen = FormulaGen {
        rng: &mut rng,
        domains: &domains,
        relations: &relations,
        vars,
        fresh: 0,
    };
    let n_constraints = gen.rng.gen_range(0..=2);
    let mut constraint_vars = gen.vars.clone();
    // Core constraints must be closed; hide the environment variables.
    gen.vars = Vec::new();
    for _ in 0..n_constraints {
        let depth = gen.rng.gen_range(1..=3);
        let f = gen.formula(depth);
        problem.add_constraint(f);
    }
    std::mem::swap(&mut gen.vars, &mut constraint_vars);
    let depth = gen.rng.gen_range(1..=4);
    let extra = gen.formula(depth);

    let scope = Scope::uniform(rng.gen_range(1..=2));
    GeneratedProblem { problem, extra, env, scope }
}

struct FormulaGen<'a> {
    rng: &'a mut StdRng,
    domains: &'a [String],
    relations: &'a [String],
    vars: Vec<String>,
    fresh: usize,
}

impl FormulaGen<'_> {
    fn formula(&mut self, depth: usize) -> RelFormula {
        if depth <= 1 {
            return self.atom();
        }
        match self.rng.gen_range(0..7) {
            0 => RelFormula::And(vec![self.formula(depth - 1), self.formula(depth - 1)]),
            1 => RelFormula::Or(vec![self.formula(depth - 1), self.formula(depth - 1)]),
            2 => self.formula(depth - 1).implies(self.formula(depth - 1)),
            3 => self.formula(depth - 1).negate(),
            4 | 5 => {
                let var = format!("q{}", self.fresh);
                self.fresh += 1;
                let domain = self.pick_domain();
                self.vars.push(var.clone());
                let body = self.formula(depth - 1);
                self.vars.pop();
                if self.rng.gen_bool(0.5) {
                    RelFormula::forall(var, domain, body)
                } else {
                    RelFormula::exists(var, domain, body)
                }
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> RelFormula {
        match self.rng.gen_range(0..5) {
            0 => RelFormula::Empty(self.unary_expr()),
            1 => RelFormula::NonEmpty(self.unary_expr()),
            2 => RelFormula::SetEqual(self.unary_expr(), self.unary_expr()),
            3 => RelFormula::Subset(self.unary_expr(), self.unary_expr()),
            _ => RelFormula::CardEq(self.unary_expr(), self.rng.gen_range(0..=2)),
        }
    }

    fn pick_domain(&mut self) -> String {
        self.domains[self.rng.gen_range(0..self.domains.len())].clone()
    }

    /// A unary expression: a domain, a variable, or a join chain through the
    /// binary relations.
    fn unary_expr(&mut self) -> RelExpr {
        let mut expr = if !self.vars.is_empty() && self.rng.gen_bool(0.5) {
            RelExpr::var(self.vars[self.rng.gen_range(0..self.vars.len())].clone())
        } else {
            RelExpr::rel(self.pick_domain())
        };
        if !self.relations.is_empty() {
            for _ in 0..self.rng.gen_range(0..=2) {
                let rel = self.relations[self.rng.gen_range(0..self.relations.len())].clone();
                expr = expr.dot(rel);
            }
        }
        expr
    }
}

// ---------------------------------------------------------------------------
// random Loy specifications
// ---------------------------------------------------------------------------

fn ident(name: &str) -> Ident {
    Ident::new(name, Span::default())
}

/// A small random Loy specification: one or two classes, up to two fields,
/// simple invariants. Always resolves and typechecks.
pub fn gen_loy_spec(seed: u64) -> LoySpec {
    let mut rng = rng(seed);
    let two_classes = rng.gen_bool(0.7);
    let b_extends_a = two_classes && rng.gen_bool(0.5);

    let class_names: Vec<&str> = if two_classes { vec!["A", "B"] } else { vec!["A"] };
    let mut classes = Vec::new();
    let mut total_fields = 0usize;

    for (ci, name) in class_names.iter().enumerate() {
        let mut fields = Vec::new();
        while total_fields < 2 && rng.gen_bool(0.55) {
            let fname = format!("f{total_fields}");
            let target = class_names[rng.gen_range(0..class_names.len())];
            let multiplicity = if rng.gen_bool(0.25) {
                Multiplicity::Set
            } else {
                Multiplicity::Scalar
            };
            fields.push(FieldDecl {
                name: ident(&fname),
                target: ident(target),
                multiplicity,
            });
            total_fields += 1;
        }
        classes.push(ClassSpec {
            name: ident(name),
            superclass: if *name == "B" && b_extends_a {
                Some(ident("A"))
            } else {
                None
            },
            fields,
            depends: Vec::new(),
            invariants: Vec::new(),
            methods: Vec::new(),
        });
    }

    // A depends clause between two declared fields, occasionally.
    for cls in &mut classes {
        if cls.fields.len() >= 2 && rng.gen_bool(0.4) {
            cls.depends.push(DependsClause {
                dependent: cls.fields[1].name.clone(),
                sources: vec![cls.fields[0].name.clone()],
            });
        }
    }

    // Invariants over visible fields, after resolution is knowable: a class
    // sees its own fields plus the parent's when it extends A.
    for ci in 0..classes.len() {
        let mut visible: Vec<String> = classes[ci]
            .fields
            .iter()
            .map(|f| f.name.name.clone())
            .collect();
        if classes[ci].superclass.is_some() {
            visible.extend(classes[0].fields.iter().map(|f| f.name.name.clone()));
        }
        if visible.is_empty() {
            continue;
        }
        let n_inv = rng.gen_range(0..=2);
        for _ in 0..n_inv {
            let field = visible[rng.gen_range(0..visible.len())].clone();
            let expr = Expr::Name { ident: ident(&field), primed: false };
            let inv = if rng.gen_bool(0.5) {
                Formula::Some(expr)
            } else {
                Formula::No(expr)
            };
            classes[ci].invariants.push(inv);
        }
    }

    LoySpec { classes }
}

/// A random spec that additionally carries a depends clause and a method,
/// exercising the frame machinery (used by pattern-property runs).
pub fn gen_loy_spec_with_method(seed: u64) -> LoySpec {
    let mut spec = gen_loy_spec(seed);
    let mut rng = rng(seed ^ 0x9e3779b97f4a7c15);
    let class_names: Vec<String> = spec.classes.iter().map(|c| c.name.name.clone()).collect();
    // Attach a method to the first class that has a field.
    for cls in &mut spec.classes {
        let Some(field) = cls.fields.first().map(|f| f.name.name.clone()) else {
            continue;
        };
        let target = class_names[rng.gen_range(0..class_names.len())].clone();
        let pre = if rng.gen_bool(0.5) {
            vec![Formula::No(Expr::Name { ident: ident(&field), primed: false })]
        } else {
            Vec::new()
        };
        let post = vec![Formula::Some(Expr::Name { ident: ident(&field), primed: true })];
        cls.methods.push(MethodSpec {
            return_class: None,
            name: ident("act"),
            params: vec![FieldDecl {
                name: ident("p"),
                target: ident(&target),
                multiplicity: Multiplicity::Scalar,
            }],
            requires: pre,
            ensures: post,
            modifies: vec![FieldPath { segments: vec![ident(&field)] }],
        });
        break;
    }
    spec
}

/// A closed random formula over the classes and fields of a resolved spec.
pub fn gen_closed_formula(resolved: &ResolvedSpec, seed: u64, max_depth: usize) -> Formula {
    let mut rng = rng(seed);
    let mut gen = LoyFormulaGen { rng: &mut rng, resolved, scope: Vec::new(), fresh: 0 };
    gen.formula(max_depth)
}

struct LoyFormulaGen<'a> {
    rng: &'a mut StdRng,
    resolved: &'a ResolvedSpec,
    scope: Vec<(String, String)>, // (var, class)
    fresh: usize,
}

impl LoyFormulaGen<'_> {
    fn pick_class(&mut self) -> String {
        let classes = &self.resolved.classes;
        classes[self.rng.gen_range(0..classes.len())].name.clone()
    }

    fn formula(&mut self, depth: usize) -> Formula {
        if depth <= 1 {
            return self.atom();
        }
        match self.rng.gen_range(0..8) {
            0 => Formula::And(vec![self.formula(depth - 1), self.formula(depth - 1)]),
            1 => Formula::Or(vec![self.formula(depth - 1), self.formula(depth - 1)]),
            2 => Formula::Implies(
                Box::new(self.formula(depth - 1)),
                Box::new(self.formula(depth - 1)),
            ),
            3 => Formula::Not(Box::new(self.formula(depth - 1))),
            4 | 5 | 6 => {
                let var = format!("q{}", self.fresh);
                self.fresh += 1;
                let class = self.pick_class();
                self.scope.push((var.clone(), class.clone()));
                let body = self.formula(depth - 1);
                self.scope.pop();
                if self.rng.gen_bool(0.5) {
                    Formula::All { var: ident(&var), class: ident(&class), body: Box::new(body) }
                } else {
                    Formula::Exists { var: ident(&var), class: ident(&class), body: Box::new(body) }
                }
            }
            _ => self.atom(),
        }
    }

    fn atom(&mut self) -> Formula {
        let expr = self.expr();
        if self.rng.gen_bool(0.5) {
            Formula::Some(expr)
        } else {
            Formula::No(expr)
        }
    }

    /// A class reference or a quantified variable followed by a short field
    /// chain.
    fn expr(&mut self) -> Expr {
        if self.scope.is_empty() || self.rng.gen_bool(0.3) {
            return Expr::Name { ident: ident(&self.pick_class()), primed: false };
        }
        let (var, class) = self.scope[self.rng.gen_range(0..self.scope.len())].clone();
        let mut expr = Expr::Name { ident: ident(&var), primed: false };
        let mut cur = class;
        for _ in 0..self.rng.gen_range(0..=2) {
            let cls = self.resolved.class(&cur).unwrap();
            if cls.visible_fields.is_empty() {
                break;
            }
            let f = &cls.visible_fields[self.rng.gen_range(0..cls.visible_fields.len())];
            expr = Expr::Field {
                base: Box::new(expr),
                field: ident(&f.name),
                primed: false,
            };
            cur = f.target.clone();
        }
        expr
    }
}

// ---------------------------------------------------------------------------
// Loy-level structures: the independent oracle for semantics preservation
// ---------------------------------------------------------------------------

/// A finite structure at the Loy level: objects with a dynamic class and
/// field values (sets of object indices).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LoyStructure {
    pub objects: Vec<LoyObject>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LoyObject {
    pub class: String,
    pub fields: BTreeMap<String, BTreeSet<usize>>,
}

impl LoyStructure {
    /// Objects whose dynamic class is `class` or a subclass of it.
    pub fn extent(&self, resolved: &ResolvedSpec, class: &str) -> BTreeSet<usize> {
        self.objects
            .iter()
            .enumerate()
            .filter(|(_, o)| resolved.is_subclass_of(&o.class, class))
            .map(|(i, _)| i)
            .collect()
    }

    /// Canonical serialization up to object renaming.
    pub fn canonical(&self) -> String {
        let n = self.objects.len();
        let mut best: Option<String> = None;
        for perm in permutations(n) {
            // perm[old] = new index
            let mut renamed: Vec<(usize, &LoyObject)> = self.objects.iter().enumerate().collect();
            renamed.sort_by_key(|(old, _)| perm[*old]);
            let mut s = String::new();
            for (old, _) in &renamed {
                let o = &self.objects[*old];
                s.push_str(&o.class);
                s.push('{');
                for (f, vals) in &o.fields {
                    let mapped: BTreeSet<usize> = vals.iter().map(|v| perm[*v]).collect();
                    s.push_str(&format!("{f}={mapped:?};"));
                }
                s.push('}');
            }
            if best.as_ref().map_or(true, |b| s < *b) {
                best = Some(s);
            }
        }
        best.unwrap_or_default()
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    permute(&mut items, 0, &mut out);
    out
}

fn permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, out);
        items.swap(k, i);
    }
}

/// Enumerate every Loy-level structure within scope satisfying the
/// declarations and all invariants, by direct evaluation (no relational
/// machinery involved).
pub fn enumerate_loy_structures(resolved: &ResolvedSpec, scope: &Scope) -> Vec<LoyStructure> {
    let max_objects = scope.bound("Obj");
    let class_names: Vec<String> = resolved.classes.iter().map(|c| c.name.clone()).collect();
    let mut out = Vec::new();

    // Sorts: each of up to max_objects slots is absent or some class.
    let options = class_names.len() + 1;
    let mut sorts = vec![0usize; max_objects];
    'sorts: loop {
        let classes: Vec<&String> = sorts
            .iter()
            .filter(|&&s| s > 0)
            .map(|&s| &class_names[s - 1])
            .collect();
        let within_bounds = class_names.iter().all(|c| {
            let count = classes
                .iter()
                .filter(|dynamic| resolved.is_subclass_of(dynamic, c))
                .count();
            count <= scope.bound(c)
        });
        // Only canonical sort orders: present slots first, non-decreasing.
        // Other orders are renamings of the same multiset.
        let canonical_order = sorts.windows(2).all(|w| {
            (w[0] > 0 || w[1] == 0) && (w[0] == 0 || w[1] == 0 || w[0] <= w[1])
        });
        if within_bounds && canonical_order {
            enumerate_fields(resolved, &classes, &mut out);
        }
        for i in (0..max_objects).rev() {
            sorts[i] += 1;
            if sorts[i] < options {
                continue 'sorts;
            }
            sorts[i] = 0;
        }
        break;
    }
    out
}

fn enumerate_fields(resolved: &ResolvedSpec, classes: &[&String], out: &mut Vec<LoyStructure>) {
    // Field slots: (object, field name, candidate targets, is_set).
    let mut slots: Vec<(usize, String, Vec<usize>, bool)> = Vec::new();
    for (i, class) in classes.iter().enumerate() {
        let cls = resolved.class(class).unwrap();
        for f in &cls.visible_fields {
            let targets: Vec<usize> = classes
                .iter()
                .enumerate()
                .filter(|(_, c)| resolved.is_subclass_of(c, &f.target))
                .map(|(j, _)| j)
                .collect();
            slots.push((i, f.name.clone(), targets, f.multiplicity == Multiplicity::Set));
        }
    }
    // Each slot takes a value: scalar -> none or one target; set -> subset.
    let choices: Vec<usize> = slots
        .iter()
        .map(|(_, _, t, set)| if *set { 1usize << t.len() } else { t.len() + 1 })
        .collect();
    let mut pick = vec![0usize; slots.len()];
    'outer: loop {
        let mut objects: Vec<LoyObject> = classes
            .iter()
            .map(|c| LoyObject { class: (*c).clone(), fields: BTreeMap::new() })
            .collect();
        for (si, (obj, fname, targets, set)) in slots.iter().enumerate() {
            let vals: BTreeSet<usize> = if *set {
                targets
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| pick[si] & (1 << k) != 0)
                    .map(|(_, &t)| t)
                    .collect()
            } else if pick[si] == 0 {
                BTreeSet::new()
            } else {
                [targets[pick[si] - 1]].into_iter().collect()
            };
            objects[*obj].fields.insert(fname.clone(), vals);
        }
        let structure = LoyStructure { objects };
        if satisfies_invariants(resolved, &structure) {
            out.push(structure);
        }
        for si in (0..slots.len()).rev() {
            pick[si] += 1;
            if pick[si] < choices[si] {
                continue 'outer;
            }
            pick[si] = 0;
        }
        break;
    }
}

/// Direct Loy-level invariant evaluation.
pub fn satisfies_invariants(resolved: &ResolvedSpec, s: &LoyStructure) -> bool {
    for cls in &resolved.classes {
        for inv in &cls.source.invariants {
            let receivers = s.extent(resolved, &cls.name);
            if formula_is_closed(resolved, cls, inv) {
                let mut env = Vec::new();
                if !eval_loy(resolved, s, inv, None, &mut env) {
                    return false;
                }
            } else {
                for r in receivers {
                    let mut env = Vec::new();
                    if !eval_loy(resolved, s, inv, Some(r), &mut env) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

fn formula_is_closed(
    resolved: &ResolvedSpec,
    cls: &loy::resolve::ResolvedClass,
    f: &Formula,
) -> bool {
    fn walk(cls: &loy::resolve::ResolvedClass, f: &Formula, scope: &mut Vec<String>) -> bool {
        match f {
            Formula::And(ps) | Formula::Or(ps) => ps.iter().all(|p| walk(cls, p, scope)),
            Formula::Implies(a, b) => walk(cls, a, scope) && walk(cls, b, scope),
            Formula::Not(i) => walk(cls, i, scope),
            Formula::All { var, body, .. } | Formula::Exists { var, body, .. } => {
                scope.push(var.name.clone());
                let r = walk(cls, body, scope);
                scope.pop();
                r
            }
            Formula::No(e) | Formula::Some(e) => !expr_hits_receiver(cls, e, scope),
            Formula::Equal(a, b) => {
                !expr_hits_receiver(cls, a, scope) && !expr_hits_receiver(cls, b, scope)
            }
        }
    }
    fn expr_hits_receiver(
        cls: &loy::resolve::ResolvedClass,
        e: &Expr,
        scope: &[String],
    ) -> bool {
        let (root, _) = e.segments()[0];
        !scope.contains(&root.name) && cls.field(&root.name).is_some()
    }
    let _ = resolved;
    walk(cls, f, &mut Vec::new())
}

/// Evaluate a formula over a Loy structure. `receiver` is the object whose
/// fields bare names denote; quantified variables live in `env`.
pub fn eval_loy(
    resolved: &ResolvedSpec,
    s: &LoyStructure,
    f: &Formula,
    receiver: Option<usize>,
    env: &mut Vec<(String, usize)>,
) -> bool {
    match f {
        Formula::And(ps) => ps.iter().all(|p| eval_loy(resolved, s, p, receiver, env)),
        Formula::Or(ps) => ps.iter().any(|p| eval_loy(resolved, s, p, receiver, env)),
        Formula::Implies(a, b) => {
            !eval_loy(resolved, s, a, receiver, env) || eval_loy(resolved, s, b, receiver, env)
        }
        Formula::Not(i) => !eval_loy(resolved, s, i, receiver, env),
        Formula::All { var, class, body } => {
            for obj in s.extent(resolved, &class.name) {
                env.push((var.name.clone(), obj));
                let holds = eval_loy(resolved, s, body, receiver, env);
                env.pop();
                if !holds {
                    return false;
                }
            }
            true
        }
        Formula::Exists { var, class, body } => {
            for obj in s.extent(resolved, &class.name) {
                env.push((var.name.clone(), obj));
                let holds = eval_loy(resolved, s, body, receiver, env);
                env.pop();
                if holds {
                    return true;
                }
            }
            false
        }
        Formula::No(e) => eval_loy_expr(resolved, s, e, receiver, env).is_empty(),
        Formula::Some(e) => !eval_loy_expr(resolved, s, e, receiver, env).is_empty(),
        Formula::Equal(a, b) => {
            eval_loy_expr(resolved, s, a, receiver, env)
                == eval_loy_expr(resolved, s, b, receiver, env)
        }
    }
}

fn eval_loy_expr(
    resolved: &ResolvedSpec,
    s: &LoyStructure,
    e: &Expr,
    receiver: Option<usize>,
    env: &[(String, usize)],
) -> BTreeSet<usize> {
    let segments = e.segments();
    let (root, _) = segments[0];
    let (mut set, rest): (BTreeSet<usize>, _) =
        if let Some((_, obj)) = env.iter().rev().find(|(v, _)| *v == root.name) {
            ([*obj].into_iter().collect(), &segments[1..])
        } else if let Some(r) = receiver {
            if s.objects[r].fields.contains_key(&root.name) {
                // Receiver field: start from the receiver and walk the chain.
                ([r].into_iter().collect(), &segments[..])
            } else {
                (s.extent(resolved, &root.name), &segments[1..])
            }
        } else {
            (s.extent(resolved, &root.name), &segments[1..])
        };
    for (seg, _) in rest {
        let mut next = BTreeSet::new();
        for obj in &set {
            if let Some(vals) = s.objects[*obj].fields.get(&seg.name) {
                next.extend(vals.iter().copied());
            }
        }
        set = next;
    }
    set
}

// ---------------------------------------------------------------------------
// encoded-model projections (the other side of semantics preservation)
// ---------------------------------------------------------------------------

/// Project an encoded model onto class extents and field values.
pub fn project_model(encoding: &Encoding, binding: &loy::relational::Binding) -> LoyStructure {
    let resolved = encoding.resolved();
    // Objects: atoms in any class domain, ordered canonically.
    let mut atoms: BTreeSet<Atom> = BTreeSet::new();
    for cls in &resolved.classes {
        atoms.extend(binding.elements[&cls.name].iter().cloned());
    }
    let atoms: Vec<Atom> = atoms.into_iter().collect();
    let index_of = |a: &Atom| atoms.iter().position(|x| x == a).unwrap();

    // Dynamic class: the deepest class containing the atom.
    let mut objects: Vec<LoyObject> = atoms
        .iter()
        .map(|a| {
            let mut dynamic: Option<&str> = None;
            for cls in &resolved.classes {
                if binding.elements[&cls.name].contains(a) {
                    match dynamic {
                        Some(d) if resolved.is_subclass_of(d, &cls.name) => {}
                        _ => dynamic = Some(&cls.name),
                    }
                }
            }
            LoyObject { class: dynamic.unwrap().to_string(), fields: BTreeMap::new() }
        })
        .collect();

    for (i, atom) in atoms.iter().enumerate() {
        let class_name = objects[i].class.clone();
        let cls = resolved.class(&class_name).unwrap();
        for f in &cls.visible_fields {
            let rel = field_rel_name(&f.declared_in, &f.name);
            let vals: BTreeSet<usize> = binding.tuples[&rel]
                .iter()
                .filter(|t| &t[0] == atom)
                .map(|t| index_of(&t[1]))
                .collect();
            objects[i].fields.insert(f.name.clone(), vals);
        }
    }
    LoyStructure { objects }
}

/// Enumerate the projections of every model of the encoded problem within
/// scope, using the solver plus blocking constraints on the projection.
pub fn enumerate_encoded_projections(
    encoding: &Encoding,
    scope: &Scope,
    limit: usize,
) -> Vec<LoyStructure> {
    let resolved = encoding.resolved();
    let opts = SolveOptions::default();
    let mut blockers: Vec<RelFormula> = Vec::new();
    let mut out = Vec::new();
    loop {
        assert!(out.len() <= limit, "projection enumeration exceeded {limit}");
        let extra = RelFormula::conj(blockers.clone());
        match solve(&encoding.problem, &extra, &TypeEnv::new(), scope, &opts).expect("solve") {
            SatResult::Sat(binding) => {
                // Block this exact projection: some class extent or field
                // relation must differ.
                let mut pins = Vec::new();
                for cls in &resolved.classes {
                    let atoms: Vec<Vec<Atom>> = binding.elements[&cls.name]
                        .iter()
                        .map(|a| vec![a.clone()])
                        .collect();
                    pins.push(RelFormula::SetEqual(
                        RelExpr::rel(cls.name.clone()),
                        RelExpr::Literal(atoms),
                    ));
                    for f in &cls.source.fields {
                        let rel = field_rel_name(&cls.name, &f.name.name);
                        let tuples: Vec<Vec<Atom>> =
                            binding.tuples[&rel].iter().cloned().collect();
                        pins.push(RelFormula::SetEqual(
                            RelExpr::rel(rel),
                            RelExpr::Literal(tuples),
                        ));
                    }
                }
                blockers.push(RelFormula::conj(pins).negate());
                out.push(project_model(encoding, &binding));
            }
            SatResult::Unsat => break,
        }
    }
    out
}
