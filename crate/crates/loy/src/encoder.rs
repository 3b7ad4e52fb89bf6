//! Encoding of resolved Loy specifications into relational problems.
//!
//! Each class becomes a subdomain of the `Obj` root; fields become binary
//! relations with their declared multiplicity. Every object carries a field
//! table (a ternary `fields` relation over a fixed index domain, with
//! statically assigned per-class indices) and a `depends` relation of index
//! pairs. The implicit state of method specifications is made explicit
//! through `Id` and `State` domains with per-class maps `State x Id -> C`;
//! a method turns into precondition, postcondition and frame predicates over
//! a reference `i` and states `s0`, `s1`.

use crate::ast::{Expr, Formula, Ident, MethodSpec, Multiplicity};
use crate::relational::{
    Atom, ConstraintGroup, Mult, NamedPredicate, RelExpr, RelFormula, RelProblem, TypeEnv,
};
use crate::resolve::{ResolvedClass, ResolvedSpec};
use std::collections::BTreeMap;

/// Reserved variable names for the state model; `$` keeps them out of the
/// Loy namespace (they render without it).
pub const VAR_ID: &str = "$i";
pub const VAR_S0: &str = "$s0";
pub const VAR_S1: &str = "$s1";

pub const DOM_OBJ: &str = "Obj";
pub const DOM_ID: &str = "Id";
pub const DOM_STATE: &str = "State";
pub const DOM_IDX: &str = "Idx";
pub const REL_FIELDS: &str = "fields";
pub const REL_DEPENDS: &str = "depends";

/// Per-class field indices: position in the list is the index, declared
/// fields first, then inherited ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldTable {
    pub class: String,
    pub fields: Vec<String>,
}

/// The two-state model: one map relation per class, from `Id` to instances
/// within a `State`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateModel {
    pub maps: BTreeMap<String, String>,
}

/// A method encoded as its three predicate paragraphs.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMethod {
    pub class: String,
    pub method: String,
    /// Precondition (`P` suffix); mentions only `s0`.
    pub pre: RelFormula,
    /// Postcondition (`Q` suffix); may mention `s0` and `s1`.
    pub post: RelFormula,
    /// Frame condition (`F` suffix); mentions both states.
    pub frame: RelFormula,
    /// Declared parameters as (name, class).
    pub params: Vec<(String, String)>,
    /// `i : Id, s0 : State, s1 : State` plus the declared parameters.
    pub type_env: TypeEnv,
}

/// One encoded invariant, addressable for localization.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedInvariant {
    pub class: String,
    pub index: usize,
    pub label: String,
    pub formula: RelFormula,
}

/// The relational problem for a specification plus the tables produced while
/// building it.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub problem: RelProblem,
    pub field_tables: BTreeMap<String, FieldTable>,
    pub state_model: StateModel,
    pub methods: Vec<EncodedMethod>,
    pub invariants: Vec<EncodedInvariant>,
    resolved: ResolvedSpec,
    max_index: usize,
}

/// Where a formula sits, which decides how receiver field references are
/// encoded.
#[derive(Debug, Clone, Copy)]
pub enum EncodeContext<'a> {
    /// No receiver: bare names are class references or quantified variables.
    Stateless,
    /// Invariant of `class`: receiver fields read off the instance variable.
    Instance { class: &'a str, var: &'a str },
    /// Method formula: receiver fields go through the state maps.
    Method {
        class: &'a str,
        params: &'a [(String, String)],
    },
}

/// Encode a resolved specification. Requires a clean typecheck; ill-typed
/// input is an internal fault.
pub fn encode_spec(resolved: &ResolvedSpec) -> Encoding {
    let max_index = resolved
        .classes
        .iter()
        .map(|c| c.visible_fields.len())
        .max()
        .unwrap_or(0);

    let mut problem = RelProblem::new();
    problem.add_domain(DOM_OBJ);
    for cls in &resolved.classes {
        let parent = cls.superclass.as_deref().unwrap_or(DOM_OBJ);
        problem.add_subdomain(cls.name.clone(), parent);
    }
    problem.add_domain(DOM_ID);
    problem.add_domain(DOM_STATE);
    problem.add_exact_domain(DOM_IDX, max_index);

    // Field relations, owned by their declaring class.
    for cls in &resolved.classes {
        for f in &cls.source.fields {
            let mult = match f.multiplicity {
                Multiplicity::Scalar => Mult::Lone,
                Multiplicity::Set => Mult::Any,
            };
            problem.add_relation(
                field_rel_name(&cls.name, &f.name.name),
                &[cls.name.as_str(), f.target.name.as_str()],
                &[Mult::Any, mult],
            );
        }
    }
    problem.add_relation(REL_FIELDS, &[DOM_OBJ, DOM_IDX, DOM_OBJ], &[Mult::Any; 3]);
    problem.add_relation(REL_DEPENDS, &[DOM_OBJ, DOM_IDX, DOM_IDX], &[Mult::Any; 3]);

    // Per-class state maps: Id lone -> lone C within each state.
    let mut maps = BTreeMap::new();
    for cls in &resolved.classes {
        let map = map_name(&problem, &cls.name);
        problem.add_relation(
            map.clone(),
            &[DOM_STATE, DOM_ID, cls.name.as_str()],
            &[Mult::Any, Mult::Lone, Mult::Lone],
        );
        maps.insert(cls.name.clone(), map);
    }
    let state_model = StateModel { maps };

    // Every object belongs to some class.
    let top_classes: Vec<&ResolvedClass> = resolved
        .classes
        .iter()
        .filter(|c| c.superclass.is_none())
        .collect();
    problem.add_labeled_constraint(
        "Obj_partition",
        ConstraintGroup::Declarations,
        RelFormula::forall(
            "$o",
            DOM_OBJ,
            RelFormula::disj(
                top_classes
                    .iter()
                    .map(|c| RelFormula::Subset(RelExpr::var("$o"), RelExpr::rel(c.name.clone())))
                    .collect(),
            ),
        ),
    );

    let mut encoder = Encoding {
        problem,
        field_tables: BTreeMap::new(),
        state_model,
        methods: Vec::new(),
        invariants: Vec::new(),
        resolved: resolved.clone(),
        max_index,
    };

    // Field-table and depends facts. Facts apply to the direct instances of
    // each class: subclass instances satisfy their own class's fact instead,
    // since indices are reassigned per class.
    for cls in &resolved.classes {
        let table = FieldTable {
            class: cls.name.clone(),
            fields: cls.visible_fields.iter().map(|f| f.name.clone()).collect(),
        };
        let fact = encoder.field_table_fact(cls);
        encoder.problem.add_labeled_constraint(
            format!("{}_fieldtable", cls.name),
            ConstraintGroup::Declarations,
            fact,
        );
        if let Some(fact) = encoder.depends_fact(cls) {
            encoder.problem.add_labeled_constraint(
                format!("{}_depends", cls.name),
                ConstraintGroup::Declarations,
                fact,
            );
        }
        encoder.field_tables.insert(cls.name.clone(), table);
    }

    // Invariants: core constraints tagged for localization, plus a named
    // predicate per class for analyses with and without the invariant.
    // Invariants quantify over all instances of their class; closed
    // invariants (no receiver reference) are encoded as written.
    for cls in &resolved.classes {
        let mut conjuncts = Vec::new();
        for (k, inv) in cls.source.invariants.iter().enumerate() {
            let formula = encoder.encode_invariant(cls, inv);
            let label = if cls.source.invariants.len() == 1 {
                format!("{}_I", cls.name)
            } else {
                format!("{}_I{}", cls.name, k + 1)
            };
            encoder.problem.add_labeled_constraint(
                label.clone(),
                ConstraintGroup::Invariant,
                formula.clone(),
            );
            encoder.invariants.push(EncodedInvariant {
                class: cls.name.clone(),
                index: k,
                label,
                formula: formula.clone(),
            });
            conjuncts.push(formula);
        }
        if !conjuncts.is_empty() {
            encoder.problem.predicates.insert(
                format!("{}_I", cls.name),
                NamedPredicate {
                    params: TypeEnv::new(),
                    body: RelFormula::conj(conjuncts),
                },
            );
        }
    }

    // Methods: P/Q/F predicates from the effective method table.
    for ci in 0..resolved.classes.len() {
        let cls = &resolved.classes[ci];
        for m in &cls.methods {
            let encoded = encoder.encode_method(cls, &m.spec);
            let base = format!("{}_{}", cls.name, m.spec.name.name);
            let mut p_env = TypeEnv::new().with(VAR_ID, DOM_ID).with(VAR_S0, DOM_STATE);
            for (name, class) in &encoded.params {
                p_env.push(name.clone(), class.clone());
            }
            encoder.problem.predicates.insert(
                format!("{base}_P"),
                NamedPredicate {
                    params: p_env,
                    body: encoded.pre.clone(),
                },
            );
            encoder.problem.predicates.insert(
                format!("{base}_Q"),
                NamedPredicate {
                    params: encoded.type_env.clone(),
                    body: encoded.post.clone(),
                },
            );
            encoder.problem.predicates.insert(
                format!("{base}_F"),
                NamedPredicate {
                    params: encoded.type_env.clone(),
                    body: encoded.frame.clone(),
                },
            );
            encoder.methods.push(encoded);
        }
    }

    encoder
}

/// Backing relation for a field, qualified by its declaring class.
pub fn field_rel_name(class: &str, field: &str) -> String {
    format!("{class}.{field}")
}

fn map_name(problem: &RelProblem, class: &str) -> String {
    let mut chars = class.chars();
    let mut name: String = match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    };
    while problem.domain(&name).is_some() || problem.relation(&name).is_some() {
        name.push('_');
    }
    name
}

fn idx_atom(k: usize) -> RelExpr {
    RelExpr::Literal(vec![vec![Atom::new(DOM_IDX, k)]])
}

impl Encoding {
    pub fn resolved(&self) -> &ResolvedSpec {
        &self.resolved
    }

    pub fn max_index(&self) -> usize {
        self.max_index
    }

    pub fn method(&self, class: &str, method: &str) -> Option<&EncodedMethod> {
        self.methods
            .iter()
            .find(|m| m.class == class && m.method == method)
    }

    /// The problem with every invariant removed (declarations only).
    pub fn declarations_problem(&self) -> RelProblem {
        self.problem.with_invariants(|_| false)
    }

    /// The receiver's snapshot in the given state: `state.c[i]`.
    pub fn receiver_expr(&self, class: &str, state_var: &str) -> RelExpr {
        let map = self.state_model.maps[class].clone();
        RelExpr::var(VAR_ID).join(RelExpr::var(state_var).dot(map))
    }

    /// The conjunction `P and Q and F` plus its type environment, ready to be
    /// checked for consistency as an existential query.
    pub fn encode_method_query(&self, class: &str, method: &str) -> Option<(RelFormula, TypeEnv)> {
        let m = self.method(class, method)?;
        Some((
            RelFormula::And(vec![m.pre.clone(), m.post.clone(), m.frame.clone()]),
            m.type_env.clone(),
        ))
    }

    /// Encode a formula under a state context.
    pub fn encode_formula(&self, f: &Formula, ctx: EncodeContext<'_>) -> RelFormula {
        let mut scope = Vec::new();
        self.encode_f(f, &ctx, &mut scope)
    }

    fn encode_invariant(&self, cls: &ResolvedClass, inv: &Formula) -> RelFormula {
        if self.references_receiver(inv, cls) {
            let var = "$x";
            let ctx = EncodeContext::Instance { class: &cls.name, var };
            let mut scope = Vec::new();
            RelFormula::forall(var, cls.name.clone(), self.encode_f(inv, &ctx, &mut scope))
        } else {
            self.encode_formula(inv, EncodeContext::Stateless)
        }
    }

    fn encode_method(&self, cls: &ResolvedClass, m: &MethodSpec) -> EncodedMethod {
        let params: Vec<(String, String)> = m
            .params
            .iter()
            .map(|p| (p.name.name.clone(), p.target.name.clone()))
            .collect();
        let ctx = EncodeContext::Method {
            class: &cls.name,
            params: &params,
        };
        let mut scope = Vec::new();
        let pre = RelFormula::conj(
            m.requires
                .iter()
                .map(|f| self.encode_f(f, &ctx, &mut scope))
                .collect(),
        );
        let post = RelFormula::conj(
            m.ensures
                .iter()
                .map(|f| self.encode_f(f, &ctx, &mut scope))
                .collect(),
        );
        let frame = self.build_frame_condition(cls, m);
        let mut type_env = TypeEnv::new()
            .with(VAR_ID, DOM_ID)
            .with(VAR_S0, DOM_STATE)
            .with(VAR_S1, DOM_STATE);
        for (name, class) in &params {
            type_env.push(name.clone(), class.clone());
        }
        EncodedMethod {
            class: cls.name.clone(),
            method: m.name.name.clone(),
            pre,
            post,
            frame,
            params,
            type_env,
        }
    }

    /// The frame condition constructed from a modifies clause: the receiver
    /// exists in both states; its fields hold equal values in `s0` and `s1`
    /// except at modified fields and their depends closure; prefix objects of
    /// deep paths may change only along the path; every other reference and
    /// every unaffected class map is pinned.
    pub fn build_frame_condition(&self, cls: &ResolvedClass, m: &MethodSpec) -> RelFormula {
        let recv0 = self.receiver_expr(&cls.name, VAR_S0);
        let recv1 = self.receiver_expr(&cls.name, VAR_S1);
        let mut parts = vec![
            RelFormula::NonEmpty(recv0.clone()),
            RelFormula::NonEmpty(recv1.clone()),
        ];

        let roots: Vec<String> = m
            .modifies
            .iter()
            .map(|p| p.segments[0].name.clone())
            .collect();
        let exempt = cls.depends_closure(&roots);

        // (a) unmodified receiver fields are equal across states.
        for f in &cls.visible_fields {
            if exempt.iter().any(|e| *e == f.name) {
                continue;
            }
            let rel = field_rel_name(&f.declared_in, &f.name);
            parts.push(RelFormula::SetEqual(
                recv0.clone().dot(rel.clone()),
                recv1.clone().dot(rel),
            ));
        }

        // (b) deep paths: each prefix object may change only along the path.
        for path in &m.modifies {
            let mut class_cursor = self.resolved.class(&cls.name).unwrap();
            let mut base0 = recv0.clone();
            let mut base1 = recv1.clone();
            for depth in 1..path.segments.len() {
                let hop = &path.segments[depth - 1].name;
                let hop_field = class_cursor.field(hop).unwrap().clone();
                let hop_rel = field_rel_name(&hop_field.declared_in, hop);
                base0 = base0.dot(hop_rel.clone());
                base1 = base1.dot(hop_rel);
                let inner_class = self.resolved.class(&hop_field.target).unwrap();
                let next = path.segments[depth].name.clone();
                let inner_exempt = inner_class.depends_closure(&[next]);
                for f in &inner_class.visible_fields {
                    if inner_exempt.iter().any(|e| *e == f.name) {
                        continue;
                    }
                    let rel = field_rel_name(&f.declared_in, &f.name);
                    parts.push(RelFormula::SetEqual(
                        base0.clone().dot(rel.clone()),
                        base1.clone().dot(rel),
                    ));
                }
                class_cursor = inner_class;
            }
        }

        // (c) every other Id keeps its snapshot in the receiver's class map;
        // with nothing modified the whole map is pinned.
        let own_map = self.state_model.maps[&cls.name].clone();
        if exempt.is_empty() {
            parts.push(RelFormula::SetEqual(
                RelExpr::var(VAR_S1).dot(own_map.clone()),
                RelExpr::var(VAR_S0).dot(own_map),
            ));
        } else {
            parts.push(RelFormula::forall(
                "$x",
                DOM_ID,
                RelFormula::Or(vec![
                    RelFormula::SetEqual(RelExpr::var("$x"), RelExpr::var(VAR_ID)),
                    RelFormula::SetEqual(
                        RelExpr::var("$x").join(RelExpr::var(VAR_S1).dot(own_map.clone())),
                        RelExpr::var("$x").join(RelExpr::var(VAR_S0).dot(own_map)),
                    ),
                ]),
            ));
        }

        // (d) maps of classes the method cannot affect are pinned wholesale.
        for other in &self.resolved.classes {
            if other.name == cls.name {
                continue;
            }
            let map = self.state_model.maps[&other.name].clone();
            parts.push(RelFormula::SetEqual(
                RelExpr::var(VAR_S1).dot(map.clone()),
                RelExpr::var(VAR_S0).dot(map),
            ));
        }

        RelFormula::And(parts)
    }

    fn field_table_fact(&self, cls: &ResolvedClass) -> RelFormula {
        let var = "$o";
        let o_fields = RelExpr::var(var).dot(REL_FIELDS);
        let mut eqs = Vec::new();
        for (k, f) in cls.visible_fields.iter().enumerate() {
            let rel = field_rel_name(&f.declared_in, &f.name);
            eqs.push(RelFormula::SetEqual(
                idx_atom(k).join(o_fields.clone()),
                RelExpr::var(var).dot(rel),
            ));
        }
        // Indices past the class's table are unused.
        for k in cls.visible_fields.len()..self.max_index {
            eqs.push(RelFormula::Empty(idx_atom(k).join(o_fields.clone())));
        }
        self.direct_instance_fact(cls, var, RelFormula::conj(eqs))
    }

    fn depends_fact(&self, cls: &ResolvedClass) -> Option<RelFormula> {
        let var = "$o";
        let pairs: Vec<Vec<Atom>> = cls
            .depends_pairs
            .iter()
            .map(|(dep, src)| {
                vec![
                    Atom::new(DOM_IDX, cls.field_index(dep).unwrap()),
                    Atom::new(DOM_IDX, cls.field_index(src).unwrap()),
                ]
            })
            .collect();
        let leaf = cls.subclasses.is_empty();
        if pairs.is_empty() && !leaf {
            return None;
        }
        let o_depends = RelExpr::var(var).dot(REL_DEPENDS);
        let mut body = Vec::new();
        if !pairs.is_empty() {
            body.push(RelFormula::Subset(
                RelExpr::Literal(pairs.clone()),
                o_depends.clone(),
            ));
        }
        if leaf {
            // No subclass can extend the relation, so its cardinality equals
            // the class's own pair count.
            body.push(RelFormula::CardEq(o_depends, pairs.len()));
        }
        Some(self.direct_instance_fact(cls, var, RelFormula::conj(body)))
    }

    /// `all o : C | o in Sub1 or ... or body` — a fact for direct instances,
    /// letting subclass instances satisfy their own fact.
    fn direct_instance_fact(
        &self,
        cls: &ResolvedClass,
        var: &str,
        body: RelFormula,
    ) -> RelFormula {
        let mut alts: Vec<RelFormula> = cls
            .subclasses
            .iter()
            .map(|s| RelFormula::Subset(RelExpr::var(var), RelExpr::rel(s.clone())))
            .collect();
        alts.push(body);
        RelFormula::forall(var, cls.name.clone(), RelFormula::disj(alts))
    }

    fn references_receiver(&self, f: &Formula, cls: &ResolvedClass) -> bool {
        fn walk(f: &Formula, cls: &ResolvedClass, scope: &mut Vec<String>) -> bool {
            match f {
                Formula::And(parts) | Formula::Or(parts) => {
                    parts.iter().any(|p| walk(p, cls, scope))
                }
                Formula::Implies(a, b) => walk(a, cls, scope) || walk(b, cls, scope),
                Formula::Not(inner) => walk(inner, cls, scope),
                Formula::All { var, body, .. } | Formula::Exists { var, body, .. } => {
                    scope.push(var.name.clone());
                    let hit = walk(body, cls, scope);
                    scope.pop();
                    hit
                }
                Formula::No(e) | Formula::Some(e) => root_is_field(e, cls, scope),
                Formula::Equal(a, b) => {
                    root_is_field(a, cls, scope) || root_is_field(b, cls, scope)
                }
            }
        }
        fn root_is_field(e: &Expr, cls: &ResolvedClass, scope: &[String]) -> bool {
            let (root, _) = e.segments()[0];
            !scope.contains(&root.name) && cls.field(&root.name).is_some()
        }
        walk(f, cls, &mut Vec::new())
    }

    fn encode_f(
        &self,
        f: &Formula,
        ctx: &EncodeContext<'_>,
        scope: &mut Vec<(String, String)>,
    ) -> RelFormula {
        match f {
            Formula::And(parts) => {
                RelFormula::And(parts.iter().map(|p| self.encode_f(p, ctx, scope)).collect())
            }
            Formula::Or(parts) => {
                RelFormula::Or(parts.iter().map(|p| self.encode_f(p, ctx, scope)).collect())
            }
            Formula::Implies(a, b) => self
                .encode_f(a, ctx, scope)
                .implies(self.encode_f(b, ctx, scope)),
            Formula::Not(inner) => self.encode_f(inner, ctx, scope).negate(),
            Formula::All { var, class, body } => {
                scope.push((var.name.clone(), class.name.clone()));
                let body = self.encode_f(body, ctx, scope);
                scope.pop();
                RelFormula::forall(var.name.clone(), class.name.clone(), body)
            }
            Formula::Exists { var, class, body } => {
                scope.push((var.name.clone(), class.name.clone()));
                let body = self.encode_f(body, ctx, scope);
                scope.pop();
                RelFormula::exists(var.name.clone(), class.name.clone(), body)
            }
            Formula::No(e) => RelFormula::Empty(self.encode_e(e, ctx, scope)),
            Formula::Some(e) => RelFormula::NonEmpty(self.encode_e(e, ctx, scope)),
            Formula::Equal(a, b) => {
                RelFormula::SetEqual(self.encode_e(a, ctx, scope), self.encode_e(b, ctx, scope))
            }
        }
    }

    fn encode_e(&self, e: &Expr, ctx: &EncodeContext<'_>, scope: &[(String, String)]) -> RelExpr {
        let segments = e.segments();
        let (root, _) = segments[0];
        let primed = e.any_primed();

        // Root classification mirrors the typechecker: quantified variable,
        // then parameter, then receiver field, then class reference.
        let (expr, class, rest): (RelExpr, String, &[(&Ident, bool)]) = if let Some((_, c)) =
            scope.iter().rev().find(|(v, _)| *v == root.name)
        {
            (RelExpr::var(root.name.clone()), c.clone(), &segments[1..])
        } else if let EncodeContext::Method { params, .. } = ctx {
            if let Some((_, c)) = params.iter().find(|(p, _)| *p == root.name) {
                (RelExpr::var(root.name.clone()), c.clone(), &segments[1..])
            } else {
                self.encode_root_in_class(ctx, root, primed, &segments)
            }
        } else {
            self.encode_root_in_class(ctx, root, primed, &segments)
        };

        let mut expr = expr;
        let mut class = class;
        for (seg, _) in rest.iter() {
            let field = self
                .class_field(&class, &seg.name)
                .unwrap_or_else(|| panic!("unknown field `{}` reached the encoder", seg.name));
            expr = expr.dot(field_rel_name(&field.0, &seg.name));
            class = field.1;
        }
        expr
    }

    fn encode_root_in_class<'s, 'i>(
        &'s self,
        ctx: &EncodeContext<'_>,
        root: &Ident,
        primed: bool,
        segments: &'i [(&'i Ident, bool)],
    ) -> (RelExpr, String, &'i [(&'i Ident, bool)]) {
        match ctx {
            EncodeContext::Method { class, .. } if self.class_field(class, &root.name).is_some() => {
                // Receiver field: read through the state map, via the after
                // state when the chain is primed.
                let state = if primed { VAR_S1 } else { VAR_S0 };
                (self.receiver_expr(class, state), class.to_string(), segments)
            }
            EncodeContext::Instance { class, var }
                if self.class_field(class, &root.name).is_some() =>
            {
                assert!(!primed, "prime outside a method context is an encoder fault");
                (RelExpr::var(*var), class.to_string(), segments)
            }
            _ => {
                assert!(
                    self.resolved.is_class(&root.name),
                    "unresolved name `{}` reached the encoder",
                    root.name
                );
                (
                    RelExpr::rel(root.name.clone()),
                    root.name.clone(),
                    &segments[1..],
                )
            }
        }
    }

    /// (declaring class, target class) of a field visible on `class`.
    fn class_field(&self, class: &str, field: &str) -> Option<(String, String)> {
        self.resolved
            .class(class)
            .and_then(|c| c.field(field))
            .map(|f| (f.declared_in.clone(), f.target.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use crate::resolve::resolve;
    use crate::typecheck::typecheck;

    const EXAMPLES: &str = "\
class Project {
  manager : Manager
  invariant some manager
}
class Employee {
  project : Project
  invariant no project.manager
  assign (p : Project)
    requires no project
    ensures project' = p
    modifies project
}
class ManagedEmployee ext Employee {
  manager : Manager
  depends manager <- project
  assign (p : Project)
    requires no project
    ensures project' = p
    ensures manager' = p.manager
    modifies project
}
class Manager { }
";

    fn encoded() -> Encoding {
        let resolved = resolve(&parse(EXAMPLES).unwrap()).unwrap();
        assert!(typecheck(&resolved).is_empty());
        encode_spec(&resolved)
    }

    #[test]
    fn domains_and_relations_are_declared() {
        let enc = encoded();
        let p = &enc.problem;
        assert!(p.domain(DOM_OBJ).is_some());
        assert_eq!(
            p.domain("ManagedEmployee").unwrap().parent.as_deref(),
            Some("Employee")
        );
        assert_eq!(p.domain("Employee").unwrap().parent.as_deref(), Some(DOM_OBJ));
        assert_eq!(p.domain(DOM_IDX).unwrap().exact_size, Some(2));
        assert!(p.relation("Employee.project").is_some());
        assert!(p.relation("ManagedEmployee.manager").is_some());
        assert!(p.relation("managedEmployee").is_some());
        assert_eq!(
            p.relation("employee").unwrap().columns,
            vec!["State", "Id", "Employee"]
        );
    }

    #[test]
    fn invariant_predicates_quantify_over_instances() {
        let enc = encoded();
        let employee_i = &enc.problem.predicates["Employee_I"];
        assert_eq!(
            employee_i.body.to_string(),
            "all x : Employee | no x.project.manager"
        );
        let project_i = &enc.problem.predicates["Project_I"];
        assert_eq!(project_i.body.to_string(), "all x : Project | some x.manager");
    }

    #[test]
    fn depends_cardinality_pinned_for_leaf_classes() {
        let enc = encoded();
        let fact = enc
            .problem
            .constraints
            .iter()
            .find(|c| c.label.as_deref() == Some("ManagedEmployee_depends"))
            .unwrap();
        let text = fact.formula.to_string();
        assert!(text.contains("#o.depends = 1"), "got: {text}");
        assert!(text.contains("in o.depends"), "got: {text}");
    }

    #[test]
    fn method_encoding_reads_through_state_maps() {
        let enc = encoded();
        let m = enc.method("ManagedEmployee", "assign").unwrap();
        assert_eq!(m.pre.to_string(), "no s0.managedEmployee[i].project");
        let post = m.post.to_string();
        assert!(post.contains("s1.managedEmployee[i].project = p"), "{post}");
        assert!(
            post.contains("s1.managedEmployee[i].manager = p.manager"),
            "{post}"
        );
    }

    #[test]
    fn frame_exempts_depends_closure() {
        let enc = encoded();
        let me = enc.method("ManagedEmployee", "assign").unwrap();
        let frame = me.frame.to_string();
        // Both project (modified) and manager (via depends) are exempt, so no
        // receiver field is pinned for ManagedEmployee.assign.
        assert!(!frame.contains("s0.managedEmployee[i].project ="), "{frame}");
        assert!(!frame.contains("s0.managedEmployee[i].manager ="), "{frame}");
        // Other class maps are pinned wholesale.
        assert!(frame.contains("s1.manager = s0.manager"), "{frame}");
        assert!(frame.contains("s1.employee = s0.employee"), "{frame}");
        // The receiver's own map is pinned per Id away from the receiver.
        assert!(frame.contains("x = i"), "{frame}");
    }

    #[test]
    fn query_env_lists_state_parameters_then_params() {
        let enc = encoded();
        let (query, env) = enc.encode_method_query("Employee", "assign").unwrap();
        let vars: Vec<&str> = env.iter().map(|(v, _)| v.as_str()).collect();
        assert_eq!(vars, vec![VAR_ID, VAR_S0, VAR_S1, "p"]);
        assert!(matches!(query, RelFormula::And(ref parts) if parts.len() == 3));
    }

    #[test]
    fn empty_modifies_pins_everything() {
        let src = "class A { f : A\n m ()\n ensures no f }";
        let resolved = resolve(&parse(src).unwrap()).unwrap();
        assert!(typecheck(&resolved).is_empty());
        let enc = encode_spec(&resolved);
        let m = enc.method("A", "m").unwrap();
        let frame = m.frame.to_string();
        assert!(frame.contains("s0.a[i].f = s1.a[i].f"), "{frame}");
        assert!(frame.contains("s1.a = s0.a"), "{frame}");
    }

    #[test]
    fn empty_class_encodes_minimally() {
        let resolved = resolve(&parse("class A { }").unwrap()).unwrap();
        let enc = encode_spec(&resolved);
        assert_eq!(enc.max_index(), 0);
        assert_eq!(enc.field_tables["A"].fields.len(), 0);
        // No containment; just the leaf cardinality pin at zero.
        let dep = enc
            .problem
            .constraints
            .iter()
            .find(|c| c.label.as_deref() == Some("A_depends"))
            .unwrap();
        assert!(dep.formula.to_string().contains("#o.depends = 0"));
    }

    #[test]
    fn closed_invariants_are_not_wrapped() {
        let src = "class Pool { }\nclass A { invariant some Pool }";
        let resolved = resolve(&parse(src).unwrap()).unwrap();
        assert!(typecheck(&resolved).is_empty());
        let enc = encode_spec(&resolved);
        let inv = &enc.invariants[0];
        assert_eq!(inv.formula.to_string(), "some Pool");
    }
}
