//! Scope-bounded relational logic kernel.
//!
//! A [`RelProblem`] declares domains (with an optional parent, forming a
//! subset hierarchy), relations with per-column multiplicities, core
//! constraints, and named predicate/assert paragraphs. [`solve`] searches for
//! a [`Binding`] satisfying the core constraints plus a query formula within
//! a [`Scope`]; it is complete within the scope, so `Unsat` means no binding
//! within the given bounds satisfies the query.
//!
//! Domain semantics mirror class hierarchies: a subdomain's elements are a
//! subset of its parent's, sibling subdomains are pairwise disjoint, and
//! top-level domains draw from disjoint atom pools. A domain name may be used
//! as a unary relation in expressions.

mod eval;
pub mod enumerate;
mod solver;

pub use eval::{eval_expr, eval_formula, EvalError};
pub use solver::{solve, SolveError, SolveOptions};

use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

/// An element of a root domain's atom pool, e.g. `Obj$0`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Atom {
    pub root: String,
    pub index: usize,
}

impl Atom {
    pub fn new(root: impl Into<String>, index: usize) -> Self {
        Atom { root: root.into(), index }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}${}", self.root, self.index)
    }
}

/// Per-domain element bounds. A bound is "at most k elements"; domains
/// missing from the map fall back to the default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scope {
    pub default: usize,
    pub per_domain: BTreeMap<String, usize>,
}

impl Scope {
    pub fn uniform(default: usize) -> Self {
        Scope { default, per_domain: BTreeMap::new() }
    }

    pub fn with(mut self, domain: impl Into<String>, bound: usize) -> Self {
        self.per_domain.insert(domain.into(), bound);
        self
    }

    pub fn bound(&self, domain: &str) -> usize {
        self.per_domain.get(domain).copied().unwrap_or(self.default)
    }
}

impl Default for Scope {
    fn default() -> Self {
        Scope::uniform(3)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.default)?;
        for (d, b) in &self.per_domain {
            write!(f, ", {d}={b}")?;
        }
        Ok(())
    }
}

/// A named domain, optionally nested under a parent domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainDecl {
    pub name: String,
    pub parent: Option<String>,
    /// When set, the domain holds exactly this many elements regardless of
    /// scope (used for the field-index domain, whose atoms are named by
    /// constraints and must exist).
    pub exact_size: Option<usize>,
}

/// Column multiplicity: `Lone` means at most one value in this column for
/// any fixed combination of the other columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mult {
    Any,
    Lone,
}

/// A named relation with a column signature of domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationDecl {
    pub name: String,
    pub columns: Vec<String>,
    pub mults: Vec<Mult>,
}

/// Whether a core constraint comes from declarations or from an invariant;
/// invariants can be toggled off for localizing inconsistencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstraintGroup {
    Declarations,
    Invariant,
}

/// One core constraint (an element of γ).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub label: Option<String>,
    pub group: ConstraintGroup,
    pub formula: RelFormula,
}

/// A predicate or assert paragraph: a formula with typed parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedPredicate {
    pub params: TypeEnv,
    pub body: RelFormula,
}

/// Domains, relations, and constraints; the encoding target.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelProblem {
    pub domains: Vec<DomainDecl>,
    pub relations: Vec<RelationDecl>,
    pub constraints: Vec<Constraint>,
    pub predicates: BTreeMap<String, NamedPredicate>,
    pub asserts: BTreeMap<String, NamedPredicate>,
}

impl RelProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_domain(&mut self, name: impl Into<String>) -> &mut Self {
        self.domains.push(DomainDecl {
            name: name.into(),
            parent: None,
            exact_size: None,
        });
        self
    }

    pub fn add_subdomain(&mut self, name: impl Into<String>, parent: impl Into<String>) -> &mut Self {
        self.domains.push(DomainDecl {
            name: name.into(),
            parent: Some(parent.into()),
            exact_size: None,
        });
        self
    }

    pub fn add_exact_domain(&mut self, name: impl Into<String>, size: usize) -> &mut Self {
        self.domains.push(DomainDecl {
            name: name.into(),
            parent: None,
            exact_size: Some(size),
        });
        self
    }

    pub fn add_relation(
        &mut self,
        name: impl Into<String>,
        columns: &[&str],
        mults: &[Mult],
    ) -> &mut Self {
        assert_eq!(columns.len(), mults.len());
        self.relations.push(RelationDecl {
            name: name.into(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            mults: mults.to_vec(),
        });
        self
    }

    pub fn add_constraint(&mut self, formula: RelFormula) -> &mut Self {
        self.constraints.push(Constraint {
            label: None,
            group: ConstraintGroup::Declarations,
            formula,
        });
        self
    }

    pub fn add_labeled_constraint(
        &mut self,
        label: impl Into<String>,
        group: ConstraintGroup,
        formula: RelFormula,
    ) -> &mut Self {
        self.constraints.push(Constraint {
            label: Some(label.into()),
            group,
            formula,
        });
        self
    }

    pub fn domain(&self, name: &str) -> Option<&DomainDecl> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn relation(&self, name: &str) -> Option<&RelationDecl> {
        self.relations.iter().find(|r| r.name == name)
    }

    /// The root ancestor of a domain (itself if top-level).
    pub fn root_of(&self, name: &str) -> Option<&str> {
        let mut cur = self.domain(name)?;
        while let Some(parent) = &cur.parent {
            cur = self.domain(parent)?;
        }
        Some(&cur.name)
    }

    /// `sub` is `sup` or nested below it.
    pub fn is_within(&self, sub: &str, sup: &str) -> bool {
        let mut cur = sub;
        loop {
            if cur == sup {
                return true;
            }
            match self.domain(cur).and_then(|d| d.parent.as_deref()) {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    /// A copy of this problem with only the invariant constraints that pass
    /// the filter (declaration constraints are always kept).
    pub fn with_invariants(&self, keep: impl Fn(&Constraint) -> bool) -> RelProblem {
        let mut p = self.clone();
        p.constraints.retain(|c| match c.group {
            ConstraintGroup::Declarations => true,
            ConstraintGroup::Invariant => keep(c),
        });
        p
    }

    /// The core constraints γ as one conjunction.
    pub fn gamma(&self) -> RelFormula {
        RelFormula::conj(self.constraints.iter().map(|c| c.formula.clone()).collect())
    }
}

/// Relational expressions: variables, relations or domains by name, joins,
/// and literal tuple sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RelExpr {
    Var(String),
    Rel(String),
    Join(Box<RelExpr>, Box<RelExpr>),
    Literal(Vec<Vec<Atom>>),
}

impl RelExpr {
    pub fn var(name: impl Into<String>) -> Self {
        RelExpr::Var(name.into())
    }

    pub fn rel(name: impl Into<String>) -> Self {
        RelExpr::Rel(name.into())
    }

    pub fn join(self, other: RelExpr) -> RelExpr {
        RelExpr::Join(Box::new(self), Box::new(other))
    }

    /// `expr.field` style join chain from the left.
    pub fn dot(self, rel: impl Into<String>) -> RelExpr {
        self.join(RelExpr::rel(rel))
    }

    pub fn none() -> Self {
        RelExpr::Literal(Vec::new())
    }
}

/// Relational formulas over [`RelExpr`] atoms.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RelFormula {
    And(Vec<RelFormula>),
    Or(Vec<RelFormula>),
    Implies(Box<RelFormula>, Box<RelFormula>),
    Not(Box<RelFormula>),
    ForAll {
        var: String,
        domain: String,
        body: Box<RelFormula>,
    },
    Exists {
        var: String,
        domain: String,
        body: Box<RelFormula>,
    },
    Empty(RelExpr),
    NonEmpty(RelExpr),
    SetEqual(RelExpr, RelExpr),
    Subset(RelExpr, RelExpr),
    CardEq(RelExpr, usize),
}

impl RelFormula {
    /// The always-true formula: emptiness of the empty literal.
    pub fn top() -> Self {
        RelFormula::Empty(RelExpr::none())
    }

    pub fn is_top(&self) -> bool {
        matches!(self, RelFormula::Empty(RelExpr::Literal(ts)) if ts.is_empty())
    }

    /// Conjunction; collapses the empty and singleton cases.
    pub fn conj(mut parts: Vec<RelFormula>) -> Self {
        match parts.len() {
            0 => RelFormula::top(),
            1 => parts.pop().unwrap(),
            _ => RelFormula::And(parts),
        }
    }

    pub fn disj(mut parts: Vec<RelFormula>) -> Self {
        match parts.len() {
            0 => RelFormula::Not(Box::new(RelFormula::top())),
            1 => parts.pop().unwrap(),
            _ => RelFormula::Or(parts),
        }
    }

    pub fn implies(self, other: RelFormula) -> Self {
        RelFormula::Implies(Box::new(self), Box::new(other))
    }

    pub fn negate(self) -> Self {
        RelFormula::Not(Box::new(self))
    }

    pub fn forall(var: impl Into<String>, domain: impl Into<String>, body: RelFormula) -> Self {
        RelFormula::ForAll {
            var: var.into(),
            domain: domain.into(),
            body: Box::new(body),
        }
    }

    pub fn exists(var: impl Into<String>, domain: impl Into<String>, body: RelFormula) -> Self {
        RelFormula::Exists {
            var: var.into(),
            domain: domain.into(),
            body: Box::new(body),
        }
    }

    /// Height of the formula tree (atoms have height 1).
    pub fn height(&self) -> usize {
        match self {
            RelFormula::And(fs) | RelFormula::Or(fs) => {
                1 + fs.iter().map(|f| f.height()).max().unwrap_or(0)
            }
            RelFormula::Implies(a, b) => 1 + a.height().max(b.height()),
            RelFormula::Not(f) => 1 + f.height(),
            RelFormula::ForAll { body, .. } | RelFormula::Exists { body, .. } => 1 + body.height(),
            _ => 1,
        }
    }

    /// Free variables, in first-occurrence order.
    pub fn free_vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut bound = Vec::new();
        self.collect_free(&mut bound, &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<String>, out: &mut Vec<String>) {
        match self {
            RelFormula::And(fs) | RelFormula::Or(fs) => {
                fs.iter().for_each(|f| f.collect_free(bound, out))
            }
            RelFormula::Implies(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            RelFormula::Not(f) => f.collect_free(bound, out),
            RelFormula::ForAll { var, body, .. } | RelFormula::Exists { var, body, .. } => {
                bound.push(var.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
            RelFormula::Empty(e) | RelFormula::NonEmpty(e) | RelFormula::CardEq(e, _) => {
                e.collect_free(bound, out)
            }
            RelFormula::SetEqual(a, b) | RelFormula::Subset(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
        }
    }
}

impl RelExpr {
    fn collect_free(&self, bound: &[String], out: &mut Vec<String>) {
        match self {
            RelExpr::Var(v) => {
                if !bound.contains(v) && !out.contains(v) {
                    out.push(v.clone());
                }
            }
            RelExpr::Join(a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            _ => {}
        }
    }
}

/// Typed free variables threaded through queries: ordered (variable, domain)
/// pairs with unique variable names.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize)]
pub struct TypeEnv(Vec<(String, String)>);

impl TypeEnv {
    pub fn new() -> Self {
        TypeEnv(Vec::new())
    }

    pub fn with(mut self, var: impl Into<String>, domain: impl Into<String>) -> Self {
        self.push(var, domain);
        self
    }

    pub fn push(&mut self, var: impl Into<String>, domain: impl Into<String>) {
        let var = var.into();
        assert!(
            !self.contains(&var),
            "duplicate variable `{var}` in type environment"
        );
        self.0.push((var, domain.into()));
    }

    pub fn contains(&self, var: &str) -> bool {
        self.0.iter().any(|(v, _)| v == var)
    }

    pub fn domain_of(&self, var: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(v, _)| v == var)
            .map(|(_, d)| d.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, String)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// This environment extended with the entries of `other` (skipping
    /// variables already present).
    pub fn union(&self, other: &TypeEnv) -> TypeEnv {
        let mut out = self.clone();
        for (v, d) in other.iter() {
            if !out.contains(v) {
                out.push(v.clone(), d.clone());
            }
        }
        out
    }
}

/// An assignment of domains, relations, and variables to finite sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub elements: BTreeMap<String, BTreeSet<Atom>>,
    pub tuples: BTreeMap<String, BTreeSet<Vec<Atom>>>,
    pub arities: BTreeMap<String, usize>,
    pub vars: BTreeMap<String, Atom>,
}

impl Binding {
    pub fn new() -> Self {
        Binding {
            elements: BTreeMap::new(),
            tuples: BTreeMap::new(),
            arities: BTreeMap::new(),
            vars: BTreeMap::new(),
        }
    }
}

impl Default for Binding {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Display for Binding {
    /// Stable textual form: domains first, then relations, tuples sorted.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (domain, atoms) in &self.elements {
            let items: Vec<String> = atoms.iter().map(|a| a.to_string()).collect();
            writeln!(f, "{domain} = {{{}}}", items.join(", "))?;
        }
        for (rel, tuples) in &self.tuples {
            let items: Vec<String> = tuples
                .iter()
                .map(|t| {
                    let parts: Vec<String> = t.iter().map(|a| a.to_string()).collect();
                    format!("({})", parts.join(", "))
                })
                .collect();
            writeln!(f, "{rel} = {{{}}}", items.join(", "))?;
        }
        if !self.vars.is_empty() {
            let items: Vec<String> = self
                .vars
                .iter()
                .map(|(v, a)| format!("{} = {}", display_var(v), a))
                .collect();
            writeln!(f, "where {}", items.join(", "))?;
        }
        Ok(())
    }
}

/// Result of a satisfiability query.
#[derive(Debug, Clone, PartialEq)]
pub enum SatResult {
    Sat(Binding),
    Unsat,
}

impl SatResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SatResult::Sat(_))
    }

    pub fn model(&self) -> Option<&Binding> {
        match self {
            SatResult::Sat(b) => Some(b),
            SatResult::Unsat => None,
        }
    }
}

/// A consistency or validity query, by paragraph name or as a formula.
#[derive(Debug, Clone)]
pub enum Query<'a> {
    Named(&'a str),
    Formula(&'a RelFormula),
}

/// Consistency of a predicate with respect to the core constraints:
/// `Sat` means the predicate is consistent within scope.
pub fn check_consistent(
    problem: &RelProblem,
    query: Query<'_>,
    env: &TypeEnv,
    scope: &Scope,
    opts: &SolveOptions,
) -> Result<SatResult, SolveError> {
    let (formula, env) = resolve_query(&problem.predicates, query, env, true)?;
    solve(problem, &formula, &env, scope, opts)
}

/// Validity of an assert with respect to the core constraints: solves
/// γ ∧ ¬assert, so `Unsat` means the assert is valid within scope and `Sat`
/// carries a counterexample binding.
pub fn check_valid(
    problem: &RelProblem,
    query: Query<'_>,
    env: &TypeEnv,
    scope: &Scope,
    opts: &SolveOptions,
) -> Result<SatResult, SolveError> {
    let (formula, env) = resolve_query(&problem.asserts, query, env, false)?;
    solve(problem, &formula.negate(), &env, scope, opts)
}

fn resolve_query(
    paragraphs: &BTreeMap<String, NamedPredicate>,
    query: Query<'_>,
    env: &TypeEnv,
    predicate: bool,
) -> Result<(RelFormula, TypeEnv), SolveError> {
    match query {
        Query::Named(name) => {
            let p = paragraphs.get(name).ok_or_else(|| {
                if predicate {
                    SolveError::UnknownPredicate(name.to_string())
                } else {
                    SolveError::UnknownAssert(name.to_string())
                }
            })?;
            Ok((p.body.clone(), p.params.union(env)))
        }
        Query::Formula(f) => Ok(((*f).clone(), env.clone())),
    }
}

/// Render a variable for display, hiding the `$` prefix of generated names.
pub(crate) fn display_var(name: &str) -> &str {
    name.strip_prefix('$').unwrap_or(name)
}

impl fmt::Display for RelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelExpr::Var(v) => f.write_str(display_var(v)),
            // Field relations are qualified by their declaring class; the
            // rendered form uses the bare field name.
            RelExpr::Rel(r) => f.write_str(r.rsplit('.').next().unwrap_or(r)),
            // `x.(y.z)` reads as the box join `y.z[x]`.
            RelExpr::Join(a, b) => match &**b {
                RelExpr::Join(_, _) => write!(f, "{b}[{a}]"),
                _ => write!(f, "{a}.{b}"),
            },
            RelExpr::Literal(tuples) => {
                let items: Vec<String> = tuples
                    .iter()
                    .map(|t| {
                        if t.len() == 1 {
                            t[0].to_string()
                        } else {
                            let parts: Vec<String> = t.iter().map(|a| a.to_string()).collect();
                            format!("({})", parts.join(", "))
                        }
                    })
                    .collect();
                write!(f, "{{{}}}", items.join(", "))
            }
        }
    }
}

impl fmt::Display for RelFormula {
    /// Loy-level rendering: `and`/`or`/`implies`/`not`/`all`/`exists`,
    /// `no`/`some` for emptiness, `=` for set equality, `in` for subset.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", render_prec(self, 0))
    }
}

// Precedence: implies/quantifiers = 1, or = 2, and = 3, unary = 4.
fn render_prec(f: &RelFormula, min: u8) -> String {
    let (rendered, level) = match f {
        RelFormula::Implies(a, b) => (
            format!("{} implies {}", render_prec(a, 2), render_prec(b, 1)),
            1,
        ),
        RelFormula::Or(parts) => (
            parts
                .iter()
                .map(|p| render_prec(p, 3))
                .collect::<Vec<_>>()
                .join(" or "),
            2,
        ),
        RelFormula::And(parts) => (
            parts
                .iter()
                .map(|p| render_prec(p, 4))
                .collect::<Vec<_>>()
                .join(" and "),
            3,
        ),
        RelFormula::Not(inner) => (format!("not {}", render_prec(inner, 4)), 4),
        RelFormula::ForAll { var, domain, body } => (
            format!(
                "all {} : {} | {}",
                display_var(var),
                domain,
                render_prec(body, 1)
            ),
            1,
        ),
        RelFormula::Exists { var, domain, body } => (
            format!(
                "exists {} : {} | {}",
                display_var(var),
                domain,
                render_prec(body, 1)
            ),
            1,
        ),
        RelFormula::Empty(_) if f.is_top() => ("true".to_string(), 4),
        RelFormula::Empty(e) => (format!("no {e}"), 4),
        RelFormula::NonEmpty(e) => (format!("some {e}"), 4),
        RelFormula::SetEqual(a, b) => (format!("{a} = {b}"), 4),
        RelFormula::Subset(a, b) => (format!("{a} in {b}"), 4),
        RelFormula::CardEq(e, k) => (format!("#{e} = {k}"), 4),
    };
    if level < min {
        format!("({rendered})")
    } else {
        rendered
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_formulas_in_loy_syntax() {
        let f = RelFormula::forall(
            "x",
            "Employee",
            RelFormula::Empty(RelExpr::var("x").dot("project").dot("manager")),
        );
        assert_eq!(f.to_string(), "all x : Employee | no x.project.manager");
        assert_eq!(RelFormula::top().to_string(), "true");

        let state_ref = RelExpr::var("$i").join(RelExpr::var("$s0").dot("employee"));
        assert_eq!(state_ref.to_string(), "s0.employee[i]");
    }

    #[test]
    fn conj_and_disj_collapse() {
        assert!(RelFormula::conj(vec![]).is_top());
        let one = RelFormula::NonEmpty(RelExpr::rel("D"));
        assert_eq!(RelFormula::conj(vec![one.clone()]), one);
        assert!(matches!(
            RelFormula::conj(vec![one.clone(), one.clone()]),
            RelFormula::And(_)
        ));
    }

    #[test]
    fn free_vars_exclude_bound() {
        let f = RelFormula::exists(
            "x",
            "D",
            RelFormula::SetEqual(RelExpr::var("x"), RelExpr::var("y")),
        );
        assert_eq!(f.free_vars(), vec!["y".to_string()]);
    }

    #[test]
    fn problem_hierarchy_queries() {
        let mut p = RelProblem::new();
        p.add_domain("Obj");
        p.add_subdomain("Employee", "Obj");
        p.add_subdomain("Pool", "Employee");
        assert_eq!(p.root_of("Pool"), Some("Obj"));
        assert!(p.is_within("Pool", "Obj"));
        assert!(!p.is_within("Obj", "Pool"));
    }
}
