//! Backtracking model finder, complete within a scope.
//!
//! Search state assigns each pool atom a sort (absent, or one domain under
//! its root; subdomain containment and sibling disjointness are structural),
//! each type-environment variable an element, and each candidate tuple
//! in/out. Unit propagation handles column domains and `lone` multiplicities;
//! a three-valued evaluation of the constraints prunes branches early.
//! Candidates are explored in a fixed canonical order (absent/out first), so
//! found models are reproducible and small.

use super::{
    Atom, Binding, ConstraintGroup, Mult, RelExpr, RelFormula, RelProblem, SatResult, Scope,
    TypeEnv,
};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SolveError {
    #[error("search budget exhausted after {explored} nodes")]
    BudgetExceeded { explored: u64 },
    #[error("ill-formed problem: {0}")]
    InvalidProblem(String),
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("unknown relation or domain `{0}` in formula")]
    UnknownRelation(String),
    #[error("variable `{0}` is not bound by the type environment")]
    UnboundVariable(String),
    #[error("literal names atom `{0}` outside the universe")]
    UnknownAtom(String),
    #[error("type error in formula: {0}")]
    TypeError(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("unknown assert `{0}`")]
    UnknownAssert(String),
}

/// Knobs for the search.
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Node budget distinguishing "unsatisfiable within scope" from "gave up".
    pub budget: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { budget: 10_000_000 }
    }
}

/// Search for a binding satisfying the core constraints and `extra`, with the
/// type environment's variables existentially bound to elements of their
/// domains. `Unsat` is complete within the scope.
pub fn solve(
    problem: &RelProblem,
    extra: &RelFormula,
    env: &TypeEnv,
    scope: &Scope,
    opts: &SolveOptions,
) -> Result<SatResult, SolveError> {
    let mut engine = Engine::compile(problem, extra, env, scope, opts.budget)?;
    engine.run()
}

// ---------------------------------------------------------------------------
// compiled universe
// ---------------------------------------------------------------------------

const ABSENT: u64 = 1; // option bit 0

#[derive(Clone)]
struct RootInfo {
    name: String,
    pool: usize,
    atom_start: usize,
    /// Domains under this root, in declaration order; option bit i+1 means
    /// "sort is options[i]".
    options: Vec<usize>,
    full_mask: u64,
}

#[derive(Clone)]
struct DomInfo {
    name: String,
    root: usize,
    bound: usize,
    /// Option bits of this root that place an atom inside this domain.
    in_mask: u64,
}

struct RelInfo {
    name: String,
    cols: Vec<usize>, // domain ids
    mults: Vec<Mult>,
    col_roots: Vec<usize>,
    strides: Vec<usize>,
    pools: Vec<usize>,
    tuple_start: usize,
    tuple_count: usize,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TupleState {
    Unknown,
    In,
    Out,
}

enum CExpr {
    TVar(usize),
    QVar(usize),
    Dom(usize),
    Rel(usize),
    Lit(Vec<Vec<u32>>),
    Join(Box<CExpr>, Box<CExpr>, usize), // lhs arity
}

enum CFormula {
    And(Vec<CFormula>),
    Or(Vec<CFormula>),
    Implies(Box<CFormula>, Box<CFormula>),
    Not(Box<CFormula>),
    ForAll(usize, Box<CFormula>),
    Exists(usize, Box<CFormula>),
    Empty(CExpr),
    NonEmpty(CExpr),
    SetEqual(CExpr, CExpr),
    Subset(CExpr, CExpr),
    CardEq(CExpr, usize),
}

#[derive(Default)]
struct Deps {
    roots: BTreeSet<usize>,
    rels: BTreeSet<usize>,
    vars: BTreeSet<usize>,
}

struct ConstraintC {
    formula: CFormula,
    deps: Deps,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tri {
    False,
    Unknown,
    True,
}

enum TrailEntry {
    Mask(u32, u64),
    Tuple(usize),
    Var(usize),
    Status(usize),
}

struct Engine {
    roots: Vec<RootInfo>,
    domains: Vec<DomInfo>,
    relations: Vec<RelInfo>,
    constraints: Vec<ConstraintC>,
    var_doms: Vec<usize>,
    var_names: Vec<String>,
    domain_names: Vec<String>,

    atom_root: Vec<usize>,
    masks: Vec<u64>,
    tuples: Vec<TupleState>,
    var_vals: Vec<Option<u32>>,
    status: Vec<Tri>, // True or Unknown per constraint

    trail: Vec<TrailEntry>,
    pending: Vec<Pending>,
    dirty_roots: BTreeSet<usize>,
    dirty_rels: BTreeSet<usize>,
    dirty_vars: BTreeSet<usize>,
    /// Constraints that must be re-evaluated after a backjump stops here.
    forced_eval: BTreeSet<usize>,
    /// Owning relation of each global tuple index.
    tuple_rel: Vec<u32>,

    budget: u64,
    explored: u64,
}

enum Step {
    Found,
    Fail(Option<usize>),
}

enum Pending {
    AtomNarrowed(u32),
    TupleIn(usize, usize), // relation, local tuple index
}

/// A tuple of atom ids without heap allocation; encodings use arity <= 3,
/// generic problems are capped at 8 columns.
type Tup = arrayvec::ArrayVec<u32, 8>;

/// A sorted, duplicate-free tuple set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct Ts {
    items: Vec<Tup>,
}

impl Ts {
    fn new() -> Ts {
        Ts { items: Vec::new() }
    }

    fn singleton(t: Tup) -> Ts {
        Ts { items: vec![t] }
    }

    /// Push in ascending order; caller guarantees ordering.
    fn push_sorted(&mut self, t: Tup) {
        debug_assert!(self.items.last().map_or(true, |last| *last < t));
        self.items.push(t);
    }

    fn push_unsorted(&mut self, t: Tup) {
        self.items.push(t);
    }

    fn normalize(&mut self) {
        self.items.sort_unstable();
        self.items.dedup();
    }

    fn contains(&self, t: &Tup) -> bool {
        self.items.binary_search(t).is_ok()
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn iter(&self) -> std::slice::Iter<'_, Tup> {
        self.items.iter()
    }
}

impl Engine {
    fn compile(
        problem: &RelProblem,
        extra: &RelFormula,
        env: &TypeEnv,
        scope: &Scope,
        budget: u64,
    ) -> Result<Engine, SolveError> {
        // Domains and roots.
        let mut domain_names = Vec::new();
        for d in &problem.domains {
            if domain_names.contains(&d.name) {
                return Err(SolveError::InvalidProblem(format!(
                    "duplicate domain `{}`",
                    d.name
                )));
            }
            if let Some(p) = &d.parent {
                if problem.domain(p).is_none() {
                    return Err(SolveError::InvalidProblem(format!(
                        "domain `{}` has unknown parent `{}`",
                        d.name, p
                    )));
                }
                if d.exact_size.is_some() {
                    return Err(SolveError::InvalidProblem(format!(
                        "exact domain `{}` must be top-level",
                        d.name
                    )));
                }
            }
            domain_names.push(d.name.clone());
        }
        let dom_id = |name: &str| -> Result<usize, SolveError> {
            domain_names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| SolveError::UnknownDomain(name.to_string()))
        };

        let mut roots: Vec<RootInfo> = Vec::new();
        let mut root_of: Vec<usize> = Vec::new(); // per domain
        for d in &problem.domains {
            match &d.parent {
                None => {
                    let pool = match d.exact_size {
                        Some(n) => n,
                        None => scope.bound(&d.name),
                    };
                    if pool == 0 && d.exact_size.is_none() {
                        return Err(SolveError::InvalidProblem(format!(
                            "scope bound for `{}` must be at least 1",
                            d.name
                        )));
                    }
                    roots.push(RootInfo {
                        name: d.name.clone(),
                        pool,
                        atom_start: 0,
                        options: Vec::new(),
                        full_mask: 0,
                    });
                    root_of.push(roots.len() - 1);
                }
                Some(p) => {
                    let pid = dom_id(p)?;
                    root_of.push(root_of[pid]);
                }
            }
        }
        // Option bits per root: every domain under the root, declaration order.
        let mut domains: Vec<DomInfo> = Vec::new();
        for (i, d) in problem.domains.iter().enumerate() {
            let r = root_of[i];
            roots[r].options.push(i);
            domains.push(DomInfo {
                name: d.name.clone(),
                root: r,
                bound: d.exact_size.unwrap_or_else(|| scope.bound(&d.name)),
                in_mask: 0,
            });
        }
        for r in &mut roots {
            if r.options.len() > 62 {
                return Err(SolveError::InvalidProblem(format!(
                    "too many subdomains under `{}`",
                    r.name
                )));
            }
            r.full_mask = ABSENT;
            for (bit, _) in r.options.iter().enumerate() {
                r.full_mask |= 1 << (bit + 1);
            }
        }
        // in_mask: option places atom in D iff the option's domain is D or
        // transitively below it.
        for di in 0..domains.len() {
            let r = domains[di].root;
            let mut mask = 0u64;
            for (bit, &opt_dom) in roots[r].options.iter().enumerate() {
                let mut cur = opt_dom;
                loop {
                    if cur == di {
                        mask |= 1 << (bit + 1);
                        break;
                    }
                    match &problem.domains[cur].parent {
                        Some(p) => cur = dom_id(p)?,
                        None => break,
                    }
                }
            }
            domains[di].in_mask = mask;
        }

        // Atom table, root-major.
        let mut next = 0usize;
        for r in roots.iter_mut() {
            r.atom_start = next;
            next += r.pool;
        }
        let mut atom_root = vec![0usize; next];
        for (ri, r) in roots.iter().enumerate() {
            for k in 0..r.pool {
                atom_root[r.atom_start + k] = ri;
            }
        }

        let mut masks = vec![0u64; atom_root.len()];
        for (a, &r) in atom_root.iter().enumerate() {
            masks[a] = roots[r].full_mask;
        }
        // Exact domains hold exactly their pool: force the sort.
        for (di, d) in problem.domains.iter().enumerate() {
            if d.parent.is_none() && d.exact_size.is_some() {
                let r = &roots[root_of[di]];
                for k in 0..r.pool {
                    masks[r.atom_start + k] = domains[di].in_mask;
                }
            }
        }

        // Relations.
        let mut relations: Vec<RelInfo> = Vec::new();
        let mut tuple_total = 0usize;
        let mut rel_names: Vec<&str> = Vec::new();
        for r in &problem.relations {
            if rel_names.contains(&r.name.as_str()) {
                return Err(SolveError::InvalidProblem(format!(
                    "duplicate relation `{}`",
                    r.name
                )));
            }
            if domain_names.contains(&r.name) {
                return Err(SolveError::InvalidProblem(format!(
                    "relation `{}` shadows a domain name",
                    r.name
                )));
            }
            rel_names.push(&r.name);
            if r.columns.is_empty() {
                return Err(SolveError::InvalidProblem(format!(
                    "relation `{}` has no columns",
                    r.name
                )));
            }
            if r.columns.len() > 8 {
                return Err(SolveError::InvalidProblem(format!(
                    "relation `{}` has more than 8 columns",
                    r.name
                )));
            }
            let cols: Vec<usize> = r
                .columns
                .iter()
                .map(|c| dom_id(c))
                .collect::<Result<_, _>>()?;
            let col_roots: Vec<usize> = cols.iter().map(|&c| domains[c].root).collect();
            let pools: Vec<usize> = col_roots.iter().map(|&cr| roots[cr].pool).collect();
            let mut strides = vec![1usize; cols.len()];
            for i in (0..cols.len().saturating_sub(1)).rev() {
                strides[i] = strides[i + 1] * pools[i + 1];
            }
            let tuple_count = pools.iter().product();
            relations.push(RelInfo {
                name: r.name.clone(),
                cols,
                mults: r.mults.clone(),
                col_roots,
                strides,
                pools,
                tuple_start: tuple_total,
                tuple_count,
            });
            tuple_total += tuple_count;
        }

        // Type environment.
        let mut var_names = Vec::new();
        let mut var_doms = Vec::new();
        for (v, d) in env.iter() {
            var_names.push(v.clone());
            var_doms.push(dom_id(d)?);
        }

        let mut tuple_rel = Vec::with_capacity(tuple_total);
        for (rid, r) in relations.iter().enumerate() {
            tuple_rel.extend(std::iter::repeat(rid as u32).take(r.tuple_count));
        }

        let mut engine = Engine {
            roots,
            domains,
            relations,
            constraints: Vec::new(),
            var_doms,
            var_names,
            domain_names,
            atom_root,
            masks,
            tuples: vec![TupleState::Unknown; tuple_total],
            var_vals: vec![None; env.len()],
            status: Vec::new(),
            trail: Vec::new(),
            pending: Vec::new(),
            dirty_roots: BTreeSet::new(),
            dirty_rels: BTreeSet::new(),
            dirty_vars: BTreeSet::new(),
            forced_eval: BTreeSet::new(),
            tuple_rel,
            budget,
            explored: 0,
        };

        // Constraint order steers the branch heuristic: the query first so
        // search gravitates to query-relevant structure, then invariants
        // (where conflicts usually live), then structural facts, which mostly
        // follow by propagation. Top-level conjuncts become separate
        // constraints for finer dirty tracking.
        let extra_parts: Vec<&RelFormula> = match extra {
            RelFormula::And(parts) => parts.iter().collect(),
            other => vec![other],
        };
        for f in extra_parts {
            let compiled = engine.compile_constraint(f)?;
            engine.constraints.push(compiled);
        }
        for c in problem
            .constraints
            .iter()
            .filter(|c| c.group == ConstraintGroup::Invariant)
        {
            let compiled = engine.compile_constraint(&c.formula)?;
            engine.constraints.push(compiled);
        }
        // Try: declarations before query? experiment marker
        for c in problem
            .constraints
            .iter()
            .filter(|c| c.group == ConstraintGroup::Declarations)
        {
            let compiled = engine.compile_constraint(&c.formula)?;
            engine.constraints.push(compiled);
        }
        engine.status = vec![Tri::Unknown; engine.constraints.len()];
        Ok(engine)
    }

    fn compile_constraint(&self, f: &RelFormula) -> Result<ConstraintC, SolveError> {
        let mut deps = Deps::default();
        let mut qstack = Vec::new();
        let formula = self.compile_f(f, &mut qstack, &mut deps)?;
        Ok(ConstraintC { formula, deps })
    }

    fn dom_id(&self, name: &str) -> Result<usize, SolveError> {
        self.domain_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SolveError::UnknownDomain(name.to_string()))
    }

    fn compile_f(
        &self,
        f: &RelFormula,
        qstack: &mut Vec<String>,
        deps: &mut Deps,
    ) -> Result<CFormula, SolveError> {
        Ok(match f {
            RelFormula::And(parts) => CFormula::And(
                parts
                    .iter()
                    .map(|p| self.compile_f(p, qstack, deps))
                    .collect::<Result<_, _>>()?,
            ),
            RelFormula::Or(parts) => CFormula::Or(
                parts
                    .iter()
                    .map(|p| self.compile_f(p, qstack, deps))
                    .collect::<Result<_, _>>()?,
            ),
            RelFormula::Implies(a, b) => CFormula::Implies(
                Box::new(self.compile_f(a, qstack, deps)?),
                Box::new(self.compile_f(b, qstack, deps)?),
            ),
            RelFormula::Not(inner) => CFormula::Not(Box::new(self.compile_f(inner, qstack, deps)?)),
            RelFormula::ForAll { var, domain, body } => {
                let d = self.dom_id(domain)?;
                deps.roots.insert(self.domains[d].root);
                qstack.push(var.clone());
                let body = self.compile_f(body, qstack, deps)?;
                qstack.pop();
                CFormula::ForAll(d, Box::new(body))
            }
            RelFormula::Exists { var, domain, body } => {
                let d = self.dom_id(domain)?;
                deps.roots.insert(self.domains[d].root);
                qstack.push(var.clone());
                let body = self.compile_f(body, qstack, deps)?;
                qstack.pop();
                CFormula::Exists(d, Box::new(body))
            }
            RelFormula::Empty(e) => CFormula::Empty(self.compile_e(e, qstack, deps)?.0),
            RelFormula::NonEmpty(e) => CFormula::NonEmpty(self.compile_e(e, qstack, deps)?.0),
            RelFormula::SetEqual(a, b) => {
                let (ca, aa) = self.compile_e(a, qstack, deps)?;
                let (cb, ab) = self.compile_e(b, qstack, deps)?;
                check_same_arity(aa, ab)?;
                CFormula::SetEqual(ca, cb)
            }
            RelFormula::Subset(a, b) => {
                let (ca, aa) = self.compile_e(a, qstack, deps)?;
                let (cb, ab) = self.compile_e(b, qstack, deps)?;
                check_same_arity(aa, ab)?;
                CFormula::Subset(ca, cb)
            }
            RelFormula::CardEq(e, k) => CFormula::CardEq(self.compile_e(e, qstack, deps)?.0, *k),
        })
    }

    /// Compile an expression, returning its arity (`None` for the empty
    /// literal, which has no fixed arity).
    fn compile_e(
        &self,
        e: &RelExpr,
        qstack: &[String],
        deps: &mut Deps,
    ) -> Result<(CExpr, Option<usize>), SolveError> {
        Ok(match e {
            RelExpr::Var(name) => {
                if let Some(level) = qstack.iter().rposition(|v| v == name) {
                    (CExpr::QVar(level), Some(1))
                } else if let Some(vid) = self.var_names.iter().position(|v| v == name) {
                    deps.vars.insert(vid);
                    deps.roots.insert(self.domains[self.var_doms[vid]].root);
                    (CExpr::TVar(vid), Some(1))
                } else {
                    return Err(SolveError::UnboundVariable(name.clone()));
                }
            }
            RelExpr::Rel(name) => {
                if let Some(rid) = self.relations.iter().position(|r| r.name == *name) {
                    deps.rels.insert(rid);
                    (CExpr::Rel(rid), Some(self.relations[rid].cols.len()))
                } else if let Ok(did) = self.dom_id(name) {
                    deps.roots.insert(self.domains[did].root);
                    (CExpr::Dom(did), Some(1))
                } else {
                    return Err(SolveError::UnknownRelation(name.clone()));
                }
            }
            RelExpr::Join(a, b) => {
                let (ca, aa) = self.compile_e(a, qstack, deps)?;
                let (cb, ab) = self.compile_e(b, qstack, deps)?;
                let (aa, ab) = match (aa, ab) {
                    (Some(x), Some(y)) => (x, y),
                    _ => {
                        return Err(SolveError::TypeError(
                            "join over the empty literal has no arity".into(),
                        ))
                    }
                };
                if aa + ab < 3 {
                    return Err(SolveError::TypeError(
                        "join of two unary expressions".into(),
                    ));
                }
                if aa + ab - 2 > 8 {
                    return Err(SolveError::TypeError(
                        "join result arity beyond the supported maximum of 8".into(),
                    ));
                }
                (CExpr::Join(Box::new(ca), Box::new(cb), aa), Some(aa + ab - 2))
            }
            RelExpr::Literal(tuples) => {
                let mut arity = None;
                let mut out = Vec::new();
                for t in tuples {
                    match arity {
                        None => arity = Some(t.len()),
                        Some(n) if n == t.len() => {}
                        Some(n) => {
                            return Err(SolveError::TypeError(format!(
                                "literal mixes arities {n} and {}",
                                t.len()
                            )))
                        }
                    }
                    let ids = t
                        .iter()
                        .map(|a| self.atom_id(a))
                        .collect::<Result<Vec<_>, _>>()?;
                    out.push(ids);
                }
                (CExpr::Lit(out), arity)
            }
        })
    }

    fn atom_id(&self, atom: &Atom) -> Result<u32, SolveError> {
        let root = self
            .roots
            .iter()
            .find(|r| r.name == atom.root)
            .ok_or_else(|| SolveError::UnknownAtom(atom.to_string()))?;
        if atom.index >= root.pool {
            return Err(SolveError::UnknownAtom(atom.to_string()));
        }
        Ok((root.atom_start + atom.index) as u32)
    }

    // --- search ---

    fn run(&mut self) -> Result<SatResult, SolveError> {
        // Everything is dirty for the first evaluation round.
        for r in 0..self.roots.len() {
            self.dirty_roots.insert(r);
        }
        for r in 0..self.relations.len() {
            self.dirty_rels.insert(r);
        }
        for v in 0..self.var_vals.len() {
            self.dirty_vars.insert(v);
        }
        match self.search()? {
            Step::Found => Ok(SatResult::Sat(self.extract())),
            Step::Fail(_) => Ok(SatResult::Unsat),
        }
    }

    /// One decision frame: try each alternative, recursing. On a conflict
    /// whose constraint does not depend on anything this frame changed, the
    /// remaining alternatives would fail identically, so the frame is skipped
    /// wholesale (relevance backjumping).
    fn search(&mut self) -> Result<Step, SolveError> {
        if let Some(conflict) = self.propagate_and_eval() {
            return Ok(Step::Fail(conflict));
        }
        let branch = match self.pick_branch() {
            Some(b) => b,
            None => return Ok(Step::Found), // fully assigned, all constraints hold
        };
        match branch {
            Branch::Var(v) => {
                let candidates: Vec<u32> = self.var_candidates(v);
                for a in candidates {
                    let mark = self.trail.len();
                    self.note_node()?;
                    self.trail.push(TrailEntry::Var(v));
                    self.var_vals[v] = Some(a);
                    self.dirty_vars.insert(v);
                    let in_mask = self.domains[self.var_doms[v]].in_mask;
                    if self.narrow(a, in_mask) {
                        match self.search()? {
                            Step::Found => return Ok(Step::Found),
                            Step::Fail(conflict) => {
                                if self.unwind(mark, conflict) {
                                    return Ok(Step::Fail(conflict));
                                }
                            }
                        }
                    } else {
                        self.undo_to(mark);
                    }
                }
                Ok(Step::Fail(None))
            }
            Branch::Atom(a) => {
                let mask = self.masks[a as usize];
                for bit in 0..64 {
                    if mask & (1 << bit) == 0 {
                        continue;
                    }
                    let mark = self.trail.len();
                    self.note_node()?;
                    let narrowed = self.narrow(a, 1 << bit);
                    debug_assert!(narrowed);
                    match self.search()? {
                        Step::Found => return Ok(Step::Found),
                        Step::Fail(conflict) => {
                            if self.unwind(mark, conflict) {
                                return Ok(Step::Fail(conflict));
                            }
                        }
                    }
                }
                Ok(Step::Fail(None))
            }
            Branch::Tuple(rel, idx) => {
                for state in [TupleState::Out, TupleState::In] {
                    let mark = self.trail.len();
                    self.note_node()?;
                    self.set_tuple(rel, idx, state);
                    match self.search()? {
                        Step::Found => return Ok(Step::Found),
                        Step::Fail(conflict) => {
                            if self.unwind(mark, conflict) {
                                return Ok(Step::Fail(conflict));
                            }
                        }
                    }
                }
                Ok(Step::Fail(None))
            }
        }
    }

    /// Undo this frame's trail segment. Returns true when the conflicting
    /// constraint is untouched by the segment, so the caller can skip its
    /// remaining alternatives; otherwise the constraint is queued for
    /// re-evaluation and the caller proceeds.
    fn unwind(&mut self, mark: usize, conflict: Option<usize>) -> bool {
        let touched = self.undo_tracking(mark, conflict);
        match conflict {
            Some(_) if !touched => true,
            Some(ci) => {
                self.forced_eval.insert(ci);
                false
            }
            None => false,
        }
    }

    fn undo_tracking(&mut self, mark: usize, conflict: Option<usize>) -> bool {
        let deps = conflict.map(|ci| {
            let d = &self.constraints[ci].deps;
            (d.roots.clone(), d.rels.clone(), d.vars.clone())
        });
        let mut touched = false;
        while self.trail.len() > mark {
            match self.trail.pop().unwrap() {
                TrailEntry::Mask(a, old) => {
                    if let Some((roots, _, _)) = &deps {
                        if roots.contains(&self.atom_root[a as usize]) {
                            touched = true;
                        }
                    }
                    self.masks[a as usize] = old;
                }
                TrailEntry::Tuple(g) => {
                    if let Some((_, rels, _)) = &deps {
                        if rels.contains(&(self.tuple_rel[g] as usize)) {
                            touched = true;
                        }
                    }
                    self.tuples[g] = TupleState::Unknown;
                }
                TrailEntry::Var(v) => {
                    if let Some((_, _, vars)) = &deps {
                        if vars.contains(&v) {
                            touched = true;
                        }
                    }
                    self.var_vals[v] = None;
                }
                TrailEntry::Status(c) => self.status[c] = Tri::Unknown,
            }
        }
        self.pending.clear();
        self.dirty_roots.clear();
        self.dirty_rels.clear();
        self.dirty_vars.clear();
        touched
    }

    fn note_node(&mut self) -> Result<(), SolveError> {
        self.explored += 1;
        if self.explored > self.budget {
            return Err(SolveError::BudgetExceeded {
                explored: self.explored,
            });
        }
        Ok(())
    }

    fn var_candidates(&self, v: usize) -> Vec<u32> {
        let dom = &self.domains[self.var_doms[v]];
        let root = &self.roots[dom.root];
        (0..root.pool)
            .map(|k| (root.atom_start + k) as u32)
            .filter(|&a| self.masks[a as usize] & dom.in_mask != 0)
            .collect()
    }

    /// Propagate pending structural consequences and re-evaluate dirty
    /// constraints. Returns the conflict on failure: the violated constraint
    /// when one evaluated false, `None` inside for structural conflicts.
    fn propagate_and_eval(&mut self) -> Option<Option<usize>> {
        loop {
            while let Some(ev) = self.pending.pop() {
                let ok = match ev {
                    Pending::AtomNarrowed(a) => self.on_atom_narrowed(a),
                    Pending::TupleIn(rel, idx) => self.on_tuple_in(rel, idx),
                };
                if !ok {
                    self.pending.clear();
                    return Some(None);
                }
            }
            if !self.check_scope() {
                return Some(None);
            }
            // Re-evaluate constraints touched by the changes.
            let dirty_roots = std::mem::take(&mut self.dirty_roots);
            let dirty_rels = std::mem::take(&mut self.dirty_rels);
            let dirty_vars = std::mem::take(&mut self.dirty_vars);
            let forced = std::mem::take(&mut self.forced_eval);
            if dirty_roots.is_empty()
                && dirty_rels.is_empty()
                && dirty_vars.is_empty()
                && forced.is_empty()
            {
                return None;
            }
            for ci in 0..self.constraints.len() {
                if self.status[ci] == Tri::True {
                    continue;
                }
                let deps = &self.constraints[ci].deps;
                // Constant formulas have no dependencies; evaluate them while
                // undecided (the first pass settles them for good).
                let touched = forced.contains(&ci)
                    || (deps.roots.is_empty() && deps.rels.is_empty() && deps.vars.is_empty())
                    || deps.roots.iter().any(|r| dirty_roots.contains(r))
                    || deps.rels.iter().any(|r| dirty_rels.contains(r))
                    || deps.vars.iter().any(|v| dirty_vars.contains(v));
                if !touched {
                    continue;
                }
                let mut q = Vec::new();
                match self.eval_cf(&self.constraints[ci].formula, &mut q) {
                    Tri::False => return Some(Some(ci)),
                    Tri::True => {
                        self.trail.push(TrailEntry::Status(ci));
                        self.status[ci] = Tri::True;
                    }
                    Tri::Unknown => {}
                }
            }
            if self.pending.is_empty() {
                return None;
            }
        }
    }

    fn narrow(&mut self, a: u32, mask: u64) -> bool {
        let old = self.masks[a as usize];
        let new = old & mask;
        if new == 0 {
            return false;
        }
        if new != old {
            self.trail.push(TrailEntry::Mask(a, old));
            self.masks[a as usize] = new;
            self.dirty_roots.insert(self.atom_root[a as usize]);
            self.pending.push(Pending::AtomNarrowed(a));
        }
        true
    }

    fn set_tuple(&mut self, rel: usize, idx: usize, state: TupleState) -> bool {
        let g = self.relations[rel].tuple_start + idx;
        match self.tuples[g] {
            TupleState::Unknown => {
                self.trail.push(TrailEntry::Tuple(g));
                self.tuples[g] = state;
                self.dirty_rels.insert(rel);
                if state == TupleState::In {
                    self.pending.push(Pending::TupleIn(rel, idx));
                }
                true
            }
            existing => existing == state,
        }
    }

    fn on_tuple_in(&mut self, rel: usize, idx: usize) -> bool {
        let (cols, mults, strides, pools, nc) = {
            let r = &self.relations[rel];
            (
                r.cols.clone(),
                r.mults.clone(),
                r.strides.clone(),
                r.pools.clone(),
                r.cols.len(),
            )
        };
        // Column atoms must lie inside their column domains.
        for c in 0..nc {
            let pos = idx / strides[c] % pools[c];
            let root = self.relations[rel].col_roots[c];
            let a = (self.roots[root].atom_start + pos) as u32;
            let in_mask = self.domains[cols[c]].in_mask;
            if !self.narrow(a, in_mask) {
                return false;
            }
        }
        // `lone` columns: siblings that differ only at that column go out.
        for c in 0..nc {
            if mults[c] != Mult::Lone {
                continue;
            }
            let pos = idx / strides[c] % pools[c];
            let base = idx - pos * strides[c];
            for p in 0..pools[c] {
                if p == pos {
                    continue;
                }
                let sibling = base + p * strides[c];
                let g = self.relations[rel].tuple_start + sibling;
                match self.tuples[g] {
                    TupleState::In => return false,
                    TupleState::Unknown => {
                        self.set_tuple(rel, sibling, TupleState::Out);
                    }
                    TupleState::Out => {}
                }
            }
        }
        true
    }

    fn on_atom_narrowed(&mut self, a: u32) -> bool {
        let mask = self.masks[a as usize];
        let root = self.atom_root[a as usize];
        let pos = a as usize - self.roots[root].atom_start;
        // Candidate tuples using this atom in a column it can no longer
        // inhabit are out.
        for rel in 0..self.relations.len() {
            let nc = self.relations[rel].cols.len();
            for c in 0..nc {
                if self.relations[rel].col_roots[c] != root {
                    continue;
                }
                let in_mask = self.domains[self.relations[rel].cols[c]].in_mask;
                if mask & in_mask != 0 {
                    continue; // still possible
                }
                let (stride, pool, count) = {
                    let r = &self.relations[rel];
                    (r.strides[c], r.pools[c], r.tuple_count)
                };
                for idx in 0..count {
                    if idx / stride % pool != pos {
                        continue;
                    }
                    let g = self.relations[rel].tuple_start + idx;
                    match self.tuples[g] {
                        TupleState::In => return false,
                        TupleState::Unknown => {
                            self.set_tuple(rel, idx, TupleState::Out);
                        }
                        TupleState::Out => {}
                    }
                }
            }
        }
        true
    }

    fn check_scope(&self) -> bool {
        for d in &self.domains {
            let root = &self.roots[d.root];
            let mut surely = 0usize;
            for k in 0..root.pool {
                let mask = self.masks[root.atom_start + k];
                if mask != 0 && mask & !d.in_mask == 0 {
                    surely += 1;
                }
            }
            if surely > d.bound {
                return false;
            }
        }
        true
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            match self.trail.pop().unwrap() {
                TrailEntry::Mask(a, old) => self.masks[a as usize] = old,
                TrailEntry::Tuple(g) => self.tuples[g] = TupleState::Unknown,
                TrailEntry::Var(v) => self.var_vals[v] = None,
                TrailEntry::Status(c) => self.status[c] = Tri::Unknown,
            }
        }
        self.pending.clear();
        self.dirty_roots.clear();
        self.dirty_rels.clear();
        self.dirty_vars.clear();
    }

    fn pick_branch(&self) -> Option<Branch> {
        // Unassigned variables first: they anchor everything else.
        if let Some(v) = self.var_vals.iter().position(Option::is_none) {
            return Some(Branch::Var(v));
        }
        // Among undecided constraints, an almost-decided one is either close
        // to a conflict or close to being settled: finish it before widening
        // the search. Otherwise follow constraint order, which puts the query
        // ahead of the core.
        const NEARLY_DECIDED: usize = 6;
        let mut best: Option<(usize, Branch)> = None;
        for ci in 0..self.constraints.len() {
            if self.status[ci] == Tri::True {
                continue;
            }
            let deps = &self.constraints[ci].deps;
            let mut undecided = 0usize;
            let mut first: Option<Branch> = None;
            for &r in &deps.roots {
                let root = &self.roots[r];
                for k in 0..root.pool {
                    let a = root.atom_start + k;
                    if self.masks[a].count_ones() > 1 {
                        undecided += 1;
                        if first.is_none() {
                            first = Some(Branch::Atom(a as u32));
                        }
                    }
                }
            }
            for &rel in &deps.rels {
                let r = &self.relations[rel];
                for idx in 0..r.tuple_count {
                    if self.tuples[r.tuple_start + idx] == TupleState::Unknown {
                        undecided += 1;
                        if first.is_none() {
                            first = Some(Branch::Tuple(rel, idx));
                        }
                    }
                }
            }
            let Some(branch) = first else { continue };
            let score = if undecided <= NEARLY_DECIDED { undecided } else { usize::MAX };
            match &best {
                Some((n, _)) if *n <= score => {}
                _ => best = Some((score, branch)),
            }
            if undecided <= 1 {
                break; // cannot do better than a forced completion
            }
        }
        if let Some((_, branch)) = best {
            return Some(branch);
        }
        // All constraints hold; complete the assignment canonically.
        for (a, mask) in self.masks.iter().enumerate() {
            if mask.count_ones() > 1 {
                return Some(Branch::Atom(a as u32));
            }
        }
        for rel in 0..self.relations.len() {
            let r = &self.relations[rel];
            for idx in 0..r.tuple_count {
                if self.tuples[r.tuple_start + idx] == TupleState::Unknown {
                    return Some(Branch::Tuple(rel, idx));
                }
            }
        }
        None
    }

    // --- three-valued evaluation ---

    fn atom_in_domain(&self, a: u32, d: usize) -> Tri {
        let mask = self.masks[a as usize];
        if mask & self.domains[d].in_mask == 0 {
            Tri::False
        } else if mask & !self.domains[d].in_mask == 0 {
            Tri::True
        } else {
            Tri::Unknown
        }
    }

    fn eval_cf(&self, f: &CFormula, q: &mut Vec<u32>) -> Tri {
        match f {
            CFormula::And(parts) => {
                let mut out = Tri::True;
                for p in parts {
                    match self.eval_cf(p, q) {
                        Tri::False => return Tri::False,
                        Tri::Unknown => out = Tri::Unknown,
                        Tri::True => {}
                    }
                }
                out
            }
            CFormula::Or(parts) => {
                let mut out = Tri::False;
                for p in parts {
                    match self.eval_cf(p, q) {
                        Tri::True => return Tri::True,
                        Tri::Unknown => out = Tri::Unknown,
                        Tri::False => {}
                    }
                }
                out
            }
            CFormula::Implies(a, b) => match (self.eval_cf(a, q), self.eval_cf(b, q)) {
                (Tri::False, _) | (_, Tri::True) => Tri::True,
                (Tri::True, Tri::False) => Tri::False,
                _ => Tri::Unknown,
            },
            CFormula::Not(inner) => match self.eval_cf(inner, q) {
                Tri::True => Tri::False,
                Tri::False => Tri::True,
                Tri::Unknown => Tri::Unknown,
            },
            CFormula::ForAll(d, body) => {
                let root = &self.roots[self.domains[*d].root];
                let mut out = Tri::True;
                for k in 0..root.pool {
                    let a = (root.atom_start + k) as u32;
                    let membership = self.atom_in_domain(a, *d);
                    if membership == Tri::False {
                        continue;
                    }
                    q.push(a);
                    let v = self.eval_cf(body, q);
                    q.pop();
                    match (v, membership) {
                        (Tri::False, Tri::True) => return Tri::False,
                        (Tri::False, _) | (Tri::Unknown, _) => out = Tri::Unknown,
                        (Tri::True, _) => {}
                    }
                }
                out
            }
            CFormula::Exists(d, body) => {
                let root = &self.roots[self.domains[*d].root];
                let mut out = Tri::False;
                for k in 0..root.pool {
                    let a = (root.atom_start + k) as u32;
                    let membership = self.atom_in_domain(a, *d);
                    if membership == Tri::False {
                        continue;
                    }
                    q.push(a);
                    let v = self.eval_cf(body, q);
                    q.pop();
                    match (v, membership) {
                        (Tri::True, Tri::True) => return Tri::True,
                        (Tri::True, _) | (Tri::Unknown, _) => out = Tri::Unknown,
                        (Tri::False, _) => {}
                    }
                }
                out
            }
            CFormula::Empty(e) => {
                let (lower, upper) = self.eval_ce(e, q);
                if upper.is_empty() {
                    Tri::True
                } else if !lower.is_empty() {
                    Tri::False
                } else {
                    Tri::Unknown
                }
            }
            CFormula::NonEmpty(e) => {
                let (lower, upper) = self.eval_ce(e, q);
                if !lower.is_empty() {
                    Tri::True
                } else if upper.is_empty() {
                    Tri::False
                } else {
                    Tri::Unknown
                }
            }
            CFormula::SetEqual(a, b) => {
                let (la, ua) = self.eval_ce(a, q);
                let (lb, ub) = self.eval_ce(b, q);
                if la.iter().any(|t| !ub.contains(t)) || lb.iter().any(|t| !ua.contains(t)) {
                    return Tri::False;
                }
                if la == ua && lb == ub {
                    if la == lb {
                        Tri::True
                    } else {
                        Tri::False
                    }
                } else {
                    Tri::Unknown
                }
            }
            CFormula::Subset(a, b) => {
                let (la, ua) = self.eval_ce(a, q);
                let (lb, ub) = self.eval_ce(b, q);
                if la.iter().any(|t| !ub.contains(t)) {
                    Tri::False
                } else if ua.iter().all(|t| lb.contains(t)) {
                    Tri::True
                } else {
                    Tri::Unknown
                }
            }
            CFormula::CardEq(e, k) => {
                let (lower, upper) = self.eval_ce(e, q);
                if lower.len() > *k || upper.len() < *k {
                    Tri::False
                } else if lower == upper {
                    if lower.len() == *k {
                        Tri::True
                    } else {
                        Tri::False
                    }
                } else {
                    Tri::Unknown
                }
            }
        }
    }

    fn eval_ce(&self, e: &CExpr, q: &[u32]) -> (Ts, Ts) {
        match e {
            CExpr::QVar(level) => {
                let mut t = Tup::new();
                t.push(q[*level]);
                let s = Ts::singleton(t);
                (s.clone(), s)
            }
            CExpr::TVar(v) => match self.var_vals[*v] {
                Some(a) => {
                    let mut t = Tup::new();
                    t.push(a);
                    let s = Ts::singleton(t);
                    (s.clone(), s)
                }
                None => {
                    let dom = &self.domains[self.var_doms[*v]];
                    let root = &self.roots[dom.root];
                    let mut upper = Ts::new();
                    for k in 0..root.pool {
                        let a = (root.atom_start + k) as u32;
                        if self.masks[a as usize] & dom.in_mask != 0 {
                            let mut t = Tup::new();
                            t.push(a);
                            upper.push_sorted(t);
                        }
                    }
                    (Ts::new(), upper)
                }
            },
            CExpr::Dom(d) => {
                let root = &self.roots[self.domains[*d].root];
                let mut lower = Ts::new();
                let mut upper = Ts::new();
                for k in 0..root.pool {
                    let a = (root.atom_start + k) as u32;
                    let mut t = Tup::new();
                    t.push(a);
                    match self.atom_in_domain(a, *d) {
                        Tri::True => {
                            lower.push_sorted(t.clone());
                            upper.push_sorted(t);
                        }
                        Tri::Unknown => {
                            upper.push_sorted(t);
                        }
                        Tri::False => {}
                    }
                }
                (lower, upper)
            }
            CExpr::Rel(rid) => {
                let r = &self.relations[*rid];
                let mut lower = Ts::new();
                let mut upper = Ts::new();
                for idx in 0..r.tuple_count {
                    match self.tuples[r.tuple_start + idx] {
                        TupleState::In => {
                            let t = self.decode(r, idx);
                            lower.push_unsorted(t.clone());
                            upper.push_unsorted(t);
                        }
                        TupleState::Unknown => {
                            upper.push_unsorted(self.decode(r, idx));
                        }
                        TupleState::Out => {}
                    }
                }
                lower.normalize();
                upper.normalize();
                (lower, upper)
            }
            CExpr::Lit(tuples) => {
                let mut s = Ts::new();
                for t in tuples {
                    s.push_unsorted(t.iter().copied().collect());
                }
                s.normalize();
                (s.clone(), s)
            }
            CExpr::Join(a, b, aa) => {
                let (la, ua) = self.eval_ce(a, q);
                let (lb, ub) = self.eval_ce(b, q);
                (join(&la, &lb, *aa), join(&ua, &ub, *aa))
            }
        }
    }

    fn decode(&self, r: &RelInfo, idx: usize) -> Tup {
        (0..r.cols.len())
            .map(|c| {
                let pos = idx / r.strides[c] % r.pools[c];
                (self.roots[r.col_roots[c]].atom_start + pos) as u32
            })
            .collect()
    }

    fn extract(&self) -> Binding {
        let mut binding = Binding::new();
        let atom = |a: u32| -> Atom {
            let root = &self.roots[self.atom_root[a as usize]];
            Atom::new(root.name.clone(), a as usize - root.atom_start)
        };
        for (d, info) in self.domains.iter().enumerate() {
            let root = &self.roots[info.root];
            let mut set = BTreeSet::new();
            for k in 0..root.pool {
                let a = (root.atom_start + k) as u32;
                if self.atom_in_domain(a, d) == Tri::True {
                    set.insert(atom(a));
                }
            }
            binding.elements.insert(info.name.clone(), set);
        }
        for r in &self.relations {
            let mut set = BTreeSet::new();
            for idx in 0..r.tuple_count {
                if self.tuples[r.tuple_start + idx] == TupleState::In {
                    set.insert(self.decode(r, idx).iter().copied().map(atom).collect());
                }
            }
            binding.tuples.insert(r.name.clone(), set);
            binding.arities.insert(r.name.clone(), r.cols.len());
        }
        for (v, val) in self.var_vals.iter().enumerate() {
            if let Some(a) = val {
                binding.vars.insert(self.var_names[v].clone(), atom(*a));
            }
        }
        binding
    }
}

enum Branch {
    Var(usize),
    Atom(u32),
    Tuple(usize, usize),
}

fn join(a: &Ts, b: &Ts, arity_a: usize) -> Ts {
    let mut out = Ts::new();
    for t1 in a.iter() {
        for t2 in b.iter() {
            if t1.last() == t2.first() {
                let mut t: Tup = t1[..arity_a - 1].iter().copied().collect();
                t.extend(t2[1..].iter().copied());
                out.push_unsorted(t);
            }
        }
    }
    out.normalize();
    out
}

fn check_same_arity(a: Option<usize>, b: Option<usize>) -> Result<(), SolveError> {
    if let (Some(x), Some(y)) = (a, b) {
        if x != y {
            return Err(SolveError::TypeError(format!(
                "comparison of arity {x} and arity {y} expressions"
            )));
        }
    }
    Ok(())
}
