//! Patterns of analysis: decision trees of follow-up satisfiability queries,
//! one per connective and quantifier, that classify and explain a verdict
//! instead of returning a bare yes/no.
//!
//! Every non-terminal node is a query SAT(A)_T against the core constraints,
//! with free variables bound by the type environment T. Terminal warnings
//! flag vacuous satisfiability (unsatisfiable antecedent, valid consequent,
//! empty quantifier domain) or vacuous unsatisfiability. Each satisfiable
//! node carries the model the solver found.

mod render;

pub use render::{
    render_trace, structured_model, StructuredAnnotation, StructuredModel, StructuredNode,
    TraceOptions,
};

use crate::encoder::{Encoding, VAR_ID, VAR_S0, VAR_S1};
use crate::relational::{
    solve, Binding, ConstraintGroup, RelExpr, RelFormula, RelProblem, SatResult, Scope,
    SolveError, SolveOptions, TypeEnv,
};
use std::collections::HashMap;

/// Which pattern produced a node; `None` on plain probe nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternKind {
    Atomic,
    Negation,
    Conjunction,
    Disjunction,
    Implication,
    Universal,
    Existential,
}

impl PatternKind {
    pub fn header(&self) -> Option<&'static str> {
        Some(match self {
            PatternKind::Atomic => return None,
            PatternKind::Negation => "Pattern 1 -- Negation.",
            PatternKind::Conjunction => "Pattern 2 -- Conjunction.",
            PatternKind::Disjunction => "Pattern 3 -- Disjunction.",
            PatternKind::Implication => "Pattern 4 -- Implication.",
            PatternKind::Universal => "Pattern 5 -- Universal quantification.",
            PatternKind::Existential => "Pattern 6 -- Existential quantification.",
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PatternKind::Atomic => "atomic",
            PatternKind::Negation => "negation",
            PatternKind::Conjunction => "conjunction",
            PatternKind::Disjunction => "disjunction",
            PatternKind::Implication => "implication",
            PatternKind::Universal => "universal",
            PatternKind::Existential => "existential",
        }
    }
}

/// Vacuity warnings; the kind fixes the rendered message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WarningKind {
    UnsatAntecedent,
    ValidConsequent,
    EmptyDomainUniversal { domain: String },
    EmptyDomainExistential { domain: String },
    InconsistentCore,
}

impl WarningKind {
    pub fn message(&self) -> String {
        match self {
            WarningKind::UnsatAntecedent => "unsatisfiable antecedent".into(),
            WarningKind::ValidConsequent => "valid consequent".into(),
            WarningKind::EmptyDomainUniversal { domain }
            | WarningKind::EmptyDomainExistential { domain } => {
                format!("specification for {domain} is unsatisfiable")
            }
            WarningKind::InconsistentCore => "the core constraints are inconsistent".into(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WarningKind::UnsatAntecedent => "unsatisfiable-antecedent",
            WarningKind::ValidConsequent => "valid-consequent",
            WarningKind::EmptyDomainUniversal { .. } => "empty-domain-universal",
            WarningKind::EmptyDomainExistential { .. } => "empty-domain-existential",
            WarningKind::InconsistentCore => "inconsistent-core",
        }
    }
}

/// How an atomic expression classifies after probing its negation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomClass {
    Valid,
    Unsatisfiable,
    Contingent,
}

impl AtomClass {
    pub fn name(&self) -> &'static str {
        match self {
            AtomClass::Valid => "valid",
            AtomClass::Unsatisfiable => "unsatisfiable",
            AtomClass::Contingent => "contingent",
        }
    }
}

/// Annotation on a node: a vacuity warning, an atomic classification, or a
/// note that analysis stopped. Guiding questions are carried separately so
/// they never displace a warning.
#[derive(Debug, Clone, PartialEq)]
pub enum Annotation {
    Warning(WarningKind),
    Classified(AtomClass),
    Unknown(String),
}

/// A query verdict; `Unknown` means the search budget ran out, which is never
/// conflated with `Unsat`.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Sat(Box<Binding>),
    Unsat,
    Unknown,
}

impl Verdict {
    pub fn is_sat(&self) -> bool {
        matches!(self, Verdict::Sat(_))
    }

    pub fn is_unsat(&self) -> bool {
        matches!(self, Verdict::Unsat)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Sat(_) => "satisfiable",
            Verdict::Unsat => "unsatisfiable",
            Verdict::Unknown => "unknown",
        }
    }

    pub fn model(&self) -> Option<&Binding> {
        match self {
            Verdict::Sat(b) => Some(b),
            _ => None,
        }
    }
}

/// One node of a diagnosis tree. A node with an empty `rendered` string is a
/// pure warning leaf echoing its parent's query.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisNode {
    pub pattern: Option<PatternKind>,
    /// The query rendered in Loy-level syntax.
    pub rendered: String,
    pub formula: RelFormula,
    pub type_env: TypeEnv,
    pub verdict: Verdict,
    /// Question contextualizing this node within its parent's branch.
    pub question: Option<String>,
    pub annotation: Option<Annotation>,
    pub children: Vec<DiagnosisNode>,
}

impl DiagnosisNode {
    pub fn warning(&self) -> Option<&WarningKind> {
        match &self.annotation {
            Some(Annotation::Warning(w)) => Some(w),
            _ => None,
        }
    }

    /// Depth of the tree (a leaf has depth 1).
    pub fn depth(&self) -> usize {
        1 + self.children.iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a DiagnosisNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }

    /// All warnings anywhere in the tree.
    pub fn warnings(&self) -> Vec<&WarningKind> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let Some(w) = n.warning() {
                out.push(w);
            }
        });
        out
    }
}

/// Knobs for a diagnosis run.
#[derive(Debug, Clone)]
pub struct DiagnoseConfig {
    pub solve: SolveOptions,
    /// Cap on conjunction sub-range queries per node, explored shortest
    /// ranges first.
    pub expansion_limit: usize,
    /// Recursion depth cap; `None` derives it from the formula height.
    pub depth_cap: Option<usize>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            solve: SolveOptions::default(),
            expansion_limit: 32,
            depth_cap: None,
        }
    }
}

/// The derived depth cap for a formula: each connective level spends at most
/// two nodes on a chain (the pattern root plus one probe).
pub fn depth_bound(formula: &RelFormula) -> usize {
    2 * formula.height() + 2
}

/// Pattern application engine over one problem and scope. Identical
/// (query, environment) pairs are solved once and memoized; the tree still
/// records each occurrence. Evaluation is sequential, so the memo table
/// needs no synchronization.
pub struct Diagnoser<'a> {
    problem: &'a RelProblem,
    scope: &'a Scope,
    config: DiagnoseConfig,
    overrides: Vec<(RelFormula, String)>,
    memo: HashMap<(RelFormula, TypeEnv), Verdict>,
    depth_cap: usize,
}

impl<'a> Diagnoser<'a> {
    pub fn new(problem: &'a RelProblem, scope: &'a Scope, config: DiagnoseConfig) -> Self {
        Diagnoser {
            problem,
            scope,
            config,
            overrides: Vec::new(),
            memo: HashMap::new(),
            depth_cap: 0,
        }
    }

    /// Display a formula under a fixed label (used for P/Q/F and invariant
    /// names in traces).
    pub fn add_display_override(&mut self, formula: RelFormula, label: impl Into<String>) {
        self.overrides.push((formula, label.into()));
    }

    /// Render a formula in Loy-level syntax, honoring display overrides at
    /// every level.
    pub fn render(&self, f: &RelFormula) -> String {
        render_with_overrides(f, &self.overrides, 0)
    }

    /// Apply the pattern for the root connective of `f` under environment
    /// `env`, producing the full diagnosis tree.
    pub fn apply_pattern(
        &mut self,
        f: &RelFormula,
        env: &TypeEnv,
    ) -> Result<DiagnosisNode, SolveError> {
        self.depth_cap = self.config.depth_cap.unwrap_or_else(|| depth_bound(f));
        self.apply(f, env, 0)
    }

    /// Consistency of the core constraints, checked against the always-true
    /// formula. On an inconsistent core, each invariant is analyzed alone
    /// against the declarations and in conjunction with each other invariant.
    pub fn check_core_first(&mut self) -> Result<DiagnosisNode, SolveError> {
        let top = RelFormula::top();
        let env = TypeEnv::new();
        let verdict = self.sat(&top, &env)?;
        let mut node = DiagnosisNode {
            pattern: None,
            rendered: "true".into(),
            formula: top.clone(),
            type_env: env.clone(),
            verdict: verdict.clone(),
            question: None,
            annotation: None,
            children: Vec::new(),
        };
        if !verdict.is_unsat() {
            return Ok(node);
        }

        // Warning leaf, then localization against the declarations alone.
        node.children.push(DiagnosisNode {
            pattern: None,
            rendered: String::new(),
            formula: top.clone(),
            type_env: env.clone(),
            verdict: Verdict::Unsat,
            question: None,
            annotation: Some(Annotation::Warning(WarningKind::InconsistentCore)),
            children: Vec::new(),
        });

        let invariants: Vec<(String, RelFormula)> = self
            .problem
            .constraints
            .iter()
            .filter(|c| c.group == ConstraintGroup::Invariant)
            .enumerate()
            .map(|(k, c)| {
                let label = c.label.clone().unwrap_or_else(|| format!("invariant#{k}"));
                (label, c.formula.clone())
            })
            .collect();
        let decls = self.problem.with_invariants(|_| false);
        let mut sub = Diagnoser::new(&decls, self.scope, self.config.clone());
        for (label, formula) in &invariants {
            sub.add_display_override(formula.clone(), label.clone());
        }
        for (label, formula) in &invariants {
            let mut child = sub.apply_pattern(formula, &env)?;
            child.question = Some(format!(
                "Is {label} consistent with the declarations?"
            ));
            node.children.push(child);
        }
        for i in 0..invariants.len() {
            for j in i + 1..invariants.len() {
                let pair = RelFormula::And(vec![invariants[i].1.clone(), invariants[j].1.clone()]);
                let verdict = sub.sat(&pair, &env)?;
                node.children.push(DiagnosisNode {
                    pattern: None,
                    rendered: sub.render(&pair),
                    formula: pair,
                    type_env: env.clone(),
                    verdict,
                    question: Some(format!(
                        "Are {} and {} consistent together?",
                        invariants[i].0, invariants[j].0
                    )),
                    annotation: None,
                    children: Vec::new(),
                });
            }
        }
        Ok(node)
    }

    fn sat(&mut self, f: &RelFormula, env: &TypeEnv) -> Result<Verdict, SolveError> {
        let key = (f.clone(), env.clone());
        if let Some(v) = self.memo.get(&key) {
            return Ok(v.clone());
        }
        // Outer existentials are hoisted into the environment: its variables
        // are existentially solved anyway, and the model then carries
        // witnesses for them (the assignment shown on satisfiable queries).
        let mut formula = f;
        let mut solve_env = env.clone();
        while let RelFormula::Exists { var, domain, body } = formula {
            if solve_env.contains(var) {
                break;
            }
            solve_env.push(var.clone(), domain.clone());
            formula = body;
        }
        let verdict = match solve(self.problem, formula, &solve_env, self.scope, &self.config.solve)
        {
            Ok(SatResult::Sat(b)) => Verdict::Sat(Box::new(b)),
            Ok(SatResult::Unsat) => Verdict::Unsat,
            Err(SolveError::BudgetExceeded { .. }) => Verdict::Unknown,
            Err(e) => return Err(e),
        };
        self.memo.insert(key, verdict.clone());
        Ok(verdict)
    }

    /// A plain probe node: one solve, no recursion.
    fn probe(&mut self, f: RelFormula, env: &TypeEnv) -> Result<DiagnosisNode, SolveError> {
        let verdict = self.sat(&f, env)?;
        Ok(DiagnosisNode {
            pattern: None,
            rendered: self.render(&f),
            formula: f,
            type_env: env.clone(),
            verdict,
            question: None,
            annotation: None,
            children: Vec::new(),
        })
    }

    fn node(
        &mut self,
        pattern: PatternKind,
        f: &RelFormula,
        env: &TypeEnv,
    ) -> Result<DiagnosisNode, SolveError> {
        let verdict = self.sat(f, env)?;
        Ok(DiagnosisNode {
            pattern: Some(pattern),
            rendered: self.render(f),
            formula: f.clone(),
            type_env: env.clone(),
            verdict,
            question: None,
            annotation: None,
            children: Vec::new(),
        })
    }

    fn apply(
        &mut self,
        f: &RelFormula,
        env: &TypeEnv,
        depth: usize,
    ) -> Result<DiagnosisNode, SolveError> {
        if depth >= self.depth_cap {
            let verdict = self.sat(f, env)?;
            return Ok(DiagnosisNode {
                pattern: None,
                rendered: self.render(f),
                formula: f.clone(),
                type_env: env.clone(),
                verdict,
                question: None,
                annotation: Some(Annotation::Unknown("depth cap reached".into())),
                children: Vec::new(),
            });
        }
        match f {
            RelFormula::Not(inner) => self.pattern_negation(f, inner, env, depth),
            RelFormula::And(parts) if parts.len() == 1 => self.apply(&parts[0], env, depth),
            RelFormula::Or(parts) if parts.len() == 1 => self.apply(&parts[0], env, depth),
            RelFormula::And(parts) => self.pattern_conjunction(f, parts, env, depth),
            RelFormula::Or(parts) => self.pattern_disjunction(f, parts, env, depth),
            RelFormula::Implies(a, b) => self.pattern_implication(f, a, b, env, depth),
            RelFormula::ForAll { var, domain, body } => {
                self.pattern_universal(f, var, domain, body, env, depth)
            }
            RelFormula::Exists { var, domain, body } => {
                self.pattern_existential(f, var, domain, body, env, depth)
            }
            _ => self.pattern_atomic(f, env),
        }
    }

    /// Base case: probe the negation to classify the atom as valid,
    /// unsatisfiable, or contingent.
    fn pattern_atomic(
        &mut self,
        f: &RelFormula,
        env: &TypeEnv,
    ) -> Result<DiagnosisNode, SolveError> {
        let mut node = self.node(PatternKind::Atomic, f, env)?;
        let negated = self.probe(f.clone().negate(), env)?;
        let class = match (&node.verdict, &negated.verdict) {
            (Verdict::Unknown, _) | (_, Verdict::Unknown) => None,
            (Verdict::Unsat, _) => Some(AtomClass::Unsatisfiable),
            (_, Verdict::Unsat) => Some(AtomClass::Valid),
            _ => Some(AtomClass::Contingent),
        };
        node.annotation = class.map(Annotation::Classified);
        node.children.push(negated);
        Ok(node)
    }

    /// Pattern 1: querying the validity of A through the satisfiability of
    /// its negation.
    fn pattern_negation(
        &mut self,
        f: &RelFormula,
        inner: &RelFormula,
        env: &TypeEnv,
        depth: usize,
    ) -> Result<DiagnosisNode, SolveError> {
        let mut node = self.node(PatternKind::Negation, f, env)?;
        let mut child = self.apply(inner, env, depth + 1)?;
        if node.verdict.is_unsat() {
            child.question = Some(format!("Why is {} valid?", self.render(inner)));
        }
        node.children.push(child);
        Ok(node)
    }

    /// Pattern 2: decompose a conjunction to find vacuously satisfiable
    /// conjuncts, or localize which contiguous sub-conjunctions are
    /// inconsistent.
    fn pattern_conjunction(
        &mut self,
        f: &RelFormula,
        parts: &[RelFormula],
        env: &TypeEnv,
        depth: usize,
    ) -> Result<DiagnosisNode, SolveError> {
        let mut node = self.node(PatternKind::Conjunction, f, env)?;
        if node.verdict.is_unsat() {
            let question = format!("Why is {} unsatisfiable?", self.render(f));
            let n = parts.len();
            let mut ranges: Vec<(usize, usize)> = Vec::new();
            for len in 1..n {
                for i in 0..=(n - len) {
                    ranges.push((i, i + len - 1));
                }
            }
            ranges.truncate(self.config.expansion_limit);
            for (i, j) in ranges {
                let sub = RelFormula::conj(parts[i..=j].to_vec());
                let mut child = self.apply(&sub, env, depth + 1)?;
                child.question = Some(question.clone());
                node.children.push(child);
            }
        } else {
            for part in parts {
                let question = format!(
                    "Is {} vacuously satisfiable?",
                    self.render(part)
                );
                let mut child = self.apply(part, env, depth + 1)?;
                child.question = Some(question);
                node.children.push(child);
            }
        }
        Ok(node)
    }

    /// Pattern 3: decompose a disjunction; on unsat, every disjunct is
    /// investigated.
    fn pattern_disjunction(
        &mut self,
        f: &RelFormula,
        parts: &[RelFormula],
        env: &TypeEnv,
        depth: usize,
    ) -> Result<DiagnosisNode, SolveError> {
        let mut node = self.node(PatternKind::Disjunction, f, env)?;
        let unsat = node.verdict.is_unsat();
        for part in parts {
            let question = if unsat {
                format!("Why is {} unsatisfiable?", self.render(f))
            } else {
                format!("Is {} vacuously satisfiable?", self.render(part))
            };
            let mut child = self.apply(part, env, depth + 1)?;
            child.question = Some(question);
            node.children.push(child);
        }
        Ok(node)
    }

    /// Pattern 4: an implication satisfied only because of an unsatisfiable
    /// antecedent or a valid consequent is vacuous.
    fn pattern_implication(
        &mut self,
        f: &RelFormula,
        a: &RelFormula,
        b: &RelFormula,
        env: &TypeEnv,
        depth: usize,
    ) -> Result<DiagnosisNode, SolveError> {
        let mut node = self.node(PatternKind::Implication, f, env)?;
        if node.verdict.is_unsat() {
            // A must be valid and B unsatisfiable.
            let mut left = self.apply(a, env, depth + 1)?;
            left.question = Some(format!("Why is {} valid?", self.render(a)));
            let mut right = self.apply(b, env, depth + 1)?;
            right.question = Some(format!("Why is {} unsatisfiable?", self.render(b)));
            node.children.push(left);
            node.children.push(right);
            return Ok(node);
        }
        let mut probe_a = self.probe(a.clone(), env)?;
        if probe_a.verdict.is_unsat() {
            probe_a.annotation = Some(Annotation::Warning(WarningKind::UnsatAntecedent));
            node.children.push(probe_a);
            return Ok(node);
        }
        node.children.push(probe_a);
        let mut probe_nb = self.probe(b.clone().negate(), env)?;
        if probe_nb.verdict.is_unsat() {
            probe_nb.annotation = Some(Annotation::Warning(WarningKind::ValidConsequent));
            node.children.push(probe_nb);
            return Ok(node);
        }
        node.children.push(probe_nb);
        node.children.push(self.apply(a, env, depth + 1)?);
        node.children.push(self.apply(b, env, depth + 1)?);
        Ok(node)
    }

    /// The emptiness check `X != {}` drawn in the quantifier patterns:
    /// satisfiability of `some X` against the core with an empty environment.
    fn domain_check(&mut self, domain: &str) -> Result<DiagnosisNode, SolveError> {
        let f = RelFormula::NonEmpty(RelExpr::rel(domain));
        let verdict = self.sat(&f, &TypeEnv::new())?;
        Ok(DiagnosisNode {
            pattern: None,
            rendered: format!("{domain} != {{}}"),
            formula: f,
            type_env: TypeEnv::new(),
            verdict,
            question: None,
            annotation: None,
            children: Vec::new(),
        })
    }

    /// Pattern 5: a universal formula may be vacuously satisfiable because
    /// its domain is empty.
    fn pattern_universal(
        &mut self,
        f: &RelFormula,
        var: &str,
        domain: &str,
        body: &RelFormula,
        env: &TypeEnv,
        depth: usize,
    ) -> Result<DiagnosisNode, SolveError> {
        let mut node = self.node(PatternKind::Universal, f, env)?;
        let inner_env = env.clone().with(var, domain);
        if node.verdict.is_unsat() {
            // Acquire a model containing a counterexample, then investigate
            // the body for an arbitrary binding of the variable.
            let probe = self.probe(body.clone().negate(), &inner_env)?;
            node.children.push(probe);
            let mut child = self.apply(body, &inner_env, depth + 1)?;
            child.question = Some(format!("Is {} satisfiable?", self.render(body)));
            node.children.push(child);
            return Ok(node);
        }
        let mut check = self.domain_check(domain)?;
        if check.verdict.is_unsat() {
            check.annotation = Some(Annotation::Warning(WarningKind::EmptyDomainUniversal {
                domain: domain.to_string(),
            }));
            node.children.push(check);
            return Ok(node);
        }
        node.children.push(check);
        let mut child = self.apply(body, &inner_env, depth + 1)?;
        child.question = Some(format!("Is {} vacuously satisfiable?", self.render(body)));
        node.children.push(child);
        Ok(node)
    }

    /// Pattern 6: an existential formula may be vacuously unsatisfiable
    /// because its domain is empty.
    fn pattern_existential(
        &mut self,
        f: &RelFormula,
        var: &str,
        domain: &str,
        body: &RelFormula,
        env: &TypeEnv,
        depth: usize,
    ) -> Result<DiagnosisNode, SolveError> {
        let mut node = self.node(PatternKind::Existential, f, env)?;
        let inner_env = env.clone().with(var, domain);
        if node.verdict.is_unsat() {
            let mut check = self.domain_check(domain)?;
            if check.verdict.is_unsat() {
                check.annotation =
                    Some(Annotation::Warning(WarningKind::EmptyDomainExistential {
                        domain: domain.to_string(),
                    }));
                node.children.push(check);
                return Ok(node);
            }
            node.children.push(check);
            let mut child = self.apply(body, &inner_env, depth + 1)?;
            child.question = Some(format!("Why is {} unsatisfiable?", self.render(body)));
            node.children.push(child);
            return Ok(node);
        }
        let mut child = self.apply(body, &inner_env, depth + 1)?;
        child.question = Some(format!("Is {} vacuously satisfiable?", self.render(body)));
        node.children.push(child);
        Ok(node)
    }
}

/// Diagnose the core constraints of an encoded problem.
pub fn diagnose_core(
    problem: &RelProblem,
    scope: &Scope,
    config: DiagnoseConfig,
) -> Result<DiagnosisNode, SolveError> {
    Diagnoser::new(problem, scope, config).check_core_first()
}

/// Diagnose a closed relational formula against the core constraints. The
/// core is checked first; if it is inconsistent, its diagnosis is returned
/// instead of a misleading formula verdict.
pub fn diagnose_formula(
    problem: &RelProblem,
    formula: &RelFormula,
    env: &TypeEnv,
    scope: &Scope,
    config: DiagnoseConfig,
) -> Result<DiagnosisNode, SolveError> {
    let mut diagnoser = Diagnoser::new(problem, scope, config);
    let core = diagnoser.check_core_first()?;
    if core.verdict.is_unsat() {
        return Ok(core);
    }
    diagnoser.apply_pattern(formula, env)
}

/// Diagnose one invariant against the rest of the specification: the chosen
/// invariant is removed from the core so its own consistency is the question,
/// mirroring the per-invariant predicate paragraphs. `index` counts the
/// class's declared invariants from zero.
pub fn diagnose_invariant(
    encoding: &Encoding,
    class: &str,
    index: usize,
    scope: &Scope,
    config: DiagnoseConfig,
) -> Result<DiagnosisNode, SolveError> {
    let inv = encoding
        .invariants
        .iter()
        .find(|i| i.class == class && i.index == index)
        .ok_or_else(|| SolveError::UnknownPredicate(format!("{class}#{}", index + 1)))?;
    let reduced = encoding
        .problem
        .with_invariants(|c| c.label.as_deref() != Some(inv.label.as_str()));
    let mut diagnoser = Diagnoser::new(&reduced, scope, config);
    for other in &encoding.invariants {
        if other.label != inv.label {
            diagnoser.add_display_override(other.formula.clone(), other.label.clone());
        }
    }
    let core = diagnoser.check_core_first()?;
    if core.verdict.is_unsat() {
        return Ok(core);
    }
    diagnoser.apply_pattern(&inv.formula, &TypeEnv::new())
}

/// The label legend used when method queries are displayed as `P and Q and F`.
pub fn method_legend(encoding: &Encoding, class: &str, method: &str) -> Vec<(String, String)> {
    let resolved = encoding.resolved();
    let Some(cls) = resolved.class(class) else {
        return Vec::new();
    };
    let Some(m) = cls.method(method) else {
        return Vec::new();
    };
    let pretty = |fs: &[crate::ast::Formula]| -> String {
        if fs.is_empty() {
            "true".to_string()
        } else {
            fs.iter()
                .map(crate::pretty::print_formula)
                .collect::<Vec<_>>()
                .join(" and ")
        }
    };
    let modifies: Vec<String> = m
        .spec
        .modifies
        .iter()
        .map(|p| {
            p.segments
                .iter()
                .map(|s| s.name.as_str())
                .collect::<Vec<_>>()
                .join(".")
        })
        .collect();
    vec![
        ("P".to_string(), pretty(&m.spec.requires)),
        ("Q".to_string(), pretty(&m.spec.ensures)),
        (
            "F".to_string(),
            if modifies.is_empty() {
                "frame()".to_string()
            } else {
                format!("frame({})", modifies.join(" "))
            },
        ),
    ]
}

/// Diagnose the satisfiability of a method specification: the existential
/// closure of P, Q and F over the receiver and the declared parameters. The
/// core constraints are checked first; an inconsistent core is diagnosed
/// instead.
pub fn diagnose_method(
    encoding: &Encoding,
    class: &str,
    method: &str,
    scope: &Scope,
    config: DiagnoseConfig,
) -> Result<DiagnosisNode, SolveError> {
    let mut diagnoser = Diagnoser::new(&encoding.problem, scope, config);
    let core = diagnoser.check_core_first()?;
    if core.verdict.is_unsat() {
        return Ok(core);
    }

    let m = encoding
        .method(class, method)
        .ok_or_else(|| SolveError::UnknownPredicate(format!("{class}.{method}")))?;

    // The receiver variable: the class initial, freshened against parameters
    // and every variable bound inside the method formulas.
    let taken: Vec<String> = m
        .params
        .iter()
        .map(|(p, _)| p.clone())
        .chain(bound_vars(&m.pre))
        .chain(bound_vars(&m.post))
        .chain(bound_vars(&m.frame))
        .collect();
    let mut recv = class
        .chars()
        .next()
        .map(|c| c.to_lowercase().to_string())
        .unwrap_or_else(|| "e".to_string());
    while taken.contains(&recv) {
        recv.push('_');
    }

    // The frame extended with the receiver binding `e = s0.c[i]`, so the
    // attached model's receiver assignment is meaningful.
    let bind = RelFormula::SetEqual(
        RelExpr::var(recv.clone()),
        encoding.receiver_expr(class, VAR_S0),
    );
    let frame = match &m.frame {
        RelFormula::And(parts) => {
            let mut parts = parts.clone();
            parts.push(bind);
            RelFormula::And(parts)
        }
        other => RelFormula::And(vec![other.clone(), bind]),
    };

    let body = RelFormula::And(vec![m.pre.clone(), m.post.clone(), frame.clone()]);
    let mut closure = body;
    for (p, c) in m.params.iter().rev() {
        closure = RelFormula::exists(p.clone(), c.clone(), closure);
    }
    closure = RelFormula::exists(recv, class, closure);

    diagnoser.add_display_override(m.pre.clone(), "P");
    diagnoser.add_display_override(m.post.clone(), "Q");
    diagnoser.add_display_override(frame, "F");

    let env = TypeEnv::new()
        .with(VAR_ID, crate::encoder::DOM_ID)
        .with(VAR_S0, crate::encoder::DOM_STATE)
        .with(VAR_S1, crate::encoder::DOM_STATE);
    diagnoser.apply_pattern(&closure, &env)
}

fn bound_vars(f: &RelFormula) -> Vec<String> {
    let mut out = Vec::new();
    fn walk(f: &RelFormula, out: &mut Vec<String>) {
        match f {
            RelFormula::And(parts) | RelFormula::Or(parts) => {
                parts.iter().for_each(|p| walk(p, out))
            }
            RelFormula::Implies(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            RelFormula::Not(inner) => walk(inner, out),
            RelFormula::ForAll { var, body, .. } | RelFormula::Exists { var, body, .. } => {
                out.push(var.clone());
                walk(body, out);
            }
            _ => {}
        }
    }
    walk(f, &mut out);
    out
}

/// Render honoring overrides: an exact structural match displays as its
/// label at any nesting level.
fn render_with_overrides(f: &RelFormula, overrides: &[(RelFormula, String)], min: u8) -> String {
    if let Some((_, label)) = overrides.iter().find(|(o, _)| o == f) {
        return label.clone();
    }
    let (rendered, level): (String, u8) = match f {
        RelFormula::Implies(a, b) => (
            format!(
                "{} implies {}",
                render_with_overrides(a, overrides, 2),
                render_with_overrides(b, overrides, 1)
            ),
            1,
        ),
        RelFormula::Or(parts) => (
            parts
                .iter()
                .map(|p| render_with_overrides(p, overrides, 3))
                .collect::<Vec<_>>()
                .join(" or "),
            2,
        ),
        RelFormula::And(parts) => (
            parts
                .iter()
                .map(|p| render_with_overrides(p, overrides, 4))
                .collect::<Vec<_>>()
                .join(" and "),
            3,
        ),
        RelFormula::Not(inner) => (
            format!("not {}", render_with_overrides(inner, overrides, 4)),
            4,
        ),
        RelFormula::ForAll { var, domain, body } => (
            format!(
                "all {} : {} | {}",
                crate::relational::display_var(var),
                domain,
                render_with_overrides(body, overrides, 1)
            ),
            1,
        ),
        RelFormula::Exists { var, domain, body } => (
            format!(
                "exists {} : {} | {}",
                crate::relational::display_var(var),
                domain,
                render_with_overrides(body, overrides, 1)
            ),
            1,
        ),
        atom => (atom.to_string(), 4),
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
    use crate::relational::Mult;

    fn config() -> DiagnoseConfig {
        DiagnoseConfig::default()
    }

    /// Problem with an unconstrained domain D and relations making
    /// NonEmpty(p)/NonEmpty(q) contingent atoms.
    fn playground() -> RelProblem {
        let mut p = RelProblem::new();
        p.add_domain("D");
        p.add_relation("p", &["D", "D"], &[Mult::Any, Mult::Any]);
        p.add_relation("q", &["D", "D"], &[Mult::Any, Mult::Any]);
        p
    }

    fn atom(rel: &str) -> RelFormula {
        RelFormula::NonEmpty(RelExpr::rel(rel))
    }

    #[test]
    fn atomic_classification() {
        let p = playground();
        let scope = Scope::uniform(2);
        let mut d = Diagnoser::new(&p, &scope, config());
        // Contingent: both branches satisfiable.
        let node = d.apply_pattern(&atom("p"), &TypeEnv::new()).unwrap();
        assert_eq!(node.annotation, Some(Annotation::Classified(AtomClass::Contingent)));
        assert!(node.verdict.is_sat());
        assert!(node.children[0].verdict.is_sat());
        // Top is valid.
        let node = d.apply_pattern(&RelFormula::top(), &TypeEnv::new()).unwrap();
        assert_eq!(node.annotation, Some(Annotation::Classified(AtomClass::Valid)));
    }

    #[test]
    fn implication_with_unsat_antecedent_warns() {
        let mut p = playground();
        p.add_constraint(RelFormula::Empty(RelExpr::rel("p")));
        let scope = Scope::uniform(2);
        let mut d = Diagnoser::new(&p, &scope, config());
        let f = atom("p").implies(atom("q"));
        let node = d.apply_pattern(&f, &TypeEnv::new()).unwrap();
        assert!(node.verdict.is_sat());
        assert_eq!(node.children.len(), 1);
        assert_eq!(
            node.children[0].annotation,
            Some(Annotation::Warning(WarningKind::UnsatAntecedent))
        );
    }

    #[test]
    fn implication_with_valid_consequent_warns() {
        let p = playground();
        let scope = Scope::uniform(2);
        let mut d = Diagnoser::new(&p, &scope, config());
        let f = atom("p").implies(RelFormula::top());
        let node = d.apply_pattern(&f, &TypeEnv::new()).unwrap();
        assert!(node.verdict.is_sat());
        assert_eq!(node.children.len(), 2);
        assert_eq!(
            node.children[1].annotation,
            Some(Annotation::Warning(WarningKind::ValidConsequent))
        );
    }

    #[test]
    fn conjunction_localizes_contradiction() {
        let p = playground();
        let scope = Scope::uniform(1);
        let mut d = Diagnoser::new(&p, &scope, config());
        let contradiction = RelFormula::And(vec![atom("p"), atom("p").negate()]);
        let node = d.apply_pattern(&contradiction, &TypeEnv::new()).unwrap();
        assert!(node.verdict.is_unsat());
        // Sub-ranges: {p}, {not p} — each satisfiable alone.
        assert_eq!(node.children.len(), 2);
        assert!(node.children.iter().all(|c| c.verdict.is_sat()));
    }

    #[test]
    fn existential_over_empty_domain_warns() {
        let mut p = playground();
        p.add_constraint(RelFormula::Empty(RelExpr::rel("D")));
        let scope = Scope::uniform(2);
        let mut d = Diagnoser::new(&p, &scope, config());
        let f = RelFormula::exists("x", "D", RelFormula::top());
        let node = d.apply_pattern(&f, &TypeEnv::new()).unwrap();
        assert!(node.verdict.is_unsat());
        let check = &node.children[0];
        assert_eq!(check.rendered, "D != {}");
        assert_eq!(
            check.annotation,
            Some(Annotation::Warning(WarningKind::EmptyDomainExistential {
                domain: "D".into()
            }))
        );
    }

    #[test]
    fn universal_over_empty_domain_warns() {
        let mut p = playground();
        p.add_constraint(RelFormula::Empty(RelExpr::rel("D")));
        let scope = Scope::uniform(2);
        let mut d = Diagnoser::new(&p, &scope, config());
        let f = RelFormula::forall("x", "D", RelFormula::top().negate());
        let node = d.apply_pattern(&f, &TypeEnv::new()).unwrap();
        assert!(node.verdict.is_sat());
        assert_eq!(
            node.children[0].annotation,
            Some(Annotation::Warning(WarningKind::EmptyDomainUniversal {
                domain: "D".into()
            }))
        );
    }

    #[test]
    fn consistent_core_is_a_sat_leaf() {
        let p = playground();
        let scope = Scope::uniform(2);
        let node = diagnose_core(&p, &scope, config()).unwrap();
        assert!(node.verdict.is_sat());
        assert!(node.children.is_empty());
    }

    #[test]
    fn depth_cap_yields_unknown_leaf() {
        let p = playground();
        let scope = Scope::uniform(1);
        let mut cfg = config();
        cfg.depth_cap = Some(1);
        let mut d = Diagnoser::new(&p, &scope, cfg);
        let f = RelFormula::And(vec![atom("p"), atom("q")]);
        let node = d.apply_pattern(&f, &TypeEnv::new()).unwrap();
        // The root still gets applied; its children hit the cap.
        let capped = node
            .children
            .iter()
            .any(|c| matches!(c.annotation, Some(Annotation::Unknown(_))));
        assert!(capped);
    }
}
