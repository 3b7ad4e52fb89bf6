//! Abstract syntax for Loy specifications.
//!
//! A specification is a sequence of class specifications. Classes declare
//! fields, depends clauses, invariants and method specifications; formulas
//! are first-order with `and`, `or`, `implies`, `not`, `all`, `exists` and
//! the atoms `no e`, `some e`, `e1 = e2`.
//!
//! Spans are carried for diagnostics but are skipped during serialization so
//! serialized ASTs compare structurally.

use crate::span::Span;
use serde::Serialize;

/// An identifier with its source position.
#[derive(Debug, Clone, Serialize)]
pub struct Ident {
    pub name: String,
    #[serde(skip)]
    pub span: Span,
}

impl Ident {
    pub fn new(name: impl Into<String>, span: Span) -> Self {
        Ident { name: name.into(), span }
    }
}

impl PartialEq for Ident {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}
impl Eq for Ident {}

/// A whole specification: one or more classes, possibly from several files.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoySpec {
    pub classes: Vec<ClassSpec>,
}

/// One `class` block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSpec {
    pub name: Ident,
    pub superclass: Option<Ident>,
    pub fields: Vec<FieldDecl>,
    pub depends: Vec<DependsClause>,
    pub invariants: Vec<Formula>,
    pub methods: Vec<MethodSpec>,
}

/// Field multiplicity: `f : T` holds at most one value, `f : set T` any subset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Multiplicity {
    Scalar,
    Set,
}

/// `name : Class` or `name : set Class`; also the shape of method parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldDecl {
    pub name: Ident,
    pub target: Ident,
    pub multiplicity: Multiplicity,
}

/// `depends dependent <- source1 source2 ...`
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependsClause {
    pub dependent: Ident,
    pub sources: Vec<Ident>,
}

/// A method specification with contract clauses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSpec {
    /// Optional return class. Parsed and retained; no analysis consumes it.
    pub return_class: Option<Ident>,
    pub name: Ident,
    pub params: Vec<FieldDecl>,
    pub requires: Vec<Formula>,
    pub ensures: Vec<Formula>,
    pub modifies: Vec<FieldPath>,
}

/// A dotted field path rooted at the receiver, as written in `modifies`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldPath {
    pub segments: Vec<Ident>,
}

/// First-order formulas. `And`/`Or` are n-ary (flattened by the parser).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Formula {
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Not(Box<Formula>),
    All {
        var: Ident,
        class: Ident,
        body: Box<Formula>,
    },
    Exists {
        var: Ident,
        class: Ident,
        body: Box<Formula>,
    },
    No(Expr),
    Some(Expr),
    Equal(Expr, Expr),
}

/// Expression chains. A bare name may be a quantified variable, a parameter,
/// a receiver field or a class reference; resolution decides which.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Expr {
    Name { ident: Ident, primed: bool },
    Field { base: Box<Expr>, field: Ident, primed: bool },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Name { ident, .. } => ident.span,
            Expr::Field { field, .. } => field.span,
        }
    }

    /// The segments of the chain, innermost first, with their primed flags.
    pub fn segments(&self) -> Vec<(&Ident, bool)> {
        match self {
            Expr::Name { ident, primed } => vec![(ident, *primed)],
            Expr::Field { base, field, primed } => {
                let mut v = base.segments();
                v.push((field, *primed));
                v
            }
        }
    }

    pub fn any_primed(&self) -> bool {
        self.segments().iter().any(|(_, p)| *p)
    }
}

impl Formula {
    /// Walk all expressions in the formula.
    pub fn exprs(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        self.collect_exprs(&mut out);
        out
    }

    fn collect_exprs<'a>(&'a self, out: &mut Vec<&'a Expr>) {
        match self {
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.collect_exprs(out)),
            Formula::Implies(a, b) => {
                a.collect_exprs(out);
                b.collect_exprs(out);
            }
            Formula::Not(f) => f.collect_exprs(out),
            Formula::All { body, .. } | Formula::Exists { body, .. } => body.collect_exprs(out),
            Formula::No(e) | Formula::Some(e) => out.push(e),
            Formula::Equal(a, b) => {
                out.push(a);
                out.push(b);
            }
        }
    }

    /// True if any expression in the formula carries a prime.
    pub fn any_primed(&self) -> bool {
        self.exprs().iter().any(|e| e.any_primed())
    }

    /// All quantified variable names introduced anywhere inside the formula.
    pub fn quantified_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_quantified(&mut out);
        out
    }

    fn collect_quantified<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Formula::And(fs) | Formula::Or(fs) => {
                fs.iter().for_each(|f| f.collect_quantified(out))
            }
            Formula::Implies(a, b) => {
                a.collect_quantified(out);
                b.collect_quantified(out);
            }
            Formula::Not(f) => f.collect_quantified(out),
            Formula::All { var, body, .. } | Formula::Exists { var, body, .. } => {
                out.push(&var.name);
                body.collect_quantified(out);
            }
            _ => {}
        }
    }
}
