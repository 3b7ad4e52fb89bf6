//! Well-formedness checks on a resolved specification.
//!
//! Violations are collected as diagnostics rather than hard errors, one per
//! violation, each with a source location.

use crate::ast::*;
use crate::resolve::{ResolvedClass, ResolvedSpec};
use crate::span::Span;
use std::fmt;

/// A single well-formedness violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub message: String,
    pub span: Span,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)
    }
}

/// What a bare name in a formula refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NameKind {
    /// A quantified variable of the given class.
    Var(String),
    /// A method parameter of the given class.
    Param(String),
    /// A field visible on the receiver, targeting the given class.
    ReceiverField(String),
    /// A class used as a set expression.
    ClassRef(String),
}

impl NameKind {
    pub fn class(&self) -> &str {
        match self {
            NameKind::Var(c)
            | NameKind::Param(c)
            | NameKind::ReceiverField(c)
            | NameKind::ClassRef(c) => c,
        }
    }
}

/// Context for classifying names inside a formula.
pub struct FormulaContext<'a> {
    pub resolved: &'a ResolvedSpec,
    /// Receiver class, when the formula appears inside a class.
    pub class: Option<&'a ResolvedClass>,
    pub params: &'a [FieldDecl],
    /// Enclosing quantified variables, innermost last.
    pub vars: Vec<(String, String)>,
    /// Primes are legal (postconditions only).
    pub allow_primes: bool,
}

impl<'a> FormulaContext<'a> {
    pub fn classify(&self, name: &str) -> Option<NameKind> {
        if let Some((_, class)) = self.vars.iter().rev().find(|(v, _)| v == name) {
            return Some(NameKind::Var(class.clone()));
        }
        if let Some(p) = self.params.iter().find(|p| p.name.name == name) {
            return Some(NameKind::Param(p.target.name.clone()));
        }
        if let Some(cls) = self.class {
            if let Some(f) = cls.field(name) {
                return Some(NameKind::ReceiverField(f.target.clone()));
            }
        }
        if self.resolved.is_class(name) {
            return Some(NameKind::ClassRef(name.to_string()));
        }
        None
    }
}

/// Check every formula, depends clause and modifies path of the resolved
/// specification. Returns an empty list iff the specification is well-formed.
pub fn typecheck(resolved: &ResolvedSpec) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    for cls in &resolved.classes {
        check_class(resolved, cls, &mut diags);
    }
    diags
}

/// Check a standalone formula with no receiver context (inline targets).
pub fn typecheck_formula(resolved: &ResolvedSpec, formula: &Formula) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut ctx = FormulaContext {
        resolved,
        class: None,
        params: &[],
        vars: Vec::new(),
        allow_primes: false,
    };
    check_formula(&mut ctx, formula, &mut diags);
    diags
}

fn check_class(resolved: &ResolvedSpec, cls: &ResolvedClass, diags: &mut Vec<Diagnostic>) {
    let src = &cls.source;

    for f in &src.fields {
        if !resolved.is_class(&f.target.name) {
            diags.push(Diagnostic {
                message: format!("unknown class `{}` in field declaration", f.target.name),
                span: f.target.span,
            });
        }
    }

    for d in &src.depends {
        if cls.field(&d.dependent.name).is_none() {
            diags.push(Diagnostic {
                message: format!("unknown field `{}` in depends clause", d.dependent.name),
                span: d.dependent.span,
            });
        }
        for s in &d.sources {
            if cls.field(&s.name).is_none() {
                diags.push(Diagnostic {
                    message: format!("unknown field `{}` in depends clause", s.name),
                    span: s.span,
                });
            }
            if s.name == d.dependent.name {
                diags.push(Diagnostic {
                    message: format!(
                        "depends clause relates field `{}` to itself",
                        d.dependent.name
                    ),
                    span: s.span,
                });
            }
        }
    }

    for inv in &src.invariants {
        let mut ctx = FormulaContext {
            resolved,
            class: Some(cls),
            params: &[],
            vars: Vec::new(),
            allow_primes: false,
        };
        check_formula(&mut ctx, inv, diags);
    }

    for method in &src.methods {
        check_method(resolved, cls, method, diags);
    }
}

fn check_method(
    resolved: &ResolvedSpec,
    cls: &ResolvedClass,
    m: &MethodSpec,
    diags: &mut Vec<Diagnostic>,
) {
    if let Some(ret) = &m.return_class {
        if !resolved.is_class(&ret.name) {
            diags.push(Diagnostic {
                message: format!("unknown return class `{}`", ret.name),
                span: ret.span,
            });
        }
    }
    for (i, p) in m.params.iter().enumerate() {
        if !resolved.is_class(&p.target.name) {
            diags.push(Diagnostic {
                message: format!("unknown class `{}` in parameter declaration", p.target.name),
                span: p.target.span,
            });
        }
        if cls.field(&p.name.name).is_some() {
            diags.push(Diagnostic {
                message: format!(
                    "parameter `{}` collides with a visible field of `{}`",
                    p.name.name, cls.name
                ),
                span: p.name.span,
            });
        }
        if m.params[..i].iter().any(|q| q.name.name == p.name.name) {
            diags.push(Diagnostic {
                message: format!("duplicate parameter `{}`", p.name.name),
                span: p.name.span,
            });
        }
    }

    for f in &m.requires {
        let mut ctx = FormulaContext {
            resolved,
            class: Some(cls),
            params: &m.params,
            vars: Vec::new(),
            allow_primes: false,
        };
        check_formula(&mut ctx, f, diags);
    }
    for f in &m.ensures {
        let mut ctx = FormulaContext {
            resolved,
            class: Some(cls),
            params: &m.params,
            vars: Vec::new(),
            allow_primes: true,
        };
        check_formula(&mut ctx, f, diags);
    }

    for path in &m.modifies {
        let mut current = cls;
        for (i, seg) in path.segments.iter().enumerate() {
            match current.field(&seg.name) {
                Some(f) => {
                    if i + 1 < path.segments.len() {
                        match resolved.class(&f.target) {
                            Some(next) => current = next,
                            None => break, // unknown target already reported on the decl
                        }
                    }
                }
                None => {
                    diags.push(Diagnostic {
                        message: format!("unknown field `{}` in modifies clause", seg.name),
                        span: seg.span,
                    });
                    break;
                }
            }
        }
    }
}

fn check_formula(ctx: &mut FormulaContext<'_>, f: &Formula, diags: &mut Vec<Diagnostic>) {
    match f {
        Formula::And(parts) | Formula::Or(parts) => {
            for p in parts {
                check_formula(ctx, p, diags);
            }
        }
        Formula::Implies(a, b) => {
            check_formula(ctx, a, diags);
            check_formula(ctx, b, diags);
        }
        Formula::Not(inner) => check_formula(ctx, inner, diags),
        Formula::All { var, class, body } | Formula::Exists { var, class, body } => {
            if !ctx.resolved.is_class(&class.name) {
                diags.push(Diagnostic {
                    message: format!("unknown class `{}` in quantifier", class.name),
                    span: class.span,
                });
            }
            if ctx.classify(&var.name).is_some() {
                diags.push(Diagnostic {
                    message: format!(
                        "quantified variable `{}` shadows a name already in scope",
                        var.name
                    ),
                    span: var.span,
                });
            }
            ctx.vars.push((var.name.clone(), class.name.clone()));
            check_formula(ctx, body, diags);
            ctx.vars.pop();
        }
        Formula::No(e) | Formula::Some(e) => {
            check_expr(ctx, e, diags);
        }
        Formula::Equal(a, b) => {
            let ta = check_expr(ctx, a, diags);
            let tb = check_expr(ctx, b, diags);
            if let (Some(ta), Some(tb)) = (ta, tb) {
                if ctx.resolved.common_class(&ta, &tb).is_none() {
                    diags.push(Diagnostic {
                        message: format!(
                            "equality compares unrelated classes `{ta}` and `{tb}`"
                        ),
                        span: b.span(),
                    });
                }
            }
        }
    }
}

/// Type an expression chain; pushes diagnostics and returns the class of the
/// result when determinable.
fn check_expr(ctx: &FormulaContext<'_>, e: &Expr, diags: &mut Vec<Diagnostic>) -> Option<String> {
    let segments = e.segments();
    let (root, root_primed) = segments[0];

    let root_kind = match ctx.classify(&root.name) {
        Some(k) => k,
        None => {
            diags.push(Diagnostic {
                message: format!("unknown name `{}`", root.name),
                span: root.span,
            });
            return None;
        }
    };

    // Primes: only the terminal field of a chain rooted at the implicit
    // receiver, and only inside a postcondition.
    let rooted_at_receiver = matches!(root_kind, NameKind::ReceiverField(_));
    for (i, (seg, primed)) in segments.iter().enumerate() {
        if !primed {
            continue;
        }
        let terminal = i + 1 == segments.len();
        if !ctx.allow_primes {
            diags.push(Diagnostic {
                message: "prime outside postcondition".into(),
                span: seg.span,
            });
        } else if !terminal {
            diags.push(Diagnostic {
                message: format!("prime on `{}` is not on the final field of the chain", seg.name),
                span: seg.span,
            });
        } else if !rooted_at_receiver {
            diags.push(Diagnostic {
                message: format!(
                    "primed field `{}` must belong to a chain rooted at the receiver",
                    seg.name
                ),
                span: seg.span,
            });
        }
    }
    let _ = root_primed;

    // Walk the chain, field by field.
    let mut current = root_kind.class().to_string();
    for (seg, _) in &segments[1..] {
        let cls = match ctx.resolved.class(&current) {
            Some(c) => c,
            None => return None,
        };
        match cls.field(&seg.name) {
            Some(f) => current = f.target.clone(),
            None => {
                diags.push(Diagnostic {
                    message: format!("unknown field `{}` on class `{}`", seg.name, current),
                    span: seg.span,
                });
                return None;
            }
        }
    }
    Some(current)
}
