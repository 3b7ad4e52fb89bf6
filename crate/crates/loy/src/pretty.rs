//! Canonical pretty-printer for Loy specifications.
//!
//! Printing is deterministic; `parse(print(parse(s)))` yields the same AST
//! as `parse(s)` for every spec that parses.

use crate::ast::*;
use std::fmt::Write;

/// Render a whole specification as canonical Loy source.
pub fn print_spec(spec: &LoySpec) -> String {
    let mut out = String::new();
    for (i, cls) in spec.classes.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_class(&mut out, cls);
    }
    out
}

fn print_class(out: &mut String, cls: &ClassSpec) {
    match &cls.superclass {
        Some(sup) => writeln!(out, "class {} ext {} {{", cls.name.name, sup.name).unwrap(),
        None => writeln!(out, "class {} {{", cls.name.name).unwrap(),
    }
    for f in &cls.fields {
        writeln!(out, "  {}", field_decl(f)).unwrap();
    }
    for d in &cls.depends {
        let sources: Vec<&str> = d.sources.iter().map(|s| s.name.as_str()).collect();
        writeln!(out, "  depends {} <- {}", d.dependent.name, sources.join(" ")).unwrap();
    }
    for inv in &cls.invariants {
        writeln!(out, "  invariant {}", print_formula(inv)).unwrap();
    }
    for m in &cls.methods {
        out.push('\n');
        let params: Vec<String> = m.params.iter().map(field_decl).collect();
        let head = match &m.return_class {
            Some(r) => format!("{} {}", r.name, m.name.name),
            None => m.name.name.clone(),
        };
        writeln!(out, "  {} ({})", head, params.join(", ")).unwrap();
        for f in &m.requires {
            writeln!(out, "    requires {}", print_formula(f)).unwrap();
        }
        for f in &m.ensures {
            writeln!(out, "    ensures {}", print_formula(f)).unwrap();
        }
        if !m.modifies.is_empty() {
            let paths: Vec<String> = m.modifies.iter().map(path).collect();
            writeln!(out, "    modifies {}", paths.join(" ")).unwrap();
        }
    }
    out.push_str("}\n");
}

fn field_decl(f: &FieldDecl) -> String {
    match f.multiplicity {
        Multiplicity::Scalar => format!("{} : {}", f.name.name, f.target.name),
        Multiplicity::Set => format!("{} : set {}", f.name.name, f.target.name),
    }
}

fn path(p: &FieldPath) -> String {
    let segs: Vec<&str> = p.segments.iter().map(|s| s.name.as_str()).collect();
    segs.join(".")
}

/// Render a formula with minimal parentheses.
pub fn print_formula(f: &Formula) -> String {
    print_prec(f, 0)
}

// Precedence levels: implies = 1, or = 2, and = 3, unary = 4.
fn print_prec(f: &Formula, min: u8) -> String {
    let (rendered, level) = match f {
        Formula::Implies(a, b) => (
            format!("{} implies {}", print_prec(a, 2), print_prec(b, 1)),
            1,
        ),
        Formula::Or(parts) => (
            parts
                .iter()
                .map(|p| print_prec(p, 3))
                .collect::<Vec<_>>()
                .join(" or "),
            2,
        ),
        Formula::And(parts) => (
            parts
                .iter()
                .map(|p| print_prec(p, 4))
                .collect::<Vec<_>>()
                .join(" and "),
            3,
        ),
        Formula::Not(inner) => (format!("not {}", print_prec(inner, 4)), 4),
        Formula::All { var, class, body } => (
            format!("all {} : {} | {}", var.name, class.name, print_prec(body, 1)),
            1,
        ),
        Formula::Exists { var, class, body } => (
            format!(
                "exists {} : {} | {}",
                var.name,
                class.name,
                print_prec(body, 1)
            ),
            1,
        ),
        Formula::No(e) => (format!("no {}", print_expr(e)), 4),
        Formula::Some(e) => (format!("some {}", print_expr(e)), 4),
        Formula::Equal(a, b) => (format!("{} = {}", print_expr(a), print_expr(b)), 4),
    };
    if level < min {
        format!("({rendered})")
    } else {
        rendered
    }
}

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Name { ident, primed } => {
            format!("{}{}", ident.name, if *primed { "'" } else { "" })
        }
        Expr::Field { base, field, primed } => format!(
            "{}.{}{}",
            print_expr(base),
            field.name,
            if *primed { "'" } else { "" }
        ),
    }
}
