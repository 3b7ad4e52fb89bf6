//! Alloy surface-text emission.
//!
//! Prints an encoded specification as Alloy: an `Obj` root signature with
//! `fields`/`depends`, one signature per class with `lone` fields and an
//! appended fact for depends clauses, per-class field-table facts, invariant
//! predicates (`_I` suffix), `Id`/`State` signatures, and `_P`/`_Q`/`_F`
//! method predicates. Output is byte-stable for identical input: fixed
//! ordering and two-space indentation. Intended for interoperability and
//! golden-file testing; nothing consumes it internally.

use crate::ast::{Expr, Formula, MethodSpec, Multiplicity};
use crate::encoder::Encoding;
use crate::resolve::ResolvedClass;
use std::fmt::Write;

/// Emit the whole specification as Alloy text.
pub fn emit_alloy(encoding: &Encoding) -> String {
    let resolved = encoding.resolved();
    let mut out = String::new();

    out.push_str("sig Obj { fields : Seq [Obj], depends : SeqIdx -> SeqIdx }\n");

    for cls in &resolved.classes {
        out.push('\n');
        emit_class_sig(cls, &mut out);
        emit_fieldtable_fact(cls, &mut out);
    }

    let with_invariants: Vec<&ResolvedClass> = resolved
        .classes
        .iter()
        .filter(|c| !c.source.invariants.is_empty())
        .collect();
    if !with_invariants.is_empty() {
        out.push('\n');
        for cls in with_invariants {
            emit_invariant_pred(encoding, cls, &mut out);
        }
    }

    out.push('\n');
    out.push_str("sig Id { }\n");
    emit_state_sig(encoding, &mut out);

    for cls in &resolved.classes {
        for m in &cls.source.methods {
            out.push('\n');
            emit_method_preds(encoding, cls, m, &mut out);
        }
    }

    out
}

fn field_decl_text(name: &str, target: &str, mult: Multiplicity) -> String {
    match mult {
        Multiplicity::Scalar => format!("{name} : lone {target}"),
        Multiplicity::Set => format!("{name} : set {target}"),
    }
}

fn emit_class_sig(cls: &ResolvedClass, out: &mut String) {
    let parent = cls.superclass.as_deref().unwrap_or("Obj");
    let decls: Vec<String> = cls
        .source
        .fields
        .iter()
        .map(|f| field_decl_text(&f.name.name, &f.target.name, f.multiplicity))
        .collect();
    match decls.len() {
        0 => write!(out, "sig {} extends {} {{ }}", cls.name, parent).unwrap(),
        1 => write!(out, "sig {} extends {} {{ {} }}", cls.name, parent, decls[0]).unwrap(),
        _ => {
            writeln!(out, "sig {} extends {} {{", cls.name, parent).unwrap();
            for (i, d) in decls.iter().enumerate() {
                let comma = if i + 1 < decls.len() { "," } else { "" };
                writeln!(out, "  {d}{comma}").unwrap();
            }
            out.push('}');
        }
    }

    // Appended fact: depends containment per pair, cardinality for classes
    // with no subclasses and at least one pair.
    let mut lines: Vec<String> = Vec::new();
    for d in &cls.source.depends {
        let sources: Vec<&str> = d.sources.iter().map(|s| s.name.as_str()).collect();
        lines.push(format!(
            "// depends {} <- {}",
            d.dependent.name,
            sources.join(" ")
        ));
    }
    for (dep, src) in &cls.depends_pairs {
        let declared = cls
            .source
            .depends
            .iter()
            .any(|d| d.dependent.name == *dep && d.sources.iter().any(|s| s.name == *src));
        if !declared {
            lines.push(format!("// inherited depends {dep} <- {src}"));
        }
        lines.push(format!(
            "idxOf (fields, {dep}) -> idxOf (fields, {src}) in depends"
        ));
    }
    if cls.subclasses.is_empty() && !cls.depends_pairs.is_empty() {
        lines.push(format!("# depends = {}", cls.depends_pairs.len()));
    }
    if lines.is_empty() {
        out.push_str(" { }\n");
    } else {
        out.push_str(" {\n");
        for line in lines {
            writeln!(out, "  {line}").unwrap();
        }
        out.push_str("}\n");
    }
}

fn emit_fieldtable_fact(cls: &ResolvedClass, out: &mut String) {
    if cls.visible_fields.is_empty() {
        writeln!(out, "fact {}_fieldtable {{ }}", cls.name).unwrap();
        return;
    }
    let idx_bindings: Vec<String> = (0..cls.visible_fields.len())
        .map(|k| {
            if k == 0 {
                "idx0 = Ord_/Ord.first".to_string()
            } else {
                format!("idx{k} = Ord_/next (idx{})", k - 1)
            }
        })
        .collect();
    writeln!(out, "fact {}_fieldtable {{", cls.name).unwrap();
    writeln!(out, "  let {} {{", idx_bindings.join(", ")).unwrap();
    writeln!(out, "    all o : {} {{", cls.name).unwrap();
    for (k, f) in cls.visible_fields.iter().enumerate() {
        writeln!(out, "      at (o.fields, idx{k}) = o.{}", f.name).unwrap();
    }
    out.push_str("    }\n  }\n}\n");
}

fn emit_invariant_pred(encoding: &Encoding, cls: &ResolvedClass, out: &mut String) {
    let bodies: Vec<String> = cls
        .source
        .invariants
        .iter()
        .map(|inv| invariant_body(encoding, cls, inv))
        .collect();
    if bodies.len() == 1 {
        writeln!(out, "pred {}_I () {{ {} }}", cls.name, bodies[0]).unwrap();
    } else {
        writeln!(out, "pred {}_I () {{", cls.name).unwrap();
        for b in &bodies {
            writeln!(out, "  {b}").unwrap();
        }
        out.push_str("}\n");
    }
}

fn invariant_body(encoding: &Encoding, cls: &ResolvedClass, inv: &Formula) -> String {
    // Receiver-free invariants are emitted as written; the rest quantify
    // over the class's instances.
    if references_receiver(cls, inv) {
        let ctx = Ctx::Instance { class: &cls.name, var: "x" };
        format!(
            "all x : {} | {}",
            cls.name,
            formula_text(encoding, &ctx, inv, 1)
        )
    } else {
        formula_text(encoding, &Ctx::Stateless, inv, 0)
    }
}

fn emit_state_sig(encoding: &Encoding, out: &mut String) {
    let resolved = encoding.resolved();
    let decls: Vec<String> = resolved
        .classes
        .iter()
        .map(|c| {
            format!(
                "{} : Id lone -> lone {}",
                encoding.state_model.maps[&c.name], c.name
            )
        })
        .collect();
    match decls.len() {
        0 => out.push_str("sig State { }\n"),
        1 => writeln!(out, "sig State {{ {} }}", decls[0]).unwrap(),
        _ => {
            out.push_str("sig State {\n");
            for (i, d) in decls.iter().enumerate() {
                let comma = if i + 1 < decls.len() { "," } else { "" };
                writeln!(out, "  {d}{comma}").unwrap();
            }
            out.push_str("}\n");
        }
    }
}

fn emit_method_preds(encoding: &Encoding, cls: &ResolvedClass, m: &MethodSpec, out: &mut String) {
    let name = &m.name.name;
    let params: Vec<String> = m
        .params
        .iter()
        .map(|p| format!("{} : {}", p.name.name, p.target.name))
        .collect();
    let one_state = {
        let mut v = vec!["i : Id".to_string(), "s0 : State".to_string()];
        v.extend(params.clone());
        v.join(", ")
    };
    let two_states = {
        let mut v = vec!["i : Id".to_string(), "s0, s1 : State".to_string()];
        v.extend(params.clone());
        v.join(", ")
    };
    let ctx = Ctx::Method { class: &cls.name };

    writeln!(out, "pred {}_{}_P ({}) {{", cls.name, name, one_state).unwrap();
    if m.requires.is_empty() {
        out.push_str("  // no precondition\n");
    }
    for f in &m.requires {
        writeln!(out, "  {}", formula_text(encoding, &ctx, f, 0)).unwrap();
    }
    out.push_str("}\n");

    writeln!(out, "pred {}_{}_Q ({}) {{", cls.name, name, two_states).unwrap();
    if m.ensures.is_empty() {
        out.push_str("  // no postcondition\n");
    }
    for f in &m.ensures {
        writeln!(out, "  {}", formula_text(encoding, &ctx, f, 0)).unwrap();
    }
    out.push_str("}\n");

    writeln!(out, "pred {}_{}_F ({}) {{", cls.name, name, two_states).unwrap();
    emit_frame_body(encoding, cls, m, out);
    out.push_str("}\n");
}

fn emit_frame_body(encoding: &Encoding, cls: &ResolvedClass, m: &MethodSpec, out: &mut String) {
    let map = &encoding.state_model.maps[&cls.name];
    writeln!(out, "  some s0.{map}[i]").unwrap();
    writeln!(out, "  some s1.{map}[i]").unwrap();

    let roots: Vec<String> = m
        .modifies
        .iter()
        .map(|p| p.segments[0].name.clone())
        .collect();
    let exempt = cls.depends_closure(&roots);

    if !cls.visible_fields.is_empty() {
        writeln!(out, "  let o = s0.{map}[i], o' = s1.{map}[i] {{").unwrap();
        out.push_str("    all k : SeqIdx {\n");
        if exempt.is_empty() {
            out.push_str("      at (o.fields, k) = at (o'.fields, k)\n");
        } else {
            out.push_str("      at (o.fields, k) = at (o'.fields, k) ||\n");
            for (i, field) in exempt.iter().enumerate() {
                let tail = if i + 1 < exempt.len() { " ||" } else { "" };
                writeln!(out, "      k = idxOf (o.fields, o.{field}){tail}").unwrap();
            }
        }
        out.push_str("    }\n");
        // Deep modifies paths: prefix objects may change only along the path.
        let mut fresh = 0usize;
        for path in &m.modifies {
            let mut cursor = cls;
            let mut b0 = "o".to_string();
            let mut b1 = "o'".to_string();
            for depth in 1..path.segments.len() {
                let hop = &path.segments[depth - 1].name;
                let target = cursor.field(hop).unwrap().target.clone();
                let n0 = format!("p{fresh}");
                let n1 = format!("p{fresh}'");
                fresh += 1;
                writeln!(out, "    let {n0} = {b0}.{hop}, {n1} = {b1}.{hop} {{").unwrap();
                let inner = encoding.resolved().class(&target).unwrap();
                let next = path.segments[depth].name.clone();
                let inner_exempt = inner.depends_closure(&[next]);
                out.push_str("      all k : SeqIdx {\n");
                write!(out, "        at ({n0}.fields, k) = at ({n1}.fields, k)").unwrap();
                for field in &inner_exempt {
                    out.push_str(" ||\n");
                    write!(out, "        k = idxOf ({n0}.fields, {n0}.{field})").unwrap();
                }
                out.push('\n');
                out.push_str("      }\n    }\n");
                b0 = format!("{n0}.{}", path.segments[depth].name);
                b1 = format!("{n1}.{}", path.segments[depth].name);
                cursor = inner;
            }
        }
        out.push_str("  }\n");
    }

    out.push_str("  all x : Id {\n");
    if exempt.is_empty() {
        writeln!(out, "    s1.{map}[x] = s0.{map}[x]").unwrap();
    } else {
        writeln!(out, "    s1.{map}[x] = s0.{map}[x] || x = i").unwrap();
    }
    for other in &encoding.resolved().classes {
        if other.name == cls.name {
            continue;
        }
        let omap = &encoding.state_model.maps[&other.name];
        writeln!(out, "    s1.{omap}[x] = s0.{omap}[x]").unwrap();
    }
    out.push_str("  }\n");
}

// --- formula rendering in Alloy surface syntax ---

enum Ctx<'a> {
    Stateless,
    Instance { class: &'a str, var: &'a str },
    Method { class: &'a str },
}

// Precedence: implies/quantifiers = 1, or = 2, and = 3, unary = 4.
fn formula_text(encoding: &Encoding, ctx: &Ctx<'_>, f: &Formula, min: u8) -> String {
    let (rendered, level) = match f {
        Formula::Implies(a, b) => (
            format!(
                "{} implies {}",
                formula_text(encoding, ctx, a, 2),
                formula_text(encoding, ctx, b, 1)
            ),
            1,
        ),
        Formula::Or(parts) => (
            parts
                .iter()
                .map(|p| formula_text(encoding, ctx, p, 3))
                .collect::<Vec<_>>()
                .join(" or "),
            2,
        ),
        Formula::And(parts) => (
            parts
                .iter()
                .map(|p| formula_text(encoding, ctx, p, 4))
                .collect::<Vec<_>>()
                .join(" and "),
            3,
        ),
        Formula::Not(inner) => (format!("not {}", formula_text(encoding, ctx, inner, 4)), 4),
        Formula::All { var, class, body } => (
            format!(
                "all {} : {} | {}",
                var.name,
                class.name,
                formula_text(encoding, ctx, body, 1)
            ),
            1,
        ),
        Formula::Exists { var, class, body } => (
            format!(
                "some {} : {} | {}",
                var.name,
                class.name,
                formula_text(encoding, ctx, body, 1)
            ),
            1,
        ),
        Formula::No(e) => (format!("no {}", expr_text(encoding, ctx, e)), 4),
        Formula::Some(e) => (format!("some {}", expr_text(encoding, ctx, e)), 4),
        Formula::Equal(a, b) => (
            format!(
                "{} = {}",
                expr_text(encoding, ctx, a),
                expr_text(encoding, ctx, b)
            ),
            4,
        ),
    };
    if level < min {
        format!("({rendered})")
    } else {
        rendered
    }
}

fn expr_text(encoding: &Encoding, ctx: &Ctx<'_>, e: &Expr) -> String {
    let segments = e.segments();
    let (root, _) = segments[0];
    let primed = e.any_primed();

    // A root that names a receiver field is routed through the receiver; any
    // other name (quantified variable, parameter, class) is printed as-is.
    let receiver_rooted = match ctx {
        Ctx::Method { class } | Ctx::Instance { class, .. } => encoding
            .resolved()
            .class(class)
            .map_or(false, |c| c.field(&root.name).is_some()),
        Ctx::Stateless => false,
    };
    let (mut text, rest): (String, &[(&crate::ast::Ident, bool)]) = if receiver_rooted {
        match ctx {
            Ctx::Method { class } => {
                let map = &encoding.state_model.maps[*class];
                let state = if primed { "s1" } else { "s0" };
                (format!("{state}.{map}[i]"), &segments[..])
            }
            Ctx::Instance { var, .. } => (var.to_string(), &segments[..]),
            Ctx::Stateless => unreachable!(),
        }
    } else {
        (root.name.clone(), &segments[1..])
    };
    for (seg, _) in rest {
        text.push('.');
        text.push_str(&seg.name);
    }
    text
}

fn references_receiver(cls: &ResolvedClass, f: &Formula) -> bool {
    fn root_is_field(e: &Expr, cls: &ResolvedClass, scope: &[String]) -> bool {
        let (root, _) = e.segments()[0];
        !scope.contains(&root.name) && cls.field(&root.name).is_some()
    }
    fn walk(f: &Formula, cls: &ResolvedClass, scope: &mut Vec<String>) -> bool {
        match f {
            Formula::And(parts) | Formula::Or(parts) => parts.iter().any(|p| walk(p, cls, scope)),
            Formula::Implies(a, b) => walk(a, cls, scope) || walk(b, cls, scope),
            Formula::Not(inner) => walk(inner, cls, scope),
            Formula::All { var, body, .. } | Formula::Exists { var, body, .. } => {
                scope.push(var.name.clone());
                let hit = walk(body, cls, scope);
                scope.pop();
                hit
            }
            Formula::No(e) | Formula::Some(e) => root_is_field(e, cls, scope),
            Formula::Equal(a, b) => root_is_field(a, cls, scope) || root_is_field(b, cls, scope),
        }
    }
    walk(f, cls, &mut Vec::new())
}
