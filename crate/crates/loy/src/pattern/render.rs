//! Trace rendering: indented text in the style of the analysis walkthroughs
//! (query, verdict, `|` connectors, warning and question lines), and a
//! structured tree for machine consumption.

use super::{Annotation, DiagnosisNode, Verdict};
use crate::relational::{display_var, Binding};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write;

/// Options for text rendering.
#[derive(Debug, Clone, Default)]
pub struct TraceOptions {
    /// Dump the model under every satisfiable node.
    pub show_models: bool,
}

/// Render a diagnosis tree as an indented text trace.
pub fn render_trace(node: &DiagnosisNode, opts: &TraceOptions) -> String {
    let mut out = String::new();
    render_node(node, opts, 0, &mut out);
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("    ");
    }
}

fn render_node(node: &DiagnosisNode, opts: &TraceOptions, depth: usize, out: &mut String) {
    if let Some(header) = node.pattern.and_then(|p| p.header()) {
        indent(out, depth);
        out.push_str(header);
        out.push('\n');
    }
    if let Some(q) = &node.question {
        indent(out, depth);
        writeln!(out, "Q: {q}").unwrap();
    }
    if !node.rendered.is_empty() {
        indent(out, depth);
        out.push_str(&node.rendered);
        out.push_str(" .. ");
        out.push_str(node.verdict.name());
        let visible: Vec<String> = node
            .type_env
            .iter()
            .filter(|(v, _)| !v.starts_with('$'))
            .map(|(v, d)| format!("<{v}, {d}>"))
            .collect();
        if !visible.is_empty() {
            write!(out, ", {}", visible.join(", ")).unwrap();
        }
        out.push('\n');
        if opts.show_models {
            if let Verdict::Sat(model) = &node.verdict {
                for line in model.to_string().lines() {
                    indent(out, depth);
                    writeln!(out, "  {line}").unwrap();
                }
            }
        }
    }
    match &node.annotation {
        Some(Annotation::Warning(w)) => {
            if !node.rendered.is_empty() {
                indent(out, depth);
                out.push_str("|\n");
            }
            indent(out, depth);
            writeln!(out, "warning ({})", w.message()).unwrap();
        }
        Some(Annotation::Unknown(reason)) => {
            indent(out, depth);
            writeln!(out, "(analysis stopped: {reason})").unwrap();
        }
        _ => {}
    }

    // A single child continues the chain at the same depth, like the linear
    // walkthrough traces; siblings are indented one level.
    let child_depth = if node.children.len() > 1 { depth + 1 } else { depth };
    let mut last_question: Option<&str> = None;
    for child in &node.children {
        indent(out, depth);
        out.push_str("|\n");
        // The same branch question is printed once for a run of siblings.
        let mut child_view = child.clone();
        if let Some(q) = &child.question {
            if last_question == Some(q.as_str()) {
                child_view.question = None;
            }
            last_question = Some(q.as_str());
        } else {
            last_question = None;
        }
        render_node(&child_view, opts, child_depth, out);
    }
}

/// Serializable tree mirror: {query, typeEnv, verdict, model?, annotation?,
/// children}.
#[derive(Debug, Clone, Serialize)]
pub struct StructuredNode {
    pub query: String,
    #[serde(rename = "typeEnv")]
    pub type_env: Vec<[String; 2]>,
    pub verdict: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<StructuredModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotation: Option<StructuredAnnotation>,
    pub children: Vec<StructuredNode>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructuredModel {
    pub domains: BTreeMap<String, Vec<String>>,
    pub relations: BTreeMap<String, Vec<Vec<String>>>,
    pub vars: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StructuredAnnotation {
    Warning { warning: String, message: String },
    Classified { class: String },
    Unknown { reason: String },
}

impl StructuredNode {
    pub fn from_node(node: &DiagnosisNode) -> StructuredNode {
        StructuredNode {
            query: node.rendered.clone(),
            type_env: node
                .type_env
                .iter()
                .map(|(v, d)| [display_var(v).to_string(), d.clone()])
                .collect(),
            verdict: node.verdict.name().to_string(),
            pattern: node.pattern.map(|p| p.name().to_string()),
            model: node.verdict.model().map(structured_model),
            question: node.question.clone(),
            annotation: node.annotation.as_ref().map(|a| match a {
                Annotation::Warning(w) => StructuredAnnotation::Warning {
                    warning: w.name().to_string(),
                    message: w.message(),
                },
                Annotation::Classified(c) => StructuredAnnotation::Classified {
                    class: c.name().to_string(),
                },
                Annotation::Unknown(reason) => StructuredAnnotation::Unknown {
                    reason: reason.clone(),
                },
            }),
            children: node.children.iter().map(StructuredNode::from_node).collect(),
        }
    }
}

/// A binding in structured form, atoms and variables by display name.
pub fn structured_model(b: &Binding) -> StructuredModel {
    StructuredModel {
        domains: b
            .elements
            .iter()
            .map(|(d, atoms)| (d.clone(), atoms.iter().map(|a| a.to_string()).collect()))
            .collect(),
        relations: b
            .tuples
            .iter()
            .map(|(r, tuples)| {
                (
                    r.clone(),
                    tuples
                        .iter()
                        .map(|t| t.iter().map(|a| a.to_string()).collect())
                        .collect(),
                )
            })
            .collect(),
        vars: b
            .vars
            .iter()
            .map(|(v, a)| (display_var(v).to_string(), a.to_string()))
            .collect(),
    }
}
