//! Direct evaluation of relational formulas over complete bindings.
//!
//! Standard finite-model first-order semantics: quantifiers range over the
//! binding's elements of the quantified domain, join is relational
//! composition, `Empty`/`NonEmpty` test cardinality. Used to re-validate
//! every model the solver produces; kept independent of the solver's own
//! partial evaluation.

use super::{Atom, Binding, RelExpr, RelFormula};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Evaluation faults; these indicate encoder bugs, not user errors.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVar(String),
    #[error("unknown relation or domain `{0}`")]
    UnknownRelation(String),
    #[error("unknown domain `{0}` in quantifier")]
    UnknownDomain(String),
    #[error("arity mismatch in join: {lhs} and {rhs}")]
    ArityMismatch { lhs: usize, rhs: usize },
    #[error("join over expression of unknown arity")]
    UnknownArity,
}

type TupleSet = BTreeSet<Vec<Atom>>;

/// Evaluate a formula against a binding. All free variables must be bound
/// in `binding.vars`.
pub fn eval_formula(binding: &Binding, formula: &RelFormula) -> Result<bool, EvalError> {
    let mut env = binding.vars.clone();
    eval_f(binding, &mut env, formula)
}

/// Evaluate an expression to its tuple set under the binding's variables.
pub fn eval_expr(binding: &Binding, expr: &RelExpr) -> Result<TupleSet, EvalError> {
    Ok(eval_e(binding, &binding.vars, expr)?.0)
}

fn eval_f(
    binding: &Binding,
    env: &mut BTreeMap<String, Atom>,
    formula: &RelFormula,
) -> Result<bool, EvalError> {
    match formula {
        RelFormula::And(parts) => {
            for p in parts {
                if !eval_f(binding, env, p)? {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        RelFormula::Or(parts) => {
            for p in parts {
                if eval_f(binding, env, p)? {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        RelFormula::Implies(a, b) => Ok(!eval_f(binding, env, a)? || eval_f(binding, env, b)?),
        RelFormula::Not(inner) => Ok(!eval_f(binding, env, inner)?),
        RelFormula::ForAll { var, domain, body } => {
            let elements = domain_elements(binding, domain)?;
            for atom in elements {
                let prev = env.insert(var.clone(), atom);
                let holds = eval_f(binding, env, body)?;
                restore(env, var, prev);
                if !holds {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        RelFormula::Exists { var, domain, body } => {
            let elements = domain_elements(binding, domain)?;
            for atom in elements {
                let prev = env.insert(var.clone(), atom);
                let holds = eval_f(binding, env, body)?;
                restore(env, var, prev);
                if holds {
                    return Ok(true);
                }
            }
            Ok(false)
        }
        RelFormula::Empty(e) => Ok(eval_e(binding, env, e)?.0.is_empty()),
        RelFormula::NonEmpty(e) => Ok(!eval_e(binding, env, e)?.0.is_empty()),
        RelFormula::SetEqual(a, b) => {
            Ok(eval_e(binding, env, a)?.0 == eval_e(binding, env, b)?.0)
        }
        RelFormula::Subset(a, b) => {
            let sa = eval_e(binding, env, a)?.0;
            let sb = eval_e(binding, env, b)?.0;
            Ok(sa.is_subset(&sb))
        }
        RelFormula::CardEq(e, k) => Ok(eval_e(binding, env, e)?.0.len() == *k),
    }
}

fn restore(env: &mut BTreeMap<String, Atom>, var: &str, prev: Option<Atom>) {
    match prev {
        Some(a) => {
            env.insert(var.to_string(), a);
        }
        None => {
            env.remove(var);
        }
    }
}

fn domain_elements(binding: &Binding, domain: &str) -> Result<Vec<Atom>, EvalError> {
    binding
        .elements
        .get(domain)
        .map(|s| s.iter().cloned().collect())
        .ok_or_else(|| EvalError::UnknownDomain(domain.to_string()))
}

fn eval_e(
    binding: &Binding,
    env: &BTreeMap<String, Atom>,
    expr: &RelExpr,
) -> Result<(TupleSet, Option<usize>), EvalError> {
    match expr {
        RelExpr::Var(v) => {
            let atom = env
                .get(v)
                .cloned()
                .ok_or_else(|| EvalError::UnboundVar(v.clone()))?;
            let mut set = TupleSet::new();
            set.insert(vec![atom]);
            Ok((set, Some(1)))
        }
        RelExpr::Rel(name) => {
            if let Some(tuples) = binding.tuples.get(name) {
                let arity = binding.arities.get(name).copied();
                return Ok((tuples.clone(), arity.or_else(|| tuples.iter().next().map(Vec::len))));
            }
            if let Some(elements) = binding.elements.get(name) {
                let set = elements.iter().map(|a| vec![a.clone()]).collect();
                return Ok((set, Some(1)));
            }
            Err(EvalError::UnknownRelation(name.clone()))
        }
        RelExpr::Join(a, b) => {
            let (sa, aa) = eval_e(binding, env, a)?;
            let (sb, ab) = eval_e(binding, env, b)?;
            let (aa, ab) = match (aa, ab) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(EvalError::UnknownArity),
            };
            if aa + ab < 3 {
                return Err(EvalError::ArityMismatch { lhs: aa, rhs: ab });
            }
            let mut out = TupleSet::new();
            for t1 in &sa {
                for t2 in &sb {
                    if t1.last() == t2.first() {
                        let mut joined = t1[..aa - 1].to_vec();
                        joined.extend_from_slice(&t2[1..]);
                        out.insert(joined);
                    }
                }
            }
            Ok((out, Some(aa + ab - 2)))
        }
        RelExpr::Literal(tuples) => {
            let set: TupleSet = tuples.iter().cloned().collect();
            let arity = tuples.first().map(Vec::len);
            Ok((set, arity))
        }
    }
}
