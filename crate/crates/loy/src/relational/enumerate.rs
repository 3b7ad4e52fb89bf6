//! Exhaustive binding enumeration.
//!
//! Walks every candidate binding within scope in a fixed canonical order and
//! filters with the direct evaluator. Exponential and only usable at desk
//! scales, but trivially correct: it serves as the oracle against which the
//! backtracking solver is checked, and shares none of its search machinery.

use super::eval::eval_formula;
use super::solver::SolveError;
use super::{Atom, Binding, Mult, RelFormula, RelProblem, SatResult, Scope, TypeEnv};
use std::collections::BTreeSet;

/// Visit every binding within scope that satisfies the structural rules
/// (domain hierarchy, column domains, multiplicities). Stops early when the
/// visitor returns `false`.
pub fn enumerate_bindings(
    problem: &RelProblem,
    env: &TypeEnv,
    scope: &Scope,
    mut visit: impl FnMut(&Binding) -> bool,
) -> Result<(), SolveError> {
    let shape = Shape::build(problem, env, scope)?;
    shape.walk(&mut visit);
    Ok(())
}

/// Decide satisfiability of γ ∧ extra by exhaustive enumeration.
pub fn solve_exhaustive(
    problem: &RelProblem,
    extra: &RelFormula,
    env: &TypeEnv,
    scope: &Scope,
) -> Result<SatResult, SolveError> {
    let gamma = problem.gamma();
    let mut found: Option<Binding> = None;
    let mut fault: Option<super::EvalError> = None;
    enumerate_bindings(problem, env, scope, |b| {
        match (eval_formula(b, &gamma), eval_formula(b, extra)) {
            (Ok(true), Ok(true)) => {
                found = Some(b.clone());
                false
            }
            (Err(e), _) | (_, Err(e)) => {
                fault = Some(e);
                false
            }
            _ => true,
        }
    })?;
    if let Some(e) = fault {
        return Err(SolveError::TypeError(e.to_string()));
    }
    Ok(match found {
        Some(b) => SatResult::Sat(b),
        None => SatResult::Unsat,
    })
}

/// Count bindings satisfying γ ∧ extra (used by property tests).
pub fn count_models(
    problem: &RelProblem,
    extra: &RelFormula,
    env: &TypeEnv,
    scope: &Scope,
) -> Result<usize, SolveError> {
    let gamma = problem.gamma();
    let mut n = 0usize;
    let mut fault: Option<super::EvalError> = None;
    enumerate_bindings(problem, env, scope, |b| {
        match (eval_formula(b, &gamma), eval_formula(b, extra)) {
            (Ok(true), Ok(true)) => {
                n += 1;
                true
            }
            (Err(e), _) | (_, Err(e)) => {
                fault = Some(e);
                false
            }
            _ => true,
        }
    })?;
    if let Some(e) = fault {
        return Err(SolveError::TypeError(e.to_string()));
    }
    Ok(n)
}

struct Shape {
    /// Root pools: (name, size).
    roots: Vec<(String, usize)>,
    /// Per domain: name, root index, bound, and for each pool atom of the
    /// root, whether a given sort choice places it inside this domain.
    domains: Vec<DomainShape>,
    /// Per root: sort options, each an optional domain index (None = absent).
    options: Vec<Vec<Option<usize>>>,
    relations: Vec<RelationShape>,
    vars: Vec<(String, usize)>, // name, domain index
}

struct DomainShape {
    name: String,
    root: usize,
    bound: usize,
    /// Sort options of the root that land in this domain (by option position).
    member_options: Vec<bool>,
}

struct RelationShape {
    name: String,
    cols: Vec<usize>, // domain indices
    mults: Vec<Mult>,
}

impl Shape {
    fn build(problem: &RelProblem, env: &TypeEnv, scope: &Scope) -> Result<Shape, SolveError> {
        let dom_index = |name: &str| -> Result<usize, SolveError> {
            problem
                .domains
                .iter()
                .position(|d| d.name == name)
                .ok_or_else(|| SolveError::UnknownDomain(name.to_string()))
        };

        let mut roots = Vec::new();
        let mut root_of = Vec::new();
        for d in &problem.domains {
            match &d.parent {
                None => {
                    let pool = d.exact_size.unwrap_or_else(|| scope.bound(&d.name));
                    roots.push((d.name.clone(), pool));
                    root_of.push(roots.len() - 1);
                }
                Some(p) => root_of.push(root_of[dom_index(p)?]),
            }
        }

        let mut options: Vec<Vec<Option<usize>>> = roots.iter().map(|_| vec![None]).collect();
        for (di, d) in problem.domains.iter().enumerate() {
            if d.parent.is_none() && d.exact_size.is_some() {
                // Exact domains: atoms have no "absent" choice.
                options[root_of[di]] = vec![Some(di)];
            } else {
                options[root_of[di]].push(Some(di));
            }
        }

        let mut domains = Vec::new();
        for (di, d) in problem.domains.iter().enumerate() {
            let root = root_of[di];
            let member_options = options[root]
                .iter()
                .map(|opt| match opt {
                    None => false,
                    Some(o) => {
                        // option domain `o` is within `di`?
                        let mut cur = *o;
                        loop {
                            if cur == di {
                                return true;
                            }
                            match &problem.domains[cur].parent {
                                Some(p) => cur = dom_index(p).unwrap(),
                                None => return false,
                            }
                        }
                    }
                })
                .collect();
            domains.push(DomainShape {
                name: d.name.clone(),
                root,
                bound: d.exact_size.unwrap_or_else(|| scope.bound(&d.name)),
                member_options,
            });
        }

        let mut relations = Vec::new();
        for r in &problem.relations {
            let cols: Vec<usize> = r
                .columns
                .iter()
                .map(|c| dom_index(c))
                .collect::<Result<_, _>>()?;
            let max_tuples: usize = cols
                .iter()
                .map(|&d| roots[root_of[d]].1)
                .product();
            if max_tuples > 32 {
                return Err(SolveError::InvalidProblem(format!(
                    "relation `{}` has {max_tuples} candidate tuples; exhaustive \
                     enumeration is limited to 32 per relation",
                    r.name
                )));
            }
            relations.push(RelationShape {
                name: r.name.clone(),
                cols,
                mults: r.mults.clone(),
            });
        }

        let mut vars = Vec::new();
        for (v, d) in env.iter() {
            vars.push((v.clone(), dom_index(d)?));
        }

        Ok(Shape {
            roots,
            domains,
            options,
            relations,
            vars,
        })
    }

    fn walk(&self, visit: &mut impl FnMut(&Binding) -> bool) {
        // Sort assignment: one option index per atom, odometer order.
        let atom_count: usize = self.roots.iter().map(|(_, p)| p).sum();
        let mut atom_roots = Vec::with_capacity(atom_count);
        for (ri, (_, pool)) in self.roots.iter().enumerate() {
            for _ in 0..*pool {
                atom_roots.push(ri);
            }
        }
        let mut sorts = vec![0usize; atom_count];
        'outer: loop {
            if self.sorts_within_bounds(&atom_roots, &sorts) {
                let elements = self.elements_for(&atom_roots, &sorts);
                if !self.walk_vars(&elements, visit) {
                    return;
                }
            }
            // Advance the odometer.
            for i in (0..atom_count).rev() {
                sorts[i] += 1;
                if sorts[i] < self.options[atom_roots[i]].len() {
                    continue 'outer;
                }
                sorts[i] = 0;
            }
            break;
        }
    }

    fn sorts_within_bounds(&self, atom_roots: &[usize], sorts: &[usize]) -> bool {
        for d in &self.domains {
            let mut count = 0usize;
            for (a, &root) in atom_roots.iter().enumerate() {
                if root == d.root && d.member_options[sorts[a]] {
                    count += 1;
                }
            }
            if count > d.bound {
                return false;
            }
        }
        true
    }

    fn elements_for(&self, atom_roots: &[usize], sorts: &[usize]) -> Vec<BTreeSet<Atom>> {
        let mut index_in_root = vec![0usize; self.roots.len()];
        let mut atoms = Vec::with_capacity(atom_roots.len());
        for &root in atom_roots {
            let idx = index_in_root[root];
            index_in_root[root] += 1;
            atoms.push(Atom::new(self.roots[root].0.clone(), idx));
        }
        self.domains
            .iter()
            .map(|d| {
                atom_roots
                    .iter()
                    .enumerate()
                    .filter(|(a, &root)| root == d.root && d.member_options[sorts[*a]])
                    .map(|(a, _)| atoms[a].clone())
                    .collect()
            })
            .collect()
    }

    fn walk_vars(
        &self,
        elements: &[BTreeSet<Atom>],
        visit: &mut impl FnMut(&Binding) -> bool,
    ) -> bool {
        let candidates: Vec<Vec<Atom>> = self
            .vars
            .iter()
            .map(|(_, d)| elements[*d].iter().cloned().collect())
            .collect();
        if candidates.iter().any(|c| c.is_empty()) && !self.vars.is_empty() {
            // Some variable has no element to bind to: no binding exists for
            // this sort assignment.
            return true;
        }
        let mut choice = vec![0usize; self.vars.len()];
        'outer: loop {
            let vars = self
                .vars
                .iter()
                .enumerate()
                .map(|(i, (name, _))| (name.clone(), candidates[i][choice[i]].clone()))
                .collect();
            if !self.walk_relations(elements, vars, visit) {
                return false;
            }
            for i in (0..self.vars.len()).rev() {
                choice[i] += 1;
                if choice[i] < candidates[i].len() {
                    continue 'outer;
                }
                choice[i] = 0;
            }
            break;
        }
        true
    }

    fn walk_relations(
        &self,
        elements: &[BTreeSet<Atom>],
        vars: std::collections::BTreeMap<String, Atom>,
        visit: &mut impl FnMut(&Binding) -> bool,
    ) -> bool {
        // Candidate tuples per relation under the current domain contents.
        let candidate_tuples: Vec<Vec<Vec<Atom>>> = self
            .relations
            .iter()
            .map(|r| {
                let cols: Vec<Vec<Atom>> = r
                    .cols
                    .iter()
                    .map(|&d| elements[d].iter().cloned().collect())
                    .collect();
                product(&cols)
            })
            .collect();

        let mut subset = vec![0u64; self.relations.len()];
        'outer: loop {
            let mut binding = Binding::new();
            for (d, shape) in self.domains.iter().enumerate() {
                binding
                    .elements
                    .insert(shape.name.clone(), elements[d].clone());
            }
            binding.vars = vars.clone();
            let mut structural_ok = true;
            for (ri, r) in self.relations.iter().enumerate() {
                let tuples: BTreeSet<Vec<Atom>> = candidate_tuples[ri]
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| subset[ri] & (1 << t) != 0)
                    .map(|(_, t)| t.clone())
                    .collect();
                if !mults_ok(&tuples, &r.mults) {
                    structural_ok = false;
                }
                binding.arities.insert(r.name.clone(), r.cols.len());
                binding.tuples.insert(r.name.clone(), tuples);
            }
            if structural_ok && !visit(&binding) {
                return false;
            }
            for ri in (0..self.relations.len()).rev() {
                subset[ri] += 1;
                if subset[ri] < (1u64 << candidate_tuples[ri].len()) {
                    continue 'outer;
                }
                subset[ri] = 0;
            }
            break;
        }
        true
    }
}

fn product(cols: &[Vec<Atom>]) -> Vec<Vec<Atom>> {
    let mut out: Vec<Vec<Atom>> = vec![Vec::new()];
    for col in cols {
        let mut next = Vec::new();
        for prefix in &out {
            for a in col {
                let mut t = prefix.clone();
                t.push(a.clone());
                next.push(t);
            }
        }
        out = next;
    }
    out
}

/// Per-column at-most-one: fixing all other columns leaves at most one value.
fn mults_ok(tuples: &BTreeSet<Vec<Atom>>, mults: &[Mult]) -> bool {
    for (c, m) in mults.iter().enumerate() {
        if *m != Mult::Lone {
            continue;
        }
        for t1 in tuples {
            for t2 in tuples {
                if t1 != t2 {
                    let same_rest = t1
                        .iter()
                        .zip(t2.iter())
                        .enumerate()
                        .all(|(i, (a, b))| i == c || a == b);
                    if same_rest {
                        return false;
                    }
                }
            }
        }
    }
    true
}
