//! Inheritance resolution: builds the class table with visible fields,
//! inherited invariants, merged depends relations and effective methods.
//!
//! An overriding method declaration replaces the inherited specification
//! wholesale.

use crate::ast::*;
use crate::span::Span;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResolveError {
    #[error("{span}: duplicate class `{name}`")]
    DuplicateClass { name: String, span: Span },
    #[error("{span}: unknown superclass `{name}`")]
    UnknownSuperclass { name: String, span: Span },
    #[error("inheritance cycle through class `{name}`")]
    InheritanceCycle { name: String },
    #[error("{span}: duplicate field `{name}` in class `{class}`")]
    DuplicateField {
        class: String,
        name: String,
        span: Span,
    },
    #[error("{span}: field `{name}` in class `{class}` shadows an inherited field")]
    ShadowedField {
        class: String,
        name: String,
        span: Span,
    },
}

/// A field visible on a class, declared or inherited.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleField {
    pub name: String,
    pub target: String,
    pub multiplicity: Multiplicity,
    /// Class that declares the field (owner of the backing relation).
    pub declared_in: String,
}

/// Reference to an invariant by declaring class and position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantRef {
    pub class: String,
    pub index: usize,
}

/// A method in the effective table, with the class that supplied its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveMethod {
    pub defined_in: String,
    pub spec: MethodSpec,
}

/// A class with inheritance fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedClass {
    pub name: String,
    pub superclass: Option<String>,
    /// Declared fields first, then inherited, in listing order. Field-table
    /// indices are the positions in this list.
    pub visible_fields: Vec<VisibleField>,
    /// Declared invariants followed by inherited ones.
    pub all_invariants: Vec<InvariantRef>,
    /// Declared plus inherited (dependent, source) pairs, deduplicated.
    pub depends_pairs: Vec<(String, String)>,
    /// Effective method table: an override replaces the inherited spec.
    pub methods: Vec<EffectiveMethod>,
    /// Direct subclasses, in declaration order.
    pub subclasses: Vec<String>,
    /// The source class as written (formulas are referenced from here).
    pub source: ClassSpec,
}

impl ResolvedClass {
    pub fn field(&self, name: &str) -> Option<&VisibleField> {
        self.visible_fields.iter().find(|f| f.name == name)
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.visible_fields.iter().position(|f| f.name == name)
    }

    pub fn method(&self, name: &str) -> Option<&EffectiveMethod> {
        self.methods.iter().find(|m| m.spec.name.name == name)
    }

    /// Fields whose index is exempt from the frame when `field` is modified:
    /// the field itself plus the fixpoint of the depends relation over it.
    pub fn depends_closure(&self, fields: &[String]) -> Vec<String> {
        let mut closed: Vec<String> = fields.to_vec();
        loop {
            let mut grew = false;
            for (dep, src) in &self.depends_pairs {
                if closed.iter().any(|f| f == src) && !closed.iter().any(|f| f == dep) {
                    closed.push(dep.clone());
                    grew = true;
                }
            }
            if !grew {
                break;
            }
        }
        closed
    }
}

/// The resolved class table, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSpec {
    pub classes: Vec<ResolvedClass>,
    index: BTreeMap<String, usize>,
}

impl ResolvedSpec {
    pub fn class(&self, name: &str) -> Option<&ResolvedClass> {
        self.index.get(name).map(|&i| &self.classes[i])
    }

    pub fn is_class(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// `sub` equals `sup` or inherits from it, directly or transitively.
    pub fn is_subclass_of(&self, sub: &str, sup: &str) -> bool {
        let mut cur = Some(sub.to_string());
        while let Some(name) = cur {
            if name == sup {
                return true;
            }
            cur = self.class(&name).and_then(|c| c.superclass.clone());
        }
        false
    }

    /// Least common superclass of two classes, if any.
    pub fn common_class(&self, a: &str, b: &str) -> Option<String> {
        let mut cur = Some(a.to_string());
        while let Some(name) = cur {
            if self.is_subclass_of(b, &name) {
                return Some(name);
            }
            cur = self.class(&name).and_then(|c| c.superclass.clone());
        }
        None
    }

    /// The invariant formula behind a reference.
    pub fn invariant(&self, inv: &InvariantRef) -> &Formula {
        &self.class(&inv.class).unwrap().source.invariants[inv.index]
    }
}

/// Resolve a parsed specification into a class table.
pub fn resolve(spec: &LoySpec) -> Result<ResolvedSpec, ResolveError> {
    // Class name uniqueness and the superclass graph.
    let mut order: Vec<&ClassSpec> = Vec::new();
    let mut by_name: BTreeMap<&str, &ClassSpec> = BTreeMap::new();
    for cls in &spec.classes {
        if by_name.insert(&cls.name.name, cls).is_some() {
            return Err(ResolveError::DuplicateClass {
                name: cls.name.name.clone(),
                span: cls.name.span,
            });
        }
        order.push(cls);
    }
    for cls in &spec.classes {
        if let Some(sup) = &cls.superclass {
            if !by_name.contains_key(sup.name.as_str()) {
                return Err(ResolveError::UnknownSuperclass {
                    name: sup.name.clone(),
                    span: sup.span,
                });
            }
        }
    }
    // Cycle detection by walking superclass chains with a step bound.
    for cls in &spec.classes {
        let mut cur = cls.superclass.as_ref().map(|s| s.name.as_str());
        let mut steps = 0;
        while let Some(name) = cur {
            steps += 1;
            if name == cls.name.name || steps > spec.classes.len() {
                return Err(ResolveError::InheritanceCycle {
                    name: cls.name.name.clone(),
                });
            }
            cur = by_name[name].superclass.as_ref().map(|s| s.name.as_str());
        }
    }

    // Resolve in dependency order (parents first).
    let mut resolved: BTreeMap<String, ResolvedClass> = BTreeMap::new();
    let mut pending: Vec<&ClassSpec> = order.clone();
    while !pending.is_empty() {
        let mut next = Vec::new();
        for cls in pending {
            let parent_done = cls
                .superclass
                .as_ref()
                .map_or(true, |s| resolved.contains_key(&s.name));
            if !parent_done {
                next.push(cls);
                continue;
            }
            let rc = resolve_class(cls, &resolved)?;
            resolved.insert(rc.name.clone(), rc);
        }
        pending = next;
    }

    let mut classes: Vec<ResolvedClass> = order
        .iter()
        .map(|c| resolved[&c.name.name].clone())
        .collect();
    // Record direct subclasses in declaration order.
    for cls in &order {
        if let Some(sup) = &cls.superclass {
            let sup_idx = classes.iter().position(|c| c.name == sup.name).unwrap();
            classes[sup_idx].subclasses.push(cls.name.name.clone());
        }
    }
    let index = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.clone(), i))
        .collect();
    Ok(ResolvedSpec { classes, index })
}

fn resolve_class(
    cls: &ClassSpec,
    resolved: &BTreeMap<String, ResolvedClass>,
) -> Result<ResolvedClass, ResolveError> {
    let parent = cls.superclass.as_ref().map(|s| &resolved[&s.name]);

    let mut visible_fields: Vec<VisibleField> = Vec::new();
    for f in &cls.fields {
        if visible_fields.iter().any(|v| v.name == f.name.name) {
            return Err(ResolveError::DuplicateField {
                class: cls.name.name.clone(),
                name: f.name.name.clone(),
                span: f.name.span,
            });
        }
        if parent.map_or(false, |p| p.field(&f.name.name).is_some()) {
            return Err(ResolveError::ShadowedField {
                class: cls.name.name.clone(),
                name: f.name.name.clone(),
                span: f.name.span,
            });
        }
        visible_fields.push(VisibleField {
            name: f.name.name.clone(),
            target: f.target.name.clone(),
            multiplicity: f.multiplicity,
            declared_in: cls.name.name.clone(),
        });
    }
    if let Some(p) = parent {
        visible_fields.extend(p.visible_fields.iter().cloned());
    }

    let mut all_invariants: Vec<InvariantRef> = (0..cls.invariants.len())
        .map(|index| InvariantRef {
            class: cls.name.name.clone(),
            index,
        })
        .collect();
    if let Some(p) = parent {
        all_invariants.extend(p.all_invariants.iter().cloned());
    }

    let mut depends_pairs: Vec<(String, String)> = Vec::new();
    for d in &cls.depends {
        for src in &d.sources {
            let pair = (d.dependent.name.clone(), src.name.clone());
            if !depends_pairs.contains(&pair) {
                depends_pairs.push(pair);
            }
        }
    }
    if let Some(p) = parent {
        for pair in &p.depends_pairs {
            if !depends_pairs.contains(pair) {
                depends_pairs.push(pair.clone());
            }
        }
    }

    let mut methods: Vec<EffectiveMethod> = cls
        .methods
        .iter()
        .map(|m| EffectiveMethod {
            defined_in: cls.name.name.clone(),
            spec: m.clone(),
        })
        .collect();
    if let Some(p) = parent {
        for m in &p.methods {
            if !methods.iter().any(|own| own.spec.name == m.spec.name) {
                methods.push(m.clone());
            }
        }
    }

    Ok(ResolvedClass {
        name: cls.name.name.clone(),
        superclass: cls.superclass.as_ref().map(|s| s.name.clone()),
        visible_fields,
        all_invariants,
        depends_pairs,
        methods,
        subclasses: Vec::new(),
        source: cls.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;

    fn managed() -> LoySpec {
        parse(
            "\
class Project {
  manager : Manager
  invariant some manager
}
class Employee {
  project : Project
  invariant no project.manager
  assign (p : Project)
    requires no project
    ensures project' = p
    modifies project
}
class ManagedEmployee ext Employee {
  manager : Manager
  depends manager <- project
  assign (p : Project)
    requires no project
    ensures project' = p
    ensures manager' = p.manager
    modifies project
}
class Manager { }
",
        )
        .unwrap()
    }

    #[test]
    fn visible_fields_declared_first_then_inherited() {
        let resolved = resolve(&managed()).unwrap();
        let me = resolved.class("ManagedEmployee").unwrap();
        let names: Vec<&str> = me.visible_fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["manager", "project"]);
        assert_eq!(me.field_index("manager"), Some(0));
        assert_eq!(me.field_index("project"), Some(1));
        assert_eq!(me.field("project").unwrap().declared_in, "Employee");
    }

    #[test]
    fn invariants_are_inherited() {
        let resolved = resolve(&managed()).unwrap();
        let me = resolved.class("ManagedEmployee").unwrap();
        assert_eq!(
            me.all_invariants,
            vec![InvariantRef {
                class: "Employee".into(),
                index: 0
            }]
        );
    }

    #[test]
    fn override_replaces_method_wholesale() {
        let resolved = resolve(&managed()).unwrap();
        let me = resolved.class("ManagedEmployee").unwrap();
        let assign = me.method("assign").unwrap();
        assert_eq!(assign.defined_in, "ManagedEmployee");
        assert_eq!(assign.spec.ensures.len(), 2);
        // The parent keeps its own version.
        let emp = resolved.class("Employee").unwrap();
        assert_eq!(emp.method("assign").unwrap().spec.ensures.len(), 1);
    }

    #[test]
    fn root_class_sees_only_its_own_fields() {
        let resolved = resolve(&managed()).unwrap();
        let p = resolved.class("Project").unwrap();
        assert_eq!(p.visible_fields.len(), 1);
        assert_eq!(p.visible_fields[0].declared_in, "Project");
    }

    #[test]
    fn resolve_is_deterministic_and_repeatable() {
        let spec = managed();
        assert_eq!(resolve(&spec).unwrap(), resolve(&spec).unwrap());
    }

    #[test]
    fn rejects_unknown_superclass_and_cycles() {
        let err = resolve(&parse("class A ext B { }").unwrap()).unwrap_err();
        assert!(matches!(err, ResolveError::UnknownSuperclass { .. }));
        let err = resolve(&parse("class A ext B { }\nclass B ext A { }").unwrap()).unwrap_err();
        assert!(matches!(err, ResolveError::InheritanceCycle { .. }));
    }

    #[test]
    fn rejects_field_shadowing() {
        let err = resolve(
            &parse("class A { f : A }\nclass B ext A { f : A }").unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, ResolveError::ShadowedField { .. }));
    }

    #[test]
    fn depends_closure_is_transitive() {
        let spec = parse(
            "\
class C {
  a : C
  b : C
  c : C
  depends a <- b
  depends b <- c
}
",
        )
        .unwrap();
        let resolved = resolve(&spec).unwrap();
        let cls = resolved.class("C").unwrap();
        let mut closure = cls.depends_closure(&["c".to_string()]);
        closure.sort();
        assert_eq!(closure, vec!["a", "b", "c"]);
    }
}
