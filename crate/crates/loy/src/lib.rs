//! Analyzer for Loy, a lightweight object-oriented specification language.
//!
//! The pipeline: parse `.loy` text into an AST ([`parser`]), resolve
//! inheritance into a class table ([`resolve`]), check well-formedness
//! ([`typecheck`]), encode the specification into a bounded relational
//! problem with an explicit two-state model ([`encoder`]), decide
//! satisfiability within a finite scope ([`relational`]), and diagnose
//! vacuous or misleading verdicts with patterns of analysis ([`pattern`]).
//! Alloy surface text can be emitted for interoperability ([`alloy`]).

pub mod alloy;
pub mod ast;
pub mod encoder;
pub mod lexer;
pub mod parser;
pub mod pattern;
pub mod pretty;
pub mod relational;
pub mod resolve;
pub mod span;
pub mod typecheck;

pub use ast::{ClassSpec, Expr, Formula, LoySpec, MethodSpec};
pub use parser::{parse, parse_files, parse_formula, ParseError};
pub use resolve::{resolve, ResolveError, ResolvedClass, ResolvedSpec};
pub use typecheck::{typecheck, Diagnostic};
