//! Command-line analyzer for Loy specifications: parse, resolve, typecheck,
//! encode into a bounded relational problem, then check satisfiability or
//! diagnose verdicts with the patterns of analysis.
//!
//! Exit codes: 0 all targets satisfiable (diagnose: no warnings), 1 an
//! unsatisfiable target or a warning, 2 usage/parse/type errors or an unknown
//! target, 3 a search budget ran out (check only).

use clap::{Args, Parser, Subcommand, ValueEnum};
use loy::alloy::emit_alloy;
use loy::encoder::{encode_spec, EncodeContext, Encoding};
use loy::pattern::{
    diagnose_core, diagnose_formula, diagnose_invariant, diagnose_method, method_legend,
    render_trace, structured_model, DiagnoseConfig, DiagnosisNode, StructuredNode, TraceOptions,
    Verdict,
};
use loy::relational::{solve, RelFormula, SatResult, Scope, SolveError, SolveOptions, TypeEnv};
use loy::typecheck::typecheck_formula;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "loy", version, about = "Analyzer for Loy class specifications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the core constraints and every method specification.
    Check(CommonArgs),
    /// Diagnose a target with the patterns of analysis.
    Diagnose(DiagnoseArgs),
    /// Write the Alloy encoding of the specification.
    Encode(CommonArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Input `.loy` files; together they form one specification.
    inputs: Vec<PathBuf>,

    /// Scope bound: a default (`--scope 3`) or a per-class override
    /// (`--scope Employee=2`); repeatable.
    #[arg(long = "scope")]
    scope: Vec<String>,

    /// Search-node budget per satisfiability query.
    #[arg(long, default_value_t = 10_000_000)]
    budget: u64,

    /// Report format.
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,

    /// Show the model found for satisfiable queries.
    #[arg(long)]
    show_model: bool,

    /// Also write the Alloy encoding into this directory.
    #[arg(long, value_name = "DIR")]
    emit_alloy: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// What to diagnose: `core`, `invariant Class#k`, `method Class.m`, or
    /// `formula <text>`. Defaults to the core constraints.
    #[arg(long)]
    target: Option<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Check(args) => cmd_check(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Encode(args) => cmd_encode(args),
    };
    match code {
        Ok(c) => ExitCode::from(c),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Parse, resolve and typecheck the input files into an encoding.
fn load(args: &CommonArgs) -> Result<(Encoding, Scope), String> {
    if args.inputs.is_empty() {
        return Err("no input files given".into());
    }
    let mut sources = Vec::new();
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        sources.push((path.clone(), text));
    }
    let spec = loy::parse_files(sources.iter().map(|(_, s)| s.as_str()))
        .map_err(|e| format!("{e}"))?;
    let resolved = loy::resolve(&spec).map_err(|e| format!("{e}"))?;
    let diagnostics = loy::typecheck(&resolved);
    if !diagnostics.is_empty() {
        let mut msg = String::from("the specification is not well-formed:\n");
        for d in &diagnostics {
            msg.push_str(&format!("  {d}\n"));
        }
        return Err(msg.trim_end().to_string());
    }
    let scope = parse_scope(&args.scope)?;
    Ok((encode_spec(&resolved), scope))
}

fn parse_scope(entries: &[String]) -> Result<Scope, String> {
    let mut scope = Scope::uniform(3);
    for entry in entries {
        match entry.split_once('=') {
            Some((name, bound)) => {
                let bound: usize = bound
                    .parse()
                    .map_err(|_| format!("invalid scope bound `{bound}`"))?;
                if bound == 0 {
                    return Err("scope bounds must be at least 1".into());
                }
                scope.per_domain.insert(name.trim().to_string(), bound);
            }
            None => {
                let bound: usize = entry
                    .parse()
                    .map_err(|_| format!("invalid scope `{entry}`"))?;
                if bound == 0 {
                    return Err("scope bounds must be at least 1".into());
                }
                scope.default = bound;
            }
        }
    }
    Ok(scope)
}

fn write_alloy(encoding: &Encoding, args: &CommonArgs) -> Result<Option<PathBuf>, String> {
    let Some(dir) = &args.emit_alloy else {
        return Ok(None);
    };
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
    let stem = args.inputs[0]
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "spec".to_string());
    let path = dir.join(format!("{stem}.als"));
    std::fs::write(&path, emit_alloy(encoding))
        .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    Ok(Some(path))
}

// --- check ---

struct TargetReport {
    name: String,
    verdict: Verdict,
}

fn cmd_check(args: CommonArgs) -> Result<u8, String> {
    let (encoding, scope) = load(&args)?;
    if let Some(path) = write_alloy(&encoding, &args)? {
        eprintln!("wrote {}", path.display());
    }
    let opts = SolveOptions { budget: args.budget };

    let mut reports = Vec::new();
    reports.push(TargetReport {
        name: "core".into(),
        verdict: run_solve(&encoding.problem, &RelFormula::top(), &TypeEnv::new(), &scope, &opts)?,
    });
    for m in &encoding.methods {
        let (query, env) = encoding
            .encode_method_query(&m.class, &m.method)
            .expect("method comes from the encoding");
        reports.push(TargetReport {
            name: format!("{}.{}", m.class, m.method),
            verdict: run_solve(&encoding.problem, &query, &env, &scope, &opts)?,
        });
    }

    match args.format {
        Format::Text => {
            println!("scope: {scope}");
            for r in &reports {
                println!("{} .. {} (scope {})", r.name, r.verdict.name(), scope.default);
                if args.show_model {
                    if let Verdict::Sat(model) = &r.verdict {
                        for line in model.to_string().lines() {
                            println!("  {line}");
                        }
                    }
                }
            }
        }
        Format::Structured => {
            let targets: Vec<serde_json::Value> = reports
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "name": r.name,
                        "verdict": r.verdict.name(),
                        "model": r.verdict.model().map(structured_model),
                    })
                })
                .collect();
            let doc = serde_json::json!({
                "command": "check",
                "scope": scope_json(&scope),
                "targets": targets,
            });
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
        }
    }

    if reports.iter().any(|r| matches!(r.verdict, Verdict::Unknown)) {
        Ok(3)
    } else if reports.iter().any(|r| r.verdict.is_unsat()) {
        Ok(1)
    } else {
        Ok(0)
    }
}

fn run_solve(
    problem: &loy::relational::RelProblem,
    f: &RelFormula,
    env: &TypeEnv,
    scope: &Scope,
    opts: &SolveOptions,
) -> Result<Verdict, String> {
    match solve(problem, f, env, scope, opts) {
        Ok(SatResult::Sat(b)) => Ok(Verdict::Sat(Box::new(b))),
        Ok(SatResult::Unsat) => Ok(Verdict::Unsat),
        Err(SolveError::BudgetExceeded { .. }) => Ok(Verdict::Unknown),
        Err(e) => Err(format!("{e}")),
    }
}

fn scope_json(scope: &Scope) -> serde_json::Value {
    serde_json::json!({
        "default": scope.default,
        "perDomain": scope.per_domain,
    })
}

// --- diagnose ---

enum Target {
    Core,
    Invariant(String, usize),
    Method(String, String),
    Formula(String),
}

fn parse_target(text: Option<&str>) -> Result<Target, String> {
    let Some(text) = text else {
        return Ok(Target::Core);
    };
    let text = text.trim();
    if text == "core" {
        return Ok(Target::Core);
    }
    if let Some(rest) = text.strip_prefix("invariant ") {
        let (class, k) = rest
            .split_once('#')
            .ok_or_else(|| format!("invalid invariant target `{rest}`; expected Class#k"))?;
        let k: usize = k
            .parse()
            .map_err(|_| format!("invalid invariant index `{k}`"))?;
        if k == 0 {
            return Err("invariant indices start at 1".into());
        }
        return Ok(Target::Invariant(class.trim().to_string(), k - 1));
    }
    if let Some(rest) = text.strip_prefix("method ") {
        let (class, m) = rest
            .split_once('.')
            .ok_or_else(|| format!("invalid method target `{rest}`; expected Class.method"))?;
        return Ok(Target::Method(class.trim().to_string(), m.trim().to_string()));
    }
    if let Some(rest) = text.strip_prefix("formula ") {
        return Ok(Target::Formula(rest.to_string()));
    }
    Err(format!(
        "unknown target `{text}`; expected core, invariant Class#k, method Class.m, or formula <text>"
    ))
}

fn cmd_diagnose(args: DiagnoseArgs) -> Result<u8, String> {
    let (encoding, scope) = load(&args.common)?;
    if let Some(path) = write_alloy(&encoding, &args.common)? {
        eprintln!("wrote {}", path.display());
    }
    let target = parse_target(args.target.as_deref())?;
    let config = DiagnoseConfig {
        solve: SolveOptions { budget: args.common.budget },
        ..DiagnoseConfig::default()
    };

    let mut legend: Vec<(String, String)> = Vec::new();
    let target_name;
    let tree = match &target {
        Target::Core => {
            target_name = "core".to_string();
            diagnose_core(&encoding.problem, &scope, config).map_err(|e| format!("{e}"))?
        }
        Target::Method(class, method) => {
            target_name = format!("method {class}.{method}");
            if encoding.method(class, method).is_none() {
                return Err(format!("unknown target: no method `{class}.{method}`"));
            }
            legend = method_legend(&encoding, class, method);
            diagnose_method(&encoding, class, method, &scope, config)
                .map_err(|e| format!("{e}"))?
        }
        Target::Invariant(class, index) => {
            target_name = format!("invariant {class}#{}", index + 1);
            if !encoding
                .invariants
                .iter()
                .any(|i| i.class == *class && i.index == *index)
            {
                return Err(format!("unknown target: no invariant {}#{}", class, index + 1));
            }
            diagnose_invariant(&encoding, class, *index, &scope, config)
                .map_err(|e| format!("{e}"))?
        }
        Target::Formula(text) => {
            target_name = format!("formula {text}");
            let f = loy::parse_formula(text).map_err(|e| format!("{e}"))?;
            let diagnostics = typecheck_formula(encoding.resolved(), &f);
            if !diagnostics.is_empty() {
                let mut msg = String::from("the formula is not well-formed:\n");
                for d in &diagnostics {
                    msg.push_str(&format!("  {d}\n"));
                }
                return Err(msg.trim_end().to_string());
            }
            let rel = encoding.encode_formula(&f, EncodeContext::Stateless);
            diagnose_formula(&encoding.problem, &rel, &TypeEnv::new(), &scope, config)
                .map_err(|e| format!("{e}"))?
        }
    };

    match args.common.format {
        Format::Text => {
            println!("scope: {scope}");
            println!("target: {target_name}");
            for (label, text) in &legend {
                println!("where {label} = {text}");
            }
            println!();
            print!(
                "{}",
                render_trace(&tree, &TraceOptions { show_models: args.common.show_model })
            );
        }
        Format::Structured => {
            let doc = serde_json::json!({
                "command": "diagnose",
                "target": target_name,
                "scope": scope_json(&scope),
                "legend": legend
                    .iter()
                    .map(|(l, t)| serde_json::json!({"label": l, "text": t}))
                    .collect::<Vec<_>>(),
                "tree": StructuredNode::from_node(&tree),
            });
            println!("{}", serde_json::to_string_pretty(&doc).unwrap());
        }
    }

    Ok(exit_for_tree(&tree))
}

fn exit_for_tree(tree: &DiagnosisNode) -> u8 {
    if tree.verdict.is_sat() && tree.warnings().is_empty() {
        0
    } else {
        1
    }
}

// --- encode ---

fn cmd_encode(mut args: CommonArgs) -> Result<u8, String> {
    if args.emit_alloy.is_none() {
        args.emit_alloy = Some(Path::new(".").to_path_buf());
    }
    let (encoding, _) = load(&args)?;
    let path = write_alloy(&encoding, &args)?.expect("emit directory is set");
    println!("{}", path.display());
    Ok(0)
}
