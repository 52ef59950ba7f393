//! `wmm`: litmus runner for the IMM / Weakestmo workbench.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use wmm::es::EnumBounds;
use wmm::graph::ExecutionGraph;
use wmm::lang::{enumerate_executions, parse_litmus, LangError, Program, Val};
use wmm::models::{check_immsc, map_to_armv8, map_to_tso, ModelError, TsoScheme};
use wmm::runner::{
    evaluate, implication_violations, verdict, Model, Options, RunError, TestOutcome,
};
use wmm::simulation::{run_simulation_observed, SimError};

const SCHEMA: u32 = 1;

#[derive(Parser)]
#[command(
    name = "wmm",
    version,
    about = "Weak memory model workbench: IMM, IMM_SC, RC11, TSO, ARMv8 and Weakestmo"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate the `exists` clauses of litmus files under one model.
    Check {
        files: Vec<PathBuf>,
        #[arg(long)]
        model: ModelArg,
        #[command(flatten)]
        common: Common,
        /// Weakestmo bound on non-init events.
        #[arg(long)]
        max_events: Option<usize>,
        /// Weakestmo bound on forks per thread (`none` for unbounded).
        #[arg(long)]
        max_forks: Option<String>,
    },
    /// Run the IMM-to-Weakestmo simulation on every IMM_SC-consistent execution.
    Simulate {
        files: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Print one JSON record per simulation step.
        #[arg(long)]
        trace: bool,
        /// Write the event structure after every step as DOT files.
        #[arg(long, value_name = "DIR")]
        dot_out: Option<PathBuf>,
    },
    /// Allowed outcomes per model side by side, plus compilation implication checks.
    Diff {
        files: Vec<PathBuf>,
        /// Comma-separated: imm, immsc, rc11, tso (both schemes), tso:<scheme>, armv8, weakestmo.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "imm,immsc,rc11,tso,armv8"
        )]
        models: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Export execution graphs as DOT.
    Dot {
        file: PathBuf,
        /// Keep only executions consistent under this model.
        #[arg(long)]
        model: Option<ModelArg>,
        #[command(flatten)]
        common: Common,
        /// One file per execution in DIR instead of stdout.
        #[arg(long, value_name = "DIR")]
        dot_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Compilation scheme for tso/armv8 (also the hardware graph for `dot`).
    #[arg(long)]
    map: Option<MapArg>,
    /// Value domain for reads, overriding the file's `values` line.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<Val>>,
    /// Add psc_base to IMM_SC's thin-air acyclicity.
    #[arg(long)]
    strict_psc: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Imm,
    Immsc,
    Rc11,
    Tso,
    Armv8,
    Weakestmo,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MapArg {
    FenceAfterW,
    FenceBeforeR,
    Armv8,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse { path: String, source: LangError },
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("{0}")]
    Usage(String),
}

fn resolve(model: ModelArg, map: Option<MapArg>) -> Result<Model, CliError> {
    Ok(match (model, map) {
        (ModelArg::Tso, Some(MapArg::FenceAfterW)) => Model::Tso(TsoScheme::FenceAfterW),
        (ModelArg::Tso, Some(MapArg::FenceBeforeR)) => Model::Tso(TsoScheme::FenceBeforeR),
        (ModelArg::Tso, _) => {
            return Err(CliError::Usage(
                "--model tso needs --map fence-after-w|fence-before-r".into(),
            ))
        }
        (ModelArg::Armv8, None | Some(MapArg::Armv8)) => Model::Armv8,
        (ModelArg::Armv8, _) => {
            return Err(CliError::Usage("--model armv8 takes --map armv8".into()))
        }
        (m, Some(_)) => {
            return Err(CliError::Usage(format!(
                "--map only applies to tso and armv8, not {}",
                m.to_possible_value()
                    .expect("no skipped variants")
                    .get_name()
            )))
        }
        (ModelArg::Imm, None) => Model::Imm,
        (ModelArg::Immsc, None) => Model::ImmSc,
        (ModelArg::Rc11, None) => Model::Rc11,
        (ModelArg::Weakestmo, None) => Model::Weakestmo,
    })
}

fn load(path: &Path, values: &Option<Vec<Val>>) -> Result<Program, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut p = parse_litmus(&text).map_err(|source| CliError::Parse {
        path: path.display().to_string(),
        source,
    })?;
    if let Some(v) = values {
        p.values = v.clone();
    }
    if p.name.is_none() {
        p.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    Ok(p)
}

fn test_name(p: &Program) -> String {
    p.name.clone().unwrap_or_else(|| "unnamed".into())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, contents).map_err(io)
}

fn print_json(command: &str, results: Vec<Value>) {
    let doc = json!({"schema": SCHEMA, "command": command, "results": results});
    println!(
        "{}",
        serde_json::to_string_pretty(&doc).expect("json values serialize")
    );
}

fn parse_forks(s: &Option<String>) -> Result<Option<Option<usize>>, CliError> {
    match s.as_deref() {
        None => Ok(None),
        Some("none") => Ok(Some(None)),
        Some(n) => n
            .parse()
            .map(|k| Some(Some(k)))
            .map_err(|_| CliError::Usage(format!("bad --max-forks `{n}`"))),
    }
}

// ------------------------------------------------------------------ check

fn cmd_check(
    files: &[PathBuf],
    model: ModelArg,
    common: &Common,
    max_events: Option<usize>,
    max_forks: &Option<String>,
) -> Result<bool, CliError> {
    let model = resolve(model, common.map)?;
    let forks = parse_forks(max_forks)?;
    let results: Vec<Result<TestOutcome, CliError>> = files
        .par_iter()
        .map(|f| {
            let p = load(f, &common.values)?;
            let bounds = (max_events.is_some() || forks.is_some()).then(|| {
                let d = wmm::es::default_bounds(&p);
                EnumBounds {
                    max_events: max_events.unwrap_or(d.max_events),
                    max_forks: forks.unwrap_or(d.max_forks),
                }
            });
            let opts = Options {
                strict_psc: common.strict_psc,
                bounds,
            };
            Ok(evaluate(&p, model, opts)?)
        })
        .collect();
    let outs: Vec<TestOutcome> = results.into_iter().collect::<Result<_, _>>()?;
    let ok = outs.iter().all(TestOutcome::matches);
    if common.json {
        print_json("check", outs.iter().map(|o| json!(o)).collect());
    } else {
        for o in &outs {
            let (what, good) = if model == Model::Weakestmo {
                ("structures", "distinct outcomes")
            } else {
                ("candidates", "consistent")
            };
            println!(
                "{} under {}: {} {what}, {} {good}",
                o.name, o.model, o.candidates, o.consistent
            );
            for c in &o.clauses {
                let verdict = if c.allowed { "allowed" } else { "forbidden" };
                let note = match c.expected {
                    None => String::new(),
                    Some(e) if e == c.allowed => "  (as expected)".into(),
                    Some(e) => format!(
                        "  MISMATCH: expected {}",
                        if e { "allow" } else { "forbid" }
                    ),
                };
                println!("  exists {}: {verdict}{note}", c.clause);
            }
        }
    }
    Ok(ok)
}

// --------------------------------------------------------------- simulate

struct ExecReport {
    index: usize,
    outcome: Result<SimSummary, SimError>,
    trace: Vec<Value>,
    dots: Vec<String>,
}

struct SimSummary {
    events: usize,
    steps: usize,
    fallbacks: usize,
}

fn simulate_one(
    p: &Program,
    g: &ExecutionGraph,
    index: usize,
    trace: bool,
    dots: bool,
) -> ExecReport {
    let mut snapshots = Vec::new();
    let run = run_simulation_observed(p, g, |_, st| {
        if dots {
            snapshots.push(st.es.to_dot());
        }
    });
    let mut log = Vec::new();
    let outcome = run.map(|r| {
        if trace {
            log = r.records.iter().map(|rec| rec.to_json()).collect();
        }
        SimSummary {
            events: r.es.size(),
            steps: r.records.len(),
            fallbacks: r.records.iter().map(|rec| rec.fallbacks.len()).sum(),
        }
    });
    ExecReport {
        index,
        outcome,
        trace: log,
        dots: snapshots,
    }
}

fn cmd_simulate(
    files: &[PathBuf],
    common: &Common,
    trace: bool,
    dot_out: &Option<PathBuf>,
) -> Result<bool, CliError> {
    let mut all_ok = true;
    let mut json_results = Vec::new();
    for f in files {
        let p = load(f, &common.values)?;
        let name = test_name(&p);
        let gs = enumerate_executions(&p)?;
        let targets: Vec<(usize, &ExecutionGraph)> = gs
            .iter()
            .enumerate()
            .filter(|(_, g)| check_immsc(g).consistent)
            .collect();
        let reports: Vec<ExecReport> = targets
            .par_iter()
            .map(|(i, g)| simulate_one(&p, g, *i, trace, dot_out.is_some()))
            .collect();
        let failed = reports.iter().filter(|r| r.outcome.is_err()).count();
        all_ok &= failed == 0;
        if let Some(dir) = dot_out {
            for r in &reports {
                for (k, d) in r.dots.iter().enumerate() {
                    write_file(
                        &dir.join(&name)
                            .join(format!("exec{}", r.index))
                            .join(format!("step{k:02}.dot")),
                        d,
                    )?;
                }
            }
        }
        if common.json {
            let execs: Vec<Value> = reports
                .iter()
                .map(|r| {
                    let mut v = match &r.outcome {
                        Ok(s) => json!({"execution": r.index, "ok": true, "events": s.events, "steps": s.steps, "fallbacks": s.fallbacks}),
                        Err(e) => json!({"execution": r.index, "ok": false, "error": e.to_string()}),
                    };
                    if trace {
                        v["trace"] = Value::Array(r.trace.clone());
                    }
                    v
                })
                .collect();
            json_results.push(json!({
                "name": name,
                "candidates": gs.len(),
                "simulated": reports.len(),
                "failed": failed,
                "executions": execs,
            }));
            continue;
        }
        println!(
            "{name}: {} of {} candidates IMM_SC-consistent, {} simulated, {failed} failed",
            reports.len(),
            gs.len(),
            reports.len() - failed
        );
        for r in &reports {
            match &r.outcome {
                Ok(s) => println!(
                    "  execution {}: ok, {} steps, final structure {} events{}",
                    r.index,
                    s.steps,
                    s.events,
                    if s.fallbacks > 0 {
                        format!(", {} fallback justifications", s.fallbacks)
                    } else {
                        String::new()
                    }
                ),
                Err(e) => println!("  execution {}: FAILED: {e}", r.index),
            }
            for rec in &r.trace {
                println!("    {rec}");
            }
        }
    }
    if common.json {
        print_json("simulate", json_results);
    }
    Ok(all_ok)
}

// ------------------------------------------------------------------- diff

fn diff_models(names: &[String]) -> Result<Vec<Model>, CliError> {
    let mut out = Vec::new();
    for n in names {
        match n.as_str() {
            "tso" => {
                out.push(Model::Tso(TsoScheme::FenceAfterW));
                out.push(Model::Tso(TsoScheme::FenceBeforeR));
            }
            other => out.push(other.parse()?),
        }
    }
    Ok(out)
}

fn cmd_diff(files: &[PathBuf], models: &[String], common: &Common) -> Result<bool, CliError> {
    let models = diff_models(models)?;
    let opts = Options {
        strict_psc: common.strict_psc,
        bounds: None,
    };
    let mut all_ok = true;
    let mut json_results = Vec::new();
    for f in files {
        let p = load(f, &common.values)?;
        let name = test_name(&p);
        let outs: Vec<TestOutcome> = models
            .par_iter()
            .map(|m| evaluate(&p, *m, opts))
            .collect::<Result<_, _>>()?;
        let gs = enumerate_executions(&p)?;
        let violations: Vec<(usize, Vec<String>)> = gs
            .par_iter()
            .enumerate()
            .map(|(i, g)| implication_violations(g).map(|v| (i, v)))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        all_ok &= violations.is_empty();
        if common.json {
            let table: Vec<Value> = p
                .exists
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let cells: serde_json::Map<String, Value> = outs
                        .iter()
                        .map(|o| (o.model.clone(), json!(o.clauses[k].allowed)))
                        .collect();
                    json!({"clause": c.text, "allowed": cells})
                })
                .collect();
            let viol: Vec<Value> = violations
                .iter()
                .map(|(i, v)| json!({"execution": i, "violations": v}))
                .collect();
            json_results.push(json!({
                "name": name,
                "candidates": gs.len(),
                "table": table,
                "implication_violations": viol,
            }));
            continue;
        }
        println!("{name} ({} candidates)", gs.len());
        let width = p
            .exists
            .iter()
            .map(|c| c.text.len())
            .max()
            .unwrap_or(0)
            .max(6);
        let mut header = format!("  {:width$}", "clause");
        for o in &outs {
            header.push_str(&format!("  {:>18}", o.model));
        }
        println!("{header}");
        for (k, c) in p.exists.iter().enumerate() {
            let mut row = format!("  {:width$}", c.text);
            for o in &outs {
                row.push_str(&format!(
                    "  {:>18}",
                    if o.clauses[k].allowed {
                        "allow"
                    } else {
                        "forbid"
                    }
                ));
            }
            println!("{row}");
        }
        if violations.is_empty() {
            println!("  implication violations: none");
        } else {
            for (i, v) in &violations {
                println!("  implication violation in execution {i}: {}", v.join("; "));
            }
        }
    }
    if common.json {
        print_json("diff", json_results);
    }
    Ok(all_ok)
}

// -------------------------------------------------------------------- dot

fn cmd_dot(
    file: &Path,
    model: Option<ModelArg>,
    common: &Common,
    dot_out: &Option<PathBuf>,
) -> Result<bool, CliError> {
    let p = load(file, &common.values)?;
    let model = match model {
        // --map picks the exported graph; it only feeds the filter for hardware models.
        Some(m @ (ModelArg::Tso | ModelArg::Armv8)) => Some(resolve(m, common.map)?),
        Some(m) => Some(resolve(m, None)?),
        None => None,
    };
    let opts = Options {
        strict_psc: common.strict_psc,
        bounds: None,
    };
    if model == Some(Model::Weakestmo) {
        return Err(CliError::Usage(
            "dot exports execution graphs; weakestmo has no graph filter".into(),
        ));
    }
    let mut out = String::new();
    for (i, g) in enumerate_executions(&p)?.iter().enumerate() {
        if let Some(m) = model {
            if !verdict(g, m, opts)?.consistent {
                continue;
            }
        }
        let dot = match common.map {
            None => g.to_dot(),
            Some(MapArg::FenceAfterW) => map_to_tso(g, TsoScheme::FenceAfterW)?.to_dot(),
            Some(MapArg::FenceBeforeR) => map_to_tso(g, TsoScheme::FenceBeforeR)?.to_dot(),
            Some(MapArg::Armv8) => map_to_armv8(g)?.to_dot(),
        };
        match dot_out {
            Some(dir) => write_file(&dir.join(format!("{}-exec{i}.dot", test_name(&p))), &dot)?,
            None => out.push_str(&dot),
        }
    }
    print!("{out}");
    Ok(true)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match &cli.cmd {
        Cmd::Check {
            files,
            model,
            common,
            max_events,
            max_forks,
        } => cmd_check(files, *model, common, *max_events, max_forks),
        Cmd::Simulate {
            files,
            common,
            trace,
            dot_out,
        } => cmd_simulate(files, common, *trace, dot_out),
        Cmd::Diff {
            files,
            models,
            common,
        } => cmd_diff(files, models, common),
        Cmd::Dot {
            file,
            model,
            common,
            dot_out,
        } => cmd_dot(file, *model, common, dot_out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
