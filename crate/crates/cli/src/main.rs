//! `ioext`: relative-degree analysis, feasibility checks, controller
//! synthesis and closed-loop simulation driven by system files.
//!
//! Exit codes: 0 success, 1 unreadable or malformed input, 2 analysis or
//! synthesis failure, 3 infeasible extra-input direction, 4 simulation
//! failure or tolerance miss.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ioext_core::error::SimError;
use ioext_core::lie::{default_max_order, vector_relative_degree, Block, Wrt};
use ioext_core::simulate::{run_closed_loop, trace_metrics, SimConfig, SimulationTrace};
use ioext_core::synthesis::{synthesize, Case, SynthesisDoc, SynthesisResult};
use ioext_core::sysfile::{parse_system_file, SystemFile};

const EXIT_PARSE: u8 = 1;
const EXIT_ANALYSIS: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

#[derive(Parser)]
#[command(name = "ioext", version, about = "Input-output extension of internally controlled systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relative degree of the controlled outputs and the recommended case.
    Analyze { file: PathBuf },
    /// Feasibility of the extra-input direction; exits 3 when infeasible.
    Check { file: PathBuf },
    /// Synthesizes the two-layer controller.
    Synthesize {
        file: PathBuf,
        /// Write the controller document here instead of stdout.
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Runs the closed loop and prints tracking metrics.
    Simulate {
        file: PathBuf,
        /// Trace output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        /// Overrides the seed from the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Controller document written by `synthesize --emit`.
        #[arg(long)]
        controller: Option<PathBuf>,
        /// Runs this many seeds (seed, seed + 1, ...) concurrently.
        #[arg(long, default_value_t = 1)]
        sweep: usize,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { file } => analyze(&file),
        Command::Check { file } => check(&file),
        Command::Synthesize { file, emit } => synthesize_cmd(&file, emit.as_deref()),
        Command::Simulate { file, out, format, seed, controller, sweep } => {
            simulate(&file, out.as_deref(), format, seed, controller.as_deref(), sweep)
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<SystemFile, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let mut sys = parse_system_file(&text)
        .map_err(|e| fail(EXIT_PARSE, format!("{}:{}:{}: {}", path.display(), e.line, e.column, e.message)))?;
    if let Some(stem) = path.file_stem() {
        sys.model.name = stem.to_string_lossy().into_owned();
    }
    Ok(sys)
}

fn print_json(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("values serialize"));
}

fn synth(sys: &SystemFile) -> Result<SynthesisResult, Failure> {
    synthesize(&sys.model, &sys.synthesis).map_err(|e| fail(EXIT_ANALYSIS, e.to_string()))
}

fn analyze(path: &Path) -> Result<u8, Failure> {
    let sys = load(path)?;
    let m = &sys.model;
    let max = sys.synthesis.max_order.unwrap_or_else(|| default_max_order(m));
    let report = vector_relative_degree(m, Block::Y1, Wrt::U, max).map_err(|e| fail(EXIT_ANALYSIS, e.to_string()))?;
    let case = if report.regular { Case::Regular } else { Case::Singular };
    print_json(&json!({
        "schema": "ioext-analysis/v1",
        "model": m.name,
        "dims": { "n": m.n(), "m1": m.m1(), "m2": m.m2() },
        "y1": report,
        "recommended_case": case,
    }));
    Ok(0)
}

fn check(path: &Path) -> Result<u8, Failure> {
    let sys = load(path)?;
    let s = synth(&sys)?;
    let doc = s.to_doc();
    print_json(&json!({
        "schema": "ioext-feasibility/v1",
        "model": sys.model.name,
        "case": s.case,
        "certificate": doc.feasibility,
    }));
    Ok(if s.feasibility.feasible { 0 } else { EXIT_INFEASIBLE })
}

fn synthesize_cmd(path: &Path, emit: Option<&Path>) -> Result<u8, Failure> {
    let sys = load(path)?;
    let doc = synth(&sys)?.to_doc();
    let text = serde_json::to_string_pretty(&doc).expect("documents serialize") + "\n";
    match emit {
        Some(p) => fs::write(p, text).map_err(|e| fail(EXIT_RUNTIME, format!("{}: {e}", p.display())))?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn load_controller(path: &Path) -> Result<SynthesisResult, Failure> {
    let text = fs::read_to_string(path).map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    let doc: SynthesisDoc =
        serde_json::from_str(&text).map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))?;
    doc.to_result().map_err(|e| fail(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn trace_path(out: &Path, run: usize, runs: usize) -> PathBuf {
    if runs == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned());
    let name = match out.extension() {
        Some(ext) => format!("{stem}_{run}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{run}"),
    };
    out.with_file_name(name)
}

fn render(trace: &SimulationTrace, format: Format) -> String {
    match format {
        Format::Csv => trace.to_csv(),
        Format::Json => serde_json::to_string_pretty(&trace.to_json()).expect("traces serialize") + "\n",
    }
}

fn simulate(
    path: &Path,
    out: Option<&Path>,
    format: Option<Format>,
    seed: Option<u64>,
    controller: Option<&Path>,
    sweep: usize,
) -> Result<u8, Failure> {
    if sweep == 0 {
        return Err(fail(EXIT_PARSE, "--sweep must be at least 1"));
    }
    let sys = load(path)?;
    let s = match controller {
        Some(p) => load_controller(p)?,
        None => synth(&sys)?,
    };
    let mut base = sys.simulation.clone().unwrap_or_default();
    if let Some(seed) = seed {
        base.seed = seed;
    }
    let format = format.unwrap_or(match out.and_then(Path::extension) {
        Some(ext) if ext == "json" => Format::Json,
        _ => Format::Csv,
    });
    let configs: Vec<SimConfig> =
        (0..sweep).map(|k| SimConfig { seed: base.seed + k as u64, ..base.clone() }).collect();
    let results: Vec<Result<SimulationTrace, SimError>> = if sweep == 1 {
        vec![run_closed_loop(&s, &sys.trajectory, &configs[0])]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> =
                configs.iter().map(|c| scope.spawn(|| run_closed_loop(&s, &sys.trajectory, c))).collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
        })
    };

    let mut code = 0;
    let mut runs = Vec::with_capacity(sweep);
    for (k, (cfg, result)) in configs.iter().zip(results).enumerate() {
        match result {
            Ok(trace) => {
                let metrics = trace_metrics(&trace);
                let converged = metrics.final_error_norm < sys.tolerance;
                let written = match out {
                    Some(o) => {
                        let p = trace_path(o, k, sweep);
                        fs::write(&p, render(&trace, format))
                            .map_err(|e| fail(EXIT_RUNTIME, format!("{}: {e}", p.display())))?;
                        Some(p.display().to_string())
                    }
                    None => None,
                };
                if !converged {
                    eprintln!(
                        "error: seed {}: final error norm {:e} exceeds tolerance {:e}",
                        cfg.seed, metrics.final_error_norm, sys.tolerance
                    );
                    code = EXIT_RUNTIME;
                }
                runs.push(json!({ "seed": cfg.seed, "converged": converged, "metrics": metrics, "trace": written }));
            }
            Err(e) => {
                eprintln!("error: seed {}: {e}", cfg.seed);
                code = EXIT_RUNTIME;
                runs.push(json!({ "seed": cfg.seed, "converged": false, "error": e.to_string() }));
            }
        }
    }
    print_json(&json!({
        "schema": "ioext-metrics/v1",
        "model": sys.model.name,
        "case": s.case,
        "tolerance": sys.tolerance,
        "runs": runs,
    }));
    Ok(code)
}
