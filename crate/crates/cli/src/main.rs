use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use portalsim::netsim::DEFAULT_BUDGET;
use portalsim::scenario::{self, check_trace, parse_scenario, render_sequence, CheckOutcome, RunError};
use portalsim::trace::parse_trace;

const EXIT_DIFF: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_LIVELOCK: u8 = 3;
const EXIT_HEADER: u8 = 4;

#[derive(Parser)]
#[command(name = "portalsim", version, about = "Deterministic captive-portal network emulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace.
    Run {
        /// Scenario file, or the name of a bundled scenario.
        scenario: String,
        /// Trace output path (stdout if omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Absolute tick limit.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        /// Print the sequence chart to stderr as well.
        #[arg(long)]
        sequence: bool,
    },
    /// Run a scenario and compare its trace with a golden file.
    Check {
        scenario: String,
        golden: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
    /// Render a trace file as a message sequence chart.
    Sequence { trace: PathBuf },
    /// List bundled scenarios.
    List,
}

fn load_scenario(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if !path.exists() {
        if let Some(text) = scenario::bundled(arg) {
            return Ok(text.to_string());
        }
    }
    fs::read_to_string(path).with_context(|| format!("reading {arg}"))
}

/// Parses and runs; on failure prints the diagnostic and returns the exit
/// code along with any partial trace.
fn execute(arg: &str, budget: u64) -> Result<std::result::Result<String, (u8, Option<String>)>> {
    let text = load_scenario(arg)?;
    let sc = match parse_scenario(&text) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{arg}:{e}");
            return Ok(Err((EXIT_INPUT, None)));
        }
    };
    Ok(match sc.run(budget) {
        Ok(net) => Ok(net.trace_text()),
        Err((e @ RunError::Build(_), _)) => {
            eprintln!("{arg}: {e}");
            Err((EXIT_INPUT, None))
        }
        Err((e @ RunError::Livelock(_), net)) => {
            eprintln!("{arg}: {e}");
            Err((EXIT_LIVELOCK, net.map(|n| n.trace_text())))
        }
    })
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { scenario, output, budget, sequence } => match execute(&scenario, budget)? {
            Ok(trace) => {
                emit(output.as_deref(), &trace)?;
                if sequence {
                    let events = parse_trace(&trace).context("re-reading produced trace")?;
                    eprint!("{}", render_sequence(&events));
                }
                Ok(0)
            }
            Err((code, partial)) => {
                if let Some(t) = partial {
                    emit(output.as_deref(), &t)?;
                }
                Ok(code)
            }
        },
        Command::Check { scenario, golden, budget } => {
            let expected = fs::read_to_string(&golden).with_context(|| format!("reading {}", golden.display()))?;
            let actual = match execute(&scenario, budget)? {
                Ok(t) => t,
                Err((code, _)) => return Ok(code),
            };
            match check_trace(&expected, &actual) {
                CheckOutcome::Identical => {
                    println!("identical");
                    Ok(0)
                }
                CheckOutcome::Diverged { line, golden: g, actual: a } => {
                    println!("traces diverge at line {line}");
                    println!("golden: {}", g.as_deref().unwrap_or("<end of trace>"));
                    println!("actual: {}", a.as_deref().unwrap_or("<end of trace>"));
                    Ok(EXIT_DIFF)
                }
                CheckOutcome::HeaderMismatch { golden: g, actual: a } => {
                    println!("trace header mismatch: golden {g:?}, actual {a:?}");
                    Ok(EXIT_HEADER)
                }
            }
        }
        Command::Sequence { trace } => {
            let text = fs::read_to_string(&trace).with_context(|| format!("reading {}", trace.display()))?;
            let events = match parse_trace(&text) {
                Ok(e) => e,
                Err(e) => {
                    eprintln!("{}: {e}", trace.display());
                    return Ok(EXIT_INPUT);
                }
            };
            print!("{}", render_sequence(&events));
            Ok(0)
        }
        Command::List => {
            for (name, _) in scenario::BUNDLED {
                println!("{name}");
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
