//! `tomfd`: run simulation scenarios, replay the four-time-out walkthrough,
//! and compare runs against golden traces.
//!
//! Exit codes: 0 success, 1 property violation or trace mismatch, 2 config
//! or usage error.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use tomfd::sim::{parse_config, replay_figure, run, RunOptions, RunOutcome, Scenario};

#[derive(Parser)]
#[command(name = "tomfd", version, about = "Virtual-time runner for time-out managed failure detectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Write the JSON-lines trace here instead of stdout.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Replay the four-time-out A/B/C/D walkthrough through a real manager.
    ReplayFigure {
        /// Also write the replay as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a scenario and compare its trace byte for byte with a golden file.
    Check {
        config: PathBuf,
        golden: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Write the produced trace here as well.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Overrides {
    /// Replace the link seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the run length in ticks.
    #[arg(long)]
    duration: Option<u64>,
    /// Include every non-idle manager cycle in the trace.
    #[arg(long)]
    tom_cycles: bool,
}

enum Failure {
    Config(anyhow::Error),
    Violation(String),
    Other(anyhow::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(e.into())
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn load(path: &Path, o: &Overrides) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)?;
    let mut s = parse_config(&text)
        .with_context(|| path.display().to_string())
        .map_err(Failure::Config)?;
    if let Some(seed) = o.seed {
        s.link.seed = seed;
    }
    if let Some(d) = o.duration {
        if d == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--duration must be positive")));
        }
        s.duration = d;
    }
    Ok(s)
}

fn execute(path: &Path, o: &Overrides) -> Result<RunOutcome, Failure> {
    let s = load(path, o)?;
    Ok(run(&s, RunOptions { record_tom_cycles: o.tom_cycles }))
}

fn summarize(out: &RunOutcome) {
    let st = out.stats;
    eprintln!(
        "ran to tick {}: {} records, {} sent, {} delivered, {} dropped",
        out.end,
        out.trace.len(),
        st.sent,
        st.delivered,
        st.dropped
    );
    for v in &out.violations {
        eprintln!("violation: {v}");
    }
}

fn write_to(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, overrides, trace } => {
            let out = execute(&config, &overrides)?;
            let jsonl = out.trace.to_jsonl();
            match trace {
                Some(p) => write_to(&p, jsonl.as_bytes())?,
                None => io::stdout().lock().write_all(jsonl.as_bytes())?,
            }
            summarize(&out);
            if !out.ok() {
                return Err(Failure::Violation(format!("{} violation(s)", out.violations.len())));
            }
        }
        Command::ReplayFigure { trace } => {
            let replay = replay_figure();
            print!("{replay}");
            if let Some(p) = trace {
                let json = serde_json::to_string_pretty(&replay).context("serializing replay")?;
                write_to(&p, json.as_bytes())?;
            }
        }
        Command::Check { config, golden, overrides, trace } => {
            let want = fs::read_to_string(&golden)
                .with_context(|| format!("reading {}", golden.display()))
                .map_err(Failure::Config)?;
            let out = execute(&config, &overrides)?;
            let got = out.trace.to_jsonl();
            if let Some(p) = trace {
                write_to(&p, got.as_bytes())?;
            }
            summarize(&out);
            if !out.ok() {
                return Err(Failure::Violation(format!("{} violation(s)", out.violations.len())));
            }
            if got != want {
                let line = got
                    .lines()
                    .zip(want.lines())
                    .position(|(a, b)| a != b)
                    .unwrap_or_else(|| got.lines().count().min(want.lines().count()));
                return Err(Failure::Violation(format!(
                    "trace differs from {} at line {}",
                    golden.display(),
                    line + 1
                )));
            }
            eprintln!("trace matches {}", golden.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
