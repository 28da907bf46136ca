//! Command-line front end. Data goes to files or the output stream,
//! diagnostics to the error stream.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::enforcement::{
    parse_policy, rewrite, run_combined, run_monitor, static_analyze, Mechanism, PolicyError,
    Verdict,
};
use crate::guest::{execute_unmonitored, parse_program, GuestError, GuestEvent, Termination};
use crate::sim::{load_scenario, run, RunOutput, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    /// Scenario, policy, program or usage error.
    InputError = 1,
    GoldenMismatch = 2,
    AuditFailure = 3,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, Parser)]
#[command(name = "gridtrust", version, about = "Volunteer-grid trust simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario and write its trace and metrics.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trace_out: Option<PathBuf>,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        #[arg(long)]
        mechanism: Option<Mechanism>,
    },
    /// Re-run a scenario and compare its trace with a golden file.
    Verify {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        golden: PathBuf,
    },
    /// Enforce a policy on one program and print the verdict.
    CheckPolicy {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        program: PathBuf,
        #[arg(long)]
        mode: Mechanism,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> ExitStatus
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let help = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let text = e.render().to_string();
            if help {
                let _ = out.write_all(text.as_bytes());
                return ExitStatus::Success;
            }
            let _ = err.write_all(text.as_bytes());
            return ExitStatus::InputError;
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            trace_out,
            metrics_out,
            mechanism,
        } => cmd_run(
            &scenario,
            seed,
            trace_out.as_deref(),
            metrics_out.as_deref(),
            mechanism,
            out,
        ),
        Command::Verify { scenario, golden } => cmd_verify(&scenario, &golden),
        Command::CheckPolicy {
            policy,
            program,
            mode,
        } => cmd_check_policy(&policy, &program, mode, out),
    };
    match result {
        Ok(()) => ExitStatus::Success,
        Err(Failure(status, message)) => {
            let _ = writeln!(err, "gridtrust: {message}");
            status
        }
    }
}

#[derive(Debug)]
struct Failure(ExitStatus, String);

fn input(message: String) -> Failure {
    Failure(ExitStatus::InputError, message)
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    let text = read(path)?;
    load_scenario(&text).map_err(|e| input(format!("{}:{}: {}", path.display(), e.line, e.message)))
}

fn audited(out: RunOutput) -> Result<RunOutput, Failure> {
    if out.audit.is_clean() {
        Ok(out)
    } else {
        Err(Failure(
            ExitStatus::AuditFailure,
            format!("audit failure: {}", out.audit),
        ))
    }
}

fn cmd_run(
    scenario: &Path,
    seed: Option<u64>,
    trace_out: Option<&Path>,
    metrics_out: Option<&Path>,
    mechanism: Option<Mechanism>,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let mut s = load(scenario)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    if let Some(m) = mechanism {
        s.mechanism = m;
    }
    let result = run(&s);
    let trace = result.trace.to_string();
    let metrics = result.metrics.to_string();
    let stdout = |text: &str, out: &mut dyn Write| {
        out.write_all(text.as_bytes())
            .map_err(|e| input(format!("standard output: {e}")))
    };
    match trace_out {
        Some(p) => write(p, &trace)?,
        None => stdout(&trace, out)?,
    }
    match metrics_out {
        Some(p) => write(p, &metrics)?,
        None => stdout(&metrics, out)?,
    }
    audited(result).map(drop)
}

fn cmd_verify(scenario: &Path, golden: &Path) -> Result<(), Failure> {
    let expected = read(golden)?;
    let s = load(scenario)?;
    let result = audited(run(&s))?;
    let actual = result.trace.to_string();
    match first_divergence(&expected, &actual) {
        None => Ok(()),
        Some(line) => Err(Failure(
            ExitStatus::GoldenMismatch,
            format!("{}:{line}: trace diverges from golden", golden.display()),
        )),
    }
}

/// 1-based number of the first line where the texts differ.
pub fn first_divergence(expected: &str, actual: &str) -> Option<usize> {
    if expected == actual {
        return None;
    }
    let mut a = expected.split_inclusive('\n');
    let mut b = actual.split_inclusive('\n');
    let mut line = 1;
    loop {
        match (a.next(), b.next()) {
            (Some(x), Some(y)) if x == y => line += 1,
            _ => return Some(line),
        }
    }
}

fn events(es: &[GuestEvent]) -> String {
    if es.is_empty() {
        "-".to_string()
    } else {
        es.iter().map(|e| e.name()).collect::<Vec<_>>().join(",")
    }
}

fn cmd_check_policy(
    policy: &Path,
    program: &Path,
    mode: Mechanism,
    out: &mut dyn Write,
) -> Result<(), Failure> {
    let a = parse_policy(&read(policy)?).map_err(|e| match e {
        PolicyError::Syntax { line, message } => {
            input(format!("{}:{line}: {message}", policy.display()))
        }
        other => input(format!("{}: {other}", policy.display())),
    })?;
    let p = parse_program(&read(program)?).map_err(|e| match e {
        GuestError::Syntax { line, message } => {
            input(format!("{}:{line}: {message}", program.display()))
        }
        other => input(format!("{}: {other}", program.display())),
    })?;
    // Every branch takes its first arm.
    let oracle = vec![true; p.branch_count()];
    let program_err = |e: &dyn std::fmt::Display| input(format!("{}: {e}", program.display()));

    let mut lines: Vec<(&str, String)> = Vec::new();
    let executed = match mode {
        Mechanism::StaticThenRun => {
            match static_analyze(&a, &p) {
                Verdict::RejectedStatically { witness } => {
                    let decisions: Vec<_> = witness
                        .decisions
                        .iter()
                        .map(|d| u8::from(*d).to_string())
                        .collect();
                    lines.push((
                        "decisions",
                        if decisions.is_empty() {
                            "-".into()
                        } else {
                            decisions.join(",")
                        },
                    ));
                    lines.push(("verdict", "rejected_static".into()));
                    lines.push(("witness", events(&witness.events)));
                }
                _ => lines.push(("verdict", "accepted_static".into())),
            }
            None
        }
        Mechanism::Monitor => Some(run_monitor(&a, &p, &oracle).map_err(|e| program_err(&e))?),
        Mechanism::Rewrite => {
            let Verdict::Rewritten(q) = rewrite(&a, &p).map_err(|e| program_err(&e))? else {
                unreachable!("rewrite only produces rewritten programs")
            };
            let guards = q.instruction_count() - p.instruction_count() - 1;
            lines.push(("guards", guards.to_string()));
            let t = execute_unmonitored(&q, &oracle).map_err(|e| program_err(&e))?;
            Some(match t.termination {
                Termination::Completed => Verdict::MonitoredOk(t),
                Termination::Truncated { at } => Verdict::MonitoredTruncated {
                    trace: t,
                    violation_index: at,
                },
            })
        }
        Mechanism::Combined => {
            let r = run_combined(&a, &p, &oracle).map_err(|e| program_err(&e))?;
            lines.push(("guards", r.guard_count.to_string()));
            Some(r.verdict)
        }
    };
    if let Some(v) = executed {
        match v.observable() {
            Some((es, index)) => {
                lines.push(("events", events(es)));
                match index {
                    Some(i) => {
                        lines.push(("index", i.to_string()));
                        lines.push(("verdict", "truncated".into()));
                    }
                    None => lines.push(("verdict", "ok".into())),
                }
            }
            None => unreachable!("executions report observable traces"),
        }
    }
    lines.sort();
    let mut text = String::new();
    for (k, v) in lines {
        text.push_str(&format!("{k}={v}\n"));
    }
    out.write_all(text.as_bytes())
        .map_err(|e| input(format!("standard output: {e}")))
}
