//! Access-control enforcement over guest programs.
//!
//! Policies are [`SecurityAutomaton`]s. Four mechanisms enforce them:
//! execution monitoring ([`run_monitor`]), static analysis
//! ([`static_analyze`]), program rewriting ([`rewrite`]) and a combination
//! of analysis and rewriting ([`run_combined`]). Violations truncate the
//! program; nothing past the violating event is ever committed.

mod analysis;
mod automaton;
mod combined;
mod monitor;
mod rewrite;

use std::fmt;
use std::str::FromStr;

pub use analysis::{analyze, static_analyze, Analysis, PointInfo, Witness};
pub use automaton::{
    automaton_step, parse_policy, SecurityAutomaton, State, Violation, MAX_STATES,
};
pub use combined::{run_combined, CombinedRun};
pub use monitor::{longest_safe_prefix, run_monitor};
pub use rewrite::{rewrite, RESERVED_REGISTERS, STATE_REGISTER};

use crate::guest::{GuestError, GuestProgram, Trace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    AcceptedStatically,
    RejectedStatically {
        witness: Witness,
    },
    MonitoredOk(Trace),
    MonitoredTruncated {
        trace: Trace,
        violation_index: usize,
    },
    Rewritten(GuestProgram),
}

impl Verdict {
    /// Committed events and, if truncated, the violating index. `None` for
    /// verdicts that do not execute the program.
    pub fn observable(&self) -> Option<(&[crate::guest::GuestEvent], Option<usize>)> {
        match self {
            Verdict::MonitoredOk(t) => Some((&t.events, None)),
            Verdict::MonitoredTruncated {
                trace,
                violation_index,
            } => Some((&trace.events, Some(*violation_index))),
            _ => None,
        }
    }
}

/// Which enforcement mechanism guards a mission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mechanism {
    Monitor,
    StaticThenRun,
    Rewrite,
    Combined,
}

impl Mechanism {
    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Monitor => "monitor",
            Mechanism::StaticThenRun => "static",
            Mechanism::Rewrite => "rewrite",
            Mechanism::Combined => "combined",
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "monitor" => Ok(Mechanism::Monitor),
            "static" => Ok(Mechanism::StaticThenRun),
            "rewrite" => Ok(Mechanism::Rewrite),
            "combined" => Ok(Mechanism::Combined),
            _ => Err(format!(
                "unknown mechanism `{s}` (monitor|static|rewrite|combined)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("automaton needs 1..=64 states, got {0}")]
    StateCount(usize),
    #[error("unknown state {0}")]
    UnknownState(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnforceError {
    #[error("program uses reserved register r{reg}")]
    ReservedRegister { reg: u8 },
    #[error("instrumented program has {count} instructions, limit is 10000")]
    LimitExceeded { count: usize },
    #[error(transparent)]
    Guest(#[from] GuestError),
}

#[cfg(test)]
mod tests;
