//! The miniature task language executed on provider nodes.
//!
//! Programs are structured (branches only, no jumps), so every program has
//! finitely many paths. Branch outcomes come from an explicit oracle rather
//! than host state, which keeps every run replayable.

mod exec;
mod parse;
mod program;

pub use exec::{
    enumerate_paths, execute_unmonitored, execute_with, PathTrace, Registers, Termination, Trace,
    MAX_ENUMERATED_BRANCHES,
};
#[allow(unused_imports)]
pub(crate) use exec::{Cursor, Step};
pub use parse::parse_program;
pub use program::{
    count_branches, count_events, count_instructions, required_caps_of, walk, GuestEvent,
    GuestProgram, Instruction, MAX_INSTRUCTIONS, REGISTER_COUNT,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GuestError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("program has {count} instructions, limit is 10000")]
    LimitExceeded { count: usize },
    #[error("branch oracle exhausted after {consumed} values")]
    OracleExhausted { consumed: usize },
    #[error("{count} branches exceed the enumeration bound of 20")]
    TooManyBranches { count: usize },
}

#[cfg(test)]
pub(crate) mod tests;
