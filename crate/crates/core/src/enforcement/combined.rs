use super::automaton::SecurityAutomaton;
use super::rewrite::{instrument_residual, STATE_REGISTER};
use super::{EnforceError, State, Verdict};
use crate::guest::{execute_unmonitored, execute_with, GuestProgram, Termination};

/// Result of combined enforcement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombinedRun {
    pub verdict: Verdict,
    /// Checks inlined at points static analysis could not prove safe.
    pub guard_count: usize,
    /// The program as executed; equal to the input when nothing was guarded.
    pub program: GuestProgram,
}

/// Static analysis first; provably safe points run unguarded and only the
/// residual points get inlined checks. A thin monitor tracks the automaton
/// state in the reserved register so the checks can read it.
pub fn run_combined(
    a: &SecurityAutomaton,
    program: &GuestProgram,
    oracle: &[bool],
) -> Result<CombinedRun, EnforceError> {
    let (instrumented, guard_count) = instrument_residual(a, program)?;
    let (trace, program) = if guard_count == 0 {
        (execute_unmonitored(program, oracle)?, program.clone())
    } else {
        let trace = execute_with(&instrumented, oracle, |e, regs| {
            let cur = State(regs[STATE_REGISTER as usize]);
            match a.transition(cur, e) {
                Some(next) => {
                    regs[STATE_REGISTER as usize] = next.0;
                    true
                }
                // Unreachable when the analysis is sound: every point where
                // this could happen carries a check.
                None => {
                    debug_assert!(false, "unguarded violation at state {cur:?} on {e}");
                    false
                }
            }
        })?;
        (trace, instrumented)
    };
    let verdict = match trace.termination {
        Termination::Completed => Verdict::MonitoredOk(trace),
        Termination::Truncated { at } => Verdict::MonitoredTruncated {
            trace,
            violation_index: at,
        },
    };
    Ok(CombinedRun {
        verdict,
        guard_count,
        program,
    })
}
