use super::automaton::{automaton_step, SecurityAutomaton};
use super::Verdict;
use crate::guest::{execute_with, GuestError, GuestEvent, GuestProgram, Termination};

/// Greatest `k` such that the first `k` events of `events` never hit a
/// missing transition from the initial state.
pub fn longest_safe_prefix(a: &SecurityAutomaton, events: &[GuestEvent]) -> usize {
    let mut state = a.initial();
    for (i, e) in events.iter().enumerate() {
        match automaton_step(a, state, *e) {
            Ok(next) => state = next,
            Err(_) => return i,
        }
    }
    events.len()
}

/// Execution monitoring: each event is checked against the automaton before
/// it is committed; the first violation halts the program.
pub fn run_monitor(
    a: &SecurityAutomaton,
    program: &GuestProgram,
    oracle: &[bool],
) -> Result<Verdict, GuestError> {
    let mut state = a.initial();
    let trace = execute_with(program, oracle, |e, _| match automaton_step(a, state, e) {
        Ok(next) => {
            state = next;
            true
        }
        Err(_) => false,
    })?;
    Ok(match trace.termination {
        Termination::Completed => Verdict::MonitoredOk(trace),
        Termination::Truncated { at } => Verdict::MonitoredTruncated {
            trace,
            violation_index: at,
        },
    })
}
