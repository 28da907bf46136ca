use super::analysis::analyze;
use super::automaton::SecurityAutomaton;
use super::{EnforceError, Verdict};
use crate::guest::{GuestProgram, Instruction, MAX_INSTRUCTIONS};

/// Register holding the automaton state in instrumented programs.
pub const STATE_REGISTER: u8 = 14;
/// Registers reserved for instrumentation; guest code must not name them.
pub const RESERVED_REGISTERS: [u8; 2] = [14, 15];

pub(crate) fn check_reserved(program: &GuestProgram) -> Result<(), EnforceError> {
    let mut found = None;
    crate::guest::walk(&program.body, &mut |i| {
        if found.is_some() {
            return;
        }
        if i.is_instrumentation() {
            found = Some(i.register().unwrap_or(STATE_REGISTER));
        } else if let Some(r) = i.register().filter(|r| RESERVED_REGISTERS.contains(r)) {
            found = Some(r);
        }
    });
    match found {
        Some(reg) => Err(EnforceError::ReservedRegister { reg }),
        None => Ok(()),
    }
}

/// Copies `block`, inserting `make(index, instr)` before any instruction for
/// which it returns something. `index` is the pre-order position in the
/// original program.
pub(crate) fn instrument(
    block: &[Instruction],
    next_index: &mut usize,
    make: &mut impl FnMut(usize, &Instruction) -> Option<Instruction>,
) -> Vec<Instruction> {
    let mut out = Vec::with_capacity(block.len() * 2);
    for instr in block {
        let index = *next_index;
        *next_index += 1;
        if let Some(g) = make(index, instr) {
            out.push(g);
        }
        match instr {
            Instruction::Branch {
                cond,
                then_block,
                else_block,
            } => {
                let then_block = instrument(then_block, next_index, make);
                let else_block = instrument(else_block, next_index, make);
                out.push(Instruction::Branch {
                    cond: *cond,
                    then_block,
                    else_block,
                });
            }
            other => out.push(other.clone()),
        }
    }
    out
}

pub(crate) fn finish(
    body: Vec<Instruction>,
    declared: &GuestProgram,
) -> Result<GuestProgram, EnforceError> {
    let program = GuestProgram {
        body,
        declared_caps: declared.declared_caps,
    };
    let count = program.instruction_count();
    if count > MAX_INSTRUCTIONS {
        return Err(EnforceError::LimitExceeded { count });
    }
    Ok(program)
}

/// Program rewriting: inlines a state-tracking guard before every
/// event-emitting instruction. The result needs no external monitor.
pub fn rewrite(a: &SecurityAutomaton, program: &GuestProgram) -> Result<Verdict, EnforceError> {
    check_reserved(program)?;
    let n = a.state_count();
    let mut idx = 0;
    let mut body = vec![Instruction::Set {
        reg: STATE_REGISTER,
        value: a.initial().0,
    }];
    body.extend(instrument(&program.body, &mut idx, &mut |_, instr| {
        instr.event().map(|event| Instruction::Guard {
            reg: STATE_REGISTER,
            event,
            next: (0..n)
                .map(|s| a.transition(super::State(s as u8), event).map(|t| t.0))
                .collect(),
        })
    }));
    Ok(Verdict::Rewritten(finish(body, program)?))
}

/// Instruments only the points where some reachable state forbids the
/// event, with a check against the permitted-state mask.
pub(crate) fn instrument_residual(
    a: &SecurityAutomaton,
    program: &GuestProgram,
) -> Result<(GuestProgram, usize), EnforceError> {
    check_reserved(program)?;
    let analysis = analyze(a, program);
    let guarded: std::collections::BTreeSet<usize> = analysis
        .points
        .iter()
        .filter(|p| p.needs_guard())
        .map(|p| p.index)
        .collect();
    let mut idx = 0;
    let mut body = vec![Instruction::Set {
        reg: STATE_REGISTER,
        value: a.initial().0,
    }];
    body.extend(instrument(&program.body, &mut idx, &mut |i, instr| {
        let event = instr.event()?;
        guarded.contains(&i).then(|| Instruction::Check {
            reg: STATE_REGISTER,
            event,
            allowed: a.permitting(event),
        })
    }));
    Ok((finish(body, program)?, guarded.len()))
}
