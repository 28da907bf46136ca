use super::program::{count_branches, GuestEvent, GuestProgram, Instruction, REGISTER_COUNT};
use super::GuestError;

/// Largest branch count `enumerate_paths` accepts.
pub const MAX_ENUMERATED_BRANCHES: usize = 20;

pub type Registers = [u8; REGISTER_COUNT as usize];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Completed,
    /// Stopped before committing the event that would have had index `at`.
    Truncated {
        at: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<GuestEvent>,
    pub termination: Termination,
    /// Inlined guards and checks evaluated along the path.
    pub guards_checked: usize,
    pub compute_units: u64,
}

impl Trace {
    fn empty() -> Self {
        Self {
            events: Vec::new(),
            termination: Termination::Completed,
            guards_checked: 0,
            compute_units: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_truncated(&self) -> bool {
        matches!(self.termination, Termination::Truncated { .. })
    }
}

pub(crate) enum Step<'p> {
    Event(GuestEvent, &'p Instruction),
    Branch(&'p [Instruction], &'p [Instruction]),
    Halt,
    GuardHalt,
    End,
}

/// Walks a structured program without recursion. Instrumentation is
/// evaluated in place; everything observable is surfaced as a [`Step`].
#[derive(Clone)]
pub(crate) struct Cursor<'p> {
    stack: Vec<(&'p [Instruction], usize)>,
    pub regs: Registers,
    pub guards: usize,
}

impl<'p> Cursor<'p> {
    pub(crate) fn new(body: &'p [Instruction]) -> Self {
        Self {
            stack: vec![(body, 0)],
            regs: [0; REGISTER_COUNT as usize],
            guards: 0,
        }
    }

    pub(crate) fn enter(&mut self, block: &'p [Instruction]) {
        self.stack.push((block, 0));
    }

    pub(crate) fn next(&mut self) -> Step<'p> {
        loop {
            let Some(&(block, idx)) = self.stack.last() else {
                return Step::End;
            };
            if idx >= block.len() {
                self.stack.pop();
                continue;
            }
            if let Some(top) = self.stack.last_mut() {
                top.1 += 1;
            }
            let instr = &block[idx];
            match instr {
                Instruction::Branch {
                    then_block,
                    else_block,
                    ..
                } => return Step::Branch(then_block, else_block),
                Instruction::Halt => return Step::Halt,
                Instruction::Set { reg, value } => self.regs[*reg as usize] = *value,
                Instruction::Guard { reg, next, .. } => {
                    self.guards += 1;
                    let cur = self.regs[*reg as usize] as usize;
                    match next.get(cur).copied().flatten() {
                        Some(s) => self.regs[*reg as usize] = s,
                        None => return Step::GuardHalt,
                    }
                }
                Instruction::Check { reg, allowed, .. } => {
                    self.guards += 1;
                    let cur = self.regs[*reg as usize];
                    if cur >= 64 || allowed & (1u64 << cur) == 0 {
                        return Step::GuardHalt;
                    }
                }
                other => {
                    let e = other.event().expect("remaining variants emit events");
                    return Step::Event(e, instr);
                }
            }
        }
    }
}

fn units(instr: &Instruction) -> u64 {
    match instr {
        Instruction::Compute(n) => u64::from(*n),
        _ => 0,
    }
}

/// Runs `program`, asking `gate` before committing each event. A `false`
/// from the gate truncates the run at that event.
pub fn execute_with<G>(
    program: &GuestProgram,
    oracle: &[bool],
    mut gate: G,
) -> Result<Trace, GuestError>
where
    G: FnMut(GuestEvent, &mut Registers) -> bool,
{
    let mut cursor = Cursor::new(&program.body);
    let mut trace = Trace::empty();
    let mut consumed = 0;
    loop {
        match cursor.next() {
            Step::Event(e, instr) => {
                if !gate(e, &mut cursor.regs) {
                    trace.termination = Termination::Truncated {
                        at: trace.events.len(),
                    };
                    break;
                }
                trace.events.push(e);
                trace.compute_units += units(instr);
            }
            Step::Branch(then_block, else_block) => {
                let take_then = *oracle
                    .get(consumed)
                    .ok_or(GuestError::OracleExhausted { consumed })?;
                consumed += 1;
                cursor.enter(if take_then { then_block } else { else_block });
            }
            Step::GuardHalt => {
                trace.termination = Termination::Truncated {
                    at: trace.events.len(),
                };
                break;
            }
            Step::Halt | Step::End => break,
        }
    }
    trace.guards_checked = cursor.guards;
    Ok(trace)
}

/// Baseline execution: every event is committed.
pub fn execute_unmonitored(program: &GuestProgram, oracle: &[bool]) -> Result<Trace, GuestError> {
    execute_with(program, oracle, |_, _| true)
}

/// One realizable path: the branch decisions taken and the resulting trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathTrace {
    pub decisions: Vec<bool>,
    pub trace: Trace,
}

/// Every execution path, one per combination of branch outcomes actually
/// encountered (so a nested branch only forks the arm that contains it).
pub fn enumerate_paths(program: &GuestProgram) -> Result<Vec<PathTrace>, GuestError> {
    let count = count_branches(&program.body);
    if count > MAX_ENUMERATED_BRANCHES {
        return Err(GuestError::TooManyBranches { count });
    }
    let mut out = Vec::new();
    let mut work = vec![(
        Cursor::new(&program.body),
        PathTrace {
            decisions: Vec::new(),
            trace: Trace::empty(),
        },
    )];
    while let Some((mut cursor, mut path)) = work.pop() {
        loop {
            match cursor.next() {
                Step::Event(e, instr) => {
                    path.trace.events.push(e);
                    path.trace.compute_units += units(instr);
                }
                Step::Branch(then_block, else_block) => {
                    let mut other = cursor.clone();
                    other.enter(else_block);
                    let mut other_path = path.clone();
                    other_path.decisions.push(false);
                    work.push((other, other_path));
                    cursor.enter(then_block);
                    path.decisions.push(true);
                }
                Step::GuardHalt => {
                    path.trace.termination = Termination::Truncated {
                        at: path.trace.events.len(),
                    };
                    break;
                }
                Step::Halt | Step::End => break,
            }
        }
        path.trace.guards_checked = cursor.guards;
        out.push(path);
    }
    Ok(out)
}
