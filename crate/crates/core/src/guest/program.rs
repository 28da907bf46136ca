use std::fmt;
use std::str::FromStr;

use crate::federation::{CapSet, Capability};
use crate::ids::NodeId;

/// Registers and regions are indexed below this bound.
pub const REGISTER_COUNT: u8 = 16;
pub const MAX_INSTRUCTIONS: usize = 10_000;

/// Security-relevant events a guest program emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GuestEvent {
    Read,
    Write,
    Compute,
    Send,
}

impl GuestEvent {
    pub const ALL: [GuestEvent; 4] = [
        GuestEvent::Read,
        GuestEvent::Write,
        GuestEvent::Compute,
        GuestEvent::Send,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            GuestEvent::Read => "read",
            GuestEvent::Write => "write",
            GuestEvent::Compute => "compute",
            GuestEvent::Send => "send",
        }
    }

    /// The capability a session must hold to emit this event.
    pub fn capability(self) -> Capability {
        match self {
            GuestEvent::Read => Capability::ReadHostData,
            GuestEvent::Write => Capability::WriteHostData,
            GuestEvent::Compute => Capability::Compute,
            GuestEvent::Send => Capability::SendMessage,
        }
    }
}

impl fmt::Display for GuestEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GuestEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GuestEvent::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown event `{s}`"))
    }
}

/// One step of a structured guest program.
///
/// `Set`, `Guard` and `Check` are instrumentation inserted by the rewriter;
/// they never emit events.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instruction {
    Read(u8),
    Write(u8),
    Compute(u32),
    Send(NodeId),
    Branch {
        cond: u8,
        then_block: Vec<Instruction>,
        else_block: Vec<Instruction>,
    },
    Halt,
    /// `reg := value`
    Set {
        reg: u8,
        value: u8,
    },
    /// Halt unless `next[reg]` is defined, then `reg := next[reg]`.
    Guard {
        reg: u8,
        event: GuestEvent,
        next: Vec<Option<u8>>,
    },
    /// Halt unless bit `reg` of `allowed` is set.
    Check {
        reg: u8,
        event: GuestEvent,
        allowed: u64,
    },
}

impl Instruction {
    pub fn event(&self) -> Option<GuestEvent> {
        match self {
            Instruction::Read(_) => Some(GuestEvent::Read),
            Instruction::Write(_) => Some(GuestEvent::Write),
            Instruction::Compute(_) => Some(GuestEvent::Compute),
            Instruction::Send(_) => Some(GuestEvent::Send),
            _ => None,
        }
    }

    pub fn is_instrumentation(&self) -> bool {
        matches!(
            self,
            Instruction::Set { .. } | Instruction::Guard { .. } | Instruction::Check { .. }
        )
    }

    /// Registers this instruction names, if any.
    pub fn register(&self) -> Option<u8> {
        match self {
            Instruction::Branch { cond, .. } => Some(*cond),
            Instruction::Set { reg, .. }
            | Instruction::Guard { reg, .. }
            | Instruction::Check { reg, .. } => Some(*reg),
            _ => None,
        }
    }
}

/// Counts every instruction, including those nested in branch blocks.
pub fn count_instructions(block: &[Instruction]) -> usize {
    block
        .iter()
        .map(|i| match i {
            Instruction::Branch {
                then_block,
                else_block,
                ..
            } => 1 + count_instructions(then_block) + count_instructions(else_block),
            _ => 1,
        })
        .sum()
}

pub fn count_branches(block: &[Instruction]) -> usize {
    block
        .iter()
        .map(|i| match i {
            Instruction::Branch {
                then_block,
                else_block,
                ..
            } => 1 + count_branches(then_block) + count_branches(else_block),
            _ => 0,
        })
        .sum()
}

pub fn count_events(block: &[Instruction]) -> usize {
    block
        .iter()
        .map(|i| match i {
            Instruction::Branch {
                then_block,
                else_block,
                ..
            } => count_events(then_block) + count_events(else_block),
            other => usize::from(other.event().is_some()),
        })
        .sum()
}

/// Visits every instruction in pre-order.
pub fn walk<'a>(block: &'a [Instruction], f: &mut impl FnMut(&'a Instruction)) {
    for i in block {
        f(i);
        if let Instruction::Branch {
            then_block,
            else_block,
            ..
        } = i
        {
            walk(then_block, f);
            walk(else_block, f);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GuestProgram {
    pub body: Vec<Instruction>,
    pub declared_caps: CapSet,
}

impl GuestProgram {
    /// Builds a program whose declared capabilities are exactly the ones
    /// its instructions imply.
    pub fn new(body: Vec<Instruction>) -> Self {
        let declared_caps = required_caps_of(&body);
        Self {
            body,
            declared_caps,
        }
    }

    pub fn required_caps(&self) -> CapSet {
        required_caps_of(&self.body)
    }

    pub fn instruction_count(&self) -> usize {
        count_instructions(&self.body)
    }

    pub fn branch_count(&self) -> usize {
        count_branches(&self.body)
    }

    pub fn event_instruction_count(&self) -> usize {
        count_events(&self.body)
    }
}

pub fn required_caps_of(body: &[Instruction]) -> CapSet {
    let mut caps = CapSet::EMPTY;
    walk(body, &mut |i| {
        if let Some(e) = i.event() {
            caps.insert(e.capability());
        }
    });
    caps
}

impl fmt::Display for GuestProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_block(f, &self.body, 0)
    }
}

fn write_block(f: &mut fmt::Formatter<'_>, block: &[Instruction], depth: usize) -> fmt::Result {
    let pad = "  ".repeat(depth);
    for i in block {
        match i {
            Instruction::Read(r) => writeln!(f, "{pad}read {r}")?,
            Instruction::Write(r) => writeln!(f, "{pad}write {r}")?,
            Instruction::Compute(n) => writeln!(f, "{pad}compute {n}")?,
            Instruction::Send(n) => writeln!(f, "{pad}send {n}")?,
            Instruction::Halt => writeln!(f, "{pad}halt")?,
            Instruction::Branch {
                cond,
                then_block,
                else_block,
            } => {
                writeln!(f, "{pad}branch r{cond} {{")?;
                write_block(f, then_block, depth + 1)?;
                writeln!(f, "{pad}}} {{")?;
                write_block(f, else_block, depth + 1)?;
                writeln!(f, "{pad}}}")?;
            }
            Instruction::Set { reg, value } => writeln!(f, "{pad}set r{reg} {value}")?,
            Instruction::Guard { reg, event, next } => {
                write!(f, "{pad}guard r{reg} {event}")?;
                for n in next {
                    match n {
                        Some(s) => write!(f, " {s}")?,
                        None => write!(f, " -")?,
                    }
                }
                writeln!(f)?;
            }
            Instruction::Check {
                reg,
                event,
                allowed,
            } => {
                write!(f, "{pad}check r{reg} {event}")?;
                for s in 0..64 {
                    if allowed & (1u64 << s) != 0 {
                        write!(f, " {s}")?;
                    }
                }
                writeln!(f)?;
            }
        }
    }
    Ok(())
}
