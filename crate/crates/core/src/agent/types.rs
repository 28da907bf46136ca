use std::fmt;
use std::sync::Arc;

use crate::enforcement::Witness;
use crate::federation::{CapSet, HandshakeFailure};
use crate::guest::{GuestProgram, Trace};
use crate::ids::{AgentId, MissionId, NodeId, TaskId, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentRole {
    Main,
    Secondary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DestroyCause {
    /// Main instance whose node left the grid.
    Disconnect,
    /// Secondary whose mission ended without completing.
    MissionEnd,
    /// Host failed authentication.
    Compromise,
    /// An ancestor token was revoked.
    ParentRevoked,
    /// Host turned hostile during execution.
    Hostile,
}

impl fmt::Display for DestroyCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DestroyCause::Disconnect => "disconnect",
            DestroyCause::MissionEnd => "mission_end",
            DestroyCause::Compromise => "compromise",
            DestroyCause::ParentRevoked => "parent_revoked",
            DestroyCause::Hostile => "hostile",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentState {
    Instantiated,
    Migrating { to: NodeId },
    Active { on: NodeId },
    Completed,
    Destroyed(DestroyCause),
}

impl AgentState {
    pub fn is_terminal(self) -> bool {
        matches!(self, AgentState::Completed | AgentState::Destroyed(_))
    }

    /// Instantiated -> Migrating -> Active -> {Completed, Destroyed}, and
    /// any live state may be destroyed.
    pub fn can_become(self, next: AgentState) -> bool {
        use AgentState::*;
        matches!(
            (self, next),
            (Instantiated, Migrating { .. })
                | (Migrating { .. }, Active { .. })
                | (Active { .. }, Completed)
                | (
                    Instantiated | Migrating { .. } | Active { .. },
                    Destroyed(_)
                )
        )
    }
}

impl fmt::Display for AgentState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentState::Instantiated => f.write_str("instantiated"),
            AgentState::Migrating { to } => write!(f, "migrating:{to}"),
            AgentState::Active { on } => write!(f, "active:{on}"),
            AgentState::Completed => f.write_str("completed"),
            AgentState::Destroyed(c) => write!(f, "destroyed:{c}"),
        }
    }
}

/// The unit of work a task contributes; reused across reassignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub task: TaskId,
    pub program: Arc<GuestProgram>,
    /// One outcome per branch the program can encounter.
    pub oracle: Arc<[bool]>,
    /// How long after dispatch the mission's deadline falls.
    pub window: u64,
}

/// A delegated unit of work bound to one provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mission {
    pub mission_id: MissionId,
    pub task: TaskId,
    pub program: Arc<GuestProgram>,
    pub oracle: Arc<[bool]>,
    pub target: NodeId,
    pub required_caps: CapSet,
    pub created: u64,
    pub deadline: u64,
}

impl Mission {
    pub fn new(mission_id: MissionId, spec: &TaskSpec, target: NodeId, created: u64) -> Self {
        Self {
            mission_id,
            task: spec.task,
            program: spec.program.clone(),
            oracle: spec.oracle.clone(),
            target,
            required_caps: spec.program.required_caps(),
            created,
            deadline: created + spec.window.max(1),
        }
    }

    pub fn spec(&self) -> TaskSpec {
        TaskSpec {
            task: self.task,
            program: self.program.clone(),
            oracle: self.oracle.clone(),
            window: self.deadline - self.created,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentInstance {
    pub id: AgentId,
    pub role: AgentRole,
    pub token: crate::federation::CapabilityToken,
    pub parent: Option<AgentId>,
    pub state: AgentState,
    pub mission: Option<Mission>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotificationKind {
    HostUnreachable,
    HandshakeFailed,
    Compromised,
    PolicyViolation,
    MissionComplete { digest: u64 },
}

impl NotificationKind {
    pub fn is_failure(self) -> bool {
        matches!(
            self,
            NotificationKind::HostUnreachable
                | NotificationKind::HandshakeFailed
                | NotificationKind::Compromised
        )
    }
}

impl fmt::Display for NotificationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NotificationKind::HostUnreachable => f.write_str("host_unreachable"),
            NotificationKind::HandshakeFailed => f.write_str("handshake_failed"),
            NotificationKind::Compromised => f.write_str("compromised"),
            NotificationKind::PolicyViolation => f.write_str("policy_violation"),
            NotificationKind::MissionComplete { .. } => f.write_str("mission_complete"),
        }
    }
}

/// Sent by an agent to its parent right before it terminates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Notification {
    pub from: TokenId,
    pub to: TokenId,
    pub kind: NotificationKind,
    pub at: u64,
}

/// Why a mission refused to run its program at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Refusal {
    MissingCapabilities(CapSet),
    ReservedRegister(u8),
    TooLarge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MissionOutcome {
    Completed {
        digest: u64,
        trace: Trace,
    },
    /// The program hit a policy violation and was cut short.
    Truncated {
        trace: Trace,
        violation_index: usize,
    },
    /// Static analysis rejected the program; nothing ran.
    Rejected {
        witness: Witness,
    },
    Refused(Refusal),
    HandshakeFailed(HandshakeFailure),
    HostVanished,
}

impl MissionOutcome {
    pub fn committed(&self) -> &[crate::guest::GuestEvent] {
        match self {
            MissionOutcome::Completed { trace, .. } | MissionOutcome::Truncated { trace, .. } => {
                &trace.events
            }
            _ => &[],
        }
    }

    pub fn is_violation(&self) -> bool {
        matches!(
            self,
            MissionOutcome::Truncated { .. }
                | MissionOutcome::Rejected { .. }
                | MissionOutcome::Refused(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskResult {
    pub task: TaskId,
    pub mission: MissionId,
    pub host: NodeId,
    /// `None` when enforcement stopped the program.
    pub digest: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GiveUpReason {
    /// No eligible provider right now; the task stays pending.
    TasksPending,
    BudgetExhausted,
}

impl fmt::Display for GiveUpReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GiveUpReason::TasksPending => "tasks_pending",
            GiveUpReason::BudgetExhausted => "budget_exhausted",
        })
    }
}

/// What a parent decided after hearing from a child.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Recorded(TaskResult),
    Reassignment { mission: Mission, agent: AgentId },
    GiveUp(GiveUpReason),
}

/// One lifecycle transition, for the audit log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub at: u64,
    pub agent: AgentId,
    pub token: TokenId,
    pub from: Option<AgentState>,
    pub to: AgentState,
}
