mod runtime;
mod types;

pub use runtime::{result_digest, run_mission, AgentRuntime, Assignment, RuntimeConfig};
pub use types::{
    AgentInstance, AgentRole, AgentState, Decision, DestroyCause, GiveUpReason, Mission,
    MissionOutcome, Notification, NotificationKind, Refusal, TaskResult, TaskSpec, Transition,
};

use crate::federation::{FederationError, RejectReason};
use crate::guest::GuestError;
use crate::ids::{AgentId, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AgentError {
    #[error("subscription was rejected: {0}")]
    RejectedSubscription(RejectReason),
    #[error("parent agent {0} is destroyed")]
    ParentDestroyed(AgentId),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("notification to token {to} is not for agent {parent}")]
    NotMyChild { parent: AgentId, to: TokenId },
    #[error("no agent holds token {0}")]
    UnknownSender(TokenId),
    #[error("agent {agent} cannot go from {from} to {to}")]
    IllegalTransition {
        agent: AgentId,
        from: AgentState,
        to: AgentState,
    },
    #[error("agent {0} has no mission")]
    NoMission(AgentId),
    #[error("agent {0} is not active on a host")]
    NotActive(AgentId),
    #[error("agent {0} did not execute its mission")]
    NotExecuted(AgentId),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Guest(#[from] GuestError),
}
