//! Identity-provider side of the trust model.
//!
//! A [`Coordinator`] admits nodes, issues main-instance tokens, delegates
//! attenuated tokens to mission agents, revokes whole subtrees and advances a
//! [`PolicyEpoch`] on every membership or revocation change.

mod capability;
mod coordinator;
mod token;

pub use capability::{CapSet, Capability};
pub use coordinator::{
    disseminate, AdmissionRule, AuditRecord, Coordinator, HandshakeFailure, HandshakeReason,
    InvalidReason, PolicyEpoch, RejectReason, Session, Side, SubscriptionDecision, Validity,
};
pub use token::{CapabilityToken, Credential, DecodeError, Tag, TagKey, TAG_LEN};

use crate::ids::{NodeId, TokenId};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FederationError {
    #[error("node {0} is already subscribed")]
    AlreadySubscribed(NodeId),
    #[error("node {0} is not subscribed")]
    NotSubscribed(NodeId),
    #[error("requested capabilities {requested} exceed held {held}")]
    AttenuationViolation { requested: CapSet, held: CapSet },
    #[error("parent token failed validation: {0}")]
    ParentRevoked(InvalidReason),
    #[error("unknown token {0}")]
    UnknownToken(TokenId),
    #[error("epoch {got} does not follow {last}")]
    EpochGap { last: u64, got: u64 },
}
