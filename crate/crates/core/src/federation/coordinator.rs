use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::capability::CapSet;
use super::token::{CapabilityToken, Credential, DecodeError, Reader, TagKey, TAG_LEN};
use super::FederationError;
use crate::ids::{MissionId, NodeId, PolicyId, TokenId};

/// Versioned bundle of membership, revocations and the active policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyEpoch {
    pub version: u64,
    pub membership: BTreeSet<NodeId>,
    pub revoked: BTreeSet<TokenId>,
    pub active_policy: PolicyId,
}

impl PolicyEpoch {
    pub fn genesis(active_policy: PolicyId) -> Self {
        Self {
            version: 0,
            membership: BTreeSet::new(),
            revoked: BTreeSet::new(),
            active_policy,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&(self.membership.len() as u32).to_be_bytes());
        for n in &self.membership {
            out.extend_from_slice(&n.0.to_be_bytes());
        }
        out.extend_from_slice(&(self.revoked.len() as u32).to_be_bytes());
        for t in &self.revoked {
            out.extend_from_slice(&t.0.to_be_bytes());
        }
        let id = self.active_policy.as_str().as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_be_bytes());
        out.extend_from_slice(id);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let version = r.u64()?;
        let membership = read_sorted_set(&mut r)?.into_iter().map(NodeId).collect();
        let revoked = read_sorted_set(&mut r)?.into_iter().map(TokenId).collect();
        let len = r.u32()? as usize;
        let id =
            std::str::from_utf8(r.take(len)?).map_err(|_| DecodeError::Malformed("policy id"))?;
        r.finish()?;
        Ok(Self {
            version,
            membership,
            revoked,
            active_policy: PolicyId::new(id),
        })
    }
}

fn read_sorted_set(r: &mut Reader<'_>) -> Result<Vec<u64>, DecodeError> {
    let count = r.u32()? as usize;
    let mut out: Vec<u64> = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let v = r.u64()?;
        if out.last().is_some_and(|l| *l >= v) {
            return Err(DecodeError::Malformed("set order"));
        }
        out.push(v);
    }
    Ok(out)
}

/// Predicate the coordinator applies to subscription requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissionRule {
    pub allowed: CapSet,
    pub denylist: BTreeSet<NodeId>,
}

impl AdmissionRule {
    pub fn allow_all() -> Self {
        Self {
            allowed: CapSet::all(),
            denylist: BTreeSet::new(),
        }
    }
}

impl Default for AdmissionRule {
    fn default() -> Self {
        Self::allow_all()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    Denylisted,
    NothingGranted,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Denylisted => "denylisted",
            RejectReason::NothingGranted => "nothing_granted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubscriptionDecision {
    Accepted(CapabilityToken),
    Rejected(RejectReason),
}

/// Why a token chain failed validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvalidReason {
    BadTag,
    Revoked,
    SubjectNotMember,
    BrokenAttenuation,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidReason::BadTag => "bad_tag",
            InvalidReason::Revoked => "revoked",
            InvalidReason::SubjectNotMember => "subject_not_member",
            InvalidReason::BrokenAttenuation => "broken_attenuation",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(self) -> bool {
        self == Validity::Valid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Agent,
    Host,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeReason {
    BadTag,
    Revoked,
    SubjectNotMember,
    BrokenAttenuation,
    HostNotMember,
}

impl From<InvalidReason> for HandshakeReason {
    fn from(r: InvalidReason) -> Self {
        match r {
            InvalidReason::BadTag => HandshakeReason::BadTag,
            InvalidReason::Revoked => HandshakeReason::Revoked,
            InvalidReason::SubjectNotMember => HandshakeReason::SubjectNotMember,
            InvalidReason::BrokenAttenuation => HandshakeReason::BrokenAttenuation,
        }
    }
}

impl fmt::Display for HandshakeReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HandshakeReason::BadTag => "bad_tag",
            HandshakeReason::Revoked => "revoked",
            HandshakeReason::SubjectNotMember => "subject_not_member",
            HandshakeReason::BrokenAttenuation => "broken_attenuation",
            HandshakeReason::HostNotMember => "host_not_member",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandshakeFailure {
    pub side: Side,
    pub reason: HandshakeReason,
}

/// Mutually authenticated agent/host pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Session {
    pub token: TokenId,
    pub host: NodeId,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AuditRecord {
    Subscribed {
        node: NodeId,
        token: TokenId,
        version: u64,
    },
    Rejected {
        node: NodeId,
        reason: RejectReason,
    },
    Disconnected {
        node: NodeId,
        version: u64,
        revoked: usize,
    },
    Delegated {
        parent: TokenId,
        child: TokenId,
    },
    Revoked {
        root: TokenId,
        count: usize,
        version: u64,
    },
}

const MAX_CHAIN: usize = 4096;

/// The identity-provider side: the stationary agent on the grid's kernel node.
///
/// All mutation happens through `&mut self`; issued tokens and epochs are
/// plain values that can be validated concurrently.
#[derive(Debug, Clone)]
pub struct Coordinator {
    key: TagKey,
    epoch: PolicyEpoch,
    tokens: BTreeMap<TokenId, CapabilityToken>,
    children: BTreeMap<TokenId, Vec<TokenId>>,
    main_tokens: BTreeMap<NodeId, TokenId>,
    revoked_at: BTreeMap<TokenId, u64>,
    next_token: u64,
    audit: Vec<AuditRecord>,
}

impl Coordinator {
    pub fn new(key: TagKey, active_policy: PolicyId) -> Self {
        Self {
            key,
            epoch: PolicyEpoch::genesis(active_policy),
            tokens: BTreeMap::new(),
            children: BTreeMap::new(),
            main_tokens: BTreeMap::new(),
            revoked_at: BTreeMap::new(),
            next_token: 1,
            audit: Vec::new(),
        }
    }

    pub fn epoch(&self) -> &PolicyEpoch {
        &self.epoch
    }

    pub fn audit(&self) -> &[AuditRecord] {
        &self.audit
    }

    pub fn key(&self) -> &TagKey {
        &self.key
    }

    pub fn token(&self, id: TokenId) -> Option<&CapabilityToken> {
        self.tokens.get(&id)
    }

    pub fn main_token(&self, node: NodeId) -> Option<&CapabilityToken> {
        self.main_tokens
            .get(&node)
            .and_then(|id| self.tokens.get(id))
    }

    pub fn is_member(&self, node: NodeId) -> bool {
        self.epoch.membership.contains(&node)
    }

    /// Version at which `id` was revoked, if it was.
    pub fn revoked_at(&self, id: TokenId) -> Option<u64> {
        self.revoked_at.get(&id).copied()
    }

    /// `id` and all of its descendants, in pre-order.
    pub fn subtree(&self, id: TokenId) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(t) = stack.pop() {
            out.push(t);
            if let Some(kids) = self.children.get(&t) {
                stack.extend(kids.iter().rev());
            }
        }
        out
    }

    fn advance(&mut self) {
        self.epoch.version += 1;
    }

    fn mint(
        &mut self,
        parent: Option<&CapabilityToken>,
        subject: NodeId,
        caps: CapSet,
        mission: Option<MissionId>,
    ) -> CapabilityToken {
        let mut token = CapabilityToken {
            token_id: TokenId(self.next_token),
            parent: parent.map(|p| p.token_id),
            subject,
            caps,
            mission,
            issued_epoch: self.epoch.version,
            depth: parent.map_or(0, |p| p.depth + 1),
            auth_tag: [0; TAG_LEN],
        };
        self.next_token += 1;
        self.key.seal(&mut token);
        if let Some(p) = parent {
            self.children
                .entry(p.token_id)
                .or_default()
                .push(token.token_id);
        }
        self.tokens.insert(token.token_id, token.clone());
        token
    }

    pub fn subscribe(
        &mut self,
        node: NodeId,
        requested: CapSet,
        rule: &AdmissionRule,
    ) -> Result<SubscriptionDecision, FederationError> {
        if self.is_member(node) {
            return Err(FederationError::AlreadySubscribed(node));
        }
        let reject = if rule.denylist.contains(&node) {
            Some(RejectReason::Denylisted)
        } else if requested.intersection(rule.allowed).is_empty() {
            Some(RejectReason::NothingGranted)
        } else {
            None
        };
        if let Some(reason) = reject {
            self.audit.push(AuditRecord::Rejected { node, reason });
            return Ok(SubscriptionDecision::Rejected(reason));
        }
        self.epoch.membership.insert(node);
        self.advance();
        let token = self.mint(None, node, requested.intersection(rule.allowed), None);
        self.main_tokens.insert(node, token.token_id);
        self.audit.push(AuditRecord::Subscribed {
            node,
            token: token.token_id,
            version: self.epoch.version,
        });
        Ok(SubscriptionDecision::Accepted(token))
    }

    /// Issues the host credential a member presents during handshakes.
    pub fn issue_credential(&self, node: NodeId) -> Result<Credential, FederationError> {
        if !self.is_member(node) {
            return Err(FederationError::NotSubscribed(node));
        }
        Ok(self.key.credential(node, self.epoch.version))
    }

    fn mark_revoked(&mut self, ids: impl IntoIterator<Item = TokenId>) -> BTreeSet<TokenId> {
        let mut newly = BTreeSet::new();
        for id in ids {
            if self.epoch.revoked.insert(id) {
                newly.insert(id);
            }
        }
        newly
    }

    pub fn disconnect(&mut self, node: NodeId) -> Result<PolicyEpoch, FederationError> {
        if !self.epoch.membership.remove(&node) {
            return Err(FederationError::NotSubscribed(node));
        }
        let tree = self
            .main_tokens
            .get(&node)
            .map(|t| self.subtree(*t))
            .unwrap_or_default();
        self.advance();
        let newly = self.mark_revoked(tree);
        for id in &newly {
            self.revoked_at.insert(*id, self.epoch.version);
        }
        self.audit.push(AuditRecord::Disconnected {
            node,
            version: self.epoch.version,
            revoked: newly.len(),
        });
        Ok(self.epoch.clone())
    }

    pub fn issue_delegate(
        &mut self,
        parent: &CapabilityToken,
        mission: MissionId,
        requested: CapSet,
    ) -> Result<CapabilityToken, FederationError> {
        if let Validity::Invalid(reason) = self.validate_chain(parent, &self.epoch) {
            return Err(FederationError::ParentRevoked(reason));
        }
        if !requested.is_subset(parent.caps) {
            return Err(FederationError::AttenuationViolation {
                requested,
                held: parent.caps,
            });
        }
        let child = self.mint(Some(parent), parent.subject, requested, Some(mission));
        self.audit.push(AuditRecord::Delegated {
            parent: parent.token_id,
            child: child.token_id,
        });
        Ok(child)
    }

    /// Revokes `id` and its whole subtree. Revoking an already revoked
    /// token is a no-op returning the empty set.
    pub fn revoke(&mut self, id: TokenId) -> Result<BTreeSet<TokenId>, FederationError> {
        if !self.tokens.contains_key(&id) {
            return Err(FederationError::UnknownToken(id));
        }
        if self.epoch.revoked.contains(&id) {
            return Ok(BTreeSet::new());
        }
        let tree = self.subtree(id);
        self.advance();
        let newly = self.mark_revoked(tree);
        for t in &newly {
            self.revoked_at.insert(*t, self.epoch.version);
        }
        self.audit.push(AuditRecord::Revoked {
            root: id,
            count: newly.len(),
            version: self.epoch.version,
        });
        Ok(newly)
    }

    /// Checks, in order: tags (and that every ancestor is known),
    /// revocation, root membership, attenuation at every hop. The first
    /// failure in that order is reported.
    pub fn validate_chain(&self, token: &CapabilityToken, epoch: &PolicyEpoch) -> Validity {
        let mut chain = vec![token];
        let mut cur = token;
        while let Some(pid) = cur.parent {
            if chain.len() > MAX_CHAIN {
                return Validity::Invalid(InvalidReason::BadTag);
            }
            match self.tokens.get(&pid) {
                Some(p) => {
                    chain.push(p);
                    cur = p;
                }
                None => return Validity::Invalid(InvalidReason::BadTag),
            }
        }
        if !chain.iter().all(|t| self.key.verify_token(t)) {
            return Validity::Invalid(InvalidReason::BadTag);
        }
        if chain.iter().any(|t| epoch.revoked.contains(&t.token_id)) {
            return Validity::Invalid(InvalidReason::Revoked);
        }
        let root = chain[chain.len() - 1];
        if !epoch.membership.contains(&root.subject) {
            return Validity::Invalid(InvalidReason::SubjectNotMember);
        }
        if root.depth != 0 {
            return Validity::Invalid(InvalidReason::BrokenAttenuation);
        }
        for pair in chain.windows(2) {
            let (child, parent) = (pair[0], pair[1]);
            if !child.caps.is_subset(parent.caps) || child.depth != parent.depth + 1 {
                return Validity::Invalid(InvalidReason::BrokenAttenuation);
            }
        }
        Validity::Valid
    }

    /// Validates a serialized token; undecodable bytes count as a bad tag.
    pub fn validate_encoded(&self, bytes: &[u8], epoch: &PolicyEpoch) -> Validity {
        match CapabilityToken::decode(bytes) {
            Ok(t) => self.validate_chain(&t, epoch),
            Err(_) => Validity::Invalid(InvalidReason::BadTag),
        }
    }

    pub fn handshake(
        &self,
        agent_token: &CapabilityToken,
        host: &Credential,
        epoch: &PolicyEpoch,
    ) -> Result<Session, HandshakeFailure> {
        if let Validity::Invalid(reason) = self.validate_chain(agent_token, epoch) {
            return Err(HandshakeFailure {
                side: Side::Agent,
                reason: reason.into(),
            });
        }
        if !self.key.verify_credential(host) {
            return Err(HandshakeFailure {
                side: Side::Host,
                reason: HandshakeReason::BadTag,
            });
        }
        if !epoch.membership.contains(&host.node) {
            return Err(HandshakeFailure {
                side: Side::Host,
                reason: HandshakeReason::HostNotMember,
            });
        }
        Ok(Session {
            token: agent_token.token_id,
            host: host.node,
            version: epoch.version,
        })
    }
}

/// Delivery plan for a freshly advanced epoch: every connected node paired
/// with the new version.
pub fn disseminate(
    last_version: u64,
    epoch: &PolicyEpoch,
    membership: &BTreeSet<NodeId>,
) -> Result<Vec<(NodeId, u64)>, FederationError> {
    if epoch.version != last_version + 1 {
        return Err(FederationError::EpochGap {
            last: last_version,
            got: epoch.version,
        });
    }
    Ok(membership.iter().map(|n| (*n, epoch.version)).collect())
}
