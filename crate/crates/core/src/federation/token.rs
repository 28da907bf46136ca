//! Tokens, credentials and their canonical byte layout.
//!
//! Fields are written in declaration order, integers big-endian, optional
//! fields as a presence byte followed by the value, sets as a `u32` count
//! followed by ascending members. The auth tag covers every byte before it.

use sha2::{Digest, Sha256};

use super::capability::{CapSet, Capability};
use crate::ids::{MissionId, NodeId, TokenId};

pub const TAG_LEN: usize = 16;

pub type Tag = [u8; TAG_LEN];

const TOKEN_DOMAIN: &[u8] = b"gridtrust/token/v1";
const CREDENTIAL_DOMAIN: &[u8] = b"gridtrust/credential/v1";

/// Coordinator key material for the keyed-tag scheme.
#[derive(Clone, PartialEq, Eq)]
pub struct TagKey([u8; 16]);

impl std::fmt::Debug for TagKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TagKey(..)")
    }
}

impl TagKey {
    pub fn new(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    /// Derives a key from a seed value.
    pub fn from_seed(seed: u64) -> Self {
        let digest = Sha256::new()
            .chain_update(b"gridtrust/key")
            .chain_update(seed.to_be_bytes())
            .finalize();
        let mut key = [0u8; 16];
        key.copy_from_slice(&digest[..16]);
        Self(key)
    }

    fn tag(&self, domain: &[u8], body: &[u8]) -> Tag {
        let digest = Sha256::new()
            .chain_update(self.0)
            .chain_update((domain.len() as u32).to_be_bytes())
            .chain_update(domain)
            .chain_update(body)
            .finalize();
        let mut tag = [0u8; TAG_LEN];
        tag.copy_from_slice(&digest[..TAG_LEN]);
        tag
    }

    /// Recomputes and installs the auth tag of `token`.
    ///
    /// Only the coordinator should hold the key; tests use this to forge
    /// tokens that are correctly tagged but structurally broken.
    pub fn seal(&self, token: &mut CapabilityToken) {
        token.auth_tag = self.tag(TOKEN_DOMAIN, &token.body_bytes());
    }

    pub fn verify_token(&self, token: &CapabilityToken) -> bool {
        self.tag(TOKEN_DOMAIN, &token.body_bytes()) == token.auth_tag
    }

    pub fn credential(&self, node: NodeId, issued_epoch: u64) -> Credential {
        let mut cred = Credential {
            node,
            secret_tag: [0; TAG_LEN],
            issued_epoch,
        };
        cred.secret_tag = self.tag(CREDENTIAL_DOMAIN, &cred.body_bytes());
        cred
    }

    pub fn verify_credential(&self, cred: &Credential) -> bool {
        self.tag(CREDENTIAL_DOMAIN, &cred.body_bytes()) == cred.secret_tag
    }
}

/// A delegable, attenuable credential-chain node held by an agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CapabilityToken {
    pub token_id: TokenId,
    /// Absent exactly for main-instance tokens.
    pub parent: Option<TokenId>,
    pub subject: NodeId,
    pub caps: CapSet,
    pub mission: Option<MissionId>,
    pub issued_epoch: u64,
    pub depth: u32,
    pub auth_tag: Tag,
}

impl CapabilityToken {
    pub fn is_main(&self) -> bool {
        self.parent.is_none()
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.token_id.0.to_be_bytes());
        put_opt(&mut out, self.parent.map(|p| p.0));
        out.extend_from_slice(&self.subject.0.to_be_bytes());
        out.extend_from_slice(&(self.caps.len() as u32).to_be_bytes());
        out.extend(self.caps.iter().map(Capability::code));
        put_opt(&mut out, self.mission.map(|m| m.0));
        out.extend_from_slice(&self.issued_epoch.to_be_bytes());
        out.extend_from_slice(&self.depth.to_be_bytes());
        out
    }

    /// Canonical serialization including the tag.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = self.body_bytes();
        out.extend_from_slice(&self.auth_tag);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let token_id = TokenId(r.u64()?);
        let parent = r.opt_u64()?.map(TokenId);
        let subject = NodeId(r.u64()?);
        let count = r.u32()? as usize;
        if count > Capability::ALL.len() {
            return Err(DecodeError::Malformed("capability count"));
        }
        let mut caps = CapSet::EMPTY;
        let mut last: Option<u8> = None;
        for _ in 0..count {
            let code = r.u8()?;
            if last.is_some_and(|l| l >= code) {
                return Err(DecodeError::Malformed("capability order"));
            }
            last = Some(code);
            caps.insert(
                Capability::from_code(code).ok_or(DecodeError::Malformed("capability code"))?,
            );
        }
        let mission = r.opt_u64()?.map(MissionId);
        let issued_epoch = r.u64()?;
        let depth = r.u32()?;
        let mut auth_tag = [0u8; TAG_LEN];
        auth_tag.copy_from_slice(r.take(TAG_LEN)?);
        r.finish()?;
        Ok(Self {
            token_id,
            parent,
            subject,
            caps,
            mission,
            issued_epoch,
            depth,
            auth_tag,
        })
    }
}

/// A host's proof of identity, issued at subscription.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub node: NodeId,
    pub secret_tag: Tag,
    pub issued_epoch: u64,
}

impl Credential {
    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.extend_from_slice(&self.node.0.to_be_bytes());
        out.extend_from_slice(&self.issued_epoch.to_be_bytes());
        out
    }

    /// Flips one bit of the tag, the way a tampered host presents itself.
    pub fn tampered(mut self) -> Self {
        self.secret_tag[0] ^= 0x01;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("truncated input")]
    Truncated,
    #[error("malformed {0}")]
    Malformed(&'static str),
    #[error("{0} trailing bytes")]
    Trailing(usize),
}

fn put_opt(out: &mut Vec<u8>, v: Option<u64>) {
    match v {
        None => out.push(0),
        Some(v) => {
            out.push(1);
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(n).ok_or(DecodeError::Truncated)?;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or(DecodeError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn opt_u64(&mut self) -> Result<Option<u64>, DecodeError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.u64()?)),
            _ => Err(DecodeError::Malformed("presence flag")),
        }
    }

    pub(crate) fn finish(&self) -> Result<(), DecodeError> {
        match self.bytes.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}
