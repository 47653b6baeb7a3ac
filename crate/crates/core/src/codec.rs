//! Bit-exact encodings: master secret, per-user mask keystream, roster,
//! session-key derivation and the two wire messages.
//!
//! All integers are big-endian. Field elements and identities occupy `w`
//! octets, counts 4 octets and counters 8 octets.
//!
//! ```text
//! ContributionMessage  0x01 | sender (w) | e_len (4) | e | sig_len (4) | sig
//! BroadcastMessage     0x02 | id_0 (w) | n (4) | n x [ id_i (w) | P_i ((n+1)w) ]
//!                           | roster | sig_len (4) | sig
//! roster               count (4) | ids ascending (w each)
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::crypto::{HashFn, HASH_LEN};
use crate::field::{FieldElement, FieldParams, SecretPolynomial};
use crate::meter::OpCounts;
use crate::protocol::{Counter, PartyId};

pub const TAG_CONTRIBUTION: u8 = 0x01;
pub const TAG_BROADCAST: u8 = 0x02;

/// Domain-separation prefix of mask keystream blocks.
pub const DOMAIN_MASK: u8 = 0x01;
/// Domain-separation prefix of the session-key derivation.
pub const DOMAIN_KEY: u8 = 0x02;

pub const SESSION_KEY_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed secret: {0}")]
    MalformedSecret(&'static str),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("malformed message: {0}")]
    MalformedMessage(&'static str),
    #[error("invalid roster: {0}")]
    InvalidRoster(&'static str),
}

/// `K = a_0 || a_1 || ... || a_n`, each coefficient in `w` octets.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterSecret(Vec<u8>);

impl MasterSecret {
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for MasterSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MasterSecret({} octets)", self.0.len())
    }
}

/// `P_i = K xor keystream_i`, addressed to one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedShare {
    pub recipient: PartyId,
    pub bytes: Vec<u8>,
}

/// The set of user identities in a session; the leader is never a member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    ids: BTreeSet<PartyId>,
}

impl Roster {
    pub fn new(ids: impl IntoIterator<Item = PartyId>) -> Result<Self, CodecError> {
        let mut set = BTreeSet::new();
        for id in ids {
            if !set.insert(id) {
                return Err(CodecError::InvalidRoster("duplicate id"));
            }
        }
        if set.is_empty() {
            return Err(CodecError::InvalidRoster("empty"));
        }
        Ok(Self { ids: set })
    }

    pub fn contains(&self, id: &PartyId) -> bool {
        self.ids.contains(id)
    }

    /// Ids in ascending numeric order.
    pub fn iter(&self) -> impl Iterator<Item = &PartyId> {
        self.ids.iter()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn with(&self, id: PartyId) -> Result<Self, CodecError> {
        Self::new(self.ids.iter().cloned().chain(std::iter::once(id)))
    }

    pub fn without(&self, id: &PartyId) -> Result<Self, CodecError> {
        Self::new(self.ids.iter().filter(|x| *x != id).cloned())
    }
}

/// 32-octet group key.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; SESSION_KEY_LEN]);

impl SessionKey {
    pub fn as_bytes(&self) -> &[u8; SESSION_KEY_LEN] {
        &self.0
    }

    /// First 8 octets in hex; safe for logs.
    pub fn digest_prefix(&self) -> String {
        hex::encode(&self.0[..8])
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionKey({}..)", self.digest_prefix())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContributionMessage {
    pub sender: PartyId,
    pub ciphertext: Vec<u8>,
    pub signature: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastMessage {
    pub leader: PartyId,
    pub shares: Vec<MaskedShare>,
    pub roster: Roster,
    pub signature: Vec<u8>,
}

impl BroadcastMessage {
    pub fn share_for(&self, id: &PartyId) -> Option<&MaskedShare> {
        self.shares.iter().find(|s| &s.recipient == id)
    }

    /// The octets covered by the leader's signature.
    pub fn signed_bytes(&self) -> Vec<u8> {
        broadcast_signed_bytes(&self.leader, &self.shares, &self.roster)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Contribution(ContributionMessage),
    Broadcast(BroadcastMessage),
}

pub fn encode_secret(poly: &SecretPolynomial) -> MasterSecret {
    let w = poly.params().width();
    let mut out = Vec::with_capacity(poly.len() * w);
    for c in poly.coeffs() {
        c.write_to(&mut out);
    }
    MasterSecret(out)
}

pub fn decode_secret(secret: &MasterSecret, params: &Arc<FieldParams>) -> Result<SecretPolynomial, CodecError> {
    let w = params.width();
    if secret.0.is_empty() || !secret.0.len().is_multiple_of(w) {
        return Err(CodecError::MalformedSecret("length is not a positive multiple of the width"));
    }
    let coeffs = secret
        .0
        .chunks(w)
        .map(|chunk| params.decode(chunk).ok_or(CodecError::MalformedSecret("coefficient out of range")))
        .collect::<Result<Vec<_>, _>>()?;
    SecretPolynomial::new(coeffs).map_err(|_| CodecError::MalformedSecret("empty"))
}

/// Block `j` is `H(0x01 || id_i || id_0 || c_i || x_i || j)`; blocks are
/// concatenated and truncated to `out_len`.
pub fn keystream(
    hash: &dyn HashFn,
    id_i: &PartyId,
    id_0: &PartyId,
    counter: Counter,
    x_i: &FieldElement,
    out_len: usize,
    ops: &mut OpCounts,
) -> Vec<u8> {
    let mut prefix = vec![DOMAIN_MASK];
    id_i.element().write_to(&mut prefix);
    id_0.element().write_to(&mut prefix);
    prefix.extend_from_slice(&counter.value().to_be_bytes());
    x_i.write_to(&mut prefix);
    let base = prefix.len();

    let mut out = Vec::with_capacity(out_len.div_ceil(HASH_LEN) * HASH_LEN);
    let mut block = 0u32;
    while out.len() < out_len {
        prefix.truncate(base);
        prefix.extend_from_slice(&block.to_be_bytes());
        out.extend_from_slice(&hash.digest(&prefix));
        ops.hash_calls += 1;
        block += 1;
    }
    out.truncate(out_len);
    out
}

/// Octet-wise XOR; one pass over the input.
pub fn mask_secret(data: &[u8], stream: &[u8], ops: &mut OpCounts) -> Result<Vec<u8>, CodecError> {
    if data.len() != stream.len() {
        return Err(CodecError::LengthMismatch { left: data.len(), right: stream.len() });
    }
    ops.xor_passes += 1;
    ops.xor_octets += data.len() as u64;
    Ok(data.iter().zip(stream).map(|(a, b)| a ^ b).collect())
}

pub fn encode_roster(roster: &Roster) -> Vec<u8> {
    let mut out = Vec::new();
    write_roster(roster, &mut out);
    out
}

fn write_roster(roster: &Roster, out: &mut Vec<u8>) {
    out.extend_from_slice(&(roster.len() as u32).to_be_bytes());
    for id in roster.iter() {
        id.element().write_to(out);
    }
}

/// `H(0x02 || K || encode_roster(U))`.
pub fn derive_session_key(hash: &dyn HashFn, secret: &MasterSecret, roster: &Roster, ops: &mut OpCounts) -> SessionKey {
    let mut input = Vec::with_capacity(1 + secret.len() + 4 + roster.len() * 32);
    input.push(DOMAIN_KEY);
    input.extend_from_slice(&secret.0);
    write_roster(roster, &mut input);
    ops.hash_calls += 1;
    SessionKey(hash.digest(&input))
}

/// `id_i || id_0 || x_i || C_i`, the input to both encryption and signature.
pub fn contribution_plaintext(id_i: &PartyId, id_0: &PartyId, x_i: &FieldElement, counter: Counter) -> Vec<u8> {
    let mut out = Vec::new();
    id_i.element().write_to(&mut out);
    id_0.element().write_to(&mut out);
    x_i.write_to(&mut out);
    out.extend_from_slice(&counter.value().to_be_bytes());
    out
}

/// Inverse of [`contribution_plaintext`]; `None` on any malformation.
pub fn parse_contribution_plaintext(
    bytes: &[u8],
    params: &Arc<FieldParams>,
) -> Option<(PartyId, PartyId, FieldElement, Counter)> {
    let w = params.width();
    if bytes.len() != 3 * w + 8 {
        return None;
    }
    let id_i = PartyId::from_element(params.decode(&bytes[..w])?)?;
    let id_0 = PartyId::from_element(params.decode(&bytes[w..2 * w])?)?;
    let x = params.decode(&bytes[2 * w..3 * w])?;
    let counter = u64::from_be_bytes(bytes[3 * w..].try_into().ok()?);
    Some((id_i, id_0, x, Counter::new(counter)))
}

pub fn broadcast_signed_bytes(leader: &PartyId, shares: &[MaskedShare], roster: &Roster) -> Vec<u8> {
    let mut out = Vec::new();
    leader.element().write_to(&mut out);
    for s in shares {
        s.recipient.element().write_to(&mut out);
        out.extend_from_slice(&s.bytes);
    }
    write_roster(roster, &mut out);
    out
}

fn put_blob(out: &mut Vec<u8>, blob: &[u8]) {
    out.extend_from_slice(&(blob.len() as u32).to_be_bytes());
    out.extend_from_slice(blob);
}

pub fn serialize_message(msg: &Message) -> Vec<u8> {
    let mut out = Vec::new();
    match msg {
        Message::Contribution(m) => {
            out.push(TAG_CONTRIBUTION);
            m.sender.element().write_to(&mut out);
            put_blob(&mut out, &m.ciphertext);
            put_blob(&mut out, &m.signature);
        }
        Message::Broadcast(m) => {
            out.push(TAG_BROADCAST);
            m.leader.element().write_to(&mut out);
            out.extend_from_slice(&(m.shares.len() as u32).to_be_bytes());
            for s in &m.shares {
                s.recipient.element().write_to(&mut out);
                out.extend_from_slice(&s.bytes);
            }
            write_roster(&m.roster, &mut out);
            put_blob(&mut out, &m.signature);
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    params: &'a Arc<FieldParams>,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() < n {
            return Err(CodecError::MalformedMessage("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn id(&mut self) -> Result<PartyId, CodecError> {
        let chunk = self.take(self.params.width())?;
        self.params
            .decode(chunk)
            .and_then(PartyId::from_element)
            .ok_or(CodecError::MalformedMessage("invalid party id"))
    }

    fn blob(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()?;
        Ok(self.take(len)?.to_vec())
    }

    fn finish(self) -> Result<(), CodecError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(CodecError::MalformedMessage("trailing octets"))
        }
    }
}

/// Strict parse of either wire message under the session's field parameters.
pub fn parse_message(bytes: &[u8], params: &Arc<FieldParams>) -> Result<Message, CodecError> {
    let mut r = Reader { buf: bytes, params };
    let w = params.width();
    let msg = match r.u8()? {
        TAG_CONTRIBUTION => {
            let sender = r.id()?;
            let ciphertext = r.blob()?;
            let signature = r.blob()?;
            Message::Contribution(ContributionMessage { sender, ciphertext, signature })
        }
        TAG_BROADCAST => {
            let leader = r.id()?;
            let n = r.u32()?;
            if n == 0 {
                return Err(CodecError::MalformedMessage("no shares"));
            }
            let share_len = n
                .checked_add(1)
                .and_then(|k| k.checked_mul(w))
                .ok_or(CodecError::MalformedMessage("share count overflow"))?;
            let entries_len = share_len
                .checked_add(w)
                .and_then(|e| e.checked_mul(n))
                .ok_or(CodecError::MalformedMessage("share count overflow"))?;
            if entries_len > r.buf.len() {
                return Err(CodecError::MalformedMessage("share count exceeds message length"));
            }
            let mut shares = Vec::with_capacity(n);
            for _ in 0..n {
                let recipient = r.id()?;
                let bytes = r.take(share_len)?.to_vec();
                shares.push(MaskedShare { recipient, bytes });
            }
            let count = r.u32()?;
            if count == 0 {
                return Err(CodecError::MalformedMessage("empty roster"));
            }
            if count.checked_mul(w).is_none_or(|len| len > r.buf.len()) {
                return Err(CodecError::MalformedMessage("roster count exceeds message length"));
            }
            let mut ids: Vec<PartyId> = Vec::with_capacity(count);
            for _ in 0..count {
                let id = r.id()?;
                if ids.last().is_some_and(|prev| prev >= &id) {
                    return Err(CodecError::MalformedMessage("roster not in canonical order"));
                }
                ids.push(id);
            }
            let roster = Roster::new(ids).map_err(|_| CodecError::MalformedMessage("invalid roster"))?;
            let signature = r.blob()?;
            Message::Broadcast(BroadcastMessage { leader, shares, roster, signature })
        }
        _ => return Err(CodecError::MalformedMessage("unknown message tag")),
    };
    r.finish()?;
    Ok(msg)
}
