//! Leader and user state machines for the two-round key agreement.
//!
//! Round 1: every user sends its encrypted and signed contribution
//! `(ID_i, ID_0, x_i, C_i)` to the leader. Round 2: the leader interpolates
//! all contributions plus its own `(ID_0, x_0)` into `A(x)`, sets
//! `K = a_0 || ... || a_n` and broadcasts `P_i = K xor keystream_i` for every
//! user under its signature. Each user unmasks `K`, checks `A(ID_i) = x_i`
//! with Horner's rule and derives the session key from `(K, U)`.
//!
//! Membership changes reuse the stored contributions of remaining users and
//! refresh only the leader's point.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::RngCore;
use thiserror::Error;

use crate::codec::{
    self, contribution_plaintext, decode_secret, derive_session_key, encode_secret, keystream, mask_secret,
    parse_contribution_plaintext, BroadcastMessage, CodecError, ContributionMessage, MaskedShare, MasterSecret,
    Roster, SessionKey,
};
use crate::crypto::{CryptoSuite, EncryptionKeypair, SignatureKeypair};
use crate::field::{lagrange_interpolate_counted, FieldElement, FieldError, FieldParams};
use crate::meter::OpCounts;

/// Domain-separation prefix for hashed abscissas.
const DOMAIN_ABSCISSA: u8 = 0x03;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("operation not allowed in phase {0:?}")]
    InvalidState(Phase),
    #[error("contribution could not be decrypted")]
    DecryptionFailure,
    #[error("contribution plaintext is malformed")]
    MalformedContribution,
    #[error("signature verification failed")]
    SignatureInvalid,
    #[error("counter {got} not above last accepted {last}")]
    ReplayDetected { last: u64, got: u64 },
    #[error("unknown sender {0}")]
    UnknownSender(PartyId),
    #[error("identities in the message do not match the session")]
    IdMismatch,
    #[error("{0} already submitted a contribution this session")]
    DuplicateSubmission(PartyId),
    #[error("missing contributions from {0:?}")]
    MissingContributions(Vec<PartyId>),
    #[error("duplicate interpolation abscissa")]
    DuplicateAbscissa,
    #[error("broadcast carries no share for this user")]
    ShareMissing,
    #[error("broadcast shares do not match its roster")]
    InconsistentBroadcast,
    #[error("malformed master secret")]
    MalformedSecret,
    #[error("own contribution is not on the distributed polynomial")]
    ContributionNotUsed,
    #[error("{0} is already a member")]
    AlreadyMember(PartyId),
    #[error("{0} is not a member")]
    NotAMember(PartyId),
    #[error("group would become empty")]
    GroupTooSmall,
    #[error("the leader identity collides with a user identity")]
    LeaderInRoster,
}

impl From<FieldError> for ProtocolError {
    fn from(e: FieldError) -> Self {
        match e {
            FieldError::DuplicateAbscissa(_) => ProtocolError::DuplicateAbscissa,
            _ => ProtocolError::MalformedSecret,
        }
    }
}

impl From<CodecError> for ProtocolError {
    fn from(_: CodecError) -> Self {
        ProtocolError::MalformedSecret
    }
}

/// A nonzero field element naming a party.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PartyId(FieldElement);

impl PartyId {
    pub fn from_element(e: FieldElement) -> Option<Self> {
        (!e.is_zero()).then_some(Self(e))
    }

    pub fn new(params: &Arc<FieldParams>, id: u64) -> Option<Self> {
        if BigUint::from(id) >= *params.modulus() {
            return None;
        }
        Self::from_element(params.element(id))
    }

    pub fn element(&self) -> &FieldElement {
        &self.0
    }
}

impl fmt::Debug for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Per (user, leader) session counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Counter(u64);

impl Counter {
    pub fn new(v: u64) -> Self {
        Self(v)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn next(self) -> Self {
        Self(self.0.checked_add(1).expect("counter exhausted"))
    }
}

/// How a contribution is placed on the interpolation x-axis.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AbscissaMode {
    /// The party identity itself.
    #[default]
    Identity,
    /// `H(ID_i || x_i)` reduced into the field, hiding contributions from
    /// other users who know the identities.
    Hashed,
}

/// The interpolation abscissa of a contribution under `mode`.
pub fn abscissa(mode: AbscissaMode, suite: &CryptoSuite, id: &PartyId, x: &FieldElement, ops: &mut OpCounts) -> FieldElement {
    match mode {
        AbscissaMode::Identity => id.element().clone(),
        AbscissaMode::Hashed => {
            let mut input = vec![DOMAIN_ABSCISSA];
            id.element().write_to(&mut input);
            x.write_to(&mut input);
            ops.hash_calls += 1;
            let digest = suite.hash.digest(&input);
            id.element().params().element(BigUint::from_bytes_be(&digest))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contribution {
    pub party: PartyId,
    pub x: FieldElement,
    pub counter: Counter,
    pub abscissa: FieldElement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Sent,
    Accepted,
    Rejected,
}

/// One user's protocol instance.
#[derive(Clone)]
pub struct UserState {
    me: PartyId,
    leader: PartyId,
    counter: Counter,
    keys: SignatureKeypair,
    leader_enc_key: Vec<u8>,
    leader_verify_key: Vec<u8>,
    current_x: Option<FieldElement>,
    current_abscissa: Option<FieldElement>,
    phase: Phase,
    suite: CryptoSuite,
    mode: AbscissaMode,
    offline_mask: Option<Vec<u8>>,
    session_key: Option<SessionKey>,
    last_error: Option<ProtocolError>,
    ops: OpCounts,
}

impl fmt::Debug for UserState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserState")
            .field("me", &self.me)
            .field("counter", &self.counter)
            .field("phase", &self.phase)
            .finish_non_exhaustive()
    }
}

impl UserState {
    pub fn new(
        me: PartyId,
        leader: PartyId,
        keys: SignatureKeypair,
        leader_enc_key: Vec<u8>,
        leader_verify_key: Vec<u8>,
        suite: CryptoSuite,
        mode: AbscissaMode,
    ) -> Self {
        Self {
            me,
            leader,
            counter: Counter::default(),
            keys,
            leader_enc_key,
            leader_verify_key,
            current_x: None,
            current_abscissa: None,
            phase: Phase::Idle,
            suite,
            mode,
            offline_mask: None,
            session_key: None,
            last_error: None,
            ops: OpCounts::default(),
        }
    }

    pub fn id(&self) -> &PartyId {
        &self.me
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn counter(&self) -> Counter {
        self.counter
    }

    pub fn current_x(&self) -> Option<&FieldElement> {
        self.current_x.as_ref()
    }

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.session_key.as_ref()
    }

    pub fn last_error(&self) -> Option<&ProtocolError> {
        self.last_error.as_ref()
    }

    pub fn ops(&self) -> OpCounts {
        self.ops
    }

    fn params(&self) -> &Arc<FieldParams> {
        self.me.element().params()
    }

    /// The leader's (encryption, verify) keys this user was provisioned with.
    pub(crate) fn leader_keys(&self) -> (Vec<u8>, Vec<u8>) {
        (self.leader_enc_key.clone(), self.leader_verify_key.clone())
    }

    /// Opens a new protocol instance; the counter carries over.
    pub fn begin_session(&mut self) {
        self.phase = Phase::Idle;
        self.current_x = None;
        self.current_abscissa = None;
        self.offline_mask = None;
        self.session_key = None;
        self.last_error = None;
    }

    /// Step 1 with a freshly sampled contribution. Needs no network input.
    pub fn prepare_contribution(&mut self, rng: &mut dyn RngCore) -> Result<ContributionMessage, ProtocolError> {
        if self.phase != Phase::Idle {
            return Err(ProtocolError::InvalidState(self.phase));
        }
        let params = Arc::clone(self.params());
        loop {
            let x = params.sample(rng, false);
            match self.prepare_contribution_with(x, rng) {
                Err(ProtocolError::DuplicateAbscissa) => continue,
                other => return other,
            }
        }
    }

    /// Step 1 with a caller-chosen contribution value.
    ///
    /// In hashed-abscissa mode a value whose abscissa is zero or the leader's
    /// is refused with `DuplicateAbscissa`; [`Self::prepare_contribution`] resamples.
    pub fn prepare_contribution_with(
        &mut self,
        x: FieldElement,
        rng: &mut dyn RngCore,
    ) -> Result<ContributionMessage, ProtocolError> {
        if self.phase != Phase::Idle {
            return Err(ProtocolError::InvalidState(self.phase));
        }
        let abs = abscissa(self.mode, &self.suite, &self.me, &x, &mut self.ops);
        if abs.is_zero() || &abs == self.leader.element() {
            return Err(ProtocolError::DuplicateAbscissa);
        }
        self.counter = self.counter.next();
        let plaintext = contribution_plaintext(&self.me, &self.leader, &x, self.counter);
        let ciphertext = self.suite.enc.encrypt(&self.leader_enc_key, &plaintext, rng);
        self.ops.encrypts += 1;
        let signature = self.suite.sig.sign(&self.keys.signing_key, &plaintext);
        self.ops.signs += 1;
        self.current_x = Some(x);
        self.current_abscissa = Some(abs);
        self.offline_mask = None;
        self.phase = Phase::Sent;
        Ok(ContributionMessage { sender: self.me.clone(), ciphertext, signature })
    }

    /// Precomputes the unmasking keystream for a group of `group_size` users,
    /// moving all hashing off the online path.
    pub fn precompute_mask(&mut self, group_size: usize) -> Result<(), ProtocolError> {
        let x = self.current_x.as_ref().ok_or(ProtocolError::InvalidState(self.phase))?;
        let len = (group_size + 1) * self.params().width();
        let mask = keystream(self.suite.hash.as_ref(), &self.me, &self.leader, self.counter, x, len, &mut self.ops);
        self.offline_mask = Some(mask);
        Ok(())
    }

    /// Step 5: verify the leader, unmask `K`, check `A(ID_i) = x_i`, derive the key.
    pub fn process_broadcast(&mut self, msg: &BroadcastMessage) -> Result<SessionKey, ProtocolError> {
        if self.phase != Phase::Sent {
            return Err(ProtocolError::InvalidState(self.phase));
        }
        self.settle(msg)
    }

    /// Handles a rekey broadcast after a join or leave, reusing the
    /// contribution that was already accepted.
    pub fn process_rekey(&mut self, msg: &BroadcastMessage) -> Result<SessionKey, ProtocolError> {
        if self.phase != Phase::Accepted {
            return Err(ProtocolError::InvalidState(self.phase));
        }
        self.settle(msg)
    }

    fn settle(&mut self, msg: &BroadcastMessage) -> Result<SessionKey, ProtocolError> {
        match self.verify_and_derive(msg) {
            Ok(key) => {
                self.phase = Phase::Accepted;
                self.session_key = Some(key.clone());
                self.last_error = None;
                Ok(key)
            }
            Err(e) => {
                self.phase = Phase::Rejected;
                self.session_key = None;
                self.current_x = None;
                self.current_abscissa = None;
                self.last_error = Some(e.clone());
                Err(e)
            }
        }
    }

    fn verify_and_derive(&mut self, msg: &BroadcastMessage) -> Result<SessionKey, ProtocolError> {
        if msg.leader != self.leader {
            return Err(ProtocolError::IdMismatch);
        }
        self.ops.verifies += 1;
        if !self.suite.sig.verify(&self.leader_verify_key, &msg.signed_bytes(), &msg.signature) {
            return Err(ProtocolError::SignatureInvalid);
        }
        let share = match (msg.roster.contains(&self.me), msg.share_for(&self.me)) {
            (true, Some(share)) => share,
            _ => return Err(ProtocolError::ShareMissing),
        };
        if msg.shares.len() != msg.roster.len() || !msg.shares.iter().all(|s| msg.roster.contains(&s.recipient)) {
            return Err(ProtocolError::InconsistentBroadcast);
        }
        let params = Arc::clone(self.params());
        if share.bytes.len() != (msg.shares.len() + 1) * params.width() {
            return Err(ProtocolError::MalformedSecret);
        }
        let x = self.current_x.clone().ok_or(ProtocolError::InvalidState(self.phase))?;
        let abs = self.current_abscissa.clone().ok_or(ProtocolError::InvalidState(self.phase))?;

        let mask = match self.offline_mask.take() {
            Some(m) if m.len() == share.bytes.len() => m,
            _ => keystream(
                self.suite.hash.as_ref(),
                &self.me,
                &self.leader,
                self.counter,
                &x,
                share.bytes.len(),
                &mut self.ops,
            ),
        };
        let secret = MasterSecret::from_bytes(mask_secret(&share.bytes, &mask, &mut self.ops)?);
        let poly = decode_secret(&secret, &params).map_err(|_| ProtocolError::MalformedSecret)?;
        if poly.eval_horner(&abs, &mut self.ops)? != x {
            return Err(ProtocolError::ContributionNotUsed);
        }
        Ok(derive_session_key(self.suite.hash.as_ref(), &secret, &msg.roster, &mut self.ops))
    }
}

/// The leader's protocol instance, persistent across sessions.
#[derive(Clone)]
pub struct LeaderState {
    me: PartyId,
    roster: Roster,
    pending: BTreeMap<PartyId, Contribution>,
    last_counters: BTreeMap<PartyId, Counter>,
    x_0: Option<FieldElement>,
    enc_keys: EncryptionKeypair,
    sig_keys: SignatureKeypair,
    user_verify_keys: BTreeMap<PartyId, Vec<u8>>,
    suite: CryptoSuite,
    mode: AbscissaMode,
    secret: Option<MasterSecret>,
    session_key: Option<SessionKey>,
    ops: OpCounts,
}

impl fmt::Debug for LeaderState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LeaderState")
            .field("me", &self.me)
            .field("roster", &self.roster)
            .field("pending", &self.pending.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl LeaderState {
    pub fn new(
        me: PartyId,
        roster: Roster,
        enc_keys: EncryptionKeypair,
        sig_keys: SignatureKeypair,
        user_verify_keys: BTreeMap<PartyId, Vec<u8>>,
        suite: CryptoSuite,
        mode: AbscissaMode,
    ) -> Result<Self, ProtocolError> {
        if roster.contains(&me) || user_verify_keys.contains_key(&me) {
            return Err(ProtocolError::LeaderInRoster);
        }
        if let Some(missing) = roster.iter().find(|id| !user_verify_keys.contains_key(id)) {
            return Err(ProtocolError::UnknownSender(missing.clone()));
        }
        Ok(Self {
            me,
            roster,
            pending: BTreeMap::new(),
            last_counters: BTreeMap::new(),
            x_0: None,
            enc_keys,
            sig_keys,
            user_verify_keys,
            suite,
            mode,
            secret: None,
            session_key: None,
            ops: OpCounts::default(),
        })
    }

    pub fn id(&self) -> &PartyId {
        &self.me
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn pending(&self) -> &BTreeMap<PartyId, Contribution> {
        &self.pending
    }

    pub fn last_counter(&self, id: &PartyId) -> Option<Counter> {
        self.last_counters.get(id).copied()
    }

    pub fn x_0(&self) -> Option<&FieldElement> {
        self.x_0.as_ref()
    }

    pub fn session_key(&self) -> Option<&SessionKey> {
        self.session_key.as_ref()
    }

    pub fn master_secret(&self) -> Option<&MasterSecret> {
        self.secret.as_ref()
    }

    pub fn ops(&self) -> OpCounts {
        self.ops
    }

    fn params(&self) -> &Arc<FieldParams> {
        self.me.element().params()
    }

    /// Provisions a user's verify key out of band, e.g. ahead of a join.
    pub fn register_user(&mut self, id: PartyId, verify_key: Vec<u8>) -> Result<(), ProtocolError> {
        if id == self.me {
            return Err(ProtocolError::LeaderInRoster);
        }
        self.user_verify_keys.insert(id, verify_key);
        Ok(())
    }

    /// Starts a fresh session: stored contributions are dropped, counters kept.
    pub fn begin_session(&mut self) {
        self.pending.clear();
        self.x_0 = None;
        self.secret = None;
        self.session_key = None;
    }

    /// Step 2: decrypt, authenticate and freshness-check a user's submission.
    pub fn register_contribution(&mut self, msg: &ContributionMessage) -> Result<(), ProtocolError> {
        if !self.roster.contains(&msg.sender) {
            return Err(ProtocolError::UnknownSender(msg.sender.clone()));
        }
        let contribution = self.open_contribution(msg)?;
        self.admit(contribution);
        Ok(())
    }

    fn open_contribution(&mut self, msg: &ContributionMessage) -> Result<Contribution, ProtocolError> {
        let verify_key = self
            .user_verify_keys
            .get(&msg.sender)
            .ok_or_else(|| ProtocolError::UnknownSender(msg.sender.clone()))?;
        self.ops.decrypts += 1;
        let plaintext = self
            .suite
            .enc
            .decrypt(&self.enc_keys.decryption_key, &msg.ciphertext)
            .map_err(|_| ProtocolError::DecryptionFailure)?;
        self.ops.verifies += 1;
        if !self.suite.sig.verify(verify_key, &plaintext, &msg.signature) {
            return Err(ProtocolError::SignatureInvalid);
        }
        let (id_i, id_0, x, counter) =
            parse_contribution_plaintext(&plaintext, self.params()).ok_or(ProtocolError::MalformedContribution)?;
        if id_i != msg.sender || id_0 != self.me {
            return Err(ProtocolError::IdMismatch);
        }
        let last = self.last_counters.get(&id_i).copied().unwrap_or_default();
        if counter <= last {
            return Err(ProtocolError::ReplayDetected { last: last.value(), got: counter.value() });
        }
        if self.pending.contains_key(&id_i) {
            return Err(ProtocolError::DuplicateSubmission(id_i));
        }
        let abs = abscissa(self.mode, &self.suite, &id_i, &x, &mut self.ops);
        if abs.is_zero() || &abs == self.me.element() || self.pending.values().any(|c| c.abscissa == abs) {
            return Err(ProtocolError::DuplicateAbscissa);
        }
        Ok(Contribution { party: id_i, x, counter, abscissa: abs })
    }

    fn admit(&mut self, c: Contribution) {
        self.last_counters.insert(c.party.clone(), c.counter);
        self.pending.insert(c.party.clone(), c);
    }

    /// Steps 3 and 4 with a freshly sampled leader contribution.
    pub fn compute_round(&mut self, rng: &mut dyn RngCore) -> Result<BroadcastMessage, ProtocolError> {
        let x_0 = self.params().sample(rng, false);
        self.compute_round_with(x_0, &BTreeMap::new())
    }

    /// Steps 3 and 4 with a chosen `x_0`.
    ///
    /// `substitutions` replaces the ordinate interpolated for the listed users
    /// while their masks still use the submitted values. An honest leader
    /// passes an empty map; the simulation harness uses it to model a leader
    /// that drops a contribution.
    pub fn compute_round_with(
        &mut self,
        x_0: FieldElement,
        substitutions: &BTreeMap<PartyId, FieldElement>,
    ) -> Result<BroadcastMessage, ProtocolError> {
        let missing: Vec<PartyId> = self.roster.iter().filter(|id| !self.pending.contains_key(id)).cloned().collect();
        if !missing.is_empty() {
            return Err(ProtocolError::MissingContributions(missing));
        }
        let mut points: Vec<(FieldElement, FieldElement)> = self
            .roster
            .iter()
            .map(|id| {
                let c = &self.pending[id];
                (c.abscissa.clone(), substitutions.get(id).unwrap_or(&c.x).clone())
            })
            .collect();
        points.push((self.me.element().clone(), x_0.clone()));
        let poly = lagrange_interpolate_counted(&points, &mut self.ops)?;
        let secret = encode_secret(&poly);

        let hash = Arc::clone(&self.suite.hash);
        let shares = self
            .roster
            .iter()
            .map(|id| {
                let c = &self.pending[id];
                let ks = keystream(hash.as_ref(), id, &self.me, c.counter, &c.x, secret.len(), &mut self.ops);
                let bytes = mask_secret(secret.as_bytes(), &ks, &mut self.ops)?;
                Ok(MaskedShare { recipient: id.clone(), bytes })
            })
            .collect::<Result<Vec<_>, CodecError>>()?;
        let signed = codec::broadcast_signed_bytes(&self.me, &shares, &self.roster);
        let signature = self.suite.sig.sign(&self.sig_keys.signing_key, &signed);
        self.ops.signs += 1;

        self.session_key = Some(derive_session_key(hash.as_ref(), &secret, &self.roster, &mut self.ops));
        self.secret = Some(secret);
        self.x_0 = Some(x_0);
        Ok(BroadcastMessage { leader: self.me.clone(), shares, roster: self.roster.clone(), signature })
    }

    /// Adds a new member from its contribution and rekeys the group.
    pub fn handle_join(
        &mut self,
        msg: &ContributionMessage,
        rng: &mut dyn RngCore,
    ) -> Result<BroadcastMessage, ProtocolError> {
        if self.roster.contains(&msg.sender) {
            return Err(ProtocolError::AlreadyMember(msg.sender.clone()));
        }
        let contribution = self.open_contribution(msg)?;
        let previous = self.roster.clone();
        self.roster = self.roster.with(msg.sender.clone()).map_err(|_| ProtocolError::AlreadyMember(msg.sender.clone()))?;
        self.admit(contribution);
        self.compute_round(rng).inspect_err(|_| {
            self.pending.remove(&msg.sender);
            self.roster = previous;
        })
    }

    /// Removes a member, discards its contribution and rekeys the group.
    pub fn handle_leave(
        &mut self,
        departing: &PartyId,
        rng: &mut dyn RngCore,
    ) -> Result<BroadcastMessage, ProtocolError> {
        if !self.roster.contains(departing) {
            return Err(ProtocolError::NotAMember(departing.clone()));
        }
        if self.roster.len() < 2 {
            return Err(ProtocolError::GroupTooSmall);
        }
        let remaining = self.roster.without(departing).map_err(|_| ProtocolError::GroupTooSmall)?;
        let previous = std::mem::replace(&mut self.roster, remaining);
        let dropped = self.pending.remove(departing);
        self.compute_round(rng).inspect_err(|_| {
            self.roster = previous;
            if let Some(c) = dropped {
                self.pending.insert(departing.clone(), c);
            }
        })
    }
}
