//! Deterministic in-memory network for driving whole protocol runs.
//!
//! A [`Simulation`] owns one leader and `n` users (ids `1..=n`, leader
//! `n + 1`), a FIFO delivery queue and a [`Transcript`]. Parties react to
//! deliveries immediately; the leader broadcasts as soon as it holds a
//! contribution from every roster member. An [`AdversaryScript`] decides what
//! happens to the queue head at each step.
//!
//! All randomness comes from one ChaCha20 stream seeded by the caller, so a
//! (script, seed, params) triple always yields the same transcript.

mod corpus;
mod scenarios;

pub use corpus::{attack_corpus, run_attack_family, AttackFamily, ScenarioResult};
pub use scenarios::{
    measure_costs, run_honest_session, run_honest_session_with_mode, run_membership_scenario, run_script,
    tamper_sweep, write_cost_csv, CostReport, CostRow, HonestRun, MembershipKind, MembershipReport, ScriptReport,
    TamperReport,
};

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::codec::{parse_message, serialize_message, CodecError, Message, Roster, SessionKey};
use crate::crypto::{make_test_suite, CryptoSuite, TestSuite};
use crate::field::{FieldElement, FieldParams};
use crate::meter::OpCounts;
use crate::protocol::{AbscissaMode, LeaderState, PartyId, Phase, ProtocolError, UserState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("invalid script: {0}")]
    ScriptInvalid(String),
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Recipient {
    Party(PartyId),
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub round: u32,
    pub from: PartyId,
    pub to: Recipient,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEvent {
    pub round: u32,
    pub sender: PartyId,
    pub receiver: Recipient,
    pub bytes: Vec<u8>,
    pub octets: usize,
}

/// Delivered messages in delivery order plus per-party operation counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub events: Vec<TranscriptEvent>,
    pub ops: BTreeMap<PartyId, OpCounts>,
    /// Counters spent by each user inside its most recent broadcast handling.
    pub online_ops: BTreeMap<PartyId, OpCounts>,
}

impl Transcript {
    fn record(&mut self, env: &Envelope) {
        self.events.push(TranscriptEvent {
            round: env.round,
            sender: env.from.clone(),
            receiver: env.to.clone(),
            bytes: env.bytes.clone(),
            octets: env.bytes.len(),
        });
    }

    pub fn unicasts(&self) -> usize {
        self.events.iter().filter(|e| matches!(e.receiver, Recipient::Party(_))).count()
    }

    pub fn broadcasts(&self) -> usize {
        self.events.iter().filter(|e| e.receiver == Recipient::Broadcast).count()
    }

    /// Number of distinct round indices that carried traffic.
    pub fn rounds(&self) -> usize {
        self.events.iter().map(|e| e.round).collect::<BTreeSet<_>>().len()
    }

    pub fn total_octets(&self) -> usize {
        self.events.iter().map(|e| e.octets).sum()
    }

    pub fn octets_from(&self, id: &PartyId) -> usize {
        self.events.iter().filter(|e| &e.sender == id).map(|e| e.octets).sum()
    }
}

/// One adversary step; queue operations act on the head of the delivery queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    /// Deliver the head message.
    Deliver,
    /// Deliver until the queue is empty, including messages produced meanwhile.
    DeliverAll,
    /// Discard the head message.
    Drop,
    /// Record a copy of the head message for later replay.
    Duplicate,
    /// Put the `i`-th recorded copy at the head of the queue.
    Replay(usize),
    /// Flip one bit (index from the first octet's most significant bit).
    TamperBit(usize),
    /// Replace the head message's signature with a forgery.
    InjectForged,
    /// Reveal query: the adversary learns the party's current session key.
    RevealKey(u64),
    /// Corrupt the leader so that it substitutes this user's contribution.
    CorruptLeaderOmit(u64),
    /// Test query against the party's current session key.
    TestCompare(u64),
    /// Close the session and start the next one with fresh contributions.
    NextSession,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryScript {
    pub actions: Vec<Action>,
}

impl AdversaryScript {
    pub fn new(actions: Vec<Action>) -> Self {
        Self { actions }
    }

    pub fn honest() -> Self {
        Self::new(vec![Action::DeliverAll])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    Protocol(ProtocolError),
    Malformed(CodecError),
    NoBroadcast,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Accepted(SessionKey),
    Rejected(RejectReason),
}

impl Outcome {
    pub fn key(&self) -> Option<&SessionKey> {
        match self {
            Outcome::Accepted(k) => Some(k),
            Outcome::Rejected(_) => None,
        }
    }

    pub fn is_accepted(&self) -> bool {
        matches!(self, Outcome::Accepted(_))
    }

    pub fn protocol_error(&self) -> Option<&ProtocolError> {
        match self {
            Outcome::Rejected(RejectReason::Protocol(e)) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionOutcome {
    pub session: u32,
    pub users: BTreeMap<PartyId, Outcome>,
    pub leader: Outcome,
    /// Contributions the leader refused, keyed by the claimed sender.
    pub leader_rejections: Vec<(PartyId, RejectReason)>,
}

impl SessionOutcome {
    /// All accepting parties, leader included, hold the same key.
    pub fn agreement_holds(&self) -> bool {
        let keys: BTreeSet<&[u8; 32]> = self
            .users
            .values()
            .chain(std::iter::once(&self.leader))
            .filter_map(|o| o.key().map(SessionKey::as_bytes))
            .collect();
        keys.len() <= 1
    }

    pub fn accepted_users(&self) -> usize {
        self.users.values().filter(|o| o.is_accepted()).count()
    }
}

/// Result of a Test query: the real key versus an equal-length random string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestRecord {
    pub session: u32,
    pub party: PartyId,
    /// No Reveal was issued for this party's key in this session.
    pub fresh: bool,
    pub real: SessionKey,
    pub random: [u8; 32],
}

impl TestRecord {
    pub fn distinguishable_by_value(&self) -> bool {
        self.real.as_bytes() != &self.random
    }
}

/// A running group: parties, network and recorder.
pub struct Simulation {
    params: Arc<FieldParams>,
    test_suite: TestSuite,
    suite: CryptoSuite,
    rng: ChaCha20Rng,
    leader: LeaderState,
    users: BTreeMap<PartyId, UserState>,
    queue: VecDeque<Envelope>,
    captured: Vec<Envelope>,
    transcript: Transcript,
    session: u32,
    base_round: u32,
    broadcast_done: bool,
    corrupt_omit: BTreeSet<PartyId>,
    parse_failures: BTreeMap<PartyId, CodecError>,
    leader_rejections: Vec<(PartyId, RejectReason)>,
    revealed: BTreeSet<PartyId>,
    tests: Vec<TestRecord>,
    closed: Vec<SessionOutcome>,
}

impl Simulation {
    /// Builds a group of `n` users and opens the first session (round 1
    /// contributions are queued, nothing delivered).
    pub fn new(n: usize, params: &Arc<FieldParams>, seed: u64, mode: AbscissaMode) -> Result<Self, HarnessError> {
        if n == 0 {
            return Err(HarnessError::Setup("group size must be at least 1".into()));
        }
        let id = |v: u64| {
            PartyId::new(params, v).ok_or_else(|| HarnessError::Setup(format!("id {v} does not fit the field")))
        };
        let leader_id = id(n as u64 + 1)?;
        let test_suite = make_test_suite(seed);
        let suite = test_suite.suite();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let enc_keys = suite.enc.generate(&mut rng);
        let leader_sig = suite.sig.generate(&mut rng);

        let mut users = BTreeMap::new();
        let mut verify_keys = BTreeMap::new();
        for v in 1..=n as u64 {
            let uid = id(v)?;
            let keys = suite.sig.generate(&mut rng);
            verify_keys.insert(uid.clone(), keys.verify_key.clone());
            let user = UserState::new(
                uid.clone(),
                leader_id.clone(),
                keys,
                enc_keys.encryption_key.clone(),
                leader_sig.verify_key.clone(),
                suite.clone(),
                mode,
            );
            users.insert(uid, user);
        }
        let roster = Roster::new(users.keys().cloned()).map_err(|e| HarnessError::Setup(e.to_string()))?;
        let leader = LeaderState::new(leader_id, roster, enc_keys, leader_sig, verify_keys, suite.clone(), mode)?;

        let mut sim = Self {
            params: Arc::clone(params),
            test_suite,
            suite,
            rng,
            leader,
            users,
            queue: VecDeque::new(),
            captured: Vec::new(),
            transcript: Transcript::default(),
            session: 0,
            base_round: 0,
            broadcast_done: false,
            corrupt_omit: BTreeSet::new(),
            parse_failures: BTreeMap::new(),
            leader_rejections: Vec::new(),
            revealed: BTreeSet::new(),
            tests: Vec::new(),
            closed: Vec::new(),
        };
        sim.open_session()?;
        Ok(sim)
    }

    pub fn params(&self) -> &Arc<FieldParams> {
        &self.params
    }

    pub fn leader(&self) -> &LeaderState {
        &self.leader
    }

    pub fn users(&self) -> &BTreeMap<PartyId, UserState> {
        &self.users
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn queue(&self) -> &VecDeque<Envelope> {
        &self.queue
    }

    pub fn sessions(&self) -> &[SessionOutcome] {
        &self.closed
    }

    pub fn tests(&self) -> &[TestRecord] {
        &self.tests
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    fn party(&self, v: u64) -> Result<PartyId, HarnessError> {
        let id = PartyId::new(&self.params, v).ok_or_else(|| HarnessError::ScriptInvalid(format!("no party {v}")))?;
        if id == *self.leader.id() || self.users.contains_key(&id) {
            Ok(id)
        } else {
            Err(HarnessError::ScriptInvalid(format!("no party {v}")))
        }
    }

    fn user(&self, v: u64) -> Result<PartyId, HarnessError> {
        let id = self.party(v)?;
        if self.users.contains_key(&id) {
            Ok(id)
        } else {
            Err(HarnessError::ScriptInvalid(format!("party {v} is not a user")))
        }
    }

    fn round(&self, step: u32) -> u32 {
        self.base_round + step
    }

    fn open_session(&mut self) -> Result<(), HarnessError> {
        self.session += 1;
        self.broadcast_done = false;
        self.corrupt_omit.clear();
        self.parse_failures.clear();
        self.leader_rejections.clear();
        self.revealed.clear();
        self.leader.begin_session();
        let group_size = self.leader.roster().len();
        let leader_id = self.leader.id().clone();
        let round = self.round(1);
        for (id, user) in self.users.iter_mut() {
            user.begin_session();
            let msg = user.prepare_contribution(&mut self.rng)?;
            // offline: everything but the XOR and Horner check happens here
            user.precompute_mask(group_size)?;
            self.queue.push_back(Envelope {
                round,
                from: id.clone(),
                to: Recipient::Party(leader_id.clone()),
                bytes: serialize_message(&Message::Contribution(msg)),
            });
        }
        Ok(())
    }

    /// Finalizes the current session's outcomes.
    pub fn close_session(&mut self) {
        let users = self
            .users
            .iter()
            .map(|(id, u)| {
                let outcome = match (u.phase(), u.session_key(), u.last_error()) {
                    (Phase::Accepted, Some(k), _) => Outcome::Accepted(k.clone()),
                    (Phase::Rejected, _, Some(e)) => Outcome::Rejected(RejectReason::Protocol(e.clone())),
                    _ => Outcome::Rejected(
                        self.parse_failures
                            .get(id)
                            .cloned()
                            .map(RejectReason::Malformed)
                            .unwrap_or(RejectReason::NoBroadcast),
                    ),
                };
                (id.clone(), outcome)
            })
            .collect();
        let leader = match self.leader.session_key() {
            Some(k) if self.broadcast_done => Outcome::Accepted(k.clone()),
            _ => {
                let missing: Vec<PartyId> =
                    self.leader.roster().iter().filter(|id| !self.leader.pending().contains_key(id)).cloned().collect();
                Outcome::Rejected(RejectReason::Protocol(ProtocolError::MissingContributions(missing)))
            }
        };
        self.closed.push(SessionOutcome {
            session: self.session,
            users,
            leader,
            leader_rejections: std::mem::take(&mut self.leader_rejections),
        });
        self.sync_ops();
    }

    fn sync_ops(&mut self) {
        self.transcript.ops.insert(self.leader.id().clone(), self.leader.ops());
        for (id, u) in &self.users {
            self.transcript.ops.insert(id.clone(), u.ops());
        }
    }

    fn head(&mut self) -> Result<&mut Envelope, HarnessError> {
        self.queue.front_mut().ok_or_else(|| HarnessError::ScriptInvalid("queue is empty".into()))
    }

    pub fn apply(&mut self, action: &Action) -> Result<(), HarnessError> {
        match action {
            Action::Deliver => {
                let env = self.queue.pop_front().ok_or_else(|| HarnessError::ScriptInvalid("queue is empty".into()))?;
                self.deliver(env)?;
            }
            Action::DeliverAll => {
                while let Some(env) = self.queue.pop_front() {
                    self.deliver(env)?;
                }
            }
            Action::Drop => {
                self.queue.pop_front().ok_or_else(|| HarnessError::ScriptInvalid("queue is empty".into()))?;
            }
            Action::Duplicate => {
                let copy = self.head()?.clone();
                self.captured.push(copy);
            }
            Action::Replay(i) => {
                let copy = self
                    .captured
                    .get(*i)
                    .cloned()
                    .ok_or_else(|| HarnessError::ScriptInvalid(format!("no captured message {i}")))?;
                self.queue.push_front(copy);
            }
            Action::TamperBit(bit) => {
                let env = self.head()?;
                if *bit >= env.bytes.len() * 8 {
                    return Err(HarnessError::ScriptInvalid(format!("bit {bit} beyond message")));
                }
                env.bytes[bit / 8] ^= 0x80 >> (bit % 8);
            }
            Action::InjectForged => {
                let params = Arc::clone(&self.params);
                let bytes = self.head()?.bytes.clone();
                let forged = match parse_message(&bytes, &params) {
                    Ok(Message::Contribution(mut m)) => {
                        // the forgery is claimed for the content the signature is meant to cover
                        m.signature = self.test_suite.forge_signature(&m.ciphertext, &mut self.rng);
                        Message::Contribution(m)
                    }
                    Ok(Message::Broadcast(mut m)) => {
                        m.signature = self.test_suite.forge_signature(&m.signed_bytes(), &mut self.rng);
                        Message::Broadcast(m)
                    }
                    Err(e) => return Err(HarnessError::ScriptInvalid(format!("cannot forge over garbage: {e}"))),
                };
                self.head()?.bytes = serialize_message(&forged);
            }
            Action::RevealKey(v) => {
                let id = self.party(*v)?;
                self.revealed.insert(id);
            }
            Action::CorruptLeaderOmit(v) => {
                let id = self.user(*v)?;
                self.corrupt_omit.insert(id);
            }
            Action::TestCompare(v) => {
                let id = self.party(*v)?;
                let real = if &id == self.leader.id() {
                    self.leader.session_key().cloned()
                } else {
                    self.users[&id].session_key().cloned()
                };
                let real = real.ok_or_else(|| HarnessError::ScriptInvalid(format!("party {v} holds no key")))?;
                let mut random = [0u8; 32];
                self.rng.fill_bytes(&mut random);
                self.tests.push(TestRecord {
                    session: self.session,
                    fresh: !self.revealed.contains(&id),
                    party: id,
                    real,
                    random,
                });
            }
            Action::NextSession => {
                self.close_session();
                self.base_round += 2;
                self.open_session()?;
            }
        }
        self.advance()
    }

    /// Lets the leader broadcast once every roster member has contributed.
    fn advance(&mut self) -> Result<(), HarnessError> {
        if self.broadcast_done || self.leader.roster().iter().any(|id| !self.leader.pending().contains_key(id)) {
            return Ok(());
        }
        let x_0 = self.params.sample(&mut self.rng, false);
        let mut substitutions = BTreeMap::new();
        for victim in &self.corrupt_omit {
            let real = &self.leader.pending()[victim].x;
            let fake = loop {
                let candidate: FieldElement = self.params.sample(&mut self.rng, false);
                if &candidate != real {
                    break candidate;
                }
            };
            substitutions.insert(victim.clone(), fake);
        }
        let msg = self.leader.compute_round_with(x_0, &substitutions)?;
        self.broadcast_done = true;
        self.queue.push_back(Envelope {
            round: self.round(2),
            from: self.leader.id().clone(),
            to: Recipient::Broadcast,
            bytes: serialize_message(&Message::Broadcast(msg)),
        });
        Ok(())
    }

    fn deliver(&mut self, env: Envelope) -> Result<(), HarnessError> {
        self.transcript.record(&env);
        match &env.to {
            Recipient::Party(to) if to == self.leader.id() => {
                match parse_message(&env.bytes, &self.params) {
                    Ok(Message::Contribution(m)) => {
                        if let Err(e) = self.leader.register_contribution(&m) {
                            self.leader_rejections.push((m.sender.clone(), RejectReason::Protocol(e)));
                        }
                    }
                    Ok(Message::Broadcast(_)) => {
                        self.leader_rejections.push((env.from.clone(), RejectReason::Protocol(ProtocolError::IdMismatch)));
                    }
                    Err(e) => self.leader_rejections.push((env.from.clone(), RejectReason::Malformed(e))),
                }
            }
            Recipient::Party(_) => {}
            Recipient::Broadcast => {
                let parsed = parse_message(&env.bytes, &self.params);
                for (id, user) in self.users.iter_mut() {
                    if user.phase() != Phase::Sent {
                        continue;
                    }
                    match &parsed {
                        Ok(Message::Broadcast(m)) => {
                            let before = user.ops();
                            let _ = user.process_broadcast(m);
                            self.transcript.online_ops.insert(id.clone(), user.ops().since(&before));
                        }
                        Ok(Message::Contribution(_)) => {
                            self.parse_failures
                                .insert(id.clone(), CodecError::MalformedMessage("unexpected message type"));
                        }
                        Err(e) => {
                            self.parse_failures.insert(id.clone(), e.clone());
                        }
                    }
                }
            }
        }
        self.sync_ops();
        self.advance()
    }

    /// Runs every action then closes the final session.
    pub fn run(&mut self, script: &AdversaryScript) -> Result<(), HarnessError> {
        for action in &script.actions {
            self.apply(action)?;
        }
        self.close_session();
        Ok(())
    }

    pub(crate) fn users_mut(&mut self) -> &mut BTreeMap<PartyId, UserState> {
        &mut self.users
    }

    pub(crate) fn leader_mut(&mut self) -> &mut LeaderState {
        &mut self.leader
    }

    pub(crate) fn leader_and_rng(&mut self) -> (&mut LeaderState, &mut ChaCha20Rng) {
        (&mut self.leader, &mut self.rng)
    }

    pub(crate) fn suite(&self) -> &CryptoSuite {
        &self.suite
    }

    pub(crate) fn record(&mut self, env: &Envelope) {
        self.transcript.record(env);
    }

    pub(crate) fn next_round(&mut self) -> u32 {
        self.base_round += 2;
        self.base_round + 1
    }
}
