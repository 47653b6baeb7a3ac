use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use super::{
    AdversaryScript, Envelope, HarnessError, Outcome, Recipient, SessionOutcome, Simulation, TestRecord, Transcript,
};
use crate::codec::{parse_message, serialize_message, Message, SessionKey};
use crate::field::FieldParams;
use crate::meter::OpCounts;
use crate::protocol::{AbscissaMode, PartyId, Phase, ProtocolError, UserState};

/// Keys and transcript of one fully honest session.
#[derive(Debug, Clone)]
pub struct HonestRun {
    pub leader: PartyId,
    pub keys: BTreeMap<PartyId, SessionKey>,
    pub transcript: Transcript,
}

impl HonestRun {
    pub fn all_agree(&self) -> bool {
        let mut keys = self.keys.values();
        match keys.next() {
            Some(first) => keys.all(|k| k == first),
            None => false,
        }
    }
}

pub fn run_honest_session(n: usize, params: &Arc<FieldParams>, seed: u64) -> Result<HonestRun, HarnessError> {
    run_honest_session_with_mode(n, params, seed, AbscissaMode::Identity)
}

pub fn run_honest_session_with_mode(
    n: usize,
    params: &Arc<FieldParams>,
    seed: u64,
    mode: AbscissaMode,
) -> Result<HonestRun, HarnessError> {
    let mut sim = Simulation::new(n, params, seed, mode)?;
    sim.run(&AdversaryScript::honest())?;
    let outcome = &sim.sessions()[0];
    let mut keys = BTreeMap::new();
    for (id, o) in outcome.users.iter().chain(std::iter::once((sim.leader().id(), &outcome.leader))) {
        match o {
            Outcome::Accepted(k) => {
                keys.insert(id.clone(), k.clone());
            }
            Outcome::Rejected(reason) => {
                return Err(HarnessError::Setup(format!("honest party {id} rejected: {reason:?}")));
            }
        }
    }
    Ok(HonestRun { leader: sim.leader().id().clone(), keys, transcript: sim.transcript().clone() })
}

#[derive(Debug, Clone)]
pub struct ScriptReport {
    pub sessions: Vec<SessionOutcome>,
    pub tests: Vec<TestRecord>,
    pub transcript: Transcript,
}

impl ScriptReport {
    pub fn last(&self) -> &SessionOutcome {
        self.sessions.last().expect("at least one session")
    }
}

pub fn run_script(
    script: &AdversaryScript,
    n: usize,
    params: &Arc<FieldParams>,
    seed: u64,
) -> Result<ScriptReport, HarnessError> {
    let mut sim = Simulation::new(n, params, seed, AbscissaMode::Identity)?;
    sim.run(script)?;
    Ok(ScriptReport {
        sessions: sim.sessions().to_vec(),
        tests: sim.tests().to_vec(),
        transcript: sim.transcript().clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipKind {
    Join,
    Leave,
}

#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub kind: MembershipKind,
    /// Keys of every party, leader included, before the change.
    pub before: BTreeMap<PartyId, SessionKey>,
    /// Keys of every accepting party after the change.
    pub after: BTreeMap<PartyId, SessionKey>,
    /// Parties that rejected the rekey broadcast.
    pub rejected: BTreeMap<PartyId, ProtocolError>,
    pub changed: PartyId,
    pub leader: PartyId,
    pub transcript: Transcript,
}

impl MembershipReport {
    pub fn before_key(&self) -> &SessionKey {
        &self.before[&self.leader]
    }

    pub fn after_key(&self) -> &SessionKey {
        &self.after[&self.leader]
    }

    pub fn after_agrees(&self) -> bool {
        self.after.values().all(|k| k == self.after_key())
    }
}

/// An honest session followed by one join (new id `n + 2`) or one leave
/// (highest user id departs).
pub fn run_membership_scenario(
    kind: MembershipKind,
    n: usize,
    params: &Arc<FieldParams>,
    seed: u64,
) -> Result<MembershipReport, HarnessError> {
    if kind == MembershipKind::Leave && n < 2 {
        return Err(HarnessError::Setup("leave needs at least two users".into()));
    }
    let mut sim = Simulation::new(n, params, seed, AbscissaMode::Identity)?;
    sim.run(&AdversaryScript::honest())?;
    let leader = sim.leader().id().clone();
    let first = &sim.sessions()[0];
    let mut before = BTreeMap::new();
    for (id, o) in first.users.iter() {
        let k = o.key().ok_or_else(|| HarnessError::Setup(format!("{id} rejected the initial session")))?;
        before.insert(id.clone(), k.clone());
    }
    before.insert(leader.clone(), first.leader.key().cloned().expect("leader broadcast"));

    let (changed, broadcast) = match kind {
        MembershipKind::Join => {
            let new_id = PartyId::new(params, n as u64 + 2)
                .ok_or_else(|| HarnessError::Setup("joining id does not fit the field".into()))?;
            let suite = sim.suite().clone();
            let keys = suite.sig.generate(sim.rng());
            sim.leader_mut().register_user(new_id.clone(), keys.verify_key.clone())?;
            // provisioning mirrors the initial users: same leader keys
            let template = sim.users().values().next().expect("n >= 1");
            let (enc_key, leader_vk) = template.leader_keys();
            let mut user = UserState::new(new_id.clone(), leader.clone(), keys, enc_key, leader_vk, suite, AbscissaMode::Identity);
            let msg = user.prepare_contribution(sim.rng())?;
            let round = sim.next_round();
            let env = Envelope {
                round,
                from: new_id.clone(),
                to: Recipient::Party(leader.clone()),
                bytes: serialize_message(&Message::Contribution(msg.clone())),
            };
            sim.record(&env);
            sim.users_mut().insert(new_id.clone(), user);
            let (leader_state, rng) = sim.leader_and_rng();
            let broadcast = leader_state.handle_join(&msg, rng)?;
            (new_id, (round + 1, broadcast))
        }
        MembershipKind::Leave => {
            let departing = sim.users().keys().next_back().cloned().expect("n >= 2");
            let round = sim.next_round();
            let (leader_state, rng) = sim.leader_and_rng();
            let broadcast = leader_state.handle_leave(&departing, rng)?;
            (departing, (round, broadcast))
        }
    };
    let (round, broadcast) = broadcast;
    let env = Envelope {
        round,
        from: leader.clone(),
        to: Recipient::Broadcast,
        bytes: serialize_message(&Message::Broadcast(broadcast)),
    };
    sim.record(&env);
    let msg = match parse_message(&env.bytes, params) {
        Ok(Message::Broadcast(m)) => m,
        _ => unreachable!("leader output always parses"),
    };

    let mut after = BTreeMap::new();
    let mut rejected = BTreeMap::new();
    for (id, user) in sim.users_mut().iter_mut() {
        let result = match user.phase() {
            Phase::Sent => user.process_broadcast(&msg),
            _ => user.process_rekey(&msg),
        };
        match result {
            Ok(k) => {
                after.insert(id.clone(), k);
            }
            Err(e) => {
                rejected.insert(id.clone(), e);
            }
        }
    }
    let leader_key = sim.leader().session_key().cloned().expect("rekey computed");
    after.insert(leader.clone(), leader_key);
    let mut transcript = sim.transcript().clone();
    transcript.ops.insert(leader.clone(), sim.leader().ops());
    for (id, u) in sim.users() {
        transcript.ops.insert(id.clone(), u.ops());
    }
    Ok(MembershipReport { kind, before, after, rejected, changed, leader, transcript })
}

/// Outcome of flipping every bit of an honest broadcast, one at a time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TamperReport {
    pub positions: usize,
    /// (position, user) pairs where a user accepted; must stay zero.
    pub accepted: usize,
    pub parse_rejections: usize,
    pub signature_rejections: usize,
    pub other_rejections: usize,
}

/// Exhaustive single-bit tamper sweep over the broadcast of an honest session.
pub fn tamper_sweep(n: usize, params: &Arc<FieldParams>, seed: u64) -> Result<TamperReport, HarnessError> {
    let mut sim = Simulation::new(n, params, seed, AbscissaMode::Identity)?;
    for _ in 0..n {
        sim.apply(&super::Action::Deliver)?;
    }
    let broadcast = sim
        .queue()
        .front()
        .filter(|e| e.to == Recipient::Broadcast)
        .cloned()
        .ok_or_else(|| HarnessError::Setup("leader did not broadcast".into()))?;
    let users: Vec<UserState> = sim.users().values().cloned().collect();
    let mut report = TamperReport { positions: broadcast.bytes.len() * 8, ..Default::default() };
    for bit in 0..report.positions {
        let mut bytes = broadcast.bytes.clone();
        bytes[bit / 8] ^= 0x80 >> (bit % 8);
        match parse_message(&bytes, params) {
            Ok(Message::Broadcast(m)) => {
                for u in &users {
                    let mut u = u.clone();
                    match u.process_broadcast(&m) {
                        Ok(_) => report.accepted += 1,
                        Err(ProtocolError::SignatureInvalid) => report.signature_rejections += 1,
                        Err(_) => report.other_rejections += 1,
                    }
                }
            }
            _ => report.parse_rejections += 1,
        }
    }
    Ok(report)
}

/// Measured communication and computation for one group size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub n: usize,
    pub p_bits: u64,
    pub width: usize,
    pub rounds: usize,
    /// Octets of the leader's broadcast.
    pub leader_octets: usize,
    /// Octets of one user's upload; the same for every user.
    pub user_octets: usize,
    /// Sum of all transcript events.
    pub total_octets: usize,
    pub user_mults: u64,
    pub user_xor_octets: u64,
    pub user_xor_passes: u64,
    pub leader_mults: u64,
    pub ops: BTreeMap<PartyId, OpCounts>,
}

/// One CSV line of a [`CostReport`].
#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct CostRow {
    pub n: usize,
    pub p_bits: u64,
    pub leader_octets: usize,
    pub user_octets: usize,
    pub rounds: usize,
    pub user_mults: u64,
    pub user_xor_octets: u64,
    pub leader_mults: u64,
}

impl CostReport {
    pub fn row(&self) -> CostRow {
        CostRow {
            n: self.n,
            p_bits: self.p_bits,
            leader_octets: self.leader_octets,
            user_octets: self.user_octets,
            rounds: self.rounds,
            user_mults: self.user_mults,
            user_xor_octets: self.user_xor_octets,
            leader_mults: self.leader_mults,
        }
    }
}

pub fn measure_costs(n_values: &[usize], params: &Arc<FieldParams>, seed: u64) -> Result<Vec<CostReport>, HarnessError> {
    if n_values.is_empty() {
        return Err(HarnessError::Setup("no group sizes given".into()));
    }
    n_values
        .iter()
        .map(|&n| {
            let run = run_honest_session(n, params, seed)?;
            let t = &run.transcript;
            let leader_octets = t.octets_from(&run.leader);
            let uploads: Vec<usize> =
                run.keys.keys().filter(|id| **id != run.leader).map(|id| t.octets_from(id)).collect();
            let user_octets = uploads[0];
            if uploads.iter().any(|&u| u != user_octets) {
                return Err(HarnessError::Setup("user uploads differ in size".into()));
            }
            let online: Vec<&OpCounts> = t.online_ops.values().collect();
            let first = online[0];
            if online.iter().any(|o| o.field_mults != first.field_mults || o.xor_octets != first.xor_octets) {
                return Err(HarnessError::Setup("users performed different online work".into()));
            }
            Ok(CostReport {
                n,
                p_bits: params.bits(),
                width: params.width(),
                rounds: t.rounds(),
                leader_octets,
                user_octets,
                total_octets: t.total_octets(),
                user_mults: first.field_mults,
                user_xor_octets: first.xor_octets,
                user_xor_passes: first.xor_passes,
                leader_mults: t.ops[&run.leader].field_mults,
                ops: t.ops.clone(),
            })
        })
        .collect()
}

/// Writes the reports as CSV with the stable column set of [`CostRow`].
pub fn write_cost_csv<W: Write>(reports: &[CostReport], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r.row())?;
    }
    w.flush()?;
    Ok(())
}
