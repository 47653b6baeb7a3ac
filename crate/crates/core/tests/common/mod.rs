#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use gka_core::codec::{BroadcastMessage, ContributionMessage, MaskedShare, Message, Roster};
use gka_core::crypto::{make_test_suite, TestSuite};
use gka_core::{AbscissaMode, FieldParams, LeaderState, PartyId, UserState};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Users with ids 1..=n and a leader with id `leader_id`, all provisioned.
pub struct Group {
    pub params: Arc<FieldParams>,
    pub suite: TestSuite,
    pub leader: LeaderState,
    pub users: Vec<UserState>,
    pub rng: ChaCha20Rng,
    pub leader_enc_key: Vec<u8>,
    pub leader_verify_key: Vec<u8>,
    pub mode: AbscissaMode,
}

pub fn id(params: &Arc<FieldParams>, v: u64) -> PartyId {
    PartyId::new(params, v).unwrap()
}

impl Group {
    pub fn new(n: u64, params: &Arc<FieldParams>, seed: u64, mode: AbscissaMode) -> Self {
        Self::with_leader(n, n + 1, params, seed, mode)
    }

    pub fn with_leader(n: u64, leader_id: u64, params: &Arc<FieldParams>, seed: u64, mode: AbscissaMode) -> Self {
        let ts = make_test_suite(seed);
        let suite = ts.suite();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
        let enc = suite.enc.generate(&mut rng);
        let sig = suite.sig.generate(&mut rng);
        let leader = id(params, leader_id);
        let mut vks = BTreeMap::new();
        let mut users = Vec::new();
        for v in 1..=n {
            let kp = suite.sig.generate(&mut rng);
            vks.insert(id(params, v), kp.verify_key.clone());
            users.push(UserState::new(
                id(params, v),
                leader.clone(),
                kp,
                enc.encryption_key.clone(),
                sig.verify_key.clone(),
                suite.clone(),
                mode,
            ));
        }
        let roster = Roster::new((1..=n).map(|v| id(params, v))).unwrap();
        let leader_enc_key = enc.encryption_key.clone();
        let leader_verify_key = sig.verify_key.clone();
        let leader = LeaderState::new(leader, roster, enc, sig, vks, suite, mode).unwrap();
        Self { params: Arc::clone(params), suite: ts, leader, users, rng, leader_enc_key, leader_verify_key, mode }
    }

    /// A new user provisioned with the leader's keys and registered with the
    /// leader, but not yet on its roster.
    pub fn extra_user(&mut self, v: u64) -> UserState {
        let suite = self.suite.suite();
        let kp = suite.sig.generate(&mut self.rng);
        self.leader.register_user(id(&self.params, v), kp.verify_key.clone()).unwrap();
        UserState::new(
            id(&self.params, v),
            self.leader.id().clone(),
            kp,
            self.leader_enc_key.clone(),
            self.leader_verify_key.clone(),
            suite,
            self.mode,
        )
    }

    /// Round 1 for every user, all contributions registered.
    pub fn collect(&mut self) {
        for u in self.users.iter_mut() {
            let msg = u.prepare_contribution(&mut self.rng).unwrap();
            self.leader.register_contribution(&msg).unwrap();
        }
    }
}

/// A structurally valid message with random contents: ids in `1..200`,
/// arbitrary ciphertext and signature lengths.
pub fn random_message(params: &Arc<FieldParams>, rng: &mut impl rand::Rng) -> Message {
    fn blob(rng: &mut impl rand::Rng, max: usize) -> Vec<u8> {
        let mut v = vec![0u8; rng.gen_range(0..=max)];
        rng.fill_bytes(&mut v);
        v
    }
    if rng.gen_bool(0.5) {
        Message::Contribution(ContributionMessage {
            sender: id(params, rng.gen_range(1..200)),
            ciphertext: blob(rng, 300),
            signature: blob(rng, 64),
        })
    } else {
        let n = rng.gen_range(1..=6usize);
        let mut ids: Vec<u64> = (1..200).collect();
        ids.shuffle(rng);
        let members: Vec<PartyId> = ids[1..=n].iter().map(|&v| id(params, v)).collect();
        let shares = members
            .iter()
            .map(|m| {
                let mut bytes = vec![0u8; (n + 1) * params.width()];
                rng.fill_bytes(&mut bytes);
                MaskedShare { recipient: m.clone(), bytes }
            })
            .collect();
        Message::Broadcast(BroadcastMessage {
            leader: id(params, ids[0]),
            shares,
            roster: Roster::new(members).unwrap(),
            signature: blob(rng, 64),
        })
    }
}
