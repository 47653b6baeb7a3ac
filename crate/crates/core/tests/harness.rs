use gka_core::harness::{
    attack_corpus, measure_costs, run_attack_family, run_honest_session, run_honest_session_with_mode,
    run_membership_scenario, run_script, tamper_sweep, write_cost_csv, Action, AdversaryScript, AttackFamily,
    HarnessError, MembershipKind, Outcome, RejectReason, Simulation,
};
use gka_core::{AbscissaMode, FieldParams, PartyId, ProtocolError};

#[test]
fn honest_sessions_agree() {
    let p = FieldParams::mersenne61();
    for n in [1, 2, 8] {
        let run = run_honest_session(n, &p, 42).unwrap();
        assert_eq!(run.keys.len(), n + 1);
        assert!(run.all_agree());
        assert_eq!(run.transcript.unicasts(), n);
        assert_eq!(run.transcript.broadcasts(), 1);
        assert_eq!(run.transcript.rounds(), 2);
    }
    let hashed = run_honest_session_with_mode(6, &p, 42, AbscissaMode::Hashed).unwrap();
    assert!(hashed.all_agree());
}

#[test]
fn runs_are_deterministic_per_seed() {
    let p = FieldParams::mersenne61();
    let a = run_honest_session(4, &p, 7).unwrap();
    let b = run_honest_session(4, &p, 7).unwrap();
    let c = run_honest_session(4, &p, 8).unwrap();
    assert_eq!(a.keys, b.keys);
    assert_eq!(a.transcript, b.transcript);
    assert_ne!(a.keys, c.keys);
}

#[test]
fn dropped_contribution_stalls_the_round() {
    let p = FieldParams::mersenne61();
    let r = run_script(&AdversaryScript::new(vec![Action::Drop, Action::DeliverAll]), 3, &p, 1).unwrap();
    let s = r.last();
    assert!(!s.leader.is_accepted());
    assert!(s.users.values().all(|o| *o == Outcome::Rejected(RejectReason::NoBroadcast)));
    assert_eq!(r.transcript.broadcasts(), 0);
    assert_eq!(r.transcript.unicasts(), 2);
}

#[test]
fn tampered_contribution_is_refused() {
    let p = FieldParams::mersenne61();
    // flip a bit of the ciphertext body of the first contribution
    let bit = 8 * (1 + 8 + 4 + 20);
    let r = run_script(&AdversaryScript::new(vec![Action::TamperBit(bit), Action::DeliverAll]), 2, &p, 1).unwrap();
    let s = r.last();
    assert_eq!(s.leader_rejections.len(), 1);
    assert_eq!(s.leader_rejections[0].1, RejectReason::Protocol(ProtocolError::DecryptionFailure));
    assert_eq!(s.accepted_users(), 0);
}

#[test]
fn omission_is_detected_by_victim_only() {
    let p = FieldParams::from_u64(251).unwrap();
    let r = run_script(&AdversaryScript::new(vec![Action::CorruptLeaderOmit(2), Action::DeliverAll]), 3, &p, 5)
        .unwrap();
    let s = r.last();
    let victim = PartyId::new(&p, 2).unwrap();
    for (id, o) in &s.users {
        if *id == victim {
            assert_eq!(o.protocol_error(), Some(&ProtocolError::ContributionNotUsed));
        } else {
            assert_eq!(o.key(), s.leader.key());
        }
    }
    assert!(s.agreement_holds());
}

#[test]
fn next_session_uses_fresh_key() {
    let p = FieldParams::mersenne61();
    let r = run_script(&AdversaryScript::new(vec![Action::DeliverAll, Action::NextSession, Action::DeliverAll]), 3, &p, 2)
        .unwrap();
    assert_eq!(r.sessions.len(), 2);
    assert!(r.sessions.iter().all(|s| s.accepted_users() == 3 && s.agreement_holds()));
    assert_ne!(r.sessions[0].leader.key(), r.sessions[1].leader.key());
    assert_eq!(r.transcript.rounds(), 4);
}

#[test]
fn invalid_scripts_are_reported() {
    let p = FieldParams::mersenne61();
    let bad = [
        vec![Action::DeliverAll, Action::Deliver],
        vec![Action::Replay(0)],
        vec![Action::TamperBit(1 << 20)],
        vec![Action::CorruptLeaderOmit(99)],
        vec![Action::TestCompare(1)],
    ];
    for actions in bad {
        let r = run_script(&AdversaryScript::new(actions.clone()), 2, &p, 1);
        assert!(matches!(r, Err(HarnessError::ScriptInvalid(_))), "{actions:?} gave {r:?}");
    }
    assert!(matches!(Simulation::new(0, &p, 1, AbscissaMode::Identity), Err(HarnessError::Setup(_))));
}

#[test]
fn membership_scenarios() {
    let p = FieldParams::mersenne61();
    let join = run_membership_scenario(MembershipKind::Join, 3, &p, 3).unwrap();
    assert_ne!(join.before_key(), join.after_key());
    assert!(join.after_agrees());
    assert_eq!(join.after.len(), 5);
    assert!(join.rejected.is_empty());

    let leave = run_membership_scenario(MembershipKind::Leave, 3, &p, 3).unwrap();
    assert_ne!(leave.before_key(), leave.after_key());
    assert!(leave.after_agrees());
    assert_eq!(leave.after.len(), 3);
    assert_eq!(leave.rejected.get(&leave.changed), Some(&ProtocolError::ShareMissing));
}

#[test]
fn tamper_sweep_small_field() {
    let p = FieldParams::from_u64(97).unwrap();
    let r = tamper_sweep(2, &p, 9).unwrap();
    assert_eq!(r.accepted, 0);
    assert_eq!(r.positions, 8 * (1 + 1 + 4 + 2 * (1 + 3) + 4 + 2 + 4 + 32));
}

#[test]
fn cost_measurements() {
    let p = FieldParams::mersenne61();
    let reports = measure_costs(&[1, 4], &p, 1).unwrap();
    let r4 = &reports[1];
    assert_eq!(r4.width, 8);
    assert_eq!(r4.rounds, 2);
    assert_eq!(r4.user_mults, 4);
    assert_eq!(r4.user_xor_passes, 1);
    assert_eq!(r4.user_xor_octets, 40);
    // masked shares alone are n * (n+1) * w octets
    let share_payload = 4 * 5 * 8;
    assert_eq!(share_payload, 160);
    assert_eq!(r4.leader_octets, 1 + 8 + 4 + 4 * 8 + share_payload + 4 + 4 * 8 + 4 + 32);
    assert_eq!(reports[0].user_octets, r4.user_octets);

    let mut buf = Vec::new();
    write_cost_csv(&reports, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "n,p_bits,leader_octets,user_octets,rounds,user_mults,user_xor_octets,leader_mults");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("4,61,"));
    assert!(measure_costs(&[], &p, 1).is_err());
}

#[test]
fn attack_corpus_passes() {
    let p = FieldParams::mersenne61();
    let results = attack_corpus(3, &p, 11).unwrap();
    for r in &results {
        assert!(r.passed, "{} / {}: {}", r.family, r.name, r.detail);
    }
    let families: std::collections::BTreeSet<_> = results.iter().map(|r| r.family).collect();
    assert_eq!(families.len(), AttackFamily::ALL.len());
    assert_eq!("tamper".parse::<AttackFamily>(), Ok(AttackFamily::Tamper));
    assert!("nope".parse::<AttackFamily>().is_err());
}

#[test]
fn single_member_attacks() {
    let p = FieldParams::from_u64(251).unwrap();
    for family in AttackFamily::ALL {
        for r in run_attack_family(family, 1, &p, 4).unwrap() {
            assert!(r.passed, "{} / {}: {}", r.family, r.name, r.detail);
        }
    }
}
