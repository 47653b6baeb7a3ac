//! The bundled attack corpus: one or more scripted scenarios per family,
//! each judged by whether the protocol rejected or detected the attack.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::scenarios::{run_membership_scenario, run_script, tamper_sweep, MembershipKind};
use super::{Action, AdversaryScript, HarnessError, Outcome, RejectReason, ScriptReport};
use crate::field::FieldParams;
use crate::protocol::ProtocolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AttackFamily {
    Replay,
    Impersonation,
    Forgery,
    Tamper,
    Omission,
    Membership,
    Reveal,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 7] = [
        AttackFamily::Replay,
        AttackFamily::Impersonation,
        AttackFamily::Forgery,
        AttackFamily::Tamper,
        AttackFamily::Omission,
        AttackFamily::Membership,
        AttackFamily::Reveal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Replay => "replay",
            AttackFamily::Impersonation => "impersonation",
            AttackFamily::Forgery => "forgery",
            AttackFamily::Tamper => "tamper",
            AttackFamily::Omission => "omission",
            AttackFamily::Membership => "membership",
            AttackFamily::Reveal => "reveal",
        }
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| format!("unknown scenario family `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioResult {
    pub family: AttackFamily,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn result(family: AttackFamily, name: &str, passed: bool, detail: impl Into<String>) -> ScenarioResult {
    ScenarioResult { family, name: name.to_string(), passed, detail: detail.into() }
}

fn sessions_sound(report: &ScriptReport) -> bool {
    report.sessions.iter().all(|s| s.agreement_holds())
}

fn leader_rejected(report: &ScriptReport, session: usize, pred: impl Fn(&ProtocolError) -> bool) -> bool {
    report.sessions[session]
        .leader_rejections
        .iter()
        .any(|(_, r)| matches!(r, RejectReason::Protocol(e) if pred(e)))
}

/// Runs every scenario of one family.
pub fn run_attack_family(
    family: AttackFamily,
    n: usize,
    params: &Arc<FieldParams>,
    seed: u64,
) -> Result<Vec<ScenarioResult>, HarnessError> {
    use Action::*;
    let fam = family;
    let mut out = Vec::new();
    match family {
        AttackFamily::Replay => {
            let same = run_script(&AdversaryScript::new(vec![Duplicate, Deliver, Replay(0), DeliverAll]), n, params, seed)?;
            let ok = leader_rejected(&same, 0, |e| matches!(e, ProtocolError::ReplayDetected { .. }))
                && same.last().accepted_users() == n
                && sessions_sound(&same);
            out.push(result(fam, "replay-within-session", ok, "duplicate contribution delivered twice"));

            let later = run_script(
                &AdversaryScript::new(vec![Duplicate, DeliverAll, NextSession, Replay(0), DeliverAll]),
                n,
                params,
                seed,
            )?;
            let ok = leader_rejected(&later, 1, |e| matches!(e, ProtocolError::ReplayDetected { .. }))
                && later.last().accepted_users() == n
                && sessions_sound(&later);
            out.push(result(fam, "replay-next-session", ok, "session-1 contribution injected into session 2"));
        }
        AttackFamily::Impersonation => {
            let forged = run_script(&AdversaryScript::new(vec![InjectForged, DeliverAll]), n, params, seed)?;
            let s = forged.last();
            let ok = leader_rejected(&forged, 0, |e| *e == ProtocolError::SignatureInvalid)
                && !s.leader.is_accepted()
                && s.accepted_users() == 0;
            out.push(result(fam, "forged-contribution-signature", ok, "leader must refuse and never broadcast"));

            // relabel the sender id of the first contribution (lowest-but-one bit of the id)
            let w = params.width();
            let relabel = run_script(&AdversaryScript::new(vec![TamperBit(8 * w + 6), DeliverAll]), n, params, seed)?;
            let s = relabel.last();
            let ok = !s.leader_rejections.is_empty() && !s.leader.is_accepted() && s.accepted_users() == 0;
            out.push(result(fam, "relabelled-sender", ok, "contribution claimed under another identity"));
        }
        AttackFamily::Forgery => {
            let mut actions = vec![Deliver; n];
            actions.extend([InjectForged, DeliverAll]);
            let r = run_script(&AdversaryScript::new(actions), n, params, seed)?;
            let s = r.last();
            let ok = s
                .users
                .values()
                .all(|o| matches!(o, Outcome::Rejected(RejectReason::Protocol(ProtocolError::SignatureInvalid))));
            out.push(result(fam, "forged-broadcast-signature", ok, "every user must reject"));
        }
        AttackFamily::Tamper => {
            let sweep = tamper_sweep(n, params, seed)?;
            out.push(result(
                fam,
                "broadcast-bit-sweep",
                sweep.accepted == 0,
                format!(
                    "{} positions: {} parse, {} signature, {} other rejections",
                    sweep.positions, sweep.parse_rejections, sweep.signature_rejections, sweep.other_rejections
                ),
            ));
            let w = params.width();
            let mut actions = vec![Deliver; n];
            // first octet of the first masked share
            actions.extend([TamperBit(8 * (1 + w + 4 + w)), DeliverAll]);
            let r = run_script(&AdversaryScript::new(actions), n, params, seed)?;
            let ok = r.last().accepted_users() == 0;
            out.push(result(fam, "masked-share-bit", ok, "single flipped share bit"));
        }
        AttackFamily::Omission => {
            let r = run_script(&AdversaryScript::new(vec![CorruptLeaderOmit(1), DeliverAll]), n, params, seed)?;
            let s = r.last();
            let leader_key = s.leader.key().cloned();
            let victim_ok = s.users.iter().all(|(id, o)| {
                if id.element().value() == &1u32.into() {
                    o.protocol_error() == Some(&ProtocolError::ContributionNotUsed)
                } else {
                    o.key().is_some() && o.key() == leader_key.as_ref()
                }
            });
            out.push(result(fam, "leader-substitutes-contribution", victim_ok, "only the victim detects the omission"));
        }
        AttackFamily::Membership => {
            let join = run_membership_scenario(MembershipKind::Join, n, params, seed)?;
            let ok = join.before_key() != join.after_key()
                && join.after_agrees()
                && join.rejected.is_empty()
                && join.after.contains_key(&join.changed);
            out.push(result(fam, "join-refreshes-key", ok, "new member shares a fresh key"));
            if n >= 2 {
                let leave = run_membership_scenario(MembershipKind::Leave, n, params, seed)?;
                let ok = leave.before_key() != leave.after_key()
                    && leave.after_agrees()
                    && leave.rejected.get(&leave.changed) == Some(&ProtocolError::ShareMissing)
                    && leave.rejected.len() == 1;
                out.push(result(fam, "leave-refreshes-key", ok, "departed member gets no share"));
            }
        }
        AttackFamily::Reveal => {
            let r = run_script(
                &AdversaryScript::new(vec![DeliverAll, RevealKey(1), NextSession, DeliverAll, TestCompare(1)]),
                n,
                params,
                seed,
            )?;
            let old = r.sessions[0].users.values().next().and_then(|o| o.key().cloned());
            let ok = r.tests.len() == 1
                && r.tests[0].fresh
                && r.tests[0].distinguishable_by_value()
                && old.as_ref() != Some(&r.tests[0].real)
                && sessions_sound(&r);
            out.push(result(fam, "revealed-key-does-not-carry-over", ok, "session-2 key is fresh after a reveal"));
        }
    }
    Ok(out)
}

/// Every family of the corpus, in order.
pub fn attack_corpus(n: usize, params: &Arc<FieldParams>, seed: u64) -> Result<Vec<ScenarioResult>, HarnessError> {
    let mut all = Vec::new();
    for family in AttackFamily::ALL {
        all.extend(run_attack_family(family, n, params, seed)?);
    }
    Ok(all)
}
