//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{id, random_message, Group};
use gka_core::cli::{cmd_bench, RunConfig};
use gka_core::codec::{
    decode_secret, encode_secret, keystream, mask_secret, parse_message, serialize_message, Message,
};
use gka_core::field::lagrange_interpolate;
use gka_core::harness::{
    run_honest_session, run_membership_scenario, run_script, tamper_sweep, Action, AdversaryScript,
    MembershipKind, Simulation,
};
use gka_core::{AbscissaMode, FieldParams, OpCounts, ProtocolError, SecretPolynomial};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {elapsed:?}, limit {limit:?}"))
}

fn interpolation_oracle() -> Verdict {
    let primes = [FieldParams::from_u64(97).unwrap(), FieldParams::from_u64(251).unwrap(), FieldParams::mersenne61()];
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut failures = 0;
    for trial in 0..1000 {
        let p = &primes[trial % primes.len()];
        let degree = rng.gen_range(0..=8usize);
        let coeffs: Vec<_> = (0..=degree).map(|_| p.sample(&mut rng, false)).collect();
        let poly = SecretPolynomial::new(coeffs.clone()).unwrap();
        let mut xs = Vec::new();
        while xs.len() <= degree {
            let x = p.sample(&mut rng, false);
            if !xs.contains(&x) {
                xs.push(x);
            }
        }
        let points: Vec<_> = xs.iter().map(|x| (x.clone(), poly.eval_naive(x).unwrap())).collect();
        if lagrange_interpolate(&points).map(|r| r.coeffs().to_vec()) != Ok(coeffs) {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure(failures == 0, || format!("{failures} of 1000 polynomials not recovered"))?;
    within(elapsed, Duration::from_secs(5), "1000 interpolations")?;
    Ok(format!("1000/1000 recovered in {elapsed:.2?}"))
}

fn end_to_end_agreement() -> Verdict {
    let p = FieldParams::mersenne61();
    let mut slowest = Duration::ZERO;
    for n in 1..=16 {
        let start = Instant::now();
        let run = run_honest_session(n, &p, n as u64).map_err(|e| format!("n={n}: {e}"))?;
        let elapsed = start.elapsed();
        slowest = slowest.max(elapsed);
        let t = &run.transcript;
        ensure(run.keys.len() == n + 1 && run.all_agree(), || format!("n={n}: keys disagree"))?;
        ensure(t.unicasts() == n && t.broadcasts() == 1, || {
            format!("n={n}: {} unicasts, {} broadcasts", t.unicasts(), t.broadcasts())
        })?;
        ensure(t.rounds() == 2, || format!("n={n}: {} rounds", t.rounds()))?;
        within(elapsed, Duration::from_secs(1), &format!("session n={n}"))?;
    }
    Ok(format!("n=1..16 agree, n unicasts + 1 broadcast, 2 rounds, slowest {slowest:.2?}"))
}

fn contributiveness() -> Verdict {
    let mut checked = 0;
    for seed in 0..100u64 {
        let p = if seed % 2 == 0 { FieldParams::mersenne61() } else { FieldParams::from_u64(251).unwrap() };
        let mode = if seed % 3 == 0 { AbscissaMode::Hashed } else { AbscissaMode::Identity };
        let n = 1 + seed % 8;
        let mut g = Group::new(n, &p, seed, mode);
        g.collect();
        let abscissas: BTreeMap<_, _> = g.leader.pending().iter().map(|(k, c)| (k.clone(), c.abscissa.clone())).collect();
        let broadcast = g.leader.compute_round(&mut g.rng).map_err(|e| e.to_string())?;
        let hash = g.suite.suite().hash;
        for u in g.users.iter_mut() {
            u.process_broadcast(&broadcast).map_err(|e| format!("seed {seed}: honest user rejected: {e}"))?;
            // decode A from the user's own share and check it passes through its point
            let x = u.current_x().unwrap().clone();
            let share = &broadcast.share_for(u.id()).unwrap().bytes;
            let mut ops = OpCounts::default();
            let stream = keystream(hash.as_ref(), u.id(), g.leader.id(), u.counter(), &x, share.len(), &mut ops);
            let k = mask_secret(share, &stream, &mut ops).unwrap();
            let a = decode_secret(&gka_core::MasterSecret::from_bytes(k), &p).unwrap();
            let at = &abscissas[u.id()];
            if mode == AbscissaMode::Identity {
                ensure(at == u.id().element(), || "identity abscissa differs from id".into())?;
            }
            ensure(a.eval_naive(at).unwrap() == x, || format!("seed {seed}: A(ID_{}) != x", u.id()))?;
            checked += 1;
        }
    }

    let p = FieldParams::mersenne61();
    let mut misses = 0;
    for seed in 0..100u64 {
        let n = 2 + (seed % 5) as usize;
        let victim = 1 + seed % n as u64;
        let script = AdversaryScript::new(vec![Action::CorruptLeaderOmit(victim), Action::DeliverAll]);
        let r = run_script(&script, n, &p, seed).map_err(|e| e.to_string())?;
        let s = r.last();
        let exact = s.users.iter().all(|(uid, o)| {
            if *uid == id(&p, victim) {
                o.protocol_error() == Some(&ProtocolError::ContributionNotUsed)
            } else {
                o.is_accepted() && o.key() == s.leader.key()
            }
        });
        misses += usize::from(!exact);
    }
    ensure(misses == 0, || format!("omission mis-detected in {misses} of 100 seeds"))?;
    Ok(format!("A(ID_i) = x_i for {checked} accepting users; omission caught in 100/100 seeds"))
}

fn online_cost() -> Verdict {
    let p = FieldParams::mersenne61();
    let w = p.width() as u64;
    for n in [1u64, 4, 8, 16] {
        let mut sim = Simulation::new(n as usize, &p, n, AbscissaMode::Identity).map_err(|e| e.to_string())?;
        sim.run(&AdversaryScript::honest()).map_err(|e| e.to_string())?;
        let online = &sim.transcript().online_ops;
        ensure(online.len() == n as usize, || format!("n={n}: {} users measured", online.len()))?;
        for (uid, ops) in online {
            ensure(ops.field_mults == n, || format!("n={n}: user {uid} did {} multiplications", ops.field_mults))?;
            ensure(ops.xor_passes == 1 && ops.xor_octets == (n + 1) * w, || {
                format!("n={n}: user {uid} did {} xor passes over {} octets", ops.xor_passes, ops.xor_octets)
            })?;
        }
    }
    Ok("n multiplications and one (n+1)w-octet XOR pass for n in {1,4,8,16}".into())
}

fn freshness() -> Verdict {
    let p = FieldParams::mersenne61();
    let mut rejected = 0;
    for seed in 0..100u64 {
        let n = 1 + (seed % 6) as usize;
        let actions = if seed % 2 == 0 {
            vec![Action::Duplicate, Action::Deliver, Action::Replay(0), Action::DeliverAll]
        } else {
            vec![Action::Duplicate, Action::DeliverAll, Action::NextSession, Action::Replay(0), Action::DeliverAll]
        };
        let r = run_script(&AdversaryScript::new(actions), n, &p, seed).map_err(|e| e.to_string())?;
        let caught = r.last().leader_rejections.iter().any(|(_, reason)| {
            matches!(reason, gka_core::harness::RejectReason::Protocol(ProtocolError::ReplayDetected { .. }))
        });
        rejected += usize::from(caught && r.last().accepted_users() == n);
    }
    ensure(rejected == 100, || format!("replay rejected in only {rejected}/100 trials"))?;

    for seed in 0..20u64 {
        let mut sim = Simulation::new(3, &p, seed, AbscissaMode::Identity).map_err(|e| e.to_string())?;
        let mut last: BTreeMap<_, u64> = BTreeMap::new();
        for session in 0..5 {
            if session > 0 {
                sim.apply(&Action::NextSession).map_err(|e| e.to_string())?;
            }
            sim.apply(&Action::DeliverAll).map_err(|e| e.to_string())?;
            for (uid, u) in sim.users() {
                let c = u.counter().value();
                ensure(sim.leader().last_counter(uid).map(|c| c.value()) == Some(c), || "leader counter lags".into())?;
                ensure(last.get(uid).is_none_or(|&prev| c > prev), || format!("counter of {uid} not increasing"))?;
                last.insert(uid.clone(), c);
            }
        }
    }
    Ok("replay rejected in 100/100 trials; counters strictly increase over 5 sessions".into())
}

fn membership() -> Verdict {
    let p = FieldParams::mersenne61();
    for kind in [MembershipKind::Join, MembershipKind::Leave] {
        for seed in 0..100u64 {
            let n = 2 + (seed % 7) as usize;
            let r = run_membership_scenario(kind, n, &p, seed).map_err(|e| format!("{kind:?} seed {seed}: {e}"))?;
            ensure(r.before_key() != r.after_key(), || format!("{kind:?} seed {seed}: key unchanged"))?;
            ensure(r.after_agrees(), || format!("{kind:?} seed {seed}: members disagree"))?;
            let expected = if kind == MembershipKind::Join { n + 2 } else { n };
            ensure(r.after.len() == expected, || format!("{kind:?} seed {seed}: {} parties hold the key", r.after.len()))?;
        }
    }
    Ok("100 joins and 100 leaves: key always refreshed, members agree".into())
}

fn tamper_totality() -> Verdict {
    let p = FieldParams::from_u64(97).unwrap();
    let start = Instant::now();
    let r = tamper_sweep(3, &p, 1).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(r.accepted == 0, || format!("{} tampered acceptances", r.accepted))?;
    within(elapsed, Duration::from_secs(60), "tamper sweep")?;
    Ok(format!(
        "{} bit positions, 0 acceptances ({} parse, {} signature, {} other) in {elapsed:.2?}",
        r.positions, r.parse_rejections, r.signature_rejections, r.other_rejections
    ))
}

/// A structural mutation that a strict parser must refuse.
fn mutate(bytes: &[u8], msg: &Message, params: &Arc<FieldParams>, rng: &mut ChaCha20Rng) -> Vec<u8> {
    let w = params.width();
    let mut out = bytes.to_vec();
    match rng.gen_range(0..5) {
        0 => out.truncate(rng.gen_range(0..bytes.len())),
        1 => out.extend((0..rng.gen_range(1..8)).map(|_| rng.gen::<u8>())),
        2 => out[0] = *[0u8, 3, 0x7f, 0xff].choose(rng).unwrap(),
        3 => {
            // first id becomes zero or an out-of-range value
            let bad = if rng.gen_bool(0.5) { vec![0u8; w] } else { vec![0xffu8; w] };
            out[1..1 + w].copy_from_slice(&bad);
        }
        _ => {
            // final signature length claims one octet more than present
            let sig_len = match msg {
                Message::Contribution(m) => m.signature.len(),
                Message::Broadcast(m) => m.signature.len(),
            };
            let at = out.len() - sig_len - 4;
            out[at..at + 4].copy_from_slice(&(sig_len as u32 + 1).to_be_bytes());
        }
    }
    out
}

fn codec_round_trips() -> Verdict {
    let fields = [FieldParams::from_u64(251).unwrap(), FieldParams::mersenne61()];
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for i in 0..1000 {
        let p = &fields[i % 2];
        let msg = random_message(p, &mut rng);
        if parse_message(&serialize_message(&msg), p).as_ref() != Ok(&msg) {
            mismatches += 1;
        }
        let len = rng.gen_range(1..=10);
        let poly = SecretPolynomial::new((0..len).map(|_| p.sample(&mut rng, false)).collect()).unwrap();
        if decode_secret(&encode_secret(&poly), p).as_ref() != Ok(&poly) {
            mismatches += 1;
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} round-trip mismatches"))?;

    let mut accepted = 0;
    let mut panics = 0;
    for i in 0..1000 {
        let p = &fields[i % 2];
        let msg = random_message(p, &mut rng);
        let bad = mutate(&serialize_message(&msg), &msg, p, &mut rng);
        match catch_unwind(AssertUnwindSafe(|| parse_message(&bad, p))) {
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(_)) => {}
            Err(_) => panics += 1,
        }
    }
    ensure(panics == 0, || format!("parser panicked on {panics} inputs"))?;
    ensure(accepted == 0, || format!("{accepted} mutated inputs parsed"))?;
    Ok("2000 round trips exact; 1000/1000 mutated inputs rejected without panics".into())
}

fn bench_sanity() -> Verdict {
    let params = FieldParams::mersenne61();
    let w = params.width();
    let cfg = RunConfig {
        n: vec![2, 4, 8, 16],
        params,
        seed: 1,
        abscissa_mode: AbscissaMode::Identity,
        output_path: None,
        scenario: None,
    };
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cmd_bench(&cfg, &mut out, &mut err);
    ensure(code == 0, || format!("exit code {code}: {}", String::from_utf8_lossy(&err)))?;
    let mut rdr = csv::Reader::from_reader(out.as_slice());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or(format!("missing column {name}"));
    let (c_n, c_leader, c_user, c_rounds) = (col("n")?, col("leader_octets")?, col("user_octets")?, col("rounds")?);
    let rows: Vec<_> = rdr.records().collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(rows.len() == 4, || format!("{} rows", rows.len()))?;
    let num = |r: &csv::StringRecord, c: usize| r[c].parse::<usize>().unwrap();
    let upload = num(&rows[0], c_user);
    for r in &rows {
        let n = num(r, c_n);
        let share_payload = n * (n + 1) * w;
        // tag, leader id, count, recipient ids, roster, signature blob
        let overhead = 1 + w + 4 + n * w + (4 + n * w) + (4 + 32);
        ensure(num(r, c_leader) == share_payload + overhead, || {
            format!("n={n}: leader sent {} octets, expected {}", num(r, c_leader), share_payload + overhead)
        })?;
        ensure(num(r, c_user) == upload, || format!("n={n}: upload size varies"))?;
        ensure(num(r, c_rounds) == 2, || format!("n={n}: {} rounds", num(r, c_rounds)))?;
    }
    Ok(format!("4 rows, upload constant at {upload} octets, broadcast size exact, 2 rounds"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("interpolation oracle equivalence", interpolation_oracle),
        ("end-to-end agreement", end_to_end_agreement),
        ("contributiveness verification", contributiveness),
        ("online-cost bound", online_cost),
        ("freshness and replay", freshness),
        ("membership freshness", membership),
        ("tamper totality", tamper_totality),
        ("round-trip codecs", codec_round_trips),
        ("bench sanity", bench_sanity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let verdict = catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
