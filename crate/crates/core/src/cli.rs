//! The `gka` command line: `demo`, `attacks` and `bench`.
//!
//! Settings come from flags, then an optional `key=value` file given with
//! `--config`, then `GKA_SEED` (seed only), then defaults.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use num_bigint::BigUint;

use crate::field::FieldParams;
use crate::harness::{
    attack_corpus, measure_costs, run_attack_family, run_honest_session_with_mode, write_cost_csv, AttackFamily,
    HarnessError, Recipient,
};
use crate::protocol::AbscissaMode;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const DEFAULT_N: usize = 4;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_BENCH_NS: [usize; 4] = [2, 4, 8, 16];
pub const SEED_ENV: &str = "GKA_SEED";

#[derive(Debug, Parser)]
#[command(name = "gka", about = "Two-round contributory group key agreement toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one honest session end to end and print a step trace.
    Demo(CommonArgs),
    /// Run the bundled attack corpus.
    Attacks(CommonArgs),
    /// Measure message sizes and operation counts, emitting CSV.
    Bench(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Group size; a comma-separated list for `bench`.
    #[arg(long = "n", value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Use a built-in prime of this many bits.
    #[arg(long, conflicts_with = "prime")]
    pub prime_bits: Option<u64>,
    /// Explicit prime modulus, decimal or 0x-prefixed hex.
    #[arg(long)]
    pub prime: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// identity | hashed
    #[arg(long)]
    pub abscissa_mode: Option<String>,
    /// Output file (CSV for bench, transcript for demo).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict `attacks` to one scenario family.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Plain key=value configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub n: Vec<usize>,
    pub params: Arc<FieldParams>,
    pub seed: u64,
    pub abscissa_mode: AbscissaMode,
    pub output_path: Option<PathBuf>,
    pub scenario: Option<AttackFamily>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, UsageError> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("{}:{}: expected key=value", path.display(), lineno + 1)))?;
        map.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(map)
}

fn parse_prime(s: &str) -> Result<Arc<FieldParams>, UsageError> {
    let p = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => BigUint::parse_bytes(hex.as_bytes(), 16),
        None => BigUint::parse_bytes(s.as_bytes(), 10),
    }
    .ok_or_else(|| usage(format!("invalid prime `{s}`")))?;
    FieldParams::new(p).map_err(|e| usage(e.to_string()))
}

fn parse_mode(s: &str) -> Result<AbscissaMode, UsageError> {
    match s {
        "identity" => Ok(AbscissaMode::Identity),
        "hashed" => Ok(AbscissaMode::Hashed),
        other => Err(usage(format!("unknown abscissa mode `{other}`"))),
    }
}

fn parse_list(s: &str) -> Result<Vec<usize>, UsageError> {
    s.split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|_| usage(format!("invalid group size `{v}`"))))
        .collect()
}

impl RunConfig {
    /// Merges flags, config file, environment seed and defaults, then validates.
    pub fn resolve(args: &CommonArgs, env_seed: Option<&str>, default_n: &[usize]) -> Result<Self, UsageError> {
        let file = match &args.config {
            Some(path) => parse_config_file(path)?,
            None => BTreeMap::new(),
        };
        let from_file = |key: &str| file.get(key).map(String::as_str);

        let n = match (&args.n, from_file("n")) {
            (Some(list), _) => list.clone(),
            (None, Some(s)) => parse_list(s)?,
            (None, None) => default_n.to_vec(),
        };
        if n.is_empty() || n.contains(&0) {
            return Err(usage("group size must be at least 1"));
        }

        let params = if let Some(p) = &args.prime {
            parse_prime(p)?
        } else if let Some(bits) = args.prime_bits {
            FieldParams::with_bits(bits).map_err(|e| usage(e.to_string()))?
        } else if let Some(p) = from_file("prime") {
            parse_prime(p)?
        } else if let Some(bits) = from_file("prime_bits") {
            let bits = bits.parse().map_err(|_| usage(format!("invalid prime_bits `{bits}`")))?;
            FieldParams::with_bits(bits).map_err(|e| usage(e.to_string()))?
        } else {
            FieldParams::mersenne61()
        };

        let seed = match (args.seed, from_file("seed"), env_seed) {
            (Some(s), _, _) => s,
            (None, Some(s), _) => s.parse().map_err(|_| usage(format!("invalid seed `{s}`")))?,
            (None, None, Some(s)) => s.parse().map_err(|_| usage(format!("invalid {SEED_ENV} `{s}`")))?,
            (None, None, None) => DEFAULT_SEED,
        };

        let abscissa_mode = match args.abscissa_mode.as_deref().or(from_file("abscissa_mode")) {
            Some(m) => parse_mode(m)?,
            None => AbscissaMode::Identity,
        };
        let output_path = args.out.clone().or_else(|| from_file("out").map(PathBuf::from));
        let scenario = match args.scenario.as_deref().or(from_file("scenario")) {
            Some(s) => Some(s.parse::<AttackFamily>().map_err(usage)?),
            None => None,
        };

        // users 1..=n plus leader n+1 (and a joiner n+2) must be field elements
        let max_id = BigUint::from(*n.iter().max().expect("nonempty") as u64 + 2);
        if &max_id >= params.modulus() {
            return Err(usage(format!("group size too large for p = {}", params.modulus())));
        }
        Ok(Self { n, params, seed, abscissa_mode, output_path, scenario })
    }

    fn single_n(&self) -> Result<usize, UsageError> {
        match self.n.as_slice() {
            [n] => Ok(*n),
            _ => Err(usage("this command takes a single group size")),
        }
    }
}

fn describe_params(params: &FieldParams) -> String {
    format!("{}-bit prime (w={})", params.bits(), params.width())
}

fn mode_name(mode: AbscissaMode) -> &'static str {
    match mode {
        AbscissaMode::Identity => "identity",
        AbscissaMode::Hashed => "hashed",
    }
}

fn report_harness_error(err: &mut dyn Write, e: &HarnessError) -> i32 {
    let _ = writeln!(err, "error: {e}");
    EXIT_FAILURE
}

pub fn cmd_demo(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let n = match cfg.single_n() {
        Ok(n) => n,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let _ = writeln!(
        out,
        "group of {n} users, {}, seed {}, abscissa {}",
        describe_params(&cfg.params),
        cfg.seed,
        mode_name(cfg.abscissa_mode)
    );
    let run = match run_honest_session_with_mode(n, &cfg.params, cfg.seed, cfg.abscissa_mode) {
        Ok(run) => run,
        Err(e) => return report_harness_error(err, &e),
    };
    let t = &run.transcript;
    for e in &t.events {
        let to = match &e.receiver {
            Recipient::Party(id) => id.to_string(),
            Recipient::Broadcast => "all".to_string(),
        };
        let _ = writeln!(out, "round {}: {} -> {}: {} octets", e.round, e.sender, to, e.octets);
    }
    let _ = writeln!(
        out,
        "leader {}: accepted {} contributions, interpolated {} coefficients",
        run.leader,
        n,
        n + 1
    );
    let leader_key = &run.keys[&run.leader];
    let mut accepted = 0;
    for (id, key) in run.keys.iter().filter(|(id, _)| **id != run.leader) {
        let ops = t.online_ops.get(id).copied().unwrap_or_default();
        let verdict = if key == leader_key { "contribution verified" } else { "KEY MISMATCH" };
        accepted += usize::from(key == leader_key);
        let _ = writeln!(
            out,
            "user {id}: {verdict} ({} multiplications, {} octets unmasked), key {}",
            ops.field_mults,
            ops.xor_octets,
            key.digest_prefix()
        );
    }
    let _ = writeln!(out, "leader key {}", leader_key.digest_prefix());

    if let Some(path) = &cfg.output_path {
        let mut lines = String::from("round,sender,receiver,octets\n");
        for e in &t.events {
            let to = match &e.receiver {
                Recipient::Party(id) => id.element().to_string(),
                Recipient::Broadcast => "broadcast".to_string(),
            };
            lines.push_str(&format!("{},{},{},{}\n", e.round, e.sender.element(), to, e.octets));
        }
        if let Err(e) = fs::write(path, lines) {
            let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
            return EXIT_FAILURE;
        }
    }

    if accepted == n && run.all_agree() {
        let _ = writeln!(out, "all {n} users accepted");
        EXIT_OK
    } else {
        let _ = writeln!(err, "only {accepted} of {n} users agree with the leader");
        EXIT_FAILURE
    }
}

pub fn cmd_attacks(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let n = match cfg.single_n() {
        Ok(n) => n,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_USAGE;
        }
    };
    let results = match cfg.scenario {
        Some(family) => run_attack_family(family, n, &cfg.params, cfg.seed),
        None => attack_corpus(n, &cfg.params, cfg.seed),
    };
    let results = match results {
        Ok(r) => r,
        Err(e) => return report_harness_error(err, &e),
    };
    let mut failures = 0;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        failures += usize::from(!r.passed);
        let _ = writeln!(out, "{status} {:<14} {:<36} {}", r.family.name(), r.name, r.detail);
    }
    let _ = writeln!(out, "{} scenarios, {} failed", results.len(), failures);
    if failures == 0 {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

pub fn cmd_bench(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let reports = match measure_costs(&cfg.n, &cfg.params, cfg.seed) {
        Ok(r) => r,
        Err(e) => return report_harness_error(err, &e),
    };
    // the table is for humans; without --out stdout carries only the CSV
    let table: &mut dyn Write = if cfg.output_path.is_some() { &mut *out } else { &mut *err };
    let _ = writeln!(
        table,
        "{:>4} {:>8} {:>14} {:>12} {:>7} {:>11} {:>16} {:>13}",
        "n", "p_bits", "leader_octets", "user_octets", "rounds", "user_mults", "user_xor_octets", "leader_mults"
    );
    for r in &reports {
        let _ = writeln!(
            table,
            "{:>4} {:>8} {:>14} {:>12} {:>7} {:>11} {:>16} {:>13}",
            r.n, r.p_bits, r.leader_octets, r.user_octets, r.rounds, r.user_mults, r.user_xor_octets, r.leader_mults
        );
    }
    let written = match &cfg.output_path {
        Some(path) => fs::File::create(path)
            .map_err(csv::Error::from)
            .and_then(|f| write_cost_csv(&reports, f)),
        None => write_cost_csv(&reports, &mut *out),
    };
    match written {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: cannot write CSV: {e}");
            EXIT_FAILURE
        }
    }
}

/// Parses `args` (including the program name) and dispatches; returns the exit status.
pub fn run<I, S>(args: I, env_seed: Option<&str>, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(err, "{rendered}") } else { write!(out, "{rendered}") };
            return code;
        }
    };
    let (args, default_n): (&CommonArgs, &[usize]) = match &cli.command {
        Command::Demo(a) | Command::Attacks(a) => (a, &[DEFAULT_N]),
        Command::Bench(a) => (a, &DEFAULT_BENCH_NS),
    };
    let cfg = match RunConfig::resolve(args, env_seed, default_n) {
        Ok(cfg) => cfg,
        Err(e) => {
            let _ = writeln!(err, "usage error: {e}");
            return EXIT_USAGE;
        }
    };
    match cli.command {
        Command::Demo(_) => cmd_demo(&cfg, out, err),
        Command::Attacks(_) => cmd_attacks(&cfg, out, err),
        Command::Bench(_) => cmd_bench(&cfg, out, err),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(n: &[usize]) -> CommonArgs {
        CommonArgs { n: Some(n.to_vec()), ..Default::default() }
    }

    #[test]
    fn defaults() {
        let cfg = RunConfig::resolve(&CommonArgs::default(), None, &[DEFAULT_N]).unwrap();
        assert_eq!(cfg.n, [4]);
        assert_eq!(cfg.seed, 1);
        assert_eq!(cfg.params.modulus(), &BigUint::from((1u64 << 61) - 1));
        assert_eq!(cfg.abscissa_mode, AbscissaMode::Identity);
    }

    #[test]
    fn seed_precedence() {
        let cfg = RunConfig::resolve(&CommonArgs::default(), Some("77"), &[4]).unwrap();
        assert_eq!(cfg.seed, 77);
        let a = CommonArgs { seed: Some(5), ..Default::default() };
        assert_eq!(RunConfig::resolve(&a, Some("77"), &[4]).unwrap().seed, 5);
        assert!(RunConfig::resolve(&CommonArgs::default(), Some("x"), &[4]).is_err());
    }

    #[test]
    fn config_file_loses_to_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gka.conf");
        fs::write(&path, "# comment\nn = 3\nseed=9\nprime=97\nabscissa-mode = hashed\n").unwrap();
        let from_file = RunConfig::resolve(&CommonArgs { config: Some(path.clone()), ..Default::default() }, Some("4"), &[4])
            .unwrap();
        assert_eq!(from_file.n, [3]);
        assert_eq!(from_file.seed, 9);
        assert_eq!(from_file.params.modulus(), &BigUint::from(97u32));
        assert_eq!(from_file.abscissa_mode, AbscissaMode::Hashed);

        let flags = CommonArgs { config: Some(path), seed: Some(2), n: Some(vec![5]), ..Default::default() };
        let merged = RunConfig::resolve(&flags, None, &[4]).unwrap();
        assert_eq!((merged.n.as_slice(), merged.seed), (&[5][..], 2));
    }

    #[test]
    fn validation() {
        assert!(RunConfig::resolve(&args(&[0]), None, &[4]).is_err());
        let bad_prime = CommonArgs { prime: Some("91".into()), ..Default::default() };
        assert!(RunConfig::resolve(&bad_prime, None, &[4]).is_err());
        let hex = CommonArgs { prime: Some("0x61".into()), ..Default::default() };
        assert_eq!(RunConfig::resolve(&hex, None, &[4]).unwrap().params.modulus(), &BigUint::from(97u32));
        let too_big = CommonArgs { prime: Some("7".into()), n: Some(vec![5]), ..Default::default() };
        assert!(RunConfig::resolve(&too_big, None, &[4]).is_err());
        let mode = CommonArgs { abscissa_mode: Some("random".into()), ..Default::default() };
        assert!(RunConfig::resolve(&mode, None, &[4]).is_err());
        let scenario = CommonArgs { scenario: Some("nope".into()), ..Default::default() };
        assert!(RunConfig::resolve(&scenario, None, &[4]).is_err());
    }
}
