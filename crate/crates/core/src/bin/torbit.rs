use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use torbit::addrbook::AddrBook;
use torbit::adversary::{blackhole_service, ring_with};
use torbit::analytics::{
    attack_cost, expected_capture_time, expected_recovery, frac_attacker_peers, mean_cookie_survival,
    monte_carlo_capture_time, table_two, Amplification, CookieSurvivalParams, CostInputs, MarkovParams,
    TimestampDistribution,
};
use torbit::harness::{rows_to_csv, run_scenario, run_sweep, ConfigError, ScenarioConfig, ScenarioError, SweepGrid};
use torbit::netaddr::NetAddress;
use torbit::rng::SeedTree;
use torbit::tor::hsdir::{descriptor_ids, responsible_directories};
use torbit::tor::{hsdir_ring, Consensus, Fingerprint};

/// Simulate man-in-the-middle and fingerprinting attacks on Bitcoin over Tor.
#[derive(Parser)]
#[command(name = "torbit", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its metrics.
    Simulate(SimulateArgs),
    /// Expected time until a Tor client first lands on the attacker.
    Markov(MarkovArgs),
    /// Evaluate a grid of exit weights and sybil counts.
    Sweep(SweepArgs),
    /// Cookie survivors across client sessions.
    Cookie(CookieArgs),
    /// Responsible directories of a hidden service, optionally black-holed.
    Hsdir(HsdirArgs),
    /// Monthly cost of the attacker's infrastructure.
    Cost(CostArgs),
}

#[derive(Args)]
struct SimulateArgs {
    config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics JSON lines go here (stdout when absent); the per-client CSV
    /// and the cookie registry are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write each client's persisted address book and its text dump.
    #[arg(long)]
    books: Option<PathBuf>,
    /// Print the event trace to stderr.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum AmpArg {
    Plain,
    Factor4,
}

#[derive(Args)]
struct MarkovArgs {
    #[arg(long, default_value_t = 400_000.0)]
    exit_weight: f64,
    /// Total exit weight, the attacker's included.
    #[arg(long, default_value_t = 5_700_000.0)]
    total_exit_weight: f64,
    #[arg(long, default_value_t = 0)]
    sybils: u64,
    /// Reachable honest servers.
    #[arg(long, default_value_t = 7000)]
    servers: u64,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    frac_unreachable: f64,
    #[arg(long, value_enum, default_value_t = AmpArg::Plain)]
    amplification: AmpArg,
    /// Circuits per unreachable attempt.
    #[arg(long, default_value_t = 4.6)]
    circuits: f64,
    /// Seconds per unreachable attempt.
    #[arg(long, default_value_t = 39.6)]
    dwell1: f64,
    /// Seconds per rejected attempt.
    #[arg(long, default_value_t = 0.5)]
    dwell2: f64,
    /// Monte Carlo trials; 0 skips the simulation.
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    grid: PathBuf,
    /// CSV destination (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CookieArgs {
    /// Use the first N sessions of the observed timeline.
    #[arg(long, default_value_t = 10)]
    sessions: usize,
    /// Explicit session start times in hours, comma separated; overrides --sessions.
    #[arg(long, value_delimiter = ',')]
    hours: Option<Vec<f64>>,
    #[arg(long, default_value_t = 100)]
    cookie_size: usize,
    #[arg(long, default_value_t = 12_000)]
    book_size: usize,
    #[arg(long, default_value_t = 20_000)]
    addrs_per_session: usize,
    #[arg(long, default_value_t = 0.06)]
    new_frac: f64,
    /// Keep resident entries aging instead of redrawing their ages.
    #[arg(long)]
    no_refresh: bool,
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// GETADDR probes for the recovery estimate.
    #[arg(long, default_value_t = 8)]
    probes: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct HsdirArgs {
    /// Consensus fixture, or one 40-hex fingerprint per line.
    #[arg(long)]
    ring: PathBuf,
    /// Permanent id as hex, or a `.onion` name.
    #[arg(long)]
    onion: String,
    #[arg(long)]
    day: u64,
    /// Search fingerprints that take over the service's directories.
    #[arg(long)]
    blackhole: bool,
    #[arg(long, default_value_t = 1 << 24)]
    max_draws: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct CostArgs {
    /// Attacker exit weight in consensus units.
    #[arg(long, default_value_t = 0.0)]
    exit_weight: f64,
    /// Rented IPs for sybils or exhaustion.
    #[arg(long, default_value_t = 0)]
    ips: u64,
    #[arg(long)]
    hours: Option<f64>,
    #[arg(long)]
    eur_usd: Option<f64>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } | ConfigError::Syntax(_) | ConfigError::Invalid(_) => Failure::Usage(e.to_string()),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Config(c) => c.into(),
            ScenarioError::Tor(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, data).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json")
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let cfg = ScenarioConfig::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let out = run_scenario(&cfg, seed, a.verbose)?;
    if a.verbose {
        for line in &out.trace {
            eprintln!("{line}");
        }
    }
    let jsonl = out.metrics.to_jsonl();
    match &a.out {
        Some(p) => {
            write(p, &jsonl)?;
            write(&p.with_extension("csv"), out.metrics.to_csv())?;
            write(&p.with_extension("cookies.jsonl"), &out.cookies_jsonl)?;
            println!("{}", serde_json::to_string(&out.metrics.summary).expect("json"));
        }
        None => print!("{jsonl}"),
    }
    if let Some(dir) = &a.books {
        fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        for (i, bytes) in out.books.iter().enumerate() {
            write(&dir.join(format!("client_{i}.book")), bytes)?;
            let book = AddrBook::load(bytes).map_err(|e| Failure::Runtime(e.to_string()))?;
            write(&dir.join(format!("client_{i}.txt")), book.debug_dump())?;
        }
    }
    Ok(())
}

fn markov(a: MarkovArgs) -> Result<(), Failure> {
    if !(a.total_exit_weight > 0.0) || a.exit_weight < 0.0 || a.exit_weight > a.total_exit_weight {
        return Err(Failure::Usage("need 0 <= --exit-weight <= --total-exit-weight and a positive total".into()));
    }
    let amp = match a.amplification {
        AmpArg::Plain => Amplification::Plain,
        AmpArg::Factor4 => Amplification::Factor4,
    };
    let p = MarkovParams {
        frac_unreachable: a.frac_unreachable,
        frac_attacker_peers: frac_attacker_peers(a.sybils, a.servers, a.frac_unreachable, amp),
        exit_share: a.exit_weight / a.total_exit_weight,
        circuits_per_unreachable: a.circuits,
        dwell_state1: a.dwell1,
        dwell_state2: a.dwell2,
    };
    let analytic = expected_capture_time(&p).map_err(|e| Failure::Usage(e.to_string()))?;
    let mc = if a.trials > 0 {
        let mut rng = SeedTree::new(a.seed).stream("markov", 0);
        let m = monte_carlo_capture_time(&p, a.trials, &mut rng).map_err(|e| Failure::Runtime(e.to_string()))?;
        json!({ "mean_s": m.mean, "ci95_s": m.ci95, "trials": m.trials })
    } else {
        serde_json::Value::Null
    };
    println!("{}", pretty(&json!({ "params": p, "analytic_s": analytic, "monte_carlo": mc })));
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let grid = SweepGrid::load(&a.grid)?;
    let rows = run_sweep(&grid)?;
    let csv = rows_to_csv(&rows);
    match &a.out {
        Some(p) => write(p, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cookie(a: CookieArgs) -> Result<(), Failure> {
    let observed = table_two();
    let hours = match a.hours {
        Some(h) => h,
        None => {
            if a.sessions == 0 || a.sessions > observed.len() {
                return Err(Failure::Usage(format!("--sessions must lie in 1..={}", observed.len())));
            }
            observed.iter().take(a.sessions).map(|r| r.1).collect()
        }
    };
    let params = CookieSurvivalParams {
        session_hours: hours,
        cookie_size: a.cookie_size,
        book_size: a.book_size,
        addrs_per_session: a.addrs_per_session,
        new_frac: a.new_frac,
        refresh_ages: !a.no_refresh,
    };
    params.validate().map_err(Failure::Usage)?;
    let dist = TimestampDistribution::table_one();
    let mut rng = SeedTree::new(a.seed).stream("cookie", 0);
    let means = mean_cookie_survival(&dist, &params, a.runs, &mut rng).map_err(Failure::Runtime)?;
    println!("session,hours,survivors,observed");
    for (i, (h, m)) in params.session_hours.iter().zip(&means).enumerate() {
        let obs = observed.iter().find(|r| (r.1 - h).abs() < 1e-9 && r.0 as usize == i + 1).map(|r| r.2.to_string());
        println!("{},{},{:.1},{}", i + 1, h, m, obs.unwrap_or_default());
    }
    eprintln!(
        "expected recovery after {} probes of a {}-entry book: {:.4}",
        a.probes,
        a.book_size,
        expected_recovery(a.book_size, a.probes)
    );
    Ok(())
}

fn parse_fp(s: &str, line: usize) -> Result<Fingerprint, Failure> {
    hex::decode(s)
        .ok()
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Failure::Usage(format!("ring line {line}: expected 40 hex digits")))
}

fn load_ring(path: &Path) -> Result<Vec<Fingerprint>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let bare = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .all(|l| l.len() == 40 && l.bytes().all(|b| b.is_ascii_hexdigit()));
    let mut ring = if bare {
        let mut v = Vec::new();
        for (n, l) in text.lines().enumerate() {
            let l = l.trim();
            if !l.is_empty() && !l.starts_with('#') {
                v.push(parse_fp(l, n + 1)?);
            }
        }
        v
    } else {
        hsdir_ring(&Consensus::parse(&text).map_err(|e| Failure::Usage(e.to_string()))?)
    };
    ring.sort_unstable();
    ring.dedup();
    Ok(ring)
}

fn hsdir(a: HsdirArgs) -> Result<(), Failure> {
    let ring = load_ring(&a.ring)?;
    let id: Vec<u8> = if a.onion.ends_with(".onion") || a.onion.contains(".onion:") {
        let addr: NetAddress = a.onion.parse().map_err(|e| Failure::Usage(format!("--onion: {e}")))?;
        addr.onion_id().map_err(|e| Failure::Usage(e.to_string()))?.to_vec()
    } else {
        hex::decode(&a.onion).map_err(|_| Failure::Usage("--onion: expected hex or a .onion name".into()))?
    };
    let ids = descriptor_ids(&id, a.day);
    let dirs = responsible_directories(&ring, &ids).map_err(|e| Failure::Usage(e.to_string()))?;
    let hexes = |v: &[Fingerprint]| v.iter().map(hex::encode).collect::<Vec<_>>();
    let mut out = json!({
        "day": a.day,
        "descriptor_ids": hexes(&ids),
        "responsible": hexes(&dirs),
    });
    if a.blackhole {
        let mut rng = SeedTree::new(a.seed).stream("hsdir", 0);
        let report = blackhole_service(&id, a.day, &ring, a.max_draws, &mut rng)
            .map_err(|e| Failure::Runtime(e.to_string()))?;
        let joined = ring_with(&ring, &report.fingerprints);
        let owned = |day: u64| -> Result<usize, Failure> {
            let d = responsible_directories(&joined, &descriptor_ids(&id, day)).map_err(|e| Failure::Runtime(e.to_string()))?;
            Ok(d.iter().filter(|f| report.fingerprints.contains(f)).count())
        };
        out["blackhole"] = serde_json::to_value(&report).expect("json");
        out["attacker_responsible_today"] = owned(a.day)?.into();
        out["attacker_responsible_next_day"] = owned(a.day + 1)?.into();
    }
    println!("{}", pretty(&out));
    Ok(())
}

fn cost(a: CostArgs) -> Result<(), Failure> {
    let mut inputs = CostInputs { exit_weight_units: a.exit_weight, n_sybil_ips: a.ips, ..Default::default() };
    if let Some(h) = a.hours {
        inputs.hours_per_month = h;
    }
    if let Some(r) = a.eur_usd {
        inputs.eur_usd_rate = r;
    }
    let b = attack_cost(&inputs).map_err(Failure::Usage)?;
    println!("{}", pretty(&serde_json::to_value(b).expect("json")));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Markov(a) => markov(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::Cookie(a) => cookie(a),
        Cmd::Hsdir(a) => hsdir(a),
        Cmd::Cost(a) => cost(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
