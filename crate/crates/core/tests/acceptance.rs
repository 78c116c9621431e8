//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! then repeats the run to check that the metric outputs are byte-identical.
//! Exits non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;

use torbit::addrbook::{getaddr_size, AddrBook, Salt, TransportMode};
use torbit::adversary::{check_cookie, set_cookie, CookieRegistry};
use torbit::analytics::{expected_capture_time, expected_recovery, monte_carlo_capture_time, MarkovParams};
use torbit::bitcoin::{ConnId, DosMode, MessageKind, PeerNode, Role, WireMessage};
use torbit::harness::{build_consensus, run_scenario, ScenarioConfig};
use torbit::netaddr::NetAddress;
use torbit::rng::{seeded, SeedTree};
use torbit::tor::{GuardSet, RelayDescriptor, StreamContext, StreamTarget};

struct Verdict {
    pass: bool,
    summary: String,
    /// Everything the criterion computed, compared across repeated runs.
    metrics: String,
}

impl Verdict {
    fn new(pass: bool, summary: String) -> Self {
        Verdict { metrics: summary.clone(), pass, summary }
    }

    fn with_metrics(mut self, m: String) -> Self {
        self.metrics.push('\n');
        self.metrics.push_str(&m);
        self
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn torbit(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_torbit")).args(args).output().expect("spawn torbit");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

fn torbit_json(args: &[&str]) -> Value {
    let (code, out) = torbit(args);
    assert_eq!(code, 0, "torbit {args:?} exited {code}");
    serde_json::from_str(&out).expect("json output")
}

fn markov_anchor(args: &[&str], ok: impl Fn(f64) -> bool, want: &str) -> Verdict {
    let v = torbit_json(args);
    let t = v["analytic_s"].as_f64().unwrap();
    Verdict::new(ok(t), format!("expected capture time {t:.2} s, want {want}")).with_metrics(v.to_string())
}

fn c1() -> Verdict {
    markov_anchor(
        &["markov", "--exit-weight", "400000", "--total-exit-weight", "5700000", "--trials", "10000", "--seed", "1"],
        |t| (84.0..=156.0).contains(&t),
        "[84, 156] s",
    )
}

fn c2() -> Verdict {
    markov_anchor(
        &[
            "markov", "--exit-weight", "100000", "--total-exit-weight", "5700000", "--sybils", "1000", "--servers",
            "7000", "--trials", "10000", "--seed", "1",
        ],
        |t| t < 300.0,
        "< 300 s",
    )
}

fn c3() -> Verdict {
    let exit_shares = [0.01, 0.03, 0.07, 0.15, 0.3];
    let attacker_peers = [0.0, 0.01, 0.04, 0.1, 0.2];
    let seeds = SeedTree::new(2014);
    let mut misses = Vec::new();
    let mut log = String::new();
    for (i, &e) in exit_shares.iter().enumerate() {
        for (j, &a) in attacker_peers.iter().enumerate() {
            let p = MarkovParams {
                frac_unreachable: 2.0 / 3.0,
                frac_attacker_peers: a,
                exit_share: e,
                circuits_per_unreachable: 4.6,
                dwell_state1: 39.6,
                dwell_state2: 0.5,
            };
            let t = expected_capture_time(&p).unwrap();
            let mc = monte_carlo_capture_time(&p, 100_000, &mut seeds.stream("grid", (i * 5 + j) as u64)).unwrap();
            log.push_str(&format!("{e},{a},{t},{},{}\n", mc.mean, mc.ci95));
            if !mc.contains(t) {
                misses.push(format!("e={e} a={a}: {t:.2} vs {:.2}±{:.2}", mc.mean, mc.ci95));
            }
        }
    }
    let summary = if misses.is_empty() {
        "analytic inside the 95% CI at all 25 grid points".to_string()
    } else {
        format!("{} of 25 grid points outside the 95% CI ({})", misses.len(), misses.join("; "))
    };
    Verdict::new(misses.is_empty(), summary).with_metrics(log)
}

fn c4() -> Verdict {
    // anchor A, a sybil-driven point and the top of the exit-weight range
    let points = [(400_000u64, 0usize), (100_000, 50), (1_000_000, 0)];
    let mut parts = Vec::new();
    let mut log = String::new();
    let mut pass = true;
    for (i, &(w, s)) in points.iter().enumerate() {
        let mut c = ScenarioConfig::default();
        c.duration_s = 4 * 3600;
        c.clients.count = 200;
        c.clients.mode = TransportMode::OverTor;
        c.topology.honest_servers = 100;
        c.topology.unreachable_addrs = 10_000;
        c.attacker.exit_weight = w;
        c.attacker.sybils = s;
        c.attacker.ban_campaign = true;
        let out = run_scenario(&c, 40 + i as u64, false).unwrap();
        let sm = &out.metrics.summary;
        let (Some(sim), Some(an)) = (sm.mean_ttfc_s, sm.analytic_ttfc_s) else {
            return Verdict::new(false, format!("scenario {w}/{s} produced no comparison"));
        };
        let dev = (sim - an) / an;
        pass &= dev.abs() <= 0.25 && sm.connected == sm.clients;
        parts.push(format!("w={w} s={s}: DES {sim:.1} s vs analytic {an:.1} s ({:+.0}%)", dev * 100.0));
        log.push_str(&out.metrics.to_jsonl());
    }
    Verdict::new(pass, format!("{}; want within ±25%", parts.join(", "))).with_metrics(log)
}

struct Unreachable;

impl StreamTarget for Unreachable {
    fn port(&self) -> u16 {
        8333
    }
    fn reachable(&self) -> bool {
        false
    }
    fn admit(&mut self, _: &RelayDescriptor, _: u64) -> bool {
        false
    }
}

fn c5() -> Verdict {
    let mut cfg = ScenarioConfig::default();
    cfg.attacker.exit_weight = 0;
    let consensus = build_consensus(&cfg, &mut seeded(5)).unwrap();
    let exits = consensus.exit_selector(8333).unwrap();
    let guards = GuardSet::choose(&consensus, 3, &mut seeded(6)).unwrap();
    let ctx = StreamContext {
        consensus: &consensus,
        exits: &exits,
        guards: &guards,
        mix: &cfg.tor.mix,
        timing: &cfg.tor.timing,
    };
    let n = 10_000;
    let (mut secs, mut circuits) = (0.0, 0.0);
    for i in 0..n {
        let s = ctx.run(&mut Unreachable, 0, &mut SeedTree::new(5).stream("stream", i));
        secs += s.duration_ms as f64 / 1000.0;
        circuits += s.circuits.len() as f64;
    }
    let (t, c) = (secs / n as f64, circuits / n as f64);
    let pass = (35.6..=43.6).contains(&t) && (4.1..=5.1).contains(&c);
    Verdict::new(pass, format!("mean attempt {t:.2} s, {c:.2} circuits over {n} streams; want [35.6, 43.6] s, [4.1, 5.1]"))
}

fn c6() -> Verdict {
    let mut cfg = ScenarioConfig::default();
    cfg.duration_s = 2 * 3600;
    cfg.clients.count = 30;
    cfg.clients.mode = TransportMode::OverTor;
    cfg.topology.honest_servers = 50;
    cfg.topology.unreachable_addrs = 100;
    cfg.attacker.exit_weight = 400_000;
    cfg.attacker.sybils = 5;
    cfg.attacker.ban_campaign = true;
    let (mut connected, mut captured) = (0, 0);
    let mut log = String::new();
    for seed in 0..10 {
        let out = run_scenario(&cfg, seed, false).unwrap();
        connected += out.metrics.summary.connected;
        captured += out.metrics.summary.fully_captured;
        log.push_str(&out.metrics.to_jsonl());
    }
    Verdict::new(
        connected > 0 && captured == connected,
        format!("{captured} of {connected} connected clients captured across 10 seeds"),
    )
    .with_metrics(log)
}

fn cookie_rows(args: &[&str]) -> Vec<(f64, f64)> {
    let (code, out) = torbit(args);
    assert_eq!(code, 0);
    out.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2].parse().unwrap(), f[3].parse().unwrap_or(f64::NAN))
        })
        .collect()
}

fn c7() -> Verdict {
    let rows = cookie_rows(&["cookie", "--seed", "7"]);
    let worst = rows.iter().map(|(s, o)| (s - o).abs()).fold(0.0, f64::max);
    let ten = cookie_rows(&["cookie", "--hours", "0,10", "--seed", "7"])[1].0;
    let day = cookie_rows(&["cookie", "--hours", "0,24", "--seed", "7"])[1].0;
    let pass = rows.len() == 10 && worst <= 20.0 && (ten - 76.0).abs() <= 15.0 && (day - 55.0).abs() <= 15.0;
    let sim: Vec<String> = rows.iter().map(|r| format!("{:.0}", r.0)).collect();
    Verdict::new(
        pass,
        format!(
            "survivors {} (largest gap {worst:.0}, want ≤ 20); 10 h gap {ten:.0}% (want 76±15), 24 h gap {day:.0}% (want 55±15)",
            sim.join(",")
        ),
    )
}

fn c8() -> Verdict {
    let runs = 20;
    let attacker = NetAddress::ipv4([203, 0, 113, 1], 8333);
    let mut total = 0.0;
    let mut size = 0;
    for r in 0..runs {
        let mut rng = seeded(800 + r);
        let book = AddrBook::new(TransportMode::Direct, Salt::random(&mut rng));
        let mut c = PeerNode::new(NetAddress::ipv4([7, 7, 7, 7], 8333), Role::HonestClient, book, DosMode::AlwaysOn, &mut rng);
        while c.book.len() < 11_900 {
            let a = NetAddress::ipv4([rng.gen_range(1..224), rng.gen(), rng.gen(), rng.gen()], 8333);
            let src = NetAddress::ipv4([rng.gen_range(1..224), rng.gen(), 0, 1], 8333);
            c.book.add_address(a, src, -3600, 0, &mut rng);
        }
        c.add_outgoing(ConnId(1), attacker);
        let mut reg = CookieRegistry::default();
        set_cookie(&mut reg, &mut c, attacker, 100, &[], None, 0, &mut rng);
        size = c.book.len();
        total += check_cookie(&mut reg, &mut c, attacker, 8, 0.2, None, 0, &mut rng).unwrap().fraction;
    }
    let sim = total / runs as f64;
    // each reply samples 23% of the book without replacement
    let share = (0.23 * size as f64).round().min(2500.0) / size as f64;
    let oracle = 1.0 - (1.0 - share).powi(8);
    let closed = expected_recovery(12_000, 8);
    let pass = closed >= 0.85 && (sim - oracle).abs() <= 0.03;
    Verdict::new(
        pass,
        format!("closed form {closed:.4} (want ≥ 0.85); simulated {sim:.4} vs oracle {oracle:.4} on {size} entries"),
    )
}

fn c9() -> Verdict {
    let sizes = [0usize, 1, 100, 1000, 10_869, 20_480];
    let mut rng = seeded(9);
    let mut bad = Vec::new();
    let mut got = Vec::new();
    for &b in &sizes {
        let want = ((0.23 * b as f64).round() as usize).min(2500);
        let rule = getaddr_size(b);
        // a real book for every size that can be filled by random insertion
        let reply = (b < 20_480).then(|| {
            let mut book = AddrBook::new(TransportMode::Direct, Salt::random(&mut rng));
            while book.len() < b {
                let a = NetAddress::ipv4([rng.gen_range(1..224), rng.gen(), rng.gen(), rng.gen()], 8333);
                let src = NetAddress::ipv4([rng.gen_range(1..224), rng.gen(), 0, 1], 8333);
                book.add_address(a, src, -60, 0, &mut rng);
            }
            book.getaddr_response(&mut rng).len()
        });
        if rule != want || reply.is_some_and(|r| r != want) {
            bad.push(b);
        }
        got.push(format!("{b}->{rule}"));
    }
    Verdict::new(bad.is_empty(), format!("{} (mismatches: {bad:?})", got.join(" ")))
}

fn c10() -> Verdict {
    let ring = fixture("hsdir_ring_200.txt");
    let v = torbit_json(&[
        "hsdir", "--ring", ring.to_str().unwrap(), "--onion", "2xylerfjgat6kf3s.onion", "--day", "16400", "--blackhole",
        "--seed", "10",
    ]);
    let n = v["blackhole"]["fingerprints"].as_array().map_or(0, Vec::len);
    let today = v["attacker_responsible_today"].as_u64().unwrap();
    let next = v["attacker_responsible_next_day"].as_u64().unwrap();
    Verdict::new(
        n == 6 && today == 6 && next == 0,
        format!("{n} fingerprints; attacker holds {today} of 6 directories today, {next} the next day"),
    )
    .with_metrics(v.to_string())
}

fn c11() -> Verdict {
    let exit = NetAddress::ipv4([9, 9, 9, 9], 8333);
    let mut rng = seeded(11);
    let mut fresh = |dos| {
        let book = AddrBook::new(TransportMode::Direct, Salt([1; 16]));
        PeerNode::new(NetAddress::ipv4([20, 0, 0, 1], 8333), Role::HonestServer, book, dos, &mut rng)
    };
    let mut checks = Vec::new();

    let mut s = fresh(DosMode::AlwaysOn);
    s.accept_incoming(exit, ConnId(1), 0);
    let mut r = seeded(1);
    for _ in 0..50 {
        s.handle_message(&WireMessage::new(MessageKind::Benign, exit), 100, &mut r);
    }
    checks.push(("harmless traffic never bans", !s.is_banned(&exit, 100)));
    s.handle_message(&WireMessage::new(MessageKind::MalformedTx, exit), 100, &mut r);
    checks.push(("score 100 bans", s.penalty_of(&exit) == 100 && s.is_banned(&exit, 100)));
    checks.push(("banned one second before 24 h", s.is_banned(&exit, 100 + 86_399)));
    checks.push(("free at exactly 24 h", !s.is_banned(&exit, 100 + 86_400)));

    let nodes = 2000;
    let on = (0..nodes).filter(|_| fresh(DosMode::CoinFlip).dos_active()).count();
    let frac = on as f64 / nodes as f64;
    let sigma = (0.25 / nodes as f64).sqrt();
    checks.push(("coin flip near one half", (frac - 0.5).abs() <= 3.0 * sigma));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    Verdict::new(
        failed.is_empty(),
        format!("{} ban properties hold; CoinFlip active on {frac:.3} of {nodes} (3σ = {:.3}); failed: {failed:?}", checks.len() - failed.len(), 3.0 * sigma),
    )
}

fn c12() -> Verdict {
    let sybil = torbit_json(&["cost", "--ips", "1000"])["sybil_usd"].as_f64().unwrap();
    let exits = torbit_json(&["cost", "--exit-weight", "414000"]);
    let total = exits["total_usd"].as_f64().unwrap();
    let relays = exits["relays"].as_u64().unwrap();
    let pass = (sybil - 7200.0).abs() < 1e-6 && relays == 6 && (total - 2500.0).abs() <= 125.0;
    Verdict::new(pass, format!("1000 IPs cost {sybil} USD/month; {relays} relays cost {total} USD/month (want ≈2500 ±5%)"))
}

type Criterion = (&'static str, Duration, fn() -> Verdict);

fn criteria() -> Vec<Criterion> {
    let s = Duration::from_secs;
    vec![
        ("Markov anchor A", s(1), c1),
        ("Markov anchor B", s(1), c2),
        ("Oracle equivalence", s(60), c3),
        ("End-to-end model agreement", s(300), c4),
        ("Timeout calibration", s(30), c5),
        ("Capture completeness", s(120), c6),
        ("Cookie decay", s(60), c7),
        ("Cookie extraction", s(10), c8),
        ("GETADDR law", s(1), c9),
        ("HSDir black-holing", s(30), c10),
        ("Ban semantics", s(30), c11),
        ("Cost fixtures", s(1), c12),
    ]
}

fn line(n: usize, name: &str, pass: bool, elapsed: Duration, limit: Option<Duration>, summary: &str) {
    let timing = match limit {
        Some(l) => format!("{:.2} s, limit {} s", elapsed.as_secs_f64(), l.as_secs()),
        None => format!("{:.2} s", elapsed.as_secs_f64()),
    };
    println!("criterion {n:>2} {} {name}: {summary} [{timing}]", if pass { "PASS" } else { "FAIL" });
}

fn main() -> ExitCode {
    let mut failed = Vec::new();
    let mut first = Vec::new();
    for (i, (name, limit, f)) in criteria().into_iter().enumerate() {
        let t = Instant::now();
        let v = f();
        let elapsed = t.elapsed();
        let pass = v.pass && elapsed <= limit;
        line(i + 1, name, pass, elapsed, Some(limit), &v.summary);
        if !pass {
            failed.push(i + 1);
        }
        first.push(v.metrics);
    }

    let t = Instant::now();
    let differing: Vec<usize> = criteria()
        .into_iter()
        .zip(&first)
        .enumerate()
        .filter(|(_, ((_, _, f), m))| f().metrics != **m)
        .map(|(i, _)| i + 1)
        .collect();
    let pass = differing.is_empty();
    let summary = if pass {
        "a second run with the same seeds reproduced every metric output byte for byte".to_string()
    } else {
        format!("criteria {differing:?} produced different output on the second run")
    };
    line(13, "Determinism", pass, t.elapsed(), None, &summary);
    if !pass {
        failed.push(13);
    }

    if failed.is_empty() {
        println!("all 13 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
