//! The discrete-event engine.
//!
//! Events are ordered by time in milliseconds, then by insertion. Node
//! methods work in whole seconds, so the engine hands them `time_ms / 1000`.
//!
//! Address plan: honest servers are `11.a.b.1`, the unreachable pool shared by
//! every client is `12.x.y.z`, sybils are `13.a.b.1`, clients are `14.x.y.z`,
//! synthetic relays live in `30/8` to `33/8`. Onion peers and onion sybils use
//! identities starting `0x10` and `0x20`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use super::config::{parse_census, ConfigError, ScenarioConfig};
use super::metrics::{BanCoverage, ClientMetrics, CookieEvent, CookieEventKind, Outcome, RunMetrics, Summary};
use crate::addrbook::{AddrBook, PersistError, Salt, Timestamp, TransportMode};
use crate::adversary::{
    advertise_sybils, ban_campaign, blackhole_service, check_cookie, exhaust_connections, port_poison,
    set_cookie, AttackerAssets, BAN_REFRESH_SECS,
};
use crate::analytics::{expected_capture_time, Amplification, MarkovParams, TimestampDistribution};
use crate::bitcoin::{AcceptOutcome, Bootstrap, ConnId, DialAttempt, DialKind, DialPlan, PeerNode, Role};
use crate::netaddr::{HostKey, NetAddress, DEFAULT_PORT};
use crate::rng::{SeedTree, SimRng};
use crate::tor::hsdir::SECONDS_PER_DAY;
use crate::tor::stream::unreachable_expectation;
use crate::tor::{
    hsdir_ring, Consensus, ExitPolicy, ExitSelector, Fingerprint, GuardSet, Operator, RelayDescriptor, RelayFlags,
    StreamContext, StreamOutcome, StreamTarget, TorError,
};

/// Where the attacker's own Bitcoin node sits when an exit redirects to it.
pub fn attacker_node() -> NetAddress {
    NetAddress::ipv4([203, 0, 113, 1], DEFAULT_PORT)
}
/// The port used to poison server entries.
pub const POISON_PORT: u16 = 8334;
/// Exit weight carried by one synthetic attacker relay.
pub const UNITS_PER_RELAY: u64 = 69_000;
const PERSIST_EVERY_MS: u64 = 900_000;
const COVERAGE_EVERY_MS: u64 = 3_600_000;
const BLACKHOLE_MAX_DRAWS: u64 = 1 << 24;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot read fixture {path}: {message}")]
    Fixture { path: String, message: String },
    #[error("consensus: {0}")]
    Tor(#[from] TorError),
    #[error("address book: {0}")]
    Persist(#[from] PersistError),
}

/// Output of one run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: RunMetrics,
    /// Event trace, one line per event, when requested.
    pub trace: Vec<String>,
    /// Cookie registry export, JSON lines.
    pub cookies_jsonl: String,
    /// Each client's address book in the persistence format, as last saved.
    pub books: Vec<Vec<u8>>,
}

pub fn server_addr(i: usize) -> NetAddress {
    NetAddress::ipv4([11, (i >> 8) as u8, i as u8, 1], DEFAULT_PORT)
}

pub fn unreachable_addr(j: usize) -> NetAddress {
    NetAddress::ipv4([12, (j >> 16) as u8, (j >> 8) as u8, j as u8], DEFAULT_PORT)
}

pub fn sybil_addr(k: usize) -> NetAddress {
    NetAddress::ipv4([13, (k >> 8) as u8, k as u8, 1], DEFAULT_PORT)
}

pub fn client_addr(c: usize) -> NetAddress {
    NetAddress::ipv4([14, (c >> 16) as u8, (c >> 8) as u8, c as u8], DEFAULT_PORT)
}

fn onion_addr(tag: u8, i: usize) -> NetAddress {
    let mut id = [0u8; 10];
    id[0] = tag;
    id[2..].copy_from_slice(&(i as u64).to_be_bytes());
    NetAddress::onioncat(id, DEFAULT_PORT)
}

pub fn onion_peer_addr(i: usize) -> NetAddress {
    onion_addr(0x10, i)
}

pub fn onion_sybil_addr(i: usize) -> NetAddress {
    onion_addr(0x20, i)
}

/// What sits behind an address.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PeerKind {
    Server(usize),
    Sybil,
    Unreachable,
    OnionPeer(usize),
    OnionSybil,
}

fn relay(fp: Fingerprint, ip: [u8; 4], weight: u64, flags: RelayFlags, op: Operator) -> RelayDescriptor {
    let policy = if flags.exit { ExitPolicy::accept_all() } else { ExitPolicy::reject_all() };
    RelayDescriptor {
        fingerprint: fp,
        ip: NetAddress::ipv4(ip, 9001),
        weight,
        flags,
        advertised_policy: policy.clone(),
        real_policy: policy,
        operator: op,
    }
}

/// The consensus a scenario runs against: the fixture when one is named,
/// otherwise honest and attacker exits, guards and HSDirs built from the
/// topology counts.
pub fn build_consensus(cfg: &ScenarioConfig, rng: &mut SimRng) -> Result<Consensus, ScenarioError> {
    if let Some(path) = cfg.consensus_path() {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| ScenarioError::Fixture { path: path.display().to_string(), message: e.to_string() })?;
        return Ok(Consensus::parse(&text)?);
    }
    let t = &cfg.topology;
    let mut relays = Vec::new();
    let mut fp = || {
        let mut f = [0u8; 20];
        rng.fill(&mut f[..]);
        f
    };
    let exit = RelayFlags { exit: true, ..Default::default() };
    for i in 0..t.honest_exits {
        let w = t.honest_exit_weight / t.honest_exits as u64
            + u64::from((i as u64) < t.honest_exit_weight % t.honest_exits as u64);
        relays.push(relay(fp(), [30, (i >> 8) as u8, i as u8, 1], w, exit, Operator::Honest));
    }
    let w = cfg.attacker.exit_weight;
    let n = w.div_ceil(UNITS_PER_RELAY);
    for i in 0..n {
        let share = w / n + u64::from(i < w % n);
        relays.push(relay(fp(), [31, (i >> 8) as u8, i as u8, 1], share, exit, Operator::Attacker));
    }
    let guard = RelayFlags { guard: true, ..Default::default() };
    for i in 0..t.guard_relays {
        relays.push(relay(fp(), [32, (i >> 8) as u8, i as u8, 1], 1_000_000, guard, Operator::Honest));
    }
    let hsdir = RelayFlags { hsdir: true, ..Default::default() };
    for i in 0..t.hsdir_relays {
        relays.push(relay(fp(), [33, (i >> 8) as u8, i as u8, 1], 10_000, hsdir, Operator::Honest));
    }
    Ok(Consensus::new(relays)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Ev {
    Campaign,
    Exhaust,
    DayRoll(u64),
    SessionEnd(usize),
    SessionStart(usize, usize),
    AttemptDone(usize, u64),
    Dial(usize, u64),
    Persist(usize, u64),
    Coverage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Class {
    Honest,
    AttackerExit,
    Sybil,
    Oneshot,
    Failed,
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    conn: ConnId,
    class: Class,
    /// Server holding the far end, when an honest server admitted us.
    server: Option<usize>,
}

struct ClientState {
    node: PeerNode,
    ip: NetAddress,
    saved: Vec<u8>,
    gen: u64,
    active: bool,
    session: usize,
    session_start_ms: u64,
    connected_this_session: bool,
    cookie_done: bool,
    cookie_record: Option<usize>,
    first_outcome: Option<Outcome>,
    pending: Option<Pending>,
    guards: Option<GuardSet>,
    rng: SimRng,
    metrics: ClientMetrics,
}

/// The destination of one stream.
struct Dest<'a> {
    server: Option<(&'a mut PeerNode, ConnId)>,
    reachable: bool,
    start_ms: u64,
}

impl StreamTarget for Dest<'_> {
    fn port(&self) -> u16 {
        DEFAULT_PORT
    }

    fn reachable(&self) -> bool {
        self.reachable
    }

    fn admit(&mut self, exit: &RelayDescriptor, at_ms: u64) -> bool {
        match &mut self.server {
            Some((s, conn)) => {
                let now = ((self.start_ms + at_ms) / 1000) as Timestamp;
                s.accept_incoming(exit.ip, *conn, now) == AcceptOutcome::Accepted
            }
            None => true,
        }
    }
}

struct World<'c> {
    cfg: &'c ScenarioConfig,
    consensus: Consensus,
    exits: Option<ExitSelector>,
    servers: Vec<PeerNode>,
    peers: HashMap<HostKey, PeerKind>,
    clients: Vec<ClientState>,
    attacker: AttackerAssets,
    attacker_rng: SimRng,
    honest_exit_ips: Vec<NetAddress>,
    boot: Bootstrap,
    /// Server-side ends of client connections: conn -> (client, server).
    links: BTreeMap<ConnId, (usize, usize)>,
    next_conn: u64,
    ring: Vec<Fingerprint>,
    onion_peers: Vec<NetAddress>,
    blackholed: Vec<bool>,
    queue: BinaryHeap<Reverse<(u64, u64, Ev)>>,
    seq: u64,
    now_ms: u64,
    events: u64,
    trace: Option<Vec<String>>,
    out: RunMetrics,
}

impl<'c> World<'c> {
    fn schedule(&mut self, at_ms: u64, ev: Ev) {
        if at_ms <= self.cfg.duration_s * 1000 {
            self.seq += 1;
            self.queue.push(Reverse((at_ms, self.seq, ev)));
        }
    }

    fn now_s(&self) -> Timestamp {
        (self.now_ms / 1000) as Timestamp
    }

    fn log(&mut self, node: &str, event: &str, payload: impl FnOnce() -> String) {
        if let Some(t) = &mut self.trace {
            t.push(format!("{:.3} {node} {event} {}", self.now_ms as f64 / 1000.0, payload()));
        }
    }

    fn conn(&mut self) -> ConnId {
        self.next_conn += 1;
        ConnId(self.next_conn)
    }

    fn classify(&self, a: &NetAddress) -> PeerKind {
        match self.peers.get(&a.host()) {
            // a poisoned entry points at a port nothing listens on
            Some(PeerKind::Server(_)) if a.port() != DEFAULT_PORT => PeerKind::Unreachable,
            Some(k) => *k,
            None => PeerKind::Unreachable,
        }
    }

    /// Plays a dial to completion now and returns how long it takes and
    /// what it yields.
    fn resolve(&mut self, c: usize, att: DialAttempt) -> (u64, Pending) {
        let conn = self.conn();
        let mode = self.clients[c].node.book.mode();
        let kind = match att.kind {
            DialKind::Oneshot(n) => PeerKind::Server(n % self.cfg.topology.dns_seeds.max(1)),
            _ => self.classify(&att.target),
        };
        let fail = |ms: u64| (ms, Pending { conn, class: Class::Failed, server: None });
        let oneshot = matches!(att.kind, DialKind::Oneshot(_));
        if mode == TransportMode::Direct {
            let d = self.cfg.direct;
            return match kind {
                PeerKind::Server(i) => {
                    let ip = self.clients[c].ip;
                    let now = self.now_s();
                    if self.servers[i].accept_incoming(ip, conn, now) == AcceptOutcome::Accepted {
                        (d.connect_ms, Pending { conn, class: Class::Honest, server: Some(i) })
                    } else {
                        fail(d.refused_ms)
                    }
                }
                PeerKind::Sybil => (d.connect_ms, Pending { conn, class: Class::Sybil, server: None }),
                PeerKind::OnionPeer(_) | PeerKind::OnionSybil => fail(d.refused_ms),
                PeerKind::Unreachable => fail(d.timeout_ms),
            };
        }
        let timing = self.cfg.tor.timing;
        match kind {
            PeerKind::OnionPeer(p) => {
                return if self.blackholed.get(p).copied().unwrap_or(false) {
                    fail(timing.refused_ms)
                } else {
                    (timing.connect_ms, Pending { conn, class: Class::Honest, server: None })
                };
            }
            PeerKind::OnionSybil => {
                return (timing.connect_ms, Pending { conn, class: Class::Sybil, server: None });
            }
            _ => {}
        }
        let exits = self.exits.as_ref().expect("Tor clients have an exit selector");
        let client = &mut self.clients[c];
        let ctx = StreamContext {
            consensus: &self.consensus,
            exits,
            guards: client.guards.as_ref().expect("Tor clients have guards"),
            mix: &self.cfg.tor.mix,
            timing: &timing,
        };
        let (server, reachable) = match kind {
            PeerKind::Server(i) => (Some(i), true),
            PeerKind::Sybil => (None, true),
            _ => (None, false),
        };
        let mut dest = Dest {
            server: server.map(|i| (&mut self.servers[i], conn)),
            reachable,
            start_ms: self.now_ms,
        };
        let attempt = ctx.run(&mut dest, self.now_ms, &mut client.rng);
        let class = match attempt.outcome {
            StreamOutcome::Connected { via_attacker: true, .. } => Class::AttackerExit,
            StreamOutcome::Connected { .. } if oneshot => Class::Oneshot,
            StreamOutcome::Connected { .. } if server.is_some() => Class::Honest,
            StreamOutcome::Connected { .. } => Class::Sybil,
            _ => Class::Failed,
        };
        let admitted = matches!(attempt.outcome, StreamOutcome::Connected { via_attacker: false, .. });
        let server = server.filter(|_| admitted);
        (attempt.duration_ms, Pending { conn, class, server })
    }

    fn release(&mut self, p: &Pending) {
        if let Some(s) = p.server {
            self.servers[s].remove_link(p.conn);
            self.links.remove(&p.conn);
        }
    }

    fn on_dial(&mut self, c: usize, gen: u64) {
        let now = self.now_s();
        let cl = &mut self.clients[c];
        if !cl.active || cl.gen != gen {
            return;
        }
        let plan = cl.node.maintain_outgoing(&self.boot, now, &mut cl.rng);
        match plan {
            DialPlan::Idle => {}
            DialPlan::WaitUntil(t) => {
                let at = (t.max(now + 1) as u64) * 1000;
                self.schedule(at, Ev::Dial(c, gen));
            }
            DialPlan::Dial(att) => {
                self.clients[c].metrics.attempts += 1;
                let (dur, pending) = self.resolve(c, att);
                self.log(&format!("client/{c}"), "dial", || {
                    format!("{} {:?} {:?} {}ms", att.target, att.kind, pending.class, dur)
                });
                self.clients[c].pending = Some(pending);
                self.schedule(self.now_ms + dur.max(1), Ev::AttemptDone(c, gen));
            }
        }
    }

    fn on_attempt_done(&mut self, c: usize, gen: u64) {
        if !self.clients[c].active || self.clients[c].gen != gen {
            return;
        }
        let Some(p) = self.clients[c].pending.take() else { return };
        let now = self.now_s();
        let cl = &mut self.clients[c];
        let established = matches!(p.class, Class::Honest | Class::AttackerExit | Class::Sybil);
        let att = cl.node.attempt_finished(established.then_some(p.conn), now, &mut cl.rng);
        let kept = established && cl.node.outgoing().iter().any(|l| l.conn == p.conn);
        if kept {
            if let Some(s) = p.server {
                self.links.insert(p.conn, (c, s));
            }
            self.on_connected(c, p, att.map(|a| a.target));
        } else {
            self.release(&p);
        }
        self.schedule(self.now_ms, Ev::Dial(c, gen));
    }

    fn on_connected(&mut self, c: usize, p: Pending, target: Option<NetAddress>) {
        let attacker = p.class != Class::Honest;
        let cl = &mut self.clients[c];
        if attacker {
            cl.metrics.connections_attacker += 1;
        } else {
            cl.metrics.connections_honest += 1;
        }
        if !cl.connected_this_session {
            cl.connected_this_session = true;
            let t = (self.now_ms - cl.session_start_ms) as f64 / 1000.0;
            if let Some(slot) = cl.metrics.session_ttfc_s.last_mut() {
                *slot = Some(t);
            }
            if cl.session == 0 && cl.first_outcome.is_none() {
                cl.metrics.ttfc_s = Some(t);
                cl.first_outcome = Some(match p.class {
                    Class::AttackerExit => Outcome::CapturedViaExit,
                    Class::Sybil => Outcome::CapturedViaSybil,
                    _ => Outcome::ConnectedHonest,
                });
            }
        }
        self.log(&format!("client/{c}"), "connected", || {
            format!("{} {:?}", target.map(|t| t.to_string()).unwrap_or_default(), p.class)
        });
        if attacker && self.cfg.attacker.cookies && !self.clients[c].cookie_done {
            let via = match p.class {
                Class::Sybil => target.unwrap_or(attacker_node()),
                _ => attacker_node(),
            };
            self.cookie_round(c, via);
        }
    }

    fn cookie_round(&mut self, c: usize, attacker_ip: NetAddress) {
        let cfg = self.cfg;
        let a = &cfg.attacker;
        let now = self.now_s();
        let at_s = self.now_ms as f64 / 1000.0;
        let cl = &mut self.clients[c];
        cl.cookie_done = true;
        let client_ip = (cl.node.book.mode() == TransportMode::Direct).then_some(cl.ip);
        let reg = &mut self.attacker.registry;
        let checked = check_cookie(reg, &mut cl.node, attacker_ip, a.cookie_probes, a.match_threshold, client_ip, now, &mut self.attacker_rng);
        let mut events = Vec::new();
        if let Ok(m) = &checked {
            events.push(CookieEvent { at_s, client: c, kind: CookieEventKind::Checked, record: Some(m.record), fraction: Some(m.fraction) });
        }
        match checked {
            Ok(m) if m.linked => {
                events.push(CookieEvent { at_s, client: c, kind: CookieEventKind::Linked, record: Some(m.record), fraction: Some(m.fraction) });
                cl.cookie_record = Some(m.record);
            }
            _ => {
                let padding: Vec<NetAddress> = (0..self.servers.len().min(11)).map(server_addr).collect();
                let rec = set_cookie(reg, &mut cl.node, attacker_ip, a.cookie_size, &padding, client_ip, now, &mut self.attacker_rng);
                events.push(CookieEvent { at_s, client: c, kind: CookieEventKind::Set, record: Some(rec.id), fraction: None });
                cl.cookie_record = Some(rec.id);
            }
        }
        for e in &events {
            self.log(&format!("client/{c}"), "cookie", || format!("{:?} {:?}", e.kind, e.record));
        }
        self.out.cookie_events.extend(events);
    }

    fn on_session_start(&mut self, c: usize, s: usize) -> Result<(), ScenarioError> {
        let now = self.now_s();
        let cl = &mut self.clients[c];
        cl.gen += 1;
        cl.active = true;
        cl.session = s;
        cl.session_start_ms = self.now_ms;
        cl.connected_this_session = false;
        cl.cookie_done = false;
        let mode = cl.node.book.mode();
        cl.node.book = AddrBook::load(&cl.saved)?;
        cl.node.book.set_mode(mode);
        let survivors = cl.cookie_record.map(|r| {
            let rec = &self.attacker.registry.records[r];
            rec.fingerprint.iter().filter(|a| cl.node.book.contains(a)).count()
        });
        cl.metrics.cookie_survivors.push(survivors);
        cl.metrics.session_ttfc_s.push(None);
        cl.node.bootstrap(&self.boot, now, &mut cl.rng);
        let gen = cl.gen;
        let book = cl.node.book.len();
        self.log(&format!("client/{c}"), "session_start", || format!("{s} book={book}"));
        self.schedule(self.now_ms, Ev::Dial(c, gen));
        self.schedule(self.now_ms + PERSIST_EVERY_MS, Ev::Persist(c, gen));
        Ok(())
    }

    fn on_session_end(&mut self, c: usize) {
        if let Some(p) = self.clients[c].pending.take() {
            self.release(&p);
        }
        let links = self.clients[c].node.drop_all();
        for l in links {
            if let Some((_, s)) = self.links.remove(&l.conn) {
                self.servers[s].remove_link(l.conn);
            }
        }
        let cl = &mut self.clients[c];
        cl.saved = cl.node.book.persist();
        cl.active = false;
        cl.gen += 1;
        self.log(&format!("client/{c}"), "session_end", String::new);
    }

    fn on_persist(&mut self, c: usize, gen: u64) {
        let cl = &mut self.clients[c];
        if cl.active && cl.gen == gen {
            cl.saved = cl.node.book.persist();
            self.schedule(self.now_ms + PERSIST_EVERY_MS, Ev::Persist(c, gen));
        }
    }

    fn on_campaign(&mut self) {
        let now = self.now_s();
        let mut report =
            ban_campaign(&mut self.attacker, &mut self.servers, &self.honest_exit_ips, now, &mut self.attacker_rng);
        for (_, conn) in std::mem::take(&mut report.dropped) {
            if let Some((c, _)) = self.links.remove(&conn) {
                self.clients[c].node.remove_link(conn);
                let gen = self.clients[c].gen;
                self.schedule(self.now_ms, Ev::Dial(c, gen));
            }
        }
        let base = now + BAN_REFRESH_SECS;
        let next = report.next_due.filter(|d| *d > now).map_or(base, |d| d.min(base));
        self.schedule(next as u64 * 1000, Ev::Campaign);
        self.log("attacker", "campaign", || format!("banned={} next={next}", report.pairs_banned));
        self.out.campaigns.push(report);
        self.sample_coverage();
    }

    fn on_exhaust(&mut self) {
        let now = self.now_s();
        let report = exhaust_connections(&mut self.attacker, &mut self.servers, now);
        if report.connections_added > 0 || report.shortfall > 0 {
            self.log("attacker", "exhaust", || format!("added={} shortfall={}", report.connections_added, report.shortfall));
            self.out.exhaustion.push(report);
        }
        self.schedule(self.now_ms + self.cfg.attacker.exhaust_interval_s * 1000, Ev::Exhaust);
    }

    fn sample_coverage(&mut self) {
        if self.honest_exit_ips.is_empty() {
            return;
        }
        let now = self.now_s();
        let mut banned = 0usize;
        let mut total = 0usize;
        for s in self.servers.iter().filter(|s| s.role == Role::HonestServer) {
            for e in &self.honest_exit_ips {
                total += 1;
                banned += usize::from(s.is_banned(e, now));
            }
        }
        if total > 0 {
            let at_s = self.now_ms as f64 / 1000.0;
            self.out.ban_coverage.push(BanCoverage { at_s, fraction: banned as f64 / total as f64 });
        }
    }

    fn on_day(&mut self, day: u64) {
        for p in 0..self.blackholed.len() {
            let id = self.onion_peers[p].onion_id().expect("onion address");
            match blackhole_service(&id, day, &self.ring, BLACKHOLE_MAX_DRAWS, &mut self.attacker_rng) {
                Ok(r) => {
                    self.blackholed[p] = true;
                    self.log("attacker", "blackhole", || format!("peer/{p} day={day}"));
                    self.out.blackhole.push(r);
                }
                Err(e) => {
                    self.blackholed[p] = false;
                    self.log("attacker", "blackhole_failed", || format!("peer/{p} day={day} {e}"));
                }
            }
        }
        self.schedule((day + 1) * SECONDS_PER_DAY * 1000, Ev::DayRoll(day + 1));
    }

    fn dispatch(&mut self, ev: Ev) -> Result<(), ScenarioError> {
        match ev {
            Ev::Campaign => self.on_campaign(),
            Ev::Exhaust => self.on_exhaust(),
            Ev::DayRoll(d) => self.on_day(d),
            Ev::SessionStart(c, s) => self.on_session_start(c, s)?,
            Ev::SessionEnd(c) => self.on_session_end(c),
            Ev::Dial(c, g) => self.on_dial(c, g),
            Ev::AttemptDone(c, g) => self.on_attempt_done(c, g),
            Ev::Persist(c, g) => self.on_persist(c, g),
            Ev::Coverage => {
                self.sample_coverage();
                self.schedule(self.now_ms + COVERAGE_EVERY_MS, Ev::Coverage);
            }
        }
        Ok(())
    }

    /// Markov parameters matching one client's book, when the scenario has
    /// the shape the chain describes.
    fn markov_params(&self, book: &AddrBook) -> Option<MarkovParams> {
        let cfg = self.cfg;
        let a = &cfg.attacker;
        let fits = cfg.clients.mode == TransportMode::OverTor
            && a.ban_campaign
            && !a.exhaustion
            && self.onion_peers.is_empty()
            && a.onion_sybils == 0;
        if !fits {
            return None;
        }
        let mut u = 0.0;
        let mut s = 0.0;
        for (addr, p) in book.selection_probabilities(0) {
            match self.classify(&addr) {
                PeerKind::Sybil => s += p,
                PeerKind::Server(_) => {}
                _ => u += p,
            }
        }
        let (t1, circuits) = unreachable_expectation(&cfg.tor.mix, &cfg.tor.timing);
        Some(MarkovParams {
            frac_unreachable: u,
            frac_attacker_peers: s,
            exit_share: self.consensus.attacker_exit_share(DEFAULT_PORT),
            circuits_per_unreachable: circuits,
            dwell_state1: t1,
            dwell_state2: cfg.tor.timing.refused_ms as f64 / 1000.0,
        })
    }
}

/// Builds one client's initial book: every honest server, the shared
/// unreachable pool, sybils and onion peers, aged by the timestamp table.
fn client_book(
    cfg: &ScenarioConfig,
    onion_peers: &[NetAddress],
    rng: &mut SimRng,
    ages: &TimestampDistribution,
) -> PeerNode {
    let t = &cfg.topology;
    let a = &cfg.attacker;
    let c_ip = NetAddress::ipv4([0, 0, 0, 0], DEFAULT_PORT);
    let book = AddrBook::new(TransportMode::Direct, Salt::random(rng));
    let mut node = PeerNode::new(c_ip, Role::HonestClient, book, cfg.toggles.dos_mode, rng);
    if a.port_poison {
        let legit: Vec<NetAddress> = (0..t.honest_servers).map(server_addr).collect();
        port_poison(&mut node, &legit, POISON_PORT, attacker_node(), 0, rng);
    }
    let mut ips: Vec<NetAddress> = (0..t.honest_servers).map(server_addr).collect();
    ips.extend((0..t.unreachable_addrs).map(unreachable_addr));
    if cfg.toggles.amplification == Amplification::Plain {
        ips.extend((0..a.sybils).map(sybil_addr));
    }
    ips.shuffle(rng);
    for addr in ips {
        let src = NetAddress::ipv4([rng.gen_range(40..90), rng.gen(), rng.gen(), 1], DEFAULT_PORT);
        let ts = -((ages.sample_hours(rng) * 3600.0) as Timestamp);
        node.book.add_address(addr, src, ts, 0, rng);
    }
    if cfg.toggles.amplification == Amplification::Factor4 && a.sybils > 0 {
        let sybils: Vec<NetAddress> = (0..a.sybils).map(sybil_addr).collect();
        let sources: Vec<NetAddress> = (0..a.advertise_sources)
            .map(|k| NetAddress::ipv4([100 + (k / 256 % 100) as u8, k as u8, 7, 1], DEFAULT_PORT))
            .collect();
        advertise_sybils(&sybils, &mut node, &sources, 0, rng);
    }
    let mut onions = onion_peers.to_vec();
    onions.extend((0..a.onion_sybils).map(onion_sybil_addr));
    if !onions.is_empty() {
        onions.shuffle(rng);
        node.book.set_mode(TransportMode::OverTor);
        for addr in onions {
            let src = onion_addr(0x30, rng.gen_range(0..1 << 16));
            let ts = -((ages.sample_hours(rng) * 3600.0) as Timestamp);
            node.book.add_address(addr, src, ts, 0, rng);
        }
    }
    node.book.set_mode(cfg.clients.mode);
    node
}

/// Runs a validated scenario with `seed`. `trace` collects the event trace.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64, trace: bool) -> Result<RunOutput, ScenarioError> {
    cfg.validate()?;
    let seeds = SeedTree::new(seed);
    let consensus = build_consensus(cfg, &mut seeds.stream("consensus", 0))?;
    let tor = cfg.clients.mode == TransportMode::OverTor;
    let exits = if tor { Some(consensus.exit_selector(DEFAULT_PORT)?) } else { None };
    let t = &cfg.topology;
    let a = &cfg.attacker;

    let mut peers = HashMap::new();
    let mut servers = Vec::with_capacity(t.honest_servers);
    for i in 0..t.honest_servers {
        peers.insert(server_addr(i).host(), PeerKind::Server(i));
        let book = AddrBook::new(TransportMode::Direct, Salt::random(&mut seeds.stream("server", i as u64)));
        let mut s = PeerNode::new(
            server_addr(i),
            Role::HonestServer,
            book,
            cfg.toggles.dos_mode,
            &mut seeds.stream("server", i as u64),
        );
        s.ban_drops_live_connections = cfg.toggles.ban_drops_live_connections;
        servers.push(s);
    }
    for j in 0..t.unreachable_addrs {
        peers.insert(unreachable_addr(j).host(), PeerKind::Unreachable);
    }
    for k in 0..a.sybils {
        peers.insert(sybil_addr(k).host(), PeerKind::Sybil);
    }
    let onion_peers: Vec<NetAddress> = match cfg.census_path() {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ScenarioError::Fixture { path: path.display().to_string(), message: e.to_string() })?;
            parse_census(&text)?
        }
        None => (0..t.onion_peers).map(onion_peer_addr).collect(),
    };
    for (p, a) in onion_peers.iter().enumerate() {
        peers.insert(a.host(), PeerKind::OnionPeer(p));
    }
    for p in 0..a.onion_sybils {
        peers.insert(onion_sybil_addr(p).host(), PeerKind::OnionSybil);
    }

    let ages = TimestampDistribution::table_one();
    let mut clients = Vec::with_capacity(cfg.clients.count);
    for c in 0..cfg.clients.count {
        let mut rng = seeds.stream("book", c as u64);
        let mut node = client_book(cfg, &onion_peers, &mut rng, &ages);
        node.id = client_addr(c);
        let guards = if tor {
            Some(GuardSet::choose(&consensus, cfg.toggles.guards, &mut seeds.stream("guards", c as u64))?)
        } else {
            None
        };
        let saved = node.book.persist();
        clients.push(ClientState {
            ip: client_addr(c),
            node,
            saved,
            gen: 0,
            active: false,
            session: 0,
            session_start_ms: 0,
            connected_this_session: false,
            cookie_done: false,
            cookie_record: None,
            first_outcome: None,
            pending: None,
            guards,
            rng: seeds.stream("client", c as u64),
            metrics: ClientMetrics {
                client: c,
                mode: cfg.clients.mode,
                ttfc_s: None,
                outcome: Outcome::NeverConnected,
                session_ttfc_s: Vec::new(),
                attempts: 0,
                connections_honest: 0,
                connections_attacker: 0,
                cookie_survivors: Vec::new(),
            },
        });
    }

    let honest_exit_ips: Vec<NetAddress> = consensus
        .relays
        .iter()
        .filter(|r| {
            r.flags.exit && !r.is_attacker() && r.advertised_policy.allows(DEFAULT_PORT) && r.real_policy.allows(DEFAULT_PORT)
        })
        .map(|r| r.ip)
        .collect();
    let attacker_exit_ips = consensus.relays.iter().filter(|r| r.flags.exit && r.is_attacker()).map(|r| r.ip).collect();
    let seed_addrs: Vec<NetAddress> = (0..t.dns_seeds).map(server_addr).collect();
    let boot = Bootstrap {
        dns_seed_addrs: seed_addrs.clone(),
        oneshot_hosts: t.dns_seeds,
        fallback: (0..t.honest_servers.min(16)).map(server_addr).collect(),
    };
    let ring = hsdir_ring(&consensus);

    let mut w = World {
        cfg,
        exits,
        servers,
        peers,
        clients,
        attacker: AttackerAssets::new((0..a.sybils).map(sybil_addr).collect(), attacker_exit_ips, a.ip_budget),
        attacker_rng: seeds.stream("attacker", 0),
        honest_exit_ips,
        boot,
        links: BTreeMap::new(),
        next_conn: 0,
        ring,
        blackholed: vec![false; if a.blackhole && tor { onion_peers.len() } else { 0 }],
        onion_peers,
        queue: BinaryHeap::new(),
        seq: 0,
        now_ms: 0,
        events: 0,
        trace: trace.then(Vec::new),
        out: RunMetrics {
            scenario: cfg.name.clone(),
            seed,
            duration_s: cfg.duration_s,
            clients: Vec::new(),
            campaigns: Vec::new(),
            exhaustion: Vec::new(),
            cookie_events: Vec::new(),
            ban_coverage: Vec::new(),
            blackhole: Vec::new(),
            summary: Summary::default(),
        },
        consensus,
    };

    let analytic: Vec<f64> = w
        .clients
        .iter()
        .filter_map(|c| w.markov_params(&c.node.book))
        .filter_map(|p| expected_capture_time(&p).ok())
        .collect();

    if a.ban_campaign {
        w.schedule(0, Ev::Campaign);
    }
    if a.exhaustion {
        w.schedule(0, Ev::Exhaust);
    }
    if !w.blackholed.is_empty() {
        w.schedule(0, Ev::DayRoll(0));
    }
    if a.ban_campaign {
        w.schedule(COVERAGE_EVERY_MS, Ev::Coverage);
    }
    for (s, [start, end]) in cfg.sessions().into_iter().enumerate() {
        for c in 0..cfg.clients.count {
            w.schedule(start * 1000, Ev::SessionStart(c, s));
            w.schedule(end * 1000, Ev::SessionEnd(c));
        }
    }

    while let Some(Reverse((at, _, ev))) = w.queue.pop() {
        debug_assert!(at >= w.now_ms, "event out of order");
        w.now_ms = at;
        w.events += 1;
        w.dispatch(ev)?;
    }

    let mut summary = Summary { clients: w.clients.len(), events_processed: w.events, ..Default::default() };
    let mut ttfc = Vec::new();
    for cl in &mut w.clients {
        cl.metrics.outcome = cl.first_outcome.unwrap_or(Outcome::NeverConnected);
        match cl.metrics.outcome {
            Outcome::CapturedViaExit => summary.captured_via_exit += 1,
            Outcome::CapturedViaSybil => summary.captured_via_sybil += 1,
            Outcome::ConnectedHonest => summary.connected_honest += 1,
            Outcome::NeverConnected => summary.never_connected += 1,
        }
        let m = &cl.metrics;
        if m.connections_honest + m.connections_attacker > 0 {
            summary.connected += 1;
            if m.connections_honest == 0 {
                summary.fully_captured += 1;
            }
        }
        ttfc.extend(m.ttfc_s);
    }
    if !ttfc.is_empty() {
        summary.mean_ttfc_s = Some(ttfc.iter().sum::<f64>() / ttfc.len() as f64);
    }
    if !analytic.is_empty() {
        summary.analytic_ttfc_s = Some(analytic.iter().sum::<f64>() / analytic.len() as f64);
    }
    let mut out = w.out;
    let (clients, books) = w.clients.into_iter().map(|c| (c.metrics, c.saved)).unzip();
    out.clients = clients;
    out.summary = summary;
    let cookies_jsonl = w.attacker.registry.export_jsonl(&cfg.name);
    Ok(RunOutput { metrics: out, trace: w.trace.unwrap_or_default(), cookies_jsonl, books })
}

#[cfg(test)]
mod tests;
