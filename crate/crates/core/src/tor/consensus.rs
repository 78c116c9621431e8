//! Relay descriptors, exit policies and the consensus fixture format.
//!
//! Fixture grammar, one relay per line, fields separated by whitespace:
//!
//! ```text
//! line      = fingerprint ip weight flags advertised real operator
//! fingerprint = 40 hex digits
//! ip        = dotted IPv4 address of the relay
//! weight    = unsigned consensus bandwidth units
//! flags     = "-" | flag ("," flag)*        flag = Exit | Guard | HSDir
//! advertised = rule ("," rule)*
//! real      = "=" (same as advertised) | rule ("," rule)*
//! rule      = ("accept" | "reject") ":" ports
//! ports     = "*" | port | port "-" port
//! operator  = honest | attacker
//! ```
//!
//! Blank lines and text after `#` are ignored. Policies are first-match; a
//! port matching no rule is rejected. A relay flagged Exit must advertise at
//! least two of the ports 80, 443 and 6667.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TorError;
use crate::netaddr::NetAddress;

pub type Fingerprint = [u8; 20];

/// Ports of which an Exit-flagged relay must allow at least two.
pub const EXIT_FLAG_PORTS: [u16; 3] = [80, 443, 6667];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Honest,
    Attacker,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayFlags {
    pub exit: bool,
    pub guard: bool,
    pub hsdir: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyAction {
    Accept,
    Reject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub action: PolicyAction,
    pub lo: u16,
    pub hi: u16,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitPolicy {
    pub rules: Vec<PolicyRule>,
}

impl ExitPolicy {
    pub fn accept_all() -> Self {
        ExitPolicy { rules: vec![PolicyRule { action: PolicyAction::Accept, lo: 1, hi: u16::MAX }] }
    }

    pub fn reject_all() -> Self {
        ExitPolicy { rules: vec![PolicyRule { action: PolicyAction::Reject, lo: 1, hi: u16::MAX }] }
    }

    /// Accepts exactly the listed ports.
    pub fn accept_only(ports: &[u16]) -> Self {
        let mut rules: Vec<PolicyRule> = ports
            .iter()
            .map(|&p| PolicyRule { action: PolicyAction::Accept, lo: p, hi: p })
            .collect();
        rules.push(PolicyRule { action: PolicyAction::Reject, lo: 1, hi: u16::MAX });
        ExitPolicy { rules }
    }

    pub fn allows(&self, port: u16) -> bool {
        self.rules
            .iter()
            .find(|r| r.lo <= port && port <= r.hi)
            .is_some_and(|r| r.action == PolicyAction::Accept)
    }

    pub fn qualifies_for_exit_flag(&self) -> bool {
        EXIT_FLAG_PORTS.iter().filter(|&&p| self.allows(p)).count() >= 2
    }
}

impl fmt::Display for ExitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.rules.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            let action = match r.action {
                PolicyAction::Accept => "accept",
                PolicyAction::Reject => "reject",
            };
            match (r.lo, r.hi) {
                (1, u16::MAX) => write!(f, "{action}:*")?,
                (lo, hi) if lo == hi => write!(f, "{action}:{lo}")?,
                (lo, hi) => write!(f, "{action}:{lo}-{hi}")?,
            }
        }
        Ok(())
    }
}

impl FromStr for ExitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut rules = Vec::new();
        for part in s.split(',') {
            let (action, ports) = part
                .split_once(':')
                .ok_or_else(|| format!("rule `{part}` lacks `:`"))?;
            let action = match action {
                "accept" => PolicyAction::Accept,
                "reject" => PolicyAction::Reject,
                other => return Err(format!("unknown policy action `{other}`")),
            };
            let port = |p: &str| -> Result<u16, String> {
                match p.parse::<u16>() {
                    Ok(v) if v > 0 => Ok(v),
                    _ => Err(format!("bad port `{p}`")),
                }
            };
            let (lo, hi) = if ports == "*" {
                (1, u16::MAX)
            } else if let Some((a, b)) = ports.split_once('-') {
                (port(a)?, port(b)?)
            } else {
                let p = port(ports)?;
                (p, p)
            };
            if lo > hi {
                return Err(format!("empty port range `{ports}`"));
            }
            rules.push(PolicyRule { action, lo, hi });
        }
        Ok(ExitPolicy { rules })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayDescriptor {
    #[serde(with = "hex_fp")]
    pub fingerprint: Fingerprint,
    pub ip: NetAddress,
    pub weight: u64,
    pub flags: RelayFlags,
    /// What the descriptor claims; the only policy clients can see.
    pub advertised_policy: ExitPolicy,
    /// What the relay actually does.
    pub real_policy: ExitPolicy,
    pub operator: Operator,
}

mod hex_fp {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(fp: &[u8; 20], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(fp))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 20], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(s).map_err(serde::de::Error::custom)?;
        v.try_into().map_err(|_| serde::de::Error::custom("fingerprint must be 20 bytes"))
    }
}

impl RelayDescriptor {
    pub fn is_attacker(&self) -> bool {
        self.operator == Operator::Attacker
    }
}

/// An immutable relay list for one scenario.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Consensus {
    pub relays: Vec<RelayDescriptor>,
}

impl Consensus {
    pub fn new(relays: Vec<RelayDescriptor>) -> Result<Self, TorError> {
        for r in &relays {
            if r.flags.exit && !r.advertised_policy.qualifies_for_exit_flag() {
                return Err(TorError::ExitFlagPolicy(hex::encode(r.fingerprint)));
            }
        }
        Ok(Consensus { relays })
    }

    pub fn relay(&self, fp: &Fingerprint) -> Option<&RelayDescriptor> {
        self.relays.iter().find(|r| &r.fingerprint == fp)
    }

    /// Weighted sampler over exits advertising `port`.
    pub fn exit_selector(&self, port: u16) -> Result<ExitSelector, TorError> {
        let mut cumulative = Vec::new();
        let mut idx = Vec::new();
        let mut total = 0u64;
        for (i, r) in self.relays.iter().enumerate() {
            if r.flags.exit && r.weight > 0 && r.advertised_policy.allows(port) {
                total += r.weight;
                cumulative.push(total);
                idx.push(i);
            }
        }
        if total == 0 {
            return Err(TorError::NoExit(port));
        }
        Ok(ExitSelector { cumulative, idx, total })
    }

    /// Attacker share of the exit weight advertising `port`.
    pub fn attacker_exit_share(&self, port: u16) -> f64 {
        let mut total = 0u64;
        let mut attacker = 0u64;
        for r in &self.relays {
            if r.flags.exit && r.advertised_policy.allows(port) {
                total += r.weight;
                if r.is_attacker() {
                    attacker += r.weight;
                }
            }
        }
        if total == 0 {
            0.0
        } else {
            attacker as f64 / total as f64
        }
    }

    pub fn parse(text: &str) -> Result<Self, TorError> {
        let mut relays = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("");
            if body.trim().is_empty() {
                continue;
            }
            relays.push(parse_line(body, n + 1)?);
        }
        let mut seen = std::collections::HashSet::new();
        for r in &relays {
            if !seen.insert(r.fingerprint) {
                return Err(TorError::Fixture {
                    line: 0,
                    column: 0,
                    message: format!("duplicate fingerprint {}", hex::encode(r.fingerprint)),
                });
            }
        }
        Ok(Consensus { relays })
    }

    /// Renders the fixture format; `parse(to_fixture())` round-trips.
    pub fn to_fixture(&self) -> String {
        let mut out = String::new();
        for r in &self.relays {
            let mut flags = Vec::new();
            if r.flags.exit {
                flags.push("Exit");
            }
            if r.flags.guard {
                flags.push("Guard");
            }
            if r.flags.hsdir {
                flags.push("HSDir");
            }
            let flags = if flags.is_empty() { "-".to_string() } else { flags.join(",") };
            let real = if r.real_policy == r.advertised_policy {
                "=".to_string()
            } else {
                r.real_policy.to_string()
            };
            let host = r.ip.to_string();
            let host = host.rsplit_once(':').map_or(host.as_str(), |(h, _)| h).to_string();
            let op = match r.operator {
                Operator::Honest => "honest",
                Operator::Attacker => "attacker",
            };
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                hex::encode(r.fingerprint),
                host,
                r.weight,
                flags,
                r.advertised_policy,
                real,
                op
            ));
        }
        out
    }
}

fn parse_line(line: &str, lineno: usize) -> Result<RelayDescriptor, TorError> {
    // (column, token) pairs, columns 1-based
    let mut fields = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices().chain(std::iter::once((line.len(), ' '))) {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                fields.push((s + 1, &line[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    let err = |column: usize, message: String| TorError::Fixture { line: lineno, column, message };
    if fields.len() != 7 {
        let col = fields.get(7).map_or(line.trim_end().len() + 1, |f| f.0);
        return Err(err(col, format!("expected 7 fields, found {}", fields.len())));
    }
    let (c, fp) = fields[0];
    let fingerprint: Fingerprint = hex::decode(fp)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| err(c, format!("fingerprint must be 40 hex digits, got `{fp}`")))?;
    let (c, ip) = fields[1];
    let ip: Ipv4Addr = ip.parse().map_err(|_| err(c, format!("bad IPv4 address `{ip}`")))?;
    let (c, w) = fields[2];
    let weight: u64 = w.parse().map_err(|_| err(c, format!("bad weight `{w}`")))?;
    let (c, fl) = fields[3];
    let mut flags = RelayFlags::default();
    if fl != "-" {
        for f in fl.split(',') {
            match f {
                "Exit" => flags.exit = true,
                "Guard" => flags.guard = true,
                "HSDir" => flags.hsdir = true,
                other => return Err(err(c, format!("unknown flag `{other}`"))),
            }
        }
    }
    let (c, adv) = fields[4];
    let advertised_policy: ExitPolicy = adv.parse().map_err(|m| err(c, m))?;
    let (c, real) = fields[5];
    let real_policy = if real == "=" {
        advertised_policy.clone()
    } else {
        real.parse().map_err(|m| err(c, m))?
    };
    let (c, op) = fields[6];
    let operator = match op {
        "honest" => Operator::Honest,
        "attacker" => Operator::Attacker,
        other => return Err(err(c, format!("unknown operator `{other}`"))),
    };
    if flags.exit && !advertised_policy.qualifies_for_exit_flag() {
        return Err(err(
            fields[3].0,
            "Exit flag requires two of ports 80, 443, 6667 in the advertised policy".into(),
        ));
    }
    Ok(RelayDescriptor {
        fingerprint,
        ip: NetAddress::ipv4(ip.octets(), 9001),
        weight,
        flags,
        advertised_policy,
        real_policy,
        operator,
    })
}

/// Bandwidth-weighted exit sampling for one destination port.
#[derive(Clone, Debug)]
pub struct ExitSelector {
    cumulative: Vec<u64>,
    idx: Vec<usize>,
    total: u64,
}

impl ExitSelector {
    /// Index into `Consensus::relays`.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let x = rng.gen_range(0..self.total);
        let k = self.cumulative.partition_point(|&c| c <= x);
        self.idx[k]
    }

    pub fn total_weight(&self) -> u64 {
        self.total
    }
}

/// One-shot convenience over [`Consensus::exit_selector`].
pub fn pick_exit<'a, R: Rng + ?Sized>(
    consensus: &'a Consensus,
    port: u16,
    rng: &mut R,
) -> Result<&'a RelayDescriptor, TorError> {
    let sel = consensus.exit_selector(port)?;
    Ok(&consensus.relays[sel.pick(rng)])
}

/// A client's fixed entry guards, chosen once by weight without replacement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardSet {
    pub guards: Vec<Fingerprint>,
}

impl GuardSet {
    pub fn choose<R: Rng + ?Sized>(
        consensus: &Consensus,
        count: usize,
        rng: &mut R,
    ) -> Result<GuardSet, TorError> {
        let mut pool: Vec<&RelayDescriptor> =
            consensus.relays.iter().filter(|r| r.flags.guard && r.weight > 0).collect();
        if pool.len() < count {
            return Err(TorError::NotEnoughGuards { need: count, have: pool.len() });
        }
        let mut guards = Vec::with_capacity(count);
        for _ in 0..count {
            let total: u64 = pool.iter().map(|r| r.weight).sum();
            let mut x = rng.gen_range(0..total);
            let k = pool
                .iter()
                .position(|r| {
                    if x < r.weight {
                        true
                    } else {
                        x -= r.weight;
                        false
                    }
                })
                .unwrap();
            guards.push(pool.swap_remove(k).fingerprint);
        }
        Ok(GuardSet { guards })
    }

    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> Fingerprint {
        self.guards[rng.gen_range(0..self.guards.len())]
    }
}
