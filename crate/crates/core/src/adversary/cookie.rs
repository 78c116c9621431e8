//! Address cookies: a unique set of fake addresses planted in a client's
//! book and read back later with GETADDR.
//!
//! Fake IPv4 addresses come from 240.0.0.0/4 and fake onion identities start
//! with byte `0xFF`. Scenario peers are never drawn from either range, so a
//! recovered fake address can only have come from a cookie.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrbook::{Timestamp, TransportMode};
use crate::bitcoin::{Effect, MessageKind, PeerNode, WireMessage, MAX_RELAYED_ADDRS};
use crate::netaddr::{AddrKind, HostKey, NetAddress, DEFAULT_PORT};

/// Smallest ADDR message a client keeps to itself.
pub const MIN_UNRELAYED_ADDRS: usize = MAX_RELAYED_ADDRS + 1;
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.2;

pub fn fake_ipv4(i: u64) -> NetAddress {
    assert!(i < 1 << 28, "fake IPv4 range exhausted");
    let b = (i as u32).to_be_bytes();
    NetAddress::ipv4([0xF0 | b[0], b[1], b[2], b[3]], DEFAULT_PORT)
}

pub fn fake_onion(i: u64) -> NetAddress {
    let mut id = [0xFF; 10];
    id[2..].copy_from_slice(&i.to_be_bytes());
    NetAddress::onioncat(id, DEFAULT_PORT)
}

pub fn is_fake(a: &NetAddress) -> bool {
    match a.kind() {
        AddrKind::Ipv4 => a.host_bytes()[0] >= 0xF0,
        AddrKind::OnionCat => a.onion_id().is_ok_and(|id| id[0] == 0xFF),
        AddrKind::Ipv6 => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CookieKind {
    IPv4Cookie,
    OnionCookie,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CookieRecord {
    pub id: usize,
    pub fingerprint: Vec<NetAddress>,
    /// Bound once the cookie is seen on a direct connection.
    pub client_ip: Option<NetAddress>,
    pub kind: CookieKind,
    pub created: Timestamp,
    /// False when the client went away before the ADDR was delivered.
    pub confirmed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub at: Timestamp,
    pub record: usize,
    pub fraction: f64,
    pub client_ip: Option<NetAddress>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CookieRegistry {
    pub records: Vec<CookieRecord>,
    pub links: Vec<LinkEvent>,
    next_fake: u64,
}

impl CookieRegistry {
    fn allocate(&mut self, n: usize, kind: CookieKind) -> Vec<NetAddress> {
        let base = self.next_fake;
        self.next_fake += n as u64;
        (base..base + n as u64)
            .map(|i| match kind {
                CookieKind::IPv4Cookie => fake_ipv4(i),
                CookieKind::OnionCookie => fake_onion(i),
            })
            .collect()
    }

    /// One JSON object per record, then one per link event.
    pub fn export_jsonl(&self, scenario: &str) -> String {
        let mut out = String::new();
        for r in &self.records {
            let v = serde_json::json!({
                "scenario": scenario,
                "type": "cookie",
                "record": r.id,
                "kind": r.kind,
                "size": r.fingerprint.len(),
                "created_s": r.created,
                "client_ip": r.client_ip.map(|a| a.to_string()),
                "confirmed": r.confirmed,
            });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        for l in &self.links {
            let v = serde_json::json!({
                "scenario": scenario,
                "type": "link",
                "record": l.record,
                "at_s": l.at,
                "fraction": l.fraction,
                "client_ip": l.client_ip.map(|a| a.to_string()),
            });
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum CookieError {
    #[error("no cookie matches")]
    NoMatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CookieMatch {
    pub record: usize,
    pub fraction: f64,
    pub linked: bool,
    /// Distinct fake addresses seen in the replies.
    pub recovered: usize,
}

fn probe<R: Rng + ?Sized>(
    client: &mut PeerNode,
    attacker_ip: NetAddress,
    probes: u32,
    now: Timestamp,
    rng: &mut R,
) -> BTreeSet<HostKey> {
    let mut seen = BTreeSet::new();
    for _ in 0..probes {
        for e in client.handle_message(&WireMessage::new(MessageKind::GetAddr, attacker_ip), now, rng) {
            if let Effect::Reply { msg: WireMessage { kind: MessageKind::Addr(list), .. }, .. } = e {
                seen.extend(list.iter().filter(|(a, _)| is_fake(a)).map(|(a, _)| a.host()));
            }
        }
    }
    seen
}

/// Reads the client's cookie with `probes` GETADDR requests and matches the
/// recovered fakes against the registry. A fraction at or above `threshold`
/// links the session to the record; a direct session also binds the IP.
#[allow(clippy::too_many_arguments)]
pub fn check_cookie<R: Rng + ?Sized>(
    registry: &mut CookieRegistry,
    client: &mut PeerNode,
    attacker_ip: NetAddress,
    probes: u32,
    threshold: f64,
    client_ip: Option<NetAddress>,
    now: Timestamp,
    rng: &mut R,
) -> Result<CookieMatch, CookieError> {
    if registry.records.is_empty() {
        return Err(CookieError::NoMatch);
    }
    let seen = probe(client, attacker_ip, probes, now, rng);
    let mut best: Option<(usize, f64)> = None;
    for r in &registry.records {
        let hits = r.fingerprint.iter().filter(|a| seen.contains(&a.host())).count();
        let frac = hits as f64 / r.fingerprint.len().max(1) as f64;
        if hits > 0 && best.map_or(true, |(_, f)| frac > f) {
            best = Some((r.id, frac));
        }
    }
    let (id, fraction) = best.ok_or(CookieError::NoMatch)?;
    let linked = fraction >= threshold;
    if linked {
        let rec = &mut registry.records[id];
        if rec.client_ip.is_none() {
            rec.client_ip = client_ip;
        }
        registry.links.push(LinkEvent { at: now, record: id, fraction, client_ip });
    }
    Ok(CookieMatch { record: id, fraction, linked, recovered: seen.len() })
}

/// Plants a cookie of `n_fake` addresses unless the client already carries
/// one. The kind follows the client's transport: onion fakes over Tor, IPv4
/// fakes on a direct connection. Fewer than eleven fakes are padded with
/// `padding` so the message is not relayed.
#[allow(clippy::too_many_arguments)]
pub fn set_cookie<R: Rng + ?Sized>(
    registry: &mut CookieRegistry,
    client: &mut PeerNode,
    attacker_ip: NetAddress,
    n_fake: usize,
    padding: &[NetAddress],
    client_ip: Option<NetAddress>,
    now: Timestamp,
    rng: &mut R,
) -> CookieRecord {
    if let Ok(m) = check_cookie(registry, client, attacker_ip, 8, DEFAULT_MATCH_THRESHOLD, client_ip, now, rng) {
        if m.linked {
            return registry.records[m.record].clone();
        }
    }
    let kind = match client.book.mode() {
        TransportMode::OverTor => CookieKind::OnionCookie,
        TransportMode::Direct => CookieKind::IPv4Cookie,
    };
    let fingerprint = registry.allocate(n_fake, kind);
    let confirmed = client.is_connected();
    if confirmed {
        let mut batch: Vec<(NetAddress, Timestamp)> = fingerprint.iter().map(|a| (*a, now)).collect();
        batch.extend(
            padding
                .iter()
                .take(MIN_UNRELAYED_ADDRS.saturating_sub(batch.len()))
                .map(|a| (*a, now)),
        );
        client.handle_message(&WireMessage::new(MessageKind::Addr(batch), attacker_ip), now, rng);
    }
    let rec = CookieRecord {
        id: registry.records.len(),
        fingerprint,
        client_ip: if kind == CookieKind::IPv4Cookie { client_ip } else { None },
        kind,
        created: now,
        confirmed,
    };
    registry.records.push(rec.clone());
    rec
}
