//! The attacker: ban campaigns through honest exits, Sybil advertisement,
//! address cookies, slot exhaustion, port poisoning and HSDir black-holing.

mod blackhole;
mod cookie;

pub use blackhole::{blackhole_service, ring_with, BlackholeError, BlackholeReport};
pub use cookie::{
    check_cookie, fake_onion, fake_ipv4, is_fake, set_cookie, CookieError, CookieKind, CookieMatch, CookieRecord,
    CookieRegistry, LinkEvent, DEFAULT_MATCH_THRESHOLD, MIN_UNRELAYED_ADDRS,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::addrbook::Timestamp;
use crate::bitcoin::{AcceptOutcome, ConnId, Effect, MessageKind, PeerNode, Role, WireMessage, MAX_INCOMING};
use crate::netaddr::NetAddress;

/// The campaign is re-run this often so bans never lapse.
pub const BAN_REFRESH_SECS: Timestamp = 23 * 3600;

/// First address of the pool the attacker rents connection IPs from
/// (100.64.0.0/10).
const RENTED_IP_BASE: u32 = 0x6440_0000;
const RENTED_IP_POOL: u32 = 1 << 22;

/// Everything the attacker owns. Connection handles she opens are numbered
/// from `2^62` upward so they never clash with the simulator's own.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AttackerAssets {
    pub sybil_peers: Vec<NetAddress>,
    pub exit_ips: Vec<NetAddress>,
    pub registry: CookieRegistry,
    /// Spare IPs for exhaustion connections.
    pub ip_budget: usize,
    ips_used: usize,
    next_conn: u64,
}

impl AttackerAssets {
    pub fn new(sybil_peers: Vec<NetAddress>, exit_ips: Vec<NetAddress>, ip_budget: usize) -> Self {
        AttackerAssets { sybil_peers, exit_ips, ip_budget, ..Default::default() }
    }

    pub fn ips_used(&self) -> usize {
        self.ips_used
    }

    fn conn(&mut self) -> ConnId {
        self.next_conn += 1;
        ConnId((1 << 62) + self.next_conn)
    }

    /// A rented IP not used before, or `None` when the budget is spent.
    fn rent_ip(&mut self) -> Option<NetAddress> {
        if self.ips_used >= self.ip_budget || self.ips_used as u32 >= RENTED_IP_POOL {
            return None;
        }
        let ip = (RENTED_IP_BASE + self.ips_used as u32).to_be_bytes();
        self.ips_used += 1;
        Some(NetAddress::ipv4(ip, 8333))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub at: Timestamp,
    pub pairs_attempted: usize,
    pub pairs_banned: usize,
    /// Unreachable servers cannot be reached and are skipped.
    pub servers_skipped: usize,
    /// Servers that took the penalty but do not ban (coin flip landed off).
    pub servers_unprotected: usize,
    /// Pairs whose delivery found every slot taken.
    pub pairs_blocked: usize,
    /// Earliest expiry among the bans now in place. A still-banned exit
    /// cannot carry a fresh penalty, so the next round must run then.
    pub next_due: Option<Timestamp>,
    /// Live connections the new bans tore down, by server index.
    #[serde(skip)]
    pub dropped: Vec<(usize, ConnId)>,
}

impl CampaignReport {
    fn note_expiry(&mut self, until: Option<Timestamp>) {
        if let Some(t) = until {
            self.next_due = Some(self.next_due.map_or(t, |d| d.min(t)));
        }
    }
}

/// Sends one malformed transaction to every honest server through every
/// honest exit, so each server bans each exit's IP.
pub fn ban_campaign<R: Rng + ?Sized>(
    assets: &mut AttackerAssets,
    servers: &mut [PeerNode],
    honest_exit_ips: &[NetAddress],
    now: Timestamp,
    rng: &mut R,
) -> CampaignReport {
    let mut report = CampaignReport { at: now, ..Default::default() };
    for (si, server) in servers.iter_mut().enumerate() {
        if server.role != Role::HonestServer {
            report.servers_skipped += usize::from(server.role == Role::Unreachable);
            continue;
        }
        if !server.dos_active() {
            report.servers_unprotected += 1;
        }
        for &exit in honest_exit_ips {
            report.pairs_attempted += 1;
            let conn = assets.conn();
            match server.accept_incoming(exit, conn, now) {
                AcceptOutcome::RejectedBanned => {
                    report.pairs_banned += 1;
                    report.note_expiry(server.ban_expiry(&exit));
                    continue;
                }
                AcceptOutcome::RejectedFull => {
                    report.pairs_blocked += 1;
                    continue;
                }
                AcceptOutcome::Accepted => {}
            }
            let fx = server.handle_message(&WireMessage::new(MessageKind::MalformedTx, exit), now, rng);
            for e in &fx {
                match e {
                    Effect::Banned { until, .. } => {
                        report.pairs_banned += 1;
                        report.note_expiry(Some(*until));
                    }
                    Effect::Disconnected { conn: c, .. } if *c != conn => report.dropped.push((si, *c)),
                    _ => {}
                }
            }
            server.remove_link(conn);
        }
    }
    report
}

/// Pushes the Sybil addresses to `client` in ADDR messages of at most ten
/// entries, one message per relay identity in `sources`. Each distinct source
/// group can put an address into another new bucket, up to four. Returns the
/// number of bucket references added.
pub fn advertise_sybils<R: Rng + ?Sized>(
    sybils: &[NetAddress],
    client: &mut PeerNode,
    sources: &[NetAddress],
    now: Timestamp,
    rng: &mut R,
) -> usize {
    let mut gained = 0;
    for &src in sources {
        for chunk in sybils.chunks(crate::bitcoin::MAX_RELAYED_ADDRS) {
            let msg = WireMessage::new(MessageKind::Addr(chunk.iter().map(|a| (*a, now)).collect()), src);
            for e in client.handle_message(&msg, now, rng) {
                if let Effect::Stored { inserted, referenced, .. } = e {
                    gained += inserted + referenced;
                }
            }
        }
    }
    gained
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExhaustionReport {
    pub at: Timestamp,
    pub connections_added: usize,
    pub servers_full: usize,
    /// Slots left free because the IP budget ran out.
    pub shortfall: usize,
}

/// Fills every free incoming slot of the honest servers with attacker
/// connections, one rented IP per connection.
pub fn exhaust_connections(assets: &mut AttackerAssets, servers: &mut [PeerNode], now: Timestamp) -> ExhaustionReport {
    let mut report = ExhaustionReport { at: now, ..Default::default() };
    for server in servers.iter_mut().filter(|s| s.role == Role::HonestServer) {
        while server.free_incoming_slots() > 0 {
            let Some(ip) = assets.rent_ip() else {
                report.shortfall += server.free_incoming_slots();
                break;
            };
            let conn = assets.conn();
            if server.accept_incoming(ip, conn, now) == AcceptOutcome::Accepted {
                report.connections_added += 1;
            }
        }
        if server.incoming().len() == MAX_INCOMING {
            report.servers_full += 1;
        }
    }
    report
}

/// Floods `client` with the legitimate servers' IPs paired with a wrong port.
/// Messages carry at least eleven entries so the client keeps them to itself.
/// Returns how many entries were newly stored with the wrong port.
pub fn port_poison<R: Rng + ?Sized>(
    client: &mut PeerNode,
    legit_servers: &[NetAddress],
    wrong_port: u16,
    attacker_ip: NetAddress,
    now: Timestamp,
    rng: &mut R,
) -> usize {
    let mut batch: Vec<(NetAddress, Timestamp)> =
        legit_servers.iter().map(|a| (a.with_port(wrong_port), now)).collect();
    let mut pad = 0u32;
    while !batch.is_empty() && batch.len() < MIN_UNRELAYED_ADDRS {
        batch.push((fake_ipv4(u64::from(pad) + (1 << 27)), now));
        pad += 1;
    }
    let msg = WireMessage::new(MessageKind::Addr(batch), attacker_ip);
    let before: Vec<bool> = legit_servers.iter().map(|a| client.book.contains(a)).collect();
    client.handle_message(&msg, now, rng);
    legit_servers
        .iter()
        .zip(before)
        .filter(|(a, known)| !known && client.book.get(a).is_some_and(|e| e.address.port() == wrong_port))
        .count()
}
