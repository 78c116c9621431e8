//! Simulated Bitcoin peers: connection slots, message handling, the
//! penalty/ban mechanism and outgoing-connection management.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::addrbook::{AddOutcome, AddrBook, AddrBookError, Timestamp, TransportMode};
use crate::netaddr::{HostKey, NetAddress};

pub const MAX_OUTGOING: usize = 8;
pub const MAX_INCOMING: usize = 117;
pub const BAN_THRESHOLD: u32 = 100;
pub const BAN_SECS: Timestamp = 86_400;
/// Penalty of the malformed 60-byte coinbase transaction.
pub const MALFORMED_TX_PENALTY: u32 = 100;
/// ADDR messages with more addresses than this are not relayed.
pub const MAX_RELAYED_ADDRS: usize = 10;
/// Seconds without any usable address before the fallback list is used.
pub const SEED_FALLBACK_SECS: Timestamp = 60;
/// Redraws when the book keeps offering peers we are already connected to.
const SELECT_RETRIES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HonestServer,
    HonestClient,
    AttackerServer,
    Unreachable,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DosMode {
    #[default]
    AlwaysOn,
    /// Protection on or off with probability 1/2, drawn once per node.
    CoinFlip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConnId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Addr(Vec<(NetAddress, Timestamp)>),
    GetAddr,
    MalformedTx,
    Benign,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub kind: MessageKind,
    /// The sender as the receiver sees it; an exit's address when the
    /// message came through Tor.
    pub sender_ip: NetAddress,
}

impl WireMessage {
    pub fn new(kind: MessageKind, sender_ip: NetAddress) -> Self {
        WireMessage { kind, sender_ip }
    }

    pub fn penalty(&self) -> u32 {
        match self.kind {
            MessageKind::MalformedTx => MALFORMED_TX_PENALTY,
            _ => 0,
        }
    }
}

/// Whether an ADDR message is passed on to neighbours.
pub fn addr_forwarding_decision(addrs: &[(NetAddress, Timestamp)]) -> bool {
    addrs.len() <= MAX_RELAYED_ADDRS
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptOutcome {
    Accepted,
    RejectedFull,
    RejectedBanned,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Effect {
    Banned { ip: NetAddress, until: Timestamp },
    Disconnected { conn: ConnId, remote: NetAddress },
    Reply { to: NetAddress, msg: WireMessage },
    Relay(Vec<(NetAddress, Timestamp)>),
    Stored { inserted: usize, referenced: usize, rejected: usize, known: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub conn: ConnId,
    pub remote: NetAddress,
}

/// Where a client's addresses come from when its book cannot help.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bootstrap {
    /// What the hard-coded DNS seed hostnames resolve to (direct mode).
    pub dns_seed_addrs: Vec<NetAddress>,
    /// Number of seed hostnames a Tor client may use as oneshots.
    pub oneshot_hosts: usize,
    /// The hard-coded fallback list used after 60 s without addresses.
    pub fallback: Vec<NetAddress>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DialKind {
    /// Drawn from the address book.
    Book,
    /// A oneshot to seed hostname `n`: fetch addresses, then disconnect.
    Oneshot(usize),
    /// Entry of the hard-coded fallback list.
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialAttempt {
    pub target: NetAddress,
    pub kind: DialKind,
}

/// What `maintain_outgoing` decided.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DialPlan {
    Dial(DialAttempt),
    /// Nothing to do: enough connections or an attempt in flight.
    Idle,
    /// No usable address yet; try again at this time.
    WaitUntil(Timestamp),
}

#[derive(Clone, Debug, Default)]
struct Dialer {
    in_flight: Option<DialAttempt>,
    attempts: u64,
    session_start: Timestamp,
    oneshots_used: usize,
    fallback_cursor: usize,
}

#[derive(Clone, Debug)]
pub struct PeerNode {
    pub id: NetAddress,
    pub role: Role,
    pub book: AddrBook,
    outgoing: Vec<Link>,
    incoming: Vec<Link>,
    penalty: BTreeMap<HostKey, u32>,
    bans: BTreeMap<HostKey, Timestamp>,
    dos_active: bool,
    pub ban_drops_live_connections: bool,
    dialer: Dialer,
}

impl PeerNode {
    pub fn new<R: Rng + ?Sized>(id: NetAddress, role: Role, book: AddrBook, dos: DosMode, rng: &mut R) -> Self {
        let dos_active = match dos {
            DosMode::AlwaysOn => true,
            DosMode::CoinFlip => rng.gen_bool(0.5),
        };
        PeerNode {
            id,
            role,
            book,
            outgoing: Vec::new(),
            incoming: Vec::new(),
            penalty: BTreeMap::new(),
            bans: BTreeMap::new(),
            dos_active,
            ban_drops_live_connections: true,
            dialer: Dialer::default(),
        }
    }

    pub fn dos_active(&self) -> bool {
        self.dos_active
    }

    pub fn outgoing(&self) -> &[Link] {
        &self.outgoing
    }

    pub fn incoming(&self) -> &[Link] {
        &self.incoming
    }

    pub fn free_incoming_slots(&self) -> usize {
        MAX_INCOMING - self.incoming.len()
    }

    pub fn penalty_of(&self, ip: &NetAddress) -> u32 {
        self.penalty.get(&ip.host()).copied().unwrap_or(0)
    }

    pub fn ban_expiry(&self, ip: &NetAddress) -> Option<Timestamp> {
        self.bans.get(&ip.host()).copied()
    }

    pub fn is_banned(&self, ip: &NetAddress, now: Timestamp) -> bool {
        self.ban_expiry(ip).is_some_and(|until| until > now)
    }

    /// Number of live bans.
    pub fn ban_count(&self, now: Timestamp) -> usize {
        self.bans.values().filter(|&&u| u > now).count()
    }

    pub fn is_connected(&self) -> bool {
        !self.outgoing.is_empty()
    }

    pub fn is_connected_to(&self, remote: &NetAddress) -> bool {
        self.outgoing.iter().any(|l| l.remote.same_host(remote))
    }

    fn collect_expired_bans(&mut self, now: Timestamp) {
        self.bans.retain(|_, until| *until > now);
    }

    /// Admission of an incoming connection.
    pub fn accept_incoming(&mut self, remote: NetAddress, conn: ConnId, now: Timestamp) -> AcceptOutcome {
        self.collect_expired_bans(now);
        if self.is_banned(&remote, now) {
            return AcceptOutcome::RejectedBanned;
        }
        if self.incoming.len() >= MAX_INCOMING {
            return AcceptOutcome::RejectedFull;
        }
        self.incoming.push(Link { conn, remote });
        AcceptOutcome::Accepted
    }

    /// Registers an established outgoing connection. Refuses a second one to
    /// the same host or a ninth one.
    pub fn add_outgoing(&mut self, conn: ConnId, remote: NetAddress) -> bool {
        if self.outgoing.len() >= MAX_OUTGOING || self.is_connected_to(&remote) {
            return false;
        }
        self.outgoing.push(Link { conn, remote });
        true
    }

    /// Forgets a connection in either direction.
    pub fn remove_link(&mut self, conn: ConnId) -> Option<Link> {
        for list in [&mut self.outgoing, &mut self.incoming] {
            if let Some(i) = list.iter().position(|l| l.conn == conn) {
                return Some(list.remove(i));
            }
        }
        None
    }

    /// Drops every connection, e.g. at session end.
    pub fn drop_all(&mut self) -> Vec<Link> {
        let mut all = std::mem::take(&mut self.outgoing);
        all.append(&mut self.incoming);
        self.dialer.in_flight = None;
        all
    }

    pub fn handle_message<R: Rng + ?Sized>(
        &mut self,
        msg: &WireMessage,
        now: Timestamp,
        rng: &mut R,
    ) -> Vec<Effect> {
        let mut effects = Vec::new();
        match &msg.kind {
            MessageKind::MalformedTx => {
                let score = self.penalty.entry(msg.sender_ip.host()).or_insert(0);
                *score = score.saturating_add(msg.penalty());
                if *score >= BAN_THRESHOLD && self.dos_active {
                    let until = now + BAN_SECS;
                    let slot = self.bans.entry(msg.sender_ip.host()).or_insert(until);
                    *slot = (*slot).max(until);
                    effects.push(Effect::Banned { ip: msg.sender_ip, until: *slot });
                    if self.ban_drops_live_connections {
                        let sender = msg.sender_ip;
                        for list in [&mut self.outgoing, &mut self.incoming] {
                            list.retain(|l| {
                                if l.remote.same_host(&sender) {
                                    effects.push(Effect::Disconnected { conn: l.conn, remote: l.remote });
                                    false
                                } else {
                                    true
                                }
                            });
                        }
                    }
                }
            }
            MessageKind::Addr(addrs) => {
                let gossip = addr_forwarding_decision(addrs);
                let (mut inserted, mut referenced, mut rejected, mut known) = (0, 0, 0, 0);
                for &(addr, ts) in addrs {
                    match self.book.add_address(addr, msg.sender_ip, ts, now, rng) {
                        AddOutcome::RejectedTransport => rejected += 1,
                        AddOutcome::AlreadyKnown => {
                            known += 1;
                            if gossip
                                && self
                                    .book
                                    .add_reference(&addr, &msg.sender_ip, now, rng)
                                    .is_some_and(|o| o.stored())
                            {
                                referenced += 1;
                            }
                        }
                        _ => inserted += 1,
                    }
                }
                effects.push(Effect::Stored { inserted, referenced, rejected, known });
                if gossip && !addrs.is_empty() {
                    effects.push(Effect::Relay(addrs.clone()));
                }
            }
            MessageKind::GetAddr => {
                let reply = self.book.getaddr_response(rng);
                effects.push(Effect::Reply {
                    to: msg.sender_ip,
                    msg: WireMessage::new(MessageKind::Addr(reply), self.id),
                });
            }
            MessageKind::Benign => {}
        }
        effects
    }

    /// Starts a client session: connections are gone, oneshots and the
    /// fallback timer reset. In direct mode the DNS seeds are resolved into
    /// the book.
    pub fn bootstrap<R: Rng + ?Sized>(&mut self, boot: &Bootstrap, now: Timestamp, rng: &mut R) {
        self.drop_all();
        self.dialer = Dialer { session_start: now, ..Dialer::default() };
        if self.book.mode() == TransportMode::Direct {
            for &a in &boot.dns_seed_addrs {
                self.book.add_address(a, a, now, now, rng);
            }
        }
    }

    /// Next outgoing attempt. Dials one peer at a time; in Tor mode every
    /// second attempt goes to an unused oneshot hostname.
    pub fn maintain_outgoing<R: Rng + ?Sized>(
        &mut self,
        boot: &Bootstrap,
        now: Timestamp,
        rng: &mut R,
    ) -> DialPlan {
        if self.dialer.in_flight.is_some() || self.outgoing.len() >= MAX_OUTGOING {
            return DialPlan::Idle;
        }
        let oneshot_turn = self.book.mode() == TransportMode::OverTor && self.dialer.attempts % 2 == 1;
        let attempt = if oneshot_turn && self.dialer.oneshots_used < boot.oneshot_hosts {
            let n = self.dialer.oneshots_used;
            self.dialer.oneshots_used += 1;
            // the hostname stands in for whatever server it resolves to
            DialAttempt { target: NetAddress::ipv4([0, 0, 0, n as u8], 8333), kind: DialKind::Oneshot(n) }
        } else {
            match self.pick_from_book(rng) {
                Some(target) => DialAttempt { target, kind: DialKind::Book },
                None => {
                    let ready_at = self.dialer.session_start + SEED_FALLBACK_SECS;
                    if now < ready_at {
                        return DialPlan::WaitUntil(ready_at);
                    }
                    let fresh: Vec<&NetAddress> =
                        boot.fallback.iter().filter(|a| !self.is_connected_to(a)).collect();
                    if fresh.is_empty() {
                        return DialPlan::Idle;
                    }
                    let target = *fresh[self.dialer.fallback_cursor % fresh.len()];
                    self.dialer.fallback_cursor += 1;
                    DialAttempt { target, kind: DialKind::Fallback }
                }
            }
        };
        self.dialer.attempts += 1;
        self.dialer.in_flight = Some(attempt);
        DialPlan::Dial(attempt)
    }

    fn pick_from_book<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<NetAddress> {
        for _ in 0..SELECT_RETRIES {
            match self.book.select_outgoing(self.outgoing.len(), rng) {
                Ok(a) if !self.is_connected_to(&a) => return Some(a),
                Ok(_) => continue,
                Err(AddrBookError::NoAddress) => return None,
            }
        }
        None
    }

    pub fn in_flight(&self) -> Option<DialAttempt> {
        self.dialer.in_flight
    }

    /// Concludes the in-flight attempt. `established` carries the connection
    /// when a lasting outgoing link resulted.
    pub fn attempt_finished<R: Rng + ?Sized>(
        &mut self,
        established: Option<ConnId>,
        now: Timestamp,
        rng: &mut R,
    ) -> Option<DialAttempt> {
        let attempt = self.dialer.in_flight.take()?;
        match (attempt.kind, established) {
            (DialKind::Oneshot(_), _) => {}
            (_, Some(conn)) => {
                if self.add_outgoing(conn, attempt.target) {
                    self.book.mark_tried(&attempt.target, now, rng);
                }
            }
            (_, None) => self.book.mark_failed(&attempt.target, now),
        }
        Some(attempt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrbook::Salt;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn ip(a: u8, b: u8) -> NetAddress {
        NetAddress::ipv4([20, a, b, 1], 8333)
    }

    fn server() -> PeerNode {
        let book = AddrBook::new(TransportMode::Direct, Salt([1; 16]));
        PeerNode::new(ip(0, 1), Role::HonestServer, book, DosMode::AlwaysOn, &mut seeded(0))
    }

    fn client(mode: TransportMode) -> PeerNode {
        let book = AddrBook::new(mode, Salt([2; 16]));
        PeerNode::new(ip(0, 2), Role::HonestClient, book, DosMode::AlwaysOn, &mut seeded(0))
    }

    fn malformed(from: NetAddress) -> WireMessage {
        WireMessage::new(MessageKind::MalformedTx, from)
    }

    #[test]
    fn slot_limit_and_ban_rejection() {
        let mut s = server();
        for i in 0..MAX_INCOMING {
            assert_eq!(s.accept_incoming(ip(1, i as u8), ConnId(i as u64), 0), AcceptOutcome::Accepted);
        }
        assert_eq!(s.accept_incoming(ip(2, 0), ConnId(999), 0), AcceptOutcome::RejectedFull);
        let mut s = server();
        let exit = ip(9, 9);
        s.accept_incoming(exit, ConnId(1), 0);
        s.handle_message(&malformed(exit), 0, &mut seeded(1));
        assert_eq!(s.accept_incoming(exit, ConnId(2), 3600), AcceptOutcome::RejectedBanned);
        assert_eq!(s.accept_incoming(ip(9, 8), ConnId(3), 3600), AcceptOutcome::Accepted);
    }

    #[test]
    fn malformed_tx_bans_for_a_day_and_drops_link() {
        let mut s = server();
        let exit = ip(9, 9);
        s.accept_incoming(exit, ConnId(1), 0);
        s.accept_incoming(exit, ConnId(2), 0);
        let fx = s.handle_message(&malformed(exit), 500, &mut seeded(1));
        assert_eq!(fx[0], Effect::Banned { ip: exit, until: 500 + 86_400 });
        assert_eq!(fx.len(), 3);
        assert!(s.incoming().is_empty());
        assert_eq!(s.penalty_of(&exit), 100);
        assert_eq!(s.ban_expiry(&exit.with_port(1)), Some(86_900));
    }

    #[test]
    fn ban_can_leave_live_links() {
        let mut s = server();
        s.ban_drops_live_connections = false;
        let exit = ip(9, 9);
        s.accept_incoming(exit, ConnId(1), 0);
        let fx = s.handle_message(&malformed(exit), 0, &mut seeded(1));
        assert_eq!(fx.len(), 1);
        assert_eq!(s.incoming().len(), 1);
    }

    #[test]
    fn benign_traffic_never_bans() {
        let mut s = server();
        let peer = ip(3, 3);
        for _ in 0..50 {
            assert!(s.handle_message(&WireMessage::new(MessageKind::Benign, peer), 0, &mut seeded(1)).is_empty());
        }
        assert_eq!(s.penalty_of(&peer), 0);
    }

    #[test]
    fn coin_flip_off_never_bans() {
        let mut rng = seeded(3);
        let mut offs = 0;
        for i in 0..100 {
            let book = AddrBook::new(TransportMode::Direct, Salt([1; 16]));
            let mut s = PeerNode::new(ip(0, i), Role::HonestServer, book, DosMode::CoinFlip, &mut rng);
            let exit = ip(9, 9);
            s.accept_incoming(exit, ConnId(1), 0);
            for _ in 0..3 {
                s.handle_message(&malformed(exit), 0, &mut rng);
            }
            if !s.dos_active() {
                offs += 1;
                assert_eq!(s.ban_count(0), 0);
                assert_eq!(s.penalty_of(&exit), 300);
                assert_eq!(s.accept_incoming(exit, ConnId(2), 1), AcceptOutcome::Accepted);
            } else {
                assert_eq!(s.ban_count(0), 1);
            }
        }
        assert!(offs > 30 && offs < 70);
    }

    #[test]
    fn forwarding_boundary() {
        let a = |n: usize| vec![(ip(1, 1), 0); n];
        assert!(!addr_forwarding_decision(&a(11)));
        assert!(addr_forwarding_decision(&a(10)));
        assert!(addr_forwarding_decision(&a(0)));
    }

    #[test]
    fn addr_with_known_address_changes_nothing() {
        let mut c = client(TransportMode::Direct);
        let mut rng = seeded(4);
        let known = ip(5, 5);
        c.book.add_address(known, ip(6, 6), 10, 10, &mut rng);
        // references are only added for gossip from other groups; a cookie
        // sized message leaves everything alone
        let mut addrs = vec![(known.with_port(1), 99)];
        addrs.extend((0..10).map(|i| (NetAddress::ipv4([241, 0, 0, i], 8333), 5)));
        let before = c.book.get(&known).cloned();
        let fx = c.handle_message(&WireMessage::new(MessageKind::Addr(addrs), ip(7, 7)), 20, &mut rng);
        assert_eq!(fx, vec![Effect::Stored { inserted: 10, referenced: 0, rejected: 0, known: 1 }]);
        assert_eq!(c.book.get(&known).cloned(), before);
        assert_eq!(c.book.new_buckets_of(&known).len(), 1);
    }

    #[test]
    fn tor_client_drops_ip_addresses() {
        let mut c = client(TransportMode::OverTor);
        let onion = NetAddress::onioncat([3; 10], 8333);
        let msg = WireMessage::new(MessageKind::Addr(vec![(ip(1, 1), 0), (onion, 0)]), ip(7, 7));
        let fx = c.handle_message(&msg, 0, &mut seeded(5));
        assert_eq!(fx[0], Effect::Stored { inserted: 1, referenced: 0, rejected: 1, known: 0 });
        assert!(matches!(fx[1], Effect::Relay(_)));
        assert!(c.book.contains(&onion));
        assert!(!c.book.contains(&ip(1, 1)));
    }

    #[test]
    fn getaddr_reply_is_sized_by_book() {
        let mut c = client(TransportMode::Direct);
        let mut rng = seeded(6);
        for i in 0..100u8 {
            c.book.add_address(NetAddress::ipv4([30, i, 0, 1], 8333), ip(6, 6), 0, 0, &mut rng);
        }
        let fx = c.handle_message(&WireMessage::new(MessageKind::GetAddr, ip(9, 1)), 0, &mut rng);
        let Effect::Reply { to, msg: WireMessage { kind: MessageKind::Addr(list), .. } } = &fx[0] else {
            panic!("{fx:?}")
        };
        assert_eq!(*to, ip(9, 1));
        assert_eq!(list.len(), 23);
    }

    #[test]
    fn dialing_is_sequential_and_stops_at_eight() {
        let mut c = client(TransportMode::Direct);
        let mut rng = seeded(7);
        for i in 0..50u8 {
            c.book.add_address(NetAddress::ipv4([30, i, 0, 1], 8333), ip(6, 6), 0, 0, &mut rng);
        }
        let boot = Bootstrap::default();
        c.bootstrap(&boot, 0, &mut rng);
        let mut conn = 0;
        while c.outgoing().len() < MAX_OUTGOING {
            let DialPlan::Dial(a) = c.maintain_outgoing(&boot, 0, &mut rng) else { panic!() };
            assert_eq!(a.kind, DialKind::Book);
            assert_eq!(c.maintain_outgoing(&boot, 0, &mut rng), DialPlan::Idle);
            conn += 1;
            c.attempt_finished(Some(ConnId(conn)), 0, &mut rng);
        }
        assert_eq!(c.maintain_outgoing(&boot, 0, &mut rng), DialPlan::Idle);
        let mut hosts: Vec<_> = c.outgoing().iter().map(|l| l.remote.host()).collect();
        hosts.sort();
        hosts.dedup();
        assert_eq!(hosts.len(), 8);
        assert_eq!(c.book.tried_len(), 8);
    }

    #[test]
    fn seven_connections_means_tried_probability_point_two() {
        let mut c = client(TransportMode::Direct);
        let mut rng = seeded(8);
        for i in 0..200u8 {
            let a = NetAddress::ipv4([30, i, 0, 1], 8333);
            c.book.add_address(a, ip(6, 6), 0, 0, &mut rng);
            if i % 2 == 0 {
                c.book.mark_tried(&a, 0, &mut rng);
            }
        }
        for k in 0..7u64 {
            c.add_outgoing(ConnId(k), NetAddress::ipv4([99, k as u8, 0, 1], 8333));
        }
        let boot = Bootstrap::default();
        let n = 20_000;
        let mut tried = 0;
        for _ in 0..n {
            let DialPlan::Dial(a) = c.maintain_outgoing(&boot, 0, &mut rng) else { panic!() };
            if c.book.get(&a.target).unwrap().ever_connected {
                tried += 1;
            }
            c.dialer.in_flight = None;
        }
        assert!((tried as f64 / n as f64 - 0.2).abs() < 0.015);
    }

    #[test]
    fn empty_book_waits_for_fallback() {
        let mut c = client(TransportMode::Direct);
        let mut rng = seeded(9);
        let boot = Bootstrap { fallback: vec![ip(40, 1), ip(40, 2)], ..Bootstrap::default() };
        c.bootstrap(&boot, 100, &mut rng);
        assert_eq!(c.maintain_outgoing(&boot, 100, &mut rng), DialPlan::WaitUntil(160));
        assert_eq!(c.maintain_outgoing(&boot, 159, &mut rng), DialPlan::WaitUntil(160));
        let DialPlan::Dial(a) = c.maintain_outgoing(&boot, 160, &mut rng) else { panic!() };
        assert_eq!(a, DialAttempt { target: ip(40, 1), kind: DialKind::Fallback });
    }

    #[test]
    fn tor_client_alternates_oneshots_until_used_up() {
        let mut c = client(TransportMode::OverTor);
        let mut rng = seeded(10);
        c.book.add_address(NetAddress::onioncat([4; 10], 8333), ip(6, 6), 0, 0, &mut rng);
        let boot = Bootstrap { oneshot_hosts: 2, ..Bootstrap::default() };
        c.bootstrap(&boot, 0, &mut rng);
        let mut kinds = Vec::new();
        for _ in 0..6 {
            let DialPlan::Dial(a) = c.maintain_outgoing(&boot, 0, &mut rng) else { panic!() };
            kinds.push(a.kind);
            c.attempt_finished(None, 0, &mut rng);
        }
        use DialKind::*;
        assert_eq!(kinds, [Book, Oneshot(0), Book, Oneshot(1), Book, Book]);
    }

    #[test]
    fn direct_bootstrap_fills_book_from_dns() {
        let mut c = client(TransportMode::Direct);
        let seeds: Vec<_> = (0..6).map(|i| ip(50, i)).collect();
        let boot = Bootstrap { dns_seed_addrs: seeds.clone(), ..Bootstrap::default() };
        c.bootstrap(&boot, 0, &mut seeded(11));
        assert!(seeds.iter().all(|s| c.book.contains(s)));
        let mut t = client(TransportMode::OverTor);
        t.bootstrap(&boot, 0, &mut seeded(11));
        assert!(t.book.is_empty());
    }

    proptest! {
        #[test]
        fn ban_boundary(start in 0i64..1_000_000, other in 1u8..200) {
            let mut s = server();
            let exit = ip(9, 9);
            s.accept_incoming(exit, ConnId(0), start);
            s.handle_message(&malformed(exit), start, &mut seeded(1));
            let expiry = start + BAN_SECS;
            prop_assert_eq!(s.accept_incoming(exit, ConnId(1), expiry - 1), AcceptOutcome::RejectedBanned);
            prop_assert_eq!(s.accept_incoming(exit, ConnId(2), expiry + 1), AcceptOutcome::Accepted);
            prop_assert_eq!(s.accept_incoming(ip(8, other), ConnId(3), start), AcceptOutcome::Accepted);
        }

        #[test]
        fn penalty_is_monotone(kinds in prop::collection::vec(0u8..3, 1..60)) {
            let mut s = server();
            let peer = ip(9, 9);
            let mut rng = seeded(2);
            let mut last = 0;
            for (t, k) in kinds.into_iter().enumerate() {
                let kind = match k {
                    0 => MessageKind::MalformedTx,
                    1 => MessageKind::Benign,
                    _ => MessageKind::GetAddr,
                };
                s.handle_message(&WireMessage::new(kind, peer), t as i64, &mut rng);
                let p = s.penalty_of(&peer);
                prop_assert!(p >= last);
                prop_assert!(p % 100 == 0);
                last = p;
            }
        }

        #[test]
        fn outgoing_never_duplicates_a_host(remotes in prop::collection::vec(0u8..12, 0..40)) {
            let mut c = client(TransportMode::Direct);
            for (i, r) in remotes.iter().enumerate() {
                c.add_outgoing(ConnId(i as u64), NetAddress::ipv4([60, *r, 0, 1], 1000 + i as u16));
            }
            let mut hosts: Vec<_> = c.outgoing().iter().map(|l| l.remote.host()).collect();
            let n = hosts.len();
            hosts.sort();
            hosts.dedup();
            prop_assert_eq!(hosts.len(), n);
            prop_assert!(n <= MAX_OUTGOING);
        }
    }
}
