//! The address manager: a bucketed database of known peer addresses.
//!
//! Addresses live in 256 "new" buckets (never connected) and 64 "tried"
//! buckets (at least one successful connection), 64 slots each. A new address
//! may be referenced from up to four new buckets; a tried address occupies
//! exactly one tried slot.
//!
//! Membership is decided on the host only. Re-advertising a known host, with
//! any port, leaves the database untouched.

mod persist;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hasher;

use rand::Rng;
use serde::{Deserialize, Serialize};
use siphasher::sip::SipHasher24;
use thiserror::Error;

use crate::netaddr::{AddrKind, HostKey, NetAddress};

pub use persist::{PersistError, PersistErrorKind, FORMAT_VERSION};

/// Simulation time in whole seconds since the scenario epoch.
pub type Timestamp = i64;

pub const NEW_BUCKET_COUNT: usize = 256;
pub const TRIED_BUCKET_COUNT: usize = 64;
pub const BUCKET_SIZE: usize = 64;
pub const MAX_NEW_REFS: usize = 4;
pub const MAX_ENTRIES: usize = (NEW_BUCKET_COUNT + TRIED_BUCKET_COUNT) * BUCKET_SIZE;

/// Entries whose timestamp is this old are terrible.
pub const STALE_AFTER_SECS: i64 = 30 * 86_400;
/// Entries dated further than this into the future are terrible.
pub const FUTURE_SLACK_SECS: i64 = 10 * 60;
pub const MAX_CONSECUTIVE_FAILURES: u32 = 3;

pub const GETADDR_PERCENT: usize = 23;
pub const GETADDR_MAX: usize = 2500;

/// Number of eviction candidates drawn from a full bucket.
pub const EVICTION_DRAWS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddrBookError {
    #[error("address book is empty")]
    NoAddress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Table {
    New,
    Tried,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportMode {
    Direct,
    OverTor,
}

/// Per-book secret key mixed into every bucket hash.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Salt(pub [u8; 16]);

impl Salt {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut s = [0u8; 16];
        rng.fill(&mut s[..]);
        Salt(s)
    }

    fn hasher(&self) -> SipHasher24 {
        let k0 = u64::from_le_bytes(self.0[..8].try_into().unwrap());
        let k1 = u64::from_le_bytes(self.0[8..].try_into().unwrap());
        SipHasher24::new_with_keys(k0, k1)
    }
}

/// Bucket index for `addr` as advertised by `source`.
///
/// New buckets depend on the address and on the source group folded into one
/// of four residues, so one address can land in at most four new buckets no
/// matter how many sources advertise it. Tried buckets depend on the address
/// only.
pub fn bucket_for(addr: &NetAddress, source: &NetAddress, salt: &Salt, table: Table) -> usize {
    match table {
        Table::New => {
            let mut h = salt.hasher();
            h.write(b"source-group");
            h.write(&source.group());
            let residue = h.finish() % MAX_NEW_REFS as u64;

            let mut h = salt.hasher();
            h.write(b"new");
            h.write_u8(addr.kind().tag());
            h.write(addr.host_bytes());
            h.write_u64(residue);
            (h.finish() % NEW_BUCKET_COUNT as u64) as usize
        }
        Table::Tried => {
            let mut h = salt.hasher();
            h.write(b"tried");
            h.write_u8(addr.kind().tag());
            h.write(addr.host_bytes());
            (h.finish() % TRIED_BUCKET_COUNT as u64) as usize
        }
    }
}

/// Whether a book running in `mode` accepts `addr` from a peer.
pub fn gate_transport(mode: TransportMode, addr: &NetAddress) -> bool {
    match mode {
        TransportMode::OverTor => addr.kind() == AddrKind::OnionCat,
        TransportMode::Direct => addr.is_ip(),
    }
}

/// Size of a GETADDR reply for a book holding `total` entries:
/// 23% rounded half-up, capped at 2500.
pub fn getaddr_size(total: usize) -> usize {
    ((GETADDR_PERCENT * total + 50) / 100).min(GETADDR_MAX)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddrEntry {
    pub address: NetAddress,
    pub last_seen: Timestamp,
    pub last_attempt: Option<Timestamp>,
    pub consecutive_failures: u32,
    pub ever_connected: bool,
    pub source: NetAddress,
}

/// Stale, future-dated, or failing repeatedly.
pub fn is_terrible(entry: &AddrEntry, now: Timestamp) -> bool {
    entry.last_seen <= now - STALE_AFTER_SECS
        || entry.last_seen > now + FUTURE_SLACK_SECS
        || entry.consecutive_failures >= MAX_CONSECUTIVE_FAILURES
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AddOutcome {
    AlreadyKnown,
    Inserted,
    ReplacedTerrible(NetAddress),
    EvictedOldest(NetAddress),
    RejectedTransport,
}

impl AddOutcome {
    pub fn stored(&self) -> bool {
        matches!(
            self,
            AddOutcome::Inserted | AddOutcome::ReplacedTerrible(_) | AddOutcome::EvictedOldest(_)
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TriedOutcome {
    /// Moved into the tried table; carries the tried entry that was demoted
    /// to make room, if any.
    Promoted(Option<NetAddress>),
    /// Already tried; only timestamps changed.
    Refreshed,
}

/// Slot coordinates inside one table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Pos {
    pub bucket: u16,
    pub slot: u8,
}

#[derive(Clone, Debug)]
pub(crate) struct Record {
    pub entry: AddrEntry,
    pub new_refs: Vec<Pos>,
    pub tried_at: Option<Pos>,
}

type Bucket = [Option<u32>; BUCKET_SIZE];

#[derive(Clone, Debug)]
pub struct AddrBook {
    mode: TransportMode,
    salt: Salt,
    records: Vec<Option<Record>>,
    free: Vec<u32>,
    index: HashMap<HostKey, u32>,
    new_table: Vec<Bucket>,
    tried_table: Vec<Bucket>,
    new_fill: Vec<u8>,
    tried_fill: Vec<u8>,
}

impl PartialEq for AddrBook {
    fn eq(&self, other: &Self) -> bool {
        self.persist() == other.persist()
    }
}

impl AddrBook {
    pub fn new(mode: TransportMode, salt: Salt) -> Self {
        AddrBook {
            mode,
            salt,
            records: Vec::new(),
            free: Vec::new(),
            index: HashMap::new(),
            new_table: vec![[None; BUCKET_SIZE]; NEW_BUCKET_COUNT],
            tried_table: vec![[None; BUCKET_SIZE]; TRIED_BUCKET_COUNT],
            new_fill: vec![0; NEW_BUCKET_COUNT],
            tried_fill: vec![0; TRIED_BUCKET_COUNT],
        }
    }

    pub fn mode(&self) -> TransportMode {
        self.mode
    }

    /// Switches transport mode. Entries stored under the previous mode stay;
    /// gating applies to what peers send from now on.
    pub fn set_mode(&mut self, mode: TransportMode) {
        self.mode = mode;
    }

    pub fn salt(&self) -> &Salt {
        &self.salt
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn tried_len(&self) -> usize {
        self.tried_fill.iter().map(|&c| c as usize).sum()
    }

    pub fn new_len(&self) -> usize {
        self.len() - self.tried_len()
    }

    pub fn get(&self, addr: &NetAddress) -> Option<&AddrEntry> {
        self.index
            .get(&addr.host())
            .map(|&id| &self.record(id).entry)
    }

    pub fn contains(&self, addr: &NetAddress) -> bool {
        self.index.contains_key(&addr.host())
    }

    /// Entries in storage order.
    pub fn entries(&self) -> impl Iterator<Item = &AddrEntry> {
        self.records.iter().flatten().map(|r| &r.entry)
    }

    /// New buckets currently referencing `addr`.
    pub fn new_buckets_of(&self, addr: &NetAddress) -> Vec<usize> {
        match self.index.get(&addr.host()) {
            Some(&id) => self
                .record(id)
                .new_refs
                .iter()
                .map(|p| p.bucket as usize)
                .collect(),
            None => Vec::new(),
        }
    }

    pub fn tried_bucket_of(&self, addr: &NetAddress) -> Option<usize> {
        let id = *self.index.get(&addr.host())?;
        self.record(id).tried_at.map(|p| p.bucket as usize)
    }

    /// Occupied slots of one bucket.
    pub fn bucket_fill(&self, table: Table, bucket: usize) -> usize {
        match table {
            Table::New => self.new_fill[bucket] as usize,
            Table::Tried => self.tried_fill[bucket] as usize,
        }
    }

    /// Entry stored at a slot, if any.
    pub fn slot(&self, table: Table, bucket: usize, slot: usize) -> Option<&AddrEntry> {
        let id = match table {
            Table::New => self.new_table[bucket][slot],
            Table::Tried => self.tried_table[bucket][slot],
        }?;
        Some(&self.record(id).entry)
    }

    fn record(&self, id: u32) -> &Record {
        self.records[id as usize].as_ref().expect("live record")
    }

    fn record_mut(&mut self, id: u32) -> &mut Record {
        self.records[id as usize].as_mut().expect("live record")
    }

    fn alloc(&mut self, entry: AddrEntry) -> u32 {
        let host = entry.address.host();
        let rec = Record { entry, new_refs: Vec::new(), tried_at: None };
        let id = match self.free.pop() {
            Some(id) => {
                self.records[id as usize] = Some(rec);
                id
            }
            None => {
                self.records.push(Some(rec));
                (self.records.len() - 1) as u32
            }
        };
        self.index.insert(host, id);
        id
    }

    fn release(&mut self, id: u32) {
        let rec = self.records[id as usize].take().expect("live record");
        self.index.remove(&rec.entry.address.host());
        self.free.push(id);
    }

    fn set_slot(&mut self, table: Table, pos: Pos, value: Option<u32>) {
        let (slots, fill) = match table {
            Table::New => (&mut self.new_table, &mut self.new_fill),
            Table::Tried => (&mut self.tried_table, &mut self.tried_fill),
        };
        let cell = &mut slots[pos.bucket as usize][pos.slot as usize];
        match (cell.is_some(), value.is_some()) {
            (false, true) => fill[pos.bucket as usize] += 1,
            (true, false) => fill[pos.bucket as usize] -= 1,
            _ => {}
        }
        *cell = value;
    }

    fn bucket_ids(&self, table: Table, bucket: usize) -> &Bucket {
        match table {
            Table::New => &self.new_table[bucket],
            Table::Tried => &self.tried_table[bucket],
        }
    }

    /// Puts record `id` into `bucket`, evicting if the bucket is full.
    fn place<R: Rng + ?Sized>(
        &mut self,
        id: u32,
        table: Table,
        bucket: usize,
        now: Timestamp,
        rng: &mut R,
    ) -> AddOutcome {
        let slots: Bucket = *self.bucket_ids(table, bucket);
        let outcome;
        let slot = if let Some(free) = slots.iter().position(Option::is_none) {
            outcome = AddOutcome::Inserted;
            free
        } else if let Some(bad) = slots
            .iter()
            .position(|s| is_terrible(&self.record(s.unwrap()).entry, now))
        {
            let victim = slots[bad].unwrap();
            outcome = AddOutcome::ReplacedTerrible(self.record(victim).entry.address);
            self.evict(table, Pos { bucket: bucket as u16, slot: bad as u8 }, now, rng);
            bad
        } else {
            let picks = draw_eviction_candidates(rng);
            let mut oldest = picks[0];
            for &p in &picks[1..] {
                let seen = |s: usize| self.record(slots[s].unwrap()).entry.last_seen;
                if seen(p) < seen(oldest) {
                    oldest = p;
                }
            }
            let victim = slots[oldest].unwrap();
            outcome = AddOutcome::EvictedOldest(self.record(victim).entry.address);
            self.evict(table, Pos { bucket: bucket as u16, slot: oldest as u8 }, now, rng);
            oldest
        };
        let pos = Pos { bucket: bucket as u16, slot: slot as u8 };
        self.set_slot(table, pos, Some(id));
        let rec = self.record_mut(id);
        match table {
            Table::New => rec.new_refs.push(pos),
            Table::Tried => rec.tried_at = Some(pos),
        }
        outcome
    }

    /// Clears a slot. A new-table entry left with no references is deleted;
    /// a tried entry is demoted back to its new bucket.
    fn evict<R: Rng + ?Sized>(&mut self, table: Table, pos: Pos, now: Timestamp, rng: &mut R) {
        let id = self.bucket_ids(table, pos.bucket as usize)[pos.slot as usize]
            .expect("occupied slot");
        self.set_slot(table, pos, None);
        match table {
            Table::New => {
                let rec = self.record_mut(id);
                rec.new_refs.retain(|p| *p != pos);
                if rec.new_refs.is_empty() && rec.tried_at.is_none() {
                    self.release(id);
                }
            }
            Table::Tried => {
                let rec = self.record_mut(id);
                rec.tried_at = None;
                rec.entry.ever_connected = false;
                let (addr, source) = (rec.entry.address, rec.entry.source);
                let bucket = bucket_for(&addr, &source, &self.salt, Table::New);
                self.place(id, Table::New, bucket, now, rng);
            }
        }
    }

    /// Stores an address received from `source`, advertised with timestamp `ts`.
    pub fn add_address<R: Rng + ?Sized>(
        &mut self,
        addr: NetAddress,
        source: NetAddress,
        ts: Timestamp,
        now: Timestamp,
        rng: &mut R,
    ) -> AddOutcome {
        if !gate_transport(self.mode, &addr) {
            return AddOutcome::RejectedTransport;
        }
        if self.contains(&addr) {
            return AddOutcome::AlreadyKnown;
        }
        let id = self.alloc(AddrEntry {
            address: addr,
            last_seen: ts,
            last_attempt: None,
            consecutive_failures: 0,
            ever_connected: false,
            source,
        });
        let bucket = bucket_for(&addr, &source, &self.salt, Table::New);
        self.place(id, Table::New, bucket, now, rng)
    }

    /// Adds one more new-bucket reference for an address that is already
    /// known, as happens when it keeps being advertised by peers in other
    /// network groups. Returns `None` when nothing changes: unknown address,
    /// already tried, four references held, or the source maps to a bucket
    /// already holding it.
    pub fn add_reference<R: Rng + ?Sized>(
        &mut self,
        addr: &NetAddress,
        source: &NetAddress,
        now: Timestamp,
        rng: &mut R,
    ) -> Option<AddOutcome> {
        if !gate_transport(self.mode, addr) {
            return None;
        }
        let id = *self.index.get(&addr.host())?;
        let rec = self.record(id);
        if rec.tried_at.is_some() || rec.new_refs.len() >= MAX_NEW_REFS {
            return None;
        }
        let bucket = bucket_for(&rec.entry.address, source, &self.salt, Table::New);
        if rec.new_refs.iter().any(|p| p.bucket as usize == bucket) {
            return None;
        }
        Some(self.place(id, Table::New, bucket, now, rng))
    }

    /// Records a successful connection to `addr`.
    pub fn mark_tried<R: Rng + ?Sized>(
        &mut self,
        addr: &NetAddress,
        now: Timestamp,
        rng: &mut R,
    ) -> TriedOutcome {
        let id = match self.index.get(&addr.host()) {
            Some(&id) => id,
            None => self.alloc(AddrEntry {
                address: *addr,
                last_seen: now,
                last_attempt: None,
                consecutive_failures: 0,
                ever_connected: false,
                source: *addr,
            }),
        };
        let rec = self.record_mut(id);
        rec.entry.last_seen = now;
        rec.entry.last_attempt = Some(now);
        rec.entry.consecutive_failures = 0;
        if rec.tried_at.is_some() {
            return TriedOutcome::Refreshed;
        }
        rec.entry.ever_connected = true;
        let refs = std::mem::take(&mut rec.new_refs);
        let stored = rec.entry.address;
        for pos in refs {
            self.set_slot(Table::New, pos, None);
        }
        let bucket = bucket_for(&stored, &stored, &self.salt, Table::Tried);
        match self.place(id, Table::Tried, bucket, now, rng) {
            AddOutcome::ReplacedTerrible(a) | AddOutcome::EvictedOldest(a) => {
                TriedOutcome::Promoted(Some(a))
            }
            _ => TriedOutcome::Promoted(None),
        }
    }

    /// Records a failed connection attempt.
    pub fn mark_failed(&mut self, addr: &NetAddress, now: Timestamp) {
        if let Some(&id) = self.index.get(&addr.host()) {
            let e = &mut self.record_mut(id).entry;
            e.consecutive_failures += 1;
            e.last_attempt = Some(now);
        }
    }

    /// Overwrites the last-seen time of a known address, as a fresh
    /// advertisement from a trusted source would. Returns false if unknown.
    pub fn refresh(&mut self, addr: &NetAddress, last_seen: Timestamp) -> bool {
        match self.index.get(&addr.host()) {
            Some(&id) => {
                self.record_mut(id).entry.last_seen = last_seen;
                true
            }
            None => false,
        }
    }

    /// Picks an address for a new outgoing connection. The tried table is
    /// used with probability `0.9 - 0.1 * n_established` (floored at 0),
    /// falling back to whichever table is non-empty. Within the table a
    /// non-empty bucket and then an occupied slot are drawn uniformly.
    pub fn select_outgoing<R: Rng + ?Sized>(
        &self,
        n_established: usize,
        rng: &mut R,
    ) -> Result<NetAddress, AddrBookError> {
        let have_tried = self.tried_fill.iter().any(|&c| c > 0);
        let have_new = self.new_fill.iter().any(|&c| c > 0);
        let table = match (have_tried, have_new) {
            (false, false) => return Err(AddrBookError::NoAddress),
            (true, false) => Table::Tried,
            (false, true) => Table::New,
            (true, true) => {
                let tried_tenths = 9i64 - n_established as i64;
                if rng.gen_range(0..10) < tried_tenths {
                    Table::Tried
                } else {
                    Table::New
                }
            }
        };
        let fill = match table {
            Table::New => &self.new_fill,
            Table::Tried => &self.tried_fill,
        };
        let non_empty = fill.iter().filter(|&&c| c > 0).count();
        let nth = rng.gen_range(0..non_empty);
        let bucket = fill
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .nth(nth)
            .map(|(b, _)| b)
            .unwrap();
        let slots = self.bucket_ids(table, bucket);
        let k = rng.gen_range(0..fill[bucket] as usize);
        let id = slots.iter().flatten().nth(k).copied().unwrap();
        Ok(self.record(id).entry.address)
    }

    /// The exact distribution of [`AddrBook::select_outgoing`]: each address
    /// with the probability of being returned, in record order.
    pub fn selection_probabilities(&self, n_established: usize) -> Vec<(NetAddress, f64)> {
        let have_tried = self.tried_fill.iter().any(|&c| c > 0);
        let have_new = self.new_fill.iter().any(|&c| c > 0);
        let p_tried = match (have_tried, have_new) {
            (false, false) => return Vec::new(),
            (true, false) => 1.0,
            (false, true) => 0.0,
            (true, true) => (9i64 - n_established as i64).max(0) as f64 / 10.0,
        };
        let mut mass = vec![0.0; self.records.len()];
        for (table, p) in [(Table::Tried, p_tried), (Table::New, 1.0 - p_tried)] {
            if p == 0.0 {
                continue;
            }
            let fill = match table {
                Table::New => &self.new_fill,
                Table::Tried => &self.tried_fill,
            };
            let non_empty = fill.iter().filter(|&&c| c > 0).count() as f64;
            for (b, &f) in fill.iter().enumerate().filter(|(_, &c)| c > 0) {
                for id in self.bucket_ids(table, b).iter().flatten() {
                    mass[*id as usize] += p / non_empty / f as f64;
                }
            }
        }
        self.records
            .iter()
            .zip(mass)
            .filter_map(|(r, m)| r.as_ref().map(|r| (r.entry.address, m)))
            .collect()
    }

    /// Reply to a GETADDR: a uniform sample without replacement of
    /// `getaddr_size(len)` distinct entries.
    pub fn getaddr_response<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(NetAddress, Timestamp)> {
        let ids: Vec<u32> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_some())
            .map(|(i, _)| i as u32)
            .collect();
        let n = getaddr_size(ids.len());
        rand::seq::index::sample(rng, ids.len(), n)
            .into_iter()
            .map(|i| {
                let e = &self.record(ids[i]).entry;
                (e.address, e.last_seen)
            })
            .collect()
    }

    /// One line per occupied slot, new table first:
    /// `kind address port table bucket slot last_seen last_attempt failures`.
    pub fn debug_dump(&self) -> String {
        let mut out = String::new();
        for (table, slots) in [(Table::New, &self.new_table), (Table::Tried, &self.tried_table)] {
            let tag = match table {
                Table::New => "new",
                Table::Tried => "tried",
            };
            for (b, bucket) in slots.iter().enumerate() {
                for (s, id) in bucket.iter().enumerate() {
                    let Some(id) = id else { continue };
                    let e = &self.record(*id).entry;
                    let kind = match e.address.kind() {
                        AddrKind::Ipv4 => "ipv4",
                        AddrKind::Ipv6 => "ipv6",
                        AddrKind::OnionCat => "onioncat",
                    };
                    let host = e.address.to_string();
                    let host = host.rsplit_once(':').map(|(h, _)| h).unwrap_or(&host);
                    let attempt = e.last_attempt.map_or("-".to_string(), |t| t.to_string());
                    let _ = writeln!(
                        out,
                        "{kind} {host} {} {tag} {b} {s} {} {attempt} {}",
                        e.address.port(),
                        e.last_seen,
                        e.consecutive_failures
                    );
                }
            }
        }
        out
    }

    /// Checks every structural invariant; used by tests and after loading.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.len() > MAX_ENTRIES {
            return Err(format!("{} entries exceed capacity", self.len()));
        }
        let mut seen_refs = 0usize;
        for (id, rec) in self.records.iter().enumerate() {
            let Some(rec) = rec else { continue };
            let id = id as u32;
            if self.index.get(&rec.entry.address.host()) != Some(&id) {
                return Err(format!("{} missing from index", rec.entry.address));
            }
            if rec.new_refs.len() > MAX_NEW_REFS {
                return Err(format!("{} has {} new refs", rec.entry.address, rec.new_refs.len()));
            }
            let mut buckets: Vec<u16> = rec.new_refs.iter().map(|p| p.bucket).collect();
            buckets.sort_unstable();
            buckets.dedup();
            if buckets.len() != rec.new_refs.len() {
                return Err(format!("{} referenced twice from one bucket", rec.entry.address));
            }
            if rec.entry.ever_connected != rec.tried_at.is_some() {
                return Err(format!("{} ever_connected disagrees with table", rec.entry.address));
            }
            if rec.tried_at.is_some() && !rec.new_refs.is_empty() {
                return Err(format!("{} is in both tables", rec.entry.address));
            }
            if rec.tried_at.is_none() && rec.new_refs.is_empty() {
                return Err(format!("{} is in no bucket", rec.entry.address));
            }
            for p in &rec.new_refs {
                if self.new_table[p.bucket as usize][p.slot as usize] != Some(id) {
                    return Err(format!("{} new slot mismatch", rec.entry.address));
                }
            }
            if let Some(p) = rec.tried_at {
                if self.tried_table[p.bucket as usize][p.slot as usize] != Some(id) {
                    return Err(format!("{} tried slot mismatch", rec.entry.address));
                }
            }
            seen_refs += rec.new_refs.len() + rec.tried_at.is_some() as usize;
        }
        let occupied: usize = self.new_fill.iter().chain(&self.tried_fill).map(|&c| c as usize).sum();
        let cells = self
            .new_table
            .iter()
            .chain(&self.tried_table)
            .flat_map(|b| b.iter())
            .filter(|s| s.is_some())
            .count();
        if occupied != seen_refs || cells != seen_refs {
            return Err(format!("slot counts {occupied}/{cells} != references {seen_refs}"));
        }
        Ok(())
    }
}

/// Four distinct slot indices, in draw order.
fn draw_eviction_candidates<R: Rng + ?Sized>(rng: &mut R) -> [usize; EVICTION_DRAWS] {
    let mut picks = [usize::MAX; EVICTION_DRAWS];
    let mut n = 0;
    while n < EVICTION_DRAWS {
        let s = rng.gen_range(0..BUCKET_SIZE);
        if !picks[..n].contains(&s) {
            picks[n] = s;
            n += 1;
        }
    }
    picks
}
