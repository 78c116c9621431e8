//! Taking over the directories responsible for a hidden service.
//!
//! For each descriptor replica the attacker needs three relay fingerprints
//! that sort after the descriptor id but before the directory currently
//! responsible for it. Key generation is modelled as uniform 20-byte draws.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tor::hsdir::{descriptor_ids, successor_index, REPLICAS, SPREAD};
use crate::tor::Fingerprint;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum BlackholeError {
    #[error("the HSDir ring is empty")]
    EmptyRing,
    #[error("replica {replica}: {reason}")]
    Infeasible { replica: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackholeReport {
    pub day: u64,
    #[serde(with = "hex_ids")]
    pub descriptor_ids: [Fingerprint; REPLICAS],
    /// Three per replica, replica 0 first.
    #[serde(with = "hex_list")]
    pub fingerprints: Vec<Fingerprint>,
    pub iterations: [u64; REPLICAS],
    /// Share of the id space that lands in each target interval.
    pub interval_share: [f64; REPLICAS],
}

mod hex_ids {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ids: &[Fingerprint; REPLICAS], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ids.iter().map(hex::encode))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Fingerprint; REPLICAS], D::Error> {
        let v = super::hex_list::deserialize(d)?;
        v.try_into().map_err(|_| serde::de::Error::custom("expected two ids"))
    }
}

mod hex_list {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ids: &[Fingerprint], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(ids.iter().map(hex::encode))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Fingerprint>, D::Error> {
        let v: Vec<String> = Vec::deserialize(d)?;
        v.iter()
            .map(|h| {
                let b = hex::decode(h).map_err(serde::de::Error::custom)?;
                b.try_into().map_err(|_| serde::de::Error::custom("fingerprint must be 20 bytes"))
            })
            .collect()
    }
}

/// Whether `x` lies strictly inside the ring gap that starts after `lo` and
/// ends before `hi`, wrapping past the top of the id space when `hi <= lo`.
fn in_gap(x: &Fingerprint, lo: &Fingerprint, hi: &Fingerprint) -> bool {
    if lo < hi {
        lo < x && x < hi
    } else {
        x > lo || x < hi
    }
}

/// `hi - lo` modulo 2^160.
fn gap_width(lo: &Fingerprint, hi: &Fingerprint) -> [u8; 20] {
    let mut out = [0u8; 20];
    let mut borrow = 0i16;
    for i in (0..20).rev() {
        let mut d = hi[i] as i16 - lo[i] as i16 - borrow;
        borrow = 0;
        if d < 0 {
            d += 256;
            borrow = 1;
        }
        out[i] = d as u8;
    }
    out
}

fn share_of_space(width: &[u8; 20]) -> f64 {
    width.iter().enumerate().map(|(i, b)| *b as f64 * 256f64.powi(-(i as i32) - 1)).sum()
}

/// Searches fingerprints that make the attacker responsible for the
/// service's descriptors on `day`. Each replica gets at most `max_draws`
/// random draws.
pub fn blackhole_service<R: Rng + ?Sized>(
    permanent_id: &[u8],
    day: u64,
    ring: &[Fingerprint],
    max_draws: u64,
    rng: &mut R,
) -> Result<BlackholeReport, BlackholeError> {
    if ring.is_empty() {
        return Err(BlackholeError::EmptyRing);
    }
    let ids = descriptor_ids(permanent_id, day);
    let mut fingerprints = Vec::with_capacity(REPLICAS * SPREAD);
    let mut iterations = [0u64; REPLICAS];
    let mut interval_share = [0f64; REPLICAS];
    for (r, id) in ids.iter().enumerate() {
        let first = ring[successor_index(ring, id)];
        // an id equal to the lone ring entry leaves the whole space open
        let width = if *id == first { [0xFF; 20] } else { gap_width(id, &first) };
        interval_share[r] = share_of_space(&width);
        // `width - 1` values sit strictly inside the gap
        let roomy = width[..19].iter().any(|b| *b > 0) || width[19] > SPREAD as u8;
        if !roomy {
            return Err(BlackholeError::Infeasible {
                replica: r,
                reason: "gap to the first responsible directory is too narrow".into(),
            });
        }
        let mut found: Vec<Fingerprint> = Vec::with_capacity(SPREAD);
        while found.len() < SPREAD {
            if iterations[r] >= max_draws {
                return Err(BlackholeError::Infeasible {
                    replica: r,
                    reason: format!("no fit after {max_draws} draws"),
                });
            }
            iterations[r] += 1;
            let mut fp = [0u8; 20];
            rng.fill(&mut fp[..]);
            if in_gap(&fp, id, &first) && !found.contains(&fp) && !fingerprints.contains(&fp) {
                found.push(fp);
            }
        }
        fingerprints.extend(found);
    }
    Ok(BlackholeReport { day, descriptor_ids: ids, fingerprints, iterations, interval_share })
}

/// `ring` with `extra` relays inserted, sorted and deduplicated.
pub fn ring_with(ring: &[Fingerprint], extra: &[Fingerprint]) -> Vec<Fingerprint> {
    let mut v: Vec<Fingerprint> = ring.iter().chain(extra).copied().collect();
    v.sort_unstable();
    v.dedup();
    v
}
