//! Hidden-service directory placement.
//!
//! HSDir relays form a ring sorted by fingerprint. A service's descriptor is
//! stored under two ids per day; each id is held by the three relays that
//! follow it on the ring.

use sha1::{Digest, Sha1};

use super::consensus::{Consensus, Fingerprint};
use super::TorError;

pub const REPLICAS: usize = 2;
pub const SPREAD: usize = 3;
pub const SECONDS_PER_DAY: u64 = 86_400;

pub fn day_of(time_s: u64) -> u64 {
    time_s / SECONDS_PER_DAY
}

/// HSDir-flagged fingerprints in ascending byte order.
pub fn hsdir_ring(consensus: &Consensus) -> Vec<Fingerprint> {
    let mut ring: Vec<Fingerprint> = consensus
        .relays
        .iter()
        .filter(|r| r.flags.hsdir)
        .map(|r| r.fingerprint)
        .collect();
    ring.sort_unstable();
    ring
}

/// `SHA1(permanent_id || day as big-endian u64 || replica byte)`.
pub fn descriptor_ids(permanent_id: &[u8], day: u64) -> [Fingerprint; REPLICAS] {
    let mut ids = [[0u8; 20]; REPLICAS];
    for (r, id) in ids.iter_mut().enumerate() {
        let mut h = Sha1::new();
        h.update(permanent_id);
        h.update(day.to_be_bytes());
        h.update([r as u8]);
        *id = h.finalize().into();
    }
    ids
}

/// Ring index of the first entry strictly greater than `id`, wrapping to 0.
pub fn successor_index(ring: &[Fingerprint], id: &Fingerprint) -> usize {
    let k = ring.partition_point(|f| f <= id);
    if k == ring.len() {
        0
    } else {
        k
    }
}

/// The three ring entries following `id`.
pub fn responsible_for(ring: &[Fingerprint], id: &Fingerprint) -> Result<[Fingerprint; SPREAD], TorError> {
    if ring.len() < SPREAD {
        return Err(TorError::InsufficientRelays { have: ring.len(), need: SPREAD });
    }
    let k = successor_index(ring, id);
    Ok(std::array::from_fn(|j| ring[(k + j) % ring.len()]))
}

/// All six responsible directories, in ring order. Overlapping replicas yield
/// repeated entries.
pub fn responsible_directories(
    ring: &[Fingerprint],
    ids: &[Fingerprint; REPLICAS],
) -> Result<Vec<Fingerprint>, TorError> {
    let need = REPLICAS * SPREAD;
    if ring.len() < need {
        return Err(TorError::InsufficientRelays { have: ring.len(), need });
    }
    let mut positions: Vec<usize> = Vec::with_capacity(need);
    for id in ids {
        let k = successor_index(ring, id);
        positions.extend((0..SPREAD).map(|j| (k + j) % ring.len()));
    }
    positions.sort_unstable();
    Ok(positions.into_iter().map(|p| ring[p]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netaddr::NetAddress;
    use crate::tor::consensus::{ExitPolicy, Operator, RelayDescriptor, RelayFlags};

    fn fp(b: u8) -> Fingerprint {
        let mut f = [0u8; 20];
        f[0] = b;
        f
    }

    fn relay(f: Fingerprint, hsdir: bool) -> RelayDescriptor {
        RelayDescriptor {
            fingerprint: f,
            ip: NetAddress::ipv4([10, 1, f[0], 1], 9001),
            weight: 1,
            flags: RelayFlags { exit: false, guard: false, hsdir },
            advertised_policy: ExitPolicy::reject_all(),
            real_policy: ExitPolicy::reject_all(),
            operator: Operator::Honest,
        }
    }

    #[test]
    fn ring_is_sorted_and_filtered() {
        let c = Consensus::new(vec![relay([0xFF; 20], true), relay([0; 20], true), relay(fp(5), false)]).unwrap();
        assert_eq!(hsdir_ring(&c), vec![[0; 20], [0xFF; 20]]);
    }

    #[test]
    fn ids_change_daily_and_per_replica() {
        let a = descriptor_ids(b"0123456789", 100);
        assert_eq!(a, descriptor_ids(b"0123456789", 100));
        assert_ne!(a[0], a[1]);
        let b = descriptor_ids(b"0123456789", 101);
        assert_ne!(a[0], b[0]);
        assert_ne!(a[1], b[1]);
    }

    #[test]
    fn successors_follow_and_wrap() {
        let ring: Vec<_> = (1..=8).map(|i| fp(i * 10)).collect();
        assert_eq!(responsible_for(&ring, &fp(25)).unwrap(), [fp(30), fp(40), fp(50)]);
        // equal to an entry: strictly after it
        assert_eq!(responsible_for(&ring, &fp(30)).unwrap(), [fp(40), fp(50), fp(60)]);
        assert_eq!(responsible_for(&ring, &fp(75)).unwrap(), [fp(80), fp(10), fp(20)]);
        assert_eq!(responsible_for(&ring, &[0xFF; 20]).unwrap(), [fp(10), fp(20), fp(30)]);
    }

    #[test]
    fn six_ring_all_placements() {
        // Brute force over every pair of insertion gaps on a six-entry ring:
        // the union covers all six exactly when the gaps are three apart.
        let ring: Vec<_> = (0..6).map(|i| fp(i * 40 + 20)).collect();
        let gap_id = |g: usize| fp((g as u8) * 40 + 10); // just before ring[g]
        for g0 in 0..6 {
            for g1 in 0..6 {
                let dirs = responsible_directories(&ring, &[gap_id(g0), gap_id(g1)]).unwrap();
                assert_eq!(dirs.len(), 6);
                let mut distinct = dirs.clone();
                distinct.dedup();
                let expected_distinct = 6 - 3usize.saturating_sub(((g1 + 6 - g0) % 6).min((g0 + 6 - g1) % 6));
                assert_eq!(distinct.len(), expected_distinct, "gaps {g0} {g1}");
                let mut sorted = dirs.clone();
                sorted.sort();
                assert_eq!(sorted, dirs);
            }
        }
    }

    #[test]
    fn small_ring_is_rejected() {
        let ring: Vec<_> = (0..5).map(fp).collect();
        let ids = descriptor_ids(b"x", 0);
        assert_eq!(
            responsible_directories(&ring, &ids),
            Err(TorError::InsufficientRelays { have: 5, need: 6 })
        );
    }
}
