//! How long an address cookie survives in a client's book.
//!
//! A synthetic book is filled with addresses whose ages follow the observed
//! timestamp distribution. The cookie is planted at time zero. Every session
//! the client learns a batch of addresses it did not know before; each goes
//! through the real insertion and eviction rules, and may evict a cookie
//! entry. Survivors are counted when each session starts.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrbook::{AddrBook, Salt, TransportMode};
use crate::netaddr::NetAddress;

/// Table I as shipped.
pub const TABLE_ONE_FIXTURE: &str = include_str!("../../fixtures/table1_timestamp_ccdf.csv");
/// Table II as shipped.
pub const TABLE_TWO_FIXTURE: &str = include_str!("../../fixtures/table2_cookie_decay.csv");

/// Ages beyond this are terrible anyway; the tail of the distribution
/// reaches zero here.
pub const TAIL_END_HOURS: f64 = 720.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("survival must be non-increasing in age and lie in [0, 1]")]
    NotMonotone,
    #[error("at least one point is required")]
    Empty,
}

/// Complementary CDF of address age, given at sample points and linearly
/// interpolated between them. `(0 h, 1)` and `(720 h, 0)` bound the curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimestampDistribution {
    points: Vec<(f64, f64)>,
}

impl TimestampDistribution {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, DistributionError> {
        if points.is_empty() {
            return Err(DistributionError::Empty);
        }
        let ok = points.iter().all(|&(a, s)| a > 0.0 && a < TAIL_END_HOURS && (0.0..=1.0).contains(&s))
            && points.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 >= w[1].1);
        if !ok {
            return Err(DistributionError::NotMonotone);
        }
        Ok(TimestampDistribution { points })
    }

    /// Parses `age_hours,survival` rows; `#` lines and one header row are skipped.
    pub fn parse(text: &str) -> Result<Self, DistributionError> {
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with("age") {
                continue;
            }
            let err = |message: String| DistributionError::Parse { line: n + 1, message };
            let (a, s) = line.split_once(',').ok_or_else(|| err("expected `age,survival`".into()))?;
            let a: f64 = a.trim().parse().map_err(|_| err(format!("bad age `{a}`")))?;
            let s: f64 = s.trim().parse().map_err(|_| err(format!("bad survival `{s}`")))?;
            points.push((a, s));
        }
        Self::new(points)
    }

    pub fn table_one() -> Self {
        Self::parse(TABLE_ONE_FIXTURE).expect("shipped fixture is valid")
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn knots(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        std::iter::once((0.0, 1.0))
            .chain(self.points.iter().copied())
            .chain(std::iter::once((TAIL_END_HOURS, 0.0)))
    }

    /// Fraction of addresses older than `hours`.
    pub fn survival(&self, hours: f64) -> f64 {
        if hours <= 0.0 {
            return 1.0;
        }
        let knots: Vec<_> = self.knots().collect();
        for w in knots.windows(2) {
            let ((a0, s0), (a1, s1)) = (w[0], w[1]);
            if hours <= a1 {
                return s0 + (s1 - s0) * (hours - a0) / (a1 - a0);
            }
        }
        0.0
    }

    /// Inverse-CDF draw of an age in hours.
    pub fn sample_hours<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let level: f64 = rng.gen();
        let mut prev = (0.0, 1.0);
        for (a1, s1) in self.knots().skip(1) {
            let (a0, s0) = prev;
            if level >= s1 {
                if s0 == s1 {
                    return a0;
                }
                return a0 + (s0 - level) / (s0 - s1) * (a1 - a0);
            }
            prev = (a1, s1);
        }
        TAIL_END_HOURS
    }
}

/// Reads Table II rows as `(session, hours, remaining)`.
pub fn table_two() -> Vec<(u32, f64, u32)> {
    TABLE_TWO_FIXTURE
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("session") && !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CookieSurvivalParams {
    /// Session start times in hours since the cookie was set.
    pub session_hours: Vec<f64>,
    pub cookie_size: usize,
    pub book_size: usize,
    /// Addresses received per session (8 connections times 2500).
    pub addrs_per_session: usize,
    /// Fraction of received addresses not already in the book.
    pub new_frac: f64,
    /// Redraw the ages of resident non-cookie entries from the distribution
    /// at every session start. Known addresses that are advertised again keep
    /// the book's age profile stationary; without this the book only ages.
    pub refresh_ages: bool,
}

impl Default for CookieSurvivalParams {
    fn default() -> Self {
        CookieSurvivalParams {
            session_hours: table_two().iter().map(|r| r.1).collect(),
            cookie_size: 100,
            book_size: 12_000,
            addrs_per_session: 20_000,
            new_frac: 0.06,
            refresh_ages: true,
        }
    }
}

impl CookieSurvivalParams {
    pub fn validate(&self) -> Result<(), String> {
        let mut errs = Vec::new();
        if self.cookie_size > self.book_size {
            errs.push("cookie_size exceeds book_size".to_string());
        }
        if self.book_size + self.cookie_size > crate::addrbook::MAX_ENTRIES {
            errs.push("book does not fit the address manager".into());
        }
        if !(0.0..=1.0).contains(&self.new_frac) {
            errs.push("new_frac must lie in [0, 1]".into());
        }
        if self.session_hours.windows(2).any(|w| w[0] > w[1]) || self.session_hours.iter().any(|h| *h < 0.0) {
            errs.push("session_hours must be non-negative and ascending".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs.join("; "))
        }
    }

    pub fn novel_per_session(&self) -> usize {
        (self.addrs_per_session as f64 * self.new_frac).round() as usize
    }
}

/// Cookie addresses: the reserved 240.0.0.0/4 block, so they never collide
/// with the routable addresses of the synthetic book.
fn cookie_address(i: usize) -> NetAddress {
    let x = (i as u32).to_be_bytes();
    NetAddress::ipv4([240 | (x[1] & 0x0F), x[2], x[3], 1], 8333)
}

fn is_cookie(a: &NetAddress) -> bool {
    a.is_ip() && a.host_bytes()[0] >= 240
}

fn routable<R: Rng + ?Sized>(rng: &mut R) -> NetAddress {
    NetAddress::ipv4([rng.gen_range(1..224), rng.gen(), rng.gen(), rng.gen()], 8333)
}

/// Survivors at the start of each session, for one seeded run.
pub fn cookie_survival<R: Rng + ?Sized>(
    dist: &TimestampDistribution,
    params: &CookieSurvivalParams,
    rng: &mut R,
) -> Result<Vec<usize>, String> {
    params.validate()?;
    let hour = 3600.0;
    let mut book = AddrBook::new(TransportMode::Direct, Salt::random(rng));
    while book.len() < params.book_size {
        let age = (dist.sample_hours(rng) * hour) as i64;
        book.add_address(routable(rng), routable(rng), -age, 0, rng);
    }
    let attacker = NetAddress::ipv4([203, 0, 113, 7], 8333);
    let cookie: Vec<NetAddress> = (0..params.cookie_size).map(cookie_address).collect();
    for a in &cookie {
        book.add_address(*a, attacker, 0, 0, rng);
    }
    let novel = params.novel_per_session();
    let mut survivors = Vec::with_capacity(params.session_hours.len());
    for &h in &params.session_hours {
        survivors.push(cookie.iter().filter(|a| book.contains(a)).count());
        let now = (h * hour) as i64;
        if params.refresh_ages {
            let resident: Vec<NetAddress> = book
                .entries()
                .map(|e| e.address)
                .filter(|a| !is_cookie(a))
                .collect();
            for a in resident {
                book.refresh(&a, now - (dist.sample_hours(rng) * hour) as i64);
            }
        }
        let mut inserted = 0;
        while inserted < novel {
            let a = routable(rng);
            if book.contains(&a) {
                continue;
            }
            let age = (dist.sample_hours(rng) * hour) as i64;
            book.add_address(a, routable(rng), now - age, now, rng);
            inserted += 1;
        }
    }
    Ok(survivors)
}

/// Mean survivors per session over `runs` independent books.
pub fn mean_cookie_survival<R: Rng + ?Sized>(
    dist: &TimestampDistribution,
    params: &CookieSurvivalParams,
    runs: usize,
    rng: &mut R,
) -> Result<Vec<f64>, String> {
    let runs = runs.max(1);
    let mut acc = vec![0.0; params.session_hours.len()];
    for _ in 0..runs {
        for (a, s) in acc.iter_mut().zip(cookie_survival(dist, params, rng)?) {
            *a += s as f64;
        }
    }
    Ok(acc.into_iter().map(|a| a / runs as f64).collect())
}

/// Expected fraction of an intact cookie recovered after `probes` GETADDR
/// replies from a book of `book_size` entries: each reply is a uniform
/// sample without replacement.
pub fn expected_recovery(book_size: usize, probes: u32) -> f64 {
    if book_size == 0 {
        return 0.0;
    }
    let per = crate::addrbook::getaddr_size(book_size) as f64 / book_size as f64;
    1.0 - (1.0 - per).powi(probes as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn table_one_is_monotone_and_anchored() {
        let d = TimestampDistribution::table_one();
        assert_eq!(d.points().first(), Some(&(3.0, 0.89)));
        assert_eq!(d.points().last(), Some(&(168.0, 0.09)));
        assert_eq!(d.points().len(), 9);
        assert!(d.points().windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(d.survival(10.0), 0.45);
        assert!((d.survival(7.5) - 0.61).abs() < 1e-12);
        assert_eq!(d.survival(1000.0), 0.0);
    }

    #[test]
    fn rejects_increasing_survival() {
        assert_eq!(
            TimestampDistribution::new(vec![(1.0, 0.5), (2.0, 0.6)]),
            Err(DistributionError::NotMonotone)
        );
        assert!(matches!(
            TimestampDistribution::parse("3,0.9\nx,1\n"),
            Err(DistributionError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn sampler_reproduces_the_ccdf() {
        let d = TimestampDistribution::table_one();
        let mut rng = seeded(1);
        let n = 200_000;
        let ages: Vec<f64> = (0..n).map(|_| d.sample_hours(&mut rng)).collect();
        for (h, s) in d.points() {
            let emp = ages.iter().filter(|&&a| a > *h).count() as f64 / n as f64;
            assert!((emp - s).abs() < 0.005, "{h}: {emp} vs {s}");
        }
    }

    #[test]
    fn table_two_fixture() {
        let t = table_two();
        assert_eq!(t.len(), 10);
        assert_eq!(t[7], (8, 3.5, 92));
        assert_eq!(t[9], (10, 8.0, 36));
    }

    #[test]
    fn nothing_new_nothing_lost() {
        let d = TimestampDistribution::table_one();
        let p = CookieSurvivalParams { new_frac: 0.0, book_size: 3000, ..Default::default() };
        let s = cookie_survival(&d, &p, &mut seeded(2)).unwrap();
        assert!(s.iter().all(|&c| c == 100));
    }

    #[test]
    fn survivors_never_increase() {
        let d = TimestampDistribution::table_one();
        let p = CookieSurvivalParams { new_frac: 0.3, ..Default::default() };
        let s = cookie_survival(&d, &p, &mut seeded(3)).unwrap();
        assert_eq!(s[0], 100);
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn recovery_closed_form() {
        // 2500 of 12000 per reply
        let x = expected_recovery(12_000, 8);
        assert!((x - (1.0 - (1.0 - 2500.0 / 12000.0f64).powi(8))).abs() < 1e-15);
        assert_eq!(expected_recovery(0, 8), 0.0);
        assert!((expected_recovery(1000, 1) - 0.23).abs() < 1e-12);
    }
}
