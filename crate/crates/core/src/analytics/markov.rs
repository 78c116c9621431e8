//! Time to capture as a three-state absorbing Markov chain.
//!
//! Each round the client selects a peer. With probability `a` it is an
//! attacker peer (captured). With probability `u` it is unreachable (state 1):
//! Tor cycles through about `c` circuits and an attacker exit turns up with
//! probability `p1 = 1 - (1 - e)^c`. Otherwise the peer is honest and bans
//! every honest exit (state 2): capture iff the single exit is the
//! attacker's, probability `e`. A failed round starts a new selection.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("capture is not certain; the expected time is infinite")]
    NoCapture,
    #[error("a trial exceeded {0} rounds without capture")]
    Diverged(u64),
    #[error("at least one trial is required")]
    NoTrials,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkovParams {
    pub frac_unreachable: f64,
    pub frac_attacker_peers: f64,
    pub exit_share: f64,
    pub circuits_per_unreachable: f64,
    /// Seconds per visit to state 1.
    pub dwell_state1: f64,
    /// Seconds per visit to state 2.
    pub dwell_state2: f64,
}

impl Default for MarkovParams {
    fn default() -> Self {
        MarkovParams {
            frac_unreachable: 2.0 / 3.0,
            frac_attacker_peers: 0.0,
            exit_share: 0.0,
            circuits_per_unreachable: 4.6,
            dwell_state1: 39.6,
            dwell_state2: 0.5,
        }
    }
}

impl MarkovParams {
    pub fn validate(&self) -> Result<(), MarkovError> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(MarkovError::InvalidParams(format!("{name} = {v} is not in [0, 1]")))
            }
        };
        prob("frac_unreachable", self.frac_unreachable)?;
        prob("frac_attacker_peers", self.frac_attacker_peers)?;
        prob("exit_share", self.exit_share)?;
        if self.frac_unreachable + self.frac_attacker_peers > 1.0 + 1e-12 {
            return Err(MarkovError::InvalidParams(
                "frac_unreachable + frac_attacker_peers exceeds 1".into(),
            ));
        }
        for (name, v) in [
            ("circuits_per_unreachable", self.circuits_per_unreachable),
            ("dwell_state1", self.dwell_state1),
            ("dwell_state2", self.dwell_state2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MarkovError::InvalidParams(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    fn frac_reachable_honest(&self) -> f64 {
        (1.0 - self.frac_attacker_peers - self.frac_unreachable).max(0.0)
    }

    /// Capture probability during one visit to state 1.
    pub fn p1(&self) -> f64 {
        1.0 - (1.0 - self.exit_share).powf(self.circuits_per_unreachable)
    }
}

/// Transient part of the chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Rows and columns: state 1, state 2.
    pub q: [[f64; 2]; 2],
    /// Probability of absorption leaving each transient state.
    pub absorb: [f64; 2],
    /// Distribution of the first selection round over (state 1, state 2);
    /// the remainder is immediate absorption.
    pub entry: [f64; 2],
}

pub fn transition_matrix(p: &MarkovParams) -> Transition {
    let u = p.frac_unreachable;
    let r = p.frac_reachable_honest();
    let p1 = p.p1();
    let e = p.exit_share;
    let q = [[(1.0 - p1) * u, (1.0 - p1) * r], [(1.0 - e) * u, (1.0 - e) * r]];
    let absorb = [1.0 - q[0][0] - q[0][1], 1.0 - q[1][0] - q[1][1]];
    Transition { q, absorb, entry: [u, r] }
}

/// `N = (I - Q)^-1` in closed form.
pub fn fundamental_matrix(q: &[[f64; 2]; 2]) -> Result<[[f64; 2]; 2], MarkovError> {
    let (a, b, c, d) = (1.0 - q[0][0], -q[0][1], -q[1][0], 1.0 - q[1][1]);
    let det = a * d - b * c;
    if det.abs() < 1e-12 {
        return Err(MarkovError::NoCapture);
    }
    Ok([[d / det, -b / det], [-c / det, a / det]])
}

/// Expected visits to (state 1, state 2) before capture.
pub fn expected_visits(p: &MarkovParams) -> Result<[f64; 2], MarkovError> {
    p.validate()?;
    let t = transition_matrix(p);
    let n = fundamental_matrix(&t.q)?;
    Ok([
        t.entry[0] * n[0][0] + t.entry[1] * n[1][0],
        t.entry[0] * n[0][1] + t.entry[1] * n[1][1],
    ])
}

/// Mean seconds until the client first lands on attacker infrastructure.
pub fn expected_capture_time(p: &MarkovParams) -> Result<f64, MarkovError> {
    let v = expected_visits(p)?;
    Ok(v[0] * p.dwell_state1 + v[1] * p.dwell_state2)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    pub trials: u64,
}

impl MonteCarlo {
    pub fn contains(&self, x: f64) -> bool {
        (x - self.mean).abs() <= self.ci95
    }
}

/// Rounds after which a single trial is declared divergent.
pub const ROUND_CAP: u64 = 10_000_000;

/// Plays the round process directly, `trials` times.
pub fn monte_carlo_capture_time<R: Rng + ?Sized>(
    p: &MarkovParams,
    trials: u64,
    rng: &mut R,
) -> Result<MonteCarlo, MarkovError> {
    p.validate()?;
    if trials == 0 {
        return Err(MarkovError::NoTrials);
    }
    let a = p.frac_attacker_peers;
    let u = p.frac_unreachable;
    let p1 = p.p1();
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let mut time = 0.0;
        let mut rounds = 0u64;
        loop {
            rounds += 1;
            if rounds > ROUND_CAP {
                return Err(MarkovError::Diverged(ROUND_CAP));
            }
            let x: f64 = rng.gen();
            if x < a {
                break;
            }
            if x < a + u {
                time += p.dwell_state1;
                if rng.gen::<f64>() < p1 {
                    break;
                }
            } else {
                time += p.dwell_state2;
                if rng.gen::<f64>() < p.exit_share {
                    break;
                }
            }
        }
        sum += time;
        sum_sq += time * time;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(MonteCarlo { mean, ci95: 1.96 * (var / n).sqrt(), trials })
}

/// How sybil peers translate into the attacker's share of selections.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Amplification {
    /// Each sybil address is as likely as any honest one.
    #[default]
    Plain,
    /// Persistent advertisement puts each sybil into four new buckets.
    Factor4,
}

/// Attacker share of selections among `sybils` attacker and `honest`
/// reachable servers, with `frac_unreachable` of the book unreachable.
pub fn frac_attacker_peers(sybils: u64, honest: u64, frac_unreachable: f64, mode: Amplification) -> f64 {
    let s = sybils as f64 * if mode == Amplification::Factor4 { 4.0 } else { 1.0 };
    let h = honest as f64;
    if s + h == 0.0 {
        return 0.0;
    }
    (1.0 - frac_unreachable) * s / (s + h)
}
