//! Stream lifecycle: how long a client's Tor client keeps trying circuits for
//! one destination, and how the attempt ends.
//!
//! Circuit build time is zero; the clock advances only on timeout waits and
//! on END cells. All times are milliseconds relative to the stream start.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::consensus::{Consensus, ExitSelector, Fingerprint, GuardSet, RelayDescriptor};

/// What an exit does with a stream to one destination.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitBehavior {
    /// Sends nothing; the client gives up on the circuit after its timeout.
    Silent,
    /// END cell with reason "timeout"; the application sees TTL expired.
    EndTimeout,
    /// END cell with reason "resolve failed"; the client tries another exit.
    EndResolveFailed,
    /// Carries the stream to its destination (or, for an attacker, elsewhere).
    Forward,
}

/// Mix of behaviors honest exits show for unreachable destinations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitMix {
    pub silent: f64,
    pub end_timeout: f64,
    pub end_resolve_failed: f64,
}

impl Default for ExitMix {
    /// Calibrated so that an unreachable destination costs 39.66 s and 4.61
    /// circuits on average under the default timing.
    fn default() -> Self {
        ExitMix { silent: 0.65, end_timeout: 0.18, end_resolve_failed: 0.17 }
    }
}

impl ExitMix {
    pub fn validate(&self) -> Result<(), String> {
        let parts = [self.silent, self.end_timeout, self.end_resolve_failed];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("exit mix probabilities must lie in [0, 1]".into());
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("exit mix must sum to 1, sums to {sum}"));
        }
        Ok(())
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ExitBehavior {
        let x: f64 = rng.gen();
        if x < self.silent {
            ExitBehavior::Silent
        } else if x < self.silent + self.end_timeout {
            ExitBehavior::EndTimeout
        } else {
            ExitBehavior::EndResolveFailed
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamTiming {
    /// Circuit timeout for the first `fast_attempts` circuits.
    pub first_timeout_ms: u64,
    pub fast_attempts: u32,
    /// Circuit timeout afterwards.
    pub later_timeout_ms: u64,
    /// The stream is abandoned with a general failure at this point.
    pub budget_ms: u64,
    /// Delay before an END cell reaches the client.
    pub end_latency_ms: u64,
    /// Delay before a destination's rejection reaches the client.
    pub refused_ms: u64,
    /// Delay to complete a successful connection.
    pub connect_ms: u64,
    /// Resolve failures after which the client reports host unreachable.
    pub max_resolve_failures: u32,
}

impl Default for StreamTiming {
    fn default() -> Self {
        StreamTiming {
            first_timeout_ms: 10_000,
            fast_attempts: 2,
            later_timeout_ms: 15_000,
            budget_ms: 125_000,
            end_latency_ms: 500,
            refused_ms: 500,
            connect_ms: 500,
            max_resolve_failures: 3,
        }
    }
}

impl StreamTiming {
    /// Timeout of circuit number `index`, counting from 1.
    pub fn circuit_timeout(&self, index: u32) -> u64 {
        if index <= self.fast_attempts {
            self.first_timeout_ms
        } else {
            self.later_timeout_ms
        }
    }
}

/// Decides the behavior of `exit` for a stream to a destination on `port`.
/// `reachable` says whether anything listens there.
pub fn exit_behavior<R: Rng + ?Sized>(
    exit: &RelayDescriptor,
    port: u16,
    reachable: bool,
    mix: &ExitMix,
    rng: &mut R,
) -> ExitBehavior {
    if exit.is_attacker() {
        ExitBehavior::Forward
    } else if !exit.real_policy.allows(port) {
        // a lying exit just drops the stream
        ExitBehavior::Silent
    } else if reachable {
        ExitBehavior::Forward
    } else {
        mix.draw(rng)
    }
}

/// The destination side of a stream.
pub trait StreamTarget {
    fn port(&self) -> u16;
    fn reachable(&self) -> bool;
    /// Called when an honest exit opens the TCP connection at `at_ms` into the
    /// stream; returns false if the destination rejects it.
    fn admit(&mut self, exit: &RelayDescriptor, at_ms: u64) -> bool;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamOutcome {
    /// Connected through `exit`; `via_attacker` when an attacker exit
    /// redirected the stream to attacker infrastructure.
    Connected { exit: Fingerprint, via_attacker: bool },
    SocksTtlExpired,
    SocksHostUnreachable,
    SocksGeneralFailure,
    /// The destination turned the exit away (ban or full).
    Refused { exit: Fingerprint },
}

impl StreamOutcome {
    pub fn is_connected(&self) -> bool {
        matches!(self, StreamOutcome::Connected { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitAttempt {
    pub index: u32,
    pub guard: Fingerprint,
    pub exit: Fingerprint,
    pub behavior: ExitBehavior,
    pub started_ms: u64,
    pub dwell_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamAttempt {
    pub started_ms: u64,
    pub circuits: Vec<CircuitAttempt>,
    pub outcome: StreamOutcome,
    /// Time from start to the outcome.
    pub duration_ms: u64,
}

/// Everything a stream needs from its client and the network.
pub struct StreamContext<'a> {
    pub consensus: &'a Consensus,
    pub exits: &'a ExitSelector,
    pub guards: &'a GuardSet,
    pub mix: &'a ExitMix,
    pub timing: &'a StreamTiming,
}

impl<'a> StreamContext<'a> {
    pub fn run<T: StreamTarget + ?Sized, R: Rng + ?Sized>(
        &self,
        target: &mut T,
        started_ms: u64,
        rng: &mut R,
    ) -> StreamAttempt {
        run_stream(self, target, started_ms, rng)
    }
}

/// Plays one stream to completion.
pub fn run_stream<T: StreamTarget + ?Sized, R: Rng + ?Sized>(
    ctx: &StreamContext<'_>,
    target: &mut T,
    started_ms: u64,
    rng: &mut R,
) -> StreamAttempt {
    let timing = ctx.timing;
    let port = target.port();
    let reachable = target.reachable();
    let mut elapsed = 0u64;
    let mut resolves = 0u32;
    let mut circuits = Vec::new();
    let mut index = 0u32;
    let finish = |circuits, outcome, duration_ms| StreamAttempt {
        started_ms,
        circuits,
        outcome,
        duration_ms,
    };
    loop {
        index += 1;
        let guard = ctx.guards.pick(rng);
        let exit = &ctx.consensus.relays[ctx.exits.pick(rng)];
        let behavior = exit_behavior(exit, port, reachable, ctx.mix, rng);
        let mut circuit = CircuitAttempt {
            index,
            guard,
            exit: exit.fingerprint,
            behavior,
            started_ms: started_ms + elapsed,
            dwell_ms: 0,
        };
        match behavior {
            ExitBehavior::Silent => {
                let timeout = timing.circuit_timeout(index);
                if elapsed + timeout >= timing.budget_ms {
                    circuit.dwell_ms = timing.budget_ms - elapsed;
                    circuits.push(circuit);
                    return finish(circuits, StreamOutcome::SocksGeneralFailure, timing.budget_ms);
                }
                circuit.dwell_ms = timeout;
                elapsed += timeout;
                circuits.push(circuit);
            }
            ExitBehavior::EndTimeout => {
                circuit.dwell_ms = timing.end_latency_ms;
                circuits.push(circuit);
                return finish(circuits, StreamOutcome::SocksTtlExpired, elapsed + timing.end_latency_ms);
            }
            ExitBehavior::EndResolveFailed => {
                circuit.dwell_ms = timing.end_latency_ms;
                elapsed += timing.end_latency_ms;
                circuits.push(circuit);
                resolves += 1;
                if resolves >= timing.max_resolve_failures {
                    return finish(circuits, StreamOutcome::SocksHostUnreachable, elapsed);
                }
                if elapsed >= timing.budget_ms {
                    return finish(circuits, StreamOutcome::SocksGeneralFailure, timing.budget_ms);
                }
            }
            ExitBehavior::Forward => {
                let outcome = if exit.is_attacker() {
                    StreamOutcome::Connected { exit: exit.fingerprint, via_attacker: true }
                } else if target.admit(exit, elapsed) {
                    StreamOutcome::Connected { exit: exit.fingerprint, via_attacker: false }
                } else {
                    StreamOutcome::Refused { exit: exit.fingerprint }
                };
                let dwell = if outcome.is_connected() { timing.connect_ms } else { timing.refused_ms };
                circuit.dwell_ms = dwell;
                circuits.push(circuit);
                return finish(circuits, outcome, elapsed + dwell);
            }
        }
    }
}

/// Expected duration (seconds) and circuit count of a stream to an
/// unreachable destination when every exit is honest and applies `mix`.
/// Exact enumeration of the behavior tree.
pub fn unreachable_expectation(mix: &ExitMix, timing: &StreamTiming) -> (f64, f64) {
    fn go(mix: &ExitMix, t: &StreamTiming, circuits: u32, elapsed: u64, resolves: u32) -> (f64, f64) {
        let index = circuits + 1;
        let c = index as f64;
        let mut time = 0.0;
        let mut count = 0.0;
        let timeout = t.circuit_timeout(index);
        if mix.silent > 0.0 {
            if elapsed + timeout >= t.budget_ms {
                time += mix.silent * t.budget_ms as f64;
                count += mix.silent * c;
            } else {
                let (a, b) = go(mix, t, index, elapsed + timeout, resolves);
                time += mix.silent * a;
                count += mix.silent * b;
            }
        }
        time += mix.end_timeout * (elapsed + t.end_latency_ms) as f64;
        count += mix.end_timeout * c;
        if mix.end_resolve_failed > 0.0 {
            let after = elapsed + t.end_latency_ms;
            if resolves + 1 >= t.max_resolve_failures || after >= t.budget_ms {
                let end = after.min(t.budget_ms);
                time += mix.end_resolve_failed * end as f64;
                count += mix.end_resolve_failed * c;
            } else {
                let (a, b) = go(mix, t, index, after, resolves + 1);
                time += mix.end_resolve_failed * a;
                count += mix.end_resolve_failed * b;
            }
        }
        (time, count)
    }
    let (ms, circuits) = go(mix, timing, 0, 0, 0);
    (ms / 1000.0, circuits)
}
