//! The Tor side: relays and exit policies, stream retries, and the
//! hidden-service directory ring.

pub mod consensus;
pub mod hsdir;
pub mod stream;

use thiserror::Error;

pub use consensus::{
    pick_exit, Consensus, ExitPolicy, ExitSelector, Fingerprint, GuardSet, Operator, RelayDescriptor,
    RelayFlags,
};
pub use hsdir::{descriptor_ids, hsdir_ring, responsible_directories};
pub use stream::{
    exit_behavior, run_stream, CircuitAttempt, ExitBehavior, ExitMix, StreamAttempt, StreamContext,
    StreamOutcome, StreamTarget, StreamTiming,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TorError {
    #[error("no exit advertises port {0}")]
    NoExit(u16),
    #[error("ring has {have} HSDir relays, {need} needed")]
    InsufficientRelays { have: usize, need: usize },
    #[error("need {need} guard relays, consensus has {have}")]
    NotEnoughGuards { need: usize, have: usize },
    #[error("relay {0} has the Exit flag but its policy does not allow two of ports 80, 443, 6667")]
    ExitFlagPolicy(String),
    #[error("consensus line {line}, column {column}: {message}")]
    Fixture { line: usize, column: usize, message: String },
}
