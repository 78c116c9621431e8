//! Simulator and analytics for man-in-the-middle and fingerprinting attacks
//! on Bitcoin clients that reach the network through Tor.

pub mod addrbook;
pub mod netaddr;
pub mod rng;
pub mod tor;
pub mod bitcoin;
pub mod adversary;
pub mod analytics;
pub mod harness;
