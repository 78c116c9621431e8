//! Network endpoints: IPv4, IPv6 and OnionCat addresses with a port.
//!
//! An OnionCat address is an IPv6-shaped encoding of a Tor onion identity:
//! the fixed prefix `FD87:D87E:EB43` followed by the 10 identity bytes.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use data_encoding::BASE32_NOPAD;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// First six bytes of every OnionCat address.
pub const ONIONCAT_PREFIX: [u8; 6] = [0xFD, 0x87, 0xD8, 0x7E, 0xEB, 0x43];

/// Default Bitcoin port.
pub const DEFAULT_PORT: u16 = 8333;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AddrError {
    #[error("not an OnionCat address")]
    InvalidOnionCat,
    #[error("port must be in 1..=65535")]
    InvalidPort,
    #[error("cannot parse address `{0}`")]
    Parse(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AddrKind {
    Ipv4,
    Ipv6,
    OnionCat,
}

impl AddrKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            AddrKind::Ipv4 => 1,
            AddrKind::Ipv6 => 2,
            AddrKind::OnionCat => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(AddrKind::Ipv4),
            2 => Some(AddrKind::Ipv6),
            3 => Some(AddrKind::OnionCat),
            _ => None,
        }
    }
}

/// Host part of an address: everything except the port.
///
/// Address-database membership is decided on this key, so two advertisements
/// that differ only in port refer to the same entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HostKey {
    pub kind: AddrKind,
    pub raw: [u8; 16],
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NetAddress {
    kind: AddrKind,
    raw: [u8; 16],
    port: u16,
}

impl NetAddress {
    pub fn ipv4(octets: [u8; 4], port: u16) -> Self {
        let mut raw = [0u8; 16];
        raw[..4].copy_from_slice(&octets);
        NetAddress { kind: AddrKind::Ipv4, raw, port }
    }

    /// Builds an IPv6 address. Bytes carrying the OnionCat prefix are
    /// classified as OnionCat.
    pub fn ipv6(raw: [u8; 16], port: u16) -> Self {
        let kind = if raw[..6] == ONIONCAT_PREFIX {
            AddrKind::OnionCat
        } else {
            AddrKind::Ipv6
        };
        NetAddress { kind, raw, port }
    }

    /// Encodes a 10-byte onion identity as an OnionCat address.
    pub fn onioncat(onion_id: [u8; 10], port: u16) -> Self {
        let mut raw = [0u8; 16];
        raw[..6].copy_from_slice(&ONIONCAT_PREFIX);
        raw[6..].copy_from_slice(&onion_id);
        NetAddress { kind: AddrKind::OnionCat, raw, port }
    }

    /// Recovers the 10-byte onion identity.
    pub fn onion_id(&self) -> Result<[u8; 10], AddrError> {
        if self.kind != AddrKind::OnionCat || self.raw[..6] != ONIONCAT_PREFIX {
            return Err(AddrError::InvalidOnionCat);
        }
        let mut id = [0u8; 10];
        id.copy_from_slice(&self.raw[6..]);
        Ok(id)
    }

    pub(crate) fn from_parts(kind: AddrKind, raw: [u8; 16], port: u16) -> Option<Self> {
        match kind {
            AddrKind::Ipv4 if raw[4..].iter().any(|b| *b != 0) => None,
            AddrKind::OnionCat if raw[..6] != ONIONCAT_PREFIX => None,
            AddrKind::Ipv6 if raw[..6] == ONIONCAT_PREFIX => None,
            _ => Some(NetAddress { kind, raw, port }),
        }
    }

    pub fn kind(&self) -> AddrKind {
        self.kind
    }

    pub fn raw(&self) -> &[u8; 16] {
        &self.raw
    }

    /// The meaningful bytes: 4 for IPv4, 16 otherwise.
    pub fn host_bytes(&self) -> &[u8] {
        match self.kind {
            AddrKind::Ipv4 => &self.raw[..4],
            _ => &self.raw[..],
        }
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn with_port(mut self, port: u16) -> Self {
        self.port = port;
        self
    }

    pub fn host(&self) -> HostKey {
        HostKey { kind: self.kind, raw: self.raw }
    }

    /// Same host, any port.
    pub fn same_host(&self, other: &NetAddress) -> bool {
        self.host() == other.host()
    }

    /// Network group used to spread addresses across buckets: the /16 for
    /// IPv4, the /32 for IPv6 and the first two identity bytes for onions.
    pub fn group(&self) -> [u8; 5] {
        let mut g = [0u8; 5];
        g[0] = self.kind.tag();
        match self.kind {
            AddrKind::Ipv4 => g[1..3].copy_from_slice(&self.raw[..2]),
            AddrKind::Ipv6 => g[1..5].copy_from_slice(&self.raw[..4]),
            AddrKind::OnionCat => g[1..3].copy_from_slice(&self.raw[6..8]),
        }
        g
    }

    pub fn is_ip(&self) -> bool {
        matches!(self.kind, AddrKind::Ipv4 | AddrKind::Ipv6)
    }
}

impl fmt::Display for NetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            AddrKind::Ipv4 => {
                let ip = Ipv4Addr::new(self.raw[0], self.raw[1], self.raw[2], self.raw[3]);
                write!(f, "{}:{}", ip, self.port)
            }
            AddrKind::Ipv6 => write!(f, "[{}]:{}", Ipv6Addr::from(self.raw), self.port),
            AddrKind::OnionCat => {
                let name = BASE32_NOPAD.encode(&self.raw[6..]).to_ascii_lowercase();
                write!(f, "{}.onion:{}", name, self.port)
            }
        }
    }
}

impl fmt::Debug for NetAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

fn parse_port(s: &str, whole: &str) -> Result<u16, AddrError> {
    let port: u16 = s.parse().map_err(|_| AddrError::Parse(whole.to_string()))?;
    if port == 0 {
        return Err(AddrError::InvalidPort);
    }
    Ok(port)
}

impl FromStr for NetAddress {
    type Err = AddrError;

    /// Accepts `1.2.3.4:8333`, `[2001:db8::1]:8333` and `xxxxxxxxxxxxxxxx.onion:8333`.
    /// A missing port defaults to 8333.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || AddrError::Parse(s.to_string());
        if let Some(rest) = s.strip_prefix('[') {
            let (host, tail) = rest.split_once(']').ok_or_else(err)?;
            let ip: Ipv6Addr = host.parse().map_err(|_| err())?;
            let port = match tail.strip_prefix(':') {
                Some(p) => parse_port(p, s)?,
                None if tail.is_empty() => DEFAULT_PORT,
                None => return Err(err()),
            };
            return Ok(NetAddress::ipv6(ip.octets(), port));
        }
        let (host, port) = match s.rsplit_once(':') {
            Some((h, p)) => (h, parse_port(p, s)?),
            None => (s, DEFAULT_PORT),
        };
        if let Some(name) = host.strip_suffix(".onion") {
            let bytes = BASE32_NOPAD
                .decode(name.to_ascii_uppercase().as_bytes())
                .map_err(|_| err())?;
            let id: [u8; 10] = bytes.try_into().map_err(|_| err())?;
            return Ok(NetAddress::onioncat(id, port));
        }
        let ip: Ipv4Addr = host.parse().map_err(|_| err())?;
        Ok(NetAddress::ipv4(ip.octets(), port))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn onioncat_has_fixed_prefix() {
        let a = NetAddress::onioncat([7; 10], 8333);
        assert_eq!(a.raw()[..6], [0xFD, 0x87, 0xD8, 0x7E, 0xEB, 0x43]);
        assert_eq!(a.kind(), AddrKind::OnionCat);
    }

    #[test]
    fn decoding_ipv4_is_rejected() {
        let a = NetAddress::ipv4([1, 2, 3, 4], 8333);
        assert_eq!(a.onion_id(), Err(AddrError::InvalidOnionCat));
    }

    #[test]
    fn ipv6_with_prefix_is_onioncat() {
        let a = NetAddress::onioncat([1; 10], 8333);
        assert_eq!(NetAddress::ipv6(*a.raw(), 8333).kind(), AddrKind::OnionCat);
    }

    #[test]
    fn parses_the_three_kinds() {
        let a: NetAddress = "2fvnnvj2hiljjwck.onion:8333".parse().unwrap();
        assert_eq!(a.kind(), AddrKind::OnionCat);
        assert_eq!(a.to_string(), "2fvnnvj2hiljjwck.onion:8333");
        let b: NetAddress = "38.229.70.2:8333".parse().unwrap();
        assert_eq!(b, NetAddress::ipv4([38, 229, 70, 2], 8333));
        let c: NetAddress = "[2001:db8::1]:18333".parse().unwrap();
        assert_eq!(c.kind(), AddrKind::Ipv6);
        assert_eq!(c.port(), 18333);
        assert!("1.2.3.4:0".parse::<NetAddress>().is_err());
        assert!("nonsense".parse::<NetAddress>().is_err());
    }

    #[test]
    fn host_key_ignores_port() {
        let a = NetAddress::ipv4([9, 9, 9, 9], 8333);
        assert!(a.same_host(&a.with_port(1234)));
        assert_ne!(a, a.with_port(1234));
    }

    proptest! {
        #[test]
        fn onioncat_roundtrip(id in any::<[u8; 10]>(), port in 1u16..) {
            let a = NetAddress::onioncat(id, port);
            prop_assert_eq!(a.onion_id().unwrap(), id);
            let parsed: NetAddress = a.to_string().parse().unwrap();
            prop_assert_eq!(parsed, a);
        }
    }
}
