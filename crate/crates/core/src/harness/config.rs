//! Scenario files.
//!
//! A scenario is a TOML document. Every table and key is optional and falls
//! back to the default shown; unknown keys are rejected.
//!
//! ```toml
//! name = "default"
//! seed = 1
//! duration_s = 3600
//!
//! [topology]
//! honest_servers = 100        # simulated reachable Bitcoin servers
//! unreachable_addrs = 200     # dead addresses in every client's book
//! onion_peers = 0             # reachable hidden-service peers
//! onion_census = ""           # census fixture path; its addresses become the onion peers
//! dns_seeds = 6               # servers behind the DNS seed hostnames
//! consensus = ""              # fixture path, relative to this file; empty = synthetic
//! honest_exits = 40           # synthetic consensus only
//! honest_exit_weight = 5300000
//! guard_relays = 30
//! hsdir_relays = 200
//!
//! [attacker]
//! sybils = 0                  # attacker Bitcoin servers, one IP each
//! onion_sybils = 0            # attacker onion peers
//! exit_weight = 400000        # synthetic consensus only; split into 69k relays
//! ip_budget = 0               # rented IPs for slot exhaustion
//! ban_campaign = false
//! cookies = false
//! exhaustion = false
//! port_poison = false
//! blackhole = false
//! cookie_size = 100
//! cookie_probes = 8
//! match_threshold = 0.2
//! advertise_sources = 16      # relay identities used to advertise sybils
//! exhaust_interval_s = 60
//!
//! [clients]
//! count = 10
//! mode = "over_tor"           # or "direct"
//! sessions = [[0, 3600]]      # [start_s, end_s] pairs, ascending
//!
//! [toggles]
//! dos_mode = "always_on"      # or "coin_flip"
//! guards = 3                  # 1 or 3
//! ban_drops_live_connections = true
//! amplification = "plain"     # or "factor4"
//!
//! [tor.mix]                   # honest exits facing an unreachable destination
//! silent = 0.65
//! end_timeout = 0.18
//! end_resolve_failed = 0.17
//!
//! [tor.timing]                # milliseconds
//! first_timeout_ms = 10000
//! fast_attempts = 2
//! later_timeout_ms = 15000
//! budget_ms = 125000
//! end_latency_ms = 500
//! refused_ms = 500
//! connect_ms = 500
//! max_resolve_failures = 3
//!
//! [direct]                    # plain TCP, milliseconds
//! connect_ms = 100
//! refused_ms = 100
//! timeout_ms = 5000
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrbook::TransportMode;
use crate::analytics::Amplification;
use crate::bitcoin::DosMode;
use crate::netaddr::{AddrKind, NetAddress};
use crate::tor::{ExitMix, StreamTiming};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{0}")]
    Syntax(String),
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    pub duration_s: u64,
    pub topology: Topology,
    pub attacker: AttackerConfig,
    pub clients: ClientConfig,
    pub toggles: Toggles,
    pub tor: TorConfig,
    pub direct: DirectTiming,
    /// Directory that relative fixture paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Topology {
    pub honest_servers: usize,
    pub unreachable_addrs: usize,
    pub onion_peers: usize,
    pub onion_census: String,
    pub dns_seeds: usize,
    pub consensus: String,
    pub honest_exits: usize,
    pub honest_exit_weight: u64,
    pub guard_relays: usize,
    pub hsdir_relays: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerConfig {
    pub sybils: usize,
    pub onion_sybils: usize,
    pub exit_weight: u64,
    pub ip_budget: usize,
    pub ban_campaign: bool,
    pub cookies: bool,
    pub exhaustion: bool,
    pub port_poison: bool,
    pub blackhole: bool,
    pub cookie_size: usize,
    pub cookie_probes: u32,
    pub match_threshold: f64,
    pub advertise_sources: usize,
    pub exhaust_interval_s: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClientConfig {
    pub count: usize,
    pub mode: TransportMode,
    pub sessions: Vec<[u64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub dos_mode: DosMode,
    pub guards: usize,
    pub ban_drops_live_connections: bool,
    pub amplification: Amplification,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TorConfig {
    pub mix: ExitMix,
    pub timing: StreamTiming,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DirectTiming {
    pub connect_ms: u64,
    pub refused_ms: u64,
    pub timeout_ms: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "default".into(),
            seed: 1,
            duration_s: 3600,
            topology: Topology::default(),
            attacker: AttackerConfig::default(),
            clients: ClientConfig::default(),
            toggles: Toggles::default(),
            tor: TorConfig::default(),
            direct: DirectTiming::default(),
            base_dir: None,
        }
    }
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            honest_servers: 100,
            unreachable_addrs: 200,
            onion_peers: 0,
            onion_census: String::new(),
            dns_seeds: 6,
            consensus: String::new(),
            honest_exits: 40,
            honest_exit_weight: 5_300_000,
            guard_relays: 30,
            hsdir_relays: 200,
        }
    }
}

impl Default for AttackerConfig {
    fn default() -> Self {
        AttackerConfig {
            sybils: 0,
            onion_sybils: 0,
            exit_weight: 400_000,
            ip_budget: 0,
            ban_campaign: false,
            cookies: false,
            exhaustion: false,
            port_poison: false,
            blackhole: false,
            cookie_size: 100,
            cookie_probes: 8,
            match_threshold: crate::adversary::DEFAULT_MATCH_THRESHOLD,
            advertise_sources: 16,
            exhaust_interval_s: 60,
        }
    }
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { count: 10, mode: TransportMode::OverTor, sessions: Vec::new() }
    }
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles {
            dos_mode: DosMode::AlwaysOn,
            guards: 3,
            ban_drops_live_connections: true,
            amplification: Amplification::Plain,
        }
    }
}

impl Default for DirectTiming {
    fn default() -> Self {
        DirectTiming { connect_ms: 100, refused_ms: 100, timeout_ms: 5000 }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Client sessions; an empty list means one session over the whole run.
    pub fn sessions(&self) -> Vec<[u64; 2]> {
        if self.clients.sessions.is_empty() {
            vec![[0, self.duration_s]]
        } else {
            self.clients.sessions.clone()
        }
    }

    fn resolve(&self, file: &str) -> Option<PathBuf> {
        if file.is_empty() {
            return None;
        }
        let p = PathBuf::from(file);
        Some(match (&self.base_dir, p.is_relative()) {
            (Some(dir), true) => dir.join(p),
            _ => p,
        })
    }

    pub fn consensus_path(&self) -> Option<PathBuf> {
        self.resolve(&self.topology.consensus)
    }

    pub fn census_path(&self) -> Option<PathBuf> {
        self.resolve(&self.topology.onion_census)
    }

    /// Checks every rule and reports all violations at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let t = &self.topology;
        let a = &self.attacker;
        if self.duration_s == 0 {
            errs.push("duration_s must be positive".to_string());
        }
        if self.duration_s > 400 * 86_400 {
            errs.push("duration_s must not exceed 400 days".into());
        }
        let book = t.honest_servers + t.unreachable_addrs + t.onion_peers + a.sybils + a.onion_sybils;
        if book > crate::addrbook::MAX_ENTRIES {
            errs.push(format!("client books would hold {book} addresses, more than 20480"));
        }
        if t.honest_servers > 65_536 || t.unreachable_addrs > 1 << 22 || a.sybils > 65_536 {
            errs.push("address counts exceed the simulator's address plan".into());
        }
        if t.dns_seeds > t.honest_servers {
            errs.push("topology.dns_seeds exceeds topology.honest_servers".into());
        }
        match self.consensus_path() {
            Some(p) if !p.is_file() => errs.push(format!("topology.consensus: no such file {}", p.display())),
            Some(_) => {}
            None => {
                if t.honest_exits == 0 && a.exit_weight == 0 && self.clients.mode == TransportMode::OverTor {
                    errs.push("synthetic consensus has no exits".into());
                }
                if t.honest_exits > 0 && t.honest_exit_weight == 0 {
                    errs.push("topology.honest_exit_weight must be positive when honest_exits > 0".into());
                }
                if t.guard_relays < self.toggles.guards {
                    errs.push("topology.guard_relays is smaller than toggles.guards".into());
                }
            }
        }
        if let Some(p) = self.census_path() {
            if !p.is_file() {
                errs.push(format!("topology.onion_census: no such file {}", p.display()));
            }
            if t.onion_peers > 0 {
                errs.push("set either topology.onion_peers or topology.onion_census, not both".into());
            }
        }
        if a.blackhole && t.hsdir_relays < 6 && self.consensus_path().is_none() {
            errs.push("topology.hsdir_relays must be at least 6 for black-holing".into());
        }
        if !(0.0..=1.0).contains(&a.match_threshold) {
            errs.push("attacker.match_threshold must lie in [0, 1]".into());
        }
        if a.cookies && a.cookie_size == 0 {
            errs.push("attacker.cookie_size must be positive".into());
        }
        if a.exhaustion && a.exhaust_interval_s == 0 {
            errs.push("attacker.exhaust_interval_s must be positive".into());
        }
        if self.toggles.amplification == Amplification::Factor4 && a.sybils > 0 && a.advertise_sources == 0 {
            errs.push("attacker.advertise_sources must be positive for factor4 amplification".into());
        }
        if !matches!(self.toggles.guards, 1 | 3) {
            errs.push("toggles.guards must be 1 or 3".into());
        }
        if let Err(e) = self.tor.mix.validate() {
            errs.push(format!("tor.mix: {e}"));
        }
        let tm = &self.tor.timing;
        if tm.budget_ms == 0 || tm.first_timeout_ms == 0 || tm.later_timeout_ms == 0 {
            errs.push("tor.timing: timeouts and budget must be positive".into());
        }
        let mut last_end = 0;
        for (i, [s, e]) in self.sessions().iter().enumerate() {
            if s >= e {
                errs.push(format!("clients.sessions[{i}]: start must precede end"));
            }
            if *e > self.duration_s {
                errs.push(format!("clients.sessions[{i}]: ends after duration_s"));
            }
            if i > 0 && *s < last_end {
                errs.push(format!("clients.sessions[{i}]: overlaps the previous session"));
            }
            last_end = *e;
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

/// Reads an onion census: one `<name>.onion[:port]` per line, `#` starts a
/// comment.
pub fn parse_census(text: &str) -> Result<Vec<NetAddress>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let a: NetAddress =
            line.parse().map_err(|e| ConfigError::Syntax(format!("census line {}: {e}", n + 1)))?;
        if a.kind() != AddrKind::OnionCat {
            return Err(ConfigError::Syntax(format!("census line {}: not an onion address", n + 1)));
        }
        out.push(a);
    }
    Ok(out)
}
