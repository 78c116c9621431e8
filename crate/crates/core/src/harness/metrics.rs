//! What one run reports, and how it is written out.
//!
//! JSON lines: a `run` header, one `client` object per client, then
//! `campaign`, `exhaustion`, `cookie`, `ban_coverage` and `blackhole` records
//! in time order, and a closing `summary`. Times are seconds.

use serde::{Deserialize, Serialize};

use crate::adversary::{BlackholeReport, CampaignReport, ExhaustionReport};
use crate::addrbook::TransportMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    CapturedViaExit,
    CapturedViaSybil,
    ConnectedHonest,
    NeverConnected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client: usize,
    pub mode: TransportMode,
    /// Time to the first connection of the first session.
    pub ttfc_s: Option<f64>,
    /// What that first connection turned out to be.
    pub outcome: Outcome,
    /// First-connection delay of every session.
    pub session_ttfc_s: Vec<Option<f64>>,
    pub attempts: u64,
    pub connections_honest: u64,
    pub connections_attacker: u64,
    /// Cookie addresses present at each session start, once a cookie exists.
    pub cookie_survivors: Vec<Option<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CookieEventKind {
    Set,
    Checked,
    Linked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CookieEvent {
    pub at_s: f64,
    pub client: usize,
    pub kind: CookieEventKind,
    pub record: Option<usize>,
    pub fraction: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanCoverage {
    pub at_s: f64,
    /// Share of (honest server, honest exit) pairs banned right now.
    pub fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub clients: usize,
    pub captured_via_exit: usize,
    pub captured_via_sybil: usize,
    pub connected_honest: usize,
    pub never_connected: usize,
    pub mean_ttfc_s: Option<f64>,
    /// Clients that connected at all and never held an honest connection.
    pub fully_captured: usize,
    /// Clients that connected at least once.
    pub connected: usize,
    /// Analytic prediction for the mean first-connection delay, when the
    /// scenario fits the Markov model.
    pub analytic_ttfc_s: Option<f64>,
    pub events_processed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: u64,
    pub clients: Vec<ClientMetrics>,
    pub campaigns: Vec<CampaignReport>,
    pub exhaustion: Vec<ExhaustionReport>,
    pub cookie_events: Vec<CookieEvent>,
    pub ban_coverage: Vec<BanCoverage>,
    pub blackhole: Vec<BlackholeReport>,
    pub summary: Summary,
}

fn line<T: Serialize>(out: &mut String, kind: &str, value: &T) {
    let mut v = serde_json::to_value(value).expect("metrics serialize");
    if let serde_json::Value::Object(m) = &mut v {
        m.insert("type".into(), kind.into());
    }
    out.push_str(&v.to_string());
    out.push('\n');
}

impl RunMetrics {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        line(
            &mut out,
            "run",
            &serde_json::json!({ "scenario": self.scenario, "seed": self.seed, "duration_s": self.duration_s }),
        );
        for c in &self.clients {
            line(&mut out, "client", c);
        }
        for c in &self.campaigns {
            line(&mut out, "campaign", c);
        }
        for e in &self.exhaustion {
            line(&mut out, "exhaustion", e);
        }
        for e in &self.cookie_events {
            line(&mut out, "cookie", e);
        }
        for b in &self.ban_coverage {
            line(&mut out, "ban_coverage", b);
        }
        for b in &self.blackhole {
            line(&mut out, "blackhole", b);
        }
        line(&mut out, "summary", &self.summary);
        out
    }

    /// One row per client.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "client,mode,ttfc_s,outcome,attempts,connections_honest,connections_attacker,last_cookie_survivors\n",
        );
        for c in &self.clients {
            let mode = match c.mode {
                TransportMode::Direct => "direct",
                TransportMode::OverTor => "over_tor",
            };
            let outcome = serde_json::to_value(c.outcome).unwrap();
            let survivors = c.cookie_survivors.iter().rev().flatten().next();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                c.client,
                mode,
                c.ttfc_s.map(|t| format!("{t:.3}")).unwrap_or_default(),
                outcome.as_str().unwrap(),
                c.attempts,
                c.connections_honest,
                c.connections_attacker,
                survivors.map(|s| s.to_string()).unwrap_or_default(),
            ));
        }
        out
    }
}
