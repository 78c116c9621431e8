//! Browser bindings for three views of the model: the capture-delay surface,
//! cookie decay across sessions and HSDir black-holing of an onion service.
//! Every export returns a JSON string; errors come back as JS exceptions.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use torbit::adversary::{blackhole_service, ring_with};
use torbit::analytics::{
    expected_capture_time, frac_attacker_peers, mean_cookie_survival, table_two, Amplification, CookieSurvivalParams,
    MarkovParams, TimestampDistribution,
};
use torbit::netaddr::NetAddress;
use torbit::rng::SeedTree;
use torbit::tor::hsdir::{descriptor_ids, responsible_directories};
use torbit::tor::Fingerprint;

const RING: &str = include_str!("../../core/fixtures/hsdir_ring_200.txt");

#[derive(Serialize)]
pub struct Surface {
    pub exit_weights: Vec<f64>,
    pub sybils: Vec<u64>,
    /// seconds[i][j] for exit_weights[i] and sybils[j]; null where the
    /// attacker has nothing.
    pub seconds: Vec<Vec<Option<f64>>>,
}

pub fn surface(total_exit_weight: f64, max_exit_weight: f64, max_sybils: u64, servers: u64, steps: usize) -> Result<Surface, String> {
    if steps < 2 || !(total_exit_weight > 0.0) || !(0.0..=total_exit_weight).contains(&max_exit_weight) {
        return Err("need steps >= 2 and 0 <= max exit weight <= total".into());
    }
    let exit_weights: Vec<f64> = (0..steps).map(|i| max_exit_weight * i as f64 / (steps - 1) as f64).collect();
    let sybils: Vec<u64> = (0..steps).map(|i| max_sybils * i as u64 / (steps - 1) as u64).collect();
    let u = 2.0 / 3.0;
    let seconds = exit_weights
        .iter()
        .map(|&w| {
            sybils
                .iter()
                .map(|&s| {
                    let p = MarkovParams {
                        frac_unreachable: u,
                        frac_attacker_peers: frac_attacker_peers(s, servers, u, Amplification::Plain),
                        exit_share: w / total_exit_weight,
                        circuits_per_unreachable: 4.6,
                        dwell_state1: 39.6,
                        dwell_state2: 0.5,
                    };
                    expected_capture_time(&p).ok()
                })
                .collect()
        })
        .collect();
    Ok(Surface { exit_weights, sybils, seconds })
}

#[derive(Serialize)]
pub struct Decay {
    pub hours: Vec<f64>,
    pub survivors: Vec<f64>,
    /// Observed counts where the session matches the measured timeline.
    pub observed: Vec<Option<u32>>,
}

pub fn decay(hours: Option<Vec<f64>>, new_frac: f64, runs: usize, seed: u64) -> Result<Decay, String> {
    let table = table_two();
    let mut params = CookieSurvivalParams { new_frac, ..Default::default() };
    if let Some(h) = hours {
        params.session_hours = h;
    }
    let survivors = mean_cookie_survival(
        &TimestampDistribution::table_one(),
        &params,
        runs,
        &mut SeedTree::new(seed).stream("cookie", 0),
    )?;
    let observed = params
        .session_hours
        .iter()
        .enumerate()
        .map(|(i, h)| table.get(i).filter(|r| (r.1 - h).abs() < 1e-9).map(|r| r.2))
        .collect();
    Ok(Decay { hours: params.session_hours, survivors, observed })
}

fn ring() -> Vec<Fingerprint> {
    RING.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| hex::decode(l).expect("ring fixture").try_into().expect("20-byte fingerprint"))
        .collect()
}

#[derive(Serialize)]
pub struct Blackhole {
    pub day: u64,
    pub honest_before: Vec<String>,
    pub attacker_fingerprints: Vec<String>,
    pub attacker_responsible_today: usize,
    pub attacker_responsible_next_day: usize,
    pub draws: Vec<u64>,
}

pub fn blackhole(onion: &str, day: u64, seed: u64) -> Result<Blackhole, String> {
    let id = if onion.contains(".onion") {
        let name = if onion.contains(':') { onion.to_string() } else { format!("{onion}:8333") };
        let a: NetAddress = name.parse().map_err(|e| format!("{e}"))?;
        a.onion_id().map_err(|e| e.to_string())?.to_vec()
    } else {
        hex::decode(onion).map_err(|_| "expected a .onion name or hex identity".to_string())?
    };
    let ring = ring();
    let hexes = |v: &[Fingerprint]| v.iter().map(hex::encode).collect::<Vec<_>>();
    let before = responsible_directories(&ring, &descriptor_ids(&id, day)).map_err(|e| e.to_string())?;
    let report =
        blackhole_service(&id, day, &ring, 1 << 24, &mut SeedTree::new(seed).stream("hsdir", 0)).map_err(|e| e.to_string())?;
    let joined = ring_with(&ring, &report.fingerprints);
    let owned = |d: u64| -> Result<usize, String> {
        let dirs = responsible_directories(&joined, &descriptor_ids(&id, d)).map_err(|e| e.to_string())?;
        Ok(dirs.iter().filter(|f| report.fingerprints.contains(f)).count())
    };
    Ok(Blackhole {
        day,
        honest_before: hexes(&before),
        attacker_fingerprints: hexes(&report.fingerprints),
        attacker_responsible_today: owned(day)?,
        attacker_responsible_next_day: owned(day + 1)?,
        draws: report.iterations.to_vec(),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.map(|v| serde_json::to_string(&v).expect("json")).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn delay_surface(total_exit_weight: f64, max_exit_weight: f64, max_sybils: u32, servers: u32, steps: u32) -> Result<String, JsValue> {
    to_js(surface(total_exit_weight, max_exit_weight, max_sybils as u64, servers as u64, steps as usize))
}

/// `hours` is a comma-separated list of session start times; empty means
/// the measured timeline.
#[wasm_bindgen]
pub fn cookie_decay(hours: &str, new_frac: f64, runs: u32, seed: u32) -> Result<String, JsValue> {
    let parsed = if hours.trim().is_empty() {
        None
    } else {
        let v: Result<Vec<f64>, _> = hours.split(',').map(|h| h.trim().parse::<f64>()).collect();
        Some(v.map_err(|_| JsValue::from_str("hours must be comma-separated numbers"))?)
    };
    to_js(decay(parsed, new_frac, runs as usize, seed as u64))
}

#[wasm_bindgen]
pub fn hsdir_blackhole(onion: &str, day: u32, seed: u32) -> Result<String, JsValue> {
    to_js(blackhole(onion, day as u64, seed as u64))
}
