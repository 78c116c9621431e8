//! Parameter sweeps over attacker exit weight and sybil count.
//!
//! A grid file is TOML:
//!
//! ```toml
//! base = "scenario.toml"     # optional, relative to the grid file
//! exit_weights = [0, 400000, 1000000]
//! sybil_counts = [0, 50]
//! trials = 2000              # Monte Carlo trials per point
//! simulate = true            # run the full scenario per point
//! ```
//!
//! Each point gets the closed-form expected capture time, a Monte Carlo
//! estimate of the same chain and, when simulating, the mean first-connection
//! delay of a scenario run seeded with the base seed plus the point index.
//! Book shares follow the scenario's counts: every
//! address is equally likely, with sybils counted four times under `factor4`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ConfigError, ScenarioConfig};
use super::engine::run_scenario;
use crate::analytics::{
    expected_capture_time, frac_attacker_peers, monte_carlo_capture_time, Amplification, MarkovParams,
};
use crate::rng::SeedTree;
use crate::tor::stream::unreachable_expectation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub base: String,
    pub exit_weights: Vec<u64>,
    pub sybil_counts: Vec<usize>,
    pub trials: u64,
    pub simulate: bool,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            base: String::new(),
            exit_weights: vec![0, 400_000, 1_000_000],
            sybil_counts: vec![0],
            trials: 2000,
            simulate: true,
            base_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub exit_weight: u64,
    pub sybil_count: usize,
    pub analytic_s: Option<f64>,
    pub mc_mean_s: Option<f64>,
    pub mc_ci95_s: Option<f64>,
    pub sim_mean_s: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_CSV_HEADER: &str = "exit_weight,sybil_count,analytic_s,mc_mean_s,mc_ci95_s,sim_mean_s,error";

impl SweepGrid {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut g = Self::parse(&text)?;
        g.base_dir = path.parent().map(Path::to_path_buf);
        Ok(g)
    }

    /// The base scenario, validated.
    pub fn base_config(&self) -> Result<ScenarioConfig, ConfigError> {
        let cfg = if self.base.is_empty() {
            ScenarioConfig::default()
        } else {
            let p = PathBuf::from(&self.base);
            let p = match (&self.base_dir, p.is_relative()) {
                (Some(d), true) => d.join(p),
                _ => p,
            };
            ScenarioConfig::load(&p)?
        };
        let mut errs = Vec::new();
        if self.exit_weights.is_empty() || self.sybil_counts.is_empty() {
            errs.push("exit_weights and sybil_counts must be non-empty".to_string());
        }
        if self.trials == 0 {
            errs.push("trials must be positive".into());
        }
        if !cfg.topology.consensus.is_empty() {
            errs.push("sweeps vary the synthetic consensus; the base scenario must not name a fixture".into());
        }
        if errs.is_empty() {
            cfg.validate()?;
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }

    /// Grid points in row-major order, exit weight outermost.
    pub fn points(&self) -> Vec<(u64, usize)> {
        self.exit_weights
            .iter()
            .flat_map(|&w| self.sybil_counts.iter().map(move |&s| (w, s)))
            .collect()
    }
}

/// Chain parameters for `cfg` with every address equally likely.
pub fn params_for(cfg: &ScenarioConfig) -> MarkovParams {
    let t = &cfg.topology;
    let a = &cfg.attacker;
    let weight = if cfg.toggles.amplification == Amplification::Factor4 { 4 } else { 1 };
    let total = t.honest_servers + t.unreachable_addrs + weight * a.sybils;
    let u = if total == 0 { 0.0 } else { t.unreachable_addrs as f64 / total as f64 };
    let honest_w = t.honest_exit_weight * u64::from(t.honest_exits > 0);
    let e = if a.exit_weight + honest_w == 0 { 0.0 } else { a.exit_weight as f64 / (a.exit_weight + honest_w) as f64 };
    let (t1, c) = unreachable_expectation(&cfg.tor.mix, &cfg.tor.timing);
    MarkovParams {
        frac_unreachable: u,
        frac_attacker_peers: frac_attacker_peers(a.sybils as u64, t.honest_servers as u64, u, cfg.toggles.amplification),
        exit_share: e,
        circuits_per_unreachable: c,
        dwell_state1: t1,
        dwell_state2: cfg.tor.timing.refused_ms as f64 / 1000.0,
    }
}

fn point(base: &ScenarioConfig, grid: &SweepGrid, idx: usize, w: u64, s: usize) -> SweepRow {
    let mut cfg = base.clone();
    cfg.attacker.exit_weight = w;
    cfg.attacker.sybils = s;
    let mut row = SweepRow {
        exit_weight: w,
        sybil_count: s,
        analytic_s: None,
        mc_mean_s: None,
        mc_ci95_s: None,
        sim_mean_s: None,
        error: None,
    };
    let p = params_for(&cfg);
    match expected_capture_time(&p) {
        Ok(t) => row.analytic_s = Some(t),
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    }
    let seed = base.seed.wrapping_add(idx as u64);
    let mut rng = SeedTree::new(seed).stream("sweep", 0);
    match monte_carlo_capture_time(&p, grid.trials, &mut rng) {
        Ok(mc) => {
            row.mc_mean_s = Some(mc.mean);
            row.mc_ci95_s = Some(mc.ci95);
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    if grid.simulate {
        match run_scenario(&cfg, seed, false) {
            Ok(out) => row.sim_mean_s = out.metrics.summary.mean_ttfc_s,
            Err(e) => row.error = Some(e.to_string()),
        }
    }
    row
}

/// Evaluates every grid point. Rows come back in grid order whatever the
/// evaluation order; per-point failures land in the row's `error`.
pub fn run_sweep(grid: &SweepGrid) -> Result<Vec<SweepRow>, ConfigError> {
    let base = grid.base_config()?;
    let pts = grid.points();
    #[cfg(feature = "cli")]
    {
        use rayon::prelude::*;
        Ok(pts.par_iter().enumerate().map(|(i, &(w, s))| point(&base, grid, i, w, s)).collect())
    }
    #[cfg(not(feature = "cli"))]
    {
        Ok(pts.iter().enumerate().map(|(i, &(w, s))| point(&base, grid, i, w, s)).collect())
    }
}

pub fn rows_to_csv(rows: &[SweepRow]) -> String {
    let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.exit_weight,
            r.sybil_count,
            f(r.analytic_s),
            f(r.mc_mean_s),
            f(r.mc_ci95_s),
            f(r.sim_mean_s),
            err
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_follow_grid_order_and_header() {
        let g = SweepGrid {
            exit_weights: vec![100_000, 400_000],
            sybil_counts: vec![0, 10, 20],
            trials: 200,
            simulate: false,
            ..Default::default()
        };
        let rows = run_sweep(&g).unwrap();
        let got: Vec<(u64, usize)> = rows.iter().map(|r| (r.exit_weight, r.sybil_count)).collect();
        assert_eq!(got, g.points());
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("exit_weight,sybil_count,analytic_s,mc_mean_s,mc_ci95_s"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn capture_time_falls_with_attacker_resources() {
        let g = SweepGrid { exit_weights: vec![100_000, 1_000_000], sybil_counts: vec![0, 100], trials: 100, ..Default::default() };
        let rows = run_sweep(&g).unwrap();
        let t: Vec<f64> = rows.iter().map(|r| r.analytic_s.unwrap()).collect();
        assert!(t[0] > t[1] && t[0] > t[2] && t[2] > t[3]);
    }

    #[test]
    fn zero_attacker_reports_an_error_row() {
        let g = SweepGrid { exit_weights: vec![0, 400_000], sybil_counts: vec![0], trials: 10, ..Default::default() };
        let rows = run_sweep(&g).unwrap();
        assert!(rows[0].error.is_some());
        assert!(rows[1].error.is_none() && rows[1].sim_mean_s.is_some());
    }

    #[test]
    fn two_by_two_is_four_rows_and_repeatable() {
        let g = SweepGrid { exit_weights: vec![200_000, 800_000], sybil_counts: vec![0, 20], trials: 50, ..Default::default() };
        let a = run_sweep(&g).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(rows_to_csv(&a), rows_to_csv(&run_sweep(&g).unwrap()));
    }

    #[test]
    fn grid_violations_are_listed() {
        let g = SweepGrid { exit_weights: vec![], trials: 0, ..Default::default() };
        match g.base_config() {
            Err(ConfigError::Invalid(v)) => assert_eq!(v.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn equal_shares_match_the_closed_form() {
        let cfg = ScenarioConfig::default();
        let p = params_for(&cfg);
        assert!((p.frac_unreachable - 200.0 / 300.0).abs() < 1e-12);
        assert!((p.exit_share - 400_000.0 / 5_700_000.0).abs() < 1e-12);
    }
}
