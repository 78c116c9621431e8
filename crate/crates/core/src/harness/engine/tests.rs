use super::*;

fn small() -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.duration_s = 3 * 3600;
    c.clients.count = 8;
    c.topology.honest_servers = 30;
    c.topology.unreachable_addrs = 60;
    c
}

fn outcomes(out: &RunOutput) -> Vec<Outcome> {
    out.metrics.clients.iter().map(|c| c.outcome).collect()
}

#[test]
fn same_seed_same_run() {
    let mut c = small();
    c.attacker.ban_campaign = true;
    c.attacker.sybils = 5;
    let a = run_scenario(&c, 7, true).unwrap();
    let b = run_scenario(&c, 7, true).unwrap();
    assert_eq!(a.metrics.to_jsonl(), b.metrics.to_jsonl());
    assert_eq!(a.trace, b.trace);
    let d = run_scenario(&c, 8, false).unwrap();
    assert_ne!(a.metrics.to_jsonl(), d.metrics.to_jsonl());
}

#[test]
fn outcomes_add_up() {
    let mut c = small();
    c.attacker.ban_campaign = true;
    c.attacker.sybils = 10;
    let s = run_scenario(&c, 1, false).unwrap().metrics.summary;
    assert_eq!(s.captured_via_exit + s.captured_via_sybil + s.connected_honest + s.never_connected, s.clients);
    assert!(s.connected <= s.clients && s.fully_captured <= s.connected);
}

#[test]
fn without_an_attacker_everyone_reaches_honest_servers() {
    let mut c = small();
    c.attacker.exit_weight = 0;
    let out = run_scenario(&c, 3, false).unwrap();
    assert!(outcomes(&out).iter().all(|o| *o == Outcome::ConnectedHonest));
    assert!(out.metrics.clients.iter().all(|m| m.connections_attacker == 0));
    assert_eq!(out.metrics.summary.analytic_ttfc_s, None);
}

#[test]
fn banned_exits_leave_only_the_attacker() {
    let mut c = small();
    c.attacker.ban_campaign = true;
    c.attacker.exit_weight = 1_000_000;
    let out = run_scenario(&c, 4, false).unwrap();
    assert!(outcomes(&out).iter().all(|o| *o == Outcome::CapturedViaExit), "{:?}", outcomes(&out));
    assert_eq!(out.metrics.summary.fully_captured, c.clients.count);
    let cov = &out.metrics.ban_coverage;
    assert!(cov.iter().all(|b| b.fraction == 1.0), "{cov:?}");
    assert!(out.metrics.summary.analytic_ttfc_s.is_some());
}

#[test]
fn campaign_refreshes_before_bans_lapse() {
    let mut c = small();
    c.duration_s = 3 * 86_400;
    c.clients.count = 1;
    c.attacker.ban_campaign = true;
    let out = run_scenario(&c, 5, false).unwrap();
    assert!(out.metrics.campaigns.len() >= 4);
    assert!(out.metrics.ban_coverage.iter().all(|b| b.fraction == 1.0));
}

#[test]
fn direct_clients_meet_sybils_in_proportion() {
    let mut c = small();
    c.clients.mode = TransportMode::Direct;
    c.clients.count = 60;
    c.topology.unreachable_addrs = 0;
    c.topology.honest_servers = 50;
    c.attacker.sybils = 50;
    c.duration_s = 600;
    let out = run_scenario(&c, 6, false).unwrap();
    let s = out.metrics.summary;
    assert_eq!(s.captured_via_exit, 0);
    // half the book is sybils; 60 clients give sd ~ 3.9
    assert!((15..=45).contains(&s.captured_via_sybil), "{s:?}");
}

#[test]
fn cookie_links_the_next_session() {
    let mut c = small();
    c.clients.count = 3;
    c.duration_s = 4 * 3600;
    c.clients.sessions = vec![[0, 3600], [7200, 10_800]];
    c.attacker.ban_campaign = true;
    c.attacker.cookies = true;
    c.attacker.exit_weight = 1_000_000;
    let out = run_scenario(&c, 9, false).unwrap();
    let ev = &out.metrics.cookie_events;
    for client in 0..3 {
        let kinds: Vec<CookieEventKind> = ev.iter().filter(|e| e.client == client).map(|e| e.kind).collect();
        assert_eq!(kinds.first(), Some(&CookieEventKind::Set), "{kinds:?}");
        assert!(kinds.contains(&CookieEventKind::Linked), "{kinds:?}");
        let m = &out.metrics.clients[client];
        assert_eq!(m.cookie_survivors[0], None);
        assert_eq!(m.cookie_survivors[1], Some(c.attacker.cookie_size));
    }
    assert_eq!(out.cookies_jsonl.lines().filter(|l| l.contains("\"type\":\"cookie\"")).count(), 3);
}

#[test]
fn exhausted_servers_turn_direct_clients_away() {
    let mut c = small();
    c.clients.mode = TransportMode::Direct;
    c.duration_s = 600;
    c.attacker.exhaustion = true;
    c.attacker.ip_budget = 30 * 117;
    c.attacker.sybils = 2;
    let out = run_scenario(&c, 10, false).unwrap();
    assert!(out.metrics.clients.iter().all(|m| m.connections_honest == 0));
    assert_eq!(out.metrics.exhaustion[0].connections_added, 30 * 117);
}

#[test]
fn poisoned_ports_hide_the_servers() {
    let mut c = small();
    c.clients.mode = TransportMode::Direct;
    c.duration_s = 600;
    c.topology.dns_seeds = 0;
    c.attacker.port_poison = true;
    c.attacker.sybils = 3;
    let out = run_scenario(&c, 11, false).unwrap();
    // only the hard-coded fallback list can still lead to an honest server
    let o = outcomes(&out);
    assert!(o.iter().all(|o| matches!(o, Outcome::CapturedViaSybil | Outcome::NeverConnected)), "{o:?}");
    assert!(o.contains(&Outcome::CapturedViaSybil));
}

#[test]
fn blackholed_onion_peers_are_unreachable() {
    let mut c = small();
    c.topology.honest_servers = 0;
    c.topology.dns_seeds = 0;
    c.topology.unreachable_addrs = 0;
    c.topology.onion_peers = 4;
    c.attacker.onion_sybils = 1;
    c.attacker.exit_weight = 0;
    c.duration_s = 600;
    let free = run_scenario(&c, 12, false).unwrap();
    assert!(free.metrics.clients.iter().all(|m| m.connections_honest > 0));
    c.attacker.blackhole = true;
    let held = run_scenario(&c, 12, false).unwrap();
    assert!(held.metrics.clients.iter().all(|m| m.connections_honest == 0));
    assert!(held.metrics.clients.iter().all(|m| m.outcome == Outcome::CapturedViaSybil));
    assert_eq!(held.metrics.blackhole.len(), 4);
}

#[test]
fn trace_is_time_ordered() {
    let mut c = small();
    c.attacker.ban_campaign = true;
    let out = run_scenario(&c, 13, true).unwrap();
    assert!(!out.trace.is_empty());
    let times: Vec<f64> = out.trace.iter().map(|l| l.split(' ').next().unwrap().parse().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn invalid_scenarios_are_rejected() {
    let mut c = small();
    c.toggles.guards = 2;
    assert!(matches!(run_scenario(&c, 1, false), Err(ScenarioError::Config(_))));
}

#[test]
fn census_addresses_become_onion_peers() {
    let mut c = small();
    c.base_dir = Some(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures"));
    c.topology.onion_census = "onion_census_2014_11.txt".into();
    c.topology.honest_servers = 0;
    c.topology.dns_seeds = 0;
    c.topology.unreachable_addrs = 0;
    c.attacker.exit_weight = 0;
    c.attacker.blackhole = true;
    c.duration_s = 120;
    c.clients.count = 2;
    let out = run_scenario(&c, 14, false).unwrap();
    assert_eq!(out.metrics.blackhole.len(), 46);
    assert!(out.metrics.clients.iter().all(|m| m.outcome == Outcome::NeverConnected));
}
