//! Monthly cost of the attacker's infrastructure.
//!
//! Exit bandwidth is bought as dedicated servers: each carries 69,000
//! consensus units, moves 180 TB a month with 10 TB included in the rent, and
//! pays per extra TB in euros. Sybil peers cost an hourly rate per IP.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostInputs {
    pub exit_weight_units: f64,
    pub traffic_tb_included: f64,
    pub price_extra_tb_eur: f64,
    pub n_sybil_ips: u64,
    pub ip_price_per_hour_usd: f64,
    pub server_rent_usd: f64,
    pub eur_usd_rate: f64,
    pub units_per_relay: f64,
    pub tb_per_relay: f64,
    pub hours_per_month: f64,
}

impl Default for CostInputs {
    fn default() -> Self {
        CostInputs {
            exit_weight_units: 0.0,
            traffic_tb_included: 10.0,
            price_extra_tb_eur: 2.0,
            n_sybil_ips: 0,
            ip_price_per_hour_usd: 0.01,
            server_rent_usd: 40.0,
            // 170 extra TB at 2 EUR came to 360 USD
            eur_usd_rate: 18.0 / 17.0,
            units_per_relay: 69_000.0,
            tb_per_relay: 180.0,
            hours_per_month: 720.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub relays: u64,
    pub traffic_tb: f64,
    pub billable_tb: f64,
    pub traffic_usd: f64,
    pub servers_usd: f64,
    pub exits_usd: f64,
    pub sybil_usd: f64,
    pub total_usd: f64,
}

pub fn attack_cost(c: &CostInputs) -> Result<CostBreakdown, String> {
    let fields = [
        c.exit_weight_units,
        c.traffic_tb_included,
        c.price_extra_tb_eur,
        c.ip_price_per_hour_usd,
        c.server_rent_usd,
        c.eur_usd_rate,
        c.tb_per_relay,
        c.hours_per_month,
    ];
    if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !(c.units_per_relay > 0.0) {
        return Err("cost inputs must be finite and non-negative".into());
    }
    let relays = (c.exit_weight_units / c.units_per_relay).ceil() as u64;
    let traffic_tb = c.exit_weight_units / c.units_per_relay * c.tb_per_relay;
    let billable_tb = (traffic_tb - c.traffic_tb_included * relays as f64).max(0.0);
    let traffic_usd = billable_tb * c.price_extra_tb_eur * c.eur_usd_rate;
    let servers_usd = relays as f64 * c.server_rent_usd;
    let exits_usd = traffic_usd + servers_usd;
    let sybil_usd = c.n_sybil_ips as f64 * c.ip_price_per_hour_usd * c.hours_per_month;
    Ok(CostBreakdown {
        relays,
        traffic_tb,
        billable_tb,
        traffic_usd,
        servers_usd,
        exits_usd,
        sybil_usd,
        total_usd: exits_usd + sybil_usd,
    })
}
