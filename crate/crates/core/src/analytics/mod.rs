//! Closed-form and statistical models: capture delay, cookie survival and
//! attack cost.

pub mod cookie_decay;
pub mod cost;
pub mod markov;

pub use cookie_decay::{
    cookie_survival, expected_recovery, mean_cookie_survival, table_two, CookieSurvivalParams, TimestampDistribution,
};
pub use cost::{attack_cost, CostBreakdown, CostInputs};
pub use markov::{
    expected_capture_time, frac_attacker_peers, monte_carlo_capture_time, transition_matrix, Amplification,
    MarkovError, MarkovParams, MonteCarlo,
};
