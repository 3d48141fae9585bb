//! Shared fixtures for the benchmarks.

use pafmsm::simulate::{simulate_cohort, HazardSpec};
use pafmsm::Cohort;

/// Constant-hazard cohort with complete follow-up and integer times.
pub fn daily_cohort(n: usize, seed: u64) -> Cohort {
    let spec = HazardSpec { round_days: true, ..HazardSpec::constant(0.05, 0.05, 0.02, 0.05, 0.03, 1000.0) };
    simulate_cohort(&spec, n, seed).expect("valid spec")
}
