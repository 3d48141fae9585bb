//! Cohorts simulated from piecewise-constant hazards, and oracle curves.

mod brute;
mod hazard;
mod oracle;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use brute::{brute_force_estimates, ProportionCurves, BRUTE_FORCE_MAX_N};
pub use hazard::{presets, HazardSpec, Piece, PiecewiseHazard};
pub use oracle::{analytic_curves, OracleCurves, MAX_REFINEMENTS, QUADRATURE_TOLERANCE};

use crate::cohort::{Cohort, EndStatus, Subject, TiePolicy};
use crate::error::{EstimationError, Result};
use hazard::Combined;

/// Stream `index` of a ChaCha8 generator keyed by the 64-bit `seed`. Used per
/// simulated subject and per bootstrap replicate.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn exp1(rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln()
}

/// Picks an index with probability proportional to `weights`.
fn choose(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Raw event path of one simulated subject before rounding.
fn simulate_subject(spec: &HazardSpec, state0: &Combined, rng: &mut ChaCha8Rng) -> (Option<f64>, f64, EndStatus) {
    let tau = spec.tau;
    let c = spec.censor_rate;
    let Some(t1) = state0.time_to(0.0, exp1(rng)).filter(|&t| t <= tau) else {
        return (None, tau, EndStatus::Censored);
    };
    let weights = [spec.alpha01.rate(t1), spec.alpha02.rate(t1), spec.alpha03.rate(t1), c];
    match choose(rng, &weights) {
        1 => return (None, t1, EndStatus::Discharge),
        2 => return (None, t1, EndStatus::Death),
        3 => return (None, t1, EndStatus::Censored),
        _ => {}
    }
    let scale = (spec.gamma * t1).exp();
    let state1 = Combined::new(&[(&spec.alpha14, scale), (&spec.alpha15, scale)]).add_constant(c);
    let Some(t2) = state1.time_to(t1, exp1(rng)).filter(|&t| t <= tau && t > t1) else {
        return (Some(t1), tau, EndStatus::Censored);
    };
    let weights = [scale * spec.alpha14.rate(t2), scale * spec.alpha15.rate(t2), c];
    let status = match choose(rng, &weights) {
        0 => EndStatus::Discharge,
        1 => EndStatus::Death,
        _ => EndStatus::Censored,
    };
    (Some(t1), t2, status)
}

/// Simulates `n` subjects. Subject `i` (id `i + 1`) depends only on `(seed, i)`.
///
/// Subjects still in the unit at `tau` are censored there. With `round_days`,
/// the exposure day is `ceil(inf_time)` and the end day is
/// `max(ceil(end_time), exposure day + 1)`.
pub fn simulate_cohort(spec: &HazardSpec, n: usize, seed: u64) -> Result<Cohort> {
    spec.validate()?;
    if n == 0 {
        return Err(EstimationError::Invalid("cohort size must be at least 1".into()));
    }
    if spec.hazards().iter().all(|h| h.is_zero()) && spec.censor_rate == 0.0 {
        return Err(EstimationError::HazardSpec("all rates are zero".into()));
    }
    let state0 = Combined::new(&[(&spec.alpha01, 1.0), (&spec.alpha02, 1.0), (&spec.alpha03, 1.0)]).add_constant(spec.censor_rate);
    let subjects: Vec<Subject> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let (inf, end, status) = simulate_subject(spec, &state0, &mut rng);
            let (inf, end) = if spec.round_days {
                let inf = inf.map(f64::ceil);
                (inf, end.ceil().max(inf.map_or(0.0, |d| d + 1.0)))
            } else {
                (inf, end)
            };
            Subject::new((i + 1).to_string(), inf, end, status)
        })
        .collect();
    let max_end = subjects.iter().map(|s| s.end_time).fold(0.0, f64::max);
    let tau = if spec.round_days { spec.tau.ceil().max(max_end) } else { spec.tau };
    Ok(Cohort::new(subjects, TiePolicy::Reject, Some(tau))?)
}
