//! Direct counting of the estimands on small uncensored cohorts.

use crate::cohort::{Cohort, EndStatus, State};
use crate::curve::StepCurve;
use crate::error::{EstimationError, Result};

pub const BRUTE_FORCE_MAX_N: usize = 10_000;

/// Proportion curves evaluated at every distinct event time.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionCurves {
    pub occupation: Vec<StepCurve>,
    pub death: StepCurve,
    pub cpf: StepCurve,
    pub counterfactual: StepCurve,
}

fn state_at(s: &crate::cohort::Subject, t: f64) -> State {
    let exposed = s.inf_time.is_some_and(|i| i <= t);
    if s.end_time <= t {
        match (s.inf_time.is_some(), s.end_status == EndStatus::Death) {
            (false, false) => State::DischargeUnexposed,
            (false, true) => State::DeathUnexposed,
            (true, false) => State::DischargeExposed,
            (true, true) => State::DeathExposed,
        }
    } else if exposed {
        State::Exposed
    } else {
        State::Admission
    }
}

pub fn brute_force_estimates(cohort: &Cohort) -> Result<ProportionCurves> {
    if cohort.is_empty() {
        return Err(EstimationError::Empty);
    }
    if cohort.has_censoring() {
        return Err(EstimationError::Invalid("brute-force proportions need an uncensored cohort".into()));
    }
    if cohort.len() > BRUTE_FORCE_MAX_N {
        return Err(EstimationError::Invalid(format!("brute-force proportions are limited to {BRUTE_FORCE_MAX_N} subjects")));
    }
    let subjects = cohort.subjects();
    let n = subjects.len() as f64;
    let mut times: Vec<f64> = subjects.iter().flat_map(|s| s.inf_time.into_iter().chain([s.end_time])).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut occupation: Vec<Vec<f64>> = (0..6).map(|_| Vec::with_capacity(times.len())).collect();
    let (mut death, mut cpf) = (Vec::new(), Vec::new());
    for &t in &times {
        let mut counts = [0usize; 6];
        for s in subjects {
            counts[state_at(s, t).index()] += 1;
        }
        for (k, c) in counts.iter().enumerate() {
            occupation[k].push(*c as f64 / n);
        }
        death.push((counts[3] + counts[5]) as f64 / n);
        let unexposed = counts[0] + counts[2] + counts[3];
        cpf.push(if unexposed == 0 { f64::NAN } else { counts[3] as f64 / unexposed as f64 });
    }

    // Censor-at-exposure cumulative incidence, one event time at a time.
    let mut counterfactual = Vec::with_capacity(times.len());
    let (mut survival, mut incidence) = (1.0, 0.0);
    for &t in &times {
        let leave = |s: &&crate::cohort::Subject| s.inf_time.unwrap_or(s.end_time);
        let at_risk = subjects.iter().filter(|s| leave(s) >= t).count();
        let terminal_unexposed: Vec<_> = subjects.iter().filter(|s| s.inf_time.is_none() && s.end_time == t).collect();
        let deaths = terminal_unexposed.iter().filter(|s| s.end_status == EndStatus::Death).count();
        if at_risk > 0 {
            incidence += survival * deaths as f64 / at_risk as f64;
            survival *= 1.0 - terminal_unexposed.len() as f64 / at_risk as f64;
        }
        counterfactual.push(incidence);
    }

    let step = |values: Vec<f64>, initial: f64| StepCurve::from_parts(times.clone(), values, initial);
    Ok(ProportionCurves {
        occupation: occupation.into_iter().enumerate().map(|(k, v)| step(v, if k == 0 { 1.0 } else { 0.0 })).collect(),
        death: step(death, 0.0),
        cpf: step(cpf, 0.0),
        counterfactual: step(counterfactual, 0.0),
    })
}
