//! Kaplan-Meier and Nelson-Aalen estimators.

use crate::cohort::{State, TransitionRecords};
use crate::curve::StepCurve;
use crate::error::{EstimationError, Result};

/// Order in which events and censorings sharing a time are processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieOrder {
    /// Censorings at `t` are still at risk for events at `t` (the usual convention).
    #[default]
    EventsFirst,
    /// Censorings at `t` leave the risk set before events at `t`.
    CensoringsFirst,
}

/// Kaplan-Meier survival curve with a left-limit accessor.
#[derive(Debug, Clone, PartialEq)]
pub struct KaplanMeier {
    curve: StepCurve,
}

impl KaplanMeier {
    pub fn curve(&self) -> &StepCurve {
        &self.curve
    }

    pub fn into_curve(self) -> StepCurve {
        self.curve
    }

    /// `S(t)`.
    pub fn survival(&self, t: f64) -> f64 {
        self.curve.value(t)
    }

    /// `S(t-)`.
    pub fn survival_before(&self, t: f64) -> f64 {
        self.curve.value_before(t)
    }
}

/// Kaplan-Meier estimator; `events[i]` is true for an event, false for censoring.
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<KaplanMeier> {
    kaplan_meier_with(times, events, TieOrder::EventsFirst)
}

pub fn kaplan_meier_with(times: &[f64], events: &[bool], order: TieOrder) -> Result<KaplanMeier> {
    if times.len() != events.len() {
        return Err(EstimationError::Invalid(format!(
            "{} times but {} event flags",
            times.len(),
            events.len()
        )));
    }
    if times.is_empty() {
        return Err(EstimationError::Empty);
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(EstimationError::Invalid("non-finite time".into()));
    }
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut at_risk = times.len();
    let mut s = 1.0;
    let (mut jt, mut jv) = (Vec::new(), Vec::new());
    let mut i = 0;
    while i < idx.len() {
        let t = times[idx[i]];
        let (mut d, mut c) = (0usize, 0usize);
        while i < idx.len() && times[idx[i]] == t {
            if events[idx[i]] {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        if d > 0 {
            let risk = match order {
                TieOrder::EventsFirst => at_risk,
                TieOrder::CensoringsFirst => at_risk - c,
            };
            s *= 1.0 - d as f64 / risk as f64;
            jt.push(t);
            jv.push(s);
        }
        at_risk -= d + c;
    }
    Ok(KaplanMeier { curve: StepCurve::from_parts(jt, jv, 1.0) })
}

/// Nelson-Aalen increments for the `from -> to` transition.
#[derive(Debug, Clone, PartialEq)]
pub struct HazardIncrements {
    pub times: Vec<f64>,
    /// Number of `from -> to` transitions at each time.
    pub events: Vec<usize>,
    /// Number in `from` just before each time.
    pub at_risk: Vec<usize>,
}

impl HazardIncrements {
    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().zip(&self.at_risk).map(|(&d, &y)| d as f64 / y as f64)
    }

    /// Cumulative hazard as a step curve.
    pub fn cumulative(&self) -> StepCurve {
        let mut acc = 0.0;
        let values = self
            .increments()
            .map(|a| {
                acc += a;
                acc
            })
            .collect();
        StepCurve::from_parts(self.times.clone(), values, 0.0)
    }
}

pub fn nelson_aalen(records: &TransitionRecords, from: State, to: State) -> Result<HazardIncrements> {
    if records.is_empty() {
        return Err(EstimationError::Empty);
    }
    let rows: Vec<_> = records.rows().iter().filter(|r| r.from == from).collect();
    let mut event_times: Vec<f64> = rows.iter().filter(|r| r.to == Some(to)).map(|r| r.stop).collect();
    event_times.sort_by(f64::total_cmp);

    let mut starts: Vec<f64> = rows.iter().map(|r| r.start).collect();
    let mut stops: Vec<f64> = rows.iter().map(|r| r.stop).collect();
    starts.sort_by(f64::total_cmp);
    stops.sort_by(f64::total_cmp);

    let mut out = HazardIncrements { times: Vec::new(), events: Vec::new(), at_risk: Vec::new() };
    let mut i = 0;
    while i < event_times.len() {
        let t = event_times[i];
        let mut d = 0;
        while i < event_times.len() && event_times[i] == t {
            d += 1;
            i += 1;
        }
        let entered = starts.partition_point(|&s| s < t);
        let left = stops.partition_point(|&s| s < t);
        let y = entered - left;
        debug_assert!(y >= d);
        out.times.push(t);
        out.events.push(d);
        out.at_risk.push(y);
    }
    Ok(out)
}
