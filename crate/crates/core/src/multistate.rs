//! Aalen-Johansen estimation for the extended illness-death model and the
//! reductions of it that avoid the Markov assumption.
//!
//! All estimators share one product-integral engine. A [`Reduction`] maps
//! each counting-process row onto the state space of a smaller model:
//!
//! * `Extended`: the full six-state model (uses the Markov assumption for
//!   transitions out of the exposed state).
//! * `Combined`: exposure ignored, deaths and discharges pooled. Estimates
//!   the overall death risk.
//! * `ThreeState`: transitions out of the exposed state dropped, exposure
//!   absorbing. Gives the conditional death risk among the unexposed.
//! * `CensorAtExposure`: exposures recoded as censorings. Gives the
//!   counterfactual death risk had the exposure hazard been zero.
//!
//! Events sharing a time are processed together with risk sets taken just
//! before that time; rows censored at `t` are still at risk at `t`.

use crate::cohort::{EndStatus, State, TransitionRecords, TransitionRow};
use crate::curve::StepCurve;
use crate::error::{EstimationError, Result};
use crate::survival::{kaplan_meier_with, TieOrder};

/// Mass below this is treated as zero when flagging truncation.
const MASS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Extended,
    Combined,
    ThreeState,
    CensorAtExposure,
}

// State indices of the reduced models.
const C_ALIVE: usize = 0;
const C_DEATH: usize = 1;
const C_DISCHARGE: usize = 2;

const T_FREE: usize = 0;
const T_EXPOSED: usize = 1;
const T_DISCHARGE: usize = 2;
const T_DEATH: usize = 3;

const Z_FREE: usize = 0;
const Z_DISCHARGE: usize = 1;
const Z_DEATH: usize = 2;

/// A row on the reduced state space. `to == Some(from)` keeps the subject at
/// risk without an event.
#[derive(Debug, Clone, Copy)]
struct Reduced {
    from: usize,
    to: Option<usize>,
    start: f64,
    stop: f64,
}

impl Reduction {
    fn n_states(self) -> usize {
        match self {
            Reduction::Extended => 6,
            Reduction::Combined => 3,
            Reduction::ThreeState => 4,
            Reduction::CensorAtExposure => 3,
        }
    }

    fn map(self, row: &TransitionRow) -> Option<Reduced> {
        let (from, to) = match self {
            Reduction::Extended => (row.from.index(), row.to.map(State::index)),
            Reduction::Combined => {
                let to = row.to.map(|s| match s {
                    State::Admission | State::Exposed => C_ALIVE,
                    State::DeathUnexposed | State::DeathExposed => C_DEATH,
                    State::DischargeUnexposed | State::DischargeExposed => C_DISCHARGE,
                });
                (C_ALIVE, to)
            }
            Reduction::ThreeState => {
                if row.from != State::Admission {
                    return None;
                }
                let to = row.to.map(|s| match s {
                    State::Exposed => T_EXPOSED,
                    State::DischargeUnexposed => T_DISCHARGE,
                    State::DeathUnexposed => T_DEATH,
                    other => unreachable!("admission row ending in {other}"),
                });
                (T_FREE, to)
            }
            Reduction::CensorAtExposure => {
                if row.from != State::Admission {
                    return None;
                }
                let to = row.to.and_then(|s| match s {
                    State::Exposed => None,
                    State::DischargeUnexposed => Some(Z_DISCHARGE),
                    State::DeathUnexposed => Some(Z_DEATH),
                    other => unreachable!("admission row ending in {other}"),
                });
                (Z_FREE, to)
            }
        };
        Some(Reduced { from, to, start: row.start, stop: row.stop })
    }
}

/// State occupation probabilities from the initial state at time 0,
/// evaluated at every event time of the reduced model.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupation {
    pub times: Vec<f64>,
    /// `probs[j][k]`: probability of state `k` at `times[j]`.
    pub probs: Vec<Vec<f64>>,
    pub n_states: usize,
    /// Last time anyone was at risk, set when transient mass remains there.
    pub truncated_at: Option<f64>,
}

impl Occupation {
    pub fn curve(&self, state: usize) -> StepCurve {
        let values = self.probs.iter().map(|p| p[state]).collect();
        let initial = if state == 0 { 1.0 } else { 0.0 };
        StepCurve::from_parts(self.times.clone(), values, initial).with_truncation(self.truncated_at)
    }

    pub fn curve_of(&self, f: impl Fn(&[f64]) -> f64) -> StepCurve {
        let values = self.probs.iter().map(|p| f(p)).collect();
        let mut init = vec![0.0; self.n_states];
        init[0] = 1.0;
        StepCurve::from_parts(self.times.clone(), values, f(&init)).with_truncation(self.truncated_at)
    }
}

/// Product-integral `P(0, t) = prod (I + dA)` over the reduced model.
pub fn aalen_johansen(records: &TransitionRecords, reduction: Reduction) -> Result<Occupation> {
    if records.is_empty() {
        return Err(EstimationError::Empty);
    }
    let k = reduction.n_states();
    let rows: Vec<Reduced> = records.rows().iter().filter_map(|r| reduction.map(r)).collect();

    let mut events: Vec<&Reduced> = rows.iter().filter(|r| r.to.is_some_and(|to| to != r.from)).collect();
    events.sort_by(|a, b| a.stop.total_cmp(&b.stop));
    let mut starts: Vec<(f64, usize)> = rows.iter().map(|r| (r.start, r.from)).collect();
    let mut stops: Vec<(f64, usize)> = rows.iter().map(|r| (r.stop, r.from)).collect();
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut at_risk = vec![0i64; k];
    let (mut si, mut ei) = (0, 0);
    let mut p = vec![0.0; k];
    p[0] = 1.0;
    let mut dn = vec![0usize; k * k];
    let mut out = Occupation { times: Vec::new(), probs: Vec::new(), n_states: k, truncated_at: None };

    let mut i = 0;
    while i < events.len() {
        let t = events[i].stop;
        while si < starts.len() && starts[si].0 < t {
            at_risk[starts[si].1] += 1;
            si += 1;
        }
        while ei < stops.len() && stops[ei].0 < t {
            at_risk[stops[ei].1] -= 1;
            ei += 1;
        }
        dn.iter_mut().for_each(|x| *x = 0);
        while i < events.len() && events[i].stop == t {
            let e = events[i];
            dn[e.from * k + e.to.expect("event row")] += 1;
            i += 1;
        }
        let prev = p.clone();
        for from in 0..k {
            let y = at_risk[from];
            let leaving: usize = dn[from * k..(from + 1) * k].iter().sum();
            if leaving == 0 {
                continue;
            }
            if y <= 0 {
                return Err(EstimationError::Invalid(format!(
                    "transition out of state {from} at {t} with an empty risk set"
                )));
            }
            for to in 0..k {
                let d = dn[from * k + to];
                if d > 0 {
                    let flow = prev[from] * d as f64 / y as f64;
                    p[from] -= flow;
                    p[to] += flow;
                }
            }
        }
        out.times.push(t);
        out.probs.push(p.clone());
    }

    let transient: Vec<bool> = (0..k).map(|s| rows.iter().any(|r| r.from == s)).collect();
    let remaining: f64 = p.iter().zip(&transient).filter(|(_, &tr)| tr).map(|(x, _)| x).sum();
    if remaining > MASS_EPS {
        out.truncated_at = rows.iter().map(|r| r.stop).reduce(f64::max);
    }
    Ok(out)
}

/// The six occupation probabilities `P_{0l}(0, t)` of the extended model.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationCurves {
    curves: Vec<StepCurve>,
}

impl OccupationCurves {
    pub fn get(&self, state: State) -> &StepCurve {
        &self.curves[state.index()]
    }

    pub fn times(&self) -> &[f64] {
        self.curves[0].times()
    }

    /// Sum of the six probabilities at `t`.
    pub fn total(&self, t: f64) -> f64 {
        self.curves.iter().map(|c| c.value(t)).sum()
    }

    pub fn truncated_at(&self) -> Option<f64> {
        self.curves[0].truncated_at()
    }
}

pub fn aalen_johansen_extended(records: &TransitionRecords) -> Result<OccupationCurves> {
    let occ = aalen_johansen(records, Reduction::Extended)?;
    Ok(OccupationCurves { curves: (0..6).map(|s| occ.curve(s)).collect() })
}

/// `P(D(t) = 1)` from the model with states 2/4 and 3/5 combined.
pub fn overall_death_risk(records: &TransitionRecords) -> Result<StepCurve> {
    Ok(aalen_johansen(records, Reduction::Combined)?.curve(C_DEATH))
}

/// `P(D(t) = 1 | E(t) = 0) = P03 / (P00 + P02 + P03)` from the three-state
/// competing-risks model. Undefined once everyone still counted is exposed.
pub fn cpf_unexposed(records: &TransitionRecords) -> Result<StepCurve> {
    let occ = aalen_johansen(records, Reduction::ThreeState)?;
    Ok(occ.curve_of(|p| {
        let unexposed = p[T_FREE] + p[T_DISCHARGE] + p[T_DEATH];
        if unexposed > 0.0 {
            p[T_DEATH] / unexposed
        } else {
            f64::NAN
        }
    }))
}

/// Occupation curves of the competing-risks model in which exposure is
/// treated as censoring.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualCurves {
    pub event_free: StepCurve,
    pub discharge: StepCurve,
    pub death: StepCurve,
}

pub fn censor_at_exposure(records: &TransitionRecords) -> Result<CounterfactualCurves> {
    let occ = aalen_johansen(records, Reduction::CensorAtExposure)?;
    Ok(CounterfactualCurves {
        event_free: occ.curve(Z_FREE),
        discharge: occ.curve(Z_DISCHARGE),
        death: occ.curve(Z_DEATH),
    })
}

/// `P_{03_0}(0, t)`: death risk had the exposure hazard been zero.
pub fn cif_counterfactual(records: &TransitionRecords) -> Result<StepCurve> {
    Ok(censor_at_exposure(records)?.death)
}

/// Horvitz-Thompson form of the counterfactual death CIF,
/// `(1/n) sum_i N_03i(t) / G(T_i-)`.
///
/// `G` is the Kaplan-Meier curve of leaving state 0 by exposure (or loss to
/// follow-up), with deaths and discharges as its censorings; a terminal event
/// at time `t` leaves before exposures at `t` are counted.
pub fn ht_cif(records: &TransitionRecords) -> Result<StepCurve> {
    if records.is_empty() {
        return Err(EstimationError::Empty);
    }
    let paths = unexposed_paths(records);
    let times: Vec<f64> = paths.iter().map(|p| p.time).collect();
    let censored: Vec<bool> = paths.iter().map(|p| p.outcome == EndStatus::Censored).collect();
    let g = kaplan_meier_with(&times, &censored, TieOrder::CensoringsFirst)?;

    let n = records.n_subjects() as f64;
    let mut deaths: Vec<f64> = paths.iter().filter(|p| p.outcome == EndStatus::Death).map(|p| p.time).collect();
    deaths.sort_by(f64::total_cmp);
    let (mut jt, mut jv) = (Vec::new(), Vec::new());
    let mut acc = 0.0;
    let mut i = 0;
    while i < deaths.len() {
        let t = deaths[i];
        let w = g.survival_before(t);
        if w <= 0.0 {
            return Err(EstimationError::Positivity(format!(
                "no probability of remaining unexposed just before death at {t}"
            )));
        }
        while i < deaths.len() && deaths[i] == t {
            acc += 1.0 / w;
            i += 1;
        }
        jt.push(t);
        jv.push(acc / n);
    }
    Ok(StepCurve::from_parts(jt, jv, 0.0))
}

/// A subject's path in the censor-at-exposure model: how and when it left state 0.
struct UnexposedPath {
    time: f64,
    /// `Censored` covers both exposure and loss to follow-up.
    outcome: EndStatus,
}

fn unexposed_paths(records: &TransitionRecords) -> Vec<UnexposedPath> {
    records
        .rows()
        .iter()
        .filter(|r| r.from == State::Admission)
        .map(|r| UnexposedPath {
            time: r.stop,
            outcome: match r.to {
                Some(State::DeathUnexposed) => EndStatus::Death,
                Some(State::DischargeUnexposed) => EndStatus::Discharge,
                _ => EndStatus::Censored,
            },
        })
        .collect()
}
