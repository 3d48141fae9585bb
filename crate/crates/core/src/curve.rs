//! Right-continuous step functions of time.
//!
//! Every estimator in the crate returns a [`StepCurve`]. A curve stores its
//! jump times, the value attained at each jump, and the value before the
//! first jump. Undefined regions (a ratio whose denominator vanished) are
//! stored as `NaN` and surfaced as `None` through [`StepCurve::get`].

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::EstimationError;

#[derive(Debug, Clone, PartialEq)]
pub struct StepCurve {
    times: Vec<f64>,
    values: Vec<f64>,
    initial: f64,
    truncated_at: Option<f64>,
}

impl StepCurve {
    /// Builds a curve from strictly increasing jump times.
    pub fn new(times: Vec<f64>, values: Vec<f64>, initial: f64) -> Result<Self, EstimationError> {
        if times.len() != values.len() {
            return Err(EstimationError::Invalid(format!(
                "step curve has {} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(EstimationError::Invalid(format!(
                "step curve times not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(EstimationError::Invalid("step curve time is not finite".into()));
        }
        Ok(Self { times, values, initial, truncated_at: None })
    }

    /// Curve with no jumps.
    pub fn constant(value: f64) -> Self {
        Self { times: Vec::new(), values: Vec::new(), initial: value, truncated_at: None }
    }

    pub(crate) fn from_parts(times: Vec<f64>, values: Vec<f64>, initial: f64) -> Self {
        debug_assert_eq!(times.len(), values.len());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        Self { times, values, initial, truncated_at: None }
    }

    /// Marks the curve as frozen beyond `t` because the risk set ran out.
    pub fn with_truncation(mut self, t: Option<f64>) -> Self {
        self.truncated_at = t;
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn truncated_at(&self) -> Option<f64> {
        self.truncated_at
    }

    /// Value at `t`; `NaN` where the curve is undefined.
    pub fn value(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x <= t);
        if idx == 0 {
            self.initial
        } else {
            self.values[idx - 1]
        }
    }

    /// Left limit `value(t-)`.
    pub fn value_before(&self, t: f64) -> f64 {
        let idx = self.times.partition_point(|&x| x < t);
        if idx == 0 {
            self.initial
        } else {
            self.values[idx - 1]
        }
    }

    pub fn get(&self, t: f64) -> Option<f64> {
        let v = self.value(t);
        (!v.is_nan()).then_some(v)
    }

    pub fn is_defined(&self, t: f64) -> bool {
        !self.value(t).is_nan()
    }

    /// First jump time at which the curve becomes undefined.
    pub fn undefined_from(&self) -> Option<f64> {
        if self.initial.is_nan() {
            return Some(f64::NEG_INFINITY);
        }
        self.times.iter().zip(&self.values).find(|(_, v)| v.is_nan()).map(|(t, _)| *t)
    }

    /// Largest jump time, or `None` for a constant curve.
    pub fn last_time(&self) -> Option<f64> {
        self.times.last().copied()
    }

    /// Final value (the clamp value beyond the last jump).
    pub fn last_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial)
    }

    /// Equality that treats `NaN` as equal to itself (compares bit patterns).
    pub fn bit_identical(&self, other: &StepCurve) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.times) == bits(&other.times)
            && bits(&self.values) == bits(&other.values)
            && self.initial.to_bits() == other.initial.to_bits()
            && self.truncated_at.map(f64::to_bits) == other.truncated_at.map(f64::to_bits)
    }

    /// Pointwise combination on the union of both jump grids.
    pub fn combine(&self, other: &StepCurve, f: impl Fn(f64, f64) -> f64) -> StepCurve {
        let grid = union_grid(&self.times, &other.times);
        let values = grid.iter().map(|&t| f(self.value(t), other.value(t))).collect();
        let truncated_at = match (self.truncated_at, other.truncated_at) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        StepCurve {
            times: grid,
            values,
            initial: f(self.initial, other.initial),
            truncated_at,
        }
    }

    /// Pointwise map keeping the grid.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> StepCurve {
        StepCurve {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            initial: f(self.initial),
            truncated_at: self.truncated_at,
        }
    }

    /// Evaluates the curve on `grid` and returns it as a new step curve with
    /// jumps at the grid points.
    pub fn resample(&self, grid: &[f64]) -> Result<StepCurve, EstimationError> {
        let values = grid.iter().map(|&t| self.value(t)).collect();
        Ok(StepCurve::new(grid.to_vec(), values, self.initial)?.with_truncation(self.truncated_at))
    }

    /// Largest absolute difference over the points of `grid` where both curves
    /// are defined. Returns `None` when no point is comparable.
    pub fn sup_distance_on(&self, other: &StepCurve, grid: &[f64]) -> Option<f64> {
        grid.iter()
            .filter_map(|&t| match (self.get(t), other.get(t)) {
                (Some(a), Some(b)) => Some((a - b).abs()),
                _ => None,
            })
            .reduce(f64::max)
    }

    /// Writes `t,value` rows at the jump times. Undefined values are written as `NA`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "value"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([format_num(*t), format_num(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> CurveJson {
        CurveJson {
            times: self.times.clone(),
            values: self.values.iter().map(|v| (!v.is_nan()).then_some(*v)).collect(),
            initial: (!self.initial.is_nan()).then_some(self.initial),
            truncated_at: self.truncated_at,
            undefined_from: self.undefined_from(),
        }
    }
}

/// JSON form of a [`StepCurve`]; undefined values are `null`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurveJson {
    pub times: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub initial: Option<f64>,
    pub truncated_at: Option<f64>,
    pub undefined_from: Option<f64>,
}

impl From<CurveJson> for StepCurve {
    fn from(j: CurveJson) -> Self {
        StepCurve {
            times: j.times,
            values: j.values.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect(),
            initial: j.initial.unwrap_or(f64::NAN),
            truncated_at: j.truncated_at,
        }
    }
}

/// Sorted union of two increasing grids with exact duplicates removed.
pub fn union_grid(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(&x), Some(&y)) if y < x => {
                j += 1;
                y
            }
            (Some(&x), Some(_)) => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if out.last() != Some(&next) {
            out.push(next);
        }
    }
    out
}

/// Integer days `1..=ceil(tau)`.
pub fn day_grid(tau: f64) -> Vec<f64> {
    (1..=tau.ceil() as u32).map(f64::from).collect()
}

/// Formats a number for CSV output; `NaN` becomes `NA`.
pub fn format_num(v: f64) -> String {
    if v.is_nan() {
        "NA".to_string()
    } else {
        format!("{v}")
    }
}
