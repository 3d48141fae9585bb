use serde::{Deserialize, Serialize};

use crate::error::{EstimationError, Result};

/// One piece of a piecewise-constant hazard: `rate` per day on `[previous until, until)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub until: f64,
    pub rate: f64,
}

/// Piecewise-constant hazard. The last rate continues beyond its `until`;
/// an empty list is the zero hazard.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseHazard {
    pieces: Vec<Piece>,
}

impl PiecewiseHazard {
    pub fn new(pieces: Vec<Piece>) -> Result<Self> {
        let h = Self { pieces };
        h.validate()?;
        Ok(h)
    }

    pub fn constant(rate: f64) -> Self {
        Self { pieces: vec![Piece { until: 1.0, rate }] }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    fn validate(&self) -> Result<()> {
        for (k, p) in self.pieces.iter().enumerate() {
            if !(p.rate >= 0.0) || !p.rate.is_finite() {
                return Err(EstimationError::HazardSpec(format!("rate {} must be finite and non-negative", p.rate)));
            }
            if !(p.until > 0.0) || !p.until.is_finite() {
                return Err(EstimationError::HazardSpec(format!("breakpoint {} must be positive", p.until)));
            }
            if k > 0 && !(self.pieces[k - 1].until < p.until) {
                return Err(EstimationError::HazardSpec("breakpoints must be increasing".into()));
            }
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.pieces.iter().all(|p| p.rate == 0.0)
    }

    /// Rate on the piece containing `t` (right-continuous).
    pub fn rate(&self, t: f64) -> f64 {
        match self.pieces.iter().find(|p| t < p.until) {
            Some(p) => p.rate,
            None => self.pieces.last().map_or(0.0, |p| p.rate),
        }
    }

    /// Interior breakpoints at which the rate may change.
    pub fn breakpoints(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.pieces.len().saturating_sub(1);
        self.pieces[..n].iter().map(|p| p.until)
    }

    /// Cumulative hazard `int_0^t rate`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        let mut start = 0.0;
        for (k, p) in self.pieces.iter().enumerate() {
            let last = k + 1 == self.pieces.len();
            let end = if last { f64::INFINITY } else { p.until };
            if t <= end {
                return acc + p.rate * (t - start);
            }
            acc += p.rate * (end - start);
            start = end;
        }
        acc
    }
}

/// Sum of scaled hazards, as `(starts, rates)` with `rates[k]` on `[starts[k], starts[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Combined {
    starts: Vec<f64>,
    rates: Vec<f64>,
}

impl Combined {
    pub fn new(parts: &[(&PiecewiseHazard, f64)]) -> Self {
        let mut starts = vec![0.0];
        for (h, _) in parts {
            starts.extend(h.breakpoints());
        }
        starts.sort_by(f64::total_cmp);
        starts.dedup();
        let rates = starts.iter().map(|&s| parts.iter().map(|(h, w)| w * h.rate(s)).sum()).collect();
        Self { starts, rates }
    }

    pub fn add_constant(mut self, c: f64) -> Self {
        self.rates.iter_mut().for_each(|r| *r += c);
        self
    }

    #[cfg(test)]
    pub fn cumulative(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.starts.len() {
            let end = self.starts.get(k + 1).copied().unwrap_or(f64::INFINITY);
            if t <= end {
                return acc + self.rates[k] * (t - self.starts[k]);
            }
            acc += self.rates[k] * (end - self.starts[k]);
        }
        acc
    }

    /// Smallest `t >= from` with `H(t) - H(from) = e`, if the hazard ever accumulates that much.
    pub fn time_to(&self, from: f64, e: f64) -> Option<f64> {
        let mut remaining = e;
        let first = self.starts.partition_point(|&s| s <= from) - 1;
        let mut t = from;
        for k in first..self.starts.len() {
            let end = self.starts.get(k + 1).copied().unwrap_or(f64::INFINITY);
            let rate = self.rates[k];
            if rate > 0.0 && rate * (end - t) >= remaining {
                return Some(t + remaining / rate);
            }
            remaining -= rate * (end - t);
            t = end;
        }
        None
    }
}

/// Cause-specific hazards of the extended illness-death model, per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardSpec {
    #[serde(default)]
    pub alpha01: PiecewiseHazard,
    #[serde(default)]
    pub alpha02: PiecewiseHazard,
    #[serde(default)]
    pub alpha03: PiecewiseHazard,
    #[serde(default)]
    pub alpha14: PiecewiseHazard,
    #[serde(default)]
    pub alpha15: PiecewiseHazard,
    /// Post-exposure hazards are multiplied by `exp(gamma * inf_time)`.
    #[serde(default)]
    pub gamma: f64,
    /// Rate of independent loss to follow-up.
    #[serde(default)]
    pub censor_rate: f64,
    pub tau: f64,
    /// Round event times up to whole days.
    #[serde(default)]
    pub round_days: bool,
}

impl HazardSpec {
    pub fn constant(a01: f64, a02: f64, a03: f64, a14: f64, a15: f64, tau: f64) -> Self {
        Self {
            alpha01: PiecewiseHazard::constant(a01),
            alpha02: PiecewiseHazard::constant(a02),
            alpha03: PiecewiseHazard::constant(a03),
            alpha14: PiecewiseHazard::constant(a14),
            alpha15: PiecewiseHazard::constant(a15),
            gamma: 0.0,
            censor_rate: 0.0,
            tau,
            round_days: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| EstimationError::HazardSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hazard spec serializes")
    }

    pub fn hazards(&self) -> [&PiecewiseHazard; 5] {
        [&self.alpha01, &self.alpha02, &self.alpha03, &self.alpha14, &self.alpha15]
    }

    pub fn validate(&self) -> Result<()> {
        for h in self.hazards() {
            h.validate()?;
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(EstimationError::HazardSpec(format!("tau {} must be positive", self.tau)));
        }
        if !(self.censor_rate >= 0.0) || !self.censor_rate.is_finite() {
            return Err(EstimationError::HazardSpec(format!("censor_rate {} must be non-negative", self.censor_rate)));
        }
        if !self.gamma.is_finite() {
            return Err(EstimationError::HazardSpec("gamma must be finite".into()));
        }
        Ok(())
    }

    /// Every breakpoint of the five hazards, sorted and deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.hazards().iter().flat_map(|h| h.breakpoints()).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

/// Illustrative hazard shapes for a hospital-acquired exposure: high early
/// discharge that tapers off, a small exposure hazard peaking in the first
/// weeks and higher mortality after exposure. Not a reproduction of any data set.
pub fn presets() -> Vec<(&'static str, HazardSpec)> {
    let pieces = |v: &[(f64, f64)]| PiecewiseHazard { pieces: v.iter().map(|&(until, rate)| Piece { until, rate }).collect() };
    vec![
        ("constant", HazardSpec::constant(0.05, 0.05, 0.02, 0.05, 0.03, 100.0)),
        (
            "decreasing-discharge",
            HazardSpec {
                alpha01: pieces(&[(5.0, 0.01), (20.0, 0.03), (100.0, 0.01)]),
                alpha02: pieces(&[(10.0, 0.12), (30.0, 0.06), (100.0, 0.03)]),
                alpha03: pieces(&[(10.0, 0.004), (100.0, 0.008)]),
                alpha14: pieces(&[(20.0, 0.04), (100.0, 0.06)]),
                alpha15: pieces(&[(100.0, 0.012)]),
                gamma: 0.0,
                censor_rate: 0.0,
                tau: 100.0,
                round_days: false,
            },
        ),
        (
            "harmful-exposure",
            HazardSpec {
                alpha01: pieces(&[(15.0, 0.04), (100.0, 0.02)]),
                alpha02: pieces(&[(7.0, 0.1), (100.0, 0.05)]),
                alpha03: pieces(&[(100.0, 0.01)]),
                alpha14: pieces(&[(100.0, 0.03)]),
                alpha15: pieces(&[(30.0, 0.03), (100.0, 0.02)]),
                gamma: 0.0,
                censor_rate: 0.0,
                tau: 100.0,
                round_days: false,
            },
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: &[(f64, f64)]) -> PiecewiseHazard {
        PiecewiseHazard::new(v.iter().map(|&(until, rate)| Piece { until, rate }).collect()).unwrap()
    }

    #[test]
    fn piecewise_rate_and_cumulative() {
        let a = h(&[(2.0, 1.0), (5.0, 0.5)]);
        assert_eq!(a.rate(0.0), 1.0);
        assert_eq!(a.rate(2.0), 0.5);
        assert_eq!(a.rate(9.0), 0.5);
        assert_eq!(a.cumulative(1.0), 1.0);
        assert_eq!(a.cumulative(4.0), 3.0);
        assert_eq!(a.cumulative(7.0), 4.5);
        assert_eq!(a.breakpoints().collect::<Vec<_>>(), vec![2.0]);
    }

    #[test]
    fn combined_inverse() {
        let a = h(&[(2.0, 1.0), (5.0, 0.5)]);
        let z = PiecewiseHazard::zero();
        let c = Combined::new(&[(&a, 1.0), (&z, 1.0)]);
        for t in [0.3, 1.9, 2.0, 3.7, 8.0] {
            let e = c.cumulative(t);
            assert!((c.time_to(0.0, e).unwrap() - t).abs() < 1e-12);
        }
        assert!((c.time_to(1.0, 2.0).unwrap() - 4.0).abs() < 1e-12);
        let zero = Combined::new(&[(&z, 1.0)]);
        assert_eq!(zero.time_to(0.0, 0.1), None);
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"alpha01":[{"until":10,"rate":0.05},{"until":100,"rate":0.01}],"alpha02":[{"until":100,"rate":0.05}],
            "alpha03":[{"until":100,"rate":0.02}],"alpha14":[{"until":100,"rate":0.05}],"alpha15":[{"until":100,"rate":0.03}],
            "gamma":0,"censor_rate":0,"tau":100,"round_days":false}"#;
        let spec = HazardSpec::from_json(text).unwrap();
        assert_eq!(spec.alpha01.rate(12.0), 0.01);
        assert_eq!(HazardSpec::from_json(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(HazardSpec::from_json(r#"{"alpha01":[{"until":10,"rate":-1}],"tau":10}"#).is_err());
        assert!(HazardSpec::from_json(r#"{"alpha01":[{"until":10,"rate":1},{"until":5,"rate":1}],"tau":10}"#).is_err());
        assert!(HazardSpec::from_json(r#"{"tau":0}"#).is_err());
        assert!(HazardSpec::from_json(r#"{"tau":10,"beta":1}"#).is_err());
    }
}
