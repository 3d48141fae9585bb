//! Population-attributable fractions.
//!
//! `PAF_o(t) = (P(D(t)=1) - P(D(t)=1 | E(t)=0)) / P(D(t)=1)` is the observable
//! fraction; `PAF_c(t)` replaces the conditional risk by the counterfactual
//! risk `P(D_0(t)=1)` had nobody been exposed. Each can be estimated with the
//! multi-state estimators, or on the daily panel with the naive (`PAF_o`)
//! and inverse-probability-weighted (`PAF_c`) estimators.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{discretize, to_transitions, Cohort, DailyPanel, EndStatus, TransitionRecords};
use crate::curve::{format_num, StepCurve};
use crate::discrete::{compute_weights, death_proportion, expand_person_days, fit_pooled_logistic, ipw_f01, naive_f01, ExposureModel};
use crate::error::{DataError, EstimationError, Result};
use crate::multistate::{cif_counterfactual, cpf_unexposed, overall_death_risk};
use crate::simulate::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Estimand {
    #[serde(rename = "paf_o")]
    PafO,
    #[serde(rename = "paf_c")]
    PafC,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimand::PafO => "paf_o",
            Estimand::PafC => "paf_c",
        })
    }
}

impl FromStr for Estimand {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "paf_o" => Ok(Estimand::PafO),
            "paf_c" => Ok(Estimand::PafC),
            other => Err(format!("unknown estimand {other:?} (expected paf_o or paf_c)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Estimator {
    #[serde(rename = "multistate")]
    Multistate,
    #[serde(rename = "bekaert_naive")]
    Naive,
    #[serde(rename = "bekaert_ipw")]
    Ipw,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Multistate => "multistate",
            Estimator::Naive => "bekaert_naive",
            Estimator::Ipw => "bekaert_ipw",
        })
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "multistate" => Ok(Estimator::Multistate),
            "naive" | "bekaert_naive" => Ok(Estimator::Naive),
            "ipw" | "bekaert_ipw" => Ok(Estimator::Ipw),
            other => Err(format!("unknown estimator {other:?} (expected multistate, naive or ipw)")),
        }
    }
}

/// Exposure model behind the IPW weights.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub enum WeightSpec {
    /// Empirical daily exposure hazard.
    #[default]
    Nonparametric,
    /// Pooled logistic regression on the named baseline covariates.
    Logistic(Vec<String>),
}

/// A consistent estimand/estimator pair plus estimator options.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EstimatorSpec {
    pub estimand: Estimand,
    pub estimator: Estimator,
    pub weights: WeightSpec,
    /// Drop censored subjects before building the daily panel.
    pub allow_drop_censored: bool,
}

impl EstimatorSpec {
    /// The naive daily estimator targets `PAF_o` and the weighted one `PAF_c`;
    /// the multi-state estimators cover both.
    pub fn new(estimand: Estimand, estimator: Estimator) -> Result<Self> {
        match (estimand, estimator) {
            (Estimand::PafC, Estimator::Naive) => {
                Err(EstimationError::Invalid("the naive estimator estimates paf_o, not paf_c".into()))
            }
            (Estimand::PafO, Estimator::Ipw) => {
                Err(EstimationError::Invalid("the ipw estimator estimates paf_c, not paf_o".into()))
            }
            _ => Ok(Self { estimand, estimator, weights: WeightSpec::Nonparametric, allow_drop_censored: false }),
        }
    }

    pub fn with_weights(mut self, weights: WeightSpec) -> Self {
        self.weights = weights;
        self
    }

    pub fn allowing_dropped_censored(mut self, allow: bool) -> Self {
        self.allow_drop_censored = allow;
        self
    }
}

/// A PAF curve with the estimand and estimator that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PafCurve {
    pub curve: StepCurve,
    pub estimand: Estimand,
    pub estimator: Estimator,
}

impl PafCurve {
    pub fn value(&self, t: f64) -> f64 {
        self.curve.value(t)
    }

    pub fn get(&self, t: f64) -> Option<f64> {
        self.curve.get(t)
    }

    /// Writes `t,estimate,lower,upper,defined` with empty bands.
    pub fn write_report<W: Write>(&self, grid: &[f64], out: W) -> Result<(), DataError> {
        write_report(grid, &self.curve, None, out)
    }
}

fn paf_ratio(overall: &StepCurve, reference: &StepCurve) -> StepCurve {
    overall.combine(reference, |d, r| if d > 0.0 { (d - r) / d } else { f64::NAN })
}

/// `(P(D) - P(D | E = 0)) / P(D)`; undefined where `P(D) = 0`.
pub fn paf_o(overall: &StepCurve, cpf: &StepCurve) -> PafCurve {
    PafCurve { curve: paf_ratio(overall, cpf), estimand: Estimand::PafO, estimator: Estimator::Multistate }
}

/// `(P(D) - P(D_0)) / P(D)`; undefined where `P(D) = 0`.
pub fn paf_c(overall: &StepCurve, counterfactual: &StepCurve) -> PafCurve {
    PafCurve { curve: paf_ratio(overall, counterfactual), estimand: Estimand::PafC, estimator: Estimator::Multistate }
}

/// Exposure by outcome counts at the end of follow-up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FourfoldTable {
    pub exposed_cases: u64,
    pub exposed_noncases: u64,
    pub unexposed_cases: u64,
    pub unexposed_noncases: u64,
}

impl FourfoldTable {
    /// Ever-exposed against died in the unit; needs complete follow-up.
    pub fn from_cohort(cohort: &Cohort) -> Result<Self, DataError> {
        if cohort.has_censoring() {
            return Err(DataError::Invalid("a fourfold table needs complete follow-up".into()));
        }
        let mut t = Self::default();
        for s in cohort.subjects() {
            let death = s.end_status == EndStatus::Death;
            match (s.is_exposed(), death) {
                (true, true) => t.exposed_cases += 1,
                (true, false) => t.exposed_noncases += 1,
                (false, true) => t.unexposed_cases += 1,
                (false, false) => t.unexposed_noncases += 1,
            }
        }
        Ok(t)
    }

    pub fn total(&self) -> u64 {
        self.exposed_cases + self.exposed_noncases + self.unexposed_cases + self.unexposed_noncases
    }
}

/// Time-fixed PAF from a fourfold table; `None` without cases or without unexposed subjects.
pub fn paf_fixed(table: &FourfoldTable) -> Option<f64> {
    let cases = table.exposed_cases + table.unexposed_cases;
    let unexposed = table.unexposed_cases + table.unexposed_noncases;
    if cases == 0 || unexposed == 0 {
        return None;
    }
    let pd = cases as f64 / table.total() as f64;
    let pd0 = table.unexposed_cases as f64 / unexposed as f64;
    Some((pd - pd0) / pd)
}

/// Observed deaths with `end_time <= t`.
pub fn deaths_by(cohort: &Cohort, t: f64) -> usize {
    cohort.subjects().iter().filter(|s| s.end_status == EndStatus::Death && s.end_time <= t).count()
}

/// `round(paf * deaths)`, rounding half away from zero.
pub fn preventable_count(paf: f64, deaths: usize) -> i64 {
    (paf * deaths as f64).round() as i64
}

/// Cohort in the form an estimator consumes.
#[derive(Debug, Clone)]
enum Prepared {
    Multistate(TransitionRecords),
    Daily(DailyPanel),
}

impl Prepared {
    fn new(cohort: &Cohort, spec: &EstimatorSpec) -> Result<Self> {
        Ok(match spec.estimator {
            Estimator::Multistate => Prepared::Multistate(to_transitions(cohort)),
            Estimator::Naive | Estimator::Ipw => Prepared::Daily(discretize(cohort, spec.allow_drop_censored)?),
        })
    }

    fn len(&self) -> usize {
        match self {
            Prepared::Multistate(r) => r.n_subjects(),
            Prepared::Daily(p) => p.len(),
        }
    }

    fn resample(&self, indices: &[usize]) -> Self {
        match self {
            Prepared::Multistate(r) => Prepared::Multistate(r.resample(indices)),
            Prepared::Daily(p) => Prepared::Daily(p.resample(indices)),
        }
    }

    fn estimate(&self, spec: &EstimatorSpec) -> Result<PafCurve> {
        let curve = match self {
            Prepared::Multistate(records) => {
                let overall = overall_death_risk(records)?;
                let reference = match spec.estimand {
                    Estimand::PafO => cpf_unexposed(records)?,
                    Estimand::PafC => cif_counterfactual(records)?,
                };
                paf_ratio(&overall, &reference)
            }
            Prepared::Daily(panel) => {
                let overall = death_proportion(panel);
                let reference = match spec.estimator {
                    Estimator::Naive => naive_f01(panel),
                    _ => {
                        let model = match &spec.weights {
                            WeightSpec::Nonparametric => ExposureModel::nonparametric(&expand_person_days(panel, &[])?),
                            WeightSpec::Logistic(covs) => fit_pooled_logistic(&expand_person_days(panel, covs)?, covs)?,
                        };
                        ipw_f01(panel, &compute_weights(panel, &model)?)?
                    }
                };
                paf_ratio(&overall, &reference)
            }
        };
        Ok(PafCurve { curve, estimand: spec.estimand, estimator: spec.estimator })
    }
}

/// Runs the estimator described by `spec` on the cohort.
pub fn estimate_paf(cohort: &Cohort, spec: &EstimatorSpec) -> Result<PafCurve> {
    Prepared::new(cohort, spec)?.estimate(spec)
}

/// Point estimate with a pointwise percentile bootstrap band on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveWithBands {
    pub estimand: Estimand,
    pub estimator: Estimator,
    pub point: StepCurve,
    pub lower: StepCurve,
    pub upper: StepCurve,
    pub replicates: usize,
    pub seed: u64,
}

impl CurveWithBands {
    /// Writes `t,estimate,lower,upper,defined` on the band grid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        write_report(self.point.times(), &self.point, Some((&self.lower, &self.upper)), out)
    }
}

fn write_report<W: Write>(grid: &[f64], point: &StepCurve, bands: Option<(&StepCurve, &StepCurve)>, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "estimate", "lower", "upper", "defined"])?;
    for &t in grid {
        let v = point.value(t);
        let (lo, hi) = bands.map_or((f64::NAN, f64::NAN), |(l, u)| (l.value(t), u.value(t)));
        w.write_record([format_num(t), format_num(v), format_num(lo), format_num(hi), u8::from(!v.is_nan()).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Sample quantile, linear interpolation between order statistics (type 7).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        m => {
            let h = (m - 1) as f64 * p;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(m - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

/// Nonparametric bootstrap of the full pipeline.
///
/// Replicate `r` draws `n` subjects with replacement using stream `r` of the
/// seeded generator, so results do not depend on thread scheduling. A
/// replicate whose estimator fails counts as undefined everywhere. The band
/// is the 2.5/97.5 percentile of the defined replicate values, and undefined
/// where more than half of the replicates are undefined.
pub fn bootstrap_ci(cohort: &Cohort, spec: &EstimatorSpec, replicates: usize, seed: u64, grid: &[f64]) -> Result<CurveWithBands> {
    if replicates < 2 {
        return Err(EstimationError::Invalid("bootstrap needs at least 2 replicates".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EstimationError::Invalid("bootstrap grid must be strictly increasing".into()));
    }
    let prepared = Prepared::new(cohort, spec)?;
    let n = prepared.len();
    if n == 0 {
        return Err(EstimationError::Empty);
    }
    let point = prepared.estimate(spec)?.curve;

    let draws: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let indices: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            match prepared.resample(&indices).estimate(spec) {
                Ok(paf) => grid.iter().map(|&t| paf.curve.value(t)).collect(),
                Err(_) => vec![f64::NAN; grid.len()],
            }
        })
        .collect();

    let (mut lower, mut upper) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
    for j in 0..grid.len() {
        let mut values: Vec<f64> = draws.iter().map(|d| d[j]).filter(|v| !v.is_nan()).collect();
        if 2 * (replicates - values.len()) > replicates {
            lower.push(f64::NAN);
            upper.push(f64::NAN);
            continue;
        }
        values.sort_by(f64::total_cmp);
        lower.push(quantile_type7(&values, 0.025));
        upper.push(quantile_type7(&values, 0.975));
    }
    let point_values = grid.iter().map(|&t| point.value(t)).collect();
    let step = |v| StepCurve::new(grid.to_vec(), v, f64::NAN);
    Ok(CurveWithBands {
        estimand: spec.estimand,
        estimator: spec.estimator,
        point: step(point_values)?.with_truncation(point.truncated_at()),
        lower: step(lower)?,
        upper: step(upper)?,
        replicates,
        seed,
    })
}

/// One PAF curve per level of a categorical covariate, each on its sub-cohort.
/// A stratum without deaths gets an undefined curve.
pub fn stratified_paf(cohort: &Cohort, covariate: &str, spec: &EstimatorSpec) -> Result<Vec<(String, PafCurve)>> {
    let mut out = Vec::new();
    for level in cohort.levels(covariate)? {
        let stratum = cohort.stratum(covariate, &level)?;
        let curve = if stratum.subjects().iter().any(|s| s.end_status == EndStatus::Death) {
            estimate_paf(&stratum, spec)?
        } else {
            PafCurve { curve: StepCurve::constant(f64::NAN), estimand: spec.estimand, estimator: spec.estimator }
        };
        out.push((level, curve));
    }
    Ok(out)
}

/// What a run was computed from, for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub input: Option<String>,
    pub n_subjects: usize,
    pub tie_policy: String,
    pub estimand: Option<Estimand>,
    pub estimator: Option<Estimator>,
    pub weights: Option<WeightSpec>,
    pub grid: String,
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
}
