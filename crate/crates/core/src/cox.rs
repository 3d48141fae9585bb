//! Cox proportional-hazards fits on counting-process data.
//!
//! Rows are risk intervals `(start, stop]` with fixed covariates, so a
//! time-dependent exposure is two rows per exposed subject. Tied event times
//! use the Breslow approximation.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cohort::{State, TransitionRecords};
use crate::curve::format_num;
use crate::discrete::{Design, Term};
use crate::error::{DataError, EstimationError, Result};

pub const MAX_ITERATIONS: usize = 100;
pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const DIVERGENCE_LIMIT: f64 = 30.0;
/// A coefficient whose information has fallen below this fraction of its
/// value at zero is drifting to infinity (monotone likelihood).
pub const INFORMATION_COLLAPSE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoxOutcome {
    Death,
    Discharge,
    /// Death after exposure, for the Markov diagnostic.
    DeathAfter,
    /// Discharge after exposure, for the Markov diagnostic.
    DischargeAfter,
}

impl fmt::Display for CoxOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoxOutcome::Death => "death",
            CoxOutcome::Discharge => "discharge",
            CoxOutcome::DeathAfter => "death_after",
            CoxOutcome::DischargeAfter => "discharge_after",
        })
    }
}

impl FromStr for CoxOutcome {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "death" => Ok(CoxOutcome::Death),
            "discharge" => Ok(CoxOutcome::Discharge),
            "death_after" => Ok(CoxOutcome::DeathAfter),
            "discharge_after" => Ok(CoxOutcome::DischargeAfter),
            other => Err(format!("unknown outcome {other:?}")),
        }
    }
}

/// Counting-process design: one row per risk interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxData {
    pub terms: Vec<String>,
    start: Vec<f64>,
    stop: Vec<f64>,
    event: Vec<bool>,
    /// Row-major, centred by column means.
    x: Vec<f64>,
}

impl CoxData {
    /// Builds the design; covariate columns are centred, which leaves the
    /// partial likelihood unchanged.
    pub fn new(terms: Vec<String>, start: Vec<f64>, stop: Vec<f64>, event: Vec<bool>, mut x: Vec<f64>) -> Result<Self> {
        let (n, p) = (start.len(), terms.len());
        if stop.len() != n || event.len() != n || x.len() != n * p {
            return Err(EstimationError::Invalid("cox design dimensions disagree".into()));
        }
        if start.iter().zip(&stop).any(|(a, b)| !(a < b)) {
            return Err(EstimationError::Invalid("cox risk interval with start >= stop".into()));
        }
        if n > 0 {
            for j in 0..p {
                let mean = (0..n).map(|i| x[i * p + j]).sum::<f64>() / n as f64;
                (0..n).for_each(|i| x[i * p + j] -= mean);
            }
        }
        Ok(Self { terms, start, stop, event, x })
    }

    /// Exposure as a time-dependent 0/1 covariate, plus baseline covariates.
    /// The event is the outcome with or without prior exposure.
    pub fn time_dependent(records: &TransitionRecords, outcome: CoxOutcome, covariates: &[String]) -> Result<Self> {
        let targets = match outcome {
            CoxOutcome::Death => [State::DeathUnexposed, State::DeathExposed],
            CoxOutcome::Discharge => [State::DischargeUnexposed, State::DischargeExposed],
            _ => return Err(EstimationError::Invalid(format!("{outcome} is a post-exposure outcome"))),
        };
        let design = Design::new(covariates, records.subjects().iter().map(|m| &m.covariates))?;
        let extra: Vec<&Term> = design.terms.iter().filter(|t| **t != Term::Intercept).collect();
        let mut terms = vec!["exposure".to_string()];
        terms.extend(extra.iter().map(|t| t.label()));
        let encoded: Vec<Vec<f64>> = records.subjects().iter().map(|m| design.encode(&m.covariates)[1..].to_vec()).collect();
        if encoded.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("cox covariates must be numeric or categorical with no missing values".into()).into());
        }
        let (mut start, mut stop, mut event, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for row in records.rows() {
            start.push(row.start);
            stop.push(row.stop);
            event.push(row.to.is_some_and(|s| targets.contains(&s)));
            x.push(if row.from == State::Exposed { 1.0 } else { 0.0 });
            x.extend_from_slice(&encoded[row.subject]);
        }
        Self::new(terms, start, stop, event, x)
    }

    /// Post-exposure intervals with delayed entry at the exposure time and
    /// the exposure time as the only covariate.
    pub fn markov(records: &TransitionRecords, outcome: CoxOutcome) -> Result<Self> {
        let target = match outcome {
            CoxOutcome::DeathAfter | CoxOutcome::Death => State::DeathExposed,
            CoxOutcome::DischargeAfter | CoxOutcome::Discharge => State::DischargeExposed,
        };
        let (mut start, mut stop, mut event, mut x) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for row in records.rows().iter().filter(|r| r.from == State::Exposed) {
            start.push(row.start);
            stop.push(row.stop);
            event.push(row.to == Some(target));
            x.push(row.start);
        }
        Self::new(vec!["inf_time".to_string()], start, stop, event, x)
    }

    pub fn n_rows(&self) -> usize {
        self.start.len()
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    fn p(&self) -> usize {
        self.terms.len()
    }

    fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    /// Log partial likelihood, score and information at `beta`.
    fn evaluate(&self, beta: &[f64], second_order: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = self.p();
        let n = self.n_rows();
        let eta: Vec<f64> = (0..n).map(|i| self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
        let risk: Vec<f64> = eta.iter().map(|e| e.exp()).collect();

        let mut by_start: Vec<usize> = (0..n).collect();
        by_start.sort_by(|&a, &b| self.start[a].total_cmp(&self.start[b]));
        let mut by_stop: Vec<usize> = (0..n).collect();
        by_stop.sort_by(|&a, &b| self.stop[a].total_cmp(&self.stop[b]));
        let mut events: Vec<usize> = (0..n).filter(|&i| self.event[i]).collect();
        events.sort_by(|&a, &b| self.stop[a].total_cmp(&self.stop[b]));

        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = DMatrix::<f64>::zeros(p, p);
        let update = |i: usize, sign: f64, s0: &mut f64, s1: &mut [f64], s2: &mut DMatrix<f64>| {
            let w = sign * risk[i];
            let x = self.row(i);
            *s0 += w;
            for j in 0..p {
                s1[j] += w * x[j];
                if second_order {
                    for k in 0..=j {
                        s2[(j, k)] += w * x[j] * x[k];
                    }
                }
            }
        };

        let mut loglik = 0.0;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let (mut entered, mut left, mut e) = (0, 0, 0);
        while e < events.len() {
            let t = self.stop[events[e]];
            while entered < n && self.start[by_start[entered]] < t {
                update(by_start[entered], 1.0, &mut s0, &mut s1, &mut s2);
                entered += 1;
            }
            while left < n && self.stop[by_stop[left]] < t {
                update(by_stop[left], -1.0, &mut s0, &mut s1, &mut s2);
                left += 1;
            }
            let mut d = 0.0;
            while e < events.len() && self.stop[events[e]] == t {
                let i = events[e];
                loglik += eta[i];
                for (j, xj) in self.row(i).iter().enumerate() {
                    score[j] += xj;
                }
                d += 1.0;
                e += 1;
            }
            loglik -= d * s0.ln();
            for j in 0..p {
                let mj = s1[j] / s0;
                score[j] -= d * mj;
                if second_order {
                    for k in 0..=j {
                        info[(j, k)] += d * (s2[(j, k)] / s0 - mj * s1[k] / s0);
                    }
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                info[(k, j)] = info[(j, k)];
            }
        }
        (loglik, score, info)
    }

    pub fn log_partial_likelihood(&self, beta: &[f64]) -> f64 {
        self.evaluate(beta, false).0
    }

    pub fn score(&self, beta: &[f64]) -> Vec<f64> {
        self.evaluate(beta, false).1.iter().copied().collect()
    }

    pub fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        self.evaluate(beta, true).2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxTerm {
    pub term: String,
    pub coef: f64,
    pub hr: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub outcome: CoxOutcome,
    pub terms: Vec<CoxTerm>,
    pub log_partial_likelihood: f64,
    /// Log partial likelihood after each accepted step, starting at zero coefficients.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub n_events: usize,
}

impl CoxFit {
    pub fn term(&self, name: &str) -> Option<&CoxTerm> {
        self.terms.iter().find(|t| t.term == name)
    }
}

/// Newton-Raphson maximisation of the partial likelihood with step halving.
pub fn fit_cox(data: &CoxData, outcome: CoxOutcome) -> Result<CoxFit> {
    let n_events = data.n_events();
    if n_events == 0 {
        return Err(EstimationError::NoEvents(outcome.to_string()));
    }
    let p = data.p();
    let mut beta = vec![0.0; p];
    let (mut ll, _, info0) = data.evaluate(&beta, true);
    let mut ll_trace = vec![ll];
    let mut score_trace = Vec::new();
    for iteration in 0..=MAX_ITERATIONS {
        let (_, score, info) = data.evaluate(&beta, true);
        let max_score = score.amax();
        score_trace.push(max_score);
        if max_score < SCORE_TOLERANCE {
            if let Some(j) = (0..p).find(|&j| info[(j, j)] < INFORMATION_COLLAPSE * info0[(j, j)]) {
                return Err(EstimationError::Separation { term: data.terms[j].clone(), limit: DIVERGENCE_LIMIT });
            }
            let cov = info.try_inverse().ok_or(EstimationError::Singular)?;
            let z = Normal::standard();
            let q = z.inverse_cdf(0.975);
            let terms = (0..p)
                .map(|j| {
                    let (b, se) = (beta[j], cov[(j, j)].sqrt());
                    CoxTerm {
                        term: data.terms[j].clone(),
                        coef: b,
                        hr: b.exp(),
                        se,
                        ci_low: (b - q * se).exp(),
                        ci_high: (b + q * se).exp(),
                        p: 2.0 * z.sf((b / se).abs()),
                    }
                })
                .collect();
            return Ok(CoxFit { outcome, terms, log_partial_likelihood: ll, loglik_trace: ll_trace, iterations: iteration, n_events });
        }
        if iteration == MAX_ITERATIONS {
            break;
        }
        let step = info.cholesky().ok_or(EstimationError::Singular)?.solve(&score);
        let mut scale = 1.0;
        loop {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let cand_ll = data.log_partial_likelihood(&candidate);
            if cand_ll >= ll - rounding_slack(ll) || scale < 1e-10 {
                beta = candidate;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        ll_trace.push(ll);
        if let Some(j) = beta.iter().position(|b| b.abs() > DIVERGENCE_LIMIT) {
            return Err(EstimationError::Separation { term: data.terms[j].clone(), limit: DIVERGENCE_LIMIT });
        }
    }
    Err(EstimationError::NoConvergence { iterations: MAX_ITERATIONS, trace: score_trace })
}

/// Likelihood differences below this are rounding noise.
pub(crate) fn rounding_slack(ll: f64) -> f64 {
    1e-12 * ll.abs().max(1.0)
}

/// Hazard ratio of the time-dependent exposure for death or discharge.
pub fn fit_cox_td(records: &TransitionRecords, outcome: CoxOutcome, covariates: &[String]) -> Result<CoxFit> {
    fit_cox(&CoxData::time_dependent(records, outcome, covariates)?, outcome)
}

/// Effect of the exposure time on a post-exposure hazard. A non-zero
/// coefficient is evidence against the Markov assumption.
pub fn markov_test(records: &TransitionRecords, outcome: CoxOutcome) -> Result<CoxFit> {
    let outcome = match outcome {
        CoxOutcome::Death => CoxOutcome::DeathAfter,
        CoxOutcome::Discharge => CoxOutcome::DischargeAfter,
        o => o,
    };
    fit_cox(&CoxData::markov(records, outcome)?, outcome)
}

/// Writes `outcome,term,coef,hr,se,ci_low,ci_high,p,n_events`.
pub fn write_cox_summary<W: Write>(fits: &[CoxFit], out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["outcome", "term", "coef", "hr", "se", "ci_low", "ci_high", "p", "n_events"])?;
    for fit in fits {
        for t in &fit.terms {
            w.write_record([
                fit.outcome.to_string(),
                t.term.clone(),
                format_num(t.coef),
                format_num(t.hr),
                format_num(t.se),
                format_num(t.ci_low),
                format_num(t.ci_high),
                format_num(t.p),
                fit.n_events.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{to_transitions, Cohort, CovariateValue, EndStatus, Subject, TiePolicy};
    use crate::simulate::{simulate_cohort, HazardSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct O(n^2) partial likelihood with explicit risk sets.
    fn brute_loglik(start: &[f64], stop: &[f64], event: &[bool], x: &[f64], beta: f64) -> f64 {
        let mut ll = 0.0;
        for i in (0..stop.len()).filter(|&i| event[i]) {
            let t = stop[i];
            let denom: f64 = (0..stop.len()).filter(|&j| start[j] < t && t <= stop[j]).map(|j| (beta * x[j]).exp()).sum();
            ll += beta * x[i] - denom.ln();
        }
        ll
    }

    fn random_cohort(rng: &mut ChaCha8Rng, n: usize) -> Cohort {
        let subjects = (0..n)
            .map(|i| {
                let end = f64::from(rng.random_range(2u32..20));
                let inf = rng.random_bool(0.4).then(|| f64::from(rng.random_range(1..end as u32)));
                let status = match rng.random_range(0..3) {
                    0 => EndStatus::Death,
                    1 => EndStatus::Discharge,
                    _ => EndStatus::Censored,
                };
                Subject::new(i.to_string(), inf, end, status).with_covariate("age", CovariateValue::Real(rng.random_range(20.0..90.0)))
            })
            .collect();
        Cohort::new(subjects, TiePolicy::Reject, None).unwrap()
    }

    #[test]
    fn matches_brute_force_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_cohort(&mut rng, 40);
        let r = to_transitions(&c);
        let d = CoxData::time_dependent(&r, CoxOutcome::Death, &[]).unwrap();
        let start: Vec<f64> = r.rows().iter().map(|r| r.start).collect();
        let stop: Vec<f64> = r.rows().iter().map(|r| r.stop).collect();
        let event: Vec<bool> = r.rows().iter().map(|r| r.to.is_some_and(|s| s.is_death())).collect();
        let x: Vec<f64> = r.rows().iter().map(|r| if r.from == State::Exposed { 1.0 } else { 0.0 }).collect();
        for beta in [-1.0, 0.0, 0.3, 2.0] {
            let a = d.log_partial_likelihood(&[beta]);
            let b = brute_loglik(&start, &stop, &event, &x, beta);
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn score_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let c = random_cohort(&mut rng, 30);
            let r = to_transitions(&c);
            let Ok(d) = CoxData::time_dependent(&r, CoxOutcome::Death, &["age".to_string()]) else { continue };
            if d.n_events() == 0 {
                continue;
            }
            let beta = [0.4, -0.02];
            let score = d.score(&beta);
            for j in 0..2 {
                let h = 1e-5;
                let mut up = beta;
                let mut down = beta;
                up[j] += h;
                down[j] -= h;
                let fd = (d.log_partial_likelihood(&up) - d.log_partial_likelihood(&down)) / (2.0 * h);
                let rel = (score[j] - fd).abs() / fd.abs().max(1e-8);
                assert!(rel < 1e-6, "term {j}: {} vs {fd}", score[j]);
            }
        }
    }

    #[test]
    fn mle_matches_golden_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cohort(&mut rng, 200);
        let r = to_transitions(&c);
        let fit = fit_cox_td(&r, CoxOutcome::Discharge, &[]).unwrap();
        let d = CoxData::time_dependent(&r, CoxOutcome::Discharge, &[]).unwrap();
        let (mut a, mut b) = (-5.0, 5.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = b - g * (b - a);
            let x2 = a + g * (b - a);
            if d.log_partial_likelihood(&[x1]) < d.log_partial_likelihood(&[x2]) {
                a = x1;
            } else {
                b = x2;
            }
        }
        assert!((fit.terms[0].coef - 0.5 * (a + b)).abs() < 1e-6);
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0] - rounding_slack(w[0])));
        let t = &fit.terms[0];
        assert_eq!(t.hr, t.coef.exp());
        assert!(t.ci_low > 0.0 && t.ci_low < t.hr && t.hr < t.ci_high);
    }

    #[test]
    fn time_scaling_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_cohort(&mut rng, 150);
        let scaled: Vec<Subject> = c
            .subjects()
            .iter()
            .map(|s| Subject { inf_time: s.inf_time.map(|t| t * 3.7), end_time: s.end_time * 3.7, ..s.clone() })
            .collect();
        let scaled = Cohort::new(scaled, TiePolicy::Reject, None).unwrap();
        let a = fit_cox_td(&to_transitions(&c), CoxOutcome::Death, &[]).unwrap();
        let b = fit_cox_td(&to_transitions(&scaled), CoxOutcome::Death, &[]).unwrap();
        assert!((a.terms[0].coef - b.terms[0].coef).abs() < 1e-10);
    }

    #[test]
    fn no_events_is_error() {
        let c = Cohort::new(vec![Subject::new("1", Some(1.0), 2.0, EndStatus::Discharge)], TiePolicy::Reject, None).unwrap();
        let r = to_transitions(&c);
        assert!(matches!(fit_cox_td(&r, CoxOutcome::Death, &[]), Err(EstimationError::NoEvents(_))));
        assert!(matches!(markov_test(&r, CoxOutcome::DeathAfter), Err(EstimationError::NoEvents(_))));
    }

    #[test]
    fn separation_is_reported() {
        // every death happens in exposed person-time
        let subjects = (0..10)
            .map(|i| {
                if i % 2 == 0 {
                    Subject::new(i.to_string(), Some(1.0), 2.0 + f64::from(i), EndStatus::Death)
                } else {
                    Subject::new(i.to_string(), None, 2.0 + f64::from(i), EndStatus::Discharge)
                }
            })
            .collect();
        let c = Cohort::new(subjects, TiePolicy::Reject, None).unwrap();
        match fit_cox_td(&to_transitions(&c), CoxOutcome::Death, &[]) {
            Err(EstimationError::Separation { term, .. }) => assert_eq!(term, "exposure"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn null_exposure_effect() {
        let spec = HazardSpec::constant(0.05, 0.08, 0.02, 0.08, 0.02, 300.0);
        let c = simulate_cohort(&spec, 20_000, 77).unwrap();
        let r = to_transitions(&c);
        for outcome in [CoxOutcome::Death, CoxOutcome::Discharge] {
            let t = fit_cox_td(&r, outcome, &[]).unwrap().terms[0].clone();
            assert!(t.coef.abs() < 3.0 * t.se, "{outcome}: {} se {}", t.coef, t.se);
        }
    }

    #[test]
    fn summary_csv_header() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = to_transitions(&random_cohort(&mut rng, 100));
        let fit = fit_cox_td(&r, CoxOutcome::Death, &[]).unwrap();
        let mut buf = Vec::new();
        write_cox_summary(&[fit], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("outcome,term,coef,hr,se,ci_low,ci_high,p,n_events\ndeath,exposure,"));
    }

    #[test]
    fn categorical_covariate_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_cohort(&mut rng, 200);
        let with_sex: Vec<Subject> = c
            .subjects()
            .iter()
            .enumerate()
            .map(|(i, s)| s.clone().with_covariate("sex", CovariateValue::Category(if i % 2 == 0 { "f" } else { "m" }.into())))
            .collect();
        let c = c.with_subjects(with_sex).unwrap();
        let fit = fit_cox_td(&to_transitions(&c), CoxOutcome::Discharge, &["sex".into(), "age".into()]).unwrap();
        let names: Vec<&str> = fit.terms.iter().map(|t| t.term.as_str()).collect();
        assert_eq!(names, vec!["exposure", "sex=m", "age"]);
    }
}
