//! Transition probabilities of the Markov model by quadrature.
//!
//! Forward equations under piecewise-constant hazards:
//! `P00 = exp(-A0)`, `P01' = P00 a01 - P01 (a14 + a15)`, `P0l' = P00 a0l` for
//! `l = 2, 3`, `P0l' = P01 a1l` for `l = 4, 5`, and the counterfactual
//! `P030' = exp(-(A02 + A03)) a03`. Each step uses the trapezoid rule on
//! segments cut at every breakpoint and grid point; successive halvings are
//! Richardson-extrapolated until they agree.

use std::io::Write;

use super::HazardSpec;
use crate::cohort::State;
use crate::curve::{format_num, StepCurve};
use crate::error::{EstimationError, Result};

pub const QUADRATURE_TOLERANCE: f64 = 1e-6;
pub const MAX_REFINEMENTS: usize = 20;

/// Oracle curves evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCurves {
    pub grid: Vec<f64>,
    /// `P_{0l}(0, t)` for `l = 0..5`.
    pub occupation: [Vec<f64>; 6],
    /// `P_{03_0}(0, t)`.
    pub counterfactual: Vec<f64>,
    pub death: Vec<f64>,
    pub cpf: Vec<f64>,
    pub paf_o: Vec<f64>,
    pub paf_c: Vec<f64>,
}

impl OracleCurves {
    fn step(&self, values: &[f64], initial: f64) -> StepCurve {
        StepCurve::from_parts(self.grid.clone(), values.to_vec(), initial)
    }

    pub fn occupation_curve(&self, state: State) -> StepCurve {
        let initial = if state == State::Admission { 1.0 } else { 0.0 };
        self.step(&self.occupation[state.index()], initial)
    }

    pub fn death_curve(&self) -> StepCurve {
        self.step(&self.death, 0.0)
    }

    pub fn cpf_curve(&self) -> StepCurve {
        self.step(&self.cpf, 0.0)
    }

    pub fn counterfactual_curve(&self) -> StepCurve {
        self.step(&self.counterfactual, 0.0)
    }

    pub fn paf_o_curve(&self) -> StepCurve {
        self.step(&self.paf_o, f64::NAN)
    }

    pub fn paf_c_curve(&self) -> StepCurve {
        self.step(&self.paf_c, f64::NAN)
    }

    /// Writes `t,P00,P01,P02,P03,P04,P05,P030,PD,CPF,PAF_o,PAF_c`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::result::Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "P00", "P01", "P02", "P03", "P04", "P05", "P030", "PD", "CPF", "PAF_o", "PAF_c"])?;
        for (i, &t) in self.grid.iter().enumerate() {
            let mut rec = vec![format_num(t)];
            rec.extend(self.occupation.iter().map(|p| format_num(p[i])));
            for v in [&self.counterfactual, &self.death, &self.cpf, &self.paf_o, &self.paf_c] {
                rec.push(format_num(v[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Raw quadrature output at the grid: six occupation values and `P030`.
type Values = Vec<[f64; 7]>;

fn integrate(spec: &HazardSpec, nodes: &[f64], grid_index: &[usize], m: usize) -> Values {
    let mut out = Vec::with_capacity(grid_index.len());
    let mut p = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let (mut free, mut p030) = (1.0, 0.0);
    let mut next_grid = 0;
    let record = |node: usize, p: &[f64; 6], p030: f64, next_grid: &mut usize, out: &mut Values| {
        while *next_grid < grid_index.len() && grid_index[*next_grid] == node {
            out.push([p[0], p[1], p[2], p[3], p[4], p[5], p030]);
            *next_grid += 1;
        }
    };
    record(0, &p, p030, &mut next_grid, &mut out);
    for k in 1..nodes.len() {
        let (a, b) = (nodes[k - 1], nodes[k]);
        let mid = 0.5 * (a + b);
        let [r01, r02, r03, r14, r15] = spec.hazards().map(|h| h.rate(mid));
        let (l0, l1) = (r01 + r02 + r03, r14 + r15);
        let h = (b - a) / m as f64;
        for _ in 0..m {
            let p00 = p[0] * (-l0 * h).exp();
            let decay = (-l1 * h).exp();
            let p01 = p[1] * decay + 0.5 * h * r01 * (p[0] * decay + p00);
            p[2] += 0.5 * h * r02 * (p[0] + p00);
            p[3] += 0.5 * h * r03 * (p[0] + p00);
            p[4] += 0.5 * h * r14 * (p[1] + p01);
            p[5] += 0.5 * h * r15 * (p[1] + p01);
            p[0] = p00;
            p[1] = p01;
            let next_free = free * (-(r02 + r03) * h).exp();
            p030 += 0.5 * h * r03 * (free + next_free);
            free = next_free;
        }
        record(k, &p, p030, &mut next_grid, &mut out);
    }
    out
}

fn sup_change(a: &Values, b: &Values) -> f64 {
    a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max)
}

fn extrapolate(coarse: &Values, fine: &Values) -> Values {
    coarse
        .iter()
        .zip(fine)
        .map(|(c, f)| std::array::from_fn(|j| (4.0 * f[j] - c[j]) / 3.0))
        .collect()
}

/// Oracle curves `P00..P05`, `P030`, `P(D)`, CPF, `PAF_o` and `PAF_c` on `grid`.
pub fn analytic_curves(spec: &HazardSpec, grid: &[f64]) -> Result<OracleCurves> {
    spec.validate()?;
    if spec.gamma != 0.0 {
        return Err(EstimationError::HazardSpec("analytic curves need gamma = 0 (Markov model)".into()));
    }
    if grid.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(EstimationError::Invalid("grid must be non-negative and strictly increasing".into()));
    }
    let t_max = grid.last().copied().unwrap_or(0.0);
    let mut nodes: Vec<f64> = std::iter::once(0.0)
        .chain(spec.breakpoints().into_iter().filter(|&b| b < t_max))
        .chain(grid.iter().copied())
        .collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    let grid_index: Vec<usize> = grid.iter().map(|t| nodes.partition_point(|x| x < t)).collect();

    let mut m = 1;
    let mut coarse = integrate(spec, &nodes, &grid_index, m);
    let mut previous: Option<Values> = None;
    let mut converged = None;
    for _ in 0..MAX_REFINEMENTS {
        m *= 2;
        let fine = integrate(spec, &nodes, &grid_index, m);
        let extrapolated = extrapolate(&coarse, &fine);
        if let Some(prev) = &previous {
            if sup_change(prev, &extrapolated) < QUADRATURE_TOLERANCE {
                converged = Some(extrapolated);
                break;
            }
        }
        previous = Some(extrapolated);
        coarse = fine;
    }
    let values = converged.ok_or(EstimationError::Quadrature(MAX_REFINEMENTS))?;

    let column = |j: usize| values.iter().map(|v| v[j]).collect::<Vec<f64>>();
    let occupation: [Vec<f64>; 6] = std::array::from_fn(column);
    let counterfactual = column(6);
    let death: Vec<f64> = values.iter().map(|v| v[3] + v[5]).collect();
    let cpf = values
        .iter()
        .map(|v| {
            let unexposed = v[0] + v[2] + v[3];
            if unexposed > 0.0 {
                v[3] / unexposed
            } else {
                f64::NAN
            }
        })
        .collect();
    let ratio = |d: f64, reference: f64| if d > 0.0 { (d - reference) / d } else { f64::NAN };
    let paf_o = death.iter().zip(&cpf).map(|(&d, &c)| ratio(d, c)).collect();
    let paf_c = death.iter().zip(&counterfactual).map(|(&d, &c)| ratio(d, c)).collect();
    Ok(OracleCurves { grid: grid.to_vec(), occupation, counterfactual, death, cpf, paf_o, paf_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::day_grid;
    use crate::simulate::{Piece, PiecewiseHazard};

    const A: [f64; 5] = [0.05, 0.05, 0.02, 0.05, 0.03];

    fn constant() -> HazardSpec {
        HazardSpec::constant(A[0], A[1], A[2], A[3], A[4], 100.0)
    }

    #[test]
    fn constant_hazard_closed_forms() {
        let o = analytic_curves(&constant(), &day_grid(100.0)).unwrap();
        let a0 = A[0] + A[1] + A[2];
        let a1 = A[3] + A[4];
        for (i, &t) in o.grid.iter().enumerate() {
            let p00 = (-a0 * t).exp();
            assert!((o.occupation[0][i] - p00).abs() < 1e-12);
            assert!((o.occupation[3][i] - A[2] / a0 * (1.0 - p00)).abs() < 1e-6);
            let p01 = A[0] / (a0 - a1) * ((-a1 * t).exp() - p00);
            assert!((o.occupation[1][i] - p01).abs() < 1e-6, "t={t}");
            let p030 = A[2] / (A[1] + A[2]) * (1.0 - (-(A[1] + A[2]) * t).exp());
            assert!((o.counterfactual[i] - p030).abs() < 1e-6);
            let total: f64 = o.occupation.iter().map(|p| p[i]).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn no_discharge_counterfactual_is_exponential() {
        let spec = HazardSpec::constant(0.3, 0.0, 0.04, 0.1, 0.1, 50.0);
        let o = analytic_curves(&spec, &[0.5, 1.0, 10.0, 50.0]).unwrap();
        for (i, &t) in o.grid.iter().enumerate() {
            assert!((o.counterfactual[i] - (1.0 - (-0.04 * t).exp())).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_hazard_paf_identity_after_absorption() {
        let mut spec = constant();
        spec.tau = 400.0;
        let o = analytic_curves(&spec, &[100.0, 400.0]).unwrap();
        assert!((o.paf_o[1] - o.paf_c[1]).abs() < 1e-6);
    }

    #[test]
    fn piecewise_sums_to_one() {
        let pieces = |v: &[(f64, f64)]| PiecewiseHazard::new(v.iter().map(|&(until, rate)| Piece { until, rate }).collect()).unwrap();
        let spec = HazardSpec {
            alpha01: pieces(&[(3.5, 0.2), (40.0, 0.01)]),
            alpha02: pieces(&[(10.0, 0.1), (20.0, 0.02)]),
            alpha03: pieces(&[(7.25, 0.03)]),
            alpha14: pieces(&[(1.0, 0.0), (60.0, 0.2)]),
            alpha15: pieces(&[(30.0, 0.05), (31.0, 0.4)]),
            ..constant()
        };
        let o = analytic_curves(&spec, &day_grid(60.0)).unwrap();
        for i in 0..o.grid.len() {
            let total: f64 = o.occupation.iter().map(|p| p[i]).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_time_is_initial_state() {
        let o = analytic_curves(&constant(), &[0.0, 1.0]).unwrap();
        assert_eq!(o.occupation[0][0], 1.0);
        assert_eq!(o.death[0], 0.0);
        assert!(o.paf_o[0].is_nan());
    }

    #[test]
    fn non_markov_is_rejected() {
        let spec = HazardSpec { gamma: 0.5, ..constant() };
        assert!(matches!(analytic_curves(&spec, &[1.0]), Err(EstimationError::HazardSpec(_))));
    }
}
