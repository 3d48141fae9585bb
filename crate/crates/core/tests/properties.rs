use pafmsm::check::equivalence_suite;
use pafmsm::cohort::{discretize, to_transitions, Cohort, EndStatus, State, Subject, TiePolicy};
use pafmsm::discrete::{compute_weights, death_proportion, expand_person_days, ipw_f01, naive_f01, ExposureModel};
use pafmsm::multistate::{aalen_johansen_extended, censor_at_exposure, cif_counterfactual, cpf_unexposed, ht_cif, overall_death_risk};
use pafmsm::paf::{paf_c, paf_o};
use proptest::prelude::*;

fn status(code: u8) -> EndStatus {
    match code {
        0 => EndStatus::Death,
        1 => EndStatus::Discharge,
        _ => EndStatus::Censored,
    }
}

/// Subjects with integer times; `statuses` bounds the end-status codes drawn.
fn integer_cohort(statuses: u8, exposure: bool) -> impl Strategy<Value = Cohort> {
    prop::collection::vec((any::<bool>(), 1u8..15, 1u8..10, 0..statuses), 1..60).prop_map(move |rows| {
        let subjects = rows
            .into_iter()
            .enumerate()
            .map(|(i, (exposed, a, b, st))| {
                let (inf, end) = if exposed && exposure {
                    (Some(f64::from(a)), f64::from(a) + f64::from(b))
                } else {
                    (None, f64::from(a))
                };
                Subject::new(i.to_string(), inf, end, status(st))
            })
            .collect();
        Cohort::new(subjects, TiePolicy::Reject, None).unwrap()
    })
}

/// Half-day times, so ties are common, with censoring.
fn censored_cohort() -> impl Strategy<Value = Cohort> {
    prop::collection::vec((any::<bool>(), 1u8..30, 1u8..20, 0u8..3), 1..60).prop_map(|rows| {
        let subjects = rows
            .into_iter()
            .enumerate()
            .map(|(i, (exposed, a, b, st))| {
                let a = f64::from(a) / 2.0;
                let (inf, end) = if exposed { (Some(a), a + f64::from(b) / 2.0) } else { (None, a) };
                Subject::new(i.to_string(), inf, end, status(st))
            })
            .collect();
        Cohort::new(subjects, TiePolicy::Reject, None).unwrap()
    })
}

fn non_decreasing(values: &[f64]) -> bool {
    values.iter().filter(|v| !v.is_nan()).collect::<Vec<_>>().windows(2).all(|w| *w[1] >= *w[0] - 1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn integer_cohorts_pass_every_equivalence(c in integer_cohort(2, true)) {
        for r in equivalence_suite(&c).unwrap() {
            prop_assert!(r.passed, "{} deviated by {}", r.name, r.max_deviation);
        }
    }

    #[test]
    fn exposure_free_estimators_coincide(c in integer_cohort(2, false)) {
        let panel = discretize(&c, false).unwrap();
        let weights = compute_weights(&panel, &ExposureModel::nonparametric(&expand_person_days(&panel, &[]).unwrap())).unwrap();
        let naive = naive_f01(&panel);
        let ipw = ipw_f01(&panel, &weights).unwrap();
        let deaths = death_proportion(&panel);
        for t in panel.grid() {
            prop_assert!((naive.value(t) - deaths.value(t)).abs() < 1e-12);
            prop_assert!((ipw.value(t) - deaths.value(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn censored_cohorts_keep_multistate_invariants(c in censored_cohort()) {
        let records = to_transitions(&c);
        let occ = aalen_johansen_extended(&records).unwrap();
        for &t in occ.times() {
            prop_assert!((occ.total(t) - 1.0).abs() < 1e-12);
        }
        let p00 = occ.get(State::Admission).values().to_vec();
        prop_assert!(non_decreasing(&p00.iter().map(|v| -v).collect::<Vec<_>>()));
        for s in [State::DischargeUnexposed, State::DeathUnexposed, State::DischargeExposed, State::DeathExposed] {
            prop_assert!(non_decreasing(occ.get(s).values()));
        }

        let cf = censor_at_exposure(&records).unwrap();
        prop_assert!(non_decreasing(&cf.event_free.values().iter().map(|v| -v).collect::<Vec<_>>()));
        let counterfactual = cif_counterfactual(&records).unwrap();
        prop_assert!(non_decreasing(counterfactual.values()));
        let ht = ht_cif(&records).unwrap();
        for &t in counterfactual.times() {
            let (a, b) = (ht.value(t), counterfactual.value(t));
            prop_assert!(a.is_nan() == b.is_nan() && (a.is_nan() || (a - b).abs() < 1e-12), "t={} ht={} aj={}", t, a, b);
        }

        let cpf = cpf_unexposed(&records).unwrap();
        let p03 = occ.get(State::DeathUnexposed);
        for &t in occ.times() {
            let v = cpf.value(t);
            prop_assert!(v.is_nan() || v >= p03.value(t) - 1e-12);
        }

        let overall = overall_death_risk(&records).unwrap();
        for p in [paf_o(&overall, &cpf), paf_c(&overall, &counterfactual)] {
            prop_assert!(p.curve.values().iter().all(|v| v.is_nan() || *v <= 1.0 + 1e-12));
        }
    }
}
