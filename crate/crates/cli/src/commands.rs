use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::info;
use pafmsm::check::equivalence_suite;
use pafmsm::cohort::{summarize, to_transitions, write_cohort_csv, Cohort, CohortSummary};
use pafmsm::cox::{fit_cox_td, markov_test, write_cox_summary, CoxOutcome};
use pafmsm::curve::format_num;
use pafmsm::paf::{bootstrap_ci, estimate_paf, paf_fixed, EstimatorSpec, FourfoldTable, RunManifest, WeightSpec};
use pafmsm::simulate::{analytic_curves, presets, simulate_cohort, HazardSpec};
use pafmsm::{parse_cohort, DataError, Estimator, StepCurve};
use serde::Serialize;

use crate::args::{BootstrapArgs, Command, CoxArgs, EstimateArgs, Grid, InputArgs, OracleArgs, SimulateArgs, SpecArgs, Weights};
use crate::CliError;

type Outcome = Result<u8, CliError>;

pub fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Validate(a) => validate(&a),
        Command::Summary(a) => summary(&a),
        Command::Estimate(a) => estimate(&a),
        Command::Bootstrap(a) => bootstrap(&a),
        Command::Cox(a) => cox(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Oracle(a) => oracle(&a),
        Command::Check(a) => check(&a),
    }
}

fn load(args: &InputArgs) -> Result<Cohort, CliError> {
    let file = File::open(&args.input)
        .map_err(|e| DataError::Invalid(format!("cannot open {}: {e}", args.input.display())))?;
    let cohort = parse_cohort(io::BufReader::new(file), args.tie_policy)?;
    info!("read {} subjects from {}", cohort.len(), args.input.display());
    Ok(cohort)
}

/// Writes to `<out>/<name>` when an output directory is given, else to stdout.
fn emit<F>(out: Option<&Path>, name: &str, write: F) -> Result<(), CliError>
where
    F: FnOnce(&mut dyn Write) -> Result<(), DataError>,
{
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut w = BufWriter::new(File::create(dir.join(name))?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn emit_json<T: Serialize>(out: Option<&Path>, name: &str, value: &T) -> Result<(), CliError> {
    emit(out, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

fn manifest(out: Option<&Path>, m: &RunManifest) -> Result<(), CliError> {
    match out {
        Some(dir) => emit_json(Some(dir), "manifest.json", m),
        None => Ok(()),
    }
}

fn base_manifest(command: &str, input: &Path, cohort: &Cohort) -> RunManifest {
    RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        input: Some(input.display().to_string()),
        n_subjects: cohort.len(),
        tie_policy: cohort.tie_policy().to_string(),
        estimand: None,
        estimator: None,
        weights: None,
        grid: String::new(),
        replicates: None,
        seed: None,
    }
}

#[derive(Serialize)]
struct Validation<'a> {
    n_subjects: usize,
    tau: f64,
    covariates: Vec<String>,
    diagnostics: &'a [pafmsm::cohort::Diagnostic],
}

fn validate(args: &InputArgs) -> Outcome {
    let cohort = load(args)?;
    let report = Validation {
        n_subjects: cohort.len(),
        tau: cohort.tau(),
        covariates: cohort.covariate_names(),
        diagnostics: cohort.diagnostics(),
    };
    match &args.out {
        Some(dir) => emit_json(Some(dir), "validation.json", &report)?,
        None => {
            println!("ok: {} subjects, horizon {}", report.n_subjects, format_num(report.tau));
            for d in report.diagnostics {
                let row = d.row.map_or(String::new(), |r| format!("row {r}: "));
                println!("warning: {row}{}", d.message);
            }
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct Summary {
    #[serde(flatten)]
    counts: CohortSummary,
    fourfold: Option<FourfoldTable>,
    paf_fixed: Option<f64>,
}

fn summary(args: &InputArgs) -> Outcome {
    let cohort = load(args)?;
    let fourfold = FourfoldTable::from_cohort(&cohort).ok();
    let s = Summary { counts: summarize(&cohort), paf_fixed: fourfold.as_ref().and_then(paf_fixed), fourfold };
    emit_json(args.out.as_deref(), "summary.json", &s)?;
    Ok(0)
}

fn estimator_spec(args: &EstimateArgs) -> Result<EstimatorSpec, CliError> {
    let ipw = args.estimator == Estimator::Ipw;
    if !ipw && (args.weights.is_some() || !args.covariates.is_empty()) {
        return Err(CliError::Usage("--weights and --covariates apply to the ipw estimator only".into()));
    }
    if args.weights == Some(Weights::Nonparametric) && !args.covariates.is_empty() {
        return Err(CliError::Usage("--covariates needs --weights logistic".into()));
    }
    let weights = match args.weights {
        Some(Weights::Logistic) => WeightSpec::Logistic(args.covariates.clone()),
        None if !args.covariates.is_empty() => WeightSpec::Logistic(args.covariates.clone()),
        _ => WeightSpec::Nonparametric,
    };
    Ok(EstimatorSpec::new(args.estimand, args.estimator)?
        .with_weights(weights)
        .allowing_dropped_censored(args.allow_drop_censored))
}

fn day_grid(tau: f64) -> Vec<f64> {
    (1..=tau.ceil() as u32).map(f64::from).collect()
}

fn report_grid(args: &EstimateArgs, tau: f64, curve: &StepCurve) -> (Vec<f64>, String) {
    match (args.at, args.grid) {
        (Some(t), _) => (vec![t], format!("at:{}", format_num(t))),
        (None, Grid::Days) => (day_grid(tau), "days".into()),
        (None, Grid::Jumps) => (curve.times().to_vec(), "jumps".into()),
    }
}

fn check_at(at: Option<f64>) -> Result<(), CliError> {
    match at {
        Some(t) if !(t.is_finite() && t >= 0.0) => Err(CliError::Usage(format!("--at must be a non-negative time (got {t})"))),
        _ => Ok(()),
    }
}

fn estimate(args: &EstimateArgs) -> Outcome {
    check_at(args.at)?;
    let spec = estimator_spec(args)?;
    let cohort = load(&args.input)?;
    let paf = estimate_paf(&cohort, &spec)?;
    let (grid, grid_name) = report_grid(args, cohort.tau(), &paf.curve);
    let out = args.input.out.as_deref();
    if let Some(t) = args.at {
        println!("{}", format_num(paf.value(t)));
    }
    if out.is_some() || args.at.is_none() {
        emit(out, "paf_curve.csv", |w| paf.write_report(&grid, w))?;
    }
    manifest(
        out,
        &RunManifest {
            estimand: Some(spec.estimand),
            estimator: Some(spec.estimator),
            weights: Some(spec.weights.clone()),
            grid: grid_name,
            ..base_manifest("estimate", &args.input.input, &cohort)
        },
    )?;
    Ok(0)
}

fn bootstrap(args: &BootstrapArgs) -> Outcome {
    let e = &args.estimate;
    check_at(e.at)?;
    let spec = estimator_spec(e)?;
    let cohort = load(&e.input)?;
    let (grid, grid_name) = match e.grid {
        Grid::Jumps if e.at.is_none() => {
            let point = estimate_paf(&cohort, &spec)?;
            report_grid(e, cohort.tau(), &point.curve)
        }
        _ => report_grid(e, cohort.tau(), &StepCurve::constant(f64::NAN)),
    };
    let bands = bootstrap_ci(&cohort, &spec, args.replicates, args.seed, &grid)?;
    let out = e.input.out.as_deref();
    emit(out, "paf_bands.csv", |w| bands.write_csv(w))?;
    manifest(
        out,
        &RunManifest {
            estimand: Some(spec.estimand),
            estimator: Some(spec.estimator),
            weights: Some(spec.weights.clone()),
            grid: grid_name,
            replicates: Some(args.replicates),
            seed: Some(args.seed),
            ..base_manifest("bootstrap", &e.input.input, &cohort)
        },
    )?;
    Ok(0)
}

fn cox(args: &CoxArgs) -> Outcome {
    let cohort = load(&args.input)?;
    let records = to_transitions(&cohort);
    let mut fits = Vec::new();
    for outcome in [CoxOutcome::Death, CoxOutcome::Discharge] {
        fits.push(fit_cox_td(&records, outcome, &args.covariates)?);
    }
    if args.markov_test {
        for outcome in [CoxOutcome::Death, CoxOutcome::Discharge] {
            fits.push(markov_test(&records, outcome)?);
        }
    }
    let out = args.input.out.as_deref();
    emit(out, "cox.csv", |w| write_cox_summary(&fits, w))?;
    manifest(out, &RunManifest { grid: "none".into(), ..base_manifest("cox", &args.input.input, &cohort) })?;
    Ok(0)
}

fn load_spec(args: &SpecArgs) -> Result<(HazardSpec, String), CliError> {
    if let Some(path) = &args.input {
        let text = fs::read_to_string(path)
            .map_err(|e| DataError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        return Ok((HazardSpec::from_json(&text)?, path.display().to_string()));
    }
    let name = args.preset.as_deref().unwrap_or_default();
    presets()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(n, spec)| (spec, format!("preset:{n}")))
        .ok_or_else(|| {
            let known: Vec<&str> = presets().iter().map(|(n, _)| *n).collect();
            CliError::Usage(format!("unknown preset {name:?} (known: {})", known.join(", ")))
        })
}

fn spec_manifest(command: &str, source: String, n: usize, tau: f64, seed: Option<u64>) -> RunManifest {
    RunManifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        input: Some(source),
        n_subjects: n,
        tie_policy: "reject".into(),
        estimand: None,
        estimator: None,
        weights: None,
        grid: format!("days:{}", format_num(tau.ceil())),
        replicates: None,
        seed,
    }
}

fn simulate(args: &SimulateArgs) -> Outcome {
    let (spec, source) = load_spec(&args.spec)?;
    let cohort = simulate_cohort(&spec, args.n, args.seed)?;
    let out = args.spec.out.as_deref();
    emit(out, "cohort.csv", |w| write_cohort_csv(&cohort, w))?;
    if let Some(dir) = out {
        emit(Some(dir), "hazard_spec.json", |w| Ok(writeln!(w, "{}", spec.to_json())?))?;
    }
    manifest(out, &spec_manifest("simulate", source, args.n, spec.tau, Some(args.seed)))?;
    Ok(0)
}

fn oracle(args: &OracleArgs) -> Outcome {
    check_at(args.at)?;
    let (spec, source) = load_spec(&args.spec)?;
    let grid = match args.at {
        Some(t) => vec![t],
        None => day_grid(spec.tau),
    };
    let curves = analytic_curves(&spec, &grid)?;
    let out = args.spec.out.as_deref();
    emit(out, "oracle.csv", |w| Ok(curves.write_csv(w)?))?;
    manifest(out, &spec_manifest("oracle", source, 0, spec.tau, None))?;
    Ok(0)
}

fn check(args: &InputArgs) -> Outcome {
    let cohort = load(args)?;
    let results = equivalence_suite(&cohort)?;
    let failed = results.iter().filter(|r| !r.passed).count();
    match &args.out {
        Some(dir) => emit_json(Some(dir), "check.json", &results)?,
        None => {
            for r in &results {
                let tag = if r.passed { "PASS" } else { "FAIL" };
                println!("{tag} {} (max deviation {:.3e} over {} points)", r.name, r.max_deviation, r.points);
            }
        }
    }
    if failed > 0 {
        eprintln!("error: {failed} of {} equivalence checks failed", results.len());
        return Ok(3);
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pafmsm::Estimand;
    use std::path::PathBuf;

    fn estimate_args(estimator: Estimator, weights: Option<Weights>, covariates: &[&str]) -> EstimateArgs {
        EstimateArgs {
            input: InputArgs { input: PathBuf::from("x.csv"), tie_policy: Default::default(), out: None },
            estimand: if estimator == Estimator::Naive { Estimand::PafO } else { Estimand::PafC },
            estimator,
            grid: Grid::Days,
            at: None,
            weights,
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
            allow_drop_censored: false,
        }
    }

    #[test]
    fn covariates_imply_logistic_weights() {
        let spec = estimator_spec(&estimate_args(Estimator::Ipw, None, &["age"])).unwrap();
        assert_eq!(spec.weights, WeightSpec::Logistic(vec!["age".into()]));
        let spec = estimator_spec(&estimate_args(Estimator::Ipw, None, &[])).unwrap();
        assert_eq!(spec.weights, WeightSpec::Nonparametric);
    }

    #[test]
    fn weights_rejected_outside_ipw() {
        let err = estimator_spec(&estimate_args(Estimator::Multistate, Some(Weights::Logistic), &[])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let err = estimator_spec(&estimate_args(Estimator::Ipw, Some(Weights::Nonparametric), &["age"])).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn day_grid_covers_horizon() {
        assert_eq!(day_grid(2.5), vec![1.0, 2.0, 3.0]);
        assert!(day_grid(0.0).is_empty());
    }
}
