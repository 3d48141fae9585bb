use std::io::{Read, Write};

use log::warn;

use super::{Cohort, CovariateValue, Covariates, Diagnostic, DiagnosticKind, EndStatus, Subject, TiePolicy};
use crate::curve::format_num;
use crate::error::DataError;

const FIXED_COLUMNS: [&str; 4] = ["id", "inf_time", "end_time", "end_status"];

/// Reads a cohort from CSV with header `id,inf_time,end_time,end_status[,<covariate>...]`.
///
/// Covariate columns whose values all parse as numbers are numeric, the rest
/// are categorical. Exposures recorded at the terminal time are resolved with
/// `tie_policy`; each shifted row leaves a [`Diagnostic`] on the cohort.
pub fn parse_cohort<R: Read>(source: R, tie_policy: TiePolicy) -> Result<Cohort, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header = reader.headers()?.clone();
    if header.len() < 4 || header.iter().take(4).ne(FIXED_COLUMNS) {
        return Err(DataError::Header { found: header.iter().collect::<Vec<_>>().join(",") });
    }
    let covariate_names: Vec<String> = header.iter().skip(4).map(str::to_string).collect();

    let mut raw_rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Row { row, message: e.to_string() })?;
        if record.len() != header.len() {
            return Err(DataError::Row {
                row,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        raw_rows.push(record);
    }

    // A covariate column is numeric when every entry parses as a number.
    let numeric: Vec<bool> = (0..covariate_names.len())
        .map(|j| raw_rows.iter().all(|r| r[4 + j].parse::<f64>().is_ok()))
        .collect();

    let mut subjects = Vec::with_capacity(raw_rows.len());
    let mut diagnostics = Vec::new();
    for (i, record) in raw_rows.iter().enumerate() {
        let row = i + 1;
        let err = |message: String| DataError::Row { row, message };
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(err("empty id".into()));
        }
        let inf_time = match &record[1] {
            "" => None,
            s => Some(parse_time(s, "inf_time").map_err(err)?),
        };
        let end_time = parse_time(&record[2], "end_time").map_err(err)?;
        let end_status: EndStatus = record[3].parse().map_err(err)?;

        let mut covariates = Covariates::with_capacity(covariate_names.len());
        for (j, name) in covariate_names.iter().enumerate() {
            let raw = &record[4 + j];
            if raw.is_empty() {
                return Err(err(format!("missing value for covariate {name:?}")));
            }
            let value = if numeric[j] {
                CovariateValue::Real(raw.parse().expect("column checked numeric"))
            } else {
                CovariateValue::Category(raw.to_string())
            };
            covariates.insert(name.clone(), value);
        }

        let inf_time = match inf_time {
            Some(inf) if inf > end_time => {
                return Err(err(format!("inf_time {inf} is after end_time {end_time}")));
            }
            Some(inf) if inf == end_time => match tie_policy {
                TiePolicy::Reject => {
                    return Err(err(format!("inf_time equals end_time ({inf}) under tie policy reject")));
                }
                TiePolicy::Shift(eps) => {
                    let shifted = end_time - eps;
                    if shifted <= 0.0 {
                        return Err(err(format!("shifting inf_time {inf} by {eps} leaves no positive time")));
                    }
                    let message = format!("inf_time {inf} equals end_time; shifted to {shifted}");
                    warn!("row {row} (id {id}): {message}");
                    diagnostics.push(Diagnostic { row: Some(row), id: id.clone(), kind: DiagnosticKind::TieShifted, message });
                    Some(shifted)
                }
            },
            other => other,
        };

        subjects.push(Subject { id, inf_time, end_time, end_status, covariates });
    }

    Ok(Cohort::new(subjects, tie_policy, None)?.with_diagnostics(diagnostics))
}

fn parse_time(s: &str, column: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{column} {s:?} is not a number"))?;
    if !v.is_finite() {
        return Err(format!("{column} {s:?} is not finite"));
    }
    if v < 0.0 {
        return Err(format!("{column} {v} is negative"));
    }
    Ok(v)
}

/// Writes a cohort in the same CSV layout [`parse_cohort`] reads.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    let names = cohort.covariate_names();
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(names.iter().map(String::as_str));
    w.write_record(&header)?;
    for s in cohort.subjects() {
        let mut record = vec![
            s.id.clone(),
            s.inf_time.map(format_num).unwrap_or_default(),
            format_num(s.end_time),
            s.end_status.to_string(),
        ];
        for name in &names {
            record.push(s.covariates.get(name).map(ToString::to_string).unwrap_or_default());
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, policy: TiePolicy) -> Result<Cohort, DataError> {
        parse_cohort(text.as_bytes(), policy)
    }

    #[test]
    fn never_exposed_row() {
        let c = parse("id,inf_time,end_time,end_status\n7,,5,discharge\n", TiePolicy::default()).unwrap();
        let s = &c.subjects()[0];
        assert_eq!(s.id, "7");
        assert_eq!(s.inf_time, None);
        assert_eq!(s.end_time, 5.0);
        assert_eq!(s.end_status, EndStatus::Discharge);
        assert!(c.diagnostics().is_empty());
    }

    #[test]
    fn tie_is_shifted_with_warning() {
        let c = parse("id,inf_time,end_time,end_status\n3,4,4,death\n", TiePolicy::Shift(0.001)).unwrap();
        let s = &c.subjects()[0];
        assert!((s.inf_time.unwrap() - 3.999).abs() < 1e-12);
        assert_eq!(c.diagnostics().len(), 1);
        assert_eq!(c.diagnostics()[0].kind, DiagnosticKind::TieShifted);
        assert_eq!(c.diagnostics()[0].row, Some(1));
    }

    #[test]
    fn tie_is_rejected_under_reject() {
        let err = parse("id,inf_time,end_time,end_status\n3,4,4,death\n", TiePolicy::Reject).unwrap_err();
        assert!(matches!(err, DataError::Row { row: 1, .. }));
    }

    #[test]
    fn row_errors_name_the_row() {
        let cases = [
            "id,inf_time,end_time,end_status\n1,,5,death\n2,,-1,death\n",
            "id,inf_time,end_time,end_status\n1,,5,death\n2,,x,death\n",
            "id,inf_time,end_time,end_status\n1,,5,death\n2,,4,Death\n",
            "id,inf_time,end_time,end_status\n1,,5,death\n2,6,4,death\n",
            "id,inf_time,end_time,end_status\n1,,5,death\n2,4\n",
        ];
        for text in cases {
            let err = parse(text, TiePolicy::default()).unwrap_err();
            assert!(matches!(err, DataError::Row { row: 2, .. }), "{text}: {err}");
            assert!(err.to_string().starts_with("row 2"));
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = parse("id,inf_time,end_time,end_status\n1,,5,death\n1,,4,death\n", TiePolicy::default()).unwrap_err();
        assert!(matches!(err, DataError::DuplicateId { .. }));
    }

    #[test]
    fn bad_header() {
        let err = parse("id,start,stop,status\n1,,5,death\n", TiePolicy::default()).unwrap_err();
        assert!(matches!(err, DataError::Header { .. }));
    }

    #[test]
    fn covariates_are_typed_per_column() {
        let text = "id,inf_time,end_time,end_status,age,sex\n1,,5,death,61,F\n2,2,8,discharge,70.5,M\n";
        let c = parse(text, TiePolicy::default()).unwrap();
        assert_eq!(c.covariate_names(), vec!["age", "sex"]);
        assert_eq!(c.subjects()[1].covariates["age"], CovariateValue::Real(70.5));
        assert_eq!(c.subjects()[1].covariates["sex"], CovariateValue::Category("M".into()));
    }

    #[test]
    fn missing_covariate_is_rejected() {
        let text = "id,inf_time,end_time,end_status,age\n1,,5,death,61\n2,2,8,discharge,\n";
        assert!(matches!(parse(text, TiePolicy::default()), Err(DataError::Row { row: 2, .. })));
    }

    #[test]
    fn write_then_parse_roundtrips() {
        let text = "id,inf_time,end_time,end_status,age,sex\n1,,5,death,61,F\n2,2.5,8,censored,70.5,M\n";
        let c = parse(text, TiePolicy::default()).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&c, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), text);
        assert_eq!(parse_cohort(buf.as_slice(), TiePolicy::default()).unwrap(), c);
    }
}
