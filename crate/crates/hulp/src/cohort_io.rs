//! Cohort files: JSON Lines with a header line carrying the schema.

use std::collections::BTreeMap;
use std::path::Path;

use hulp_core::data::{Cohort, PatientRecord, Provenance};
use hulp_core::ConceptSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const COHORT_FORMAT: &str = "hulp-cohort/1";

#[derive(Debug, thiserror::Error)]
pub enum CohortFileError {
    #[error("cohort file is empty")]
    Empty,
    #[error("line {line}: field '{field}': {detail}")]
    Field {
        line: usize,
        field: String,
        detail: String,
    },
    #[error("line {line}: {detail}")]
    Line { line: usize, detail: String },
    #[error(transparent)]
    Model(#[from] hulp_core::Error),
    #[error("cohort i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    schema: ConceptSchema,
    signal_dim: usize,
}

pub fn write_cohort_jsonl(cohort: &Cohort) -> Vec<u8> {
    let header = Header {
        format: COHORT_FORMAT.into(),
        schema: cohort.schema().clone(),
        signal_dim: cohort.signal_dim(),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for r in cohort.records() {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn field_err(line: usize, field: &str, detail: impl Into<String>) -> CohortFileError {
    CohortFileError::Field {
        line,
        field: field.into(),
        detail: detail.into(),
    }
}

fn parse_record(line: usize, value: &Value, schema: &ConceptSchema, width: usize) -> Result<PatientRecord, CohortFileError> {
    let obj = value.as_object().ok_or(CohortFileError::Line {
        line,
        detail: "record is not a JSON object".into(),
    })?;
    let get = |field: &str| obj.get(field).ok_or_else(|| field_err(line, field, "missing"));

    let id = get("id")?.as_str().ok_or_else(|| field_err(line, "id", "expected a string"))?;
    let time = get("time")?.as_f64().ok_or_else(|| field_err(line, "time", "expected a number"))?;
    if !time.is_finite() || time < 0.0 {
        return Err(field_err(line, "time", format!("{time} is not a non-negative time")));
    }
    let event = match get("event")?.as_u64() {
        Some(e @ (0 | 1)) => e as u8,
        _ => return Err(field_err(line, "event", "expected 0 or 1")),
    };

    let raw = get("covariates")?
        .as_object()
        .ok_or_else(|| field_err(line, "covariates", "expected an object"))?;
    let mut covariates = BTreeMap::new();
    for (parent, label) in raw {
        let field = format!("covariates.{parent}");
        let label = label.as_str().ok_or_else(|| field_err(line, &field, "expected a string"))?;
        let j = schema
            .parent_index(parent)
            .ok_or_else(|| field_err(line, &field, "unknown parent"))?;
        if label != hulp_core::MISSING && schema.parents()[j].label_index(label).is_none() {
            return Err(field_err(line, &field, format!("'{label}' is not a valid label")));
        }
        covariates.insert(parent.clone(), label.to_string());
    }

    let signal = get("signal")?
        .as_array()
        .ok_or_else(|| field_err(line, "signal", "expected an array of numbers"))?
        .iter()
        .map(|v| v.as_f64().filter(|x| x.is_finite()))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| field_err(line, "signal", "expected finite numbers"))?;
    if signal.len() != width {
        return Err(field_err(
            line,
            "signal",
            format!("has {} values, header declares {width}", signal.len()),
        ));
    }
    Ok(PatientRecord {
        id: id.to_string(),
        covariates,
        time,
        event,
        signal,
    })
}

/// Parses a cohort file; `source` is recorded as the provenance.
pub fn read_cohort_jsonl(text: &str, source: &str) -> Result<Cohort, CohortFileError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(CohortFileError::Empty)?;
    let header_value: Value = serde_json::from_str(first).map_err(|e| CohortFileError::Line {
        line: 1,
        detail: format!("header: {e}"),
    })?;
    match header_value.get("format").and_then(Value::as_str) {
        Some(COHORT_FORMAT) => {}
        other => {
            return Err(field_err(
                1,
                "format",
                format!("expected '{COHORT_FORMAT}', found {other:?}"),
            ))
        }
    }
    let header: Header = serde_json::from_value(header_value).map_err(|e| CohortFileError::Line {
        line: 1,
        detail: format!("header: {e}"),
    })?;

    let mut records = Vec::new();
    for (idx, text) in lines {
        let line = idx + 1;
        let value: Value = serde_json::from_str(text).map_err(|e| CohortFileError::Line {
            line,
            detail: e.to_string(),
        })?;
        records.push(parse_record(line, &value, &header.schema, header.signal_dim)?);
    }
    if records.is_empty() {
        return Err(CohortFileError::Empty);
    }
    Ok(Cohort::new(header.schema, records, Provenance::File(source.into()))?)
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<(), CohortFileError> {
    std::fs::write(path, write_cohort_jsonl(cohort))?;
    Ok(())
}

pub fn load_cohort(path: &Path) -> Result<Cohort, CohortFileError> {
    let text = std::fs::read_to_string(path)?;
    read_cohort_jsonl(&text, &path.display().to_string())
}
