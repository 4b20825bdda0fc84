//! Patient records, cohorts, preprocessing, missingness injection, stratified
//! folds and the synthetic cohort generator.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::schema::{ConceptSchema, MISSING};
use crate::{Error, Result};

mod folds;
mod preprocess;
mod synthetic;

pub use folds::{stratified_folds, Fold};
pub use preprocess::{
    canonicalize_covariates, canonicalize_label, discretize_continuous, inject_missingness,
    Discretized,
};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticParent, SyntheticTruth};

/// One patient: covariates (label or `"X"` per parent), outcome and signal.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatientRecord {
    pub id: String,
    pub covariates: BTreeMap<String, String>,
    /// Observed time (months).
    pub time: f64,
    /// 1 = event observed at `time`, 0 = censored (alive at least until `time`).
    pub event: u8,
    /// Image surrogate.
    pub signal: Vec<f64>,
}

impl PatientRecord {
    pub fn covariate(&self, parent: &str) -> &str {
        self.covariates.get(parent).map_or(MISSING, String::as_str)
    }

    pub fn is_missing(&self, parent: &str) -> bool {
        self.covariate(parent) == MISSING
    }
}

/// Where a cohort came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic(Box<(SyntheticConfig, SyntheticTruth)>),
    File(String),
    Other(String),
}

impl Provenance {
    pub fn truth(&self) -> Option<&SyntheticTruth> {
        match self {
            Provenance::Synthetic(b) => Some(&b.1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    schema: ConceptSchema,
    records: Vec<PatientRecord>,
    pub provenance: Provenance,
}

impl Cohort {
    /// Validates every record against the schema. Records must name every
    /// parent; missing values use `"X"`.
    pub fn new(schema: ConceptSchema, records: Vec<PatientRecord>, provenance: Provenance) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("cohort is empty".into()));
        }
        let width = records[0].signal.len();
        for (i, r) in records.iter().enumerate() {
            validate_record(&schema, r, width).map_err(|e| match e {
                Error::Data(msg) => Error::Data(format!("record {i} ('{}'): {msg}", r.id)),
                other => other,
            })?;
        }
        Ok(Self {
            schema,
            records,
            provenance,
        })
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn signal_dim(&self) -> usize {
        self.records[0].signal.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn truth(&self) -> Option<&SyntheticTruth> {
        self.provenance.truth()
    }

    /// Copy with the records at `indices`, in that order. Synthetic ground
    /// truth is subset alongside.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        let provenance = match &self.provenance {
            Provenance::Synthetic(b) => {
                Provenance::Synthetic(Box::new((b.0.clone(), b.1.subset(indices))))
            }
            other => other.clone(),
        };
        Cohort {
            schema: self.schema.clone(),
            records,
            provenance,
        }
    }

    /// Replaces the records; they are re-validated.
    pub fn with_records(&self, records: Vec<PatientRecord>) -> Result<Cohort> {
        Cohort::new(self.schema.clone(), records, self.provenance.clone())
    }

    /// Fraction of `(patient, parent)` cells holding `"X"`.
    pub fn missing_fraction(&self) -> f64 {
        let cells = self.records.len() * self.schema.n_parents();
        let missing: usize = self
            .records
            .iter()
            .map(|r| r.covariates.values().filter(|v| *v == MISSING).count())
            .sum();
        missing as f64 / cells as f64
    }
}

fn validate_record(schema: &ConceptSchema, r: &PatientRecord, width: usize) -> Result<()> {
    if !(r.time > 0.0 && r.time.is_finite()) {
        return Err(Error::Data(format!("time {} must be positive and finite", r.time)));
    }
    if r.event > 1 {
        return Err(Error::Data(format!("event {} must be 0 or 1", r.event)));
    }
    if r.signal.len() != width {
        return Err(Error::Data(format!(
            "signal has width {}, expected {width}",
            r.signal.len()
        )));
    }
    if r.signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("signal has non-finite entries".into()));
    }
    for parent in schema.parents() {
        let Some(value) = r.covariates.get(&parent.name) else {
            return Err(Error::Data(format!("covariate '{}' is absent", parent.name)));
        };
        if value != MISSING && parent.label_index(value).is_none() {
            return Err(Error::Data(format!(
                "covariate '{}' has value '{value}' outside the schema",
                parent.name
            )));
        }
    }
    if let Some(extra) = r.covariates.keys().find(|k| schema.parent_index(k).is_none()) {
        return Err(Error::Data(format!("covariate '{extra}' is not in the schema")));
    }
    Ok(())
}
