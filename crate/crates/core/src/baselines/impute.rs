use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Cohort, PatientRecord};
use crate::schema::{ConceptSchema, MISSING};
use crate::{Error, Result};

/// Where an imputed cohort's cell value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellSource {
    Observed,
    Mode,
    /// Copied from (or voted by) the reference record with this index.
    Neighbor(usize),
    /// kNN found no candidate and used the mode instead.
    ModeFallback,
}

/// A cohort without `"X"` cells, and per `(patient, parent)` provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedCohort {
    pub cohort: Cohort,
    pub sources: Vec<Vec<CellSource>>,
}

/// Per-parent modal label of a reference cohort; ties go to the label that
/// comes first in the schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeImputer {
    pub modes: Vec<usize>,
}

impl ModeImputer {
    pub fn fit(reference: &Cohort) -> Result<Self> {
        let schema = reference.schema();
        let mut modes = Vec::with_capacity(schema.n_parents());
        for (j, parent) in schema.parents().iter().enumerate() {
            let mut counts = vec![0usize; parent.labels.len()];
            for r in reference.records() {
                if let Some(k) = label_of(schema, r, j) {
                    counts[k] += 1;
                }
            }
            let best = (0..counts.len()).fold(0, |b, k| if counts[k] > counts[b] { k } else { b });
            if counts[best] == 0 {
                return Err(Error::Imputation(format!(
                    "covariate '{}' has no observed value to impute from",
                    parent.name
                )));
            }
            modes.push(best);
        }
        Ok(Self { modes })
    }
}

fn label_of(schema: &ConceptSchema, r: &PatientRecord, parent: usize) -> Option<usize> {
    schema.parents()[parent].label_index(r.covariate(&schema.parents()[parent].name))
}

/// Label indices of every record, `None` for missing cells.
fn label_table(cohort: &Cohort) -> Vec<Vec<Option<usize>>> {
    let schema = cohort.schema();
    cohort
        .records()
        .iter()
        .map(|r| (0..schema.n_parents()).map(|j| label_of(schema, r, j)).collect())
        .collect()
}

/// Fitted imputer applicable to any cohort with the reference schema.
#[derive(Debug, Clone, PartialEq)]
pub enum Imputer {
    Mode(ModeImputer),
    /// `k` nearest reference records by Hamming distance over mutually
    /// observed covariates; majority vote, ties by schema label order.
    Knn {
        k: usize,
        reference: Vec<Vec<Option<usize>>>,
        fallback: ModeImputer,
    },
}

impl Imputer {
    pub fn mode(reference: &Cohort) -> Result<Self> {
        Ok(Imputer::Mode(ModeImputer::fit(reference)?))
    }

    pub fn knn(reference: &Cohort, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("kNN needs k >= 1".into()));
        }
        Ok(Imputer::Knn {
            k,
            reference: label_table(reference),
            fallback: ModeImputer::fit(reference)?,
        })
    }

    /// Completed label indices of one record. `exclude` names a reference
    /// row that must not serve as its own neighbor.
    pub fn complete(
        &self,
        labels: &[Option<usize>],
        exclude: Option<usize>,
    ) -> (Vec<usize>, Vec<CellSource>) {
        let mut out = Vec::with_capacity(labels.len());
        let mut sources = Vec::with_capacity(labels.len());
        for (j, l) in labels.iter().enumerate() {
            let (value, source) = match (l, self) {
                (Some(k), _) => (*k, CellSource::Observed),
                (None, Imputer::Mode(m)) => (m.modes[j], CellSource::Mode),
                (None, Imputer::Knn { k, reference, fallback }) => {
                    knn_cell(labels, j, *k, reference, exclude)
                        .unwrap_or((fallback.modes[j], CellSource::ModeFallback))
                }
            };
            out.push(value);
            sources.push(source);
        }
        (out, sources)
    }

    pub fn apply(&self, cohort: &Cohort, cohort_is_reference: bool) -> Result<ImputedCohort> {
        let schema = cohort.schema();
        let table = label_table(cohort);
        let mut records = Vec::with_capacity(cohort.len());
        let mut all_sources = Vec::with_capacity(cohort.len());
        for (i, (r, labels)) in cohort.records().iter().zip(&table).enumerate() {
            let (values, sources) = self.complete(labels, cohort_is_reference.then_some(i));
            let mut rec = r.clone();
            for (j, parent) in schema.parents().iter().enumerate() {
                rec.covariates.insert(parent.name.clone(), parent.labels[values[j]].clone());
            }
            records.push(rec);
            all_sources.push(sources);
        }
        Ok(ImputedCohort {
            cohort: cohort.with_records(records)?,
            sources: all_sources,
        })
    }
}

fn knn_cell(
    labels: &[Option<usize>],
    target: usize,
    k: usize,
    reference: &[Vec<Option<usize>>],
    exclude: Option<usize>,
) -> Option<(usize, CellSource)> {
    let mut candidates: Vec<(usize, usize)> = reference
        .iter()
        .enumerate()
        .filter(|(i, row)| Some(*i) != exclude && row[target].is_some())
        .map(|(i, row)| {
            let d = labels
                .iter()
                .zip(row)
                .enumerate()
                .filter(|(j, (a, b))| *j != target && a.is_some() && b.is_some() && a != b)
                .count();
            (d, i)
        })
        .collect();
    if candidates.is_empty() {
        return None;
    }
    candidates.sort_unstable();
    candidates.truncate(k);
    let n_labels = candidates
        .iter()
        .filter_map(|&(_, i)| reference[i][target])
        .max()
        .unwrap_or(0)
        + 1;
    let mut votes = vec![0usize; n_labels];
    for &(_, i) in &candidates {
        votes[reference[i][target].expect("filtered")] += 1;
    }
    let winner = (0..n_labels).fold(0, |b, v| if votes[v] > votes[b] { v } else { b });
    let first = candidates
        .iter()
        .find(|&&(_, i)| reference[i][target] == Some(winner))
        .map(|&(_, i)| i)
        .expect("winner has a vote");
    Some((winner, CellSource::Neighbor(first)))
}

/// Replaces every `"X"` by the cohort's own per-covariate mode.
pub fn impute_mode(cohort: &Cohort) -> Result<ImputedCohort> {
    Imputer::mode(cohort)?.apply(cohort, true)
}

/// Replaces every `"X"` from the `k` nearest other patients of the cohort.
pub fn impute_knn(cohort: &Cohort, k: usize) -> Result<ImputedCohort> {
    Imputer::knn(cohort, k)?.apply(cohort, true)
}

/// Fraction of imputed cells that match `truth` (label indices per parent).
pub fn imputation_accuracy(original: &Cohort, imputed: &Cohort, truth: &[Vec<usize>]) -> Option<f64> {
    let schema = original.schema();
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, (o, m)) in original.records().iter().zip(imputed.records()).enumerate() {
        for (j, parent) in schema.parents().iter().enumerate() {
            if o.covariate(&parent.name) == MISSING {
                total += 1;
                if parent.label_index(m.covariate(&parent.name)) == Some(truth[i][j]) {
                    hit += 1;
                }
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}
