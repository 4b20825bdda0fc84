use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use super::Cohort;
use crate::schema::{ConceptSchema, MISSING};
use crate::{Error, Result};

const MISSING_TOKENS: [&str; 6] = ["unknown", "", "nan", "tx", "nx", "mx"];

/// Canonical form of one raw covariate value.
///
/// Missing spellings become `"X"`; sub-stages such as `T1c` collapse to their
/// parent stage `T1`. Values that are already labels of `valid` pass through.
pub fn canonicalize_label(raw: &str, valid: &[String]) -> String {
    let trimmed = raw.trim();
    if valid.iter().any(|l| l == trimmed) {
        return trimmed.to_string();
    }
    let lower = trimmed.to_ascii_lowercase();
    if trimmed == MISSING || MISSING_TOKENS.contains(&lower.as_str()) {
        return MISSING.to_string();
    }
    collapse_substage(trimmed).unwrap_or(trimmed).to_string()
}

/// `[A-Z]+[0-9]+[a-z]+` with the lowercase suffix dropped.
fn collapse_substage(s: &str) -> Option<&str> {
    let bytes = s.as_bytes();
    let upper = bytes.iter().take_while(|b| b.is_ascii_uppercase()).count();
    let digits = bytes[upper..].iter().take_while(|b| b.is_ascii_digit()).count();
    let rest = &bytes[upper + digits..];
    (upper > 0 && digits > 0 && !rest.is_empty() && rest.iter().all(u8::is_ascii_lowercase))
        .then(|| &s[..upper + digits])
}

/// Canonicalizes every value of a raw covariate map. Unknown parents and
/// values that are still not labels pass through for validation to report.
pub fn canonicalize_covariates(
    raw: &BTreeMap<String, String>,
    schema: &ConceptSchema,
) -> BTreeMap<String, String> {
    raw.iter()
        .map(|(parent, value)| {
            let labels = schema
                .parent_index(parent)
                .map_or(&[][..], |j| &schema.parents()[j].labels[..]);
            (parent.clone(), canonicalize_label(value, labels))
        })
        .collect()
}

/// Replaces each `(patient, parent)` cell by `"X"` with probability `rate`.
///
/// One uniform draw is consumed per cell, in record then schema order, so the
/// result depends only on the seed.
pub fn inject_missingness<R: Rng + ?Sized>(cohort: &Cohort, rate: f64, rng: &mut R) -> Result<Cohort> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("missingness rate {rate} is outside [0, 1]")));
    }
    let mut records = cohort.records().to_vec();
    for r in &mut records {
        for parent in cohort.schema().parents() {
            let u: f64 = rng.random();
            if u < rate {
                r.covariates.insert(parent.name.clone(), MISSING.to_string());
            }
        }
    }
    cohort.with_records(records)
}

/// Quantile discretization result.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretized {
    /// `n_levels - 1` nearest-rank cut points.
    pub cuts: Vec<f64>,
    /// `"{prefix}_q{level}"` (1-based) or `"X"` for missing values.
    pub labels: Vec<String>,
}

/// Bins a continuous column into `n_levels` ordinal labels at its
/// `k / n_levels` quantiles. A value equal to a cut point goes to the lower bin.
pub fn discretize_continuous(values: &[Option<f64>], n_levels: usize, prefix: &str) -> Result<Discretized> {
    if n_levels < 2 {
        return Err(Error::Config(format!("need at least 2 levels, got {n_levels}")));
    }
    let mut observed: Vec<f64> = values.iter().flatten().copied().collect();
    if observed.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in continuous column".into()));
    }
    observed.sort_by(f64::total_cmp);
    let (Some(&lo), Some(&hi)) = (observed.first(), observed.last()) else {
        return Err(Error::Data("continuous column has no observed values".into()));
    };
    if lo == hi {
        return Err(Error::Data(format!(
            "continuous column is constant ({lo}); cannot form {n_levels} levels"
        )));
    }
    let n = observed.len();
    let cuts: Vec<f64> = (1..n_levels)
        .map(|k| observed[((k * n).div_ceil(n_levels)).max(1) - 1])
        .collect();
    let labels = values
        .iter()
        .map(|v| match v {
            None => MISSING.to_string(),
            Some(x) => {
                let level = cuts.iter().filter(|&&c| c < *x).count() + 1;
                format!("{prefix}_q{level}")
            }
        })
        .collect();
    Ok(Discretized { cuts, labels })
}
