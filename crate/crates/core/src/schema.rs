//! Parent categories and their discrete concepts.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Canonical label for an unknown or unrecorded covariate value.
pub const MISSING: &str = "X";

/// A clinical feature and the ordered labels it can take.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParentCategory {
    pub name: String,
    pub labels: Vec<String>,
}

impl ParentCategory {
    pub fn new<S: Into<String>>(name: impl Into<String>, labels: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.into(),
            labels: labels.into_iter().map(Into::into).collect(),
        }
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// Ordered parent categories. Concepts are numbered parent by parent, so the
/// concepts of parent `j` occupy the slots `offset(j)..offset(j) + m_j`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "SchemaRepr", into = "SchemaRepr"))]
pub struct ConceptSchema {
    parents: Vec<ParentCategory>,
    offsets: Vec<usize>,
}

#[cfg(feature = "serde")]
#[derive(serde::Serialize, serde::Deserialize)]
struct SchemaRepr {
    parents: Vec<ParentCategory>,
}

#[cfg(feature = "serde")]
impl TryFrom<SchemaRepr> for ConceptSchema {
    type Error = Error;

    fn try_from(repr: SchemaRepr) -> Result<Self> {
        ConceptSchema::new(repr.parents)
    }
}

#[cfg(feature = "serde")]
impl From<ConceptSchema> for SchemaRepr {
    fn from(schema: ConceptSchema) -> Self {
        SchemaRepr {
            parents: schema.parents,
        }
    }
}

impl ConceptSchema {
    pub fn new(parents: Vec<ParentCategory>) -> Result<Self> {
        if parents.is_empty() {
            return Err(Error::Schema("schema has no parent categories".into()));
        }
        let mut offsets = Vec::with_capacity(parents.len());
        let mut total = 0;
        for (j, parent) in parents.iter().enumerate() {
            if parent.name.is_empty() {
                return Err(Error::Schema(format!("parent {j} has an empty name")));
            }
            if parents[..j].iter().any(|p| p.name == parent.name) {
                return Err(Error::Schema(format!("duplicate parent '{}'", parent.name)));
            }
            if parent.labels.len() < 2 {
                return Err(Error::Schema(format!(
                    "parent '{}' needs at least two labels",
                    parent.name
                )));
            }
            for (k, label) in parent.labels.iter().enumerate() {
                if label == MISSING {
                    return Err(Error::Schema(format!(
                        "parent '{}' uses the missing marker as a label",
                        parent.name
                    )));
                }
                if parent.labels[..k].contains(label) {
                    return Err(Error::Schema(format!(
                        "duplicate label '{label}' in parent '{}'",
                        parent.name
                    )));
                }
            }
            offsets.push(total);
            total += parent.labels.len();
        }
        Ok(Self { parents, offsets })
    }

    pub fn parents(&self) -> &[ParentCategory] {
        &self.parents
    }

    pub fn n_parents(&self) -> usize {
        self.parents.len()
    }

    /// Total number of concepts `M`.
    pub fn n_concepts(&self) -> usize {
        self.parents.iter().map(|p| p.labels.len()).sum()
    }

    pub fn offset(&self, parent: usize) -> usize {
        self.offsets[parent]
    }

    /// Concept slots belonging to a parent.
    pub fn slots(&self, parent: usize) -> core::ops::Range<usize> {
        let start = self.offsets[parent];
        start..start + self.parents[parent].labels.len()
    }

    pub fn parent_index(&self, name: &str) -> Option<usize> {
        self.parents.iter().position(|p| p.name == name)
    }

    /// Parent index of a concept slot.
    pub fn parent_of(&self, concept: usize) -> usize {
        self.offsets.partition_point(|&o| o <= concept) - 1
    }

    /// `(parent, label)` of a concept slot.
    pub fn concept(&self, concept: usize) -> (&str, &str) {
        let j = self.parent_of(concept);
        let p = &self.parents[j];
        (&p.name, &p.labels[concept - self.offsets[j]])
    }

    /// Resolves a label of a named parent: `Ok(None)` for the missing marker.
    pub fn resolve(&self, parent: &str, label: &str) -> Result<(usize, Option<usize>)> {
        let j = self
            .parent_index(parent)
            .ok_or_else(|| Error::Schema(format!("unknown parent '{parent}'")))?;
        if label == MISSING {
            return Ok((j, None));
        }
        let k = self.parents[j].label_index(label).ok_or_else(|| {
            Error::Schema(format!("label '{label}' is not valid for parent '{parent}'"))
        })?;
        Ok((j, Some(k)))
    }

    /// Short human description, used in mismatch errors.
    pub fn describe(&self) -> String {
        let names: Vec<&str> = self.parents.iter().map(|p| p.name.as_str()).collect();
        format!("{} parents [{}]", self.parents.len(), names.join(", "))
    }

    /// The six-feature lung-cancer style schema used by the synthetic cohorts.
    pub fn lung_example() -> Self {
        Self::new(alloc::vec![
            ParentCategory::new("T-stage", ["T1", "T2", "T3", "T4"]),
            ParentCategory::new("N-stage", ["N0", "N1", "N2", "N3"]),
            ParentCategory::new("M-stage", ["M0", "M1"]),
            ParentCategory::new("gender", ["Male", "Female"]),
            ParentCategory::new("smoking", ["Never", "Ex-smoker", "Smoker"]),
        ])
        .expect("static schema is valid")
    }
}
