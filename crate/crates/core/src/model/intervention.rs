use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::PatientRecord;
use crate::schema::{ConceptSchema, MISSING};
use crate::{Error, Result};

/// Parent-level choice meaning "leave the model's probabilities alone".
pub const UNKNOWN: &str = "unknown";

/// Per-concept override of the concept probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ConceptForce {
    #[default]
    Unset,
    /// `p := 1`
    Present,
    /// `p := 0`
    Absent,
}

impl ConceptForce {
    pub fn value(self) -> Option<f64> {
        match self {
            ConceptForce::Unset => None,
            ConceptForce::Present => Some(1.0),
            ConceptForce::Absent => Some(0.0),
        }
    }
}

/// One [`ConceptForce`] per concept slot.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InterventionMask {
    forces: Vec<ConceptForce>,
}

impl InterventionMask {
    /// Mask with every slot unset.
    pub fn empty(n_concepts: usize) -> Self {
        Self {
            forces: vec![ConceptForce::Unset; n_concepts],
        }
    }

    pub fn for_schema(schema: &ConceptSchema) -> Self {
        Self::empty(schema.n_concepts())
    }

    pub fn from_forces(forces: Vec<ConceptForce>) -> Self {
        Self { forces }
    }

    pub fn len(&self) -> usize {
        self.forces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forces.is_empty()
    }

    pub fn forces(&self) -> &[ConceptForce] {
        &self.forces
    }

    pub fn is_unset(&self) -> bool {
        self.forces.iter().all(|f| *f == ConceptForce::Unset)
    }

    /// Raw per-concept forcing, for experiments below parent granularity.
    pub fn set_concept(&mut self, slot: usize, force: ConceptForce) -> Result<()> {
        let n = self.forces.len();
        let f = self.forces.get_mut(slot).ok_or(Error::Index {
            op: "set_concept",
            index: slot,
            extent: n,
        })?;
        *f = force;
        Ok(())
    }

    /// Sets a whole parent group: a label forces it present and its siblings
    /// absent; [`UNKNOWN`] unsets the group. The last call for a parent wins.
    pub fn set_parent(&mut self, schema: &ConceptSchema, parent: &str, choice: &str) -> Result<()> {
        self.check_len(schema)?;
        let j = schema
            .parent_index(parent)
            .ok_or_else(|| Error::Schema(format!("unknown parent '{parent}'")))?;
        let slots = schema.slots(j);
        let chosen = match schema.parents()[j].label_index(choice) {
            Some(k) => Some(k),
            None if choice == UNKNOWN => None,
            None => {
                return Err(Error::Schema(format!(
                    "label '{choice}' is not valid for parent '{parent}'"
                )))
            }
        };
        for (k, slot) in slots.enumerate() {
            self.forces[slot] = match chosen {
                None => ConceptForce::Unset,
                Some(c) if c == k => ConceptForce::Present,
                Some(_) => ConceptForce::Absent,
            };
        }
        Ok(())
    }

    /// Consuming form of [`InterventionMask::set_parent`].
    pub fn intervene_parent(mut self, schema: &ConceptSchema, parent: &str, choice: &str) -> Result<Self> {
        self.set_parent(schema, parent, choice)?;
        Ok(self)
    }

    pub(crate) fn check_len(&self, schema: &ConceptSchema) -> Result<()> {
        if self.forces.len() != schema.n_concepts() {
            return Err(Error::Schema(format!(
                "intervention mask has {} slots, schema has {} concepts",
                self.forces.len(),
                schema.n_concepts()
            )));
        }
        Ok(())
    }
}

/// Emulated expert: forces every parent whose value is recorded, leaves
/// missing parents to the model.
pub fn oracle_mask_from_record(record: &PatientRecord, schema: &ConceptSchema) -> Result<InterventionMask> {
    let mut mask = InterventionMask::for_schema(schema);
    for (parent, value) in &record.covariates {
        if schema.parent_index(parent).is_none() {
            return Err(Error::Schema(format!(
                "record '{}' has unknown covariate '{parent}'",
                record.id
            )));
        }
        if value == MISSING {
            continue;
        }
        schema.resolve(parent, value)?;
        mask.set_parent(schema, parent, value)?;
    }
    Ok(mask)
}
