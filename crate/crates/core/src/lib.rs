//! Concept-bottleneck survival modelling with test-time concept intervention.
//!
//! The crate is `no_std` and only needs `alloc`. It contains everything that
//! is pure computation: a small reverse-mode autodiff engine, discrete-time
//! survival primitives, the bottleneck network, its training objective, the
//! optimizer and training loop, synthetic cohorts, and the imputation and
//! baseline survival models used for comparisons. File formats, the CLI and
//! the inference service live in the companion `hulp` crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod baselines;
pub mod data;
mod error;
pub mod experiments;
pub mod losses;
pub mod math;
pub mod model;
pub mod schema;
pub mod survival;
pub mod training;

pub use error::{Error, Result};

pub use autodiff::{Axis, Graph, Matrix, Var};
pub use model::{HulpConfig, HulpModel, InterventionMask};
pub use schema::{ConceptSchema, ParentCategory, MISSING};
pub use survival::{SurvivalCurve, TimeGrid};
