//! Comparison methods: mode and kNN imputation, a covariates-only survival
//! network, and a late-fusion network over signals and covariates.

mod impute;
mod models;

pub use impute::{
    impute_knn, impute_mode, imputation_accuracy, CellSource, ImputedCohort, Imputer, ModeImputer,
};
pub use models::{ehr_one_hot, EhrOnlyModel, FusionModel};
