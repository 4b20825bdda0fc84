//! The two experiment protocols run on synthetic cohorts: test-time
//! intervention with oracle masks, and robustness to missing covariates
//! against hard-imputation baselines.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{EhrOnlyModel, Imputer};
use crate::data::{generate_synthetic, inject_missingness, stratified_folds, Cohort, SyntheticConfig};
use crate::math;
use crate::model::{HulpConfig, HulpModel, InterventionMask, UNKNOWN};
use crate::survival::{antolini_cindex_rows, build_time_grid, cumulative_survival};
use crate::training::{cross_validate, evaluate_cindex, fit, signal_matrix, CvConfig, CvEntry, TrainConfig};
use crate::{Error, Result};

/// Missingness rates of the robustness sweep.
pub const SWEEP_RATES: [f64; 4] = [0.3, 0.4, 0.5, 0.7];

/// HuLP with the reference encoder, time grid built from `train`.
pub fn hulp_for(train: &Cohort, config: &HulpConfig, seed: u64) -> Result<HulpModel> {
    let grid = build_time_grid(&train.times(), &train.events(), None)?;
    HulpModel::new(train.schema().clone(), config.clone(), grid, train.signal_dim(), seed)
}

/// Model settings small enough for repeated single-core runs.
pub fn compact_model() -> HulpConfig {
    HulpConfig {
        concept_embed_dim: 16,
        latent_dim: Some(64),
        encoder_hidden: vec![64],
        ..HulpConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionExperiment {
    pub cohort: SyntheticConfig,
    pub model: HulpConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub folds: usize,
    pub fold_limit: Option<usize>,
}

impl Default for InterventionExperiment {
    fn default() -> Self {
        Self {
            cohort: SyntheticConfig {
                n_patients: 500,
                noise_sigma: 6.0,
                missing_rates: vec![0.3],
                ..SyntheticConfig::default()
            },
            model: compact_model(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2],
            folds: 5,
            fold_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionReport {
    pub entries: Vec<CvEntry>,
}

impl InterventionReport {
    /// Mean and sample standard deviation without interventions.
    pub fn without(&self) -> (f64, f64) {
        math::mean_std(&self.entries.iter().map(|e| e.cindex).collect::<Vec<_>>())
    }

    /// Mean and sample standard deviation with oracle masks.
    pub fn with(&self) -> (f64, f64) {
        math::mean_std(
            &self
                .entries
                .iter()
                .map(|e| e.cindex_oracle.unwrap_or(f64::NAN))
                .collect::<Vec<_>>(),
        )
    }

    pub fn improvement(&self) -> f64 {
        self.with().0 - self.without().0
    }
}

/// For every seed: draws a cohort with that seed, cross-validates HuLP and
/// scores each arm with and without oracle masks.
pub fn run_intervention_experiment(config: &InterventionExperiment) -> Result<InterventionReport> {
    let mut entries = Vec::new();
    for &seed in &config.seeds {
        let cohort = generate_synthetic(&SyntheticConfig {
            seed,
            ..config.cohort.clone()
        })?;
        let cv = CvConfig {
            folds: config.folds,
            seeds: vec![seed],
            with_oracle: true,
            fold_limit: config.fold_limit,
            train: config.train.clone(),
        };
        let report = cross_validate(&cohort, "HuLP", &cv, |train, arm| hulp_for(train, &config.model, arm))?;
        entries.extend(report.entries);
    }
    Ok(InterventionReport { entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingnessSweep {
    /// Complete cohort; `missing_rates` is ignored.
    pub cohort: SyntheticConfig,
    pub rates: Vec<f64>,
    pub seeds: Vec<u64>,
    pub model: HulpConfig,
    pub train: TrainConfig,
    /// Used for the covariate-only baselines.
    pub baseline_train: TrainConfig,
    pub knn_k: usize,
    /// The validation split is one fold out of this many (5 gives 8:2).
    pub folds: usize,
    /// Also score HuLP with oracle masks.
    pub with_oracle: bool,
}

impl Default for MissingnessSweep {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            cohort: SyntheticConfig {
                n_patients: 500,
                noise_sigma: 1.0,
                ..SyntheticConfig::default()
            },
            rates: SWEEP_RATES.to_vec(),
            seeds: vec![0, 1, 2],
            model: compact_model(),
            baseline_train: EhrOnlyModel::train_config(&train),
            train,
            knn_k: 1,
            folds: 5,
            with_oracle: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: String,
    pub rate: f64,
    pub seed: u64,
    pub cindex: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rates: Vec<f64>,
    pub rows: Vec<SweepRow>,
}

pub const METHOD_MODE: &str = "Mode";
pub const METHOD_KNN: &str = "kNN (k=1)";
pub const METHOD_HULP: &str = "HuLP";
pub const METHOD_HULP_ORACLE: &str = "HuLP + oracle";

impl SweepReport {
    /// Methods in first-seen order.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Mean C-index over seeds of `method` at `rate`.
    pub fn mean(&self, method: &str, rate: f64) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.rate == rate)
            .map(|r| r.cindex)
            .collect();
        (!v.is_empty()).then(|| math::mean_std(&v).0)
    }

    /// One row per method, one column per rate.
    pub fn table(&self) -> Vec<(String, Vec<Option<f64>>)> {
        self.methods()
            .into_iter()
            .map(|m| {
                let means = self.rates.iter().map(|&r| self.mean(&m, r)).collect();
                (m, means)
            })
            .collect()
    }
}

/// For every seed: draws a complete cohort, holds out one stratified fold,
/// masks covariates of the whole cohort at each rate, then trains HuLP and
/// the covariate-only network with mode and kNN imputation fitted on the
/// training split.
pub fn run_missingness_sweep(config: &MissingnessSweep) -> Result<SweepReport> {
    if config.rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::Config("sweep rates must lie in [0, 1]".into()));
    }
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let complete = generate_synthetic(&SyntheticConfig {
            seed,
            missing_rates: vec![0.0],
            ..config.cohort.clone()
        })?;
        let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
        let fold = stratified_folds(&complete, config.folds, &mut split_rng)?.swap_remove(0);
        for (r_idx, &rate) in config.rates.iter().enumerate() {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(r_idx as u64));
            let cohort = inject_missingness(&complete, rate, &mut mask_rng)?;
            let train = cohort.subset(&fold.train);
            let valid = cohort.subset(&fold.valid);
            let mut push = |method: &str, cindex: Option<f64>| -> Result<()> {
                rows.push(SweepRow {
                    method: method.to_string(),
                    rate,
                    seed,
                    cindex: cindex.ok_or(Error::UndefinedMetric)?,
                });
                Ok(())
            };
            let grid = build_time_grid(&train.times(), &train.events(), None)?;
            for (method, imputer) in [
                (METHOD_MODE, Imputer::mode(&train)?),
                (METHOD_KNN, Imputer::knn(&train, config.knn_k)?),
            ] {
                let mut m = EhrOnlyModel::new(train.schema().clone(), grid.clone(), Some(imputer), seed);
                let tc = TrainConfig {
                    seed,
                    ..config.baseline_train.clone()
                };
                fit(&mut m, &train, Some(&valid), &tc)?;
                push(method, evaluate_cindex(&m, &valid, false)?)?;
            }
            let mut hulp = hulp_for(&train, &config.model, seed)?;
            let tc = TrainConfig {
                seed,
                ..config.train.clone()
            };
            fit(&mut hulp, &train, Some(&valid), &tc)?;
            push(METHOD_HULP, evaluate_cindex(&hulp, &valid, false)?)?;
            if config.with_oracle {
                push(METHOD_HULP_ORACLE, evaluate_cindex(&hulp, &valid, true)?)?;
            }
        }
    }
    Ok(SweepReport {
        rates: config.rates.clone(),
        rows,
    })
}

/// C-index when, for every patient, a random `fraction` of the parent
/// categories (rounded, at least none and at most all) is set to the recorded
/// label; missing recorded values stay unknown. Subsets are drawn from `seed`.
pub fn partial_intervention_cindex(model: &HulpModel, cohort: &Cohort, fraction: f64, seed: u64) -> Result<Option<f64>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config("intervention fraction must lie in [0, 1]".into()));
    }
    let schema = model.schema();
    if schema != cohort.schema() {
        return Err(Error::Schema(alloc::format!(
            "cohort schema [{}] does not match model schema [{}]",
            cohort.schema().describe(),
            schema.describe()
        )));
    }
    let m = schema.n_parents();
    let chosen = math::round(fraction * m as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut masks = Vec::with_capacity(cohort.len());
    for record in cohort.records() {
        order.shuffle(&mut rng);
        let mut mask = InterventionMask::for_schema(schema);
        for &j in &order[..chosen] {
            let parent = &schema.parents()[j].name;
            let value = record.covariate(parent);
            let choice = if record.is_missing(parent) { UNKNOWN } else { value };
            mask.set_parent(schema, parent, choice)?;
        }
        masks.push(mask);
    }
    let all: Vec<usize> = (0..cohort.len()).collect();
    let prediction = model.predict(&signal_matrix(cohort, &all)?, Some(&masks))?;
    let rows: Vec<Vec<f64>> = (0..cohort.len())
        .map(|r| cumulative_survival(prediction.hazards.row(r)))
        .collect();
    match antolini_cindex_rows(model.grid(), &rows, &cohort.times(), &cohort.events()) {
        Ok(c) => Ok(Some(c)),
        Err(Error::UndefinedMetric) => Ok(None),
        Err(e) => Err(e),
    }
}
