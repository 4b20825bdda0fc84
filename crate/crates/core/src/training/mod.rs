//! AdamW with a warmup-cosine schedule, the epoch loop with best-epoch
//! selection, and the cross-validation harness.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Matrix, ParamStore, Var};
use crate::data::{stratified_folds, Cohort};
use crate::losses::{hulp_objective, ConceptTarget, LossTerms, SurvivalTarget};
use crate::math;
use crate::model::{oracle_mask_from_record, Encoder, HulpModel, InterventionMask, Mode};
use crate::survival::{antolini_cindex_rows, TimeGrid};
use crate::{Error, Result};

mod optim;

pub use optim::{adamw_step, clip_grad_norm, lr_schedule, AdamState, BETA1, BETA2, EPSILON};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-2,
            warmup_epochs: 5,
            seed: 0,
            grad_clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        if matches!(self.grad_clip, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_schedule(epoch, self.epochs, self.warmup_epochs, self.learning_rate)
    }
}

/// What the training loop needs from a model.
pub trait SurvivalModel: Clone {
    fn grid(&self) -> &TimeGrid;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// Builds the training objective of the records at `indices` on `g`,
    /// whose leaves `vars` hold the parameters in store order.
    fn batch_objective(
        &mut self,
        g: &mut Graph,
        vars: &[Var],
        cohort: &Cohort,
        indices: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<LossTerms>;

    /// Eval-mode survival rows on [`SurvivalModel::grid`], one per record.
    /// Models that cannot be intervened on ignore `oracle`.
    fn survival_rows(&self, cohort: &Cohort, oracle: bool) -> Result<Vec<Vec<f64>>>;
}

/// Signals of the records at `indices` as a `B x d` matrix.
pub fn signal_matrix(cohort: &Cohort, indices: &[usize]) -> Result<Matrix> {
    let d = cohort.signal_dim();
    let mut data = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        data.extend_from_slice(&cohort.records()[i].signal);
    }
    Matrix::from_vec(indices.len(), d, data)
}

pub fn survival_targets(cohort: &Cohort, indices: &[usize], grid: &TimeGrid) -> Vec<SurvivalTarget> {
    indices
        .iter()
        .map(|&i| {
            let r = &cohort.records()[i];
            SurvivalTarget::new(r.time, r.event, grid)
        })
        .collect()
}

fn check_schema(model: &crate::schema::ConceptSchema, cohort: &Cohort) -> Result<()> {
    if model != cohort.schema() {
        return Err(Error::Schema(format!(
            "cohort schema [{}] does not match model schema [{}]",
            cohort.schema().describe(),
            model.describe()
        )));
    }
    Ok(())
}

impl<E: Encoder + Clone> SurvivalModel for HulpModel<E> {
    fn grid(&self) -> &TimeGrid {
        HulpModel::grid(self)
    }

    fn params(&self) -> &ParamStore {
        HulpModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        HulpModel::params_mut(self)
    }

    fn batch_objective(
        &mut self,
        g: &mut Graph,
        vars: &[Var],
        cohort: &Cohort,
        indices: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<LossTerms> {
        check_schema(self.schema(), cohort)?;
        let x = g.leaf(signal_matrix(cohort, indices)?);
        let concepts = indices
            .iter()
            .map(|&i| ConceptTarget::from_record(&cohort.records()[i], self.schema()))
            .collect::<Result<Vec<_>>>()?;
        let out = self.forward(g, vars, x, Mode::Train, None, Some(&concepts), Some(rng))?;
        let targets = survival_targets(cohort, indices, HulpModel::grid(self));
        hulp_objective(
            g,
            Some(out.concept_logits),
            out.hazards,
            self.schema(),
            &concepts,
            &targets,
            &self.config().loss,
        )
    }

    fn survival_rows(&self, cohort: &Cohort, oracle: bool) -> Result<Vec<Vec<f64>>> {
        check_schema(self.schema(), cohort)?;
        let all: Vec<usize> = (0..cohort.len()).collect();
        let x = signal_matrix(cohort, &all)?;
        let masks = if oracle {
            Some(
                cohort
                    .records()
                    .iter()
                    .map(|r| oracle_mask_from_record(r, self.schema()))
                    .collect::<Result<Vec<InterventionMask>>>()?,
            )
        } else {
            None
        };
        let pred = self.predict(&x, masks.as_deref())?;
        Ok((0..pred.survival.rows()).map(|r| pred.survival.row(r).to_vec()).collect())
    }
}

/// Validation C-index of `model` on `cohort`; `None` when no pair is comparable.
pub fn evaluate_cindex<M: SurvivalModel>(model: &M, cohort: &Cohort, oracle: bool) -> Result<Option<f64>> {
    let rows = model.survival_rows(cohort, oracle)?;
    match antolini_cindex_rows(model.grid(), &rows, &cohort.times(), &cohort.events()) {
        Ok(c) => Ok(Some(c)),
        Err(Error::UndefinedMetric) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    pub l1: f64,
    pub ll: f64,
    pub rank: f64,
    pub total: f64,
    pub val_cindex: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters the model holds after `fit`.
    pub best_epoch: usize,
    pub best_cindex: Option<f64>,
    /// Set by callers that persist the final model.
    pub checkpoint: Option<String>,
}

impl FitReport {
    pub fn lr_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.lr).collect()
    }

    pub fn total_trace(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.total).collect()
    }
}

/// Trains `model` on `train`. With `valid`, the validation C-index is
/// evaluated after every epoch and the model ends with the parameters of the
/// best epoch (earliest on ties); without it, the last epoch is kept.
pub fn fit<M: SurvivalModel>(
    model: &mut M,
    train: &Cohort,
    valid: Option<&Cohort>,
    config: &TrainConfig,
) -> Result<FitReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, M)> = None;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for (batch, indices) in order.chunks(config.batch_size).enumerate() {
            let diverged = |detail: String| Error::Divergence { epoch, batch, detail };
            let as_divergence = |e: Error| match e {
                Error::NonFinite(msg) => diverged(msg),
                other => other,
            };
            let mut g = Graph::new();
            let vars = model.params().register(&mut g);
            let terms = model
                .batch_objective(&mut g, &vars, train, indices, &mut rng)
                .map_err(as_divergence)?;
            if !terms.total.is_finite() {
                return Err(diverged(format!(
                    "loss is {} (concept {}, likelihood {}, rank {})",
                    terms.total, terms.concept, terms.likelihood, terms.rank
                )));
            }
            g.backward(terms.total_var).map_err(as_divergence)?;
            let mut grads = model.params().gradients(&g, &vars);
            if let Some(max) = config.grad_clip {
                clip_grad_norm(&mut grads, max);
            }
            adamw_step(model.params_mut(), &grads, &mut state, lr, config.weight_decay).map_err(as_divergence)?;
            for (s, v) in sums.iter_mut().zip([terms.concept, terms.likelihood, terms.rank, terms.total]) {
                *s += v;
            }
            batches += 1;
        }
        let n = batches as f64;
        let val_cindex = match valid {
            Some(v) => evaluate_cindex(model, v, false).map_err(|e| match e {
                Error::NonFinite(detail) => Error::Divergence {
                    epoch,
                    batch: batches,
                    detail: format!("validation: {detail}"),
                },
                other => other,
            })?,
            None => None,
        };
        if let Some(c) = val_cindex {
            if best.as_ref().is_none_or(|(b, _, _)| c > *b) {
                best = Some((c, epoch, model.clone()));
            }
        }
        logs.push(EpochLog {
            epoch,
            l1: sums[0] / n,
            ll: sums[1] / n,
            rank: sums[2] / n,
            total: sums[3] / n,
            val_cindex,
            lr,
        });
    }
    let (best_epoch, best_cindex) = match best {
        Some((c, e, m)) => {
            *model = m;
            (e, Some(c))
        }
        None => (config.epochs - 1, None),
    };
    Ok(FitReport {
        epochs: logs,
        best_epoch,
        best_cindex,
        checkpoint: None,
    })
}

/// One trained arm of a cross-validation run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvEntry {
    pub seed: u64,
    pub fold: usize,
    pub cindex: f64,
    /// C-index with oracle interventions, for models that support them.
    pub cindex_oracle: Option<f64>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CvReport {
    pub method: String,
    pub entries: Vec<CvEntry>,
}

impl CvReport {
    /// Mean and sample standard deviation of the plain C-index.
    pub fn summary(&self) -> (f64, f64) {
        math::mean_std(&self.entries.iter().map(|e| e.cindex).collect::<Vec<_>>())
    }

    pub fn oracle_summary(&self) -> Option<(f64, f64)> {
        let v: Option<Vec<f64>> = self.entries.iter().map(|e| e.cindex_oracle).collect();
        v.filter(|v| !v.is_empty()).map(|v| math::mean_std(&v))
    }
}

/// Options for [`cross_validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub seeds: Vec<u64>,
    /// Also score every arm with oracle intervention masks.
    pub with_oracle: bool,
    /// Train only the first this-many folds of each seed.
    pub fold_limit: Option<usize>,
    pub train: TrainConfig,
}

/// Trains `folds * seeds` models. For each seed, folds are drawn from that
/// seed; `build` receives the training split and the arm seed and returns a
/// fresh model (its time grid is typically built from the training split).
/// Arms with no comparable validation pair are reported as an error.
pub fn cross_validate<M, F>(cohort: &Cohort, method: &str, config: &CvConfig, mut build: F) -> Result<CvReport>
where
    M: SurvivalModel,
    F: FnMut(&Cohort, u64) -> Result<M>,
{
    let mut entries = Vec::with_capacity(config.folds * config.seeds.len());
    for &seed in &config.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let folds = stratified_folds(cohort, config.folds, &mut rng)?;
        let limit = config.fold_limit.unwrap_or(folds.len());
        for (k, fold) in folds.iter().enumerate().take(limit) {
            let train = cohort.subset(&fold.train);
            let valid = cohort.subset(&fold.valid);
            let arm_seed = seed.wrapping_mul(1000).wrapping_add(k as u64);
            let mut model = build(&train, arm_seed)?;
            let train_config = TrainConfig {
                seed: arm_seed,
                ..config.train.clone()
            };
            let report = fit(&mut model, &train, Some(&valid), &train_config)?;
            let cindex = evaluate_cindex(&model, &valid, false)?.ok_or(Error::UndefinedMetric)?;
            let cindex_oracle = if config.with_oracle {
                evaluate_cindex(&model, &valid, true)?
            } else {
                None
            };
            entries.push(CvEntry {
                seed,
                fold: k,
                cindex,
                cindex_oracle,
                best_epoch: report.best_epoch,
            });
        }
    }
    Ok(CvReport {
        method: method.to_string(),
        entries,
    })
}
