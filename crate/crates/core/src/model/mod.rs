//! The bottleneck network: encoder, per-concept embedding heads, the
//! probability override, classifier heads and the hazard prognosticator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Linear, Matrix, Mlp, ParamStore, Var};
use crate::losses::{ConceptTarget, LossConfig};
use crate::schema::ConceptSchema;
use crate::survival::{cumulative_survival, TimeGrid};
use crate::{Error, Result};

mod intervention;

pub use intervention::{oracle_mask_from_record, ConceptForce, InterventionMask, UNKNOWN};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct HulpConfig {
    /// `K`: width of each concept embedding before the positive/negative split.
    pub concept_embed_dim: usize,
    /// Encoder output width; `K * M` when unset.
    pub latent_dim: Option<usize>,
    /// Hidden widths of the reference encoder.
    pub encoder_hidden: Vec<usize>,
    /// Training-time probability of replacing `p` by the ground-truth label.
    pub train_replace_prob: f64,
    /// One coin per (sample, concept) when true, one per sample otherwise.
    pub replace_per_concept: bool,
    pub loss: LossConfig,
}

impl Default for HulpConfig {
    fn default() -> Self {
        Self {
            concept_embed_dim: 64,
            latent_dim: None,
            encoder_hidden: vec![256, 256],
            train_replace_prob: 0.25,
            replace_per_concept: true,
            loss: LossConfig::default(),
        }
    }
}

impl HulpConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.concept_embed_dim;
        if k == 0 || !k.is_multiple_of(2) {
            return Err(Error::Config(format!("concept_embed_dim must be even and positive, got {k}")));
        }
        if self.latent_dim == Some(0) || self.encoder_hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_replace_prob) {
            return Err(Error::Config(format!(
                "train_replace_prob {} is outside [0, 1]",
                self.train_replace_prob
            )));
        }
        self.loss.validate()
    }

    pub fn latent_dim_for(&self, schema: &ConceptSchema) -> usize {
        self.latent_dim
            .unwrap_or(self.concept_embed_dim * schema.n_concepts())
    }

    /// `K / 2`.
    pub fn final_embed_dim(&self) -> usize {
        self.concept_embed_dim / 2
    }
}

/// Signal encoder: a vector-to-vector map whose parameters live in the
/// model's [`ParamStore`].
pub trait Encoder {
    fn input_width(&self) -> usize;
    fn output_width(&self) -> usize;
    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var>;
}

/// Reference encoder: fully connected, ReLU between layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpEncoder {
    pub mlp: Mlp,
}

impl MlpEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, widths: &[usize], rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(store, "encoder", widths, rng),
        }
    }
}

impl Encoder for MlpEncoder {
    fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    fn output_width(&self) -> usize {
        self.mlp.output_width()
    }

    fn forward(&self, g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        self.mlp.forward(g, vars, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Graph nodes of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `B x M`, after any replacement or intervention.
    pub concept_probs: Var,
    /// Classifier logits `q`, `B x M`.
    pub concept_logits: Var,
    /// `B x n`, rows sum to one.
    pub hazards: Var,
    /// `c_F` per concept, each `B x K/2`.
    pub concept_embeddings: Vec<Var>,
    pub latent: Var,
}

/// Plain-value predictions for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub concept_probs: Matrix,
    pub concept_logits: Matrix,
    pub hazards: Matrix,
    /// `exp(-cumsum(hazards))` per row.
    pub survival: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HulpModel<E = MlpEncoder> {
    schema: ConceptSchema,
    config: HulpConfig,
    grid: TimeGrid,
    encoder: E,
    params: ParamStore,
    alpha: Vec<Linear>,
    p_head: Vec<Linear>,
    beta: Vec<Linear>,
    gamma: Linear,
}

impl HulpModel<MlpEncoder> {
    /// Builds a model with the reference encoder; initialization depends
    /// only on the arguments.
    pub fn new(schema: ConceptSchema, config: HulpConfig, grid: TimeGrid, signal_dim: usize, seed: u64) -> Result<Self> {
        if signal_dim == 0 {
            return Err(Error::Config("signal_dim must be positive".into()));
        }
        config.validate()?;
        let mut widths = vec![signal_dim];
        widths.extend_from_slice(&config.encoder_hidden);
        widths.push(config.latent_dim_for(&schema));
        Self::with_encoder(schema, config, grid, seed, |store, rng| {
            MlpEncoder::new(store, &widths, rng)
        })
    }

    /// Width of the signal the encoder expects.
    pub fn signal_dim(&self) -> usize {
        self.encoder.input_width()
    }
}

impl<E: Encoder> HulpModel<E> {
    /// Builds a model around a custom encoder. The closure registers the
    /// encoder's parameters in the store it is handed.
    pub fn with_encoder(
        schema: ConceptSchema,
        config: HulpConfig,
        grid: TimeGrid,
        seed: u64,
        build: impl FnOnce(&mut ParamStore, &mut ChaCha8Rng) -> E,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = build(&mut params, &mut rng);
        let latent = encoder.output_width();
        let k = config.concept_embed_dim;
        let half = config.final_embed_dim();
        let m = schema.n_concepts();
        let alpha = (0..m)
            .map(|i| Linear::new(&mut params, &format!("alpha.{i}"), latent, k, &mut rng))
            .collect();
        let p_head = (0..m)
            .map(|i| Linear::new(&mut params, &format!("p_head.{i}"), k, 1, &mut rng))
            .collect();
        let beta = (0..m)
            .map(|i| Linear::new(&mut params, &format!("beta.{i}"), half, 1, &mut rng))
            .collect();
        let gamma = Linear::new(&mut params, "gamma", m * half, grid.n_bins(), &mut rng);
        Ok(Self {
            schema,
            config,
            grid,
            encoder,
            params,
            alpha,
            p_head,
            beta,
            gamma,
        })
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn config(&self) -> &HulpConfig {
        &self.config
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Batched forward pass over `signals` (`B x d`), with parameters already
    /// registered in `g` as `vars` (see [`ParamStore::register`]).
    ///
    /// In train mode, where `targets` names a label, each concept probability
    /// is replaced by the hard label with probability `train_replace_prob`.
    /// Intervention masks are applied afterwards, in either mode.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &[Var],
        signals: Var,
        mode: Mode,
        masks: Option<&[InterventionMask]>,
        targets: Option<&[ConceptTarget]>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<ForwardOutput> {
        let (batch, width) = g.shape(signals);
        if width != self.encoder.input_width() {
            return Err(Error::Dimension {
                op: "forward",
                left: (batch, width),
                right: (batch, self.encoder.input_width()),
            });
        }
        let m = self.schema.n_concepts();
        if let Some(masks) = masks {
            if masks.len() != batch {
                return Err(Error::Contract(format!("{} masks for a batch of {batch}", masks.len())));
            }
            for mask in masks {
                mask.check_len(&self.schema)?;
            }
        }
        let overrides = self.overrides(mode, batch, masks, targets, rng)?;

        let latent = self.encoder.forward(g, vars, signals)?;
        let half = self.config.final_embed_dim();
        let k = self.config.concept_embed_dim;
        let mut probs = Vec::with_capacity(m);
        let mut logits = Vec::with_capacity(m);
        let mut embeddings = Vec::with_capacity(m);
        for (i, column) in overrides.iter().enumerate() {
            let c = self.alpha[i].forward(g, vars, latent)?;
            let p_logit = self.p_head[i].forward(g, vars, c)?;
            let mut p = g.sigmoid(p_logit);
            if let Some((keep, hard)) = column {
                let keep = g.leaf(Matrix::column_vector(keep));
                let hard = g.leaf(Matrix::column_vector(hard));
                let kept = g.mul(p, keep)?;
                p = g.add(kept, hard)?;
            }
            let pos = g.slice_cols(c, 0, half)?;
            let neg = g.slice_cols(c, half, k)?;
            let q = g.one_minus(p);
            let p_b = g.broadcast_cols(p, half)?;
            let q_b = g.broadcast_cols(q, half)?;
            let pos_w = g.mul(p_b, pos)?;
            let neg_w = g.mul(q_b, neg)?;
            let c_f = g.add(pos_w, neg_w)?;
            logits.push(self.beta[i].forward(g, vars, c_f)?);
            probs.push(p);
            embeddings.push(c_f);
        }
        let w = g.concat_cols(&embeddings)?;
        let scores = self.gamma.forward(g, vars, w)?;
        let hazards = g.softmax_rows(scores)?;
        Ok(ForwardOutput {
            concept_probs: g.concat_cols(&probs)?,
            concept_logits: g.concat_cols(&logits)?,
            hazards,
            concept_embeddings: embeddings,
            latent,
        })
    }

    /// Per concept column: `None` when no row is overridden, otherwise the
    /// `keep` and `hard` vectors of `p' = p * keep + hard`.
    #[allow(clippy::type_complexity)]
    fn overrides(
        &self,
        mode: Mode,
        batch: usize,
        masks: Option<&[InterventionMask]>,
        targets: Option<&[ConceptTarget]>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Vec<Option<(Vec<f64>, Vec<f64>)>>> {
        let m = self.schema.n_concepts();
        let mut forced: Vec<Vec<Option<f64>>> = vec![vec![None; batch]; m];
        let prob = self.config.train_replace_prob;
        if let (Mode::Train, Some(targets)) = (mode, targets) {
            if targets.len() != batch {
                return Err(Error::Contract(format!("{} concept targets for a batch of {batch}", targets.len())));
            }
            if prob > 0.0 {
                let rng = rng.ok_or_else(|| {
                    Error::Contract("train-mode replacement needs a random generator".into())
                })?;
                for (b, t) in targets.iter().enumerate() {
                    if t.labels.len() != self.schema.n_parents() {
                        return Err(Error::Schema(format!(
                            "concept target has {} parents, schema has {}",
                            t.labels.len(),
                            self.schema.n_parents()
                        )));
                    }
                    let sample_coin = !self.config.replace_per_concept && rng.random::<f64>() < prob;
                    for (i, column) in forced.iter_mut().enumerate() {
                        let coin = if self.config.replace_per_concept {
                            rng.random::<f64>() < prob
                        } else {
                            sample_coin
                        };
                        if coin {
                            column[b] = t.concept_value(&self.schema, i);
                        }
                    }
                }
            }
        }
        if let Some(masks) = masks {
            for (b, mask) in masks.iter().enumerate() {
                for (i, f) in mask.forces().iter().enumerate() {
                    if let Some(v) = f.value() {
                        forced[i][b] = Some(v);
                    }
                }
            }
        }
        Ok(forced
            .into_iter()
            .map(|column| {
                column.iter().any(Option::is_some).then(|| {
                    let keep = column.iter().map(|v| if v.is_some() { 0.0 } else { 1.0 }).collect();
                    let hard = column.iter().map(|v| v.unwrap_or(0.0)).collect();
                    (keep, hard)
                })
            })
            .collect())
    }

    /// Eval-mode predictions for a `B x d` signal batch.
    pub fn predict(&self, signals: &Matrix, masks: Option<&[InterventionMask]>) -> Result<Prediction> {
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let x = g.leaf(signals.clone());
        let out = self.forward(&mut g, &vars, x, Mode::Eval, masks, None, None)?;
        let hazards = g.value(out.hazards).clone();
        let mut survival = Matrix::zeros(hazards.rows(), hazards.cols());
        for r in 0..hazards.rows() {
            survival.row_mut(r).copy_from_slice(&cumulative_survival(hazards.row(r)));
        }
        Ok(Prediction {
            concept_probs: g.value(out.concept_probs).clone(),
            concept_logits: g.value(out.concept_logits).clone(),
            hazards,
            survival,
        })
    }
}

#[cfg(test)]
mod tests;
