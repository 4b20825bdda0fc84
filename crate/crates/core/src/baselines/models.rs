use alloc::format;
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::impute::Imputer;
use crate::autodiff::{dropout, BatchNorm, Graph, Linear, Matrix, Mlp, ParamStore, Var};
use crate::data::Cohort;
use crate::losses::{hulp_objective, LossConfig, LossTerms};
use crate::schema::ConceptSchema;
use crate::survival::{cumulative_survival, TimeGrid};
use crate::training::{signal_matrix, survival_targets, SurvivalModel, TrainConfig};
use crate::{Error, Result};

/// One-hot covariates (`B x M`). Missing cells are filled by `imputer`;
/// without one they are a contract error.
pub fn ehr_one_hot(
    schema: &ConceptSchema,
    imputer: Option<&Imputer>,
    cohort: &Cohort,
    indices: &[usize],
) -> Result<Matrix> {
    let m = schema.n_concepts();
    let mut out = Matrix::zeros(indices.len(), m);
    for (row, &i) in indices.iter().enumerate() {
        let r = &cohort.records()[i];
        let labels: Vec<Option<usize>> = schema
            .parents()
            .iter()
            .map(|p| p.label_index(r.covariate(&p.name)))
            .collect();
        let values = if labels.iter().all(Option::is_some) {
            labels.into_iter().map(|l| l.expect("checked")).collect()
        } else {
            let imputer = imputer.ok_or_else(|| {
                Error::Contract(format!("record '{}' has a missing covariate and no imputer", r.id))
            })?;
            imputer.complete(&labels, None).0
        };
        for (j, k) in values.into_iter().enumerate() {
            out.set(row, schema.offset(j) + k, 1.0);
        }
    }
    Ok(out)
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| cumulative_survival(m.row(r))).collect()
}

fn check_schema(schema: &ConceptSchema, cohort: &Cohort) -> Result<()> {
    if schema != cohort.schema() {
        return Err(Error::Schema(format!(
            "cohort schema [{}] does not match model schema [{}]",
            cohort.schema().describe(),
            schema.describe()
        )));
    }
    Ok(())
}

/// Covariates only: two `FC(64) -> ReLU -> BatchNorm -> Dropout(0.1)` blocks
/// and a softmax prognosticator, trained on the prognosis loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EhrOnlyModel {
    schema: ConceptSchema,
    grid: TimeGrid,
    params: ParamStore,
    fc: [Linear; 2],
    bn: [BatchNorm; 2],
    head: Linear,
    pub dropout: f64,
    pub imputer: Option<Imputer>,
    pub loss: LossConfig,
}

impl EhrOnlyModel {
    pub const HIDDEN: usize = 64;

    pub fn new(schema: ConceptSchema, grid: TimeGrid, imputer: Option<Imputer>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let m = schema.n_concepts();
        let h = Self::HIDDEN;
        let fc = [
            Linear::new(&mut params, "fc.0", m, h, &mut rng),
            Linear::new(&mut params, "fc.1", h, h, &mut rng),
        ];
        let bn = [BatchNorm::new(&mut params, "bn.0", h), BatchNorm::new(&mut params, "bn.1", h)];
        let head = Linear::new(&mut params, "head", h, grid.n_bins(), &mut rng);
        Self {
            schema,
            grid,
            params,
            fc,
            bn,
            head,
            dropout: 0.1,
            imputer,
            loss: LossConfig::default(),
        }
    }

    /// Batch size 96 and learning rate 1e-2; other settings from `base`.
    pub fn train_config(base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            batch_size: 96,
            learning_rate: 1e-2,
            ..base.clone()
        }
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    fn hazards(&mut self, g: &mut Graph, vars: &[Var], x: Var, rng: Option<&mut dyn RngCore>) -> Result<Var> {
        let train = rng.is_some();
        let mut rng = rng;
        let mut h = x;
        for b in 0..2 {
            h = self.fc[b].forward(g, vars, h)?;
            h = g.relu(h);
            h = self.bn[b].forward(g, vars, h, train)?;
            if let Some(r) = rng.as_deref_mut() {
                h = dropout(g, h, self.dropout, r)?;
            }
        }
        let scores = self.head.forward(g, vars, h)?;
        g.softmax_rows(scores)
    }

    /// Eval-mode hazards, `B x n`.
    pub fn predict_hazards(&self, cohort: &Cohort) -> Result<Matrix> {
        check_schema(&self.schema, cohort)?;
        let all: Vec<usize> = (0..cohort.len()).collect();
        let x = ehr_one_hot(&self.schema, self.imputer.as_ref(), cohort, &all)?;
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let xv = g.leaf(x);
        // Eval mode reads the running statistics and leaves them untouched.
        let mut frozen = self.clone();
        let h = frozen.hazards(&mut g, &vars, xv, None)?;
        Ok(g.value(h).clone())
    }
}

impl SurvivalModel for EhrOnlyModel {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn batch_objective(
        &mut self,
        g: &mut Graph,
        vars: &[Var],
        cohort: &Cohort,
        indices: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<LossTerms> {
        check_schema(&self.schema, cohort)?;
        let x = g.leaf(ehr_one_hot(&self.schema, self.imputer.as_ref(), cohort, indices)?);
        let hazards = self.hazards(g, vars, x, Some(rng))?;
        let targets = survival_targets(cohort, indices, &self.grid);
        hulp_objective(g, None, hazards, &self.schema, &[], &targets, &self.loss)
    }

    fn survival_rows(&self, cohort: &Cohort, _oracle: bool) -> Result<Vec<Vec<f64>>> {
        Ok(rows_of(&self.predict_hazards(cohort)?))
    }
}

/// Signal encoder whose latent is concatenated with one-hot covariates
/// before a softmax prognosticator. With `use_ehr == false` it is the
/// signal-only model.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    schema: ConceptSchema,
    grid: TimeGrid,
    params: ParamStore,
    encoder: Mlp,
    head: Linear,
    use_ehr: bool,
    pub imputer: Option<Imputer>,
    pub loss: LossConfig,
}

impl FusionModel {
    /// `encoder_widths` runs from the signal width to the latent width.
    pub fn new(
        schema: ConceptSchema,
        grid: TimeGrid,
        encoder_widths: &[usize],
        use_ehr: bool,
        imputer: Option<Imputer>,
        seed: u64,
    ) -> Result<Self> {
        if encoder_widths.len() < 2 || encoder_widths.contains(&0) {
            return Err(Error::Config("encoder needs at least input and output widths, all positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Mlp::new(&mut params, "encoder", encoder_widths, &mut rng);
        let fan_in = encoder.output_width() + if use_ehr { schema.n_concepts() } else { 0 };
        let head = Linear::new(&mut params, "head", fan_in, grid.n_bins(), &mut rng);
        Ok(Self {
            schema,
            grid,
            params,
            encoder,
            head,
            use_ehr,
            imputer,
            loss: LossConfig::default(),
        })
    }

    pub fn uses_ehr(&self) -> bool {
        self.use_ehr
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn forward(&self, g: &mut Graph, vars: &[Var], cohort: &Cohort, indices: &[usize]) -> Result<Var> {
        check_schema(&self.schema, cohort)?;
        if cohort.signal_dim() != self.encoder.input_width() {
            return Err(Error::Dimension {
                op: "fusion_forward",
                left: (indices.len(), cohort.signal_dim()),
                right: (indices.len(), self.encoder.input_width()),
            });
        }
        let x = g.leaf(signal_matrix(cohort, indices)?);
        let latent = self.encoder.forward(g, vars, x)?;
        let features = if self.use_ehr {
            let e = g.leaf(ehr_one_hot(&self.schema, self.imputer.as_ref(), cohort, indices)?);
            g.concat_cols(&[latent, e])?
        } else {
            latent
        };
        let scores = self.head.forward(g, vars, features)?;
        g.softmax_rows(scores)
    }

    pub fn predict_hazards(&self, cohort: &Cohort) -> Result<Matrix> {
        let mut g = Graph::new();
        let vars = self.params.register(&mut g);
        let all: Vec<usize> = (0..cohort.len()).collect();
        let h = self.forward(&mut g, &vars, cohort, &all)?;
        Ok(g.value(h).clone())
    }
}

impl SurvivalModel for FusionModel {
    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn batch_objective(
        &mut self,
        g: &mut Graph,
        vars: &[Var],
        cohort: &Cohort,
        indices: &[usize],
        _rng: &mut dyn RngCore,
    ) -> Result<LossTerms> {
        let hazards = self.forward(g, vars, cohort, indices)?;
        let targets = survival_targets(cohort, indices, &self.grid);
        hulp_objective(g, None, hazards, &self.schema, &[], &targets, &self.loss)
    }

    fn survival_rows(&self, cohort: &Cohort, _oracle: bool) -> Result<Vec<Vec<f64>>> {
        Ok(rows_of(&self.predict_hazards(cohort)?))
    }
}
