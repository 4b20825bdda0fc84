//! Training objective: the concept loss that skips missing covariates, the
//! discrete-time log-likelihood and ranking terms of the prognosis loss, and
//! the weighted combinations of the three.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Axis, Graph, Matrix, Var};
use crate::data::PatientRecord;
use crate::schema::ConceptSchema;
use crate::survival::TimeGrid;
use crate::{Error, Result};

/// Ground-truth concept per parent category (`None` = missing).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptTarget {
    pub labels: Vec<Option<usize>>,
}

impl ConceptTarget {
    pub fn missing(n_parents: usize) -> Self {
        Self {
            labels: vec![None; n_parents],
        }
    }

    pub fn from_record(record: &PatientRecord, schema: &ConceptSchema) -> Result<Self> {
        let mut labels = vec![None; schema.n_parents()];
        for (parent, value) in &record.covariates {
            let (j, k) = schema.resolve(parent, value).map_err(|e| match e {
                Error::Schema(msg) => Error::Schema(format!("record '{}': {msg}", record.id)),
                other => other,
            })?;
            labels[j] = k;
        }
        Ok(Self { labels })
    }

    pub fn observed(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Hard 0/1 value of a concept slot, if its parent is observed.
    pub fn concept_value(&self, schema: &ConceptSchema, slot: usize) -> Option<f64> {
        let j = schema.parent_of(slot);
        self.labels[j].map(|k| if schema.offset(j) + k == slot { 1.0 } else { 0.0 })
    }
}

/// Observed time, event indicator and the bin holding the time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalTarget {
    pub time: f64,
    pub event: u8,
    pub bin: usize,
}

impl SurvivalTarget {
    pub fn new(time: f64, event: u8, grid: &TimeGrid) -> Self {
        Self {
            time,
            event,
            bin: grid.bin_index(time),
        }
    }
}

/// Which survival values the ranking term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RankForm {
    /// `S(T_i | w_i) - S(T_j | w_j)`: each patient at its own time.
    #[default]
    OwnTimes,
    /// `S(T_i | w_i) - S(T_i | w_j)`: both at the earlier time.
    EarlierTime,
}

/// How the likelihood and ranking sums are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Reduction {
    /// Likelihood divided by batch size, ranking by pair count.
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossConfig {
    /// Likelihood weight inside the prognosis loss.
    pub a: f64,
    /// Concept-loss weight inside the final loss.
    pub b: f64,
    pub temperature: f64,
    pub rank_form: RankForm,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 0.5,
            temperature: 0.1,
            rank_form: RankForm::OwnTimes,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_weight("a", self.a)?;
        check_weight("b", self.b)?;
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "rank temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Config(format!("loss weight {name} = {w} is outside [0, 1]")));
    }
    Ok(())
}

/// Concept loss and the number of `(patient, parent)` pairs it averaged over.
#[derive(Debug, Clone, Copy)]
pub struct ConceptLoss {
    pub loss: Var,
    pub observed: usize,
}

/// Softmax cross-entropy per parent category over its concept logits,
/// averaged over observed `(patient, parent)` pairs. Missing pairs contribute
/// neither value nor gradient; a batch with nothing observed yields an exact 0.
pub fn concept_loss(
    g: &mut Graph,
    logits: Var,
    schema: &ConceptSchema,
    targets: &[ConceptTarget],
) -> Result<ConceptLoss> {
    let (rows, cols) = g.shape(logits);
    if cols != schema.n_concepts() || rows != targets.len() {
        return Err(Error::Dimension {
            op: "concept_loss",
            left: (rows, cols),
            right: (targets.len(), schema.n_concepts()),
        });
    }
    if let Some(t) = targets.iter().find(|t| t.labels.len() != schema.n_parents()) {
        return Err(Error::Schema(format!(
            "concept target has {} parents, schema has {}",
            t.labels.len(),
            schema.n_parents()
        )));
    }
    let observed: usize = targets.iter().map(ConceptTarget::observed).sum();
    if observed == 0 {
        return Ok(ConceptLoss {
            loss: g.constant(0.0),
            observed,
        });
    }
    let mut parts = Vec::with_capacity(schema.n_parents());
    for j in 0..schema.n_parents() {
        let slots = schema.slots(j);
        let width = slots.len();
        let mut onehot = Matrix::zeros(rows, width);
        let mut any = false;
        for (r, t) in targets.iter().enumerate() {
            if let Some(k) = t.labels[j] {
                onehot.set(r, k, 1.0);
                any = true;
            }
        }
        if !any {
            continue;
        }
        let group = g.slice_cols(logits, slots.start, slots.end)?;
        let probs = g.softmax_rows(group)?;
        let logp = g.log(probs);
        let mask = g.leaf(onehot);
        let picked = g.mul(logp, mask)?;
        parts.push(g.sum(picked, None));
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    Ok(ConceptLoss {
        loss: g.scale(total, -1.0 / observed as f64),
        observed,
    })
}

/// Upper-triangular ones: `(h U)[b] = sum_{s <= b} h[s]`.
fn cumulative_operator(n: usize) -> Matrix {
    let mut u = Matrix::zeros(n, n);
    for s in 0..n {
        for t in s..n {
            u.set(s, t, 1.0);
        }
    }
    u
}

/// Survival rows `exp(-cumsum(h))` for a `batch x bins` hazard tensor.
pub fn survival_from_hazards(g: &mut Graph, hazards: Var) -> Result<Var> {
    let n = g.shape(hazards).1;
    let u = g.leaf(cumulative_operator(n));
    let cumulative = g.matmul(hazards, u)?;
    let neg = g.neg(cumulative);
    Ok(g.exp(neg))
}

fn check_targets(g: &Graph, v: Var, targets: &[SurvivalTarget], op: &str) -> Result<(usize, usize)> {
    let (rows, bins) = g.shape(v);
    if rows != targets.len() {
        return Err(Error::Contract(format!(
            "{op}: {rows} predictions for {} targets",
            targets.len()
        )));
    }
    for t in targets {
        if t.bin >= bins {
            return Err(Error::Contract(format!(
                "{op}: bin index {} outside a {bins}-bin grid",
                t.bin
            )));
        }
        if t.event > 1 {
            return Err(Error::Contract(format!("{op}: event indicator {}", t.event)));
        }
    }
    Ok((rows, bins))
}

/// `-sum_i [E_i log h_i(e_i) + (1 - E_i) log S_i(e_i)]`, log inputs clamped.
pub fn likelihood_loss(
    g: &mut Graph,
    hazards: Var,
    targets: &[SurvivalTarget],
    reduction: Reduction,
) -> Result<Var> {
    let (rows, bins) = check_targets(g, hazards, targets, "likelihood_loss")?;
    let mut event_mask = Matrix::zeros(rows, bins);
    let mut censor_mask = Matrix::zeros(rows, bins);
    for (r, t) in targets.iter().enumerate() {
        if t.event == 1 {
            event_mask.set(r, t.bin, 1.0);
        } else {
            censor_mask.set(r, t.bin, 1.0);
        }
    }
    let survival = survival_from_hazards(g, hazards)?;
    let log_h = g.log(hazards);
    let log_s = g.log(survival);
    let em = g.leaf(event_mask);
    let cm = g.leaf(censor_mask);
    let ev = g.mul(log_h, em)?;
    let ce = g.mul(log_s, cm)?;
    let ev = g.sum(ev, None);
    let ce = g.sum(ce, None);
    let ll = g.add(ev, ce)?;
    let scale = match reduction {
        Reduction::Mean => -1.0 / rows as f64,
        Reduction::Sum => -1.0,
    };
    Ok(g.scale(ll, scale))
}

/// Ordered pairs `(i, j)` with `E_i = 1` and `T_i < T_j`.
pub fn ranking_pairs(targets: &[SurvivalTarget]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, ti) in targets.iter().enumerate() {
        if ti.event != 1 {
            continue;
        }
        for (j, tj) in targets.iter().enumerate() {
            if ti.time < tj.time {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// `sum_{pairs} exp((S_i - S_j) / c)` over [`ranking_pairs`], from survival rows.
pub fn rank_loss(
    g: &mut Graph,
    survival: Var,
    targets: &[SurvivalTarget],
    temperature: f64,
    form: RankForm,
    reduction: Reduction,
) -> Result<Var> {
    let (rows, bins) = check_targets(g, survival, targets, "rank_loss")?;
    let pairs = ranking_pairs(targets);
    if pairs.is_empty() {
        return Ok(g.constant(0.0));
    }
    let mut own = Matrix::zeros(rows, bins);
    for (r, t) in targets.iter().enumerate() {
        own.set(r, t.bin, 1.0);
    }
    let own_mask = g.leaf(own);
    let at_own = g.mul(survival, own_mask)?;
    let s_own = g.sum(at_own, Some(Axis::Cols));
    let firsts: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let seconds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let s_i = g.gather_rows(s_own, &firsts)?;
    let s_j = match form {
        RankForm::OwnTimes => g.gather_rows(s_own, &seconds)?,
        RankForm::EarlierTime => {
            let rows_j = g.gather_rows(survival, &seconds)?;
            let mut at_i = Matrix::zeros(pairs.len(), bins);
            for (p, &i) in firsts.iter().enumerate() {
                at_i.set(p, targets[i].bin, 1.0);
            }
            let m = g.leaf(at_i);
            let picked = g.mul(rows_j, m)?;
            g.sum(picked, Some(Axis::Cols))
        }
    };
    let diff = g.sub(s_i, s_j)?;
    let scaled = g.scale(diff, 1.0 / temperature);
    let terms = g.exp(scaled);
    Ok(match reduction {
        Reduction::Mean => g.mean(terms, None),
        Reduction::Sum => g.sum(terms, None),
    })
}

/// `a * likelihood + (1 - a) * rank`.
pub fn prognosis_loss(g: &mut Graph, likelihood: Var, rank: Var, a: f64) -> Result<Var> {
    check_weight("a", a)?;
    convex(g, likelihood, rank, a)
}

/// `b * concept + (1 - b) * prognosis`.
pub fn final_loss(g: &mut Graph, concept: Var, prognosis: Var, b: f64) -> Result<Var> {
    check_weight("b", b)?;
    convex(g, concept, prognosis, b)
}

fn convex(g: &mut Graph, x: Var, y: Var, w: f64) -> Result<Var> {
    let wx = g.scale(x, w);
    let wy = g.scale(y, 1.0 - w);
    g.add(wx, wy)
}

/// Loss values of one batch, plus the graph node of the total.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub concept: f64,
    pub likelihood: f64,
    pub rank: f64,
    pub total: f64,
    pub observed_concepts: usize,
    pub total_var: Var,
}

/// Builds the full objective on top of a forward pass.
pub fn hulp_objective(
    g: &mut Graph,
    logits: Option<Var>,
    hazards: Var,
    schema: &ConceptSchema,
    concept_targets: &[ConceptTarget],
    survival_targets: &[SurvivalTarget],
    config: &LossConfig,
) -> Result<LossTerms> {
    config.validate()?;
    let (l1, observed) = match logits {
        Some(q) => {
            let c = concept_loss(g, q, schema, concept_targets)?;
            (c.loss, c.observed)
        }
        None => (g.constant(0.0), 0),
    };
    let ll = likelihood_loss(g, hazards, survival_targets, config.reduction)?;
    let survival = survival_from_hazards(g, hazards)?;
    let rank = rank_loss(
        g,
        survival,
        survival_targets,
        config.temperature,
        config.rank_form,
        config.reduction,
    )?;
    let l2 = prognosis_loss(g, ll, rank, config.a)?;
    let total = if logits.is_some() {
        final_loss(g, l1, l2, config.b)?
    } else {
        l2
    };
    Ok(LossTerms {
        concept: g.scalar(l1),
        likelihood: g.scalar(ll),
        rank: g.scalar(rank),
        total: g.scalar(total),
        observed_concepts: observed,
        total_var: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math;
    use crate::schema::ParentCategory;

    fn two_label_schema() -> ConceptSchema {
        ConceptSchema::new(vec![ParentCategory::new("p", ["A", "B"])]).unwrap()
    }

    fn grid2() -> TimeGrid {
        TimeGrid::from_edges(vec![0.0, 1.0, 2.0]).unwrap()
    }

    #[test]
    fn concept_loss_hand_value() {
        let schema = two_label_schema();
        let mut g = Graph::new();
        let q = g.leaf(Matrix::from_rows(&[[0.0, 0.0]]).unwrap());
        let t = [ConceptTarget { labels: vec![Some(0)] }];
        let l = concept_loss(&mut g, q, &schema, &t).unwrap();
        assert_eq!(l.observed, 1);
        assert!(math::abs(g.scalar(l.loss) - core::f64::consts::LN_2) < 1e-15);
    }

    #[test]
    fn concept_loss_all_missing_is_exact_zero() {
        let schema = ConceptSchema::lung_example();
        let mut g = Graph::new();
        let q = g.leaf(Matrix::filled(3, schema.n_concepts(), 0.3));
        let t = vec![ConceptTarget::missing(schema.n_parents()); 3];
        let l = concept_loss(&mut g, q, &schema, &t).unwrap();
        assert_eq!(l.observed, 0);
        assert_eq!(g.scalar(l.loss), 0.0);
        g.backward(l.loss).unwrap();
        assert!(g.grad(q).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn likelihood_uncensored_hand_value() {
        let delta = 1e-3;
        let mut g = Graph::new();
        let h = g.leaf(Matrix::from_rows(&[[1.0 - delta, delta]]).unwrap());
        let t = [SurvivalTarget::new(0.5, 1, &grid2())];
        let l = likelihood_loss(&mut g, h, &t, Reduction::Mean).unwrap();
        assert!(math::abs(g.scalar(l) + math::ln(1.0 - delta)) < 1e-15);
    }

    #[test]
    fn likelihood_censored_limit() {
        let eps = 1e-9;
        let mut g = Graph::new();
        let h = g.leaf(Matrix::from_rows(&[[eps, 1.0 - eps]]).unwrap());
        let t = [SurvivalTarget::new(0.5, 0, &grid2())];
        let l = likelihood_loss(&mut g, h, &t, Reduction::Mean).unwrap();
        assert!(math::abs(g.scalar(l) - eps) < 1e-15);
    }

    #[test]
    fn likelihood_rejects_bins_outside_grid() {
        let mut g = Graph::new();
        let h = g.leaf(Matrix::from_rows(&[[0.5, 0.5]]).unwrap());
        let t = [SurvivalTarget {
            time: 1.0,
            event: 1,
            bin: 2,
        }];
        assert!(matches!(
            likelihood_loss(&mut g, h, &t, Reduction::Mean),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn likelihood_prefers_mass_in_true_bin() {
        let grid = grid2();
        let t = [SurvivalTarget::new(1.5, 1, &grid)];
        let value = |h: [f64; 2]| {
            let mut g = Graph::new();
            let v = g.leaf(Matrix::from_rows(&[h]).unwrap());
            let l = likelihood_loss(&mut g, v, &t, Reduction::Mean).unwrap();
            g.scalar(l)
        };
        assert!(value([0.2, 0.8]) < value([0.6, 0.4]));
    }

    #[test]
    fn rank_loss_cases() {
        let grid = grid2();
        let t = [
            SurvivalTarget::new(0.5, 1, &grid),
            SurvivalTarget::new(1.5, 0, &grid),
        ];
        let value = |s: [[f64; 2]; 2], targets: &[SurvivalTarget]| {
            let mut g = Graph::new();
            let v = g.leaf(Matrix::from_rows(&s).unwrap());
            let l = rank_loss(&mut g, v, targets, 0.1, RankForm::OwnTimes, Reduction::Mean).unwrap();
            g.scalar(l)
        };
        let s = [[0.2, 0.1], [0.95, 0.9]];
        assert!(math::abs(value(s, &t) - math::exp(-7.0)) < 1e-12);
        let swapped = [[0.9, 0.1], [0.95, 0.2]];
        assert!(value(swapped, &t) > value(s, &t));
        assert!(math::abs(value(swapped, &t) - math::exp(7.0)) < 1e-9);

        let censored = [
            SurvivalTarget::new(0.5, 0, &grid),
            SurvivalTarget::new(1.5, 0, &grid),
        ];
        assert_eq!(value(s, &censored), 0.0);
    }

    #[test]
    fn rank_loss_earlier_time_form() {
        let grid = grid2();
        let t = [
            SurvivalTarget::new(0.5, 1, &grid),
            SurvivalTarget::new(1.5, 0, &grid),
        ];
        let mut g = Graph::new();
        let v = g.leaf(Matrix::from_rows(&[[0.2, 0.1], [0.7, 0.9]]).unwrap());
        let l = rank_loss(&mut g, v, &t, 0.1, RankForm::EarlierTime, Reduction::Sum).unwrap();
        // Second patient evaluated at the first patient's bin (0.7).
        assert!(math::abs(g.scalar(l) - math::exp(-5.0)) < 1e-12);
    }

    #[test]
    fn weights_are_validated_and_boundaries_exact() {
        let mut g = Graph::new();
        let x = g.constant(0.37);
        let y = g.constant(1.91);
        assert!(matches!(prognosis_loss(&mut g, x, y, 1.5), Err(Error::Config(_))));
        assert!(matches!(final_loss(&mut g, x, y, -0.1), Err(Error::Config(_))));
        let a1 = prognosis_loss(&mut g, x, y, 1.0).unwrap();
        assert_eq!(g.scalar(a1), 0.37);
        let a0 = prognosis_loss(&mut g, x, y, 0.0).unwrap();
        assert_eq!(g.scalar(a0), 1.91);
        let half = prognosis_loss(&mut g, x, y, 0.5).unwrap();
        assert!(math::abs(g.scalar(half) - (0.37 + 1.91) / 2.0) < 1e-15);
    }
}
