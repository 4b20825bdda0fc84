//! Synthetic cohorts with known concepts, hazards and censoring.
//!
//! Signals are a fixed linear mix of the concept one-hots plus Gaussian
//! noise, so the "image" contains the concepts by construction. Event times
//! follow a discrete proportional-hazards model on a regular grid; censoring
//! is independent of the covariates.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Cohort, PatientRecord, Provenance};
use crate::math;
use crate::schema::{ConceptSchema, ParentCategory, MISSING};
use crate::survival::{hazards_to_survival, SurvivalCurve, TimeGrid};
use crate::{Error, Result};

/// A parent category of the generator: labels, their prior and their
/// additive log-hazard effects.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticParent {
    pub name: String,
    pub labels: Vec<String>,
    pub prior: Vec<f64>,
    pub log_hazard: Vec<f64>,
    /// Loading of each label on the shared severity factor.
    pub severity: Vec<f64>,
}

impl SyntheticParent {
    pub fn new(name: &str, labels: &[&str], prior: &[f64], log_hazard: &[f64], severity: &[f64]) -> Self {
        Self {
            name: name.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            prior: prior.to_vec(),
            log_hazard: log_hazard.to_vec(),
            severity: severity.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub signal_dim: usize,
    pub parents: Vec<SyntheticParent>,
    /// Seed of the concept-to-signal mixing matrix, independent of `seed` so
    /// cohorts drawn with different seeds share one "scanner".
    pub mixing_seed: u64,
    /// Strength of the shared severity factor that correlates the parents;
    /// 0 draws them independently.
    pub concept_correlation: f64,
    /// Noise standard deviation added to every signal entry.
    pub noise_sigma: f64,
    /// Per-bin baseline rates of the generator's time grid.
    pub baseline_hazard: Vec<f64>,
    /// Width of one generator bin (months).
    pub bin_width: f64,
    /// Target fraction of censored patients.
    pub censoring_rate: f64,
    /// Per-parent probability of replacing a covariate with `"X"`; a single
    /// entry applies to every parent.
    pub missing_rates: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            signal_dim: 32,
            parents: vec![
                SyntheticParent::new("T-stage", &["T1", "T2", "T3", "T4"], &[0.3, 0.3, 0.2, 0.2], &[0.0, 0.6, 1.2, 1.8], &[-1.0, -0.3, 0.3, 1.0]),
                SyntheticParent::new("N-stage", &["N0", "N1", "N2", "N3"], &[0.35, 0.25, 0.25, 0.15], &[0.0, 0.4, 0.8, 1.2], &[-1.0, -0.3, 0.3, 1.0]),
                SyntheticParent::new("M-stage", &["M0", "M1"], &[0.7, 0.3], &[0.0, 1.2], &[-0.5, 0.5]),
                SyntheticParent::new("gender", &["Male", "Female"], &[0.6, 0.4], &[0.0, -0.2], &[0.0, 0.0]),
                SyntheticParent::new("smoking", &["Never", "Ex-smoker", "Smoker"], &[0.3, 0.4, 0.3], &[0.0, 0.2, 0.4], &[-0.3, 0.0, 0.3]),
            ],
            mixing_seed: 17,
            concept_correlation: 1.5,
            noise_sigma: 1.0,
            baseline_hazard: vec![0.03; 12],
            bin_width: 6.0,
            censoring_rate: 0.5,
            missing_rates: vec![0.0],
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn schema(&self) -> Result<ConceptSchema> {
        ConceptSchema::new(
            self.parents
                .iter()
                .map(|p| ParentCategory::new(p.name.clone(), p.labels.iter().cloned()))
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if self.n_patients == 0 || self.signal_dim == 0 {
            return cfg("n_patients and signal_dim must be positive".into());
        }
        self.schema().map_err(|e| Error::Config(format!("{e}")))?;
        for p in &self.parents {
            let n = p.labels.len();
            if p.prior.len() != n || p.log_hazard.len() != n || p.severity.len() != n {
                return cfg(format!("parent '{}': prior/log_hazard/severity length != label count", p.name));
            }
            if p.prior.iter().any(|v| !(*v >= 0.0)) || !(p.prior.iter().sum::<f64>() > 0.0) {
                return cfg(format!("parent '{}': prior must be non-negative with positive mass", p.name));
            }
            if p.log_hazard.iter().chain(&p.severity).any(|v| !v.is_finite()) {
                return cfg(format!("parent '{}': non-finite log-hazard or severity", p.name));
            }
        }
        if !self.concept_correlation.is_finite() {
            return cfg("concept_correlation must be finite".into());
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return cfg(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        if self.baseline_hazard.is_empty() || self.baseline_hazard.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return cfg("baseline hazard must be a non-empty list of positive rates".into());
        }
        if !(self.bin_width > 0.0) {
            return cfg(format!("bin width {} must be positive", self.bin_width));
        }
        if !(0.0..1.0).contains(&self.censoring_rate) {
            return cfg(format!(
                "censoring rate {} is infeasible; it must lie in [0, 1)",
                self.censoring_rate
            ));
        }
        if self.missing_rates.len() != 1 && self.missing_rates.len() != self.parents.len() {
            return cfg(format!(
                "missing_rates has {} entries; expected 1 or {}",
                self.missing_rates.len(),
                self.parents.len()
            ));
        }
        if self.missing_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return cfg("missingness rates must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn missing_rate(&self, parent: usize) -> f64 {
        if self.missing_rates.len() == 1 {
            self.missing_rates[0]
        } else {
            self.missing_rates[parent]
        }
    }

    /// The generator's regular time grid.
    pub fn true_grid(&self) -> TimeGrid {
        let edges = (0..=self.baseline_hazard.len())
            .map(|b| b as f64 * self.bin_width)
            .collect();
        TimeGrid::from_edges(edges).expect("regular grid")
    }

    /// `signal_dim x M` mixing matrix, row-major.
    pub fn mixing_matrix(&self) -> Vec<f64> {
        let m: usize = self.parents.iter().map(|p| p.labels.len()).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(self.mixing_seed);
        (0..self.signal_dim * m)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect()
    }
}

/// Generator ground truth, aligned with the cohort's records.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// True label index per parent (before any missingness).
    pub concepts: Vec<Vec<usize>>,
    /// True per-bin rates on [`SyntheticConfig::true_grid`].
    pub rates: Vec<Vec<f64>>,
    pub grid: TimeGrid,
    /// Probability that censoring was drawn at all (calibrated).
    pub censor_probability: f64,
}

impl SyntheticTruth {
    pub fn subset(&self, indices: &[usize]) -> SyntheticTruth {
        SyntheticTruth {
            concepts: indices.iter().map(|&i| self.concepts[i].clone()).collect(),
            rates: indices.iter().map(|&i| self.rates[i].clone()).collect(),
            grid: self.grid.clone(),
            censor_probability: self.censor_probability,
        }
    }

    /// True survival curves (`exp(-cumulative rate)` on the generator grid).
    pub fn survival_curves(&self) -> Vec<SurvivalCurve> {
        self.rates
            .iter()
            .map(|r| hazards_to_survival(r, &self.grid).expect("positive rates"))
            .collect()
    }

    /// Per-bin event probabilities `h_b = 1 - exp(-rate_b)`.
    pub fn event_probabilities(&self, patient: usize) -> Vec<f64> {
        self.rates[patient].iter().map(|r| 1.0 - math::exp(-r)).collect()
    }

    /// Probability mass of the event bin (last entry: no event within the grid).
    pub fn event_bin_pmf(&self, patient: usize) -> Vec<f64> {
        let h = self.event_probabilities(patient);
        let mut alive = 1.0;
        let mut pmf = Vec::with_capacity(h.len() + 1);
        for hb in h {
            pmf.push(alive * hb);
            alive *= 1.0 - hb;
        }
        pmf.push(alive);
        pmf
    }
}

fn sample_categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Draws a synthetic cohort. Identical configs give bit-identical cohorts.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Cohort> {
    config.validate()?;
    let schema = config.schema()?;
    let m = schema.n_concepts();
    let n_bins = config.baseline_hazard.len();
    let mixing = config.mixing_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut concepts = Vec::with_capacity(config.n_patients);
    let mut rates = Vec::with_capacity(config.n_patients);
    let mut signals = Vec::with_capacity(config.n_patients);
    let mut event_bins = Vec::with_capacity(config.n_patients);
    for _ in 0..config.n_patients {
        let severity: f64 = StandardNormal.sample(&mut rng);
        let labels: Vec<usize> = config
            .parents
            .iter()
            .map(|p| {
                let weights: Vec<f64> = p
                    .prior
                    .iter()
                    .zip(&p.severity)
                    .map(|(w, s)| w * math::exp(config.concept_correlation * severity * s))
                    .collect();
                sample_categorical(&weights, &mut rng)
            })
            .collect();
        let mut onehot = vec![0.0; m];
        let mut risk = 0.0;
        for (j, &k) in labels.iter().enumerate() {
            onehot[schema.offset(j) + k] = 1.0;
            risk += config.parents[j].log_hazard[k];
        }
        let signal: Vec<f64> = (0..config.signal_dim)
            .map(|d| {
                let mixed: f64 = mixing[d * m..(d + 1) * m]
                    .iter()
                    .zip(&onehot)
                    .map(|(a, x)| a * x)
                    .sum();
                let noise: f64 = StandardNormal.sample(&mut rng);
                mixed + config.noise_sigma * noise
            })
            .collect();
        let scale = math::exp(risk);
        let patient_rates: Vec<f64> = config.baseline_hazard.iter().map(|b| b * scale).collect();
        let event_bin = patient_rates
            .iter()
            .position(|r| rng.random::<f64>() < 1.0 - math::exp(-r));
        concepts.push(labels);
        rates.push(patient_rates);
        signals.push(signal);
        event_bins.push(event_bin);
    }

    let mut truth = SyntheticTruth {
        concepts,
        rates,
        grid: config.true_grid(),
        censor_probability: 0.0,
    };
    // Expected censored fraction is `no_event + pi * sum_b pmf(b) * b / n`, linear in pi.
    let (mut no_event, mut slope) = (0.0, 0.0);
    for i in 0..config.n_patients {
        let pmf = truth.event_bin_pmf(i);
        no_event += pmf[n_bins];
        slope += pmf[..n_bins]
            .iter()
            .enumerate()
            .map(|(b, p)| p * b as f64 / n_bins as f64)
            .sum::<f64>();
    }
    let n = config.n_patients as f64;
    let pi = if slope > 0.0 {
        ((config.censoring_rate * n - no_event) / slope).clamp(0.0, 1.0)
    } else {
        0.0
    };
    truth.censor_probability = pi;

    let mut records = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let censor_bin = (rng.random::<f64>() < pi).then(|| rng.random_range(0..n_bins));
        let (bin, event) = match (event_bins[i], censor_bin) {
            (Some(e), Some(c)) if c < e => (c, 0),
            (Some(e), _) => (e, 1),
            (None, Some(c)) => (c, 0),
            (None, None) => (n_bins - 1, 0),
        };
        let jitter = rng.random_range(-0.25..0.25);
        let time = (bin as f64 + 0.5 + jitter) * config.bin_width;
        let mut covariates = BTreeMap::new();
        for (j, parent) in config.parents.iter().enumerate() {
            let value = if rng.random::<f64>() < config.missing_rate(j) {
                MISSING.to_string()
            } else {
                parent.labels[truth.concepts[i][j]].clone()
            };
            covariates.insert(parent.name.clone(), value);
        }
        records.push(PatientRecord {
            id: format!("P{i:05}"),
            covariates,
            time,
            event,
            signal: core::mem::take(&mut signals[i]),
        });
    }
    Cohort::new(
        schema,
        records,
        Provenance::Synthetic(Box::new((config.clone(), truth))),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            n_patients: 200,
            seed,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let a = generate_synthetic(&small(5)).unwrap();
        let b = generate_synthetic(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(6)).unwrap();
        assert_ne!(a.records(), c.records());
    }

    #[test]
    fn full_missingness_blanks_every_covariate() {
        let cfg = SyntheticConfig {
            missing_rates: vec![1.0],
            ..small(1)
        };
        let cohort = generate_synthetic(&cfg).unwrap();
        assert_eq!(cohort.missing_fraction(), 1.0);
        for r in cohort.records() {
            let mask = crate::model::oracle_mask_from_record(r, cohort.schema()).unwrap();
            assert!(mask.is_unset());
        }
    }

    #[test]
    fn infeasible_censoring_is_config_error() {
        let cfg = SyntheticConfig {
            censoring_rate: 1.0,
            ..small(1)
        };
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn censoring_rate_lands_near_target() {
        let cfg = SyntheticConfig {
            n_patients: 4000,
            censoring_rate: 0.4,
            ..SyntheticConfig::default()
        };
        let cohort = generate_synthetic(&cfg).unwrap();
        let censored = cohort.events().iter().filter(|&&e| e == 0).count() as f64 / 4000.0;
        assert!((censored - 0.4).abs() < 0.03, "{censored}");
    }

    #[test]
    fn noiseless_signal_is_the_mixed_one_hot() {
        let cfg = SyntheticConfig {
            noise_sigma: 0.0,
            ..small(2)
        };
        let cohort = generate_synthetic(&cfg).unwrap();
        let truth = cohort.truth().unwrap();
        let mixing = cfg.mixing_matrix();
        let schema = cohort.schema();
        let m = schema.n_concepts();
        let r = &cohort.records()[3];
        for d in 0..cfg.signal_dim {
            let expected: f64 = truth.concepts[3]
                .iter()
                .enumerate()
                .map(|(j, &k)| mixing[d * m + schema.offset(j) + k])
                .sum();
            assert!((r.signal[d] - expected).abs() < 1e-12);
        }
    }
}
