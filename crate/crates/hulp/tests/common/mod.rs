#![allow(dead_code)]

use hulp_core::data::{generate_synthetic, stratified_folds, Cohort, SyntheticConfig};
use hulp_core::experiments::{compact_model, hulp_for};
use hulp_core::training::{fit, TrainConfig};
use hulp_core::HulpModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn fixture_cohort(seed: u64) -> Cohort {
    generate_synthetic(&SyntheticConfig {
        n_patients: 200,
        noise_sigma: 2.0,
        missing_rates: vec![0.3],
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

pub fn fixture_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 40,
        seed,
        ..TrainConfig::default()
    }
}

/// Small HuLP model trained on the fixture cohort, and the cohort itself.
pub fn fixture_model(seed: u64) -> (HulpModel, Cohort) {
    let cohort = fixture_cohort(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fold = stratified_folds(&cohort, 5, &mut rng).unwrap().swap_remove(0);
    let train = cohort.subset(&fold.train);
    let valid = cohort.subset(&fold.valid);
    let mut model = hulp_for(&train, &compact_model(), seed).unwrap();
    fit(&mut model, &train, Some(&valid), &fixture_train_config(seed)).unwrap();
    (model, cohort)
}
