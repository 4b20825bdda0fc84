use hulp_core::baselines::{impute_knn, impute_mode};
use hulp_core::data::{generate_synthetic, inject_missingness, stratified_folds, Cohort, SyntheticConfig};
use hulp_core::model::{ConceptForce, InterventionMask, UNKNOWN};
use hulp_core::survival::{antolini_cindex, cumulative_survival, hazards_to_survival, SurvivalCurve, TimeGrid};
use hulp_core::training::lr_schedule;
use hulp_core::{ConceptSchema, Graph, Matrix, MISSING};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cohort(seed: u64, n: usize, rate: f64) -> Cohort {
    let complete = generate_synthetic(&SyntheticConfig {
        n_patients: n,
        signal_dim: 4,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap();
    inject_missingness(&complete, rate, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x55)).unwrap()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let v = g.leaf(Matrix::row_vector(logits));
    let h = g.softmax_rows(v).unwrap();
    g.value(h).as_slice().to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn survival_is_a_non_increasing_probability(logits in prop::collection::vec(-30.0f64..30.0, 1..40)) {
        let h = softmax(&logits);
        let s = cumulative_survival(&h);
        prop_assert!(s.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(s.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn imputers_only_fill_missing_cells(seed in 0u64..1000, rate in 0.0f64..0.8, k in 1usize..4) {
        let c = cohort(seed, 30, rate);
        for imputed in [impute_mode(&c), impute_knn(&c, k)] {
            let Ok(imputed) = imputed else { continue };
            for (before, after) in c.records().iter().zip(imputed.cohort.records()) {
                for (parent, value) in &before.covariates {
                    let filled = after.covariate(parent);
                    prop_assert_ne!(filled, MISSING);
                    if value != MISSING {
                        prop_assert_eq!(filled, value.as_str());
                    }
                }
            }
        }
    }

    #[test]
    fn imputation_is_deterministic(seed in 0u64..1000, rate in 0.05f64..0.6) {
        let c = cohort(seed, 25, rate);
        if let (Ok(a), Ok(b)) = (impute_knn(&c, 2), impute_knn(&c, 2)) {
            prop_assert_eq!(a.cohort, b.cohort);
        }
    }

    #[test]
    fn masking_only_removes_values(seed in 0u64..1000, rate in 0.0f64..1.0) {
        let complete = cohort(seed, 20, 0.0);
        let masked = inject_missingness(&complete, rate, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (a, b) in complete.records().iter().zip(masked.records()) {
            prop_assert_eq!(a.time, b.time);
            prop_assert_eq!(&a.signal, &b.signal);
            for (parent, value) in &a.covariates {
                let v = b.covariate(parent);
                prop_assert!(v == value || v == MISSING);
            }
        }
    }

    #[test]
    fn folds_partition_the_cohort(seed in 0u64..1000, k in 2usize..6) {
        let c = cohort(seed, 60, 0.0);
        let Ok(folds) = stratified_folds(&c, k, &mut ChaCha8Rng::seed_from_u64(seed)) else { return Ok(()) };
        let mut seen = vec![0usize; c.len()];
        for f in &folds {
            for &i in &f.valid {
                seen[i] += 1;
            }
            prop_assert_eq!(f.train.len() + f.valid.len(), c.len());
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn cindex_is_invariant_under_monotone_transforms(seed in 0u64..1000, power in 1.5f64..5.0) {
        let grid = TimeGrid::from_edges(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let mut curves = Vec::new();
        let mut times = Vec::new();
        let mut events = Vec::new();
        for _ in 0..25 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            curves.push(hazards_to_survival(&softmax(&logits), &grid).unwrap());
            times.push(rng.random_range(0.0..4.0));
            events.push(rng.random_bool(0.5) as u8);
        }
        let transformed: Vec<SurvivalCurve> = curves
            .iter()
            .map(|c| SurvivalCurve { survival: c.survival.iter().map(|s| s.powf(power)).collect(), ..c.clone() })
            .collect();
        let a = antolini_cindex(&curves, &times, &events).ok();
        let b = antolini_cindex(&transformed, &times, &events).ok();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn parent_interventions_are_one_hot(parent in 0usize..5, label in 0usize..4, unset in any::<bool>()) {
        let schema = ConceptSchema::lung_example();
        let p = &schema.parents()[parent];
        let choice = if unset { UNKNOWN } else { p.labels[label % p.labels.len()].as_str() };
        let mask = InterventionMask::for_schema(&schema).intervene_parent(&schema, &p.name, choice).unwrap();
        let group: Vec<ConceptForce> = schema.slots(parent).map(|s| mask.forces()[s]).collect();
        if unset {
            prop_assert!(mask.is_unset());
        } else {
            prop_assert_eq!(group.iter().filter(|f| **f == ConceptForce::Present).count(), 1);
            prop_assert_eq!(group.iter().filter(|f| **f == ConceptForce::Absent).count(), group.len() - 1);
            let others = (0..schema.n_concepts()).filter(|s| !schema.slots(parent).contains(s));
            for s in others {
                prop_assert_eq!(mask.forces()[s], ConceptForce::Unset);
            }
        }
    }

    #[test]
    fn learning_rate_stays_in_range(epochs in 2usize..200, warmup in 0usize..20, epoch in 0usize..200) {
        let lr = lr_schedule(epoch.min(epochs - 1), epochs, warmup.min(epochs - 1), 0.01);
        prop_assert!((0.0..=0.01).contains(&lr));
    }
}
