use hulp_core::data::{generate_synthetic, SyntheticConfig};
use hulp_core::experiments::{compact_model, hulp_for, partial_intervention_cindex};
use hulp_core::training::{evaluate_cindex, fit, TrainConfig};

#[test]
fn partial_intervention_endpoints_match_plain_and_oracle_scores() {
    let cohort = generate_synthetic(&SyntheticConfig {
        n_patients: 120,
        noise_sigma: 4.0,
        missing_rates: vec![0.3],
        seed: 2,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mut model = hulp_for(&cohort, &compact_model(), 2).unwrap();
    let config = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    fit(&mut model, &cohort, None, &config).unwrap();

    let none = partial_intervention_cindex(&model, &cohort, 0.0, 9).unwrap();
    let all = partial_intervention_cindex(&model, &cohort, 1.0, 9).unwrap();
    assert_eq!(none, evaluate_cindex(&model, &cohort, false).unwrap());
    assert_eq!(all, evaluate_cindex(&model, &cohort, true).unwrap());
    assert_eq!(
        partial_intervention_cindex(&model, &cohort, 0.4, 9).unwrap(),
        partial_intervention_cindex(&model, &cohort, 0.4, 9).unwrap()
    );
    assert!(partial_intervention_cindex(&model, &cohort, 1.5, 9).is_err());
}
