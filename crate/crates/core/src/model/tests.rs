use super::*;
use crate::losses::{hulp_objective, SurvivalTarget};
use crate::schema::ParentCategory;
use alloc::vec::Vec;

fn schema() -> ConceptSchema {
    ConceptSchema::new(vec![
        ParentCategory::new("T-stage", ["T1", "T2", "T3"]),
        ParentCategory::new("gender", ["Male", "Female"]),
    ])
    .unwrap()
}

fn small_config() -> HulpConfig {
    HulpConfig {
        concept_embed_dim: 8,
        latent_dim: Some(12),
        encoder_hidden: vec![10],
        ..HulpConfig::default()
    }
}

fn model() -> HulpModel {
    let grid = TimeGrid::from_edges(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    HulpModel::new(schema(), small_config(), grid, 6, 11).unwrap()
}

fn signals(rows: usize) -> Matrix {
    let data = (0..rows * 6).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
    Matrix::from_vec(rows, 6, data).unwrap()
}

fn run(m: &HulpModel, x: &Matrix, mode: Mode, masks: Option<&[InterventionMask]>) -> (Graph, Vec<Var>, ForwardOutput) {
    let mut g = Graph::new();
    let vars = m.params().register(&mut g);
    let xv = g.leaf(x.clone());
    let targets = vec![ConceptTarget { labels: vec![Some(1), None] }; x.rows()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = m
        .forward(&mut g, &vars, xv, mode, masks, Some(&targets), Some(&mut rng))
        .unwrap();
    (g, vars, out)
}

#[test]
fn parameter_count_is_a_function_of_schema_and_config() {
    let m = model();
    // encoder 6->10->12, alpha 5 x (12->8), p-head 5 x (8->1), beta 5 x (4->1), gamma 20->4
    let expected = (6 * 10 + 10) + (10 * 12 + 12) + 5 * (12 * 8 + 8) + 5 * (8 + 1) + 5 * (4 + 1) + (20 * 4 + 4);
    assert_eq!(m.params().scalar_count(), expected);
    assert_eq!(model().params(), m.params());
}

#[test]
fn odd_embedding_width_is_rejected() {
    let grid = TimeGrid::from_edges(vec![0.0, 1.0, 2.0]).unwrap();
    let cfg = HulpConfig {
        concept_embed_dim: 7,
        ..small_config()
    };
    assert!(matches!(HulpModel::new(schema(), cfg, grid, 6, 0), Err(Error::Config(_))));
}

#[test]
fn hazards_are_a_distribution_and_probs_are_open() {
    let m = model();
    let p = m.predict(&signals(4), None).unwrap();
    for r in 0..4 {
        let s: f64 = p.hazards.row(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(p.concept_probs.row(r).iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(p.survival.row(r).windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn forcing_present_and_absent_selects_halves_exactly() {
    let m = model();
    let x = signals(2);
    let mut mask = InterventionMask::for_schema(m.schema());
    mask.set_concept(0, ConceptForce::Present).unwrap();
    mask.set_concept(1, ConceptForce::Absent).unwrap();
    let masks = vec![mask.clone(), mask];
    let (mut g, vars, out) = run(&m, &x, Mode::Eval, Some(&masks));
    let probs = g.value(out.concept_probs).clone();
    for r in 0..2 {
        assert_eq!(probs.get(r, 0), 1.0);
        assert_eq!(probs.get(r, 1), 0.0);
    }
    let latent = out.latent;
    let c0 = m.alpha[0].forward(&mut g, &vars, latent).unwrap();
    let c1 = m.alpha[1].forward(&mut g, &vars, latent).unwrap();
    let half = m.config().final_embed_dim();
    for r in 0..2 {
        assert_eq!(g.value(out.concept_embeddings[0]).row(r), &g.value(c0).row(r)[..half]);
        assert_eq!(g.value(out.concept_embeddings[1]).row(r), &g.value(c1).row(r)[half..]);
    }
}

#[test]
fn zero_replacement_train_equals_eval_bit_for_bit() {
    let grid = TimeGrid::from_edges(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let cfg = HulpConfig {
        train_replace_prob: 0.0,
        ..small_config()
    };
    let m = HulpModel::new(schema(), cfg, grid, 6, 11).unwrap();
    let x = signals(3);
    let empty = vec![InterventionMask::for_schema(m.schema()); 3];
    let (gt, _, ot) = run(&m, &x, Mode::Train, None);
    let (ge, _, oe) = run(&m, &x, Mode::Eval, Some(&empty));
    assert_eq!(gt.value(ot.hazards), ge.value(oe.hazards));
    assert_eq!(gt.value(ot.concept_probs), ge.value(oe.concept_probs));
    assert_eq!(gt.value(ot.concept_logits), ge.value(oe.concept_logits));
}

#[test]
fn train_replacement_only_touches_observed_parents() {
    let grid = TimeGrid::from_edges(vec![0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
    let cfg = HulpConfig {
        train_replace_prob: 1.0,
        ..small_config()
    };
    let m = HulpModel::new(schema(), cfg, grid, 6, 11).unwrap();
    let (g, _, out) = run(&m, &signals(3), Mode::Train, None);
    let p = g.value(out.concept_probs);
    for r in 0..3 {
        assert_eq!(&p.row(r)[..3], &[0.0, 1.0, 0.0]);
        assert!(p.row(r)[3..].iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn all_present_leaves_negative_halves_without_gradient() {
    let m = model();
    let x = signals(3);
    let mut mask = InterventionMask::for_schema(m.schema());
    for i in 0..m.schema().n_concepts() {
        mask.set_concept(i, ConceptForce::Present).unwrap();
    }
    let masks = vec![mask; 3];
    let (mut g, vars, out) = run(&m, &x, Mode::Eval, Some(&masks));
    let targets: Vec<SurvivalTarget> = [(0.5, 1), (2.5, 0), (3.5, 1)]
        .iter()
        .map(|&(t, e)| SurvivalTarget::new(t, e, m.grid()))
        .collect();
    let ct = vec![ConceptTarget { labels: vec![Some(0), Some(1)] }; 3];
    let terms = hulp_objective(
        &mut g,
        Some(out.concept_logits),
        out.hazards,
        m.schema(),
        &ct,
        &targets,
        &m.config().loss,
    )
    .unwrap();
    g.backward(terms.total_var).unwrap();
    let half = m.config().final_embed_dim();
    for lin in &m.alpha {
        let gw = g.grad(vars[lin.weight.index()]);
        let gb = g.grad(vars[lin.bias.index()]);
        for r in 0..gw.rows() {
            assert!(gw.row(r)[half..].iter().all(|&v| v == 0.0));
            assert!(gw.row(r)[..half].iter().any(|&v| v != 0.0));
        }
        assert!(gb.row(0)[half..].iter().all(|&v| v == 0.0));
    }
    for lin in &m.p_head {
        assert!(g.grad(vars[lin.weight.index()]).as_slice().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn intervention_changes_only_its_parent_embeddings() {
    let m = model();
    let x = signals(2);
    let base = vec![InterventionMask::for_schema(m.schema()); 2];
    let forced: Vec<InterventionMask> = base
        .iter()
        .map(|b| b.clone().intervene_parent(m.schema(), "gender", "Female").unwrap())
        .collect();
    let (g0, _, o0) = run(&m, &x, Mode::Eval, Some(&base));
    let (g1, _, o1) = run(&m, &x, Mode::Eval, Some(&forced));
    for i in 0..3 {
        assert_eq!(g0.value(o0.concept_embeddings[i]), g1.value(o1.concept_embeddings[i]));
    }
    for i in 3..5 {
        assert_ne!(g0.value(o0.concept_embeddings[i]), g1.value(o1.concept_embeddings[i]));
    }
}

#[test]
fn input_contracts() {
    let m = model();
    let bad = vec![InterventionMask::empty(4); 2];
    assert!(matches!(m.predict(&signals(2), Some(&bad)), Err(Error::Schema(_))));
    let wide = Matrix::zeros(2, 7);
    assert!(matches!(m.predict(&wide, None), Err(Error::Dimension { .. })));
    let mut g = Graph::new();
    let vars = m.params().register(&mut g);
    let xv = g.leaf(signals(1));
    let t = vec![ConceptTarget { labels: vec![Some(0), None] }];
    assert!(matches!(
        m.forward(&mut g, &vars, xv, Mode::Train, None, Some(&t), None),
        Err(Error::Contract(_))
    ));
}

#[test]
fn eval_forward_is_deterministic() {
    let m = model();
    assert_eq!(m.predict(&signals(5), None).unwrap(), m.predict(&signals(5), None).unwrap());
}
