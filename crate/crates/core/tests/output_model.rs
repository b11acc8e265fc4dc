mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scom::data::{ConceptGroup, ConceptKind, ConceptSchema, Generator, Split};
use scom::masking::{augment, Mask};
use scom::model::{train_output_model, MaskAssignment, OutputModel, TrainConfig};
use scom::nn::{Matrix, Network};

fn golden_schema() -> ConceptSchema {
    ConceptSchema::new(
        vec![
            ConceptGroup::new("wing", 2, ConceptKind::Logit),
            ConceptGroup::new("beak", 1, ConceptKind::Logit),
            ConceptGroup::new("tail", 1, ConceptKind::Binary),
        ],
        3,
        None,
    )
    .unwrap()
}

fn golden_model() -> OutputModel {
    let schema = golden_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let network = Network::random(schema.augmented_dims(), &[8], 3, &mut rng);
    OutputModel::from_parts(schema, TrainConfig::default(), network).unwrap()
}

#[derive(Serialize, Deserialize)]
struct Golden {
    inputs: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

#[test]
fn full_mask_matches_stored_goldens() {
    let text = include_str!("fixtures/golden_full_mask.json");
    let golden: Golden = serde_json::from_str(text).unwrap();
    let model = golden_model();
    let full = Mask::full(3);
    for (c, expected) in golden.inputs.iter().zip(&golden.probs) {
        let p = model.predict(c, &full).unwrap();
        for (a, b) in p.probs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn full_mask_is_a_plain_network_call() {
    let model = golden_model();
    let c = [0.3, -1.2, 2.5, 1.0];
    let mut input = c.to_vec();
    input.extend([1.0, 1.0, 1.0]);
    let direct = model
        .network
        .forward(&Matrix::from_rows(&[input]).unwrap())
        .unwrap();
    let p = model.predict(&c, &Mask::full(3)).unwrap();
    assert_eq!(p.probs, direct.row(0));
}

#[test]
fn zero_network_predicts_uniform() {
    let schema = golden_schema();
    let model = OutputModel::from_parts(
        schema.clone(),
        TrainConfig::default(),
        Network::zeros(schema.augmented_dims(), &[5], 3),
    )
    .unwrap();
    let p = model.predict(&[1.0, 2.0, 3.0, 0.0], &Mask::new(vec![true, false, true])).unwrap();
    for &q in &p.probs {
        assert!((q - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((p.entropy_nats - 3f64.ln()).abs() < 1e-12);
}

fn concepts_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (
        prop::collection::vec(-5.0f64..5.0, 4),
        prop::collection::vec(-5.0f64..5.0, 4),
        prop::collection::vec(any::<bool>(), 3),
    )
}

proptest! {
    #[test]
    fn masked_out_values_never_change_predictions((a, b, bits) in concepts_strategy()) {
        let model = golden_model();
        let schema = model.schema().clone();
        let mask = Mask::new(bits);
        // b agrees with a on every selected group.
        let mut mixed = b.clone();
        for g in mask.selected() {
            for d in schema.group_range(g) {
                mixed[d] = a[d];
            }
        }
        let pa = model.predict(&a, &mask).unwrap();
        let pb = model.predict(&mixed, &mask).unwrap();
        prop_assert_eq!(pa, pb);
    }

    #[test]
    fn entropy_within_bounds_and_matches_probs((a, _b, bits) in concepts_strategy()) {
        let model = golden_model();
        let p = model.predict(&a, &Mask::new(bits)).unwrap();
        let h: f64 = p.probs.iter().filter(|&&q| q > 0.0).map(|&q| -q * q.ln()).sum();
        prop_assert!(p.entropy_nats >= 0.0 && p.entropy_nats <= 3f64.ln());
        prop_assert!((p.entropy_nats - h).abs() < 1e-9);
        prop_assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn augmented_input_equals_what_the_model_sees((a, _b, bits) in concepts_strategy()) {
        let model = golden_model();
        let mask = Mask::new(bits);
        let aug = augment(&a, &mask, model.schema()).unwrap();
        let direct = model.network.forward(&Matrix::from_rows(&[aug.values()]).unwrap()).unwrap();
        prop_assert_eq!(model.predict(&a, &mask).unwrap().probs, direct.row(0).to_vec());
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let fx = common::synthetic(Generator::XorDistractor, 1000, 0.0, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    fx.model.save(&path).unwrap();
    let loaded = OutputModel::load(&path).unwrap();
    assert_eq!(loaded, fx.model);
    assert_eq!(loaded.content_hash().unwrap(), fx.model.content_hash().unwrap());
    let n = fx.model.num_groups();
    for bits in 0..(1u32 << n) {
        let mask = Mask::new((0..n).map(|g| bits >> g & 1 == 1).collect());
        for r in 0..20 {
            let a = fx.model.predict(fx.dataset.row(r), &mask).unwrap();
            let b = loaded.predict(fx.dataset.row(r), &mask).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn training_is_deterministic() {
    let fx = common::synthetic(Generator::InformativeZero, 600, 0.0, 11);
    let config = TrainConfig {
        seed: 11,
        epochs: 20,
        ..TrainConfig::default()
    };
    let (a, log_a) = train_output_model(&fx.dataset, &config).unwrap();
    let (b, log_b) = train_output_model(&fx.dataset, &config).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(log_a, log_b);
    let (c, _) = train_output_model(&fx.dataset, &TrainConfig { seed: 12, ..config }).unwrap();
    assert_ne!(a.content_hash().unwrap(), c.content_hash().unwrap());
}

#[test]
fn informative_zero_entropy_observed_vs_masked() {
    let fx = common::synthetic(Generator::InformativeZero, 2000, 0.0, 1);
    let rows = fx.dataset.rows_in(Split::Test);
    let observed = Mask::new(vec![true, false]);
    let masked = Mask::new(vec![false, true]);
    for &r in &rows {
        let row = fx.dataset.row(r);
        assert!(fx.model.predict(row, &observed).unwrap().entropy_nats < 0.1);
        assert!(fx.model.predict(row, &masked).unwrap().entropy_nats > 0.6);
    }
}

#[test]
fn duplicated_single_copy_matches_full_set() {
    let fx = common::synthetic(Generator::Duplicated, 2000, 0.1, 2);
    let eval = |bits: Vec<bool>| {
        fx.model
            .evaluate(&fx.dataset, &MaskAssignment::Shared(Mask::new(bits)), Some(Split::Test))
            .unwrap()
            .accuracy
    };
    let full = eval(vec![true, true]);
    let c1 = eval(vec![true, false]);
    let c2 = eval(vec![false, true]);
    assert!((full - c1).abs() <= 0.01, "full {full} c1 {c1}");
    assert_eq!(c1, c2);
}

/// Bayes posterior of the label given the observed concepts, known from the
/// generator: the label is a function of the clean concepts and each
/// observation is flipped with probability `noise`.
fn bayes_posterior(generator: Generator, noise: f64, row: &[f64]) -> Vec<f64> {
    let p1 = match generator {
        Generator::InformativeZero | Generator::Duplicated => {
            if row[0] == 1.0 {
                1.0 - noise
            } else {
                noise
            }
        }
        Generator::XorDistractor => {
            let agree = (1.0 - noise).powi(2) + noise * noise;
            if (row[0] == 1.0) ^ (row[1] == 1.0) {
                agree
            } else {
                1.0 - agree
            }
        }
        Generator::CorrelatedBlocks => unreachable!(),
    };
    vec![1.0 - p1, p1]
}

#[test]
fn full_mask_posterior_is_close_to_bayes() {
    for (generator, noise) in [
        (Generator::InformativeZero, 0.1),
        (Generator::Duplicated, 0.1),
        (Generator::XorDistractor, 0.05),
    ] {
        let fx = common::synthetic(generator, 2000, noise, 5);
        let full = Mask::full(fx.model.num_groups());
        let rows = fx.dataset.rows_in(Split::Test);
        let mut kl = 0.0;
        for &r in &rows {
            let p = bayes_posterior(generator, noise, fx.dataset.row(r));
            let q = fx.model.predict(fx.dataset.row(r), &full).unwrap().probs;
            kl += p
                .iter()
                .zip(&q)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &qi)| pi * (pi / qi).ln())
                .sum::<f64>();
        }
        kl /= rows.len() as f64;
        assert!(kl < 0.05, "{generator:?}: mean KL {kl}");
    }
}

#[test]
fn incompatible_schema_is_rejected() {
    let fx = common::synthetic(Generator::XorDistractor, 1000, 0.0, 4);
    let other = common::synthetic(Generator::Duplicated, 2000, 0.1, 2);
    let err = fx
        .model
        .evaluate(&other.dataset, &MaskAssignment::Shared(Mask::full(2)), None)
        .unwrap_err();
    assert!(matches!(err, scom::Error::IncompatibleCheckpoint(_)));
}
