//! End-to-end training on a constructed separable set, plus determinism.

use gedf_core::features::{GedfSample, Variant, Window};
use gedf_core::learn::{finetune, train_scl, train_sl, Encoder, Model, TrainConfig};
use gedf_core::{par, seed};
use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};

/// Two Gaussian blobs rendered as 39×10 matrices, classes alternating.
fn blobs(count: usize, rng_seed: u64) -> Vec<GedfSample> {
    labelled_blobs(count, rng_seed, |k| (k % 2) as u8)
}

fn labelled_blobs(count: usize, rng_seed: u64, label_of: impl Fn(usize) -> u8) -> Vec<GedfSample> {
    let mut rng = seed::rng(rng_seed);
    let noise = Normal::new(0.0, 0.3).unwrap();
    (0..count)
        .map(|k| {
            let label = label_of(k);
            let mean = if label == 1 { 0.4 } else { -0.4 };
            GedfSample {
                matrix: DMatrix::from_fn(39, 10, |_, _| mean + noise.sample(&mut rng)),
                label,
                topology_id: "blobs".into(),
                scenario_id: format!("b{k:04}"),
                window: Window {
                    t_start: 0.205,
                    dt: 0.005,
                    columns: 10,
                },
                variant: Variant::Gedf,
            }
        })
        .collect()
}

fn accuracy(model: &Model, data: &[GedfSample]) -> f64 {
    let inputs: Vec<&DMatrix<f64>> = data.iter().map(|s| &s.matrix).collect();
    let logits = model.logits(&inputs).unwrap();
    let hits = logits
        .iter()
        .zip(data)
        .filter(|(l, s)| u8::from(l[1] > l[0]) == s.label)
        .count();
    hits as f64 / data.len() as f64
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        epochs,
        classifier_epochs: epochs,
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn contrastive_training_separates_blobs() {
    let (train, val) = (blobs(160, 1), blobs(80, 2));
    let (model, history) = train_scl(&train, &val, &config(20)).unwrap();
    let acc = accuracy(&model, &val);
    assert!(acc >= 0.99, "validation accuracy {acc}");
    assert_eq!(history.records.len(), 40);
}

#[test]
fn supervised_training_separates_blobs() {
    let (train, val) = (blobs(160, 3), blobs(80, 4));
    let (model, _) = train_sl(&train, &val, &config(20)).unwrap();
    let acc = accuracy(&model, &val);
    assert!(acc >= 0.99, "validation accuracy {acc}");
}

#[test]
fn finetuning_learns_from_a_small_imbalanced_set_with_default_schedule() {
    // 3:1 like the stability labels; too few optimizer steps leave the
    // head predicting the majority class (75%)
    let stable_heavy = |k: usize| u8::from(!k.is_multiple_of(4));
    let (tune, test) = (labelled_blobs(40, 6, stable_heavy), labelled_blobs(200, 7, stable_heavy));
    let encoder = Encoder::init(39, 10, 8).unwrap();
    let cfg = TrainConfig {
        seed: 9,
        ..Default::default()
    };
    let (classifier, history) = finetune(&encoder, &tune, &cfg).unwrap();
    assert_eq!(history.records.len(), cfg.finetune_epochs);
    let acc = accuracy(&Model { encoder, classifier }, &test);
    assert!(acc >= 0.95, "accuracy {acc}");
}

#[test]
fn training_is_seeded_and_independent_of_worker_count() {
    let train = blobs(48, 5);
    let cfg = config(2);
    let (a, ha) = par::with_workers(1, || train_scl(&train, &train[..8], &cfg).unwrap());
    let (b, hb) = par::with_workers(3, || train_scl(&train, &train[..8], &cfg).unwrap());
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let (c, _) = par::with_workers(1, || train_sl(&train, &[], &cfg).unwrap());
    let (d, _) = par::with_workers(4, || train_sl(&train, &[], &cfg).unwrap());
    assert_eq!(c, d);
    let other = TrainConfig { seed: 18, ..cfg };
    assert_ne!(train_sl(&train, &[], &other).unwrap().0, c);
}
