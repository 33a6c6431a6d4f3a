//! Training loops: contrastive pre-training, classifier training, the
//! cross-entropy baseline and fine-tuning.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::augment::{permute_rows, random_permutation};
use super::model::{batch_tensor, classify, encode, load_params, Classifier, Encoder, Model, EMBED_DIM};
use super::optim::Adam;
use super::tape::{Grads, Tape, Var};
use super::tensor::Tensor;
use crate::features::GedfSample;
use crate::{par, seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub temperature: f64,
    pub learning_rate: f64,
    /// Originals per batch; views double it.
    pub batch_size: usize,
    /// Encoder epochs (SCL stage 1) or joint epochs (SL baseline).
    pub epochs: usize,
    /// Classifier epochs (SCL stage 2).
    pub classifier_epochs: usize,
    /// Fine-tuning sets are small, so they get their own batch size and
    /// epoch count to keep the number of optimizer steps reasonable.
    pub finetune_batch_size: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Add a row-permuted view of every sample to each batch.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.07,
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 20,
            classifier_epochs: 20,
            finetune_batch_size: 16,
            finetune_epochs: 100,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.finetune_batch_size == 0 {
            return Err(Error::InvalidParameter("learning rate and batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    SclEncoder,
    Classifier,
    SlBaseline,
    Finetune,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::SclEncoder => "scl_encoder",
            Stage::Classifier => "classifier",
            Stage::SlBaseline => "sl_baseline",
            Stage::Finetune => "finetune",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub stage: Stage,
    pub epoch: usize,
    /// Mean loss per original-or-view sample.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        let mut s = format!("{:<12} {:>5} {:>12} {:>12} {:>9}\n", "stage", "epoch", "train_loss", "val_loss", "val_acc");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:<12} {:>5} {:>12.6} {:>12} {:>9}",
                r.stage.as_str(),
                r.epoch,
                r.train_loss,
                opt(r.val_loss),
                opt(r.val_acc)
            );
        }
        s
    }
}

fn check_data(data: &[GedfSample]) -> Result<(usize, usize)> {
    let Some(first) = data.first() else {
        return Err(Error::InvalidInput("empty training set".into()));
    };
    let shape = first.matrix.shape();
    if let Some(bad) = data.iter().find(|s| s.matrix.shape() != shape) {
        return Err(Error::Shape(format!(
            "sample {} is {:?}, expected {shape:?}",
            bad.scenario_id,
            bad.matrix.shape()
        )));
    }
    Ok(shape)
}

/// Originals of a batch followed by their views (`j(i) = i + M`), and the
/// matching labels.
fn assemble(data: &[GedfSample], idx: &[usize], augment: bool, batch_seed: u64) -> (Vec<DMatrix<f64>>, Vec<u8>) {
    let mut mats: Vec<DMatrix<f64>> = idx.iter().map(|&i| data[i].matrix.clone()).collect();
    let mut labels: Vec<u8> = idx.iter().map(|&i| data[i].label).collect();
    if augment {
        let views = par::map_range(idx.len(), |k| {
            let m = &data[idx[k]].matrix;
            let perm = random_permutation(m.nrows(), &mut seed::rng(seed::item(batch_seed, k as u64)));
            permute_rows(m, &perm)
        });
        mats.extend(views);
        labels.extend_from_within(..);
    }
    (mats, labels)
}

fn collect_grads(grads: &mut Grads, vars: &[Var], params: &[Tensor]) -> Vec<Tensor> {
    vars.iter()
        .zip(params)
        .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape.clone())))
        .collect()
}

fn finite(loss: f64, stage: Stage, epoch: usize, batch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Divergence(format!(
            "{} loss became {loss} at epoch {epoch}, batch {batch}",
            stage.as_str()
        )))
    }
}

fn accuracy(logits: &[[f64; 2]], data: &[GedfSample]) -> f64 {
    let hits = logits
        .iter()
        .zip(data)
        .filter(|(l, s)| u8::from(l[1] > l[0]) == s.label)
        .count();
    hits as f64 / data.len() as f64
}

fn mean_ce(logits: &[[f64; 2]], data: &[GedfSample]) -> f64 {
    logits
        .iter()
        .zip(data)
        .map(|(l, s)| super::loss::cross_entropy(l, s.label as usize))
        .sum::<f64>()
        / data.len() as f64
}

/// Runs `epochs` passes of shuffled mini-batches; `step` returns the summed
/// loss of one batch and the number of rows it covered.
fn run_epochs(
    n: usize,
    batch_size: usize,
    epochs: usize,
    stage: Stage,
    stage_seed: u64,
    mut step: impl FnMut(&[usize], u64) -> Result<(f64, usize)>,
    mut validate: impl FnMut() -> Result<(Option<f64>, Option<f64>)>,
) -> Result<History> {
    let mut history = History::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=epochs {
        let epoch_seed = seed::item(stage_seed, epoch as u64);
        order.shuffle(&mut seed::rng(epoch_seed));
        let (mut total, mut rows) = (0.0, 0);
        for (b, idx) in order.chunks(batch_size).enumerate() {
            let (loss, r) = step(idx, seed::item(epoch_seed, b as u64))?;
            total += finite(loss, stage, epoch, b)?;
            rows += r;
        }
        let (val_loss, val_acc) = validate()?;
        log::info!(
            "{} epoch {epoch}: train loss {:.5}, val acc {val_acc:?}",
            stage.as_str(),
            total / rows as f64
        );
        history.records.push(EpochRecord {
            stage,
            epoch,
            train_loss: total / rows as f64,
            val_loss,
            val_acc,
        });
    }
    Ok(history)
}

fn refs(data: &[GedfSample]) -> Vec<&DMatrix<f64>> {
    data.iter().map(|s| &s.matrix).collect()
}

/// Contrastive loss of the encoder on a fixed-seed pass over `data`.
fn supcon_eval(encoder: &Encoder, data: &[GedfSample], config: &TrainConfig, eval_seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut rows = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for (b, chunk) in idx.chunks(config.batch_size).enumerate() {
        let (mats, labels) = assemble(data, chunk, true, seed::item(eval_seed, b as u64));
        let z = encode(encoder, &mats.iter().collect::<Vec<_>>())?;
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::new(vec![mats.len(), EMBED_DIM], z.concat())?);
        let zn = tape.l2_normalize(zv)?;
        match tape.supcon(zn, &labels, config.temperature) {
            Ok(l) => {
                total += tape.value(l).item();
                rows += mats.len();
            }
            Err(Error::Configuration(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(if rows == 0 { f64::NAN } else { total / rows as f64 })
}

/// Stage 1 of the contrastive method: trains `encoder` in place.
pub fn train_encoder_supcon(encoder: &mut Encoder, train: &[GedfSample], val: &[GedfSample], config: &TrainConfig) -> Result<History> {
    config.validate()?;
    check_data(train)?;
    let stage_seed = seed::stage(config.seed, "scl-encoder");
    let mut adam = Adam::new(&encoder.params, config.learning_rate);
    // views are always on here: they guarantee every sample a positive
    let enc = std::cell::RefCell::new(encoder);
    run_epochs(
        train.len(),
        config.batch_size,
        config.epochs,
        Stage::SclEncoder,
        stage_seed,
        |idx, batch_seed| {
            let (mats, labels) = assemble(train, idx, true, batch_seed);
            let mut enc = enc.borrow_mut();
            let mut tape = Tape::new();
            let x = tape.constant(batch_tensor(&mats.iter().collect::<Vec<_>>())?);
            let p = load_params(&mut tape, &enc.params, true);
            let z = enc.forward(&mut tape, x, &p)?;
            let zn = tape.l2_normalize(z)?;
            let loss = tape.supcon(zn, &labels, config.temperature)?;
            let value = tape.value(loss).item();
            let mut grads = tape.backward(loss)?;
            let g = collect_grads(&mut grads, &p, &enc.params);
            adam.update(&mut enc.params, &g);
            Ok((value, mats.len()))
        },
        || {
            if val.is_empty() {
                return Ok((None, None));
            }
            let l = supcon_eval(&enc.borrow(), val, config, seed::stage(config.seed, "scl-val"))?;
            Ok((Some(l), None))
        },
    )
}

/// Trains `classifier` on embeddings of a frozen `encoder`.
fn train_classifier_frozen(
    encoder: &Encoder,
    classifier: &mut Classifier,
    train: &[GedfSample],
    val: &[GedfSample],
    config: &TrainConfig,
    stage: Stage,
) -> Result<History> {
    config.validate()?;
    check_data(train)?;
    let stage_seed = seed::stage(config.seed, stage.as_str());
    let mut adam = Adam::new(&classifier.params, config.learning_rate);
    let original_z = encode(encoder, &refs(train))?;
    let val_z = encode(encoder, &refs(val))?;
    let cls = std::cell::RefCell::new(classifier);
    let (batch_size, epochs) = match stage {
        Stage::Finetune => (config.finetune_batch_size, config.finetune_epochs),
        _ => (config.batch_size, config.classifier_epochs),
    };
    run_epochs(
        train.len(),
        batch_size,
        epochs,
        stage,
        stage_seed,
        |idx, batch_seed| {
            let mut z: Vec<Vec<f64>> = idx.iter().map(|&i| original_z[i].clone()).collect();
            let mut labels: Vec<u8> = idx.iter().map(|&i| train[i].label).collect();
            if config.augment {
                let (mats, _) = assemble(train, idx, true, batch_seed);
                z.extend(encode(encoder, &mats[idx.len()..].iter().collect::<Vec<_>>())?);
                labels.extend_from_within(..);
            }
            let mut cls = cls.borrow_mut();
            let mut tape = Tape::new();
            let zv = tape.constant(Tensor::new(vec![z.len(), EMBED_DIM], z.concat())?);
            let p = load_params(&mut tape, &cls.params, true);
            let logits = cls.forward(&mut tape, zv, &p)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = tape.value(loss).item() * labels.len() as f64;
            let mut grads = tape.backward(loss)?;
            let g = collect_grads(&mut grads, &p, &cls.params);
            adam.update(&mut cls.params, &g);
            Ok((value, labels.len()))
        },
        || {
            if val.is_empty() {
                return Ok((None, None));
            }
            let logits = classify(&cls.borrow(), &val_z)?;
            Ok((Some(mean_ce(&logits, val)), Some(accuracy(&logits, val))))
        },
    )
}

/// Two-stage contrastive training: encoder by SupCon, then the classifier
/// on the frozen encoder.
pub fn train_scl(train: &[GedfSample], val: &[GedfSample], config: &TrainConfig) -> Result<(Model, History)> {
    let (rows, cols) = check_data(train)?;
    let mut encoder = Encoder::init(rows, cols, seed::stage(config.seed, "encoder-init"))?;
    let mut classifier = Classifier::init(seed::stage(config.seed, "classifier-init"));
    let mut history = train_encoder_supcon(&mut encoder, train, val, config)?;
    let h2 = train_classifier_frozen(&encoder, &mut classifier, train, val, config, Stage::Classifier)?;
    history.records.extend(h2.records);
    Ok((Model { encoder, classifier }, history))
}

/// Single-stage cross-entropy baseline over encoder and classifier.
pub fn train_sl(train: &[GedfSample], val: &[GedfSample], config: &TrainConfig) -> Result<(Model, History)> {
    config.validate()?;
    let (rows, cols) = check_data(train)?;
    let mut model = Model {
        encoder: Encoder::init(rows, cols, seed::stage(config.seed, "encoder-init"))?,
        classifier: Classifier::init(seed::stage(config.seed, "classifier-init")),
    };
    let n_enc = model.encoder.params.len();
    let mut params: Vec<Tensor> = model.encoder.params.iter().chain(&model.classifier.params).cloned().collect();
    let mut adam = Adam::new(&params, config.learning_rate);
    let stage_seed = seed::stage(config.seed, "sl-baseline");
    let state = std::cell::RefCell::new((&mut model, &mut params));
    let history = run_epochs(
        train.len(),
        config.batch_size,
        config.epochs,
        Stage::SlBaseline,
        stage_seed,
        |idx, batch_seed| {
            let (mats, labels) = assemble(train, idx, config.augment, batch_seed);
            let mut st = state.borrow_mut();
            let (model, params) = &mut *st;
            let mut tape = Tape::new();
            let x = tape.constant(batch_tensor(&mats.iter().collect::<Vec<_>>())?);
            let p = load_params(&mut tape, params, true);
            let z = model.encoder.forward(&mut tape, x, &p[..n_enc])?;
            let logits = model.classifier.forward(&mut tape, z, &p[n_enc..])?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = tape.value(loss).item() * labels.len() as f64;
            let mut grads = tape.backward(loss)?;
            let g = collect_grads(&mut grads, &p, params);
            adam.update(params, &g);
            model.encoder.params = params[..n_enc].to_vec();
            model.classifier.params = params[n_enc..].to_vec();
            Ok((value, labels.len()))
        },
        || {
            if val.is_empty() {
                return Ok((None, None));
            }
            let st = state.borrow();
            let logits = st.0.logits(&refs(val))?;
            Ok((Some(mean_ce(&logits, val)), Some(accuracy(&logits, val))))
        },
    )?;
    Ok((model, history))
}

/// Fresh classifier on a frozen, previously trained encoder.
pub fn finetune(pretrained: &Encoder, data: &[GedfSample], config: &TrainConfig) -> Result<(Classifier, History)> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty fine-tuning set".into()));
    }
    let mut classifier = Classifier::init(seed::stage(config.seed, "finetune-init"));
    let history = train_classifier_frozen(pretrained, &mut classifier, data, &[], config, Stage::Finetune)?;
    Ok((classifier, history))
}
