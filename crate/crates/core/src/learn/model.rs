//! Convolutional encoder and MLP classifier.

use nalgebra::DMatrix;
use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::{par, seed, Error, Result};

/// Embedding width.
pub const EMBED_DIM: usize = 64;
pub const CLASSIFIER_HIDDEN: [usize; 2] = [512, 128];
pub const N_CLASSES: usize = 2;
const CONV_CHANNELS: [usize; 3] = [16, 16, 32];

fn uniform(shape: Vec<usize>, fan_in: usize, rng: &mut seed::Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len = shape.iter().product();
    Tensor {
        shape,
        data: (0..len).map(|_| rng.gen_range(-bound..bound)).collect(),
    }
}

/// Spatial size after conv, conv, pool, conv for an `n × N` input.
pub fn encoder_feature_shape(rows: usize, cols: usize) -> Result<(usize, usize)> {
    let after = |d: usize| d.checked_sub(4).map(|d| d / 2).and_then(|d| d.checked_sub(2));
    match (after(rows), after(cols)) {
        (Some(h), Some(w)) if h >= 1 && w >= 1 => Ok((h, w)),
        _ => Err(Error::Shape(format!(
            "encoder input {rows}×{cols} too small (need at least 10×10)"
        ))),
    }
}

/// Parameters in declaration order: conv1 w/b, conv2 w/b, conv3 w/b, fc w/b.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub input_shape: (usize, usize),
    pub params: Vec<Tensor>,
}

/// Parameters in declaration order: three dense layers, weight then bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub params: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub classifier: Classifier,
}

impl Encoder {
    pub fn init(rows: usize, cols: usize, rng_seed: u64) -> Result<Self> {
        let (h, w) = encoder_feature_shape(rows, cols)?;
        let mut rng = seed::rng(rng_seed);
        let mut params = Vec::new();
        let mut cin = 1;
        for &cout in &CONV_CHANNELS {
            params.push(uniform(vec![cout, cin, 3, 3], cin * 9, &mut rng));
            params.push(uniform(vec![cout], cin * 9, &mut rng));
            cin = cout;
        }
        let flat = CONV_CHANNELS[2] * h * w;
        params.push(uniform(vec![EMBED_DIM, flat], flat, &mut rng));
        params.push(uniform(vec![EMBED_DIM], flat, &mut rng));
        Ok(Encoder {
            input_shape: (rows, cols),
            params,
        })
    }

    pub fn flat_dim(&self) -> usize {
        self.params[6].shape[1]
    }

    /// Adds the forward pass for `x: [B, 1, n, N]` and returns `z: [B, 64]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
        let shape = &tape.value(x).shape;
        if shape.len() != 4 || (shape[2], shape[3]) != self.input_shape {
            return Err(Error::Shape(format!(
                "encoder built for {:?} inputs, got {shape:?}",
                self.input_shape
            )));
        }
        let bsz = shape[0];
        let h = tape.conv2d(x, p[0], p[1])?;
        let h = tape.relu(h);
        let h = tape.conv2d(h, p[2], p[3])?;
        let h = tape.relu(h);
        let h = tape.max_pool2(h)?;
        let h = tape.conv2d(h, p[4], p[5])?;
        let h = tape.relu(h);
        let h = tape.reshape(h, vec![bsz, self.flat_dim()])?;
        tape.dense(h, p[6], p[7])
    }
}

impl Classifier {
    pub fn init(rng_seed: u64) -> Self {
        let mut rng = seed::rng(rng_seed);
        let dims = [EMBED_DIM, CLASSIFIER_HIDDEN[0], CLASSIFIER_HIDDEN[1], N_CLASSES];
        let mut params = Vec::new();
        for pair in dims.windows(2) {
            params.push(uniform(vec![pair[1], pair[0]], pair[0], &mut rng));
            params.push(uniform(vec![pair[1]], pair[0], &mut rng));
        }
        Classifier { params }
    }

    /// `z: [B, 64]` to logits `[B, 2]`.
    pub fn forward(&self, tape: &mut Tape, z: Var, p: &[Var]) -> Result<Var> {
        let h = tape.dense(z, p[0], p[1])?;
        let h = tape.gelu(h);
        let h = tape.dense(h, p[2], p[3])?;
        let h = tape.gelu(h);
        tape.dense(h, p[4], p[5])
    }
}

/// Registers parameters on the tape, trainable or frozen.
pub fn load_params(tape: &mut Tape, params: &[Tensor], trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
        .collect()
}

/// Stacks `n × N` matrices into a `[B, 1, n, N]` tensor.
pub fn batch_tensor(mats: &[&DMatrix<f64>]) -> Result<Tensor> {
    let Some(first) = mats.first() else {
        return Err(Error::InvalidInput("empty batch".into()));
    };
    let (n, m) = first.shape();
    let mut data = Vec::with_capacity(mats.len() * n * m);
    for mat in mats {
        if mat.shape() != (n, m) {
            return Err(Error::Shape(format!("batch mixes {n}×{m} and {:?} inputs", mat.shape())));
        }
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite input entry".into()));
        }
        for i in 0..n {
            data.extend(mat.row(i).iter());
        }
    }
    Tensor::new(vec![mats.len(), 1, n, m], data)
}

const INFER_CHUNK: usize = 64;

/// Embeddings for many inputs, without gradients. Chunks run in parallel.
pub fn encode(encoder: &Encoder, inputs: &[&DMatrix<f64>]) -> Result<Vec<Vec<f64>>> {
    let chunks: Vec<&[&DMatrix<f64>]> = inputs.chunks(INFER_CHUNK).collect();
    let parts = par::map(&chunks, |chunk| -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let x = tape.constant(batch_tensor(chunk)?);
        let p = load_params(&mut tape, &encoder.params, false);
        let z = encoder.forward(&mut tape, x, &p)?;
        Ok(tape.value(z).data.chunks(EMBED_DIM).map(<[f64]>::to_vec).collect())
    });
    let mut out = Vec::with_capacity(inputs.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Logits for many embeddings.
pub fn classify(classifier: &Classifier, embeddings: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    if embeddings.is_empty() {
        return Ok(Vec::new());
    }
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::new(vec![embeddings.len(), EMBED_DIM], embeddings.concat())?);
    let p = load_params(&mut tape, &classifier.params, false);
    let y = classifier.forward(&mut tape, z, &p)?;
    Ok(tape.value(y).data.chunks(2).map(|c| [c[0], c[1]]).collect())
}

impl Model {
    pub fn logits(&self, inputs: &[&DMatrix<f64>]) -> Result<Vec<[f64; 2]>> {
        classify(&self.classifier, &encode(&self.encoder, inputs)?)
    }
}
