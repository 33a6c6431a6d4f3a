//! Checkpoints: a text header (architecture shapes, training config,
//! free-form metadata) ending in `data <count>`, a newline, then every
//! parameter in declaration order as little-endian f64.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::model::{Classifier, Encoder, Model};
use super::tensor::Tensor;
use super::train::TrainConfig;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "gedf-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let enc = &self.model.encoder;
        let mut head = format!("{MAGIC} {CHECKPOINT_VERSION}\n");
        let _ = writeln!(head, "input {} {}", enc.input_shape.0, enc.input_shape.1);
        let _ = writeln!(head, "config {}", serde_json::to_string(&self.config)?);
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::InvalidInput(format!("metadata entry `{k}` is not a single-line key/value")));
            }
            let _ = writeln!(head, "meta {k} {v}");
        }
        let all: Vec<(&str, &Tensor)> = enc
            .params
            .iter()
            .map(|t| ("encoder", t))
            .chain(self.model.classifier.params.iter().map(|t| ("classifier", t)))
            .collect();
        for (part, t) in &all {
            let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
            let _ = writeln!(head, "param {part} {}", dims.join(" "));
        }
        let count: usize = all.iter().map(|(_, t)| t.len()).sum();
        let _ = writeln!(head, "data {count}");
        let mut bytes = head.into_bytes();
        for (_, t) in all {
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: String| Error::parse(0, msg);
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let end = bytes[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| corrupt("checkpoint header is not terminated".into()))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| corrupt("header is not UTF-8".into()))?;
            pos += end + 1;
            let done = line.starts_with("data ");
            lines.push(line.to_string());
            if done {
                break;
            }
        }
        let mut it = lines.iter().enumerate();
        let (_, first) = it.next().ok_or_else(|| corrupt("empty checkpoint".into()))?;
        if *first != format!("{MAGIC} {CHECKPOINT_VERSION}") {
            return Err(corrupt(format!("unsupported checkpoint header `{first}`")));
        }
        let mut input = None;
        let mut config = None;
        let mut meta = BTreeMap::new();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let mut count = 0usize;
        for (i, line) in it {
            let ln = i + 1;
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let nums = || -> Result<Vec<usize>> {
                rest.split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::parse(ln, format!("bad integer `{t}`"))))
                    .collect()
            };
            match key {
                "input" => match nums()?.as_slice() {
                    [r, c] => input = Some((*r, *c)),
                    _ => return Err(Error::parse(ln, "input takes two values")),
                },
                "config" => config = Some(serde_json::from_str::<TrainConfig>(rest)?),
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "param" => {
                    let (part, dims) = rest.split_once(' ').unwrap_or((rest, ""));
                    let dims = dims
                        .split_whitespace()
                        .map(|t| t.parse().map_err(|_| Error::parse(ln, format!("bad dimension `{t}`"))))
                        .collect::<Result<Vec<usize>>>()?;
                    shapes.push((part.to_string(), dims));
                }
                "data" => count = nums()?.first().copied().unwrap_or(0),
                _ => return Err(Error::parse(ln, format!("unknown header line `{key}`"))),
            }
        }
        let (rows, cols) = input.ok_or_else(|| corrupt("missing input shape".into()))?;
        let config = config.ok_or_else(|| corrupt("missing config".into()))?;
        let expected: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if expected != count || bytes.len() - pos != 8 * count {
            return Err(Error::DataCorruption {
                expected: format!("{} parameter values", expected),
                actual: format!("{} declared, {} bytes present", count, bytes.len() - pos),
            });
        }
        let mut values = bytes[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut encoder = Vec::new();
        let mut classifier = Vec::new();
        for (part, shape) in shapes {
            let len = shape.iter().product();
            let t = Tensor::new(shape, values.by_ref().take(len).collect())?;
            match part.as_str() {
                "encoder" => encoder.push(t),
                "classifier" => classifier.push(t),
                other => return Err(corrupt(format!("unknown parameter group `{other}`"))),
            }
        }
        let reference = Model {
            encoder: Encoder::init(rows, cols, 0)?,
            classifier: Classifier::init(0),
        };
        let same_shapes = |a: &[Tensor], b: &[Tensor]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.shape == y.shape);
        if !same_shapes(&encoder, &reference.encoder.params) || !same_shapes(&classifier, &reference.classifier.params) {
            return Err(Error::Shape("checkpoint parameters do not match the architecture".into()));
        }
        Ok(Checkpoint {
            model: Model {
                encoder: Encoder {
                    input_shape: (rows, cols),
                    params: encoder,
                },
                classifier: Classifier { params: classifier },
            },
            config,
            meta,
        })
    }
}
