//! Central-difference gradient checker for the tape.

use gedf_core::learn::{Classifier, Encoder, Tape, Tensor, Var};
use gedf_core::seed;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SHAPES: usize = 24;

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

pub fn random(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut seed::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn loss_value(params: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item()
}

/// Norm-wise relative error between the tape gradient and central
/// differences, worst over all parameters. With `probe = Some((k, rng))`
/// only `k` random entries of each larger parameter are perturbed.
pub fn max_rel_error(params: &[Tensor], build: &Build, mut probe: Option<(usize, &mut seed::Rng)>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).map_or_else(|| vec![0.0; params[k].len()], |g| g.data.clone());
        let entries: Vec<usize> = match probe.as_mut() {
            Some((count, rng)) if *count < params[k].len() => {
                (0..*count).map(|_| rng.gen_range(0..params[k].len())).collect()
            }
            _ => (0..params[k].len()).collect(),
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for j in entries {
            let mut shifted = params.to_vec();
            shifted[k].data[j] += STEP;
            let up = loss_value(&shifted, build);
            shifted[k].data[j] -= 2.0 * STEP;
            let down = loss_value(&shifted, build);
            let numeric = (up - down) / (2.0 * STEP);
            diff += (analytic[j] - numeric).powi(2);
            na += analytic[j].powi(2);
            nn += numeric.powi(2);
        }
        let scale = na.sqrt().max(nn.sqrt());
        if scale > 0.0 {
            worst = worst.max(diff.sqrt() / scale);
        }
    }
    worst
}

/// Contracts any tensor to a scalar with fixed random weights so every
/// output entry gets a distinct upstream gradient.
fn project(tape: &mut Tape, y: Var, rng_seed: u64) -> Var {
    let n = tape.value(y).len();
    let mut rng = seed::rng(rng_seed);
    let flat = tape.reshape(y, vec![1, n]).unwrap();
    let w = tape.constant(random(vec![1, n], -1.0, 1.0, &mut rng));
    let b = tape.constant(Tensor::zeros(vec![1]));
    tape.dense(flat, w, b).unwrap()
}

fn two_class_labels(b: usize, rng: &mut seed::Rng) -> Vec<u8> {
    let mut labels: Vec<u8> = (0..b).map(|i| u8::from(i % 2 == 1)).collect();
    for i in (1..b).rev() {
        labels.swap(i, rng.gen_range(0..=i));
    }
    labels
}

pub const OPS: [&str; 9] = [
    "conv2d",
    "relu",
    "max_pool2",
    "dense",
    "gelu",
    "l2_normalize",
    "supcon",
    "supcon_normalized",
    "cross_entropy",
];

/// Random inputs and the loss builder for one case of `op`.
fn case(op: &str, case: usize, rng: &mut seed::Rng) -> (Vec<Tensor>, Build) {
    let s = case as u64;
    match op {
        "conv2d" => {
            let (b, c, o) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3));
            let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
            let params = vec![
                random(vec![b, c, h, w], -1.0, 1.0, rng),
                random(vec![o, c, 3, 3], -1.0, 1.0, rng),
                random(vec![o], -1.0, 1.0, rng),
            ];
            (params, Box::new(move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2]).unwrap();
                project(t, y, s)
            }))
        }
        "relu" => {
            let shape = vec![rng.gen_range(1..=4), rng.gen_range(1..=8)];
            (vec![random(shape, -1.0, 1.0, rng)], Box::new(move |t, v| {
                let y = t.relu(v[0]);
                project(t, y, s)
            }))
        }
        "max_pool2" => {
            let shape = vec![rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(2..=7), rng.gen_range(2..=7)];
            (vec![random(shape, -1.0, 1.0, rng)], Box::new(move |t, v| {
                let y = t.max_pool2(v[0]).unwrap();
                project(t, y, s)
            }))
        }
        "dense" => {
            let (b, i, o) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=5));
            let params = vec![
                random(vec![b, i], -1.0, 1.0, rng),
                random(vec![o, i], -1.0, 1.0, rng),
                random(vec![o], -1.0, 1.0, rng),
            ];
            (params, Box::new(move |t, v| {
                let y = t.dense(v[0], v[1], v[2]).unwrap();
                project(t, y, s)
            }))
        }
        "gelu" => {
            let shape = vec![rng.gen_range(1..=4), rng.gen_range(1..=8)];
            (vec![random(shape, -3.0, 3.0, rng)], Box::new(move |t, v| {
                let y = t.gelu(v[0]);
                project(t, y, s)
            }))
        }
        "l2_normalize" => {
            let shape = vec![rng.gen_range(1..=4), rng.gen_range(1..=6)];
            (vec![random(shape, -1.0, 1.0, rng)], Box::new(move |t, v| {
                let y = t.l2_normalize(v[0]).unwrap();
                project(t, y, s)
            }))
        }
        "supcon" => {
            let (b, d) = (rng.gen_range(4..=10), rng.gen_range(1..=6));
            let labels = two_class_labels(b, rng);
            let tau = rng.gen_range(0.2..2.0);
            (vec![random(vec![b, d], -1.0, 1.0, rng)], Box::new(move |t, v| t.supcon(v[0], &labels, tau).unwrap()))
        }
        "supcon_normalized" => {
            let (b, d) = (rng.gen_range(4..=10), rng.gen_range(2..=6));
            let labels = two_class_labels(b, rng);
            (vec![random(vec![b, d], -1.0, 1.0, rng)], Box::new(move |t, v| {
                let z = t.l2_normalize(v[0]).unwrap();
                t.supcon(z, &labels, 0.07).unwrap()
            }))
        }
        "cross_entropy" => {
            let (b, k) = (rng.gen_range(1..=6), rng.gen_range(2..=4));
            let labels: Vec<u8> = (0..b).map(|_| rng.gen_range(0..k) as u8).collect();
            (vec![random(vec![b, k], -4.0, 4.0, rng)], Box::new(move |t, v| t.cross_entropy(v[0], &labels).unwrap()))
        }
        other => panic!("no gradient cases for `{other}`"),
    }
}

/// Checks `SHAPES` random cases of one op; reports the worst error.
pub fn check_op(op: &str) -> Result<String, String> {
    let mut rng = seed::rng(seed::stage(77, op));
    let mut worst: f64 = 0.0;
    for k in 0..SHAPES {
        let (params, build) = case(op, k, &mut rng);
        let err = max_rel_error(&params, &build, None);
        if !(err < TOL) {
            let shapes: Vec<_> = params.iter().map(|p| p.shape.clone()).collect();
            return Err(format!("{op} case {k} {shapes:?}: relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("{op}: {SHAPES} shapes, worst {worst:.1e}"))
}

/// Encoder under SupCon and encoder plus classifier under cross-entropy,
/// probing a random subset of each parameter's entries.
pub fn check_full_model() -> Result<String, String> {
    let mut rng = seed::rng(5);
    let mut worst: f64 = 0.0;
    for (k, &(rows, cols)) in [(10, 10), (11, 12), (13, 10)].iter().enumerate() {
        let enc = Encoder::init(rows, cols, 10 + k as u64).unwrap();
        let cls = Classifier::init(20 + k as u64);
        let x = random(vec![4, 1, rows, cols], -1.0, 1.0, &mut rng);
        let labels = vec![0, 1, 1, 0];

        let (e, xc, lc) = (enc.clone(), x.clone(), labels.clone());
        let contrastive: Build = Box::new(move |t, v| {
            let xv = t.constant(xc.clone());
            let z = e.forward(t, xv, v).unwrap();
            let z = t.l2_normalize(z).unwrap();
            t.supcon(z, &lc, 0.5).unwrap()
        });
        let err = max_rel_error(&enc.params, &contrastive, Some((12, &mut rng)));
        if !(err < TOL) {
            return Err(format!("encoder {rows}x{cols} under SupCon: relative error {err:e}"));
        }
        worst = worst.max(err);

        let mut params = enc.params.clone();
        params.extend(cls.params.iter().cloned());
        let (e, c) = (enc.clone(), cls.clone());
        let supervised: Build = Box::new(move |t, v| {
            let xv = t.constant(x.clone());
            let z = e.forward(t, xv, &v[..8]).unwrap();
            let logits = c.forward(t, z, &v[8..]).unwrap();
            t.cross_entropy(logits, &labels).unwrap()
        });
        let err = max_rel_error(&params, &supervised, Some((12, &mut rng)));
        if !(err < TOL) {
            return Err(format!("model {rows}x{cols} under cross-entropy: relative error {err:e}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("full model: 3 input shapes, worst {worst:.1e}"))
}
