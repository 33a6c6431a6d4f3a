//! Reverse-mode differentiation over a linear tape.
//!
//! Each op appends a node holding its value; [`Tape::backward`] walks the
//! nodes in reverse and accumulates gradients only where some input
//! requires them. Per-sample work runs through [`crate::par`] and every
//! cross-sample reduction is summed in sample order, so gradients do not
//! depend on the worker count.

use super::loss::{softmax, supcon_with_grad};
use super::tensor::{gemm, Tensor};
use crate::{par, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: usize, w: usize, b: usize },
    Relu { x: usize },
    MaxPool2 { x: usize, argmax: Vec<usize> },
    Reshape { x: usize },
    Dense { x: usize, w: usize, b: usize },
    Gelu { x: usize },
    L2Normalize { x: usize, norms: Vec<f64> },
    SupCon { z: usize, g: Vec<f64>, tau: f64 },
    CrossEntropy { logits: usize, probs: Vec<f64>, labels: Vec<u8> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` where nothing required one.
#[derive(Debug)]
pub struct Grads(Vec<Option<Tensor>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0[v.0].take()
    }
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let (ho, wo) = (h - 2, w - 2);
    let hw = ho * wo;
    for ci in 0..c {
        for ki in 0..3 {
            for kj in 0..3 {
                let row = ((ci * 3 + ki) * 3 + kj) * hw;
                for i in 0..ho {
                    let src = ci * h * w + (i + ki) * w + kj;
                    cols[row + i * wo..row + (i + 1) * wo].copy_from_slice(&x[src..src + wo]);
                }
            }
        }
    }
}

fn col2im(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (ho, wo) = (h - 2, w - 2);
    let hw = ho * wo;
    for ci in 0..c {
        for ki in 0..3 {
            for kj in 0..3 {
                let row = ((ci * 3 + ki) * 3 + kj) * hw;
                for i in 0..ho {
                    let dst = ci * h * w + (i + ki) * w + kj;
                    for j in 0..wo {
                        dx[dst + j] += cols[row + i * wo + j];
                    }
                }
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Data or frozen parameters.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable parameter.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Valid 3×3 convolution, unit stride. `x` is `[B, C, H, W]`, `w` is
    /// `[O, C, 3, 3]`, `b` is `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (&self.value(x).shape, &self.value(w).shape);
        if xs.len() != 4 || ws.len() != 4 || ws[2] != 3 || ws[3] != 3 || ws[1] != xs[1] {
            return Err(Error::Shape(format!("conv2d of {xs:?} with kernel {ws:?}")));
        }
        if self.value(b).shape != [ws[0]] {
            return Err(Error::Shape(format!("conv2d bias {:?} for {} outputs", self.value(b).shape, ws[0])));
        }
        let (bsz, c, h, wd, o) = (xs[0], xs[1], xs[2], xs[3], ws[0]);
        if h < 3 || wd < 3 {
            return Err(Error::Shape(format!("conv2d input {h}×{wd} smaller than the 3×3 kernel")));
        }
        let (ho, wo) = (h - 2, wd - 2);
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        let per_sample = par::map_range(bsz, |s| {
            let mut cols = vec![0.0; c * 9 * ho * wo];
            im2col(&xv[s * c * h * wd..(s + 1) * c * h * wd], c, h, wd, &mut cols);
            let mut out = vec![0.0; o * ho * wo];
            for (oi, chunk) in out.chunks_mut(ho * wo).enumerate() {
                chunk.fill(bv[oi]);
            }
            gemm(o, c * 9, ho * wo, wv, false, &cols, false, 1.0, &mut out);
            out
        });
        let value = Tensor {
            shape: vec![bsz, o, ho, wo],
            data: per_sample.concat(),
        };
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        Ok(self.push(value, Op::Conv2d { x: x.0, w: w.0, b: b.0 }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| a.max(0.0)).collect(),
        };
        let rg = self.rg(x.0);
        self.push(value, Op::Relu { x: x.0 }, rg)
    }

    /// 2×2 max-pool, stride 2, trailing odd row/column dropped. Gradient
    /// flows through the first maximal entry of each window.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xs = &self.value(x).shape;
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return Err(Error::Shape(format!("max_pool2 of {xs:?}")));
        }
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (ho, wo) = (h / 2, w / 2);
        let xv = &self.value(x).data;
        let mut data = Vec::with_capacity(bsz * c * ho * wo);
        let mut argmax = Vec::with_capacity(bsz * c * ho * wo);
        for plane in 0..bsz * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let k = base + (2 * i + di) * w + 2 * j + dj;
                        if xv[k] > xv[best] {
                            best = k;
                        }
                    }
                    data.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor {
            shape: vec![bsz, c, ho, wo],
            data,
        };
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::MaxPool2 { x: x.0, argmax }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x);
        let value = Tensor::new(shape, v.data.clone())?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Reshape { x: x.0 }, rg))
    }

    /// `y = x Wᵀ + b` for `x: [B, I]`, `W: [O, I]`, `b: [O]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (&self.value(x).shape, &self.value(w).shape, &self.value(b).shape);
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs[..] != [ws[0]] {
            return Err(Error::Shape(format!("dense of {xs:?} with weight {ws:?} and bias {bs:?}")));
        }
        let (bsz, i, o) = (xs[0], xs[1], ws[0]);
        let bv = &self.value(b).data;
        let mut data: Vec<f64> = (0..bsz).flat_map(|_| bv.iter().copied()).collect();
        gemm(bsz, i, o, &self.value(x).data, false, &self.value(w).data, true, 1.0, &mut data);
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        Ok(self.push(Tensor { shape: vec![bsz, o], data }, Op::Dense { x: x.0, w: w.0, b: b.0 }, rg))
    }

    /// Exact GELU, `x Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&a| gelu(a)).collect(),
        };
        let rg = self.rg(x.0);
        self.push(value, Op::Gelu { x: x.0 }, rg)
    }

    /// Scales each row of `[B, D]` to unit length (rows of norm below 1e-12
    /// are divided by 1e-12).
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.shape.len() != 2 {
            return Err(Error::Shape(format!("l2_normalize of {:?}", v.shape)));
        }
        let d = v.shape[1];
        let norms: Vec<f64> = v
            .data
            .chunks(d)
            .map(|r| r.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12))
            .collect();
        let data = v
            .data
            .chunks(d)
            .zip(&norms)
            .flat_map(|(r, n)| r.iter().map(move |a| a / n))
            .collect();
        let value = Tensor {
            shape: v.shape.clone(),
            data,
        };
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::L2Normalize { x: x.0, norms }, rg))
    }

    /// Summed supervised contrastive loss over the rows of `z: [B, D]`.
    pub fn supcon(&mut self, z: Var, labels: &[u8], tau: f64) -> Result<Var> {
        let v = self.value(z);
        if v.shape.len() != 2 {
            return Err(Error::Shape(format!("supcon of {:?}", v.shape)));
        }
        let (loss, g) = supcon_with_grad(&v.data, v.shape[0], v.shape[1], labels, tau)?;
        let rg = self.rg(z.0);
        Ok(self.push(Tensor::scalar(loss), Op::SupCon { z: z.0, g, tau }, rg))
    }

    /// Mean softmax cross-entropy of `logits: [B, K]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let v = self.value(logits);
        if v.shape.len() != 2 || v.shape[0] != labels.len() || v.shape[0] == 0 {
            return Err(Error::Shape(format!("cross_entropy of {:?} with {} labels", v.shape, labels.len())));
        }
        let k = v.shape[1];
        if labels.iter().any(|&l| l as usize >= k) {
            return Err(Error::InvalidInput(format!("label out of range for {k} classes")));
        }
        let probs: Vec<f64> = v.data.chunks(k).flat_map(softmax).collect();
        let loss = v
            .data
            .chunks(k)
            .zip(labels)
            .map(|(l, &y)| super::loss::cross_entropy(l, y as usize))
            .sum::<f64>()
            / labels.len() as f64;
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", self.value(loss).shape)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor {
            shape: self.value(loss).shape.clone(),
            data: vec![1.0],
        });
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else { continue };
            for (target, g) in self.node_backward(node, &gout) {
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[id] = Some(gout);
        }
        Ok(Grads(grads))
    }

    fn node_backward(&self, node: &Node, gout: &Tensor) -> Vec<(usize, Tensor)> {
        let mut out = Vec::new();
        let like = |shape: &[usize], data: Vec<f64>| Tensor {
            shape: shape.to_vec(),
            data,
        };
        match &node.op {
            Op::Leaf => {}
            Op::Relu { x } => {
                if self.rg(*x) {
                    let xv = &self.nodes[*x].value;
                    let data = xv.data.iter().zip(&gout.data).map(|(&a, &g)| if a > 0.0 { g } else { 0.0 }).collect();
                    out.push((*x, like(&xv.shape, data)));
                }
            }
            Op::Gelu { x } => {
                if self.rg(*x) {
                    let xv = &self.nodes[*x].value;
                    let data = xv.data.iter().zip(&gout.data).map(|(&a, &g)| g * gelu_grad(a)).collect();
                    out.push((*x, like(&xv.shape, data)));
                }
            }
            Op::Reshape { x } => {
                if self.rg(*x) {
                    out.push((*x, like(&self.nodes[*x].value.shape, gout.data.clone())));
                }
            }
            Op::MaxPool2 { x, argmax } => {
                if self.rg(*x) {
                    let xv = &self.nodes[*x].value;
                    let mut data = vec![0.0; xv.len()];
                    for (&k, &g) in argmax.iter().zip(&gout.data) {
                        data[k] += g;
                    }
                    out.push((*x, like(&xv.shape, data)));
                }
            }
            Op::Dense { x, w, b } => {
                let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                let (bsz, i, o) = (xv.shape[0], xv.shape[1], wv.shape[0]);
                if self.rg(*x) {
                    let mut dx = vec![0.0; bsz * i];
                    gemm(bsz, o, i, &gout.data, false, &wv.data, false, 0.0, &mut dx);
                    out.push((*x, like(&xv.shape, dx)));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; o * i];
                    gemm(o, bsz, i, &gout.data, true, &xv.data, false, 0.0, &mut dw);
                    out.push((*w, like(&wv.shape, dw)));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; o];
                    for row in gout.data.chunks(o) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    out.push((*b, like(&[o], db)));
                }
            }
            Op::Conv2d { x, w, b } => {
                let (xv, wv) = (&self.nodes[*x].value, &self.nodes[*w].value);
                let (bsz, c, h, wd, o) = (xv.shape[0], xv.shape[1], xv.shape[2], xv.shape[3], wv.shape[0]);
                let hw = (h - 2) * (wd - 2);
                let (need_x, need_w) = (self.rg(*x), self.rg(*w));
                let parts = par::map_range(bsz, |s| {
                    let go = &gout.data[s * o * hw..(s + 1) * o * hw];
                    let mut dw = Vec::new();
                    if need_w {
                        let mut cols = vec![0.0; c * 9 * hw];
                        im2col(&xv.data[s * c * h * wd..(s + 1) * c * h * wd], c, h, wd, &mut cols);
                        dw = vec![0.0; o * c * 9];
                        gemm(o, hw, c * 9, go, false, &cols, true, 0.0, &mut dw);
                    }
                    let mut dx = Vec::new();
                    if need_x {
                        let mut dcols = vec![0.0; c * 9 * hw];
                        gemm(c * 9, o, hw, &wv.data, true, go, false, 0.0, &mut dcols);
                        dx = vec![0.0; c * h * wd];
                        col2im(&dcols, c, h, wd, &mut dx);
                    }
                    (dw, dx)
                });
                if need_w {
                    let mut dw = vec![0.0; o * c * 9];
                    for (p, _) in &parts {
                        for (a, v) in dw.iter_mut().zip(p) {
                            *a += v;
                        }
                    }
                    out.push((*w, like(&wv.shape, dw)));
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; o];
                    for s in 0..bsz {
                        for (oi, d) in db.iter_mut().enumerate() {
                            let base = (s * o + oi) * hw;
                            *d += gout.data[base..base + hw].iter().sum::<f64>();
                        }
                    }
                    out.push((*b, like(&[o], db)));
                }
                if need_x {
                    let dx = parts.into_iter().flat_map(|(_, dx)| dx).collect();
                    out.push((*x, like(&xv.shape, dx)));
                }
            }
            Op::L2Normalize { x, norms } => {
                if self.rg(*x) {
                    let y = &node.value;
                    let d = y.shape[1];
                    let mut dx = Vec::with_capacity(y.len());
                    for ((yr, gr), n) in y.data.chunks(d).zip(gout.data.chunks(d)).zip(norms) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(a, g)| (g - a * dot) / n));
                    }
                    out.push((*x, like(&y.shape, dx)));
                }
            }
            Op::SupCon { z, g, tau } => {
                if self.rg(*z) {
                    let zv = &self.nodes[*z].value;
                    let (b, d) = (zv.shape[0], zv.shape[1]);
                    let mut sym = vec![0.0; b * b];
                    let scale = gout.item() / tau;
                    for i in 0..b {
                        for j in 0..b {
                            sym[i * b + j] = scale * (g[i * b + j] + g[j * b + i]);
                        }
                    }
                    let mut dz = vec![0.0; b * d];
                    gemm(b, b, d, &sym, false, &zv.data, false, 0.0, &mut dz);
                    out.push((*z, like(&zv.shape, dz)));
                }
            }
            Op::CrossEntropy { logits, probs, labels } => {
                if self.rg(*logits) {
                    let lv = &self.nodes[*logits].value;
                    let k = lv.shape[1];
                    let scale = gout.item() / labels.len() as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (r, &y) in labels.iter().enumerate() {
                        d[r * k + y as usize] -= scale;
                    }
                    out.push((*logits, like(&lv.shape, d)));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_single_channel_by_hand() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1, 3, 4], (0..12).map(f64::from).collect()).unwrap());
        let mut k = vec![0.0; 9];
        k[4] = 1.0; // centre tap picks the middle row
        let w = t.param(Tensor::new(vec![1, 1, 3, 3], k).unwrap());
        let b = t.param(Tensor::new(vec![1], vec![0.5]).unwrap());
        let y = t.conv2d(x, w, b).unwrap();
        assert_eq!(t.value(y).shape, vec![1, 1, 1, 2]);
        assert_eq!(t.value(y).data, vec![5.5, 6.5]);
    }

    #[test]
    fn pool_drops_odd_edge() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![1, 1, 3, 3], vec![1., 5., 2., 3., 4., 9., 7., 8., 6.]).unwrap());
        let y = t.max_pool2(x).unwrap();
        assert_eq!(t.value(y).data, vec![5.0]);
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.8413447460685429).abs() < 1e-15);
        assert!((gelu(-1.0) + 0.15865525393145707).abs() < 1e-15);
    }
}
