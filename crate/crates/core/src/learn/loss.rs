//! Supervised contrastive and cross-entropy losses.

use crate::{Error, Result};

/// Supervised contrastive loss over `b` embeddings of width `d` (row-major).
///
/// `L = −Σ_i (1/|P(i)|) Σ_{p∈P(i)} log( exp(s_ip) / Σ_{a≠i} exp(s_ia) )`
/// with `s_ia = z_i·z_a/τ` and `P(i)` the other samples sharing `i`'s label.
/// Rows are used as given; normalize beforehand if required.
pub fn supcon_loss(z: &[f64], b: usize, d: usize, labels: &[u8], tau: f64) -> Result<f64> {
    supcon_with_grad(z, b, d, labels, tau).map(|(l, _)| l)
}

/// Loss and `G = ∂L/∂S`, from which `∂L/∂Z = (G + Gᵀ)Z/τ`.
pub(crate) fn supcon_with_grad(z: &[f64], b: usize, d: usize, labels: &[u8], tau: f64) -> Result<(f64, Vec<f64>)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("temperature must be positive, got {tau}")));
    }
    if z.len() != b * d || labels.len() != b {
        return Err(Error::Shape(format!(
            "{} embedding values and {} labels for a {b}×{d} batch",
            z.len(),
            labels.len()
        )));
    }
    let mut loss = 0.0;
    let mut g = vec![0.0; b * b];
    let mut s = vec![0.0; b];
    for i in 0..b {
        let zi = &z[i * d..(i + 1) * d];
        let positives = (0..b).filter(|&a| a != i && labels[a] == labels[i]).count();
        if positives == 0 {
            return Err(Error::Configuration(format!(
                "batch sample {i} has no positive (each class needs at least two entries)"
            )));
        }
        let mut max = f64::NEG_INFINITY;
        for a in 0..b {
            if a != i {
                let za = &z[a * d..(a + 1) * d];
                s[a] = zi.iter().zip(za).map(|(x, y)| x * y).sum::<f64>() / tau;
                max = max.max(s[a]);
            }
        }
        let denom: f64 = (0..b).filter(|&a| a != i).map(|a| (s[a] - max).exp()).sum();
        let log_denom = max + denom.ln();
        let inv = 1.0 / positives as f64;
        let row = &mut g[i * b..(i + 1) * b];
        for a in 0..b {
            if a == i {
                continue;
            }
            row[a] = (s[a] - log_denom).exp();
            if labels[a] == labels[i] {
                loss -= inv * (s[a] - log_denom);
                row[a] -= inv;
            }
        }
    }
    Ok((loss, g))
}

/// Softmax cross-entropy of one logit vector, log-sum-exp stabilized.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}
