//! AUC against pairwise counting, and the confusion-matrix worked example.

use gedf_core::eval::{auc, confusion_metrics, roc_auc_trapezoid};
use gedf_core::seed;
use rand::Rng;

/// Fraction of (positive, negative) pairs ranked correctly, ties one half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Score sets of 2 to 300 samples, both classes present; every other set
/// is quantized coarsely so ties are common.
pub fn random_score_set(rng: &mut seed::Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(2..=300);
    let coarse = rng.gen_bool(0.5);
    let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.6))).collect();
    labels[0] = 0;
    labels[1] = 1;
    let scores = (0..n)
        .map(|_| {
            let s: f64 = rng.gen();
            if coarse {
                (s * 8.0).floor() / 8.0
            } else {
                s
            }
        })
        .collect();
    (scores, labels)
}

/// Worst disagreement of rank-based and trapezoid AUC with the pairwise
/// oracle over 200 score sets.
pub fn auc_agreement(master: u64) -> Result<String, String> {
    let mut rng = seed::rng(seed::stage(master, "auc"));
    let (mut rank_err, mut trap_err) = (0.0f64, 0.0f64);
    for k in 0..200 {
        let (scores, labels) = random_score_set(&mut rng);
        let want = pairwise_auc(&scores, &labels);
        let got = auc(&scores, &labels).ok_or(format!("set {k}: AUC undefined"))?;
        let trap = roc_auc_trapezoid(&scores, &labels).ok_or(format!("set {k}: trapezoid undefined"))?;
        rank_err = rank_err.max((got - want).abs());
        trap_err = trap_err.max((trap - want).abs());
    }
    let msg = format!("200 score sets, worst |rank - pairwise| {rank_err:.1e}, |trapezoid - pairwise| {trap_err:.1e}");
    if rank_err <= 1e-12 && trap_err <= 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// TP=3, TN=1, FP=1, FN=1 and the small AUC examples.
pub fn worked_confusion() -> Result<String, String> {
    let labels = [1, 1, 1, 1, 0, 0];
    let predictions = [1, 1, 1, 0, 1, 0];
    let r = confusion_metrics(&predictions, &labels).map_err(|e| e.to_string())?;
    let close = |v: Option<f64>, want: f64| v.is_some_and(|v| (v - want).abs() < 1e-12);
    if (r.tp, r.tn, r.fp, r.fn_) != (3, 1, 1, 1)
        || (r.acc - 4.0 / 6.0).abs() > 1e-12
        || !close(r.precision, 0.75)
        || !close(r.recall, 0.75)
        || !close(r.f1, 0.75)
    {
        return Err(format!("confusion example gave {r:?}"));
    }
    let degenerate = confusion_metrics(&[1, 1], &[0, 0]).map_err(|e| e.to_string())?;
    // no positive labels: recall has a zero denominator, precision is 0/2
    if degenerate.recall.is_some() || degenerate.f1.is_some() || degenerate.precision != Some(0.0) || degenerate.acc != 0.0 {
        return Err(format!("all-wrong positives gave {degenerate:?}"));
    }
    let s = [0.9, 0.8, 0.4, 0.3];
    let cases = [(auc(&s, &[1, 1, 0, 0]), 1.0), (auc(&s, &[1, 0, 1, 0]), 0.75), (auc(&[0.5; 4], &[1, 0, 1, 0]), 0.5)];
    for (got, want) in cases {
        if got != Some(want) {
            return Err(format!("AUC example gave {got:?}, expected {want}"));
        }
    }
    if auc(&s, &[1, 1, 1, 1]).is_some() {
        return Err("single-class AUC should be undefined".into());
    }
    Ok("ACC 0.6667, P 0.75, R 0.75, F1 0.75; AUC examples 1.0, 0.75, 0.5".into())
}
