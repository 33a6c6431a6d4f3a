//! GEDF identities on seeded random graphs, plus the hand-worked values.

use std::f64::consts::PI;

use gedf_core::features::{active_power, gedf_vector};
use gedf_core::grid::build_laplacian;
use gedf_core::learn::supcon_loss;
use gedf_core::simulator::tsi;
use gedf_core::{seed, Branch, Bus, BusType, GridCase};
use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn case_from(n: usize, edges: &[(usize, usize, f64)]) -> GridCase {
    GridCase {
        name: "random".into(),
        base_mva: 100.0,
        frequency_hz: 60.0,
        buses: (1..=n)
            .map(|id| Bus {
                id,
                kind: if id == 1 { BusType::Slack } else { BusType::Pq },
                vm: 1.0,
                p_load: 0.0,
                q_load: 0.0,
            })
            .collect(),
        branches: edges
            .iter()
            .map(|&(from, to, x)| Branch {
                from,
                to,
                x,
                transformer: false,
            })
            .collect(),
        generators: Vec::new(),
    }
}

/// Random connected graph on `n` buses: a random recursive tree plus up to
/// `chords` extra distinct edges.
pub fn random_graph(n: usize, chords: usize, rng: &mut seed::Rng) -> Vec<(usize, usize, f64)> {
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    for child in 2..=n {
        let parent = rng.gen_range(1..child);
        seen.insert((parent, child));
        edges.push((parent, child, rng.gen_range(0.01..0.5)));
    }
    for _ in 0..chords {
        let (a, b) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
        if a != b && seen.insert((a.min(b), a.max(b))) {
            edges.push((a, b, rng.gen_range(0.01..0.5)));
        }
    }
    edges
}

fn angles(n: usize, rng: &mut seed::Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-0.6..0.6))
}

/// Worst residuals over 100 meshed graphs and 50 trees, each with 5 to 40
/// buses: `[mean and Laplacian system, Penrose, tree flows, relabelling]`.
pub fn identity_residuals(master: u64) -> Result<[f64; 4], String> {
    let mut rng = seed::rng(seed::stage(master, "gedf-identities"));
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let n = rng.gen_range(5..=40);
        let chords = rng.gen_range(0..=2 * n);
        let edges = random_graph(n, chords, &mut rng);
        let case = case_from(n, &edges);
        let m = build_laplacian(&case, &vec![1.0; n]).map_err(|e| e.to_string())?;
        let theta = angles(n, &mut rng);
        let p = active_power(&m, &theta);
        let delta = gedf_vector(&m, &p);
        worst[0] = worst[0]
            .max(delta.sum().abs())
            .max((&m.laplacian * &delta - &p).amax());

        let (a, pinv) = (&m.laplacian, &m.pinv);
        let ap = a * pinv;
        let pa = pinv * a;
        worst[1] = worst[1]
            .max((a * pinv * a - a).amax())
            .max((pinv * a * pinv - pinv).amax())
            .max((&ap - ap.transpose()).amax())
            .max((&pa - pa.transpose()).amax());

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let moved: Vec<_> = edges.iter().map(|&(a, b, x)| (perm[a - 1] + 1, perm[b - 1] + 1, x)).collect();
        let mp = build_laplacian(&case_from(n, &moved), &vec![1.0; n]).map_err(|e| e.to_string())?;
        let mut theta_p = DVector::zeros(n);
        for i in 0..n {
            theta_p[perm[i]] = theta[i];
        }
        let dp = gedf_vector(&mp, &active_power(&mp, &theta_p));
        for i in 0..n {
            worst[3] = worst[3].max((delta[i] - dp[perm[i]]).abs());
        }
    }
    for _ in 0..50 {
        let n = rng.gen_range(5..=40);
        let edges = random_graph(n, 0, &mut rng);
        let m = build_laplacian(&case_from(n, &edges), &vec![1.0; n]).map_err(|e| e.to_string())?;
        let theta = angles(n, &mut rng);
        let delta = gedf_vector(&m, &active_power(&m, &theta));
        let got = m.incidence.tr_mul(&delta);
        let want = m.incidence.tr_mul(&theta).map(f64::sin);
        worst[2] = worst[2].max((got - want).amax());
    }
    Ok(worst)
}

/// Brute-force SupCon over unit rows: every anchor against every other
/// sample, no stabilisation.
pub fn supcon_oracle(z: &[[f64; 2]], labels: &[u8], tau: f64) -> f64 {
    let dot = |a: &[f64; 2], b: &[f64; 2]| (a[0] * b[0] + a[1] * b[1]) / tau;
    let mut loss = 0.0;
    for i in 0..z.len() {
        let denom: f64 = (0..z.len()).filter(|&a| a != i).map(|a| dot(&z[i], &z[a]).exp()).sum();
        let pos: Vec<usize> = (0..z.len()).filter(|&a| a != i && labels[a] == labels[i]).collect();
        let s: f64 = pos.iter().map(|&p| (dot(&z[i], &z[p]).exp() / denom).ln()).sum();
        loss -= s / pos.len() as f64;
    }
    loss
}

/// Two-bus GEDF, TSI anchors and the two SupCon batches.
pub fn worked_values() -> Result<String, String> {
    let m = build_laplacian(&case_from(2, &[(1, 2, 1.0)]), &[1.0, 1.0]).map_err(|e| e.to_string())?;
    let p = DVector::from_vec(vec![0.5, -0.5]);
    let d = gedf_vector(&m, &p);
    if (d[0] - 0.25).abs() > 1e-12 || (d[1] + 0.25).abs() > 1e-12 {
        return Err(format!("two-bus GEDF {:?}", d.as_slice()));
    }

    for (sep, want) in [(0.0, 1.0), (2.0 * PI, 0.0), (6.0 * PI, -0.5)] {
        let (eta, _) = tsi(&[0.0, sep]).map_err(|e| e.to_string())?;
        if (eta - want).abs() > 1e-12 {
            return Err(format!("TSI at separation {sep}: {eta}, expected {want}"));
        }
    }

    let labels = [0u8, 0, 1, 1];
    let mut report = Vec::new();
    let batches: [([[f64; 2]; 4], f64); 2] = [
        ([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]], 4.0 * ((1f64.exp() + 2.0).ln() - 1.0)),
        ([[1.0, 0.0]; 4], 4.0 * 3f64.ln()),
    ];
    for (z, closed) in batches {
        let oracle = supcon_oracle(&z, &labels, 1.0);
        let flat: Vec<f64> = z.iter().flatten().copied().collect();
        let got = supcon_loss(&flat, 4, 2, &labels, 1.0).map_err(|e| e.to_string())?;
        if (oracle - closed).abs() > 1e-12 || (got - oracle).abs() > 1e-6 {
            return Err(format!("SupCon {got} vs brute force {oracle} (closed form {closed})"));
        }
        report.push(format!("{got:.6}"));
    }
    // the commonly quoted 2.205777 is a rounding slip of 4(ln(e+2) - 1)
    let quoted = (2.205777 - 4.0 * ((1f64.exp() + 2.0).ln() - 1.0)).abs();
    Ok(format!(
        "2-bus GEDF (0.25, -0.25); TSI 1, 0, -0.5; SupCon {} match brute force (quoted 2.205777 is {quoted:.1e} off the formula)",
        report.join(" and ")
    ))
}
