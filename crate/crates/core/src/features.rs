//! Graph embedding dynamic features.
//!
//! For bus angles `θ_t` the nodal active power is `p_t = B diag(w) sin(Bᵀ θ_t)`
//! and the GEDF vector is `Δ_t = A† p_t`. A sample stacks `N` consecutive
//! post-clearing vectors into an `n × N` matrix and scales it into [−1, 1].

mod io;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::grid::NetworkMatrices;
use crate::simulator::TrajectoryRecord;
use crate::{seed, Error, Result};

pub use io::{read_manifest, read_sample, sample_path, write_manifest, write_sample, Manifest};

/// Sampling period of the feature window (s).
pub const SAMPLE_DT: f64 = 0.005;
/// The window starts strictly after this instant (remote-end clearing).
pub const WINDOW_START: f64 = 0.20;
pub const WINDOW_LENGTHS: [f64; 4] = [0.05, 0.10, 0.15, 0.20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Gedf,
    Raw,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Gedf => "gedf",
            Variant::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gedf" => Some(Variant::Gedf),
            "raw" => Some(Variant::Raw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_start: f64,
    pub dt: f64,
    pub columns: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GedfSample {
    /// n × N, entries in [−1, 1].
    pub matrix: DMatrix<f64>,
    pub label: u8,
    pub topology_id: String,
    pub scenario_id: String,
    pub window: Window,
    pub variant: Variant,
}

/// `p_t = B diag(w) sin(Bᵀ θ_t)`.
pub fn active_power(m: &NetworkMatrices, theta: &DVector<f64>) -> DVector<f64> {
    let edge_angles = m.incidence.tr_mul(theta);
    let flows = m.weights.component_mul(&edge_angles.map(f64::sin));
    &m.incidence * flows
}

/// `Δ_t = A† p_t`.
pub fn gedf_vector(m: &NetworkMatrices, p: &DVector<f64>) -> DVector<f64> {
    &m.pinv * p
}

/// Divides by the largest absolute entry; an all-zero matrix is left alone.
pub fn normalize(matrix: &mut DMatrix<f64>) {
    let max = matrix.amax();
    if max > 0.0 {
        *matrix /= max;
    }
}

/// Number of columns for a window length, rejecting lengths outside
/// [`WINDOW_LENGTHS`].
pub fn window_columns(window_length_s: f64) -> Result<usize> {
    if !WINDOW_LENGTHS.iter().any(|w| (w - window_length_s).abs() < 1e-9) {
        return Err(Error::InvalidInput(format!(
            "window length {window_length_s} s not in {WINDOW_LENGTHS:?}"
        )));
    }
    Ok((window_length_s / SAMPLE_DT).round() as usize)
}

/// Indices of the `N` record samples strictly after [`WINDOW_START`].
fn window_indices(record: &TrajectoryRecord, window_length_s: f64) -> Result<(Vec<usize>, Window)> {
    let n_cols = window_columns(window_length_s)?;
    let first = record
        .times
        .iter()
        .position(|&t| t > WINDOW_START + 1e-9)
        .ok_or_else(|| Error::InvalidInput("trajectory ends before the feature window".into()))?;
    if first + n_cols > record.times.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory has {} samples after {WINDOW_START} s, window needs {n_cols}",
            record.times.len() - first
        )));
    }
    let idx: Vec<usize> = (first..first + n_cols).collect();
    for w in idx.windows(2) {
        let dt = record.times[w[1]] - record.times[w[0]];
        if (dt - SAMPLE_DT).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "window samples are {dt} s apart, expected {SAMPLE_DT}"
            )));
        }
    }
    let window = Window {
        t_start: record.times[first],
        dt: SAMPLE_DT,
        columns: n_cols,
    };
    Ok((idx, window))
}

fn sample_from(record: &TrajectoryRecord, matrix: DMatrix<f64>, window: Window, variant: Variant) -> GedfSample {
    GedfSample {
        matrix,
        label: record.label,
        topology_id: record.scenario.topology_id.clone(),
        scenario_id: record.scenario.id.clone(),
        window,
        variant,
    }
}

/// GEDF matrix `F_N = (Δ_1, …, Δ_N)` over the post-clearing window.
pub fn extract_window(record: &TrajectoryRecord, matrices: &NetworkMatrices, window_length_s: f64) -> Result<GedfSample> {
    let (idx, window) = window_indices(record, window_length_s)?;
    let n = record.bus_theta.nrows();
    if matrices.incidence.nrows() != n {
        return Err(Error::InvalidInput(format!(
            "record has {n} buses, network matrices have {}",
            matrices.incidence.nrows()
        )));
    }
    let mut f = DMatrix::zeros(n, idx.len());
    for (c, &k) in idx.iter().enumerate() {
        let theta = record.bus_theta.column(k).into_owned();
        let delta = gedf_vector(matrices, &active_power(matrices, &theta));
        f.set_column(c, &delta);
    }
    normalize(&mut f);
    Ok(sample_from(record, f, window, Variant::Gedf))
}

/// Same window, bus angles used directly.
pub fn extract_raw(record: &TrajectoryRecord, window_length_s: f64) -> Result<GedfSample> {
    let (idx, window) = window_indices(record, window_length_s)?;
    let n = record.bus_theta.nrows();
    let mut f = DMatrix::zeros(n, idx.len());
    for (c, &k) in idx.iter().enumerate() {
        f.set_column(c, &record.bus_theta.column(k));
    }
    normalize(&mut f);
    Ok(sample_from(record, f, window, Variant::Raw))
}

pub fn extract(record: &TrajectoryRecord, matrices: &NetworkMatrices, window_length_s: f64, variant: Variant) -> Result<GedfSample> {
    match variant {
        Variant::Gedf => extract_window(record, matrices, window_length_s),
        Variant::Raw => extract_raw(record, window_length_s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    /// Topologies held out entirely for T2.
    pub t2_topologies: usize,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.7,
            validation: 0.1,
            t2_topologies: 1,
        }
    }
}

/// Indices into the sample list passed to [`make_splits`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub t1: Vec<usize>,
    pub t2: Vec<usize>,
    pub train_topologies: Vec<String>,
    pub t2_topologies: Vec<String>,
}

/// Splits scenarios keyed by `(topology_id, scenario_id)`.
///
/// `t2_topologies` topologies are held out for T2; the scenarios of the
/// others go to train/validation by the given fractions and the remainder to
/// T1.
pub fn make_splits(keys: &[(String, String)], fractions: &SplitFractions, rng_seed: u64) -> Result<DatasetSplit> {
    let mut topologies: Vec<&String> = keys.iter().map(|(t, _)| t).collect();
    topologies.sort();
    topologies.dedup();
    if topologies.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 distinct topologies, found {}",
            topologies.len()
        )));
    }
    if fractions.t2_topologies == 0 || fractions.t2_topologies >= topologies.len() {
        return Err(Error::InvalidInput(format!(
            "cannot hold out {} of {} topologies",
            fractions.t2_topologies,
            topologies.len()
        )));
    }
    if !(fractions.train > 0.0 && fractions.validation >= 0.0 && fractions.train + fractions.validation < 1.0) {
        return Err(Error::InvalidInput("split fractions must satisfy 0 < train, train + validation < 1".into()));
    }
    let mut rng = seed::rng(rng_seed);
    let mut shuffled = topologies.clone();
    shuffled.shuffle(&mut rng);
    let mut t2_topologies: Vec<String> = shuffled[..fractions.t2_topologies].iter().map(|s| s.to_string()).collect();
    t2_topologies.sort();
    let mut train_topologies: Vec<String> = shuffled[fractions.t2_topologies..].iter().map(|s| s.to_string()).collect();
    train_topologies.sort();

    let mut seen = std::collections::HashSet::new();
    let mut pool = Vec::new();
    let mut t2 = Vec::new();
    for (i, (t, s)) in keys.iter().enumerate() {
        if !seen.insert((t, s)) {
            return Err(Error::InvalidInput(format!("scenario {s} of {t} listed twice")));
        }
        if t2_topologies.binary_search(t).is_ok() {
            t2.push(i);
        } else {
            pool.push(i);
        }
    }
    pool.shuffle(&mut rng);
    let n_train = (fractions.train * pool.len() as f64).round() as usize;
    let n_val = ((fractions.validation * pool.len() as f64).round() as usize).min(pool.len() - n_train);
    let mut train = pool[..n_train].to_vec();
    let mut validation = pool[n_train..n_train + n_val].to_vec();
    let mut t1 = pool[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    t1.sort_unstable();
    Ok(DatasetSplit {
        train,
        validation,
        t1,
        t2,
        train_topologies,
        t2_topologies,
    })
}

/// Draws exactly `floor(fraction · len)` items, allocated across groups by
/// largest remainder so each group contributes its share. Returns
/// `(chosen, rest)`, both ascending.
pub fn stratified_subset(groups: &[String], fraction: f64, rng_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let total = (fraction * groups.len() as f64).floor() as usize;
    let mut names: Vec<&String> = groups.iter().collect();
    names.sort();
    names.dedup();
    let members: Vec<Vec<usize>> = names
        .iter()
        .map(|name| (0..groups.len()).filter(|&i| &groups[i] == *name).collect())
        .collect();
    let exact: Vec<f64> = members.iter().map(|m| fraction * m.len() as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut missing = total - quota.iter().sum::<usize>();
    for &g in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[g] < members[g].len() {
            quota[g] += 1;
            missing -= 1;
        }
    }
    let mut rng = seed::rng(rng_seed);
    let mut chosen = Vec::with_capacity(total);
    for (g, m) in members.iter().enumerate() {
        let mut m = m.clone();
        m.shuffle(&mut rng);
        chosen.extend_from_slice(&m[..quota[g]]);
    }
    chosen.sort_unstable();
    let picked: std::collections::HashSet<usize> = chosen.iter().copied().collect();
    let rest = (0..groups.len()).filter(|i| !picked.contains(i)).collect();
    (chosen, rest)
}
