//! Graph and electrical description of a power system.
//!
//! A [`GridCase`] is a lossless network: every branch is a pure series
//! reactance. From it we build the oriented incidence matrix `B`, the edge
//! weights `w_l = V_i V_j / x_l`, the weighted Laplacian `A = B diag(w) Bᵀ`
//! and its Moore–Penrose pseudo-inverse.

pub(crate) mod format;

use std::collections::{HashSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use format::{parse_sections, write_case, Section};

/// Eigenvalues below `rel_tol * λ_max` are treated as zero.
pub const PINV_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusType {
    Slack,
    Pv,
    Pq,
}

impl BusType {
    pub fn as_str(self) -> &'static str {
        match self {
            BusType::Slack => "SLACK",
            BusType::Pv => "PV",
            BusType::Pq => "PQ",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "SLACK" => Some(BusType::Slack),
            "PV" => Some(BusType::Pv),
            "PQ" => Some(BusType::Pq),
            _ => None,
        }
    }
}

/// One bus. Ids are 1-based and equal to the position in [`GridCase::buses`]
/// plus one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusType,
    /// Voltage magnitude setpoint (p.u.); the flat-start value for PQ buses.
    pub vm: f64,
    pub p_load: f64,
    pub q_load: f64,
}

impl Bus {
    pub fn has_load(&self) -> bool {
        self.p_load != 0.0 || self.q_load != 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Series reactance (p.u.).
    pub x: f64,
    pub transformer: bool,
}

impl Branch {
    pub fn key(&self) -> (usize, usize) {
        edge_key(self.from, self.to)
    }

    pub fn touches(&self, bus: usize) -> bool {
        self.from == bus || self.to == bus
    }
}

/// Classical-model generator data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// Inertia coefficient M (s²/rad, system base).
    pub inertia: f64,
    /// Damping D (p.u. power per rad/s).
    pub damping: f64,
    /// Transient reactance x'd (p.u.).
    pub xd_prime: f64,
    /// Scheduled mechanical power (p.u.); ignored for the slack machine.
    pub p_mech: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub frequency_hz: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

pub fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl GridCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .find(|b| b.kind == BusType::Slack)
            .map(|b| b.id)
            .unwrap_or(1)
    }

    pub fn generator_buses(&self) -> HashSet<usize> {
        self.generators.iter().map(|g| g.bus).collect()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let k = edge_key(a, b);
        self.branches.iter().any(|br| br.key() == k)
    }

    /// Checks every structural invariant, including connectivity.
    pub fn validate(&self) -> Result<()> {
        let n = self.buses.len();
        if n == 0 {
            return Err(Error::InvalidCase("case has no buses".into()));
        }
        for (i, b) in self.buses.iter().enumerate() {
            if b.id != i + 1 {
                return Err(Error::InvalidCase(format!(
                    "bus at position {} has id {} (ids must be 1..n in order)",
                    i + 1,
                    b.id
                )));
            }
            if !(b.vm > 0.0) || !b.p_load.is_finite() || !b.q_load.is_finite() {
                return Err(Error::InvalidCase(format!("bus {} has invalid data", b.id)));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.kind == BusType::Slack).count();
        if slacks != 1 {
            return Err(Error::InvalidCase(format!(
                "expected exactly one slack bus, found {slacks}"
            )));
        }
        let mut seen = HashSet::new();
        for (l, br) in self.branches.iter().enumerate() {
            if br.from == 0 || br.to == 0 || br.from > n || br.to > n {
                return Err(Error::InvalidCase(format!(
                    "branch {l} references a missing bus ({}-{})",
                    br.from, br.to
                )));
            }
            if br.from == br.to {
                return Err(Error::InvalidCase(format!("branch {l} is a self-loop at bus {}", br.from)));
            }
            if !(br.x > 0.0) || !br.x.is_finite() {
                return Err(Error::InvalidCase(format!("branch {l} has nonpositive reactance {}", br.x)));
            }
            if !seen.insert(br.key()) {
                return Err(Error::InvalidCase(format!(
                    "duplicate branch {}-{}",
                    br.from, br.to
                )));
            }
        }
        let mut gen_buses = HashSet::new();
        for g in &self.generators {
            if g.bus == 0 || g.bus > n {
                return Err(Error::InvalidCase(format!("generator at missing bus {}", g.bus)));
            }
            if !gen_buses.insert(g.bus) {
                return Err(Error::InvalidCase(format!("two generators at bus {}", g.bus)));
            }
            if self.buses[g.bus - 1].kind == BusType::Pq {
                return Err(Error::InvalidCase(format!("generator at PQ bus {}", g.bus)));
            }
            if !(g.inertia > 0.0) || !(g.xd_prime > 0.0) || g.damping < 0.0 {
                return Err(Error::InvalidCase(format!("generator at bus {} has invalid dynamics", g.bus)));
            }
        }
        for b in &self.buses {
            if b.kind != BusType::Pq && !gen_buses.contains(&b.id) {
                return Err(Error::InvalidCase(format!("{} bus {} has no generator", b.kind.as_str(), b.id)));
            }
        }
        if !is_connected(self, &[]) {
            return Err(Error::InvalidCase("network is not connected".into()));
        }
        Ok(())
    }

    /// Returns a copy without the listed branches (indices into `branches`).
    pub fn without_branches(&self, removed: &[usize]) -> GridCase {
        let removed: HashSet<usize> = removed.iter().copied().collect();
        let mut out = self.clone();
        out.branches = self
            .branches
            .iter()
            .enumerate()
            .filter(|(l, _)| !removed.contains(l))
            .map(|(_, b)| b.clone())
            .collect();
        out
    }

    /// Relabels buses: old bus `i` (1-based) becomes `perm[i - 1] + 1`.
    /// Branch and generator order are kept.
    pub fn relabel(&self, perm: &[usize]) -> GridCase {
        let n = self.buses.len();
        assert_eq!(perm.len(), n, "permutation length must equal bus count");
        let map = |id: usize| perm[id - 1] + 1;
        let mut buses = vec![None; n];
        for b in &self.buses {
            let id = map(b.id);
            buses[id - 1] = Some(Bus { id, ..b.clone() });
        }
        GridCase {
            name: self.name.clone(),
            base_mva: self.base_mva,
            frequency_hz: self.frequency_hz,
            buses: buses.into_iter().map(|b| b.expect("perm is a bijection")).collect(),
            branches: self
                .branches
                .iter()
                .map(|br| Branch {
                    from: map(br.from),
                    to: map(br.to),
                    ..br.clone()
                })
                .collect(),
            generators: self
                .generators
                .iter()
                .map(|g| Generator {
                    bus: map(g.bus),
                    ..g.clone()
                })
                .collect(),
        }
    }
}

/// Incidence, weights, Laplacian and pseudo-inverse of one topology.
#[derive(Debug, Clone)]
pub struct NetworkMatrices {
    /// n × |E|, +1 at the sink (`to`) and −1 at the source (`from`).
    pub incidence: DMatrix<f64>,
    pub weights: DVector<f64>,
    pub laplacian: DMatrix<f64>,
    pub pinv: DMatrix<f64>,
    pub rank: usize,
}

fn check_edges(case: &GridCase) -> Result<()> {
    let n = case.buses.len();
    let mut seen = HashSet::new();
    for (l, br) in case.branches.iter().enumerate() {
        if br.from == br.to {
            return Err(Error::InvalidCase(format!("branch {l} is a self-loop")));
        }
        if br.from == 0 || br.to == 0 || br.from > n || br.to > n {
            return Err(Error::InvalidCase(format!("branch {l} references a missing bus")));
        }
        if !seen.insert(br.key()) {
            return Err(Error::InvalidCase(format!("duplicate branch {}-{}", br.from, br.to)));
        }
    }
    Ok(())
}

pub fn build_incidence(case: &GridCase) -> Result<DMatrix<f64>> {
    check_edges(case)?;
    let mut b = DMatrix::zeros(case.buses.len(), case.branches.len());
    for (l, br) in case.branches.iter().enumerate() {
        b[(br.from - 1, l)] = -1.0;
        b[(br.to - 1, l)] = 1.0;
    }
    Ok(b)
}

/// Builds `A = B diag(w) Bᵀ` with `w_l = V_i V_j / x_l` and its pseudo-inverse.
pub fn build_laplacian(case: &GridCase, voltages: &[f64]) -> Result<NetworkMatrices> {
    let n = case.buses.len();
    if voltages.len() != n {
        return Err(Error::InvalidParameter(format!(
            "expected {n} voltage magnitudes, got {}",
            voltages.len()
        )));
    }
    if let Some(v) = voltages.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("nonpositive voltage magnitude {v}")));
    }
    let incidence = build_incidence(case)?;
    let mut weights = DVector::zeros(case.branches.len());
    let mut laplacian = DMatrix::zeros(n, n);
    for (l, br) in case.branches.iter().enumerate() {
        if !(br.x > 0.0) {
            return Err(Error::InvalidParameter(format!("branch {l} reactance {} is not positive", br.x)));
        }
        let (i, j) = (br.from - 1, br.to - 1);
        let w = voltages[i] * voltages[j] / br.x;
        weights[l] = w;
        laplacian[(i, i)] += w;
        laplacian[(j, j)] += w;
        laplacian[(i, j)] -= w;
        laplacian[(j, i)] -= w;
    }
    let (pinv, rank) = pseudo_inverse_with_rank(&laplacian, PINV_REL_TOL)?;
    Ok(NetworkMatrices {
        incidence,
        weights,
        laplacian,
        pinv,
        rank,
    })
}

/// Eigendecomposition-based pseudo-inverse of a symmetric PSD matrix.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    pseudo_inverse_with_rank(a, rel_tol).map(|(p, _)| p)
}

pub fn pseudo_inverse_with_rank(a: &DMatrix<f64>, rel_tol: f64) -> Result<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput(format!("matrix is {}x{}, not square", n, a.ncols())));
    }
    let asym = (a - a.transpose()).amax();
    if asym > 1e-12 * a.amax().max(1.0) {
        return Err(Error::InvalidInput(format!("matrix is not symmetric (max |A - Aᵀ| = {asym:e})")));
    }
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0));
    }
    let eig = nalgebra::SymmetricEigen::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    let lambda_max = eig.eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let mut out = DMatrix::zeros(n, n);
    let mut rank = 0;
    if lambda_max == 0.0 {
        return Ok((out, 0));
    }
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda <= rel_tol * lambda_max {
            continue;
        }
        rank += 1;
        let v = eig.eigenvectors.column(k);
        out.ger(1.0 / lambda, &v, &v, 1.0);
    }
    // cheap guard against a silently wrong decomposition
    let residual = (a * &out * a - a).amax();
    if !(residual <= 1e-8 * lambda_max.max(1.0)) {
        return Err(Error::Numerical(format!("pseudo-inverse residual {residual:e} (|A A† A − A|)")));
    }
    Ok((out, rank))
}

/// True iff the graph stays connected after dropping `removed` branches.
pub fn is_connected(case: &GridCase, removed: &[usize]) -> bool {
    let n = case.buses.len();
    if n == 0 {
        return true;
    }
    let removed: HashSet<usize> = removed.iter().copied().collect();
    let mut adj = vec![Vec::new(); n];
    for (l, br) in case.branches.iter().enumerate() {
        if removed.contains(&l) || br.from == 0 || br.to == 0 || br.from > n || br.to > n {
            continue;
        }
        adj[br.from - 1].push(br.to - 1);
        adj[br.to - 1].push(br.from - 1);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    reached == n
}
