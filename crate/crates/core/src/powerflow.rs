//! Lossless AC power flow by Newton–Raphson in polar form.
//!
//! With zero resistance the injections reduce to
//! `P_i = Σ_j V_i V_j y_ij sin(θ_i − θ_j)` and
//! `Q_i = V_i² Σ_j y_ij − Σ_j V_i V_j y_ij cos(θ_i − θ_j)`, `y_ij = 1/x_ij`.
//! PV buses hold their voltage setpoint, the slack bus holds angle zero and
//! absorbs the imbalance left by load scaling.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::grid::{BusType, GridCase};
use crate::{seed, Error, Result};

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub theta: Vec<f64>,
    pub vmag: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    /// Largest |θ_i − θ_j| across the branches of `case`.
    pub fn max_branch_angle(&self, case: &GridCase) -> f64 {
        case.branches
            .iter()
            .map(|br| (self.theta[br.from - 1] - self.theta[br.to - 1]).abs())
            .fold(0.0, f64::max)
    }
}

/// Net injections `(P, Q)` at every bus for the given state.
pub fn injections(case: &GridCase, theta: &[f64], vmag: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = case.n_buses();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for br in &case.branches {
        let (i, j) = (br.from - 1, br.to - 1);
        let y = 1.0 / br.x;
        let s = (theta[i] - theta[j]).sin();
        let c = (theta[i] - theta[j]).cos();
        let vv = vmag[i] * vmag[j] * y;
        p[i] += vv * s;
        p[j] -= vv * s;
        q[i] += vmag[i] * vmag[i] * y - vv * c;
        q[j] += vmag[j] * vmag[j] * y - vv * c;
    }
    (p, q)
}

/// Scheduled net injections `(P, Q)` after load scaling. The slack entry of
/// `P` and the PV entries of `Q` are not used by the solver.
pub fn scheduled_injections(case: &GridCase, load_scale: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut p: Vec<f64> = case
        .buses
        .iter()
        .zip(load_scale)
        .map(|(b, s)| -b.p_load * s)
        .collect();
    let q: Vec<f64> = case
        .buses
        .iter()
        .zip(load_scale)
        .map(|(b, s)| -b.q_load * s)
        .collect();
    for g in &case.generators {
        p[g.bus - 1] += g.p_mech;
    }
    (p, q)
}

fn check_scale(case: &GridCase, load_scale: &[f64]) -> Result<()> {
    if load_scale.len() != case.n_buses() {
        return Err(Error::InvalidParameter(format!(
            "expected {} load scale factors, got {}",
            case.n_buses(),
            load_scale.len()
        )));
    }
    if let Some(s) = load_scale.iter().find(|s| !(**s > 0.0 && **s <= 2.0)) {
        return Err(Error::InvalidParameter(format!("load scale factor {s} outside (0, 2]")));
    }
    Ok(())
}

/// Solves the lossless power flow from a flat start.
///
/// Non-convergence is reported through `converged = false`; only a singular
/// Jacobian is an error.
pub fn solve(case: &GridCase, load_scale: &[f64]) -> Result<PowerFlowSolution> {
    check_scale(case, load_scale)?;
    let n = case.n_buses();
    let (p_spec, q_spec) = scheduled_injections(case, load_scale);

    // unknown ordering: θ for every non-slack bus, then V for every PQ bus
    let angle_buses: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind != BusType::Slack).collect();
    let mag_buses: Vec<usize> = (0..n).filter(|&i| case.buses[i].kind == BusType::Pq).collect();
    let mut angle_pos = vec![usize::MAX; n];
    for (k, &i) in angle_buses.iter().enumerate() {
        angle_pos[i] = k;
    }
    let mut mag_pos = vec![usize::MAX; n];
    for (k, &i) in mag_buses.iter().enumerate() {
        mag_pos[i] = angle_buses.len() + k;
    }
    let dim = angle_buses.len() + mag_buses.len();

    let mut theta = vec![0.0; n];
    let mut vmag: Vec<f64> = case
        .buses
        .iter()
        .map(|b| if b.kind == BusType::Pq { 1.0 } else { b.vm })
        .collect();

    let mismatch = |theta: &[f64], vmag: &[f64]| -> (DVector<f64>, Vec<f64>, Vec<f64>) {
        let (p, q) = injections(case, theta, vmag);
        let mut f = DVector::zeros(dim);
        for &i in &angle_buses {
            f[angle_pos[i]] = p_spec[i] - p[i];
        }
        for &i in &mag_buses {
            f[mag_pos[i]] = q_spec[i] - q[i];
        }
        (f, p, q)
    };

    let (mut f, mut p, mut q) = mismatch(&theta, &vmag);
    let mut max_mismatch = f.amax();
    let mut iterations = 0;
    while !(max_mismatch < TOLERANCE) && iterations < MAX_ITERATIONS && max_mismatch.is_finite() {
        let jac = jacobian(case, &theta, &vmag, &angle_pos, &mag_pos, dim);
        let dx = jac
            .lu()
            .solve(&f)
            .ok_or_else(|| Error::Numerical("singular power-flow Jacobian".into()))?;
        for &i in &angle_buses {
            theta[i] += dx[angle_pos[i]];
        }
        for &i in &mag_buses {
            vmag[i] += dx[mag_pos[i]];
        }
        iterations += 1;
        (f, p, q) = mismatch(&theta, &vmag);
        max_mismatch = f.amax();
    }
    let converged = max_mismatch < TOLERANCE && vmag.iter().all(|v| *v > 0.0);
    Ok(PowerFlowSolution {
        theta,
        vmag,
        p_inj: p,
        q_inj: q,
        converged,
        iterations,
        max_mismatch,
    })
}

fn jacobian(
    case: &GridCase,
    theta: &[f64],
    vmag: &[f64],
    angle_pos: &[usize],
    mag_pos: &[usize],
    dim: usize,
) -> DMatrix<f64> {
    // rows: P rows at angle_pos, Q rows at mag_pos; columns likewise for θ, V
    let mut jac = DMatrix::zeros(dim, dim);
    let none = usize::MAX;
    for br in &case.branches {
        let y = 1.0 / br.x;
        for &(i, j) in &[(br.from - 1, br.to - 1), (br.to - 1, br.from - 1)] {
            let s = (theta[i] - theta[j]).sin();
            let c = (theta[i] - theta[j]).cos();
            let vv = vmag[i] * vmag[j] * y;
            let (pi, qi) = (angle_pos[i], mag_pos[i]);
            let (ti, tj) = (angle_pos[i], angle_pos[j]);
            let (vi, vj) = (mag_pos[i], mag_pos[j]);
            if pi != none {
                if ti != none {
                    jac[(pi, ti)] += vv * c;
                }
                if tj != none {
                    jac[(pi, tj)] -= vv * c;
                }
                if vi != none {
                    jac[(pi, vi)] += vmag[j] * y * s;
                }
                if vj != none {
                    jac[(pi, vj)] += vmag[i] * y * s;
                }
            }
            if qi != none {
                if ti != none {
                    jac[(qi, ti)] += vv * s;
                }
                if tj != none {
                    jac[(qi, tj)] -= vv * s;
                }
                if vi != none {
                    jac[(qi, vi)] += 2.0 * vmag[i] * y - vmag[j] * y * c;
                }
                if vj != none {
                    jac[(qi, vj)] -= vmag[i] * y * c;
                }
            }
        }
    }
    jac
}

/// Converged, and every branch angle difference below π/2.
pub fn is_feasible(case: &GridCase, sol: &PowerFlowSolution) -> bool {
    sol.converged && sol.max_branch_angle(case) < std::f64::consts::FRAC_PI_2
}

/// Independent uniform factor in `[low, high]` for each load bus; 1 elsewhere.
pub fn scale_loads(case: &GridCase, low: f64, high: f64, rng_seed: u64) -> Result<Vec<f64>> {
    if !(low > 0.0 && low <= high) {
        return Err(Error::InvalidParameter(format!("bad load range [{low}, {high}]")));
    }
    let mut rng = seed::rng(rng_seed);
    Ok(case
        .buses
        .iter()
        .map(|b| {
            if !b.has_load() {
                1.0
            } else if low == high {
                low
            } else {
                rng.gen_range(low..=high)
            }
        })
        .collect())
}
