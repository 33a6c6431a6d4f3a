//! Swing-equation checks against analytic oracles.

use std::f64::consts::PI;

use gedf_core::simulator::{
    classical_energy, faultable_branches, integrate, simulate, FaultEnd, FaultSpec, Machines, NetworkPhase,
    ReducedNetwork, Scenario, SimulationOptions, StepSchedule,
};
use gedf_core::{case39, powerflow, GridCase};
use nalgebra::{Complex, DMatrix};

type C64 = Complex<f64>;

fn uniform(dt: f64, end_time: f64) -> StepSchedule {
    StepSchedule {
        fine_dt: dt,
        coarse_dt: dt,
        switch_time: end_time,
        end_time,
    }
}

/// Lossless network of internal nodes with unit EMFs and the given
/// transfer susceptances.
fn susceptance_network(b: &DMatrix<f64>) -> ReducedNetwork {
    let g = b.nrows();
    let mut y = DMatrix::<C64>::zeros(g, g);
    for i in 0..g {
        for j in 0..g {
            if i != j {
                y[(i, j)] = C64::new(0.0, b[(i, j)]);
                y[(i, i)] -= C64::new(0.0, b[(i, j)]);
            }
        }
    }
    ReducedNetwork::new(y, DMatrix::identity(g, g), &vec![1.0; g])
}

fn scenario(fault: Option<FaultSpec>, n: usize) -> Scenario {
    Scenario {
        id: "s".into(),
        topology_id: "base".into(),
        load_scale: vec![1.0; n],
        fault,
        seed: 0,
    }
}

/// Largest rotor excursion from the initial angles over 10 s without a
/// fault.
pub fn equilibrium_drift() -> Result<String, String> {
    let case = case39::load_case("ieee39").map_err(|e| e.to_string())?;
    let rec = simulate(&case, &scenario(None, case.n_buses()), &SimulationOptions::default()).map_err(|e| e.to_string())?;
    if rec.early_stop || (rec.final_time - 10.0).abs() > 1e-9 {
        return Err(format!("run ended at {} s", rec.final_time));
    }
    let first = rec.rotor_delta.column(0).into_owned();
    let drift = (0..rec.rotor_delta.ncols())
        .map(|k| (rec.rotor_delta.column(k) - &first).amax())
        .fold(0.0, f64::max);
    let msg = format!("max rotor drift {drift:.2e} rad over 10 s");
    if drift < 1e-3 && rec.label == 1 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Equal-area clearing angle by quadrature: the accelerating area with no
/// electrical output equals the decelerating area up to `π − δ₀`.
pub fn equal_area_clearing_angle(pm: f64, pmax_post: f64) -> f64 {
    let d0 = (pm / pmax_post).asin();
    let dmax = PI - d0;
    let simpson = |f: &dyn Fn(f64) -> f64, a: f64, b: f64| {
        let n = 2000;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let imbalance = |dc: f64| pm * (dc - d0) - simpson(&|d| pmax_post * d.sin() - pm, dc, dmax);
    let (mut lo, mut hi) = (d0, dmax);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if imbalance(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Simulated critical clearing time of an undamped machine against an
/// infinite bus versus the equal-area oracle.
pub fn smib_critical_clearing() -> Result<String, String> {
    let (pm, m, dt): (f64, f64, f64) = (0.5, 0.1, 1e-3);
    let d0 = pm.asin();
    let dcc = equal_area_clearing_angle(pm, 1.0);
    let closed = ((PI - 2.0 * d0) * pm + (PI - d0).cos()).acos();
    if (dcc - closed).abs() > 1e-9 {
        return Err(format!("quadrature angle {dcc} vs closed form {closed}"));
    }
    // with no electrical output the rotor follows δ₀ + P_m t² / (2M)
    let t_cc = (2.0 * m * (dcc - d0) / pm).sqrt();

    let machines = Machines {
        inertia: vec![m, f64::INFINITY],
        damping: vec![0.0, 0.0],
        p_mech: vec![pm, -pm],
        emf: vec![1.0, 1.0],
    };
    let post = susceptance_network(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    let faulted = susceptance_network(&DMatrix::zeros(2, 2));
    let stable = |k_clear: usize| {
        let phases = [
            NetworkPhase {
                start: 0.0,
                network: faulted.clone(),
            },
            NetworkPhase {
                start: k_clear as f64 * dt,
                network: post.clone(),
            },
        ];
        let traj = integrate(&machines, &phases, &uniform(dt, 3.0), &[d0, 0.0], &[0.0, 0.0], 3.0);
        traj.rotor_delta.row(0).iter().all(|&d| d < PI)
    };
    // largest stable clearing step by bisection on the step grid
    let (mut lo, mut hi) = (1usize, (2.0 * t_cc / dt) as usize);
    if !(stable(lo) && !stable(hi)) {
        return Err("stability does not change over the bracket".into());
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if stable(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let simulated = lo as f64 * dt;
    let msg = format!("critical clearing {simulated:.3} s simulated, {t_cc:.4} s equal-area (step {dt})");
    if (simulated - t_cc).abs() <= dt {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Relative drift of the classical energy of an undamped, lossless,
/// fault-free three-machine system over 10 s.
pub fn energy_drift() -> Result<String, String> {
    let b = DMatrix::from_row_slice(3, 3, &[0.0, 1.5, 0.8, 1.5, 0.0, 1.1, 0.8, 1.1, 0.0]);
    let net = susceptance_network(&b);
    let delta0 = [0.3, -0.1, 0.05];
    let mut pm = vec![0.0; 3];
    net.electrical_power(&delta0, &mut pm);
    let machines = Machines {
        inertia: vec![0.12, 0.08, 0.2],
        damping: vec![0.0; 3],
        p_mech: pm,
        emf: vec![1.0; 3],
    };
    let omega0 = [1.5, -2.0, 0.4];
    let phases = [NetworkPhase {
        start: 0.0,
        network: net.clone(),
    }];
    let traj = integrate(&machines, &phases, &StepSchedule::default(), &delta0, &omega0, 0.0);
    let e0 = classical_energy(&machines, &net, &delta0, &omega0);
    let e1 = classical_energy(&machines, &net, &traj.final_delta, &traj.final_omega);
    let rel = ((e1 - e0) / e0).abs();
    let moved = traj.final_delta.iter().zip(&delta0).any(|(a, b)| (a - b).abs() > 1e-2);
    let msg = format!("relative energy drift {rel:.2e} over {} s", traj.final_time);
    if rel < 1e-6 && moved && (traj.final_time - 10.0).abs() < 1e-9 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// A faultable branch with the smallest pre-fault angle difference.
pub fn lightly_loaded_branch(case: &GridCase) -> usize {
    let pf = powerflow::solve(case, &vec![1.0; case.n_buses()]).unwrap();
    faultable_branches(case)
        .into_iter()
        .min_by(|&a, &b| {
            let d = |l: usize| {
                let br = &case.branches[l];
                (pf.theta[br.from - 1] - pf.theta[br.to - 1]).abs()
            };
            d(a).total_cmp(&d(b))
        })
        .unwrap()
}

/// A near-end fault on a lightly loaded line stays stable, and halving both
/// step sizes moves the final rotor angles by less than 1e-4 rad.
pub fn step_halving() -> Result<String, String> {
    let case = case39::load_case("ieee39").map_err(|e| e.to_string())?;
    let l = lightly_loaded_branch(&case);
    let sc = scenario(Some(FaultSpec::new(l, FaultEnd::Near)), case.n_buses());
    let options = SimulationOptions::default();
    let rec = simulate(&case, &sc, &options).map_err(|e| e.to_string())?;
    let max = rec.final_rotor_delta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rec.final_rotor_delta.iter().cloned().fold(f64::INFINITY, f64::min);
    if rec.label != 1 || max - min >= 2.0 * PI {
        return Err(format!("fault on branch {l} is not stable (separation {})", max - min));
    }
    let fine = SimulationOptions {
        schedule: options.schedule.halved(),
        ..options
    };
    let rec_fine = simulate(&case, &sc, &fine).map_err(|e| e.to_string())?;
    let diff = rec
        .final_rotor_delta
        .iter()
        .zip(&rec_fine.final_rotor_delta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let msg = format!("branch {l} fault stable; step halving moves final angles by {diff:.2e} rad");
    if diff < 1e-4 {
        Ok(msg)
    } else {
        Err(msg)
    }
}
