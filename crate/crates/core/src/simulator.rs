//! Classical-model transient simulation.
//!
//! Each generator is a constant EMF `E'` behind its transient reactance and
//! obeys `M δ̈ = P_m − P_e(δ) − D δ̇`. Loads become constant admittances taken
//! from the pre-fault power flow. For every network configuration (pre-fault,
//! fault on, near end open, cleared) the augmented bus admittance matrix is
//! Kron-reduced to the generator internal nodes, and a recovery matrix maps
//! EMFs back to bus voltages so bus angles can be sampled. Integration is
//! fixed-step RK4 on a two-rate grid.

mod record;

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::grid::{is_connected, GridCase};
use crate::powerflow::{self, PowerFlowSolution};
use crate::topogen::Topology;
use crate::{par, seed, Error, Result};

pub use record::{read_record, write_record};

type C64 = Complex<f64>;

pub const T_APPLY: f64 = 0.10;
pub const T_CLEAR_NEAR: f64 = 0.19;
pub const T_CLEAR_REMOTE: f64 = 0.20;
pub const FAULT_SHUNT: f64 = 1e6;
/// Integration stops once any |δ̇| exceeds this (rad/s).
pub const BLOW_UP_SPEED: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultEnd {
    /// The fault sits at the branch's `from` bus.
    Near,
    /// The fault sits at the branch's `to` bus.
    Remote,
}

impl FaultEnd {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultEnd::Near => "near",
            FaultEnd::Remote => "remote",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "near" => Some(FaultEnd::Near),
            "remote" => Some(FaultEnd::Remote),
            _ => None,
        }
    }
}

/// Three-phase-to-ground branch fault with two-stage clearing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub faulted_branch: usize,
    pub faulted_end: FaultEnd,
    pub t_apply: f64,
    pub t_clear_near: f64,
    pub t_clear_remote: f64,
}

impl FaultSpec {
    pub fn new(faulted_branch: usize, faulted_end: FaultEnd) -> Self {
        FaultSpec {
            faulted_branch,
            faulted_end,
            t_apply: T_APPLY,
            t_clear_near: T_CLEAR_NEAR,
            t_clear_remote: T_CLEAR_REMOTE,
        }
    }

    /// Bus where the fault shunt is connected.
    pub fn faulted_bus(&self, case: &GridCase) -> usize {
        let br = &case.branches[self.faulted_branch];
        match self.faulted_end {
            FaultEnd::Near => br.from,
            FaultEnd::Remote => br.to,
        }
    }

    fn check(&self, case: &GridCase) -> Result<()> {
        if self.faulted_branch >= case.n_branches() {
            return Err(Error::InvalidInput(format!(
                "faulted branch {} out of range",
                self.faulted_branch
            )));
        }
        if !(0.0 <= self.t_apply && self.t_apply < self.t_clear_near && self.t_clear_near < self.t_clear_remote) {
            return Err(Error::InvalidInput("fault times must satisfy t_apply < t_clear_near < t_clear_remote".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub topology_id: String,
    pub load_scale: Vec<f64>,
    pub fault: Option<FaultSpec>,
    pub seed: u64,
}

/// Two-rate step schedule: `fine_dt` on `[0, switch_time]`, `coarse_dt` on
/// `[switch_time, end_time]`. Every step end is a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSchedule {
    pub fine_dt: f64,
    pub coarse_dt: f64,
    pub switch_time: f64,
    pub end_time: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            fine_dt: 0.005,
            coarse_dt: 0.01,
            switch_time: 2.0,
            end_time: 10.0,
        }
    }
}

impl StepSchedule {
    pub fn halved(&self) -> Self {
        StepSchedule {
            fine_dt: self.fine_dt / 2.0,
            coarse_dt: self.coarse_dt / 2.0,
            ..*self
        }
    }

    fn fine_steps(&self) -> usize {
        (self.switch_time / self.fine_dt).round() as usize
    }

    fn coarse_steps(&self) -> usize {
        ((self.end_time - self.switch_time) / self.coarse_dt).round() as usize
    }

    /// Number of samples including t = 0.
    pub fn n_samples(&self) -> usize {
        self.fine_steps() + self.coarse_steps() + 1
    }

    /// Time of sample `k`, computed from integer step counts.
    pub fn time(&self, k: usize) -> f64 {
        let nf = self.fine_steps();
        if k <= nf {
            k as f64 * self.fine_dt
        } else {
            self.switch_time + (k - nf) as f64 * self.coarse_dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples()).map(|k| self.time(k)).collect()
    }
}

/// Classical machine data in internal-node order.
#[derive(Debug, Clone, PartialEq)]
pub struct Machines {
    /// M (s²/rad); `f64::INFINITY` models an infinite bus.
    pub inertia: Vec<f64>,
    pub damping: Vec<f64>,
    pub p_mech: Vec<f64>,
    /// |E'| (p.u.)
    pub emf: Vec<f64>,
}

impl Machines {
    pub fn len(&self) -> usize {
        self.inertia.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inertia.is_empty()
    }
}

/// Network reduced to generator internal nodes.
#[derive(Debug, Clone)]
pub struct ReducedNetwork {
    /// g × g reduced admittance.
    pub admittance: DMatrix<C64>,
    /// n × g map from internal EMF phasors to bus voltages.
    pub recovery: DMatrix<C64>,
    // E_i E_j G_ij and E_i E_j B_ij, row-major g × g
    ee_g: Vec<f64>,
    ee_b: Vec<f64>,
}

impl ReducedNetwork {
    pub fn new(admittance: DMatrix<C64>, recovery: DMatrix<C64>, emf: &[f64]) -> Self {
        let g = admittance.nrows();
        let mut ee_g = vec![0.0; g * g];
        let mut ee_b = vec![0.0; g * g];
        for i in 0..g {
            for j in 0..g {
                let ee = emf[i] * emf[j];
                ee_g[i * g + j] = ee * admittance[(i, j)].re;
                ee_b[i * g + j] = ee * admittance[(i, j)].im;
            }
        }
        ReducedNetwork {
            admittance,
            recovery,
            ee_g,
            ee_b,
        }
    }

    /// `P_e,i = Σ_j E_i E_j (G_ij cos δ_ij + B_ij sin δ_ij)`.
    pub fn electrical_power(&self, delta: &[f64], out: &mut [f64]) {
        let g = delta.len();
        let (sin, cos): (Vec<f64>, Vec<f64>) = delta.iter().map(|d| d.sin_cos()).unzip();
        for i in 0..g {
            let mut p = self.ee_g[i * g + i];
            for j in 0..g {
                if j == i {
                    continue;
                }
                // sin(δi − δj), cos(δi − δj)
                let s = sin[i] * cos[j] - cos[i] * sin[j];
                let c = cos[i] * cos[j] + sin[i] * sin[j];
                p += self.ee_g[i * g + j] * c + self.ee_b[i * g + j] * s;
            }
            out[i] = p;
        }
    }

    /// Bus voltage phasors for the given rotor angles.
    pub fn bus_voltages(&self, emf: &[f64], delta: &[f64]) -> Vec<C64> {
        let e: Vec<C64> = emf
            .iter()
            .zip(delta)
            .map(|(m, d)| C64::from_polar(*m, *d))
            .collect();
        (0..self.recovery.nrows())
            .map(|r| (0..e.len()).map(|k| self.recovery[(r, k)] * e[k]).sum())
            .collect()
    }
}

/// A network configuration in force from `start` until the next phase.
#[derive(Debug, Clone)]
pub struct NetworkPhase {
    pub start: f64,
    pub network: ReducedNetwork,
}

/// Classical energy `Σ ½ M ω² − Σ P_m δ − Σ_{i<j} E_i E_j B_ij cos δ_ij`.
/// Conserved when `D = 0` and the reduced network has no conductance.
pub fn classical_energy(machines: &Machines, network: &ReducedNetwork, delta: &[f64], omega: &[f64]) -> f64 {
    let g = delta.len();
    let mut e = 0.0;
    for i in 0..g {
        if machines.inertia[i].is_finite() {
            e += 0.5 * machines.inertia[i] * omega[i] * omega[i];
        }
        e -= machines.p_mech[i] * delta[i];
        for j in (i + 1)..g {
            e -= network.ee_b[i * g + j] * (delta[i] - delta[j]).cos();
        }
    }
    e
}

/// Raw integration output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// n × T (rad), unwrapped in time.
    pub bus_theta: DMatrix<f64>,
    /// g × T (rad)
    pub rotor_delta: DMatrix<f64>,
    pub final_delta: Vec<f64>,
    pub final_omega: Vec<f64>,
    pub final_time: f64,
    pub early_stop: bool,
}

fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y == -PI {
        PI
    } else {
        y
    }
}

fn derivative(machines: &Machines, net: &ReducedNetwork, delta: &[f64], omega: &[f64], pe: &mut [f64], d_delta: &mut [f64], d_omega: &mut [f64]) {
    net.electrical_power(delta, pe);
    for i in 0..delta.len() {
        d_delta[i] = omega[i];
        let m = machines.inertia[i];
        d_omega[i] = if m.is_finite() {
            (machines.p_mech[i] - pe[i] - machines.damping[i] * omega[i]) / m
        } else {
            0.0
        };
    }
}

fn rk4_step(machines: &Machines, net: &ReducedNetwork, dt: f64, delta: &mut [f64], omega: &mut [f64]) {
    let g = delta.len();
    let mut pe = vec![0.0; g];
    let mut k = [[vec![0.0; g], vec![0.0; g]], [vec![0.0; g], vec![0.0; g]], [vec![0.0; g], vec![0.0; g]], [vec![0.0; g], vec![0.0; g]]];
    let mut td = vec![0.0; g];
    let mut to = vec![0.0; g];
    let weights = [0.5, 0.5, 1.0];
    {
        let [kd, ko] = &mut k[0];
        derivative(machines, net, delta, omega, &mut pe, kd, ko);
    }
    for stage in 1..4 {
        let h = weights[stage - 1] * dt;
        for i in 0..g {
            td[i] = delta[i] + h * k[stage - 1][0][i];
            to[i] = omega[i] + h * k[stage - 1][1][i];
        }
        let [kd, ko] = &mut k[stage];
        derivative(machines, net, &td, &to, &mut pe, kd, ko);
    }
    for i in 0..g {
        delta[i] += dt / 6.0 * (k[0][0][i] + 2.0 * k[1][0][i] + 2.0 * k[2][0][i] + k[3][0][i]);
        omega[i] += dt / 6.0 * (k[0][1][i] + 2.0 * k[1][1][i] + 2.0 * k[2][1][i] + k[3][1][i]);
    }
}

/// Integrates the swing equations across the network phases.
///
/// Switching instants must lie on the sample grid; the network in force at a
/// step's start is used for the whole step, and a sample taken at a switching
/// instant sees the new network. Samples with `t <= store_until` are kept.
pub fn integrate(
    machines: &Machines,
    phases: &[NetworkPhase],
    schedule: &StepSchedule,
    delta0: &[f64],
    omega0: &[f64],
    store_until: f64,
) -> Trajectory {
    assert!(!phases.is_empty(), "at least one network phase is required");
    let g = machines.len();
    let n = phases[0].network.recovery.nrows();
    let total = schedule.n_samples();
    let stored = (0..total)
        .take_while(|&k| schedule.time(k) <= store_until + 1e-9)
        .count();

    let mut times = Vec::with_capacity(stored);
    let mut bus_theta = DMatrix::zeros(n, stored);
    let mut rotor_delta = DMatrix::zeros(g, stored);
    let mut delta = delta0.to_vec();
    let mut omega = omega0.to_vec();
    let reference = delta0.first().copied().unwrap_or(0.0);
    let mut prev_arg = vec![0.0; n];

    let phase_at = |t: f64| -> &ReducedNetwork {
        let mut current = &phases[0].network;
        for p in phases {
            if t + 1e-9 >= p.start {
                current = &p.network;
            }
        }
        current
    };

    let mut final_time = 0.0;
    let mut early_stop = false;
    for k in 0..total {
        let t = schedule.time(k);
        final_time = t;
        if k < stored {
            let net = phase_at(t);
            let v = net.bus_voltages(&machines.emf, &delta);
            for (i, vi) in v.iter().enumerate() {
                let arg = vi.arg();
                bus_theta[(i, k)] = if k == 0 {
                    reference + wrap_angle(arg - reference)
                } else {
                    bus_theta[(i, k - 1)] + wrap_angle(arg - prev_arg[i])
                };
                prev_arg[i] = arg;
            }
            for i in 0..g {
                rotor_delta[(i, k)] = delta[i];
            }
            times.push(t);
        }
        if k + 1 == total {
            break;
        }
        let dt = schedule.time(k + 1) - t;
        rk4_step(machines, phase_at(t), dt, &mut delta, &mut omega);
        if omega.iter().any(|w| !w.is_finite() || w.abs() > BLOW_UP_SPEED) {
            early_stop = true;
            final_time = schedule.time(k + 1);
            break;
        }
    }
    let kept = times.len();
    Trajectory {
        times,
        bus_theta: bus_theta.columns(0, kept).into_owned(),
        rotor_delta: rotor_delta.columns(0, kept).into_owned(),
        final_delta: delta,
        final_omega: omega,
        final_time,
        early_stop,
    }
}

/// Transient stability index from final rotor angles:
/// `η = (2π − Δδ_max) / (2π + Δδ_max)`, label 1 iff `η > 0`.
pub fn tsi(rotor_delta_final: &[f64]) -> Result<(f64, u8)> {
    if rotor_delta_final.len() < 2 {
        return Err(Error::InvalidInput("TSI needs at least two generators".into()));
    }
    let max = rotor_delta_final.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = rotor_delta_final.iter().cloned().fold(f64::INFINITY, f64::min);
    let sep = (max - min).abs();
    let eta = (2.0 * PI - sep) / (2.0 * PI + sep);
    Ok((eta, u8::from(eta > 0.0)))
}

/// Everything needed to integrate one scenario.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub machines: Machines,
    pub phases: Vec<NetworkPhase>,
    pub delta0: Vec<f64>,
    pub prefault: PowerFlowSolution,
}

fn reduce(
    case: &GridCase,
    removed_branch: Option<usize>,
    fault_bus: Option<usize>,
    load_admittance: &[C64],
    gen_admittance: &[C64],
    emf: &[f64],
) -> Result<ReducedNetwork> {
    let n = case.n_buses();
    let g = case.generators.len();
    let mut y = DMatrix::<C64>::zeros(n, n);
    for (l, br) in case.branches.iter().enumerate() {
        if Some(l) == removed_branch {
            continue;
        }
        let (i, j) = (br.from - 1, br.to - 1);
        let yl = C64::new(0.0, -1.0 / br.x);
        y[(i, i)] += yl;
        y[(j, j)] += yl;
        y[(i, j)] -= yl;
        y[(j, i)] -= yl;
    }
    for i in 0..n {
        y[(i, i)] += load_admittance[i];
    }
    let mut src = DMatrix::<C64>::zeros(n, g);
    for (k, gen) in case.generators.iter().enumerate() {
        y[(gen.bus - 1, gen.bus - 1)] += gen_admittance[k];
        src[(gen.bus - 1, k)] = gen_admittance[k];
    }
    if let Some(b) = fault_bus {
        y[(b - 1, b - 1)] += C64::new(FAULT_SHUNT, 0.0);
    }
    let recovery = y
        .lu()
        .solve(&src)
        .ok_or_else(|| Error::Numerical("singular augmented admittance matrix".into()))?;
    let mut reduced = DMatrix::<C64>::zeros(g, g);
    for (k, gen) in case.generators.iter().enumerate() {
        reduced[(k, k)] += gen_admittance[k];
        for m in 0..g {
            reduced[(k, m)] -= gen_admittance[k] * recovery[(gen.bus - 1, m)];
        }
    }
    Ok(ReducedNetwork::new(reduced, recovery, emf))
}

/// Solves the pre-fault power flow, computes internal EMFs and builds the
/// reduced network of every phase.
pub fn prepare(case: &GridCase, scenario: &Scenario) -> Result<PreparedScenario> {
    if case.generators.is_empty() {
        return Err(Error::InvalidInput("case has no generators".into()));
    }
    if let Some(f) = &scenario.fault {
        f.check(case)?;
        if !is_connected(case, &[f.faulted_branch]) {
            return Err(Error::ScenarioInvalid(format!(
                "removing branch {} disconnects the network",
                f.faulted_branch
            )));
        }
    }
    let pf = powerflow::solve(case, &scenario.load_scale)?;
    if !pf.converged {
        return Err(Error::ScenarioInvalid(format!(
            "pre-fault power flow did not converge (mismatch {:e})",
            pf.max_mismatch
        )));
    }
    let n = case.n_buses();
    let v: Vec<C64> = (0..n).map(|i| C64::from_polar(pf.vmag[i], pf.theta[i])).collect();
    let load_admittance: Vec<C64> = case
        .buses
        .iter()
        .zip(&scenario.load_scale)
        .enumerate()
        .map(|(i, (b, s))| C64::new(b.p_load * s, -b.q_load * s) / (pf.vmag[i] * pf.vmag[i]))
        .collect();
    let mut emf = Vec::new();
    let mut delta0 = Vec::new();
    let mut gen_admittance = Vec::new();
    for gen in &case.generators {
        let i = gen.bus - 1;
        let s = scenario.load_scale[i];
        let sg = C64::new(
            pf.p_inj[i] + case.buses[i].p_load * s,
            pf.q_inj[i] + case.buses[i].q_load * s,
        );
        let current = (sg / v[i]).conj();
        let e = v[i] + C64::new(0.0, gen.xd_prime) * current;
        emf.push(e.norm());
        delta0.push(e.arg());
        gen_admittance.push(C64::new(0.0, -1.0 / gen.xd_prime));
    }
    let build = |removed, fault_bus| reduce(case, removed, fault_bus, &load_admittance, &gen_admittance, &emf);
    let mut phases = vec![NetworkPhase {
        start: 0.0,
        network: build(None, None)?,
    }];
    if let Some(f) = &scenario.fault {
        let bus = f.faulted_bus(case);
        phases.push(NetworkPhase {
            start: f.t_apply,
            network: build(None, Some(bus))?,
        });
        phases.push(NetworkPhase {
            start: f.t_clear_near,
            network: build(Some(f.faulted_branch), Some(bus))?,
        });
        phases.push(NetworkPhase {
            start: f.t_clear_remote,
            network: build(Some(f.faulted_branch), None)?,
        });
    }
    // mechanical power balances the pre-fault electrical output exactly
    let mut p_mech = vec![0.0; emf.len()];
    phases[0].network.electrical_power(&delta0, &mut p_mech);
    let machines = Machines {
        inertia: case.generators.iter().map(|g| g.inertia).collect(),
        damping: case.generators.iter().map(|g| g.damping).collect(),
        p_mech,
        emf,
    };
    Ok(PreparedScenario {
        machines,
        phases,
        delta0,
        prefault: pf,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub schedule: StepSchedule,
    /// Samples after this time are not kept in the record.
    pub store_until: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            schedule: StepSchedule::default(),
            store_until: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub scenario: Scenario,
    pub schedule: StepSchedule,
    pub times: Vec<f64>,
    pub bus_theta: DMatrix<f64>,
    pub rotor_delta: DMatrix<f64>,
    pub final_rotor_delta: Vec<f64>,
    pub final_time: f64,
    pub early_stop: bool,
    pub label: u8,
    pub tsi: f64,
    pub prefault: PowerFlowSolution,
}

pub fn simulate(case: &GridCase, scenario: &Scenario, options: &SimulationOptions) -> Result<TrajectoryRecord> {
    let prep = prepare(case, scenario)?;
    let g = prep.machines.len();
    let traj = integrate(
        &prep.machines,
        &prep.phases,
        &options.schedule,
        &prep.delta0,
        &vec![0.0; g],
        options.store_until,
    );
    let (tsi_value, label) = if traj.early_stop {
        // limit of the index as the separation grows without bound
        (-1.0, 0)
    } else if g >= 2 {
        tsi(&traj.final_delta)?
    } else {
        (1.0, 1)
    };
    Ok(TrajectoryRecord {
        scenario: scenario.clone(),
        schedule: options.schedule,
        times: traj.times,
        bus_theta: traj.bus_theta,
        rotor_delta: traj.rotor_delta,
        final_rotor_delta: traj.final_delta,
        final_time: traj.final_time,
        early_stop: traj.early_stop,
        label,
        tsi: tsi_value,
        prefault: prep.prefault,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub load_low: f64,
    pub load_high: f64,
    pub load_draws: usize,
    /// Faulted branches sampled per load draw; `None` sweeps every eligible branch.
    pub branches_per_draw: Option<usize>,
    pub ends: Vec<FaultEnd>,
    pub options: SimulationOptionsConfig,
}

/// Serializable subset of [`SimulationOptions`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationOptionsConfig {
    pub schedule: StepSchedule,
    pub store_until: f64,
}

impl From<SimulationOptionsConfig> for SimulationOptions {
    fn from(c: SimulationOptionsConfig) -> Self {
        SimulationOptions {
            schedule: c.schedule,
            store_until: c.store_until,
        }
    }
}

impl Default for SimulationOptionsConfig {
    fn default() -> Self {
        SimulationOptionsConfig {
            schedule: StepSchedule::default(),
            store_until: 0.5,
        }
    }
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            load_low: 0.8,
            load_high: 1.2,
            load_draws: 2,
            branches_per_draw: None,
            ends: vec![FaultEnd::Near, FaultEnd::Remote],
            options: SimulationOptionsConfig::default(),
        }
    }
}

/// Branches that may be faulted: not a generator step-up transformer and
/// not a bridge.
pub fn faultable_branches(case: &GridCase) -> Vec<usize> {
    let gens = case.generator_buses();
    (0..case.n_branches())
        .filter(|&l| {
            let br = &case.branches[l];
            !(br.transformer && (gens.contains(&br.from) || gens.contains(&br.to)))
        })
        .filter(|&l| is_connected(case, &[l]))
        .collect()
}

/// Enumerates the scenario sweep of one topology.
pub fn scenarios_for(topology: &Topology, topo_index: usize, config: &CampaignConfig, stage_seed: u64) -> Result<Vec<Scenario>> {
    let case = &topology.case;
    let topo_seed = seed::item(stage_seed, topo_index as u64);
    let eligible = faultable_branches(case);
    let mut out = Vec::new();
    for l in 0..config.load_draws {
        let draw_seed = seed::item(topo_seed, l as u64);
        let load_scale = powerflow::scale_loads(case, config.load_low, config.load_high, draw_seed)?;
        let branches: Vec<usize> = match config.branches_per_draw {
            Some(k) if k < eligible.len() => {
                let mut rng = seed::rng(seed::item(draw_seed, u64::MAX));
                let mut picked: Vec<usize> = sample(&mut rng, eligible.len(), k).into_iter().map(|i| eligible[i]).collect();
                picked.sort_unstable();
                picked
            }
            _ => eligible.clone(),
        };
        for &b in &branches {
            for &end in &config.ends {
                out.push(Scenario {
                    id: format!("{}-l{:03}-b{:03}-{}", topology.id, l, b, end.as_str()),
                    topology_id: topology.id.clone(),
                    load_scale: load_scale.clone(),
                    fault: Some(FaultSpec::new(b, end)),
                    seed: draw_seed,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub scenarios: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub stable: usize,
    pub unstable: usize,
}

impl CampaignSummary {
    pub fn stable_ratio(&self) -> f64 {
        self.stable as f64 / self.unstable.max(1) as f64
    }

    pub fn success_rate(&self) -> f64 {
        if self.scenarios == 0 {
            1.0
        } else {
            self.succeeded as f64 / self.scenarios as f64
        }
    }
}

const CHUNK: usize = 128;

/// Runs the Cartesian sweep over all topologies.
///
/// Records reach `sink` in sweep order regardless of worker count. Failed
/// scenarios are logged and counted, never fatal.
pub fn run_campaign(
    topologies: &[Topology],
    config: &CampaignConfig,
    stage_seed: u64,
    mut sink: impl FnMut(usize, TrajectoryRecord),
) -> Result<CampaignSummary> {
    let mut jobs = Vec::new();
    for (ti, topo) in topologies.iter().enumerate() {
        for sc in scenarios_for(topo, ti, config, stage_seed)? {
            jobs.push((ti, sc));
        }
    }
    let options: SimulationOptions = config.options.into();
    let mut summary = CampaignSummary {
        scenarios: jobs.len(),
        ..Default::default()
    };
    for chunk in jobs.chunks(CHUNK) {
        let results = par::map(chunk, |(ti, sc)| simulate(&topologies[*ti].case, sc, &options));
        for ((ti, sc), res) in chunk.iter().zip(results) {
            match res {
                Ok(rec) => {
                    summary.succeeded += 1;
                    if rec.label == 1 {
                        summary.stable += 1;
                    } else {
                        summary.unstable += 1;
                    }
                    sink(*ti, rec);
                }
                Err(e) => {
                    summary.failed += 1;
                    log::warn!("scenario {} skipped: {e}", sc.id);
                }
            }
        }
    }
    Ok(summary)
}
