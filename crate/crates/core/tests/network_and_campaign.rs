//! Power flow on the shipped case, topology generation and campaign sweeps.

use std::collections::HashSet;

use gedf_core::grid::is_connected;
use gedf_core::simulator::{self, CampaignConfig, FaultEnd, TrajectoryRecord};
use gedf_core::topogen::{self, Topology, TopologyKind, TopologySpec};
use gedf_core::{case39, powerflow, seed, BusType, GridCase};
use nalgebra::{Complex, DMatrix};

type C64 = Complex<f64>;

fn base() -> GridCase {
    case39::load_case("ieee39").unwrap()
}

/// Complex bus powers `V ⊙ conj(Y V)` from a separately assembled
/// admittance matrix.
fn bus_powers(case: &GridCase, theta: &[f64], vmag: &[f64]) -> Vec<C64> {
    let n = case.n_buses();
    let mut y = DMatrix::<C64>::zeros(n, n);
    for br in &case.branches {
        let (i, j) = (br.from - 1, br.to - 1);
        let yl = C64::new(0.0, -1.0 / br.x);
        y[(i, i)] += yl;
        y[(j, j)] += yl;
        y[(i, j)] -= yl;
        y[(j, i)] -= yl;
    }
    let v: Vec<C64> = (0..n).map(|i| C64::from_polar(vmag[i], theta[i])).collect();
    (0..n)
        .map(|i| {
            let current: C64 = (0..n).map(|j| y[(i, j)] * v[j]).sum();
            v[i] * current.conj()
        })
        .collect()
}

#[test]
fn shipped_case_solves_to_tolerance() {
    let case = base();
    let scale = vec![1.0; case.n_buses()];
    let sol = powerflow::solve(&case, &scale).unwrap();
    assert!(sol.converged && sol.max_mismatch < 1e-8);
    let slack = case.slack_bus() - 1;
    assert_eq!(sol.theta[slack], 0.0);
    let s = bus_powers(&case, &sol.theta, &sol.vmag);
    let (p_sched, q_sched) = powerflow::scheduled_injections(&case, &scale);
    for (i, bus) in case.buses.iter().enumerate() {
        if i != slack {
            assert!((s[i].re - p_sched[i]).abs() < 1e-8, "P residual at bus {}", i + 1);
        }
        if bus.kind == BusType::Pq {
            assert!((s[i].im - q_sched[i]).abs() < 1e-8, "Q residual at bus {}", i + 1);
        } else {
            assert!((sol.vmag[i] - bus.vm).abs() < 1e-12);
        }
    }
    // lossless: generation equals load
    let total: f64 = s.iter().map(|x| x.re).sum();
    assert!(total.abs() < 1e-8);
    assert!(sol.p_inj.iter().sum::<f64>().abs() < 1e-8);
}

#[test]
fn relabeling_buses_permutes_the_solution() {
    let case = base();
    let n = case.n_buses();
    let perm = topogen_permutation(n, 9);
    let moved = case.relabel(&perm);
    moved.validate().unwrap();
    let a = powerflow::solve(&case, &vec![1.0; n]).unwrap();
    let b = powerflow::solve(&moved, &vec![1.0; n]).unwrap();
    for (i, &j) in perm.iter().enumerate() {
        assert!((a.theta[i] - b.theta[j]).abs() < 1e-8);
        assert!((a.vmag[i] - b.vmag[j]).abs() < 1e-8);
    }
}

fn topogen_permutation(n: usize, s: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(s));
    perm
}

#[test]
fn swap4_topology_preserves_counts_and_is_feasible() {
    let case = base();
    let spec = topogen::generate_swap_topology(&case, 1).unwrap();
    assert_eq!(spec.removed_edges.len(), 4);
    assert_eq!(spec.added_edges.len(), 4);
    for e in &spec.added_edges {
        assert!(!case.has_edge(e.from, e.to), "added edge {}-{} existed", e.from, e.to);
    }
    let altered = spec.apply(&case).unwrap();
    assert_eq!(altered.n_buses(), case.n_buses());
    assert_eq!(altered.n_branches(), case.n_branches());
    assert!(is_connected(&altered, &[]));
    let sol = powerflow::solve(&altered, &vec![1.0; altered.n_buses()]).unwrap();
    assert!(powerflow::is_feasible(&altered, &sol));
    assert_eq!(topogen::generate_swap_topology(&case, 1).unwrap(), spec);
}

#[test]
fn added_reactances_stay_in_the_base_range() {
    let case = base();
    let lo = case.branches.iter().map(|b| b.x).fold(f64::INFINITY, f64::min);
    let hi = case.branches.iter().map(|b| b.x).fold(0.0, f64::max);
    for s in 0..20 {
        for e in topogen::generate_swap_topology(&case, s).unwrap().added_edges {
            assert!(e.x >= lo && e.x <= hi);
        }
    }
}

#[test]
fn edge_removal_topologies() {
    let case = base();
    assert_eq!(case.n_branches(), 46);
    let one = topogen::generate_removal_topology(&case, 1, 4).unwrap();
    let altered = one.apply(&case).unwrap();
    assert_eq!(altered.n_branches(), 45);
    assert!(is_connected(&altered, &[]));
    let three = topogen::generate_removal_topology(&case, 3, 8).unwrap();
    assert_eq!((three.removed_edges.len(), three.added_edges.len()), (3, 0));
    assert_eq!(topogen::generate_removal_topology(&case, 3, 8).unwrap(), three);
}

#[test]
fn distinct_seeds_give_distinct_topologies() {
    let case = base();
    let specs: Vec<TopologySpec> = topogen::generate_many(&case, TopologyKind::Swap4, 100, 31)
        .into_iter()
        .map(|t| t.unwrap().spec)
        .collect();
    let distinct: HashSet<String> = specs
        .iter()
        .map(|s| format!("{:?} {:?}", s.removed_edges, s.added_edges.iter().map(|e| (e.from, e.to)).collect::<Vec<_>>()))
        .collect();
    assert!(distinct.len() >= 99, "{} distinct of 100", distinct.len());
    for s in &specs {
        assert!(is_connected(&s.apply(&case).unwrap(), &[]));
    }
}

fn small_campaign() -> CampaignConfig {
    CampaignConfig {
        load_draws: 2,
        branches_per_draw: Some(3),
        ends: vec![FaultEnd::Near, FaultEnd::Remote],
        ..Default::default()
    }
}

fn collect(topologies: &[Topology], config: &CampaignConfig, stage: u64) -> (simulator::CampaignSummary, Vec<TrajectoryRecord>) {
    let mut records = Vec::new();
    let summary = simulator::run_campaign(topologies, config, stage, |_, r| records.push(r)).unwrap();
    (summary, records)
}

#[test]
fn campaign_counts_and_determinism() {
    let case = base();
    let topo = Topology::new("base", TopologySpec::identity(&case), &case).unwrap();
    let config = small_campaign();
    let (summary, records) = collect(std::slice::from_ref(&topo), &config, 3);
    assert_eq!(summary.scenarios, 12);
    assert_eq!(summary.succeeded + summary.failed, 12);
    assert_eq!(records.len(), summary.succeeded);
    assert_eq!(summary.stable + summary.unstable, summary.succeeded);
    for r in &records {
        assert_eq!(r.label == 1, r.tsi > 0.0);
    }
    let (_, again) = collect(std::slice::from_ref(&topo), &config, 3);
    let text = |rs: &[TrajectoryRecord]| rs.iter().map(simulator::write_record).collect::<Vec<_>>();
    assert_eq!(text(&records), text(&again));
}

#[test]
fn desk_scale_class_ratio() {
    let case = base();
    let topologies: Vec<Topology> = topogen::generate_many(&case, TopologyKind::Swap4, 10, 101)
        .into_iter()
        .map(Result::unwrap)
        .collect();
    let config = CampaignConfig {
        load_draws: 4,
        branches_per_draw: Some(8),
        ..Default::default()
    };
    let (summary, _) = collect(&topologies, &config, 202);
    assert!(summary.success_rate() >= 0.95);
    let ratio = summary.stable_ratio();
    assert!((1.2..=3.5).contains(&ratio), "stable:unstable = {ratio:.2}:1 ({summary:?})");
}
