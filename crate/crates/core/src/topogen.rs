//! Random topology alteration.
//!
//! Two protocols: `swap4` removes four branches and connects four previously
//! unconnected bus pairs (bus and branch counts unchanged); `remove_m` drops
//! `m ∈ {1, 2, 3}` branches. Candidates are rejection-sampled until the altered
//! network is connected and its base-load power flow is feasible.

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::grid::format::{parse_f64, parse_usize, real};
use crate::grid::{edge_key, is_connected, parse_sections, Branch, GridCase};
use crate::powerflow;
use crate::{seed, Error, Result};

pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopologyKind {
    Swap4,
    RemoveM(usize),
}

impl TopologyKind {
    pub fn label(self) -> String {
        match self {
            TopologyKind::Swap4 => "swap4".into(),
            TopologyKind::RemoveM(m) => format!("remove{m}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "swap4" => Some(TopologyKind::Swap4),
            "remove1" => Some(TopologyKind::RemoveM(1)),
            "remove2" => Some(TopologyKind::RemoveM(2)),
            "remove3" => Some(TopologyKind::RemoveM(3)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AddedEdge {
    pub from: usize,
    pub to: usize,
    pub x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub base_case_id: String,
    /// Indices into the base case's branch list, ascending.
    pub removed_edges: Vec<usize>,
    pub added_edges: Vec<AddedEdge>,
    pub seed: u64,
    pub kind: TopologyKind,
}

impl TopologySpec {
    /// The unaltered base case.
    pub fn identity(base: &GridCase) -> Self {
        TopologySpec {
            base_case_id: base.name.clone(),
            removed_edges: Vec::new(),
            added_edges: Vec::new(),
            seed: 0,
            kind: TopologyKind::RemoveM(0),
        }
    }

    /// Builds the altered case: base branches minus the removed ones (order
    /// kept), followed by the added branches.
    pub fn apply(&self, base: &GridCase) -> Result<GridCase> {
        if let Some(&l) = self.removed_edges.iter().find(|&&l| l >= base.n_branches()) {
            return Err(Error::InvalidInput(format!("removed branch index {l} out of range")));
        }
        let mut case = base.without_branches(&self.removed_edges);
        case.branches.extend(self.added_edges.iter().map(|e| Branch {
            from: e.from,
            to: e.to,
            x: e.x,
            transformer: false,
        }));
        Ok(case)
    }
}

/// A generated topology: its spec, the applied case and a stable id.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub id: String,
    pub spec: TopologySpec,
    pub case: GridCase,
}

impl Topology {
    pub fn new(id: impl Into<String>, spec: TopologySpec, base: &GridCase) -> Result<Self> {
        let case = spec.apply(base)?;
        Ok(Topology {
            id: id.into(),
            spec,
            case,
        })
    }

    /// Case sections followed by a `[provenance]` section.
    pub fn to_text(&self) -> String {
        let mut s = self.case.to_text();
        let _ = writeln!(s);
        let _ = writeln!(s, "[provenance]");
        let _ = writeln!(s, "id {}", self.id);
        let _ = writeln!(s, "base {}", self.spec.base_case_id);
        let _ = writeln!(s, "kind {}", self.spec.kind.label());
        let _ = writeln!(s, "seed {}", self.spec.seed);
        let removed: Vec<String> = self.spec.removed_edges.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "removed {}", removed.join(" "));
        for e in &self.spec.added_edges {
            let _ = writeln!(s, "added {} {} {}", e.from, e.to, real(e.x));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let sections = parse_sections(text)?;
        let case = GridCase::from_sections(&sections)?;
        case.validate()?;
        let prov = sections
            .iter()
            .find(|s| s.name == "provenance")
            .ok_or_else(|| Error::parse(0, "missing [provenance] section"))?;
        let single = |key: &str| -> Result<String> {
            match prov.get(key) {
                Some([v]) => Ok(v.clone()),
                _ => Err(Error::parse(0, format!("provenance field `{key}` missing"))),
            }
        };
        let kind_label = single("kind")?;
        let kind = TopologyKind::parse(&kind_label)
            .or_else(|| (kind_label == "remove0").then_some(TopologyKind::RemoveM(0)))
            .ok_or_else(|| Error::parse(0, format!("unknown topology kind `{kind_label}`")))?;
        let seed = single("seed")?
            .parse::<u64>()
            .map_err(|_| Error::parse(0, "bad seed"))?;
        let mut removed_edges = Vec::new();
        let mut added_edges = Vec::new();
        for (line, t) in &prov.rows {
            match t[0].as_str() {
                "removed" => {
                    for tok in &t[1..] {
                        removed_edges.push(parse_usize(*line, tok)?);
                    }
                }
                "added" => {
                    if t.len() != 4 {
                        return Err(Error::parse(*line, "added edge needs `from to x`"));
                    }
                    added_edges.push(AddedEdge {
                        from: parse_usize(*line, &t[1])?,
                        to: parse_usize(*line, &t[2])?,
                        x: parse_f64(*line, &t[3])?,
                    });
                }
                _ => {}
            }
        }
        Ok(Topology {
            id: single("id")?,
            spec: TopologySpec {
                base_case_id: single("base")?,
                removed_edges,
                added_edges,
                seed,
                kind,
            },
            case,
        })
    }
}

/// Uniform draw from the base case's `[min, max]` branch reactance range.
pub fn new_edge_reactance(base: &GridCase, rng: &mut seed::Rng) -> f64 {
    let (lo, hi) = base
        .branches
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b.x), hi.max(b.x)));
    if lo >= hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Branches that may be removed: those not touching a generator bus.
pub fn removal_candidates(base: &GridCase) -> Vec<usize> {
    let gens = base.generator_buses();
    base.branches
        .iter()
        .enumerate()
        .filter(|(_, b)| !gens.contains(&b.from) && !gens.contains(&b.to))
        .map(|(l, _)| l)
        .collect()
}

/// Connected, and the power flow at base load converges within the π/2
/// branch-angle limit.
pub fn passes_screens(base: &GridCase, spec: &TopologySpec) -> Result<bool> {
    let case = spec.apply(base)?;
    if !is_connected(&case, &[]) {
        return Ok(false);
    }
    let sol = match powerflow::solve(&case, &vec![1.0; case.n_buses()]) {
        Ok(sol) => sol,
        Err(Error::Numerical(_)) => return Ok(false),
        Err(e) => return Err(e),
    };
    Ok(powerflow::is_feasible(&case, &sol))
}

pub fn generate_swap_topology(base: &GridCase, rng_seed: u64) -> Result<TopologySpec> {
    const SWAPS: usize = 4;
    let candidates = removal_candidates(base);
    let n = base.n_buses();
    let existing: HashSet<(usize, usize)> = base.branches.iter().map(Branch::key).collect();
    let free_pairs = n * n.saturating_sub(1) / 2 - existing.len();
    if candidates.len() < SWAPS || free_pairs < SWAPS {
        return Err(Error::GenerationExhausted { attempts: 0 });
    }
    let mut rng = seed::rng(rng_seed);
    for _ in 0..MAX_REJECTIONS {
        let mut removed: Vec<usize> = sample(&mut rng, candidates.len(), SWAPS)
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        removed.sort_unstable();
        let mut chosen = HashSet::new();
        let mut added = Vec::with_capacity(SWAPS);
        while added.len() < SWAPS {
            let a = rng.gen_range(1..=n);
            let b = rng.gen_range(1..=n);
            if a == b {
                continue;
            }
            let key = edge_key(a, b);
            if existing.contains(&key) || !chosen.insert(key) {
                continue;
            }
            added.push(AddedEdge {
                from: key.0,
                to: key.1,
                x: new_edge_reactance(base, &mut rng),
            });
        }
        let spec = TopologySpec {
            base_case_id: base.name.clone(),
            removed_edges: removed,
            added_edges: added,
            seed: rng_seed,
            kind: TopologyKind::Swap4,
        };
        if passes_screens(base, &spec)? {
            return Ok(spec);
        }
    }
    Err(Error::GenerationExhausted {
        attempts: MAX_REJECTIONS,
    })
}

pub fn generate_removal_topology(base: &GridCase, m: usize, rng_seed: u64) -> Result<TopologySpec> {
    if !(1..=3).contains(&m) {
        return Err(Error::InvalidParameter(format!("m must be 1, 2 or 3, got {m}")));
    }
    let candidates = removal_candidates(base);
    if candidates.len() < m {
        return Err(Error::GenerationExhausted { attempts: 0 });
    }
    let mut rng = seed::rng(rng_seed);
    for _ in 0..MAX_REJECTIONS {
        let mut removed: Vec<usize> = sample(&mut rng, candidates.len(), m)
            .into_iter()
            .map(|k| candidates[k])
            .collect();
        removed.sort_unstable();
        let spec = TopologySpec {
            base_case_id: base.name.clone(),
            removed_edges: removed,
            added_edges: Vec::new(),
            seed: rng_seed,
            kind: TopologyKind::RemoveM(m),
        };
        if passes_screens(base, &spec)? {
            return Ok(spec);
        }
    }
    Err(Error::GenerationExhausted {
        attempts: MAX_REJECTIONS,
    })
}

/// Generates `count` topologies of one kind with item seeds derived from
/// `stage_seed`. Ids are `<kind>-<index>`.
pub fn generate_many(
    base: &GridCase,
    kind: TopologyKind,
    count: usize,
    stage_seed: u64,
) -> Vec<Result<Topology>> {
    crate::par::map_range(count, |i| {
        let s = seed::item(stage_seed, i as u64);
        let spec = match kind {
            TopologyKind::Swap4 => generate_swap_topology(base, s)?,
            TopologyKind::RemoveM(m) => generate_removal_topology(base, m, s)?,
        };
        Topology::new(format!("{}-{:04}", kind.label(), i), spec, base)
    })
}
