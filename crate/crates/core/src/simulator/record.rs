//! Trajectory record files: a `[record]` header followed by dense numeric
//! blocks (`[times]`, `[bus_theta]`, `[rotor_delta]`), one row per bus or
//! generator and one column per sample, 12 significant digits.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use super::{FaultEnd, FaultSpec, Scenario, StepSchedule, TrajectoryRecord};
use crate::grid::format::{parse_f64, parse_usize};
use crate::grid::{parse_sections, Section};
use crate::powerflow::PowerFlowSolution;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

fn num(x: f64) -> String {
    format!("{x:.11e}")
}

fn row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(num).collect::<Vec<_>>().join(" ")
}

pub fn write_record(rec: &TrajectoryRecord) -> String {
    let mut s = String::new();
    let sc = &rec.scenario;
    let _ = writeln!(s, "[record]");
    let _ = writeln!(s, "version {FORMAT_VERSION}");
    let _ = writeln!(s, "scenario {}", sc.id);
    let _ = writeln!(s, "topology {}", sc.topology_id);
    let _ = writeln!(s, "seed {}", sc.seed);
    match &sc.fault {
        Some(f) => {
            let _ = writeln!(
                s,
                "fault {} {} {} {} {}",
                f.faulted_branch,
                f.faulted_end.as_str(),
                num(f.t_apply),
                num(f.t_clear_near),
                num(f.t_clear_remote)
            );
        }
        None => {
            let _ = writeln!(s, "fault none");
        }
    }
    let _ = writeln!(s, "label {}", rec.label);
    let _ = writeln!(s, "tsi {}", num(rec.tsi));
    let _ = writeln!(s, "early_stop {}", u8::from(rec.early_stop));
    let _ = writeln!(s, "final_time {}", num(rec.final_time));
    let sch = &rec.schedule;
    let _ = writeln!(
        s,
        "schedule {} {} {} {}",
        num(sch.fine_dt),
        num(sch.coarse_dt),
        num(sch.switch_time),
        num(sch.end_time)
    );
    let _ = writeln!(s, "load_scale {}", row(sc.load_scale.iter().copied()));
    let _ = writeln!(s, "final_rotor_delta {}", row(rec.final_rotor_delta.iter().copied()));
    let pf = &rec.prefault;
    let _ = writeln!(
        s,
        "pf {} {} {}",
        u8::from(pf.converged),
        pf.iterations,
        num(pf.max_mismatch)
    );
    let _ = writeln!(s, "pf_theta {}", row(pf.theta.iter().copied()));
    let _ = writeln!(s, "pf_vmag {}", row(pf.vmag.iter().copied()));
    let _ = writeln!(s, "pf_p {}", row(pf.p_inj.iter().copied()));
    let _ = writeln!(s, "pf_q {}", row(pf.q_inj.iter().copied()));
    let _ = writeln!(s, "\n[times]");
    let _ = writeln!(s, "{}", row(rec.times.iter().copied()));
    let _ = writeln!(s, "\n[bus_theta]");
    for r in rec.bus_theta.row_iter() {
        let _ = writeln!(s, "{}", row(r.iter().copied()));
    }
    let _ = writeln!(s, "\n[rotor_delta]");
    for r in rec.rotor_delta.row_iter() {
        let _ = writeln!(s, "{}", row(r.iter().copied()));
    }
    s
}

fn floats(line: usize, toks: &[String]) -> Result<Vec<f64>> {
    toks.iter().map(|t| parse_f64(line, t)).collect()
}

fn block(section: &Section, cols: usize) -> Result<DMatrix<f64>> {
    let rows = section.rows.len();
    let mut m = DMatrix::zeros(rows, cols);
    for (r, (line, toks)) in section.rows.iter().enumerate() {
        if toks.len() != cols {
            return Err(Error::parse(*line, format!("expected {cols} samples, found {}", toks.len())));
        }
        for (c, t) in toks.iter().enumerate() {
            m[(r, c)] = parse_f64(*line, t)?;
        }
    }
    Ok(m)
}

pub fn read_record(text: &str) -> Result<TrajectoryRecord> {
    let sections = parse_sections(text)?;
    let get = |name: &str| {
        sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::parse(0, format!("missing [{name}] section")))
    };
    let head = get("record")?;
    let field = |key: &str| -> Result<(usize, &[String])> {
        head.rows
            .iter()
            .find(|(_, t)| t[0] == key)
            .map(|(l, t)| (*l, &t[1..]))
            .ok_or_else(|| Error::parse(0, format!("missing record field `{key}`")))
    };
    let one = |key: &str| -> Result<(usize, String)> {
        match field(key)? {
            (l, [v]) => Ok((l, v.clone())),
            (l, _) => Err(Error::parse(l, format!("field `{key}` takes one value"))),
        }
    };
    let (l, version) = one("version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::parse(l, format!("unsupported record version {version}")));
    }
    let (_, id) = one("scenario")?;
    let (_, topology_id) = one("topology")?;
    let (l, seed) = one("seed")?;
    let seed = seed.parse::<u64>().map_err(|_| Error::parse(l, "bad seed"))?;
    let (l, fault_toks) = field("fault")?;
    let fault = match fault_toks {
        [none] if none == "none" => None,
        [b, end, ta, tn, tr] => Some(FaultSpec {
            faulted_branch: parse_usize(l, b)?,
            faulted_end: FaultEnd::parse(end).ok_or_else(|| Error::parse(l, "bad fault end"))?,
            t_apply: parse_f64(l, ta)?,
            t_clear_near: parse_f64(l, tn)?,
            t_clear_remote: parse_f64(l, tr)?,
        }),
        _ => return Err(Error::parse(l, "malformed fault field")),
    };
    let (l, label) = one("label")?;
    let label = match label.as_str() {
        "0" => 0,
        "1" => 1,
        _ => return Err(Error::parse(l, "label must be 0 or 1")),
    };
    let (l, v) = one("tsi")?;
    let tsi = parse_f64(l, &v)?;
    let (_, v) = one("early_stop")?;
    let early_stop = v == "1";
    let (l, v) = one("final_time")?;
    let final_time = parse_f64(l, &v)?;
    let (l, sch) = field("schedule")?;
    let sch = floats(l, sch)?;
    if sch.len() != 4 {
        return Err(Error::parse(l, "schedule takes four values"));
    }
    let schedule = StepSchedule {
        fine_dt: sch[0],
        coarse_dt: sch[1],
        switch_time: sch[2],
        end_time: sch[3],
    };
    let (l, v) = field("load_scale")?;
    let load_scale = floats(l, v)?;
    let (l, v) = field("final_rotor_delta")?;
    let final_rotor_delta = floats(l, v)?;
    let (l, pf_toks) = field("pf")?;
    if pf_toks.len() != 3 {
        return Err(Error::parse(l, "pf takes three values"));
    }
    let (lt, t) = field("pf_theta")?;
    let (lv, v) = field("pf_vmag")?;
    let (lp, p) = field("pf_p")?;
    let (lq, q) = field("pf_q")?;
    let prefault = PowerFlowSolution {
        converged: pf_toks[0] == "1",
        iterations: parse_usize(l, &pf_toks[1])?,
        max_mismatch: parse_f64(l, &pf_toks[2])?,
        theta: floats(lt, t)?,
        vmag: floats(lv, v)?,
        p_inj: floats(lp, p)?,
        q_inj: floats(lq, q)?,
    };
    let times_sec = get("times")?;
    let times = match times_sec.rows.as_slice() {
        [(l, toks)] => floats(*l, toks)?,
        [] => Vec::new(),
        _ => return Err(Error::parse(times_sec.rows[1].0, "[times] is a single row")),
    };
    let bus_theta = block(get("bus_theta")?, times.len())?;
    let rotor_delta = block(get("rotor_delta")?, times.len())?;
    Ok(TrajectoryRecord {
        scenario: Scenario {
            id,
            topology_id,
            load_scale,
            fault,
            seed,
        },
        schedule,
        times,
        bus_theta,
        rotor_delta,
        final_rotor_delta,
        final_time,
        early_stop,
        label,
        tsi,
        prefault,
    })
}
