//! Sample files (`samples/<variant>/<topology>/<scenario>.rec`) and the
//! split manifest. Matrix entries use Rust's shortest round-trip float
//! formatting, so reading a sample back is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use super::{GedfSample, Variant, Window};
use crate::grid::format::{parse_f64, parse_usize};
use crate::grid::parse_sections;
use crate::{Error, Result};

pub fn sample_path(root: &Path, variant: Variant, topology_id: &str, scenario_id: &str) -> PathBuf {
    root.join("samples")
        .join(variant.as_str())
        .join(topology_id)
        .join(format!("{scenario_id}.rec"))
}

pub fn write_sample(sample: &GedfSample) -> String {
    let mut s = String::new();
    let w = &sample.window;
    let _ = writeln!(s, "[sample]");
    let _ = writeln!(s, "variant {}", sample.variant.as_str());
    let _ = writeln!(s, "topology {}", sample.topology_id);
    let _ = writeln!(s, "scenario {}", sample.scenario_id);
    let _ = writeln!(s, "label {}", sample.label);
    let _ = writeln!(s, "window {:e} {:e} {}", w.t_start, w.dt, w.columns);
    let _ = writeln!(s, "shape {} {}", sample.matrix.nrows(), sample.matrix.ncols());
    let _ = writeln!(s, "\n[matrix]");
    for r in sample.matrix.row_iter() {
        let row: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn read_sample(text: &str) -> Result<GedfSample> {
    let sections = parse_sections(text)?;
    let find = |name: &str| {
        sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::parse(0, format!("missing [{name}] section")))
    };
    let head = find("sample")?;
    let field = |key: &str| -> Result<(usize, &[String])> {
        head.rows
            .iter()
            .find(|(_, t)| t[0] == key)
            .map(|(l, t)| (*l, &t[1..]))
            .ok_or_else(|| Error::parse(0, format!("missing sample field `{key}`")))
    };
    let single = |key: &str| -> Result<(usize, String)> {
        match field(key)? {
            (l, [v]) => Ok((l, v.clone())),
            (l, _) => Err(Error::parse(l, format!("field `{key}` takes one value"))),
        }
    };
    let (l, v) = single("variant")?;
    let variant = Variant::parse(&v).ok_or_else(|| Error::parse(l, format!("unknown variant `{v}`")))?;
    let (_, topology_id) = single("topology")?;
    let (_, scenario_id) = single("scenario")?;
    let (l, v) = single("label")?;
    let label = match v.as_str() {
        "0" => 0,
        "1" => 1,
        _ => return Err(Error::parse(l, "label must be 0 or 1")),
    };
    let window = match field("window")? {
        (l, [t, dt, c]) => Window {
            t_start: parse_f64(l, t)?,
            dt: parse_f64(l, dt)?,
            columns: parse_usize(l, c)?,
        },
        (l, _) => return Err(Error::parse(l, "window takes three values")),
    };
    let (rows, cols) = match field("shape")? {
        (l, [r, c]) => (parse_usize(l, r)?, parse_usize(l, c)?),
        (l, _) => return Err(Error::parse(l, "shape takes two values")),
    };
    let body = find("matrix")?;
    if body.rows.len() != rows {
        return Err(Error::parse(0, format!("expected {rows} matrix rows, found {}", body.rows.len())));
    }
    let mut matrix = DMatrix::zeros(rows, cols);
    for (r, (line, toks)) in body.rows.iter().enumerate() {
        if toks.len() != cols {
            return Err(Error::parse(*line, format!("expected {cols} columns, found {}", toks.len())));
        }
        for (c, t) in toks.iter().enumerate() {
            matrix[(r, c)] = parse_f64(*line, t)?;
        }
    }
    Ok(GedfSample {
        matrix,
        label,
        topology_id,
        scenario_id,
        window,
        variant,
    })
}

/// Split name to sample paths (relative to the dataset root).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub splits: BTreeMap<String, Vec<PathBuf>>,
}

pub fn write_manifest(manifest: &Manifest) -> String {
    let mut s = String::new();
    for (name, paths) in &manifest.splits {
        let _ = writeln!(s, "[{name}]");
        for p in paths {
            let _ = writeln!(s, "{}", p.display());
        }
        s.push('\n');
    }
    s
}

pub fn read_manifest(text: &str) -> Result<Manifest> {
    let mut splits = BTreeMap::new();
    for section in parse_sections(text)? {
        let mut paths = Vec::with_capacity(section.rows.len());
        for (line, toks) in section.rows {
            if toks.len() != 1 {
                return Err(Error::parse(line, "one path per line"));
            }
            paths.push(PathBuf::from(&toks[0]));
        }
        splits.insert(section.name, paths);
    }
    Ok(Manifest { splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_round_trip_is_exact() {
        let s = GedfSample {
            matrix: DMatrix::from_fn(3, 4, |i, j| ((i * 7 + j) as f64 * 0.1234567891).sin()),
            label: 0,
            topology_id: "swap4-0001".into(),
            scenario_id: "swap4-0001-l000-b003-near".into(),
            window: Window {
                t_start: 0.205,
                dt: 0.005,
                columns: 4,
            },
            variant: Variant::Raw,
        };
        assert_eq!(read_sample(&write_sample(&s)).unwrap(), s);
        let truncated: String = write_sample(&s).lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(read_sample(&truncated).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let mut m = Manifest::default();
        m.splits.insert("train".into(), vec![PathBuf::from("samples/gedf/a/b.rec")]);
        m.splits.insert("t2".into(), vec![]);
        assert_eq!(read_manifest(&write_manifest(&m)).unwrap(), m);
    }
}
