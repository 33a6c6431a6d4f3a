//! Plain-text case format.
//!
//! ```text
//! [meta]
//! name ieee39
//! base_mva 1.000000000000e2
//! frequency_hz 5.000000000000e1
//!
//! [buses]
//! # id type vm p_load q_load
//! 1 PQ 1.000000000000e0 9.760000000000e-1 4.420000000000e-1
//! ...
//! [branches]
//! # from to x transformer
//! [generators]
//! # bus inertia damping xd_prime p_mech
//! ```
//!
//! Reals are written with 13 significant digits. Blank lines and lines
//! starting with `#` are ignored by the reader; other sections (such as
//! `[provenance]`) are skipped by [`GridCase::from_text`].

use std::fmt::Write as _;

use super::{Branch, Bus, BusType, Generator, GridCase};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    /// (1-based line number, whitespace-separated tokens)
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&[String]> {
        self.rows
            .iter()
            .find(|(_, t)| t.first().map(String::as_str) == Some(key))
            .map(|(_, t)| &t[1..])
    }
}

pub fn parse_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            sections.push(Section {
                name: name.trim().to_string(),
                rows: Vec::new(),
            });
            continue;
        }
        let Some(current) = sections.last_mut() else {
            return Err(Error::parse(i + 1, "data before the first section header"));
        };
        current
            .rows
            .push((i + 1, line.split_whitespace().map(str::to_string).collect()));
    }
    Ok(sections)
}

pub(crate) fn real(x: f64) -> String {
    format!("{x:.12e}")
}

pub(crate) fn parse_f64(line: usize, tok: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::parse(line, format!("expected a number, found `{tok}`")))
}

pub(crate) fn parse_usize(line: usize, tok: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::parse(line, format!("expected an integer, found `{tok}`")))
}

fn expect_len(line: usize, tokens: &[String], n: usize) -> Result<()> {
    if tokens.len() != n {
        return Err(Error::parse(
            line,
            format!("expected {n} fields, found {}", tokens.len()),
        ));
    }
    Ok(())
}

/// Appends the four case sections to `out`.
pub fn write_case(case: &GridCase, out: &mut String) {
    let _ = writeln!(out, "[meta]");
    let _ = writeln!(out, "name {}", case.name);
    let _ = writeln!(out, "base_mva {}", real(case.base_mva));
    let _ = writeln!(out, "frequency_hz {}", real(case.frequency_hz));
    let _ = writeln!(out);
    let _ = writeln!(out, "[buses]");
    let _ = writeln!(out, "# id type vm p_load q_load");
    for b in &case.buses {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            b.id,
            b.kind.as_str(),
            real(b.vm),
            real(b.p_load),
            real(b.q_load)
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[branches]");
    let _ = writeln!(out, "# from to x transformer");
    for br in &case.branches {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            br.from,
            br.to,
            real(br.x),
            u8::from(br.transformer)
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[generators]");
    let _ = writeln!(out, "# bus inertia damping xd_prime p_mech");
    for g in &case.generators {
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            g.bus,
            real(g.inertia),
            real(g.damping),
            real(g.xd_prime),
            real(g.p_mech)
        );
    }
}

impl GridCase {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        write_case(self, &mut s);
        s
    }

    /// Parses and validates a case.
    pub fn from_text(text: &str) -> Result<Self> {
        let case = Self::from_sections(&parse_sections(text)?)?;
        case.validate()?;
        Ok(case)
    }

    /// Builds a case from parsed sections without validating it.
    pub fn from_sections(sections: &[Section]) -> Result<Self> {
        let find = |name: &str| {
            sections
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| Error::parse(0, format!("missing [{name}] section")))
        };
        let meta = find("meta")?;
        let meta_value = |key: &str| -> Result<&str> {
            match meta.get(key) {
                Some([v]) => Ok(v.as_str()),
                _ => Err(Error::parse(0, format!("meta field `{key}` missing or malformed"))),
            }
        };
        let name = meta_value("name")?.to_string();
        let base_mva = parse_f64(0, meta_value("base_mva")?)?;
        let frequency_hz = parse_f64(0, meta_value("frequency_hz")?)?;

        let mut buses = Vec::new();
        for (line, t) in &find("buses")?.rows {
            expect_len(*line, t, 5)?;
            buses.push(Bus {
                id: parse_usize(*line, &t[0])?,
                kind: BusType::parse(&t[1])
                    .ok_or_else(|| Error::parse(*line, format!("unknown bus type `{}`", t[1])))?,
                vm: parse_f64(*line, &t[2])?,
                p_load: parse_f64(*line, &t[3])?,
                q_load: parse_f64(*line, &t[4])?,
            });
        }
        let mut branches = Vec::new();
        for (line, t) in &find("branches")?.rows {
            expect_len(*line, t, 4)?;
            branches.push(Branch {
                from: parse_usize(*line, &t[0])?,
                to: parse_usize(*line, &t[1])?,
                x: parse_f64(*line, &t[2])?,
                transformer: match t[3].as_str() {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::parse(*line, format!("bad transformer flag `{other}`"))),
                },
            });
        }
        let mut generators = Vec::new();
        for (line, t) in &find("generators")?.rows {
            expect_len(*line, t, 5)?;
            generators.push(Generator {
                bus: parse_usize(*line, &t[0])?,
                inertia: parse_f64(*line, &t[1])?,
                damping: parse_f64(*line, &t[2])?,
                xd_prime: parse_f64(*line, &t[3])?,
                p_mech: parse_f64(*line, &t[4])?,
            });
        }
        Ok(GridCase {
            name,
            base_mva,
            frequency_hz,
            buses,
            branches,
            generators,
        })
    }
}
