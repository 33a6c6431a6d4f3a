//! Shipped base cases.
//!
//! `ieee39` is the New England 39-bus system: static data from the common
//! MATPOWER deck (loads, branch reactances, generator dispatch and voltage
//! setpoints) and classical-model dynamics from the Athay/Pai dataset
//! (inertia H and transient reactance on a 100 MVA base). Inertia is stored
//! as `M = 2H / ω_s` at 50 Hz; damping is `D = M · 1 s⁻¹`. Resistances, line
//! charging and tap ratios are dropped because the network model is lossless.

use sha2::{Digest, Sha256};

use crate::grid::GridCase;
use crate::{powerflow, Error, Result};

const IEEE39_TEXT: &str = include_str!("../data/ieee39.case");
const IEEE39_SHA256: &str = "ab98d623257f296a4fbdcb27c37317e6bf6103029e25c3e9089aef376170509b";

/// (name, file contents, recorded SHA-256)
const LIBRARY: &[(&str, &str, &str)] = &[("ieee39", IEEE39_TEXT, IEEE39_SHA256)];

pub fn names() -> Vec<&'static str> {
    LIBRARY.iter().map(|(n, _, _)| *n).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Parses `text` after checking it against `expected_sha256`.
pub fn parse_checked(text: &str, expected_sha256: &str) -> Result<GridCase> {
    let actual = sha256_hex(text.as_bytes());
    if actual != expected_sha256 {
        return Err(Error::DataCorruption {
            expected: expected_sha256.to_string(),
            actual,
        });
    }
    GridCase::from_text(text)
}

/// Loads a named case, verifying its checksum, its invariants and that its
/// power flow converges from a flat start.
pub fn load_case(name: &str) -> Result<GridCase> {
    let (_, text, sha) = LIBRARY
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown case `{name}` (known: {:?})", names())))?;
    let case = parse_checked(text, sha)?;
    let sol = powerflow::solve(&case, &vec![1.0; case.n_buses()])?;
    if !sol.converged {
        return Err(Error::InvalidCase(format!(
            "power flow of `{name}` does not converge (mismatch {:e})",
            sol.max_mismatch
        )));
    }
    Ok(case)
}

/// The raw text of a shipped case, in canonical form.
pub fn case_text(name: &str) -> Option<&'static str> {
    LIBRARY.iter().find(|(n, _, _)| *n == name).map(|(_, t, _)| *t)
}
