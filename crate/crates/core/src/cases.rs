//! Bundled MATPOWER radial test feeders.

use crate::error::Result;
use crate::network::{parse_matpower, to_radial, RadialNetwork};

/// Names of the bundled cases, smallest first.
pub const NAMES: [&str; 6] = ["case18", "case22", "case33bw", "case69", "case85", "case141"];

/// MATPOWER source text of a bundled case.
pub fn source(name: &str) -> Option<&'static str> {
    Some(match name {
        "case18" => include_str!("../data/case18.m"),
        "case22" => include_str!("../data/case22.m"),
        "case33bw" => include_str!("../data/case33bw.m"),
        "case69" => include_str!("../data/case69.m"),
        "case85" => include_str!("../data/case85.m"),
        "case141" => include_str!("../data/case141.m"),
        _ => return None,
    })
}

/// Parse and normalize a bundled case. Panics on an unknown name.
pub fn load(name: &str) -> Result<RadialNetwork> {
    let text = source(name).unwrap_or_else(|| panic!("unknown bundled case {name}"));
    to_radial(&parse_matpower(text)?)
}
