//! Dataset files: a CSV body with a one-line header, plus a JSON sidecar
//! carrying the generating world and seed.
//!
//! ```text
//! # d=2 k=2 attributes=A,B
//! 1.93,2.11,1,1
//! ...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AttributedDataset, WorldSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub world: WorldSpec,
    pub seed: u64,
    pub n: usize,
}

fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub(crate) fn format_dataset(ds: &AttributedDataset, d: usize) -> String {
    let mut out = format!(
        "# d={} k={} attributes={}\n",
        d,
        ds.attributes.len(),
        ds.attributes.join(",")
    );
    for (z, labels) in ds.latents.iter().zip(&ds.labels) {
        let mut first = true;
        for x in z {
            if !first {
                out.push(',');
            }
            first = false;
            write!(out, "{x}").unwrap();
        }
        for &l in labels {
            out.push_str(if l { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    out
}

/// Writes `path` (CSV) and the sidecar next to it (same stem, `.json`).
/// Returns the sidecar path.
pub fn write_dataset(path: &Path, ds: &AttributedDataset) -> Result<PathBuf> {
    let prov = ds
        .provenance
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("dataset has no provenance to write".into()))?;
    fs::write(path, format_dataset(ds, prov.world.dim))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(prov)? + "\n")?;
    Ok(side)
}

fn parse_header(line: &str) -> Result<(usize, usize, Vec<String>)> {
    let bad = |m: &str| Error::format("dataset header", m.to_string());
    let rest = line.strip_prefix('#').ok_or_else(|| bad("missing `#`"))?;
    let mut d = None;
    let mut k = None;
    let mut names = None;
    for field in rest.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| bad(field))?;
        match key {
            "d" => d = value.parse().ok(),
            "k" => k = value.parse().ok(),
            "attributes" => {
                names = Some(if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(str::to_string).collect()
                })
            }
            _ => return Err(bad(field)),
        }
    }
    let (d, k) = (d.ok_or_else(|| bad("d"))?, k.ok_or_else(|| bad("k"))?);
    let names = names.unwrap_or_default();
    if names.len() != k {
        return Err(bad("attribute count does not match k"));
    }
    Ok((d, k, names))
}

pub(crate) fn parse_dataset(text: &str) -> Result<(usize, AttributedDataset)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format("dataset", "empty file"))?;
    let (d, k, attributes) = parse_header(header)?;
    let mut latents = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d + k {
            return Err(Error::format(
                "dataset",
                format!("row {} has {} fields, expected {}", i + 1, cells.len(), d + k),
            ));
        }
        let z = cells[..d]
            .iter()
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("dataset", format!("row {}: {e}", i + 1)))?;
        let y = cells[d..]
            .iter()
            .map(|c| match c.trim() {
                "1" => Ok(true),
                "0" => Ok(false),
                other => Err(Error::format("dataset", format!("row {}: label `{other}`", i + 1))),
            })
            .collect::<Result<Vec<_>>>()?;
        latents.push(z);
        labels.push(y);
    }
    Ok((
        d,
        AttributedDataset {
            attributes,
            latents,
            labels,
            provenance: None,
        },
    ))
}

/// Reads a dataset CSV; the sidecar is attached when present.
pub fn read_dataset(path: &Path) -> Result<AttributedDataset> {
    let (_, mut ds) = parse_dataset(&fs::read_to_string(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        ds.provenance = Some(serde_json::from_str(&fs::read_to_string(side)?)?);
    }
    Ok(ds)
}
