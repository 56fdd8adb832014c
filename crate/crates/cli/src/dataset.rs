//! Pairing of files across two directories by file stem.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const MAP_EXTENSIONS: &[&str] = &["pgm", "png"];
pub const IMAGE_EXTENSIONS: &[&str] = &["pgm", "ppm", "png"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pair {
    pub stem: String,
    pub left: PathBuf,
    pub right: PathBuf,
}

/// Result of pairing: matched files and per-stem problems, both in stem order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Pairing {
    pub pairs: Vec<Pair>,
    pub problems: Vec<(String, String)>,
}

impl Pairing {
    /// Number of distinct stems seen on either side.
    pub fn stems(&self) -> usize {
        self.pairs.len() + self.problems.len()
    }
}

/// Files in `dir` with one of `extensions` (case-insensitive), grouped by stem.
pub fn scan(dir: &Path, extensions: &[&str]) -> Result<BTreeMap<String, Vec<PathBuf>>> {
    let mut out: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| extensions.iter().any(|x| x.eq_ignore_ascii_case(e)));
        if let (true, Some(stem)) = (known, path.file_stem()) {
            out.entry(stem.to_string_lossy().into_owned()).or_default().push(path);
        }
    }
    for files in out.values_mut() {
        files.sort();
    }
    Ok(out)
}

/// Pairs `left_dir` with `right_dir`. A stem present on one side only, or
/// present twice on one side, becomes a problem rather than a pair.
pub fn pair_dirs(
    left_dir: &Path,
    right_dir: &Path,
    left_ext: &[&str],
    right_ext: &[&str],
    names: (&str, &str),
) -> Result<Pairing> {
    let left = scan(left_dir, left_ext)?;
    let right = scan(right_dir, right_ext)?;
    let stems: BTreeSet<&String> = left.keys().chain(right.keys()).collect();
    let mut pairing = Pairing::default();
    for stem in stems {
        let one = |files: Option<&Vec<PathBuf>>, side: &str| match files.map(Vec::as_slice) {
            None | Some([]) => Err(format!("no {side} file")),
            Some([p]) => Ok(p.clone()),
            Some(many) => Err(format!(
                "ambiguous {side} files: {}",
                many.iter()
                    .map(|p| p.file_name().unwrap_or_default().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join(", ")
            )),
        };
        match (one(left.get(stem), names.0), one(right.get(stem), names.1)) {
            (Ok(l), Ok(r)) => pairing.pairs.push(Pair {
                stem: stem.clone(),
                left: l,
                right: r,
            }),
            (Err(e), _) | (_, Err(e)) => pairing.problems.push((stem.clone(), e)),
        }
    }
    Ok(pairing)
}
