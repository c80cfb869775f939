use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use coregen::cnf::{parse_dimacs, serialize_dimacs, Cnf};
use serde::Serialize;

/// A DIMACS file from an input directory.
pub struct Instance {
    pub stem: String,
    pub path: PathBuf,
    pub cnf: Cnf,
}

pub fn read_cnf(path: &Path) -> Result<Cnf> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_dimacs(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Every `*.cnf` in `dir`, sorted by file name so task indices are stable.
pub fn read_dir_cnfs(dir: &Path) -> Result<Vec<Instance>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cnf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no .cnf files in {}", dir.display());
    }
    paths
        .into_iter()
        .map(|path| {
            let cnf = read_cnf(&path)?;
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok(Instance { stem, path, cnf })
        })
        .collect()
}

pub fn write_cnf(path: &Path, cnf: &Cnf) -> Result<()> {
    write_text(path, &serialize_dimacs(cnf))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}
