//! Discovery of `(input, ground truth)` image pairs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

/// One training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePair {
    pub stem: String,
    pub input: PathBuf,
    pub gt: PathBuf,
}

/// Pairs `<stem>.in.<ext>` with `<stem>.gt.<ext>` inside `dir`, sorted by
/// stem. Every matched file must have a partner.
pub fn discover_pairs(dir: &Path) -> Result<Vec<ImagePair>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(format!("cannot read {}: {e}", dir.display())))?;
    let mut inputs = BTreeMap::new();
    let mut gts = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(e.to_string()))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some((rest, ext)) = name.rsplit_once('.') else { continue };
        if !IMAGE_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
            continue;
        }
        if let Some(stem) = rest.strip_suffix(".in") {
            inputs.insert(stem.to_string(), path.clone());
        } else if let Some(stem) = rest.strip_suffix(".gt") {
            gts.insert(stem.to_string(), path.clone());
        }
    }
    let mut pairs = Vec::new();
    for (stem, input) in inputs {
        let gt = gts
            .remove(&stem)
            .ok_or_else(|| CliError::io(format!("{} has no matching {stem}.gt.<ext>", input.display())))?;
        pairs.push(ImagePair { stem, input, gt });
    }
    if let Some((stem, gt)) = gts.into_iter().next() {
        return Err(CliError::io(format!("{} has no matching {stem}.in.<ext>", gt.display())));
    }
    if pairs.is_empty() {
        return Err(CliError::io(format!("no <stem>.in.<ext>/<stem>.gt.<ext> pairs in {}", dir.display())));
    }
    Ok(pairs)
}

/// Reads a manifest: one `input gt` pair per line (whitespace or comma
/// separated), paths relative to the manifest's directory, `#` comments.
pub fn read_manifest(path: &Path) -> Result<Vec<ImagePair>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let [input, gt] = fields[..] else {
            return Err(CliError::io(format!("{}:{}: expected 'input gt'", path.display(), lineno + 1)));
        };
        pairs.push(ImagePair { stem: format!("line{}", lineno + 1), input: base.join(input), gt: base.join(gt) });
    }
    if pairs.is_empty() {
        return Err(CliError::io(format!("manifest {} lists no pairs", path.display())));
    }
    Ok(pairs)
}
