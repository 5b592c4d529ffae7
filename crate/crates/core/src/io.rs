//! Sidecar metadata and small TSV helpers shared by the file formats.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta");
    path.with_file_name(name)
}

/// Writes `<path>.meta`: one `seed=<n>` line followed by `key=value` extras.
pub fn write_sidecar(path: &Path, seed: u64, extra: &[(&str, String)]) -> Result<()> {
    let mut text = format!("seed={seed}\n");
    for (k, v) in extra {
        text.push_str(&format!("{k}={v}\n"));
    }
    let meta = sidecar_path(path);
    fs::write(&meta, text).map_err(|e| Error::io(meta, e))
}

pub fn read_sidecar_seed(path: &Path) -> Option<u64> {
    let text = fs::read_to_string(sidecar_path(path)).ok()?;
    text.lines().find_map(|l| l.strip_prefix("seed=")?.trim().parse().ok())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// `id v1 v2 ...` rows.
pub fn write_vectors(path: &Path, rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = String::new();
    for (id, v) in rows {
        out.push_str(id);
        for x in v {
            out.push('\t');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_vectors(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = read_text(path)?;
    let mut rows = Vec::new();
    let mut width = None;
    for (ln, line) in data_lines(&text) {
        let mut cols = line.split('\t');
        let id = cols.next().unwrap_or_default().to_string();
        let v = cols
            .map(|c| c.parse::<f64>().map_err(|e| Error::parse(path, ln, format!("{c:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(v.len()),
            Some(w) if w != v.len() => {
                return Err(Error::parse(path, ln, format!("expected {w} values, found {}", v.len())))
            }
            _ => {}
        }
        rows.push((id, v));
    }
    Ok(rows)
}
