//! CSV tables, run manifests and atomic file writes.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str], rows: Vec<Vec<String>>) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::InvalidArgument("no rows to write".into()));
        }
        if let Some(r) = self.rows.iter().find(|r| r.len() != self.header.len()) {
            return Err(Error::InvalidArgument(format!(
                "row has {} cells, header has {}",
                r.len(),
                self.header.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
    }
}

/// Reads a CSV file written by `emit_results`.
pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let header = r
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|x| x.iter().map(String::from).collect())
                .map_err(|e| Error::Parse(e.to_string()))
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok(CsvTable { header, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
    pub fitted: Value,
    pub version: String,
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn file_name(stem: &str, suffix: &str, ext: &str) -> String {
    if suffix.is_empty() {
        format!("{stem}.{ext}")
    } else {
        format!("{stem}_{suffix}.{ext}")
    }
}

/// Writes every table and extra file, then the manifest. Nothing is written
/// if any table is empty.
pub fn emit_results(
    dir: &Path,
    stem: &str,
    tables: &[(String, CsvTable)],
    extra: &[(String, Vec<u8>)],
    manifest: &mut RunManifest,
    clock: impl Fn() -> u128,
) -> Result<Vec<PathBuf>> {
    if tables.is_empty() {
        return Err(Error::InvalidArgument("no tables to write".into()));
    }
    let mut files = tables
        .iter()
        .map(|(suffix, t)| Ok((file_name(stem, suffix, "csv"), t.to_bytes()?)))
        .collect::<Result<Vec<_>>>()?;
    files.extend(extra.iter().map(|(n, b)| (format!("{stem}_{n}"), b.clone())));
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, bytes) in files {
        let p = dir.join(&name);
        write_atomic(&p, &bytes)?;
        manifest.outputs.push(name);
        written.push(p);
    }
    manifest.finished_unix_ms = clock();
    let p = dir.join(file_name(stem, "manifest", "json"));
    write_atomic(&p, serde_json::to_string_pretty(manifest)?.as_bytes())?;
    written.push(p);
    Ok(written)
}
