//! CSV tables and JSON sidecars, each opened by a header block.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub config_hash: String,
    pub code_version: String,
    pub grid: String,
}

impl Header {
    pub fn new(cfg: &RunConfig, grid: impl Into<String>) -> Self {
        Self { config_hash: cfg.hash(), code_version: env!("CARGO_PKG_VERSION").into(), grid: grid.into() }
    }
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Writes `# key: value` header lines, the column names and the rows.
pub fn write_csv(path: &Path, header: &Header, columns: &[String], rows: &[Vec<f64>]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# config_hash: {}", header.config_hash)?;
    writeln!(w, "# code_version: {}", header.code_version)?;
    writeln!(w, "# grid: {}", header.grid)?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(columns)?;
    for r in rows {
        debug_assert_eq!(r.len(), columns.len());
        csv.write_record(r.iter().map(|v| fmt_f64(*v)))?;
    }
    csv.flush()?;
    Ok(())
}

/// `{"header": .., "config": .., <body fields>}`.
pub fn write_json(path: &Path, header: &Header, cfg: &RunConfig, body: &impl Serialize) -> anyhow::Result<()> {
    let mut doc = serde_json::Map::new();
    doc.insert("header".into(), serde_json::to_value(header)?);
    doc.insert("config".into(), serde_json::to_value(cfg)?);
    match serde_json::to_value(body)? {
        serde_json::Value::Object(m) => doc.extend(m),
        other => {
            doc.insert("result".into(), other);
        }
    }
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, &doc)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes the TOML that reproduces this run.
pub fn write_config(path: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# ymflow {} configuration, hash {}", env!("CARGO_PKG_VERSION"), cfg.hash())?;
    w.write_all(cfg.to_toml().as_bytes())?;
    w.flush()?;
    Ok(())
}

/// `dir/stem.suffix` next to `path`, e.g. `q.csv` -> `q.json`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Resolves a bare file name into the directory of `out`; paths with
/// directories are refused so that nothing lands outside that directory.
pub fn beside(out: &Path, name: &Path) -> anyhow::Result<PathBuf> {
    if name.components().count() != 1 {
        anyhow::bail!(crate::config::config_error(format!(
            "{} must be a bare file name; it is written next to --out",
            name.display()
        )));
    }
    Ok(out.with_file_name(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        let s = fmt_f64(0.1);
        assert_eq!(s, "1.0000000000000001e-1");
        assert_eq!(s.parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn paths() {
        assert_eq!(sibling(Path::new("a/q.csv"), "json"), PathBuf::from("a/q.json"));
        assert_eq!(beside(Path::new("a/p.csv"), Path::new("n.json")).unwrap(), PathBuf::from("a/n.json"));
        assert!(beside(Path::new("a/p.csv"), Path::new("../n.json")).is_err());
    }
}
