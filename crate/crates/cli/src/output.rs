//! Artifact writing: every file carries the tool version and the resolved
//! run configuration, and lands atomically (temp file + rename) so a
//! crashed run never leaves a half-written artifact.

use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// JSON artifact envelope: `version` and `config` headers with the payload
/// fields flattened alongside them.
#[derive(Debug, Serialize)]
pub struct Artifact<'a, C: Serialize, T: Serialize> {
    pub version: &'static str,
    pub config: &'a C,
    #[serde(flatten)]
    pub body: T,
}

impl<'a, C: Serialize, T: Serialize> Artifact<'a, C, T> {
    pub fn new(config: &'a C, body: T) -> Self {
        Self { version: VERSION, config, body }
    }
}

/// Writes `bytes` to `path` via a temp file in the same directory followed
/// by a rename, creating parent directories as needed.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(parent)
        .with_context(|| format!("creating output directory {}", parent.display()))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(parent)
        .with_context(|| format!("creating temp file in {}", parent.display()))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.flush())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path)
        .with_context(|| format!("moving temp file into place at {}", path.display()))?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .with_context(|| format!("serializing {}", path.display()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// CSV with `# version:` and `# config:` comment lines ahead of the header
/// row, written atomically.
pub fn write_csv<C: Serialize>(
    path: &Path,
    config: &C,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "# version: {VERSION}")?;
    writeln!(buf, "# config: {}", serde_json::to_string(config)?)?;
    let mut w = csv::Writer::from_writer(buf);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let buf = w.into_inner().context("flushing csv")?;
    write_atomic(path, &buf)
}

/// Plain text, written atomically.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Plain text prefixed with the same `# version:` / `# config:` comment
/// lines the CSV artifacts carry.
pub fn write_text_with_header<C: Serialize>(path: &Path, config: &C, text: &str) -> Result<()> {
    let header = format!(
        "# version: {VERSION}\n# config: {}\n\n",
        serde_json::to_string(config)?
    );
    write_atomic(path, [header.as_bytes(), text.as_bytes()].concat().as_slice())
}
