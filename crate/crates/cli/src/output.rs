//! Provenance records and atomic writers for JSON, JSONL and CSV outputs.

use std::collections::BTreeMap;
use std::path::Path;

use fdscope::container::{sha256_hex, write_atomic, ArrayContainer};
use serde::Serialize;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Input artifact name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn to_header_string(&self) -> String {
        serde_json::to_string(self).expect("provenance serializes")
    }
}

pub fn runtime<E: std::fmt::Display>(what: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{what}: {e}"))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).map_err(runtime(&path.display().to_string()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(runtime("serialize"))?;
    text.push(b'\n');
    write_bytes(path, &text)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut text = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut text, r).map_err(runtime("serialize"))?;
        text.push(b'\n');
    }
    write_bytes(path, &text)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(runtime("csv"))?;
    }
    let bytes = w.into_inner().map_err(runtime("csv"))?;
    write_bytes(path, &bytes)
}

pub fn write_container(path: &Path, c: &ArrayContainer) -> CliResult<()> {
    write_bytes(path, &c.to_bytes()?)
}

/// Read a container and hash its bytes for the provenance chain.
pub fn read_container(path: &Path) -> CliResult<(ArrayContainer, String)> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let c = ArrayContainer::from_bytes(&bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok((c, sha256_hex(&bytes)))
}
