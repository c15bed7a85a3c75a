use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Sidecar written next to every output file.
#[derive(Debug, Serialize)]
pub struct Meta<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config_sha256: String,
    pub args: serde_json::Value,
    pub inputs: Vec<(String, String)>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn write_sidecar(path: &Path, meta: &Meta) -> CliResult<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
    fs::write(&side, text + "\n").map_err(CliError::io(side))
}
