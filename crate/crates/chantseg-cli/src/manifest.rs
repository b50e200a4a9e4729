//! Run manifests: enough to re-run an experiment and check its inputs.
//!
//! A manifest echoes the resolved configuration, the tool version, and
//! a SHA-256 digest of every input and output file. It carries no
//! timestamps, so identical runs produce identical manifests.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

#[derive(Debug, Serialize)]
pub struct FileStamp {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub settings: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, FileStamp>,
    pub outputs: BTreeMap<String, FileStamp>,
}

impl Manifest {
    pub fn new(subcommand: &str, settings: BTreeMap<String, String>) -> Self {
        Manifest {
            tool: "chantseg",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            settings,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        let stamp = stamp_file(path)?;
        self.inputs.insert(name.to_string(), stamp);
        Ok(())
    }

    pub fn add_output(&mut self, name: &str, path: &Path) -> Result<()> {
        let stamp = stamp_file(path)?;
        self.outputs.insert(name.to_string(), stamp);
        Ok(())
    }

    /// Writes manifest.json into the output directory.
    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn stamp_file(path: &Path) -> Result<FileStamp> {
    let mut file = std::fs::File::open(path)
        .with_context(|| format!("hashing {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    let digest = hasher.finalize();
    let sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileStamp {
        path: path.display().to_string(),
        sha256,
        bytes,
    })
}
