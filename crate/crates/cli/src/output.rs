use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hypcbm::io::{sha256_file, write_bytes, write_csv, write_json};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Tracks inputs and outputs of one run and writes the run manifest.
pub struct RunContext {
    pub out: PathBuf,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

#[derive(Serialize)]
struct RunManifest<'a, O: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: RunConfig,
    options: &'a O,
    /// Path to SHA-256 of every file read.
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a [String],
    threads: usize,
    /// Only field that differs between otherwise identical runs.
    created_unix: u64,
}

impl RunContext {
    pub fn new(out: &Path) -> Result<Self> {
        std::fs::create_dir_all(out).map_err(|source| CliError::Io {
            path: out.to_path_buf(),
            source,
        })?;
        Ok(RunContext {
            out: out.to_path_buf(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    /// Record an input file and return its path unchanged.
    pub fn input<'p>(&mut self, path: &'p Path) -> Result<&'p Path> {
        let hash = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), hash);
        Ok(path)
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        Ok(write_json(&p, value)?)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let p = self.path(name);
        Ok(write_csv(&p, header, rows)?)
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        Ok(write_bytes(&p, bytes)?)
    }

    pub fn finish<O: Serialize>(mut self, command: &str, config: &RunConfig, options: &O) -> Result<()> {
        self.outputs.sort();
        self.outputs.dedup();
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = RunManifest {
            tool: "hypcbm",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: config.resolved(),
            options,
            inputs: &self.inputs,
            outputs: &self.outputs,
            threads: rayon::current_num_threads(),
            created_unix,
        };
        Ok(write_json(&self.out.join(MANIFEST_FILE), &manifest)?)
    }
}

/// Fixed decimal rendering shared by every CSV: shortest round-trip form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
