//! `manifest.json`: everything needed to re-run a command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputRecord>,
    /// Files written next to the manifest, relative to the output directory.
    pub outputs: Vec<String>,
    /// Unix seconds; `SOURCE_DATE_EPOCH` wins when set. The only field that
    /// varies between identical runs.
    pub created_at: u64,
}

/// First 16 hex chars of the SHA-256 of the config's JSON form.
pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))[..16].to_string()
}

fn created_at() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    out_dir: PathBuf,
    inputs: Vec<InputRecord>,
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
}

impl Recorder {
    pub fn new(command: &str, out_dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
        Ok(Recorder {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Reads an input file, recording its hash.
    pub fn read(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputRecord {
            path: path.to_path_buf(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
        });
        Ok(bytes)
    }

    pub fn read_string(&mut self, path: &Path) -> Result<String, CliError> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|_| CliError::Validation(format!("{} is not UTF-8", path.display())))
    }

    pub fn seed(&mut self, config: &RunConfig, stage: &str) -> u64 {
        let seed = config.seed(stage);
        self.seeds.insert(stage.to_string(), seed);
        seed
    }

    /// Writes `contents` to `relative` under the output directory.
    pub fn write(&mut self, relative: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let path = self.out_dir.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
        self.outputs.push(relative.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, relative: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(relative, text)
    }

    /// Records a file that library code wrote under the output directory.
    pub fn note_output(&mut self, relative: impl Into<String>) {
        self.outputs.push(relative.into());
    }

    pub fn finish(mut self, argv: &[String], config: &RunConfig) -> Result<(), CliError> {
        self.outputs.sort();
        let manifest = Manifest {
            command: self.command.clone(),
            tool_version: TOOL_VERSION,
            argv: argv.to_vec(),
            config: config.clone(),
            config_hash: config_hash(config),
            seeds: std::mem::take(&mut self.seeds),
            inputs: std::mem::take(&mut self.inputs),
            outputs: std::mem::take(&mut self.outputs),
            created_at: created_at(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}
