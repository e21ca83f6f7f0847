//! Run-directory bookkeeping: lock file, manifest, config copy.
//!
//! Every run owns one output directory. A lock file keeps concurrent runs
//! out; the manifest makes the directory self-describing (config hash, tool
//! version, timestamps, emitted files, final status). Re-running from the
//! copied config with the recorded seed reproduces the CSVs byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub tool_version: String,
    pub command: String,
    pub master_seed: u64,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    pub files: Vec<String>,
}

pub struct RunDir {
    pub path: PathBuf,
    manifest: RunManifest,
    lock_held: bool,
}

impl RunDir {
    /// Creates (or reuses) the directory, acquires its lock and writes the
    /// verbatim config copy plus a manifest in the `running` state.
    pub fn create(
        path: &Path,
        command: &str,
        config_text: &str,
        master_seed: u64,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(path)
            .map_err(|e| CliError::validation(format!("cannot create {}: {e}", path.display())))?;
        let lock_path = path.join(LOCK_FILE);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
        {
            Ok(mut f) => {
                let _ = writeln!(f, "pid {}", std::process::id());
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(CliError::validation(format!(
                    "output directory {} is locked by another run (remove {} if stale)",
                    path.display(),
                    lock_path.display()
                )));
            }
            Err(e) => {
                return Err(CliError::validation(format!(
                    "cannot lock {}: {e}",
                    path.display()
                )))
            }
        }

        fs::write(path.join(CONFIG_COPY), config_text)
            .map_err(|e| CliError::runtime(format!("writing config copy: {e}")))?;

        let manifest = RunManifest {
            config_sha256: hex_digest(config_text.as_bytes()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            master_seed,
            started_at: chrono::Utc::now().to_rfc3339(),
            finished_at: None,
            status: "running".to_string(),
            files: vec![CONFIG_COPY.to_string()],
        };
        let run = Self {
            path: path.to_path_buf(),
            manifest,
            lock_held: true,
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn record_file(&mut self, name: &str) {
        if !self.manifest.files.iter().any(|f| f == name) {
            self.manifest.files.push(name.to_string());
        }
    }

    pub fn finish(mut self, status: &str) -> Result<(), CliError> {
        self.manifest.status = status.to_string();
        self.manifest.finished_at = Some(chrono::Utc::now().to_rfc3339());
        self.write_manifest()?;
        self.release_lock();
        Ok(())
    }

    fn write_manifest(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| CliError::runtime(format!("encoding manifest: {e}")))?;
        fs::write(self.path.join(MANIFEST_FILE), text)
            .map_err(|e| CliError::runtime(format!("writing manifest: {e}")))
    }

    fn release_lock(&mut self) {
        if self.lock_held {
            let _ = fs::remove_file(self.path.join(LOCK_FILE));
            self.lock_held = false;
        }
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        // A failure path that never reached finish() still frees the lock;
        // the manifest keeps its last written state.
        self.release_lock();
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
