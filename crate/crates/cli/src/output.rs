use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;

use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "GAITLAB_OUT_DIR";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Identifies a run: hash of the effective configuration and inputs, plus the seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: &'static str,
}

impl Stamp {
    pub fn new<T: Serialize>(inputs: &T, seed: Option<u64>) -> Result<Self, CliError> {
        let canon = serde_json::to_vec(inputs)?;
        Ok(Self { config_hash: sha256_hex(&canon), seed, version: env!("CARGO_PKG_VERSION") })
    }
}

/// Output directory whose files are replaced atomically.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", root.display())))?;
        Ok(Self { root, written: Vec::new() })
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let dest = self.root.join(name);
        let dir = dest.parent().unwrap_or(&self.root);
        std::fs::create_dir_all(dir)?;
        let mut tmp = NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&dest).map_err(|e| CliError::Runtime(format!("cannot write {}: {}", dest.display(), e.error)))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }
}
