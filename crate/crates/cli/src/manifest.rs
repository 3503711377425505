use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fprune_core::io::{hash_file, write_json_atomic};
use serde::Serialize;

/// Record of one subcommand invocation: what went in, what came out.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub parallel: bool,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config: &impl Serialize) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            parallel: fprune_core::par::is_parallel(),
            config_hash: fprune_core::io::config_hash(config),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> anyhow::Result<()> {
        self.outputs.insert(path.display().to_string(), hash_file(path)?);
        Ok(())
    }

    /// Write `manifest-<command>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> anyhow::Result<PathBuf> {
        let path = dir.join(format!("manifest-{}.json", self.command));
        write_json_atomic(&path, self)?;
        Ok(path)
    }
}

/// Directory that holds `path`, or `.` for bare file names.
pub fn dir_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}
