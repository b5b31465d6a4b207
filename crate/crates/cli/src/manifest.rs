//! Run manifests tie artifacts back to the configuration that produced
//! them.
//!
//! Every command that writes files drops a `manifest.json` next to its
//! outputs recording the command name, tool version, seed, effective
//! configuration, and the files written. Nothing time-dependent goes in,
//! so re-running the recorded command reproduces the directory byte for
//! byte.

use crate::Failure;
use serde::Serialize;
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config: Value) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            outputs: Vec::new(),
        }
    }

    /// Serializes `value` as pretty JSON into `dir/name` and records it.
    pub fn write_json<T: Serialize>(
        &mut self,
        dir: &Path,
        name: &str,
        value: &T,
    ) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(dir.join(name), text)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
        std::fs::write(dir.join(name), text)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    /// Writes the manifest itself; call once all outputs are recorded.
    pub fn finish(&self, dir: &Path) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}
