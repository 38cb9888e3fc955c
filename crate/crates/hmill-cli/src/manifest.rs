use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use hmill::Result;
use serde::Serialize;
use serde_json::Value;

use crate::util::{sha256_hex, write_atomic};

/// Reproducibility record written next to every command's outputs.
#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub format_versions: BTreeMap<String, u32>,
    pub input_digests: BTreeMap<String, String>,
    pub wall_time_ms: u128,
}

pub struct ManifestBuilder {
    command: String,
    config: Value,
    seed: u64,
    inputs: Vec<std::path::PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: Value, seed: u64) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            config,
            seed,
            inputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    /// Finalizes and writes the manifest; `target` is either the output
    /// directory (manifest.json inside) or an output file (sibling
    /// `<file>.manifest.json`).
    pub fn write(self, target: &Path, target_is_dir: bool) -> Result<()> {
        let mut format_versions = BTreeMap::new();
        format_versions.insert(
            "schema".to_string(),
            hmill::schema::SCHEMA_VERSION,
        );
        format_versions.insert("model".to_string(), hmill::model::MODEL_VERSION);
        let mut input_digests = BTreeMap::new();
        for path in &self.inputs {
            input_digests.insert(path.display().to_string(), sha256_hex(path)?);
        }
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            format_versions,
            input_digests,
            wall_time_ms: self.started.elapsed().as_millis(),
        };
        let path = if target_is_dir {
            target.join("manifest.json")
        } else {
            let mut name = target
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "out".to_string());
            name.push_str(".manifest.json");
            target.with_file_name(name)
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        write_atomic(&path, &text)
    }
}
