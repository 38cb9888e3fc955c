use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelNode;
use crate::encode::{Extractor, LabelVocab};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "hmill-model";
pub const MODEL_VERSION: u32 = 1;

/// Everything needed to score new documents: the extractor, the model tree,
/// and (for supervised pipelines) the label path and frozen class table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub extractor: Extractor,
    pub model: ModelNode,
    pub label_path: Option<String>,
    pub label_vocab: Option<LabelVocab>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    bundle: ModelBundle,
}

impl ModelBundle {
    /// Serializes to the versioned JSON model format. Parameter floats use
    /// the shortest decimal text that parses back to the same bit pattern,
    /// so a save/load round trip reproduces forward outputs exactly.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            bundle: self.clone(),
        };
        let mut text = serde_json::to_string(&file).expect("model serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<ModelBundle> {
        let probe: serde_json::Value = serde_json::from_str(text)?;
        let format = probe.get("format").and_then(|v| v.as_str());
        if format != Some(MODEL_FORMAT) {
            return Err(Error::ModelFormat(format!(
                "expected a {MODEL_FORMAT} file, found format {format:?}"
            )));
        }
        let version = probe.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(MODEL_VERSION as u64) {
            return Err(Error::ModelFormat(format!(
                "unsupported model version {version:?} (supported: {MODEL_VERSION})"
            )));
        }
        let file: ModelFile =
            serde_json::from_value(probe).map_err(|e| Error::ModelFormat(e.to_string()))?;
        file.bundle.model.validate()?;
        Ok(file.bundle)
    }
}

pub fn save(bundle: &ModelBundle, path: &Path) -> Result<()> {
    std::fs::write(path, bundle.to_json())?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelBundle> {
    let text = std::fs::read_to_string(path)?;
    ModelBundle::from_json(&text)
}
