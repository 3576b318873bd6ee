//! Versioned JSON persistence for trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::train::TrainedModel;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelArtifact {
    format_version: u32,
    model: TrainedModel,
}

pub fn save(model: &TrainedModel, path: &Path) -> Result<()> {
    let artifact = ModelArtifact {
        format_version: FORMAT_VERSION,
        model: model.clone(),
    };
    let json =
        serde_json::to_string_pretty(&artifact).map_err(|e| Error::Artifact(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainedModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // Check the version first so a mismatch is reported as such rather
    // than as a shape error from a newer layout.
    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: u32,
    }
    let probe: VersionProbe = serde_json::from_str(&text)
        .map_err(|e| Error::Artifact(format!("unreadable model artifact: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "unsupported model format version {} (expected {FORMAT_VERSION})",
            probe.format_version
        )));
    }
    let artifact: ModelArtifact = serde_json::from_str(&text)
        .map_err(|e| Error::Artifact(format!("malformed model artifact: {e}")))?;
    Ok(artifact.model)
}
