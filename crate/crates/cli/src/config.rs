//! Run configuration: one JSON document covering scene generation, dataset
//! layout, and training. Every field is optional and falls back to the
//! library defaults; unknown keys are rejected with their JSON path.

use std::path::Path;

use serde::Deserialize;
use weakseg::scene::SceneSpec;
use weakseg::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneSpec,
    pub dataset: DatasetConfig,
    pub training: TrainConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Scenes written as train_XXX.ply by gen-scenes and consumed by train.
    pub train_scenes: usize,
    /// Held-out scenes written as val_XXX.ply; used for per-epoch mIoU.
    pub val_scenes: usize,
    /// Extra unlabeled scenes (pretrain_XXX.ply) for the self-supervised
    /// corpus; pretraining uses train_ AND pretrain_ scenes.
    pub pretrain_scenes: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_scenes: 8,
            val_scenes: 2,
            pretrain_scenes: 0,
        }
    }
}

/// Parse and validate a config file. Type errors and unknown keys are
/// reported with their JSON path (for example `training.max_epoch`).
pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut de = serde_json::Deserializer::from_str(&text);
    let config: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let at = e.path().to_string();
        let location = if at == "." { String::new() } else { format!(" at `{at}`") };
        CliError::Usage(format!("config error{location}: {}", e.inner()))
    })?;
    config
        .scene
        .validate()
        .map_err(|e| CliError::Usage(format!("config error at `scene`: {e}")))?;
    config
        .training
        .validate()
        .map_err(|e| CliError::Usage(format!("config error at `training`: {e}")))?;
    Ok(config)
}

/// SEED environment override, honored by every stochastic command.
pub fn seed_override() -> Result<Option<u64>, CliError> {
    match std::env::var("SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("SEED must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(None),
    }
}
