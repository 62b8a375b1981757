//! Resolved run configuration: flags override the config file, which overrides the
//! preset.

use std::fs;
use std::path::Path;

use h4vdm::model::{FrameWeights, ModelConfig};
use h4vdm::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::failure::{CmdResult, Failure};

pub const DEFAULT_PRESET: &str = "b";

/// Contents of a `--config` file. Every section is optional and may be partial.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    #[serde(default)]
    pub model: Map<String, Value>,
    #[serde(default)]
    pub train: Map<String, Value>,
}

impl ConfigFile {
    pub fn read(path: Option<&Path>) -> CmdResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }
}

/// Model and training settings after precedence has been applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub preset: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Flag values that override everything else when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub frame_weights: Option<FrameWeights>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub warmup_epochs: Option<usize>,
    pub decay: Option<f64>,
    pub patience: Option<usize>,
    pub deterministic: bool,
}

fn merge<T: Serialize + for<'de> Deserialize<'de>>(base: &T, patch: &Map<String, Value>, what: &str) -> CmdResult<T> {
    let mut v = serde_json::to_value(base).expect("config serializes");
    let obj = v.as_object_mut().expect("config is an object");
    for (k, x) in patch {
        obj.insert(k.clone(), x.clone());
    }
    serde_json::from_value(v).map_err(|e| Failure::config(format!("{what} config: {e}")))
}

pub fn preset_model(name: &str) -> CmdResult<ModelConfig> {
    ModelConfig::preset(name).ok_or_else(|| Failure::config(format!("unknown preset {name:?} (expected s, b, l or tiny)")))
}

pub fn resolve(file: &ConfigFile, flags: &Overrides) -> CmdResult<Resolved> {
    let preset = flags
        .preset
        .clone()
        .or_else(|| file.preset.clone())
        .unwrap_or_else(|| DEFAULT_PRESET.to_string())
        .to_ascii_lowercase();
    let mut model = merge(&preset_model(&preset)?, &file.model, "model")?;
    let base_train = if preset == "tiny" {
        TrainConfig::tiny()
    } else {
        TrainConfig::default()
    };
    let mut train = merge(&base_train, &file.train, "train")?;
    if let Some(fw) = flags.frame_weights {
        model.frame_weights = fw;
    }
    if let Some(x) = flags.seed {
        train.seed = x;
    }
    if let Some(x) = flags.epochs {
        train.max_epochs = x;
    }
    if let Some(x) = flags.batch_size {
        train.batch_size = x;
    }
    if let Some(x) = flags.lr {
        train.base_lr = x;
    }
    if let Some(x) = flags.warmup_epochs {
        train.warmup_epochs = x;
    }
    if let Some(x) = flags.decay {
        train.decay = x;
    }
    if let Some(x) = flags.patience {
        train.patience = x;
    }
    train.deterministic |= flags.deterministic;
    model
        .validate()
        .map_err(|e| Failure::config(format!("model config: {e}")))?;
    train.validate().map_err(|e| Failure::config(e))?;
    Ok(Resolved { preset, model, train })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_file_over_preset() {
        let file: ConfigFile =
            serde_json::from_str(r#"{"preset": "tiny", "train": {"batch_size": 5, "max_epochs": 3}}"#).unwrap();
        let flags = Overrides {
            epochs: Some(7),
            ..Overrides::default()
        };
        let r = resolve(&file, &flags).unwrap();
        assert_eq!(r.model, ModelConfig::tiny());
        assert_eq!(r.train.batch_size, 5);
        assert_eq!(r.train.max_epochs, 7);
        assert_eq!(r.train.base_lr, TrainConfig::tiny().base_lr);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let file: ConfigFile = serde_json::from_str(r#"{"model": {"depth": 3}}"#).unwrap();
        assert_eq!(resolve(&file, &Overrides::default()).unwrap_err().code, 4);
        assert!(serde_json::from_str::<ConfigFile>(r#"{"presets": "b"}"#).is_err());
    }

    #[test]
    fn default_preset_is_base() {
        let r = resolve(&ConfigFile::default(), &Overrides::default()).unwrap();
        assert_eq!(r.model, ModelConfig::base());
        assert_eq!(r.train, TrainConfig::default());
    }
}
