//! Run configuration: defaults, then a JSON file, then command-line flags.

use std::path::{Path, PathBuf};

use gazeattn::datasets::SynthConfig;
use gazeattn::model::{Architecture, BackboneConfig, TrainConfig};
use gazeattn::runtime::{DEFAULT_DWELL_SECONDS, DEFAULT_WINDOW};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown key `{key}` in {source_name}")]
    UnknownKey { key: String, source_name: String },
    #[error("missing required key `{key}`")]
    Missing { key: String },
    #[error("`{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read config {path}: {message}")]
    File { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandId {
    SynthData,
    TrainGaze,
    TransferTrain,
    Loso,
    EvalAssembly,
    Infer,
    Report,
}

impl CommandId {
    pub fn name(self) -> &'static str {
        match self {
            Self::SynthData => "synth-data",
            Self::TrainGaze => "train-gaze",
            Self::TransferTrain => "transfer-train",
            Self::Loso => "loso",
            Self::EvalAssembly => "eval-assembly",
            Self::Infer => "infer",
            Self::Report => "report",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Gaze, attention or segment manifest, depending on the command.
    pub manifest: Option<PathBuf>,
    /// Validation manifest for gaze training.
    pub val_manifest: Option<PathBuf>,
    pub gaze_checkpoint: Option<PathBuf>,
    /// Attention checkpoints for eval-assembly and infer.
    pub models: Vec<PathBuf>,
    /// Base directory of the videos named in a segment manifest.
    pub videos: Option<PathBuf>,
    /// Frame directory or video file to stream.
    pub video: Option<PathBuf>,
    /// Event log to replay instead of classifying frames.
    pub events: Option<PathBuf>,
    /// `report.json` to re-render.
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeParams {
    pub window: usize,
    pub dwell: f64,
    pub fps: f64,
}

impl Default for RuntimeParams {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, dwell: DEFAULT_DWELL_SECONDS, fps: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandId,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub paths: Paths,
    /// Subjects held out for gaze validation when no validation manifest is given.
    pub val_subjects: Vec<String>,
    pub backbone: BackboneConfig,
    pub gaze_train: TrainConfig,
    pub attention_train: TrainConfig,
    pub runtime: RuntimeParams,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn defaults(command: CommandId) -> Self {
        Self {
            command,
            seed: 0,
            out: None,
            paths: Paths::default(),
            val_subjects: Vec::new(),
            backbone: BackboneConfig::default(),
            gaze_train: TrainConfig::gaze(),
            attention_train: TrainConfig::attention(),
            runtime: RuntimeParams::default(),
            synth: SynthConfig::default(),
        }
    }

    /// Training config of the stage the command runs.
    pub fn stage_train_mut(&mut self) -> &mut TrainConfig {
        match self.command {
            CommandId::TrainGaze => &mut self.gaze_train,
            _ => &mut self.attention_train,
        }
    }

    pub fn out_dir(&self) -> Result<&Path, ConfigError> {
        self.out.as_deref().ok_or_else(|| ConfigError::Missing { key: "out".into() })
    }

    pub fn require<'a>(&self, key: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, ConfigError> {
        let path = value.as_deref().ok_or_else(|| ConfigError::Missing { key: key.into() })?;
        if !path.exists() {
            return Err(ConfigError::Invalid { key: key.into(), message: format!("{} does not exist", path.display()) });
        }
        Ok(path)
    }

    /// Checks the inputs the command needs, naming the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.out_dir()?;
        let p = &self.paths;
        match self.command {
            CommandId::SynthData => {}
            CommandId::TrainGaze => {
                self.require("paths.manifest", &p.manifest)?;
                if p.val_manifest.is_some() {
                    self.require("paths.val_manifest", &p.val_manifest)?;
                }
            }
            CommandId::TransferTrain => {
                self.require("paths.manifest", &p.manifest)?;
                self.require("paths.gaze_checkpoint", &p.gaze_checkpoint)?;
            }
            CommandId::Loso => {
                self.require("paths.manifest", &p.manifest)?;
                if p.gaze_checkpoint.is_some() {
                    self.require("paths.gaze_checkpoint", &p.gaze_checkpoint)?;
                }
            }
            CommandId::EvalAssembly => {
                self.require("paths.manifest", &p.manifest)?;
                if p.videos.is_some() {
                    self.require("paths.videos", &p.videos)?;
                }
                self.require_models()?;
            }
            CommandId::Infer => {
                if p.events.is_some() {
                    self.require("paths.events", &p.events)?;
                } else {
                    self.require("paths.video", &p.video)?;
                    self.require_models()?;
                    if p.models.len() != 1 {
                        return Err(ConfigError::Invalid { key: "paths.models".into(), message: "infer takes exactly one model".into() });
                    }
                }
            }
            CommandId::Report => {
                self.require("paths.report", &p.report)?;
            }
        }
        if let Some(pre) = &self.backbone.pretrained {
            if !pre.exists() {
                return Err(ConfigError::Invalid { key: "backbone.pretrained".into(), message: format!("{} does not exist", pre.display()) });
            }
        }
        let train = |key: &str, t: &TrainConfig| {
            t.validate().map_err(|e| ConfigError::Invalid { key: key.into(), message: e.to_string() })
        };
        train("gaze_train", &self.gaze_train)?;
        train("attention_train", &self.attention_train)?;
        if self.runtime.window == 0 {
            return Err(ConfigError::Invalid { key: "runtime.window".into(), message: "must be at least 1".into() });
        }
        if !(self.runtime.dwell >= 0.0 && self.runtime.dwell.is_finite()) {
            return Err(ConfigError::Invalid { key: "runtime.dwell".into(), message: "must be non-negative".into() });
        }
        if !(self.runtime.fps > 0.0 && self.runtime.fps.is_finite()) {
            return Err(ConfigError::Invalid { key: "runtime.fps".into(), message: "must be positive".into() });
        }
        Ok(())
    }

    fn require_models(&self) -> Result<(), ConfigError> {
        if self.paths.models.is_empty() {
            return Err(ConfigError::Missing { key: "paths.models".into() });
        }
        for (i, m) in self.paths.models.iter().enumerate() {
            if !m.exists() {
                return Err(ConfigError::Invalid { key: format!("paths.models[{i}]"), message: format!("{} does not exist", m.display()) });
            }
        }
        Ok(())
    }
}

/// Command-line values; `None` leaves the file or default value in place.
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub val_subjects: Option<Vec<String>>,
    pub gaze_checkpoint: Option<PathBuf>,
    pub models: Option<Vec<PathBuf>>,
    pub videos: Option<PathBuf>,
    pub video: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub backbone: Option<Architecture>,
    pub input_side: Option<usize>,
    pub pretrained: Option<PathBuf>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub window: Option<usize>,
    pub dwell: Option<f64>,
    pub fps: Option<f64>,
    pub subjects: Option<usize>,
    pub per_class: Option<usize>,
    pub gaze_per_subject: Option<usize>,
    pub image_side: Option<usize>,
}

/// Resolves defaults, then `file`, then `flags`. Training seeds follow the
/// run seed.
pub fn resolve_config(command: CommandId, file: Option<&Path>, flags: &FlagValues) -> Result<RunConfig, ConfigError> {
    let mut value = serde_json::to_value(RunConfig::defaults(command)).expect("defaults serialize");
    if let Some(path) = file {
        let file_err = |message: String| ConfigError::File { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let mut overlay: Value = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
        if let Value::Object(map) = &mut overlay {
            if let Some(cmd) = map.remove("command") {
                if cmd != Value::String(command.name().into()) {
                    return Err(ConfigError::Invalid {
                        key: "command".into(),
                        message: format!("file is for {cmd}, running {}", command.name()),
                    });
                }
            }
        }
        merge(&mut value, overlay, "", &path.display().to_string())?;
    }
    let mut cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| ConfigError::Invalid { key: "config".into(), message: e.to_string() })?;
    apply_flags(&mut cfg, flags);
    cfg.gaze_train.seed = cfg.seed;
    cfg.attention_train.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
    Ok(cfg)
}

/// Overlays `patch` onto `base`; every key in `patch` must exist in `base`,
/// except inside fields whose default is null (free-form values).
fn merge(base: &mut Value, patch: Value, prefix: &str, source_name: &str) -> Result<(), ConfigError> {
    match (base, patch) {
        (Value::Object(base), Value::Object(patch)) => {
            for (k, v) in patch {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match base.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key, source_name)?,
                    None => return Err(ConfigError::UnknownKey { key, source_name: source_name.into() }),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn apply_flags(cfg: &mut RunConfig, f: &FlagValues) {
    fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *slot = v.clone();
        }
    }
    fn set_opt<T: Clone>(slot: &mut Option<T>, v: &Option<T>) {
        if v.is_some() {
            slot.clone_from(v);
        }
    }
    set(&mut cfg.seed, &f.seed);
    set_opt(&mut cfg.out, &f.out);
    set_opt(&mut cfg.paths.manifest, &f.manifest);
    set_opt(&mut cfg.paths.val_manifest, &f.val_manifest);
    set(&mut cfg.val_subjects, &f.val_subjects);
    set_opt(&mut cfg.paths.gaze_checkpoint, &f.gaze_checkpoint);
    set(&mut cfg.paths.models, &f.models);
    set_opt(&mut cfg.paths.videos, &f.videos);
    set_opt(&mut cfg.paths.video, &f.video);
    set_opt(&mut cfg.paths.events, &f.events);
    set_opt(&mut cfg.paths.report, &f.report);
    set(&mut cfg.backbone.architecture, &f.backbone);
    set(&mut cfg.backbone.input_side, &f.input_side);
    set_opt(&mut cfg.backbone.pretrained, &f.pretrained);
    let train = cfg.stage_train_mut();
    set(&mut train.learning_rate, &f.lr);
    set(&mut train.momentum, &f.momentum);
    set(&mut train.batch_size, &f.batch_size);
    set(&mut train.max_epochs, &f.max_epochs);
    set(&mut cfg.runtime.window, &f.window);
    set(&mut cfg.runtime.dwell, &f.dwell);
    set(&mut cfg.runtime.fps, &f.fps);
    set(&mut cfg.synth.subjects, &f.subjects);
    set(&mut cfg.synth.per_class, &f.per_class);
    set(&mut cfg.synth.gaze_per_subject, &f.gaze_per_subject);
    set(&mut cfg.synth.image_side, &f.image_side);
}
