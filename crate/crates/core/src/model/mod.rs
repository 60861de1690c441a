//! Gaze regressor, its transfer to the attention classifier, training and
//! checkpointing.

mod checkpoint;
mod config;
mod data;
mod schedule;
mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint, ModelKind, CHECKPOINT_VERSION};
pub use config::{Architecture, BackboneConfig, BrightnessRange, Monitor, Optimizer, TrainConfig, TINY_FC_UNITS, VGG16_FC_UNITS};
pub use data::{PreparedSet, Preprocessor};
pub use schedule::{scheduler_step, PlateauTracker, ScheduleDecision, SchedulePolicy};
pub use train::{evaluate_loss, EpochRecord};

use crate::nn::loss::LossKind;
use crate::nn::{Network, NetworkError};
use crate::types::{ClassProbabilities, GazeDirection};
use crate::vision::{ImageTensor, VisionError};

pub const GAZE_OUTPUTS: usize = 2;
pub const ATTENTION_OUTPUTS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown architecture `{0}` (expected vgg16 or tiny)")]
    UnknownArchitecture(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("empty {0}")]
    EmptyDataset(&'static str),
    #[error("loss became non-finite in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found} not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Dataset(#[from] crate::datasets::DatasetError),
}

/// Backbone + dense layer + 2-unit linear head predicting (pitch, yaw).
#[derive(Debug, Clone, PartialEq)]
pub struct GazeModel {
    pub backbone: BackboneConfig,
    pub network: Network<f32>,
}

/// Backbone with frozen conv layers + trainable dense layer + 3-unit head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionModel {
    pub backbone: BackboneConfig,
    pub network: Network<f32>,
}

pub fn build_gaze_model(cfg: &BackboneConfig, seed: u64) -> Result<GazeModel, ModelError> {
    let specs = cfg.layer_specs(GAZE_OUTPUTS)?;
    let mut network = Network::init(cfg.input_shape(), &specs, seed)?;
    if let Some(path) = &cfg.pretrained {
        let source = load_checkpoint(path)?;
        let loaded = copy_matching_conv(&source.network, &mut network);
        if loaded == 0 {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "{} shares no conv layers with {:?}",
                path.display(),
                cfg.architecture
            )));
        }
    }
    Ok(GazeModel { backbone: cfg.clone(), network })
}

/// Copies conv parameters with equal names and sizes; returns how many tensors were copied.
fn copy_matching_conv(src: &Network<f32>, dst: &mut Network<f32>) -> usize {
    let conv_names: Vec<String> = src.layers().iter().filter(|l| l.is_conv()).map(|l| l.name.clone()).collect();
    let mut copied = 0;
    for (name, values) in src.named_params() {
        let layer = name.rsplit_once('.').map_or("", |(l, _)| l);
        if conv_names.iter().any(|c| c == layer) && dst.set_param(&name, values).is_ok() {
            copied += 1;
        }
    }
    copied
}

fn check_set(side: usize, set: &PreparedSet) -> Result<(), ModelError> {
    if set.side() != side {
        return Err(ModelError::Shape(format!("prepared side {} but model expects {side}", set.side())));
    }
    Ok(())
}

impl GazeModel {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self, ModelError> {
        if ckpt.kind != ModelKind::Gaze || ckpt.network.output_len() != GAZE_OUTPUTS {
            return Err(ModelError::IncompatibleCheckpoint(format!("expected a gaze model, got {:?}", ckpt.kind)));
        }
        Ok(Self { backbone: ckpt.backbone.clone(), network: ckpt.network.clone() })
    }

    pub fn checkpoint(&self, train: TrainConfig, history: Vec<EpochRecord>) -> ModelCheckpoint {
        ModelCheckpoint {
            kind: ModelKind::Gaze,
            backbone: self.backbone.clone(),
            train,
            history,
            network: self.network.clone(),
        }
    }

    /// Gaze from a normalized `side`x`side` image. Outputs are clamped to [-pi, pi].
    pub fn predict(&self, image: &ImageTensor) -> Result<GazeDirection, ModelError> {
        let out = self.network.forward(&checked_input(&self.backbone, image)?)?;
        let pi = std::f64::consts::PI;
        let angle = |v: f32| (v as f64).clamp(-pi, pi);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Divergence { epoch: 0 });
        }
        Ok(GazeDirection { pitch: angle(out[0]), yaw: angle(out[1]) })
    }

    /// Gaze from a raw prepared (cropped, resized) image.
    pub fn predict_raw(&self, image: &ImageTensor) -> Result<GazeDirection, ModelError> {
        self.predict(&crate::vision::normalize(image, &self.backbone.normalization)?)
    }
}

impl AttentionModel {
    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self, ModelError> {
        if ckpt.kind != ModelKind::Attention || ckpt.network.output_len() != ATTENTION_OUTPUTS {
            return Err(ModelError::IncompatibleCheckpoint(format!(
                "expected an attention model, got {:?}",
                ckpt.kind
            )));
        }
        Ok(Self { backbone: ckpt.backbone.clone(), network: ckpt.network.clone() })
    }

    pub fn checkpoint(&self, train: TrainConfig, history: Vec<EpochRecord>) -> ModelCheckpoint {
        ModelCheckpoint {
            kind: ModelKind::Attention,
            backbone: self.backbone.clone(),
            train,
            history,
            network: self.network.clone(),
        }
    }

    /// Class probabilities for normalized `side`x`side` images, in input order.
    pub fn predict(&self, images: &[ImageTensor]) -> Result<Vec<ClassProbabilities>, ModelError> {
        images
            .iter()
            .map(|img| {
                let out = self.network.forward(&checked_input(&self.backbone, img)?)?;
                let logits = [out[0] as f64, out[1] as f64, out[2] as f64];
                if logits.iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::Divergence { epoch: 0 });
                }
                Ok(ClassProbabilities::from_logits(logits))
            })
            .collect()
    }

    /// Predictions for raw prepared images.
    pub fn predict_raw(&self, images: &[ImageTensor]) -> Result<Vec<ClassProbabilities>, ModelError> {
        let normalized = images
            .iter()
            .map(|img| crate::vision::normalize(img, &self.backbone.normalization))
            .collect::<Result<Vec<_>, _>>()?;
        self.predict(&normalized)
    }

    pub fn predict_set(&self, set: &PreparedSet) -> Result<Vec<ClassProbabilities>, ModelError> {
        check_set(self.backbone.input_side, set)?;
        (0..set.len())
            .map(|i| Ok(self.predict_raw(std::slice::from_ref(set.image(i)))?.remove(0)))
            .collect()
    }
}

fn checked_input(backbone: &BackboneConfig, image: &ImageTensor) -> Result<Vec<f32>, ModelError> {
    let side = backbone.input_side;
    if image.width() != side || image.height() != side {
        return Err(ModelError::Shape(format!(
            "expected a {side}x{side} input, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    image.to_chw().map_err(|_| ModelError::Shape("expected a normalized image".into()))
}

pub fn predict_gaze(model: &GazeModel, image: &ImageTensor) -> Result<GazeDirection, ModelError> {
    model.predict(image)
}

pub fn predict_attention(model: &AttentionModel, images: &[ImageTensor]) -> Result<Vec<ClassProbabilities>, ModelError> {
    model.predict(images)
}

/// Trains the gaze regressor with mean-absolute-error loss. The returned
/// checkpoint holds the weights of the best validation epoch.
pub fn train_gaze(
    mut model: GazeModel,
    train: &PreparedSet,
    val: &PreparedSet,
    cfg: &TrainConfig,
) -> Result<ModelCheckpoint, ModelError> {
    if cfg.loss != LossKind::MeanAbsoluteError {
        return Err(ModelError::Config("gaze training uses mean-absolute-error".into()));
    }
    if val.is_empty() {
        return Err(ModelError::EmptyDataset("validation set"));
    }
    check_set(model.backbone.input_side, train)?;
    check_set(model.backbone.input_side, val)?;
    let history = train::fit(&mut model.network, &model.backbone.normalization, train, Some(val), cfg)?;
    Ok(model.checkpoint(cfg.clone(), history))
}

/// Copies a trained gaze model into an attention classifier: conv weights
/// are copied and frozen, the dense layer is copied and stays trainable,
/// and the head is replaced by a fresh 3-unit layer initialized from `seed`.
pub fn transfer_to_attention(ckpt: &ModelCheckpoint, seed: u64) -> Result<AttentionModel, ModelError> {
    let gaze = GazeModel::from_checkpoint(ckpt)?;
    let specs = gaze.backbone.layer_specs(ATTENTION_OUTPUTS)?;
    let mut network = Network::init(gaze.backbone.input_shape(), &specs, seed)?;
    let head = specs.len() - 1;
    if network.layers().len() != gaze.network.layers().len() {
        return Err(ModelError::IncompatibleCheckpoint("layer stack does not match its backbone config".into()));
    }
    for (name, values) in gaze.network.named_params() {
        if !name.starts_with(&format!("{}.", network.layers()[head].name)) {
            network
                .set_param(&name, values)
                .map_err(|e| ModelError::IncompatibleCheckpoint(e.to_string()))?;
        }
    }
    for layer in network.layers_mut() {
        layer.frozen = layer.is_conv();
    }
    Ok(AttentionModel { backbone: gaze.backbone, network })
}

/// Fine-tunes the attention classifier with cross-entropy loss. Frozen
/// layers are never updated.
pub fn train_attention(
    mut model: AttentionModel,
    train: &PreparedSet,
    cfg: &TrainConfig,
) -> Result<ModelCheckpoint, ModelError> {
    if cfg.loss != LossKind::CategoricalCrossEntropy {
        return Err(ModelError::Config("attention training uses categorical-cross-entropy".into()));
    }
    if cfg.monitor == Monitor::Validation {
        return Err(ModelError::Config("attention training monitors the training loss".into()));
    }
    check_set(model.backbone.input_side, train)?;
    let history = train::fit(&mut model.network, &model.backbone.normalization, train, None, cfg)?;
    Ok(model.checkpoint(cfg.clone(), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::Target;

    fn tiny() -> BackboneConfig {
        BackboneConfig::tiny(32)
    }

    fn toy_set(n: usize, classes: bool) -> PreparedSet {
        let mut set = PreparedSet::new(32);
        for i in 0..n {
            let v = (i * 37 % 200) as u8;
            let img = ImageTensor::filled(32, 32, [v, 255 - v, v / 2]).unwrap();
            let target = if classes {
                Target::Class(i % 3)
            } else {
                Target::Values(vec![v as f32 / 400.0, -(v as f32) / 400.0])
            };
            set.push(img, target, "s");
        }
        set
    }

    #[test]
    fn heads_have_fixed_width() {
        let vgg = build_gaze_model(&BackboneConfig::default(), 0).unwrap();
        assert_eq!(vgg.network.output_len(), 2);
        assert_eq!(vgg.network.layers().iter().filter(|l| l.is_conv()).count(), 13);
        let g = build_gaze_model(&tiny(), 0).unwrap();
        assert!(g.network.param_count() <= 100_000, "{}", g.network.param_count());
        assert_eq!(build_gaze_model(&tiny(), 4).unwrap(), build_gaze_model(&tiny(), 4).unwrap());
        let big = build_gaze_model(&BackboneConfig::tiny(224), 0).unwrap();
        assert_eq!(big.network.param_count(), g.network.param_count());
        assert!(matches!("resnet".parse::<Architecture>(), Err(ModelError::UnknownArchitecture(_))));
    }

    #[test]
    fn pretrained_backbone_loads_conv_weights() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ckpt");
        let source = build_gaze_model(&tiny(), 1).unwrap();
        save_checkpoint(&source.checkpoint(TrainConfig::gaze(), vec![]), &path).unwrap();
        let cfg = BackboneConfig { pretrained: Some(path), ..tiny() };
        let model = build_gaze_model(&cfg, 2).unwrap();
        for (a, b) in source.network.layers().iter().zip(model.network.layers()) {
            if a.is_conv() {
                assert_eq!(a.params(), b.params());
            } else if a.has_params() {
                assert_ne!(a.params(), b.params());
            }
        }
        let vgg = BackboneConfig { pretrained: cfg.pretrained.clone(), input_side: 32, ..Default::default() };
        assert!(matches!(build_gaze_model(&vgg, 0), Err(ModelError::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn transfer_copies_and_freezes() {
        let gaze = build_gaze_model(&tiny(), 1).unwrap();
        let ckpt = gaze.checkpoint(TrainConfig::gaze(), vec![]);
        let attn = transfer_to_attention(&ckpt, 2).unwrap();
        assert_eq!(attn.network.output_len(), 3);
        for (src, dst) in gaze.network.layers().iter().zip(attn.network.layers()) {
            if src.is_conv() {
                assert!(dst.frozen);
                assert_eq!(src.params(), dst.params());
            }
            if src.name == "fc" {
                assert!(!dst.frozen);
                assert_eq!(src.params(), dst.params());
            }
        }
        let attn_ckpt = attn.checkpoint(TrainConfig::attention(), vec![]);
        assert!(matches!(transfer_to_attention(&attn_ckpt, 0), Err(ModelError::IncompatibleCheckpoint(_))));
    }

    #[test]
    fn prediction_shapes_and_determinism() {
        let gaze = build_gaze_model(&tiny(), 1).unwrap();
        let img = crate::vision::normalize(&ImageTensor::filled(32, 32, [9, 80, 200]).unwrap(), &Default::default()).unwrap();
        assert_eq!(gaze.predict(&img).unwrap(), gaze.predict(&img).unwrap());
        let wrong = crate::vision::normalize(&ImageTensor::filled(31, 32, [0; 3]).unwrap(), &Default::default()).unwrap();
        assert!(matches!(predict_gaze(&gaze, &wrong), Err(ModelError::Shape(_))));
        let raw = ImageTensor::filled(32, 32, [0; 3]).unwrap();
        assert!(matches!(predict_gaze(&gaze, &raw), Err(ModelError::Shape(_))));

        let attn = transfer_to_attention(&gaze.checkpoint(TrainConfig::gaze(), vec![]), 3).unwrap();
        let batch = vec![img.clone(), wrong_free(&img, 7), img.clone()];
        let probs = predict_attention(&attn, &batch).unwrap();
        assert_eq!(probs.len(), 3);
        assert_eq!(probs[0], probs[2]);
        for p in probs {
            assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    fn wrong_free(img: &ImageTensor, shift: u8) -> ImageTensor {
        let raw = ImageTensor::filled(32, 32, [shift, shift, shift]).unwrap();
        let _ = img;
        crate::vision::normalize(&raw, &Default::default()).unwrap()
    }

    #[test]
    fn constant_validation_loss_stops_after_patience() {
        let cfg = TrainConfig { learning_rate: 1e-30, max_epochs: 50, ..TrainConfig::gaze() };
        let model = build_gaze_model(&tiny(), 5).unwrap();
        let ckpt = train_gaze(model, &toy_set(6, false), &toy_set(3, false), &cfg).unwrap();
        assert_eq!(ckpt.history.len(), 1 + cfg.early_patience);
        let first = ckpt.history[0].val_loss.unwrap();
        assert!(ckpt.history.iter().all(|r| r.val_loss == Some(first)));
        assert!((ckpt.history[6].learning_rate - 1e-31).abs() < 1e-40);
    }

    #[test]
    fn training_validates_inputs() {
        let model = build_gaze_model(&tiny(), 5).unwrap();
        let empty = PreparedSet::new(32);
        assert!(matches!(
            train_gaze(model.clone(), &toy_set(3, false), &empty, &TrainConfig::gaze()),
            Err(ModelError::EmptyDataset(_))
        ));
        assert!(matches!(
            train_gaze(model.clone(), &empty, &toy_set(3, false), &TrainConfig::gaze()),
            Err(ModelError::EmptyDataset(_))
        ));
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::gaze() };
        assert!(matches!(train_gaze(model.clone(), &toy_set(3, false), &toy_set(3, false), &bad), Err(ModelError::Config(_))));
        let huge = TrainConfig { learning_rate: 1e30, max_epochs: 3, ..TrainConfig::gaze() };
        assert!(matches!(
            train_gaze(model, &toy_set(8, false), &toy_set(3, false), &huge),
            Err(ModelError::Divergence { .. })
        ));
    }

    #[test]
    fn attention_training_respects_freeze() {
        let gaze = build_gaze_model(&tiny(), 1).unwrap();
        let attn = transfer_to_attention(&gaze.checkpoint(TrainConfig::gaze(), vec![]), 2).unwrap();
        let before = attn.network.clone();
        let cfg = TrainConfig { max_epochs: 3, ..TrainConfig::attention() };
        let ckpt = train_attention(attn, &toy_set(9, true), &cfg).unwrap();
        for (a, b) in before.layers().iter().zip(ckpt.network.layers()) {
            if a.frozen {
                assert_eq!(a.params(), b.params());
            }
        }
        assert_ne!(before.layers().last().unwrap().params(), ckpt.network.layers().last().unwrap().params());
        assert!(ckpt.history.len() <= cfg.max_epochs);
    }

    #[test]
    fn defaults_mirror_published_hyperparameters() {
        let g = TrainConfig::gaze();
        assert_eq!((g.learning_rate, g.batch_size, g.plateau_patience, g.plateau_factor, g.early_patience), (0.001, 32, 5, 0.1, 7));
        let a = TrainConfig::attention();
        assert_eq!((a.learning_rate, a.batch_size), (0.01, 15));
        assert_eq!(a.augmentation, Some(BrightnessRange { min: 0.75, max: 1.25 }));
    }
}
