use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::loss::LossKind;
use crate::nn::{LayerSpec, Shape};
use crate::vision::{Normalization, BRIGHTNESS_MAX, BRIGHTNESS_MIN, DEFAULT_CROP_MARGIN, DEFAULT_INPUT_SIDE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// Canonical 13-conv-layer VGG16 feature extractor.
    Vgg16,
    /// Three conv blocks and a small dense layer, for CPU-scale runs.
    Tiny,
}

impl FromStr for Architecture {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vgg16" => Ok(Self::Vgg16),
            "tiny" => Ok(Self::Tiny),
            other => Err(ModelError::UnknownArchitecture(other.to_string())),
        }
    }
}

/// Units of the dense layer between backbone and prediction head.
pub const VGG16_FC_UNITS: usize = 512;
pub const TINY_FC_UNITS: usize = 64;
const TINY_POOL_SIDE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub architecture: Architecture,
    pub input_side: usize,
    /// Checkpoint whose matching conv weights initialize the backbone.
    pub pretrained: Option<PathBuf>,
    /// Context margin around detected faces.
    pub crop_margin: f64,
    pub normalization: Normalization,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Vgg16,
            input_side: DEFAULT_INPUT_SIDE,
            pretrained: None,
            crop_margin: DEFAULT_CROP_MARGIN,
            normalization: Normalization::default(),
        }
    }
}

impl BackboneConfig {
    pub fn tiny(input_side: usize) -> Self {
        Self { architecture: Architecture::Tiny, input_side, ..Default::default() }
    }

    pub fn input_shape(&self) -> Shape {
        Shape::new(3, self.input_side, self.input_side)
    }

    /// Layer stack ending in a linear head with `outputs` units.
    pub fn layer_specs(&self, outputs: usize) -> Result<Vec<LayerSpec>, ModelError> {
        let conv = |name: String, i: usize, o: usize| LayerSpec::Conv { name, in_channels: i, out_channels: o };
        let mut specs = Vec::new();
        let (features, fc_units) = match self.architecture {
            Architecture::Vgg16 => {
                let blocks: [&[usize]; 5] = [&[64, 64], &[128, 128], &[256, 256, 256], &[512, 512, 512], &[512, 512, 512]];
                let mut channels = 3;
                for (b, widths) in blocks.iter().enumerate() {
                    for (c, &w) in widths.iter().enumerate() {
                        specs.push(conv(format!("block{}_conv{}", b + 1, c + 1), channels, w));
                        channels = w;
                    }
                    specs.push(LayerSpec::MaxPool);
                }
                let side = self.input_side / 32;
                (512 * side * side, VGG16_FC_UNITS)
            }
            Architecture::Tiny => {
                let mut channels = 3;
                for (i, w) in [8, 16, 32].into_iter().enumerate() {
                    specs.push(conv(format!("conv{}", i + 1), channels, w));
                    specs.push(LayerSpec::MaxPool);
                    channels = w;
                }
                specs.push(LayerSpec::AdaptiveAvgPool { side: TINY_POOL_SIDE });
                (32 * TINY_POOL_SIDE * TINY_POOL_SIDE, TINY_FC_UNITS)
            }
        };
        if features == 0 {
            return Err(ModelError::Config(format!(
                "input side {} too small for {:?}",
                self.input_side, self.architecture
            )));
        }
        specs.push(LayerSpec::Dense { name: "fc".into(), inputs: features, outputs: fc_units, relu: true });
        specs.push(LayerSpec::Dense { name: "head".into(), inputs: fc_units, outputs, relu: false });
        Ok(specs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
}

/// Which loss drives plateau and early-stopping decisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monitor {
    Validation,
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrightnessRange {
    pub min: f64,
    pub max: f64,
}

impl Default for BrightnessRange {
    fn default() -> Self {
        Self { min: BRIGHTNESS_MIN, max: BRIGHTNESS_MAX }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_patience: usize,
    pub min_delta: f64,
    pub monitor: Monitor,
    pub max_epochs: usize,
    pub seed: u64,
    pub augmentation: Option<BrightnessRange>,
    /// Restore the weights of the best monitored epoch when training ends.
    pub restore_best: bool,
}

impl TrainConfig {
    /// Gaze regression stage: SGD lr 0.001, batch 32, MAE, plateau 5 x0.1, early stop 7.
    pub fn gaze() -> Self {
        Self {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.001,
            momentum: 0.0,
            batch_size: 32,
            loss: LossKind::MeanAbsoluteError,
            plateau_patience: 5,
            plateau_factor: 0.1,
            early_patience: 7,
            min_delta: 0.0,
            monitor: Monitor::Validation,
            max_epochs: 100,
            seed: 0,
            augmentation: None,
            restore_best: true,
        }
    }

    /// Attention stage: SGD lr 0.01, batch 15, cross-entropy, +/-25% brightness,
    /// at most 50 epochs with a training-loss plateau stop.
    pub fn attention() -> Self {
        Self {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.01,
            momentum: 0.0,
            batch_size: 15,
            loss: LossKind::CategoricalCrossEntropy,
            plateau_patience: 5,
            plateau_factor: 0.1,
            early_patience: 5,
            min_delta: 1e-4,
            monitor: Monitor::Training,
            max_epochs: 50,
            seed: 0,
            augmentation: Some(BrightnessRange::default()),
            restore_best: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be at least 1".into());
        }
        if self.plateau_patience == 0 || self.early_patience == 0 {
            return bad("patiences must be at least 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor must be in (0, 1), got {}", self.plateau_factor));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return bad(format!("min_delta must be non-negative, got {}", self.min_delta));
        }
        if let Some(b) = self.augmentation {
            if !(BRIGHTNESS_MIN <= b.min && b.min <= b.max && b.max <= BRIGHTNESS_MAX) {
                return bad(format!("brightness range {b:?} outside [0.75, 1.25]"));
            }
        }
        Ok(())
    }
}
