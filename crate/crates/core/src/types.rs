//! Domain values shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ValueError {
    #[error("gaze angle {name}={value} is not a finite angle in [-pi, pi]")]
    InvalidAngle { name: &'static str, value: f64 },
    #[error("probabilities {0:?} are not a distribution over three classes")]
    InvalidProbabilities([f64; 3]),
    #[error("unknown attention class `{0}`")]
    UnknownClass(String),
}

/// Viewing direction in radians. Pitch is vertical (positive up), yaw is
/// horizontal (positive towards the image's right side).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeDirection {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeDirection {
    pub fn new(pitch: f64, yaw: f64) -> Result<Self, ValueError> {
        let gaze = Self { pitch, yaw };
        gaze.validate()?;
        Ok(gaze)
    }

    pub fn validate(&self) -> Result<(), ValueError> {
        for (name, value) in [("pitch", self.pitch), ("yaw", self.yaw)] {
            if !value.is_finite() || value.abs() > std::f64::consts::PI {
                return Err(ValueError::InvalidAngle { name, value });
            }
        }
        Ok(())
    }
}

/// The three attention targets. The discriminant is the canonical class
/// index used by the classifier head, confusion matrices and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionClass {
    Cobot = 0,
    Table = 1,
    Distracted = 2,
}

impl AttentionClass {
    pub const ALL: [AttentionClass; 3] = [Self::Cobot, Self::Table, Self::Distracted];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cobot => "Cobot",
            Self::Table => "Table",
            Self::Distracted => "Distracted",
        }
    }
}

impl fmt::Display for AttentionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttentionClass {
    type Err = ValueError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cobot" => Ok(Self::Cobot),
            "table" => Ok(Self::Table),
            "distracted" => Ok(Self::Distracted),
            _ => Err(ValueError::UnknownClass(s.to_string())),
        }
    }
}

/// Classifier output: one probability per [`AttentionClass`], in index order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ClassProbabilities([f64; 3]);

impl ClassProbabilities {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(values: [f64; 3]) -> Result<Self, ValueError> {
        let sum: f64 = values.iter().sum();
        let in_range = values.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p));
        if !in_range || (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(ValueError::InvalidProbabilities(values));
        }
        Ok(Self(values))
    }

    /// Numerically stable softmax over three logits.
    pub fn from_logits(logits: [f64; 3]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps = logits.map(|z| (z - max).exp());
        let total: f64 = exps.iter().sum();
        Self(exps.map(|e| e / total))
    }

    pub fn values(&self) -> [f64; 3] {
        self.0
    }

    pub fn get(&self, class: AttentionClass) -> f64 {
        self.0[class.index()]
    }

    /// Most probable class; ties go to the lowest class index.
    pub fn argmax(&self) -> AttentionClass {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        AttentionClass::ALL[best]
    }
}

impl TryFrom<[f64; 3]> for ClassProbabilities {
    type Error = ValueError;

    fn try_from(values: [f64; 3]) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ClassProbabilities> for [f64; 3] {
    fn from(p: ClassProbabilities) -> Self {
        p.0
    }
}
