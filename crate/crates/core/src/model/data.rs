//! Turning manifests into preprocessed in-memory training sets.

use super::ModelError;
use crate::datasets::{AttentionSample, GazeSample, Manifest};
use crate::nn::loss::Target;
use crate::vision::{self, crop_to_face, FaceBox, FaceDetector, ImageTensor, Normalization};

/// Crop + resize stage shared by training, evaluation and streaming.
#[derive(Clone, Copy)]
pub struct Preprocessor<'a> {
    pub side: usize,
    pub margin: f64,
    pub detector: &'a dyn FaceDetector,
}

impl<'a> Preprocessor<'a> {
    pub fn new(side: usize, margin: f64, detector: &'a dyn FaceDetector) -> Self {
        Self { side, margin, detector }
    }

    /// Crops to `face` (or the detected face when none is given) and resizes
    /// to the model input side. The result stays raw.
    pub fn prepare(&self, image: &ImageTensor, face: Option<&FaceBox>) -> Result<ImageTensor, ModelError> {
        let cropped = match face {
            Some(f) => crop_to_face(image, f, self.margin)?,
            None => vision::detect_and_crop(image, self.detector, self.margin)?,
        };
        Ok(vision::resize_to_input(&cropped, self.side)?)
    }

    pub fn prepare_gaze(&self, manifest: &Manifest<GazeSample>) -> Result<PreparedSet, ModelError> {
        let mut set = PreparedSet::new(self.side);
        for s in manifest.records() {
            let img = ImageTensor::load(&manifest.resolve(&s.image))?;
            let target = Target::Values(vec![s.pitch as f32, s.yaw as f32]);
            set.push(self.prepare(&img, s.face.as_ref())?, target, &s.subject);
        }
        Ok(set)
    }

    pub fn prepare_attention(&self, manifest: &Manifest<AttentionSample>) -> Result<PreparedSet, ModelError> {
        let mut set = PreparedSet::new(self.side);
        for s in manifest.records() {
            let img = ImageTensor::load(&manifest.resolve(&s.image))?;
            set.push(self.prepare(&img, s.face.as_ref())?, Target::Class(s.label.index()), &s.subject);
        }
        Ok(set)
    }
}

/// Cropped, resized raw images with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    side: usize,
    images: Vec<ImageTensor>,
    targets: Vec<Target<f32>>,
    subjects: Vec<String>,
}

impl PreparedSet {
    pub fn new(side: usize) -> Self {
        Self { side, images: Vec::new(), targets: Vec::new(), subjects: Vec::new() }
    }

    /// Adds a raw `side`x`side` image.
    pub fn push(&mut self, image: ImageTensor, target: Target<f32>, subject: &str) {
        assert_eq!((image.width(), image.height()), (self.side, self.side), "prepared images must be square inputs");
        self.images.push(image);
        self.targets.push(target);
        self.subjects.push(subject.to_string());
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn image(&self, i: usize) -> &ImageTensor {
        &self.images[i]
    }

    pub fn target(&self, i: usize) -> &Target<f32> {
        &self.targets[i]
    }

    pub fn subject(&self, i: usize) -> &str {
        &self.subjects[i]
    }

    /// Class labels of a classification set.
    pub fn labels(&self) -> Vec<usize> {
        self.targets
            .iter()
            .map(|t| match t {
                Target::Class(c) => *c,
                Target::Values(_) => panic!("labels() on a regression set"),
            })
            .collect()
    }

    /// Subset in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            side: self.side,
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i].clone()).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }
}

/// Normalized CHW network input of a raw image.
pub(crate) fn network_input(image: &ImageTensor, norm: &Normalization) -> Result<Vec<f32>, ModelError> {
    Ok(vision::normalize(image, norm)?.to_chw()?)
}
