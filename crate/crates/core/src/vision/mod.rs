//! Image preprocessing: face cropping, resizing, brightness augmentation
//! and normalization.
//!
//! All operations are pure functions of their inputs.

mod detect;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use detect::{ContrastDetector, FaceDetector, FixedBoxDetector, NoFaceDetector};

/// Default input side of the classifier backbones.
pub const DEFAULT_INPUT_SIDE: usize = 224;
/// Default context margin added around a detected face, as a fraction of the box size.
pub const DEFAULT_CROP_MARGIN: f64 = 0.1;
/// Brightness augmentation bounds (multiplicative, +/-25%).
pub const BRIGHTNESS_MIN: f64 = 0.75;
pub const BRIGHTNESS_MAX: f64 = 1.25;

#[derive(Debug, Error)]
pub enum VisionError {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("no face detected")]
    NoFace,
    #[error("brightness factor {0} outside [0.75, 1.25]")]
    FactorOutOfRange(f64),
    #[error("expected a {expected} image, got a {actual} one")]
    WrongStage { expected: Stage, actual: Stage },
    #[error("image io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Normalized,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Raw => "raw",
            Stage::Normalized => "normalized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PixelData {
    Raw(Vec<u8>),
    Normalized(Vec<f32>),
}

/// Three-channel image stored row-major with interleaved channels (HWC).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: PixelData,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self, VisionError> {
        Self::check_dims(width, height, data.len())?;
        Ok(Self { height, width, data: PixelData::Raw(data) })
    }

    pub fn from_normalized(width: usize, height: usize, data: Vec<f32>) -> Result<Self, VisionError> {
        Self::check_dims(width, height, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(VisionError::InvalidImage("non-finite normalized value".into()));
        }
        Ok(Self { height, width, data: PixelData::Normalized(data) })
    }

    /// Uniformly filled raw image.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, VisionError> {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::from_raw(width, height, data)
    }

    fn check_dims(width: usize, height: usize, len: usize) -> Result<(), VisionError> {
        if width == 0 || height == 0 {
            return Err(VisionError::InvalidImage(format!("zero-sized image {width}x{height}")));
        }
        if len != width * height * Self::CHANNELS {
            return Err(VisionError::InvalidImage(format!(
                "{len} values do not match {width}x{height}x3"
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn stage(&self) -> Stage {
        match self.data {
            PixelData::Raw(_) => Stage::Raw,
            PixelData::Normalized(_) => Stage::Normalized,
        }
    }

    pub fn data(&self) -> &PixelData {
        &self.data
    }

    pub fn raw(&self) -> Result<&[u8], VisionError> {
        match &self.data {
            PixelData::Raw(d) => Ok(d),
            PixelData::Normalized(_) => {
                Err(VisionError::WrongStage { expected: Stage::Raw, actual: Stage::Normalized })
            }
        }
    }

    pub fn normalized(&self) -> Result<&[f32], VisionError> {
        match &self.data {
            PixelData::Normalized(d) => Ok(d),
            PixelData::Raw(_) => {
                Err(VisionError::WrongStage { expected: Stage::Normalized, actual: Stage::Raw })
            }
        }
    }

    /// Value at (x, y, c) as a float, regardless of stage.
    pub fn value(&self, x: usize, y: usize, c: usize) -> f32 {
        let i = (y * self.width + x) * 3 + c;
        match &self.data {
            PixelData::Raw(d) => d[i] as f32,
            PixelData::Normalized(d) => d[i],
        }
    }

    /// Channel-major (CHW) copy of a normalized image, the layout the networks consume.
    pub fn to_chw(&self) -> Result<Vec<f32>, VisionError> {
        let data = self.normalized()?;
        let plane = self.width * self.height;
        let mut out = vec![0.0; plane * 3];
        for (p, px) in data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = px[c];
            }
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, VisionError> {
        let img = image::open(path)
            .map_err(|source| VisionError::Io { path: path.display().to_string(), source })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_raw(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), VisionError> {
        let raw = self.raw()?;
        image::save_buffer_with_format(
            path,
            raw,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| VisionError::Io { path: path.display().to_string(), source })
    }
}

/// Axis-aligned face box in source pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

/// Integer pixel rectangle, always inside the image it was clamped against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl FaceBox {
    pub fn new(x: f64, y: f64, width: f64, height: f64, confidence: f64) -> Self {
        Self { x, y, width, height, confidence: confidence.clamp(0.0, 1.0) }
    }

    /// Box covering a whole image.
    pub fn full(width: usize, height: usize) -> Self {
        Self::new(0.0, 0.0, width as f64, height as f64, 1.0)
    }

    /// Expands the box by `margin` of its size on every side and clamps it to
    /// the image. `None` when nothing of the box overlaps the image.
    pub fn expand_clamped(&self, margin: f64, img_width: usize, img_height: usize) -> Option<PixelRect> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return None;
        }
        let mx = margin * self.width;
        let my = margin * self.height;
        let x0 = (self.x - mx).floor().max(0.0);
        let y0 = (self.y - my).floor().max(0.0);
        let x1 = (self.x + self.width + mx).ceil().min(img_width as f64);
        let y1 = (self.y + self.height + my).ceil().min(img_height as f64);
        if !(x1 > x0 && y1 > y0) {
            return None;
        }
        Some(PixelRect {
            x: x0 as usize,
            y: y0 as usize,
            width: (x1 - x0) as usize,
            height: (y1 - y0) as usize,
        })
    }
}

pub fn crop(image: &ImageTensor, rect: PixelRect) -> Result<ImageTensor, VisionError> {
    if rect.width == 0
        || rect.height == 0
        || rect.x + rect.width > image.width
        || rect.y + rect.height > image.height
    {
        return Err(VisionError::InvalidImage(format!("crop {rect:?} outside image")));
    }
    let raw = image.raw()?;
    let mut out = Vec::with_capacity(rect.width * rect.height * 3);
    for y in rect.y..rect.y + rect.height {
        let start = (y * image.width + rect.x) * 3;
        out.extend_from_slice(&raw[start..start + rect.width * 3]);
    }
    ImageTensor::from_raw(rect.width, rect.height, out)
}

/// Crops `image` to `face` expanded by `margin`.
pub fn crop_to_face(image: &ImageTensor, face: &FaceBox, margin: f64) -> Result<ImageTensor, VisionError> {
    if margin < 0.0 || !margin.is_finite() {
        return Err(VisionError::InvalidImage(format!("negative crop margin {margin}")));
    }
    let rect = face
        .expand_clamped(margin, image.width, image.height)
        .ok_or_else(|| VisionError::InvalidImage(format!("face box {face:?} outside image")))?;
    crop(image, rect)
}

/// Runs `detector` and crops to the detected face plus `margin` on each side.
pub fn detect_and_crop(
    image: &ImageTensor,
    detector: &dyn FaceDetector,
    margin: f64,
) -> Result<ImageTensor, VisionError> {
    image.raw()?;
    let face = detector.detect(image).ok_or(VisionError::NoFace)?;
    crop_to_face(image, &face, margin)
}

/// Bilinear resize to `side`x`side` with half-pixel centers. Aspect ratio is
/// not preserved. Raw images stay raw (rounded), normalized stay normalized.
pub fn resize_to_input(image: &ImageTensor, side: usize) -> Result<ImageTensor, VisionError> {
    if side == 0 {
        return Err(VisionError::InvalidImage("target side is zero".into()));
    }
    if image.width == side && image.height == side {
        return Ok(image.clone());
    }
    let taps_x = bilinear_taps(image.width, side);
    let taps_y = bilinear_taps(image.height, side);
    let mut out = vec![0f32; side * side * 3];
    for (oy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in taps_x.iter().enumerate() {
            for c in 0..3 {
                let top = image.value(x0, y0, c) * (1.0 - fx) + image.value(x1, y0, c) * fx;
                let bottom = image.value(x0, y1, c) * (1.0 - fx) + image.value(x1, y1, c) * fx;
                out[(oy * side + ox) * 3 + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    match image.stage() {
        Stage::Raw => {
            let raw = out.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
            ImageTensor::from_raw(side, side, raw)
        }
        Stage::Normalized => ImageTensor::from_normalized(side, side, out),
    }
}

fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, (pos - lo as f64) as f32)
        })
        .collect()
}

/// Multiplies every channel value by `factor`, rounding and saturating to [0, 255].
pub fn adjust_brightness(image: &ImageTensor, factor: f64) -> Result<ImageTensor, VisionError> {
    if !(BRIGHTNESS_MIN..=BRIGHTNESS_MAX).contains(&factor) {
        return Err(VisionError::FactorOutOfRange(factor));
    }
    let raw = image.raw()?;
    let data = raw.iter().map(|&v| (v as f64 * factor).round().clamp(0.0, 255.0) as u8).collect();
    ImageTensor::from_raw(image.width, image.height, data)
}

/// Per-channel affine normalization `(v - mean_c) * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub means: [f64; 3],
    pub scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self { means: [0.0; 3], scale: 1.0 / 255.0 }
    }
}

pub fn normalize(image: &ImageTensor, norm: &Normalization) -> Result<ImageTensor, VisionError> {
    if !(norm.scale.is_finite() && norm.scale != 0.0) || norm.means.iter().any(|m| !m.is_finite()) {
        return Err(VisionError::InvalidImage(format!("unusable normalization {norm:?}")));
    }
    let raw = image.raw()?;
    let data = raw
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| ((px[c] as f64 - norm.means[c]) * norm.scale) as f32))
        .collect();
    ImageTensor::from_normalized(image.width, image.height, data)
}

/// Inverse of [`normalize`], returned as float values in raw units (HWC).
pub fn denormalize(image: &ImageTensor, norm: &Normalization) -> Result<Vec<f32>, VisionError> {
    let data = image.normalized()?;
    Ok(data
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] as f64 / norm.scale + norm.means[c]) as f32))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(width: usize, height: usize) -> ImageTensor {
        let data = (0..height)
            .flat_map(|y| (0..width).flat_map(move |x| [(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) % 256) as u8]))
            .collect();
        ImageTensor::from_raw(width, height, data).unwrap()
    }

    #[test]
    fn black_image_has_no_face() {
        let black = ImageTensor::filled(640, 480, [0, 0, 0]).unwrap();
        let err = detect_and_crop(&black, &ContrastDetector::default(), 0.1).unwrap_err();
        assert!(matches!(err, VisionError::NoFace));
    }

    #[test]
    fn stub_box_without_margin_is_identity_crop() {
        let img = gradient(400, 400);
        let det = FixedBoxDetector::new(FaceBox::new(100.0, 100.0, 200.0, 200.0, 1.0));
        let out = detect_and_crop(&img, &det, 0.0).unwrap();
        assert_eq!((out.width(), out.height()), (200, 200));
        assert_eq!(out.value(0, 0, 0), img.value(100, 100, 0));
        assert_eq!(out.value(199, 199, 2), img.value(299, 299, 2));
    }

    #[test]
    fn oversized_box_is_clamped() {
        let img = gradient(256, 256);
        let det = FixedBoxDetector::new(FaceBox::new(0.0, 0.0, 300.0, 300.0, 1.0));
        let out = detect_and_crop(&img, &det, 0.2).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn zero_sized_images_are_rejected() {
        assert!(matches!(ImageTensor::from_raw(0, 10, vec![]), Err(VisionError::InvalidImage(_))));
    }

    #[test]
    fn resize_shapes() {
        let big = gradient(1920, 1080);
        let out = resize_to_input(&big, DEFAULT_INPUT_SIDE).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        let small = gradient(100, 50);
        let out = resize_to_input(&small, 224).unwrap();
        assert_eq!((out.width(), out.height()), (224, 224));
        let same = gradient(224, 224);
        assert_eq!(resize_to_input(&same, 224).unwrap(), same);
    }

    #[test]
    fn resize_of_uniform_image_stays_uniform() {
        let img = ImageTensor::filled(37, 91, [12, 200, 99]).unwrap();
        let out = resize_to_input(&img, 16).unwrap();
        assert_eq!(out, ImageTensor::filled(16, 16, [12, 200, 99]).unwrap());
    }

    #[test]
    fn brightness_arithmetic() {
        let img = ImageTensor::from_raw(1, 1, vec![200, 220, 0]).unwrap();
        let out = adjust_brightness(&img, 1.25).unwrap();
        assert_eq!(out.raw().unwrap(), &[250, 255, 0]);
        assert_eq!(adjust_brightness(&img, 1.0).unwrap(), img);
        assert!(matches!(adjust_brightness(&img, 1.3), Err(VisionError::FactorOutOfRange(_))));
        assert!(matches!(adjust_brightness(&img, 0.7), Err(VisionError::FactorOutOfRange(_))));
    }

    #[test]
    fn normalization_examples() {
        let img = ImageTensor::from_raw(2, 1, vec![255, 0, 128, 0, 255, 128]).unwrap();
        let out = normalize(&img, &Normalization::default()).unwrap();
        let d = out.normalized().unwrap();
        assert_eq!(d[0], 1.0);
        assert_eq!(d[1], 0.0);
        let centered = Normalization { means: [128.0; 3], scale: 1.0 / 128.0 };
        let out = normalize(&img, &centered).unwrap();
        assert_eq!(out.normalized().unwrap()[2], 0.0);
        assert!(normalize(&out, &centered).is_err());
    }

    #[test]
    fn chw_layout() {
        let img = ImageTensor::from_raw(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        let n = normalize(&img, &Normalization { means: [0.0; 3], scale: 1.0 }).unwrap();
        assert_eq!(n.to_chw().unwrap(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    fn arb_image() -> impl Strategy<Value = ImageTensor> {
        (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h * 3)
                .prop_map(move |d| ImageTensor::from_raw(w, h, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn brightness_identity_and_range(img in arb_image(), factor in 0.75f64..=1.25) {
            prop_assert_eq!(adjust_brightness(&img, 1.0).unwrap(), img.clone());
            // u8 output is in range by construction; check monotone scaling direction.
            let out = adjust_brightness(&img, factor).unwrap();
            for (a, b) in img.raw().unwrap().iter().zip(out.raw().unwrap()) {
                if factor >= 1.0 { prop_assert!(b >= a); } else { prop_assert!(b <= a); }
            }
        }

        #[test]
        fn crop_stays_inside(img in arb_image(), x in -20.0f64..40.0, y in -20.0f64..40.0,
                             w in 0.5f64..50.0, h in 0.5f64..50.0, margin in 0.0f64..1.0) {
            let face = FaceBox::new(x, y, w, h, 0.9);
            if let Some(rect) = face.expand_clamped(margin, img.width(), img.height()) {
                prop_assert!(rect.x + rect.width <= img.width());
                prop_assert!(rect.y + rect.height <= img.height());
                prop_assert!(rect.width > 0 && rect.height > 0);
                let out = crop_to_face(&img, &face, margin).unwrap();
                prop_assert_eq!((out.width(), out.height()), (rect.width, rect.height));
            }
        }

        #[test]
        fn resize_is_idempotent_at_target(img in arb_image(), side in 1usize..20) {
            let once = resize_to_input(&img, side).unwrap();
            let twice = resize_to_input(&once, side).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn normalize_round_trips(img in arb_image(), m in proptest::array::uniform3(0.0f64..255.0),
                                 scale in 0.001f64..2.0) {
            let norm = Normalization { means: m, scale };
            let back = denormalize(&normalize(&img, &norm).unwrap(), &norm).unwrap();
            for (i, (&v, &r)) in img.raw().unwrap().iter().zip(&back).enumerate() {
                let mag = (v as f32).abs().max(m[i % 3] as f32).max(1.0);
                let ulp = f32::EPSILON * mag;
                prop_assert!((r - v as f32).abs() <= ulp, "{} vs {}", v, r);
            }
        }
    }
}
