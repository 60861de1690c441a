//! Synthetic stand-in data.
//!
//! Each image shows a face-coloured ellipse on a subject-specific
//! backdrop with a bright disc whose offset from the face centre encodes the
//! gaze: `u = cx + k * yaw`, `v = cy - k * pitch`. Attention labels follow
//! from the gaze through [`ZoneGeometry`], so labels and pixels always agree.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttentionSample, DatasetError, GazeSample, Manifest};
use crate::types::{AttentionClass, GazeDirection};
use crate::vision::{FaceBox, ImageTensor};

/// Zone partition of gaze space and the sampled gaze ranges (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneGeometry {
    /// Table iff pitch is below this.
    pub table_pitch: f64,
    /// Cobot iff yaw is above this (and not Table).
    pub cobot_yaw: f64,
    pub pitch_range: (f64, f64),
    pub yaw_range: (f64, f64),
    /// Minimum distance of attention samples from any zone boundary.
    pub margin: f64,
}

impl Default for ZoneGeometry {
    fn default() -> Self {
        Self { table_pitch: -0.2, cobot_yaw: 0.3, pitch_range: (-0.6, 0.6), yaw_range: (-0.6, 0.6), margin: 0.04 }
    }
}

impl ZoneGeometry {
    pub fn classify(&self, gaze: GazeDirection) -> AttentionClass {
        if gaze.pitch < self.table_pitch {
            AttentionClass::Table
        } else if gaze.yaw > self.cobot_yaw {
            AttentionClass::Cobot
        } else {
            AttentionClass::Distracted
        }
    }

    /// Distance of a gaze from the boundary of its own zone.
    fn boundary_distance(&self, gaze: GazeDirection) -> f64 {
        match self.classify(gaze) {
            AttentionClass::Table => self.table_pitch - gaze.pitch,
            AttentionClass::Cobot => (gaze.pitch - self.table_pitch).min(gaze.yaw - self.cobot_yaw),
            AttentionClass::Distracted => (gaze.pitch - self.table_pitch).min(self.cobot_yaw - gaze.yaw),
        }
    }

    /// Every zone must keep a non-empty region inside the sampled ranges.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |msg: &str| Err(DatasetError::InvalidGeometry(format!("{msg}: {self:?}")));
        let values = [
            self.table_pitch,
            self.cobot_yaw,
            self.pitch_range.0,
            self.pitch_range.1,
            self.yaw_range.0,
            self.yaw_range.1,
            self.margin,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return bad("non-finite value");
        }
        let pi = std::f64::consts::PI;
        if self.pitch_range.0 < -pi || self.pitch_range.1 > pi || self.yaw_range.0 < -pi || self.yaw_range.1 > pi {
            return bad("ranges exceed [-pi, pi]");
        }
        if self.margin < 0.0 {
            return bad("negative margin");
        }
        let m = self.margin;
        if !(self.pitch_range.0 < self.table_pitch - m && self.table_pitch + m < self.pitch_range.1) {
            return bad("table threshold does not split the pitch range");
        }
        if !(self.yaw_range.0 < self.cobot_yaw - m && self.cobot_yaw + m < self.yaw_range.1) {
            return bad("cobot threshold does not split the yaw range");
        }
        Ok(())
    }

    fn sample_uniform(&self, rng: &mut ChaCha8Rng) -> GazeDirection {
        GazeDirection {
            pitch: rng.gen_range(self.pitch_range.0..=self.pitch_range.1),
            yaw: rng.gen_range(self.yaw_range.0..=self.yaw_range.1),
        }
    }

    fn sample_in_zone(&self, class: AttentionClass, rng: &mut ChaCha8Rng) -> GazeDirection {
        loop {
            let g = self.sample_uniform(rng);
            if self.classify(g) == class && self.boundary_distance(g) >= self.margin {
                return g;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub subjects: usize,
    /// Attention images per class and subject.
    pub per_class: usize,
    /// Additional gaze-only images per subject.
    pub gaze_per_subject: usize,
    pub seed: u64,
    pub geometry: ZoneGeometry,
    pub image_side: usize,
    /// Disc displacement in pixels per radian, at `image_side` 64.
    pub pixels_per_radian: f64,
    pub subject_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 8,
            per_class: 30,
            gaze_per_subject: 0,
            seed: 0,
            geometry: ZoneGeometry::default(),
            image_side: 64,
            pixels_per_radian: 20.0,
            subject_prefix: "s".into(),
        }
    }
}

/// Per-subject appearance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectLook {
    pub backdrop: [u8; 3],
    pub skin: [u8; 3],
    /// Face centre offset from the image centre, in pixels at side 64.
    pub offset: (f64, f64),
    pub noise_seed: u64,
}

impl SubjectLook {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            backdrop: [rng.gen_range(15..=90), rng.gen_range(15..=90), rng.gen_range(15..=90)],
            skin: [rng.gen_range(160..=215), rng.gen_range(115..=165), rng.gen_range(90..=135)],
            offset: (rng.gen_range(-3.0..=3.0), rng.gen_range(-3.0..=3.0)),
            noise_seed: rng.gen(),
        }
    }
}

const NOISE: i16 = 5;

/// Renders one image and returns it with the bounding box of the face ellipse.
pub fn render_sample(
    look: &SubjectLook,
    gaze: GazeDirection,
    side: usize,
    pixels_per_radian: f64,
    sample_seed: u64,
) -> (ImageTensor, FaceBox) {
    let s = side as f64 / 64.0;
    let (cx, cy) = (side as f64 / 2.0 + look.offset.0 * s, side as f64 / 2.0 + look.offset.1 * s);
    let (ax, ay) = (20.0 * s, 24.0 * s);
    let k = pixels_per_radian * s;
    let (du, dv) = (cx + k * gaze.yaw, cy - k * gaze.pitch);
    let radius = 5.0 * s;
    let mut rng = ChaCha8Rng::seed_from_u64(look.noise_seed ^ sample_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut data = Vec::with_capacity(side * side * 3);
    for y in 0..side {
        for x in 0..side {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside_face = ((px - cx) / ax).powi(2) + ((py - cy) / ay).powi(2) <= 1.0;
            let base = if inside_face { look.skin } else { look.backdrop };
            let dist = ((px - du).powi(2) + (py - dv).powi(2)).sqrt();
            let cover = if inside_face { (radius + 0.5 - dist).clamp(0.0, 1.0) } else { 0.0 };
            for &b in &base {
                let v = b as f64 * (1.0 - cover) + 250.0 * cover;
                let n = rng.gen_range(-NOISE..=NOISE) as f64;
                data.push((v + n).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    let image = ImageTensor::from_raw(side, side, data).expect("side is positive");
    let face = FaceBox::new(cx - ax, cy - ay, 2.0 * ax, 2.0 * ay, 1.0);
    (image, face)
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub gaze: Manifest<GazeSample>,
    pub attention: Manifest<AttentionSample>,
    pub gaze_path: PathBuf,
    pub attention_path: PathBuf,
}

/// Renders the synthetic dataset into `out_dir` (`images/`, `gaze.jsonl`,
/// `attention.jsonl`). Byte-identical output for identical configs.
///
/// The gaze manifest lists the gaze-only images followed by the attention
/// images (which carry gaze labels too).
pub fn generate_synthetic(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput, DatasetError> {
    cfg.geometry.validate()?;
    if cfg.subjects < 2 {
        return Err(DatasetError::InvalidConfig(format!("need at least 2 subjects, got {}", cfg.subjects)));
    }
    if cfg.per_class < 1 {
        return Err(DatasetError::InvalidConfig("per_class must be at least 1".into()));
    }
    if cfg.image_side < 16 {
        return Err(DatasetError::InvalidConfig(format!("image side {} below 16", cfg.image_side)));
    }
    let g = &cfg.geometry;
    let reach = cfg.pixels_per_radian * g.pitch_range.0.abs().max(g.pitch_range.1.abs()).max(g.yaw_range.0.abs()).max(g.yaw_range.1.abs());
    if reach + 5.0 > 20.0 {
        return Err(DatasetError::InvalidConfig(format!("disc leaves the face: reach {reach:.1}px")));
    }

    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| DatasetError::io(&image_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let width = (cfg.subjects - 1).to_string().len().max(2);
    let mut gaze_records = Vec::new();
    let mut gaze_from_attention = Vec::new();
    let mut attention_records = Vec::new();
    let mut sample_id = 0u64;

    for s in 0..cfg.subjects {
        let subject = format!("{}{:0width$}", cfg.subject_prefix, s);
        let look = SubjectLook::random(&mut rng);
        let mut emit = |gaze: GazeDirection, name: String| -> Result<(PathBuf, FaceBox), DatasetError> {
            let (img, face) = render_sample(&look, gaze, cfg.image_side, cfg.pixels_per_radian, sample_id);
            sample_id += 1;
            let rel = PathBuf::from("images").join(name);
            img.save_png(&out_dir.join(&rel))?;
            Ok((rel, face))
        };
        for i in 0..cfg.gaze_per_subject {
            let gaze = g.sample_uniform(&mut rng);
            let (image, face) = emit(gaze, format!("{subject}_gaze_{i:04}.png"))?;
            gaze_records.push(GazeSample { image, subject: subject.clone(), pitch: gaze.pitch, yaw: gaze.yaw, face: Some(face) });
        }
        for class in AttentionClass::ALL {
            for i in 0..cfg.per_class {
                let gaze = g.sample_in_zone(class, &mut rng);
                let name = format!("{subject}_{}_{i:04}.png", class.name().to_ascii_lowercase());
                let (image, face) = emit(gaze, name)?;
                gaze_from_attention.push(GazeSample {
                    image: image.clone(),
                    subject: subject.clone(),
                    pitch: gaze.pitch,
                    yaw: gaze.yaw,
                    face: Some(face),
                });
                attention_records.push(AttentionSample { image, subject: subject.clone(), label: class, face: Some(face) });
            }
        }
    }
    gaze_records.extend(gaze_from_attention);
    let gaze = Manifest::new(out_dir, gaze_records);
    let attention = Manifest::new(out_dir, attention_records);
    let gaze_path = out_dir.join("gaze.jsonl");
    let attention_path = out_dir.join("attention.jsonl");
    gaze.save(&gaze_path)?;
    attention.save(&attention_path)?;
    Ok(SynthOutput { gaze, attention, gaze_path, attention_path })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::load_manifest;
    use crate::vision::{ContrastDetector, FaceDetector};

    #[test]
    fn zone_examples() {
        let g = ZoneGeometry::default();
        assert_eq!(g.classify(GazeDirection { pitch: -0.5, yaw: 0.0 }), AttentionClass::Table);
        assert_eq!(g.classify(GazeDirection { pitch: 0.0, yaw: 0.5 }), AttentionClass::Cobot);
        assert_eq!(g.classify(GazeDirection { pitch: -0.2, yaw: 0.31 }), AttentionClass::Cobot);
        assert_eq!(g.classify(GazeDirection { pitch: 0.1, yaw: 0.3 }), AttentionClass::Distracted);
    }

    #[test]
    fn non_partitioning_geometry_is_rejected() {
        let bad = [
            ZoneGeometry { table_pitch: -0.9, ..Default::default() },
            ZoneGeometry { cobot_yaw: 0.6, ..Default::default() },
            ZoneGeometry { pitch_range: (0.5, -0.5), ..Default::default() },
            ZoneGeometry { margin: f64::NAN, ..Default::default() },
        ];
        for g in bad {
            assert!(matches!(g.validate(), Err(DatasetError::InvalidGeometry(_))), "{g:?}");
        }
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { geometry: bad[0], ..Default::default() };
        assert!(matches!(generate_synthetic(&cfg, dir.path()), Err(DatasetError::InvalidGeometry(_))));
    }

    #[test]
    fn deterministic_and_label_consistent() {
        let cfg = SynthConfig { subjects: 3, per_class: 2, gaze_per_subject: 2, seed: 11, ..Default::default() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let out = generate_synthetic(&cfg, a.path()).unwrap();
        generate_synthetic(&cfg, b.path()).unwrap();
        assert_eq!(out.attention.len(), 18);
        assert_eq!(out.gaze.len(), 6 + 18);
        for rel in ["gaze.jsonl", "attention.jsonl"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
        }
        for s in out.gaze.records() {
            assert_eq!(fs::read(a.path().join(&s.image)).unwrap(), fs::read(b.path().join(&s.image)).unwrap());
        }
        let gaze = load_manifest::<GazeSample>(&out.gaze_path).unwrap();
        let attn = load_manifest::<AttentionSample>(&out.attention_path).unwrap();
        let by_image: std::collections::BTreeMap<_, _> = gaze.records().iter().map(|g| (g.image.clone(), g.gaze())).collect();
        for s in attn.records() {
            assert_eq!(cfg.geometry.classify(by_image[&s.image]), s.label);
        }
    }

    #[test]
    fn detector_recovers_face_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..10 {
            let look = SubjectLook::random(&mut rng);
            let gaze = ZoneGeometry::default().sample_uniform(&mut rng);
            let (img, face) = render_sample(&look, gaze, 64, 20.0, i);
            let found = ContrastDetector::default().detect(&img).unwrap();
            assert!((found.x - face.x).abs() <= 1.5, "{found:?} vs {face:?}");
            assert!((found.y - face.y).abs() <= 1.5, "{found:?} vs {face:?}");
            assert!((found.width - face.width).abs() <= 2.5, "{found:?} vs {face:?}");
            assert!((found.height - face.height).abs() <= 2.5, "{found:?} vs {face:?}");
        }
    }
}
