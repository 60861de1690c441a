//! Builds an attention test set from annotated assembly videos.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{extract_segment_frames, open_video, segment_frame_indices, AttentionSample, DatasetError, FrameSource};
use super::{Manifest, Record, SegmentAnnotation};
use crate::vision::{detect_and_crop, FaceBox, FaceDetector, VisionError};

/// Resolves video locators to frame sources.
pub trait VideoStore {
    fn open(&self, locator: &Path) -> Result<Box<dyn FrameSource>, DatasetError>;
}

/// Videos on disk, relative to a base directory.
impl VideoStore for PathBuf {
    fn open(&self, locator: &Path) -> Result<Box<dyn FrameSource>, DatasetError> {
        let path = if locator.is_absolute() { locator.to_path_buf() } else { self.join(locator) };
        open_video(&path)
    }
}

impl<S: FrameSource + Clone + 'static> VideoStore for BTreeMap<PathBuf, S> {
    fn open(&self, locator: &Path) -> Result<Box<dyn FrameSource>, DatasetError> {
        self.get(locator).map(|s| Box::new(s.clone()) as Box<dyn FrameSource>).ok_or_else(|| {
            DatasetError::UnsupportedVideo { path: locator.display().to_string(), message: "unknown video".into() }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub video: String,
    pub segment: usize,
    pub frame: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RejectionReport {
    pub rejections: Vec<Rejection>,
    /// Segments whose activity has no attention class.
    pub skipped_segments: usize,
}

impl RejectionReport {
    pub const NO_FACE: &'static str = "no-face";

    pub fn counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rejections {
            *counts.entry(r.reason.as_str()).or_insert(0) += 1;
        }
        counts
    }

    /// CSV with columns `video,segment,frame,reason`.
    pub fn write_csv(&self, path: &Path) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_path(path)?;
        if self.rejections.is_empty() {
            w.write_record(["video", "segment", "frame", "reason"])?;
        }
        for r in &self.rejections {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| DatasetError::io(path, e))
    }
}

/// Selects first/middle/last frames of every mapped segment, crops faces and
/// writes the crops to `out_dir/images`.
///
/// Segments carrying quality flags are rejected without running the
/// detector; frames where the detector finds nothing are rejected as
/// `no-face`. The returned manifest is rooted at `out_dir`.
pub fn build_assembly_test_set(
    annotations: &Manifest<SegmentAnnotation>,
    videos: &dyn VideoStore,
    detector: &dyn FaceDetector,
    margin: f64,
    out_dir: &Path,
) -> Result<(Manifest<AttentionSample>, RejectionReport), DatasetError> {
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| DatasetError::io(&image_dir, e))?;
    let mut samples = Vec::new();
    let mut report = RejectionReport::default();
    let mut sources: BTreeMap<PathBuf, Box<dyn FrameSource>> = BTreeMap::new();

    for (seg_idx, segment) in annotations.records().iter().enumerate() {
        let Some(label) = segment.activity.attention_class() else {
            report.skipped_segments += 1;
            continue;
        };
        let video_name = segment.video.display().to_string();
        if !segment.flags.is_empty() {
            let reason = segment.flags.iter().map(|f| f.as_str()).collect::<Vec<_>>().join("+");
            for frame in segment_frame_indices(segment.start, segment.end) {
                report.rejections.push(Rejection {
                    video: video_name.clone(),
                    segment: seg_idx,
                    frame,
                    reason: reason.clone(),
                });
            }
            continue;
        }
        if !sources.contains_key(&segment.video) {
            sources.insert(segment.video.clone(), videos.open(&segment.video)?);
        }
        let source = &sources[&segment.video];
        let stem = segment.video.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (frame, image) in extract_segment_frames(segment, source.as_ref())? {
            match detect_and_crop(&image, detector, margin) {
                Ok(face) => {
                    let rel = PathBuf::from("images").join(format!("{stem}_s{seg_idx:04}_f{frame:06}.png"));
                    face.save_png(&out_dir.join(&rel))?;
                    samples.push(AttentionSample {
                        image: rel,
                        subject: segment.subject(),
                        label,
                        face: Some(FaceBox::full(face.width(), face.height())),
                    });
                }
                Err(VisionError::NoFace) => report.rejections.push(Rejection {
                    video: video_name.clone(),
                    segment: seg_idx,
                    frame,
                    reason: RejectionReport::NO_FACE.into(),
                }),
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok((Manifest::new(out_dir, samples), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{Activity, MemoryFrames, QualityFlag};
    use crate::types::AttentionClass;
    use crate::vision::{ContrastDetector, ImageTensor};

    fn face_frame() -> ImageTensor {
        let (w, h) = (40, 30);
        let mut data = vec![20u8; w * h * 3];
        for y in 5..25 {
            for x in 10..30 {
                let i = (y * w + x) * 3;
                data[i..i + 3].copy_from_slice(&[200, 160, 140]);
            }
        }
        ImageTensor::from_raw(w, h, data).unwrap()
    }

    fn seg(video: &str, start: usize, end: usize, activity: Activity, flags: &[QualityFlag]) -> SegmentAnnotation {
        SegmentAnnotation {
            video: video.into(),
            start,
            end,
            activity,
            flags: flags.iter().copied().collect(),
            subject: None,
        }
    }

    #[test]
    fn maps_rejects_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let mut frames = vec![face_frame(); 30];
        frames[20] = ImageTensor::filled(40, 30, [0, 0, 0]).unwrap();
        let store: BTreeMap<PathBuf, MemoryFrames> = [(PathBuf::from("op1.mp4"), MemoryFrames::new(frames))].into();
        let annotations = Manifest::new(
            dir.path(),
            vec![
                seg("op1.mp4", 0, 10, Activity::Assembling, &[]),
                seg("op1.mp4", 11, 11, Activity::GatheringParts, &[]),
                seg("op1.mp4", 12, 13, Activity::WaitingLookingAtCobot, &[QualityFlag::EyesNotVisible]),
                seg("op1.mp4", 18, 22, Activity::WaitingDistracted, &[]),
            ],
        );
        let (manifest, report) =
            build_assembly_test_set(&annotations, &store, &ContrastDetector::default(), 0.1, dir.path()).unwrap();
        assert_eq!(report.skipped_segments, 1);
        let labels: Vec<AttentionClass> = manifest.records().iter().map(|s| s.label).collect();
        assert_eq!(
            labels,
            vec![AttentionClass::Table, AttentionClass::Table, AttentionClass::Table, AttentionClass::Distracted, AttentionClass::Distracted]
        );
        assert_eq!(report.counts(), BTreeMap::from([("eyes-not-visible", 2), ("no-face", 1)]));
        assert_eq!(report.rejections[2], Rejection { video: "op1.mp4".into(), segment: 3, frame: 20, reason: "no-face".into() });
        // 3 + 2 (deduplicated) + 3 frames from the mapped segments
        assert_eq!(manifest.len() + report.rejections.len(), 8);
        for s in manifest.records() {
            assert_eq!(s.subject, "op1");
            let img = ImageTensor::load(&manifest.resolve(&s.image)).unwrap();
            assert_eq!((img.width(), img.height()), (24, 24));
        }
        let csv_path = dir.path().join("rejections.csv");
        report.write_csv(&csv_path).unwrap();
        let text = fs::read_to_string(csv_path).unwrap();
        assert!(text.starts_with("video,segment,frame,reason\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
