//! Dataset manifests, subject-wise splitting, video frame access, the
//! assembly test-set builder and the synthetic data generator.

mod assembly;
mod manifest;
mod split;
mod synth;
mod video;

use std::path::Path;

use thiserror::Error;

use crate::vision::VisionError;

pub use assembly::{build_assembly_test_set, Rejection, RejectionReport, VideoStore};
pub use manifest::{
    load_manifest, Activity, AttentionSample, GazeSample, Manifest, ManifestKind, QualityFlag, Record,
    SegmentAnnotation, MANIFEST_VERSION,
};
pub use split::{loso_folds, split_by_subject, Fold};
pub use synth::{generate_synthetic, render_sample, SubjectLook, SynthConfig, SynthOutput, ZoneGeometry};
pub use video::{extract_segment_frames, open_video, segment_frame_indices, FrameDirectory, FrameSource, MemoryFrames};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error in field `{field}`: {message}")]
    Schema { line: usize, field: String, message: String },
    #[error("manifest {0} has no records")]
    EmptyManifest(String),
    #[error("manifest version {found} not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("expected a {expected} manifest, found {found}")]
    KindMismatch { expected: ManifestKind, found: ManifestKind },
    #[error("subject `{0}` is not in the manifest")]
    UnknownSubject(String),
    #[error("need at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("cannot read frame {index}: {message}")]
    FrameRead { index: usize, message: String },
    #[error("segment [{start}, {end}] outside video of {frames} frames")]
    SegmentOutOfRange { start: usize, end: usize, frames: usize },
    #[error("unsupported video source {path}: {message}")]
    UnsupportedVideo { path: String, message: String },
    #[error("invalid zone geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl DatasetError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}
