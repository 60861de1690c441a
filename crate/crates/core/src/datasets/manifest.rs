//! JSON-lines manifests.
//!
//! A manifest starts with an optional header line
//! `{"manifest_version": 1, "kind": "gaze"}` followed by one record per
//! line. Image and video locators are relative to the manifest's directory
//! unless absolute.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::types::{AttentionClass, GazeDirection};
use crate::vision::FaceBox;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestKind {
    Gaze,
    Attention,
    Segment,
}

impl std::fmt::Display for ManifestKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gaze => "gaze",
            Self::Attention => "attention",
            Self::Segment => "segment",
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    manifest_version: u32,
    kind: ManifestKind,
}

/// A manifest record type.
pub trait Record: Serialize + DeserializeOwned + Clone + Send + Sync {
    const KIND: ManifestKind;
    /// Keys every line must carry.
    const REQUIRED: &'static [&'static str];

    fn subject(&self) -> String;
    /// Image or video path, used for canonical ordering.
    fn locator(&self) -> &Path;
    /// Semantic checks beyond the JSON shape; returns the offending field.
    fn validate(&self) -> Result<(), (String, String)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub image: PathBuf,
    pub subject: String,
    pub pitch: f64,
    pub yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<FaceBox>,
}

impl GazeSample {
    pub fn gaze(&self) -> GazeDirection {
        GazeDirection { pitch: self.pitch, yaw: self.yaw }
    }
}

impl Record for GazeSample {
    const KIND: ManifestKind = ManifestKind::Gaze;
    const REQUIRED: &'static [&'static str] = &["image", "subject", "pitch", "yaw"];

    fn subject(&self) -> String {
        self.subject.clone()
    }

    fn locator(&self) -> &Path {
        &self.image
    }

    fn validate(&self) -> Result<(), (String, String)> {
        if self.subject.is_empty() {
            return Err(("subject".into(), "empty subject".into()));
        }
        self.gaze().validate().map_err(|e| ("pitch/yaw".into(), e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionSample {
    pub image: PathBuf,
    pub subject: String,
    pub label: AttentionClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face: Option<FaceBox>,
}

impl Record for AttentionSample {
    const KIND: ManifestKind = ManifestKind::Attention;
    const REQUIRED: &'static [&'static str] = &["image", "subject", "label"];

    fn subject(&self) -> String {
        self.subject.clone()
    }

    fn locator(&self) -> &Path {
        &self.image
    }

    fn validate(&self) -> Result<(), (String, String)> {
        if self.subject.is_empty() {
            return Err(("subject".into(), "empty subject".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activity {
    GatheringParts,
    Assembling,
    CollaborativeJoining,
    WaitingLookingAtCobot,
    WaitingDistracted,
}

impl Activity {
    /// Attention ground truth implied by the activity, if any.
    pub fn attention_class(self) -> Option<AttentionClass> {
        match self {
            Self::Assembling => Some(AttentionClass::Table),
            Self::WaitingLookingAtCobot => Some(AttentionClass::Cobot),
            Self::WaitingDistracted => Some(AttentionClass::Distracted),
            Self::GatheringParts | Self::CollaborativeJoining => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QualityFlag {
    EyesNotVisible,
    Occluded,
    Blurry,
}

impl QualityFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EyesNotVisible => "eyes-not-visible",
            Self::Occluded => "occluded",
            Self::Blurry => "blurry",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAnnotation {
    pub video: PathBuf,
    pub start: usize,
    pub end: usize,
    pub activity: Activity,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub flags: BTreeSet<QualityFlag>,
    /// Operator id; defaults to the video file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl Record for SegmentAnnotation {
    const KIND: ManifestKind = ManifestKind::Segment;
    const REQUIRED: &'static [&'static str] = &["video", "start", "end", "activity"];

    fn subject(&self) -> String {
        self.subject.clone().unwrap_or_else(|| {
            self.video.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        })
    }

    fn locator(&self) -> &Path {
        &self.video
    }

    fn validate(&self) -> Result<(), (String, String)> {
        if self.start > self.end {
            return Err(("end".into(), format!("start {} after end {}", self.start, self.end)));
        }
        Ok(())
    }
}

/// A homogeneous list of records plus a subject index.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest<R> {
    base_dir: PathBuf,
    records: Vec<R>,
    subjects: BTreeMap<String, Vec<usize>>,
}

impl<R: Record> Manifest<R> {
    pub fn new(base_dir: impl Into<PathBuf>, records: Vec<R>) -> Self {
        let mut subjects: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            subjects.entry(r.subject()).or_default().push(i);
        }
        Self { base_dir: base_dir.into(), records, subjects }
    }

    pub fn records(&self) -> &[R] {
        &self.records
    }

    pub fn into_records(self) -> Vec<R> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Subject ids in sorted order.
    pub fn subjects(&self) -> impl Iterator<Item = &str> {
        self.subjects.keys().map(String::as_str)
    }

    pub fn subject_count(&self) -> usize {
        self.subjects.len()
    }

    pub fn records_of(&self, subject: &str) -> impl Iterator<Item = &R> {
        self.subjects.get(subject).into_iter().flatten().map(|&i| &self.records[i])
    }

    /// Absolute location of a record's locator.
    pub fn resolve(&self, locator: &Path) -> PathBuf {
        if locator.is_absolute() {
            locator.to_path_buf()
        } else {
            self.base_dir.join(locator)
        }
    }

    /// New manifest over a subset of records, sharing the base directory.
    pub fn with_records(&self, records: Vec<R>) -> Self {
        Self::new(self.base_dir.clone(), records)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let file = fs::File::open(path).map_err(|e| DatasetError::io(path, e))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|e| DatasetError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value = serde_json::from_str(&line)
                .map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
            let obj = value.as_object().ok_or_else(|| DatasetError::Parse {
                line: line_no,
                message: "expected a JSON object".into(),
            })?;
            if records.is_empty() && obj.contains_key("manifest_version") {
                let header: Header = serde_json::from_value(value.clone())
                    .map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
                if header.manifest_version != MANIFEST_VERSION {
                    return Err(DatasetError::VersionMismatch {
                        found: header.manifest_version,
                        supported: MANIFEST_VERSION,
                    });
                }
                if header.kind != R::KIND {
                    return Err(DatasetError::KindMismatch { expected: R::KIND, found: header.kind });
                }
                continue;
            }
            if let Some(missing) = R::REQUIRED.iter().find(|k| !obj.contains_key(**k)) {
                return Err(DatasetError::Schema {
                    line: line_no,
                    field: missing.to_string(),
                    message: "missing field".into(),
                });
            }
            let record: R = serde_json::from_value(value).map_err(|e| DatasetError::Schema {
                line: line_no,
                field: String::new(),
                message: e.to_string(),
            })?;
            record
                .validate()
                .map_err(|(field, message)| DatasetError::Schema { line: line_no, field, message })?;
            records.push(record);
        }
        if records.is_empty() {
            return Err(DatasetError::EmptyManifest(path.display().to_string()));
        }
        Ok(Self::new(base_dir, records))
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = Header { manifest_version: MANIFEST_VERSION, kind: R::KIND };
        let write = |out: &mut BufWriter<fs::File>, line: String| writeln!(out, "{line}");
        write(&mut out, serde_json::to_string(&header).expect("header serializes"))
            .map_err(|e| DatasetError::io(path, e))?;
        for r in &self.records {
            write(&mut out, serde_json::to_string(r).expect("record serializes")).map_err(|e| DatasetError::io(path, e))?;
        }
        out.flush().map_err(|e| DatasetError::io(path, e))
    }
}

/// Loads a manifest of the given record type.
pub fn load_manifest<R: Record>(path: &Path) -> Result<Manifest<R>, DatasetError> {
    Manifest::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn loads_three_gaze_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "g.jsonl",
            r#"{"image":"a.png","subject":"s1","pitch":0.1,"yaw":0.2}
{"image":"b.png","subject":"s1","pitch":-0.1,"yaw":0.0}
{"image":"c.png","subject":"s2","pitch":0.0,"yaw":-0.3}
"#,
        );
        let m = load_manifest::<GazeSample>(&p).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.subjects().collect::<Vec<_>>(), vec!["s1", "s2"]);
        assert_eq!(m.resolve(Path::new("a.png")), dir.path().join("a.png"));
    }

    #[test]
    fn missing_subject_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "g.jsonl",
            "{\"image\":\"a.png\",\"subject\":\"s1\",\"pitch\":0.1,\"yaw\":0.2}\n{\"image\":\"b.png\",\"pitch\":0.1,\"yaw\":0.2}\n",
        );
        match load_manifest::<GazeSample>(&p).unwrap_err() {
            DatasetError::Schema { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "subject");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_and_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.jsonl", "");
        assert!(matches!(load_manifest::<GazeSample>(&p), Err(DatasetError::EmptyManifest(_))));
        let p = write(dir.path(), "h.jsonl", "{\"manifest_version\":1,\"kind\":\"gaze\"}\n");
        assert!(matches!(load_manifest::<GazeSample>(&p), Err(DatasetError::EmptyManifest(_))));
        let p = write(dir.path(), "bad.jsonl", "{\"image\": \n");
        assert!(matches!(load_manifest::<GazeSample>(&p), Err(DatasetError::Parse { line: 1, .. })));
        let p = write(dir.path(), "kind.jsonl", "{\"manifest_version\":1,\"kind\":\"gaze\"}\n");
        assert!(matches!(load_manifest::<AttentionSample>(&p), Err(DatasetError::KindMismatch { .. })));
        let p = write(dir.path(), "v.jsonl", "{\"manifest_version\":9,\"kind\":\"gaze\"}\n");
        assert!(matches!(load_manifest::<GazeSample>(&p), Err(DatasetError::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn rejects_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "g.jsonl", "{\"image\":\"a.png\",\"subject\":\"s\",\"pitch\":7.0,\"yaw\":0.0}\n");
        assert!(matches!(load_manifest::<GazeSample>(&p), Err(DatasetError::Schema { line: 1, .. })));
        let p = write(dir.path(), "a.jsonl", "{\"image\":\"a.png\",\"subject\":\"s\",\"label\":\"robot\"}\n");
        assert!(matches!(load_manifest::<AttentionSample>(&p), Err(DatasetError::Schema { line: 1, .. })));
        let p = write(dir.path(), "s.jsonl", "{\"video\":\"v\",\"start\":9,\"end\":3,\"activity\":\"assembling\"}\n");
        assert!(matches!(load_manifest::<SegmentAnnotation>(&p), Err(DatasetError::Schema { line: 1, .. })));
    }

    #[test]
    fn save_then_load_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            SegmentAnnotation {
                video: "op1.mp4".into(),
                start: 3,
                end: 40,
                activity: Activity::WaitingDistracted,
                flags: [QualityFlag::Blurry].into(),
                subject: None,
            },
            SegmentAnnotation {
                video: "frames/op2".into(),
                start: 0,
                end: 0,
                activity: Activity::Assembling,
                flags: BTreeSet::new(),
                subject: Some("p2".into()),
            },
        ];
        let m = Manifest::new(dir.path(), records.clone());
        let p = dir.path().join("seg.jsonl");
        m.save(&p).unwrap();
        let back = load_manifest::<SegmentAnnotation>(&p).unwrap();
        assert_eq!(back.records(), &records[..]);
        assert_eq!(back.subjects().collect::<Vec<_>>(), vec!["op1", "p2"]);
    }
}
