//! Random access to video frames.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::{DatasetError, SegmentAnnotation};
use crate::vision::ImageTensor;

pub trait FrameSource: Send + Sync {
    fn frame_count(&self) -> usize;
    fn read_frame(&self, index: usize) -> Result<ImageTensor, DatasetError>;
}

/// Frames held in memory.
#[derive(Debug, Clone, Default)]
pub struct MemoryFrames {
    frames: Vec<ImageTensor>,
}

impl MemoryFrames {
    pub fn new(frames: Vec<ImageTensor>) -> Self {
        Self { frames }
    }
}

impl FrameSource for MemoryFrames {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn read_frame(&self, index: usize) -> Result<ImageTensor, DatasetError> {
        self.frames.get(index).cloned().ok_or_else(|| DatasetError::FrameRead {
            index,
            message: format!("only {} frames", self.frames.len()),
        })
    }
}

const FRAME_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

/// A directory of numbered image files. Frame `i` is the `i`-th file when
/// sorted by the trailing number in its file stem.
#[derive(Debug, Clone)]
pub struct FrameDirectory {
    frames: Vec<PathBuf>,
}

impl FrameDirectory {
    pub fn open(dir: &Path) -> Result<Self, DatasetError> {
        let mut frames: Vec<(u64, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))? {
            let path = entry.map_err(|e| DatasetError::io(dir, e))?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if !ext.is_some_and(|e| FRAME_EXTENSIONS.contains(&e.as_str())) {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect();
            let number = digits.chars().rev().collect::<String>().parse().unwrap_or(u64::MAX);
            frames.push((number, path));
        }
        frames.sort();
        Ok(Self { frames: frames.into_iter().map(|(_, p)| p).collect() })
    }
}

impl FrameSource for FrameDirectory {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn read_frame(&self, index: usize) -> Result<ImageTensor, DatasetError> {
        let path = self.frames.get(index).ok_or_else(|| DatasetError::FrameRead {
            index,
            message: format!("only {} frames", self.frames.len()),
        })?;
        ImageTensor::load(path).map_err(|e| DatasetError::FrameRead { index, message: e.to_string() })
    }
}

/// Video container decoded through the `ffmpeg`/`ffprobe` executables.
#[derive(Debug, Clone)]
pub struct FfmpegVideo {
    path: PathBuf,
    frames: usize,
}

impl FfmpegVideo {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let unsupported = |message: String| DatasetError::UnsupportedVideo { path: path.display().to_string(), message };
        let out = Command::new("ffprobe")
            .args(["-v", "error", "-select_streams", "v:0", "-count_packets"])
            .args(["-show_entries", "stream=nb_read_packets", "-of", "csv=p=0"])
            .arg(path)
            .output()
            .map_err(|e| unsupported(format!("ffprobe unavailable ({e}); extract frames to a directory instead")))?;
        if !out.status.success() {
            return Err(unsupported(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        let frames = String::from_utf8_lossy(&out.stdout)
            .trim()
            .parse()
            .map_err(|_| unsupported("could not count frames".into()))?;
        Ok(Self { path: path.to_path_buf(), frames })
    }
}

impl FrameSource for FfmpegVideo {
    fn frame_count(&self) -> usize {
        self.frames
    }

    fn read_frame(&self, index: usize) -> Result<ImageTensor, DatasetError> {
        let fail = |message: String| DatasetError::FrameRead { index, message };
        let out = Command::new("ffmpeg")
            .args(["-v", "error", "-i"])
            .arg(&self.path)
            .args(["-vf", &format!("select=eq(n\\,{index})"), "-vsync", "0", "-frames:v", "1"])
            .args(["-f", "image2pipe", "-vcodec", "png", "-"])
            .output()
            .map_err(|e| fail(e.to_string()))?;
        if !out.status.success() || out.stdout.is_empty() {
            return Err(fail(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        let img = image::load_from_memory(&out.stdout).map_err(|e| fail(e.to_string()))?.to_rgb8();
        let (w, h) = img.dimensions();
        ImageTensor::from_raw(w as usize, h as usize, img.into_raw()).map_err(|e| fail(e.to_string()))
    }
}

/// Opens a frame directory or, for files, a container via ffmpeg.
pub fn open_video(path: &Path) -> Result<Box<dyn FrameSource>, DatasetError> {
    if path.is_dir() {
        Ok(Box::new(FrameDirectory::open(path)?))
    } else {
        Ok(Box::new(FfmpegVideo::open(path)?))
    }
}

/// First, middle (`floor((start+end)/2)`) and last frame of a segment,
/// ascending and without duplicates.
pub fn segment_frame_indices(start: usize, end: usize) -> Vec<usize> {
    let mut idx = vec![start, start + (end - start) / 2, end];
    idx.dedup();
    idx
}

pub fn extract_segment_frames(
    segment: &SegmentAnnotation,
    video: &dyn FrameSource,
) -> Result<Vec<(usize, ImageTensor)>, DatasetError> {
    let frames = video.frame_count();
    if segment.start > segment.end || segment.end >= frames {
        return Err(DatasetError::SegmentOutOfRange { start: segment.start, end: segment.end, frames });
    }
    segment_frame_indices(segment.start, segment.end)
        .into_iter()
        .map(|i| video.read_frame(i).map(|img| (i, img)))
        .collect()
}
