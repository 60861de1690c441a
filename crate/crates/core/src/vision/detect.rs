use super::{FaceBox, ImageTensor};

/// Pluggable face detector: image in, optional face box out.
///
/// Implementations must be deterministic and side-effect free so they can be
/// shared across threads.
pub trait FaceDetector: Send + Sync {
    fn detect(&self, image: &ImageTensor) -> Option<FaceBox>;
}

/// Returns the same box for every image. Used in tests and when the face
/// location is known in advance.
#[derive(Debug, Clone, Copy)]
pub struct FixedBoxDetector {
    face: FaceBox,
}

impl FixedBoxDetector {
    pub fn new(face: FaceBox) -> Self {
        Self { face }
    }
}

impl FaceDetector for FixedBoxDetector {
    fn detect(&self, _image: &ImageTensor) -> Option<FaceBox> {
        Some(self.face)
    }
}

/// Never finds a face.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFaceDetector;

impl FaceDetector for NoFaceDetector {
    fn detect(&self, _image: &ImageTensor) -> Option<FaceBox> {
        None
    }
}

/// Foreground-blob detector for scenes with a plain backdrop.
///
/// The backdrop colour is the per-channel median of the image border. Pixels
/// deviating from it by more than `threshold` in any channel are foreground;
/// the face box spans every row and column holding at least `min_line` of
/// the image dimension in foreground pixels.
#[derive(Debug, Clone, Copy)]
pub struct ContrastDetector {
    pub threshold: u8,
    pub min_line: f64,
    pub min_area: f64,
}

impl Default for ContrastDetector {
    fn default() -> Self {
        Self { threshold: 40, min_line: 0.05, min_area: 0.02 }
    }
}

impl ContrastDetector {
    fn backdrop(image: &ImageTensor) -> [f32; 3] {
        let (w, h) = (image.width(), image.height());
        let mut border: [Vec<f32>; 3] = Default::default();
        for y in 0..h {
            for x in 0..w {
                if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                    for (c, vals) in border.iter_mut().enumerate() {
                        vals.push(image.value(x, y, c));
                    }
                }
            }
        }
        border.map(|mut vals| {
            vals.sort_by(f32::total_cmp);
            vals[vals.len() / 2]
        })
    }
}

impl FaceDetector for ContrastDetector {
    fn detect(&self, image: &ImageTensor) -> Option<FaceBox> {
        let (w, h) = (image.width(), image.height());
        let bg = Self::backdrop(image);
        let threshold = self.threshold as f32;
        let mut rows = vec![0usize; h];
        let mut cols = vec![0usize; w];
        let mut total = 0usize;
        for y in 0..h {
            for x in 0..w {
                let fg = (0..3).any(|c| (image.value(x, y, c) - bg[c]).abs() > threshold);
                if fg {
                    rows[y] += 1;
                    cols[x] += 1;
                    total += 1;
                }
            }
        }
        if (total as f64) < self.min_area * (w * h) as f64 {
            return None;
        }
        let row_min = (self.min_line * w as f64).max(1.0) as usize;
        let col_min = (self.min_line * h as f64).max(1.0) as usize;
        let y0 = rows.iter().position(|&n| n >= row_min)?;
        let y1 = rows.iter().rposition(|&n| n >= row_min)?;
        let x0 = cols.iter().position(|&n| n >= col_min)?;
        let x1 = cols.iter().rposition(|&n| n >= col_min)?;
        let (bw, bh) = (x1 - x0 + 1, y1 - y0 + 1);
        let coverage = total as f64 / (bw * bh) as f64;
        Some(FaceBox::new(x0 as f64, y0 as f64, bw as f64, bh as f64, coverage.min(1.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_a_bright_square() {
        let (w, h) = (80, 60);
        let mut data = vec![30u8; w * h * 3];
        for y in 20..45 {
            for x in 10..40 {
                let i = (y * w + x) * 3;
                data[i..i + 3].copy_from_slice(&[220, 180, 160]);
            }
        }
        let img = ImageTensor::from_raw(w, h, data).unwrap();
        let face = ContrastDetector::default().detect(&img).unwrap();
        assert_eq!((face.x, face.y, face.width, face.height), (10.0, 20.0, 30.0, 25.0));
        assert!((face.confidence - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_specks_are_not_faces() {
        let (w, h) = (64, 64);
        let mut data = vec![0u8; w * h * 3];
        data[(10 * w + 10) * 3] = 255;
        let img = ImageTensor::from_raw(w, h, data).unwrap();
        assert!(ContrastDetector::default().detect(&img).is_none());
    }
}
