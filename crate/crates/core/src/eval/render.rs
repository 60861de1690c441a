use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{EvalError, FoldReport, LosoReport};
use crate::vision::ImageTensor;

const HEADERS: [&str; 6] = ["Model", "Recall Cobot", "Recall Table", "Recall Distracted", "Accuracy", "F1-score"];

/// Fixed-width table in the column order of the published result tables.
/// Fold rows use two decimals, the average row three.
pub fn render_text_table(folds: &[FoldReport], average: Option<(f64, f64)>) -> String {
    let mut rows: Vec<[String; 6]> = folds
        .iter()
        .map(|f| {
            let r = &f.rounded;
            [
                f.model.clone(),
                format!("{:.2}", r.recall[0]),
                format!("{:.2}", r.recall[1]),
                format!("{:.2}", r.recall[2]),
                format!("{:.2}", r.accuracy),
                format!("{:.2}", r.macro_f1),
            ]
        })
        .collect();
    if let Some((acc, f1)) = average {
        let avg = |v: f64| format!("{:.3}", super::round_half_up(v, 3));
        rows.push(["Average".into(), String::new(), String::new(), String::new(), avg(acc), avg(f1)]);
    }
    let widths: Vec<usize> =
        (0..6).map(|c| rows.iter().map(|r| r[c].len()).chain([HEADERS[c].len()]).max().unwrap_or(0)).collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 6]| {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for c in 1..6 {
            write!(s, "  {:>w$}", cells[c], w = widths[c]).unwrap();
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(&mut out, HEADERS);
    let rule = "-".repeat(widths.iter().sum::<usize>() + 2 * 5);
    out.push_str(&rule);
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if average.is_some() && i == folds.len() {
            out.push_str(&rule);
            out.push('\n');
        }
        line(&mut out, row.each_ref().map(String::as_str));
    }
    out
}

/// CSV with full-precision metrics; an `average` row is appended when given.
pub fn render_csv(folds: &[FoldReport], average: Option<(f64, f64)>) -> Result<String, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| EvalError::Io { path: PathBuf::from("<csv>"), source: e.into() };
    w.write_record(["model", "recall_cobot", "recall_table", "recall_distracted", "accuracy", "f1"]).map_err(csv_err)?;
    for f in folds {
        let m = &f.metrics;
        let cells = [m.recall[0], m.recall[1], m.recall[2], m.accuracy, m.macro_f1].map(|v| v.to_string());
        w.write_record(std::iter::once(f.model.as_str()).chain(cells.iter().map(String::as_str))).map_err(csv_err)?;
    }
    if let Some((acc, f1)) = average {
        w.write_record(["average", "", "", "", &acc.to_string(), &f1.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::Io { path: PathBuf::from("<csv>"), source: e.into_error() })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

const CELL: usize = 64;
const GLYPH_SCALE: usize = 3;

/// 3x5 bitmaps for 0-9, one row per u8 (three low bits, MSB left).
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

/// Confusion-matrix heatmap: cell shade follows the row-normalized count,
/// the count itself is drawn in the cell.
pub fn render_heatmap(report: &FoldReport) -> ImageTensor {
    let side = CELL * 3;
    let mut px = vec![255u8; side * side * 3];
    let counts = report.confusion.counts();
    for (t, row) in counts.iter().enumerate() {
        let total = row.iter().sum::<u64>().max(1) as f64;
        for (p, &n) in row.iter().enumerate() {
            let share = n as f64 / total;
            let color = [
                (255.0 - 225.0 * share) as u8,
                (255.0 - 175.0 * share) as u8,
                (255.0 - 70.0 * share) as u8,
            ];
            for y in t * CELL + 1..(t + 1) * CELL - 1 {
                for x in p * CELL + 1..(p + 1) * CELL - 1 {
                    px[(y * side + x) * 3..][..3].copy_from_slice(&color);
                }
            }
            let ink = if share > 0.5 { [255; 3] } else { [0; 3] };
            draw_number(&mut px, side, n, p * CELL + CELL / 2, t * CELL + CELL / 2, ink);
        }
    }
    ImageTensor::from_raw(side, side, px).expect("heatmap dimensions are positive")
}

fn draw_number(px: &mut [u8], side: usize, n: u64, cx: usize, cy: usize, ink: [u8; 3]) {
    let text = n.to_string();
    let advance = 4 * GLYPH_SCALE;
    let width = text.len() * advance - GLYPH_SCALE;
    let x0 = cx.saturating_sub(width / 2);
    let y0 = cy.saturating_sub(5 * GLYPH_SCALE / 2);
    for (i, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        for (gy, bits) in glyph.iter().enumerate() {
            for gx in 0..3 {
                if bits >> (2 - gx) & 1 == 0 {
                    continue;
                }
                for dy in 0..GLYPH_SCALE {
                    for dx in 0..GLYPH_SCALE {
                        let x = x0 + i * advance + gx * GLYPH_SCALE + dx;
                        let y = y0 + gy * GLYPH_SCALE + dy;
                        if x < side && y < side {
                            px[(y * side + x) * 3..][..3].copy_from_slice(&ink);
                        }
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderedReport {
    pub table: PathBuf,
    pub csv: PathBuf,
    pub json: PathBuf,
    pub heatmaps: Vec<PathBuf>,
}

/// Writes `report.txt`, `report.csv`, `report.json` and
/// `confusion_<model>.png` per fold into `out_dir`.
pub fn render_report(folds: &[FoldReport], average: Option<(f64, f64)>, out_dir: &Path) -> Result<RenderedReport, EvalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let table = out_dir.join("report.txt");
    fs::write(&table, render_text_table(folds, average)).map_err(io(&table))?;
    let csv = out_dir.join("report.csv");
    fs::write(&csv, render_csv(folds, average)?).map_err(io(&csv))?;
    let json = out_dir.join("report.json");
    let body = match average {
        Some((average_accuracy, average_macro_f1)) => {
            serde_json::to_string_pretty(&LosoReport { folds: folds.to_vec(), average_accuracy, average_macro_f1 })?
        }
        None => serde_json::to_string_pretty(folds)?,
    };
    fs::write(&json, body + "\n").map_err(io(&json))?;
    let mut heatmaps = Vec::with_capacity(folds.len());
    for f in folds {
        let path = out_dir.join(format!("confusion_{}.png", f.model));
        render_heatmap(f).save_png(&path)?;
        heatmaps.push(path);
    }
    Ok(RenderedReport { table, csv, json, heatmaps })
}

impl LosoReport {
    pub fn render(&self, out_dir: &Path) -> Result<RenderedReport, EvalError> {
        render_report(&self.folds, Some((self.average_accuracy, self.average_macro_f1)), out_dir)
    }
}
