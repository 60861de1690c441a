//! Metrics, the leave-one-subject-out harness and report rendering.

mod render;

use std::path::PathBuf;

use num_rational::Ratio;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{render_csv, render_heatmap, render_report, render_text_table, RenderedReport};

use crate::datasets::{loso_folds, AttentionSample, DatasetError, Manifest};
use crate::model::{AttentionModel, ModelError, Preprocessor};
use crate::types::AttentionClass;

const K: usize = AttentionClass::COUNT;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions for {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no predictions to score")]
    EmptyInput,
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("empty test set")]
    EmptyDataset,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vision(#[from] crate::vision::VisionError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Rows are true classes, columns predicted classes, both in
/// Cobot, Table, Distracted order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; K]; K]) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[[u64; K]; K] {
        &self.counts
    }

    pub fn get(&self, truth: AttentionClass, predicted: AttentionClass) -> u64 {
        self.counts[truth.index()][predicted.index()]
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn column_total(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    /// Exact rational metrics.
    pub fn exact_metrics(&self) -> Result<ExactMetrics, EvalError> {
        let total = self.total();
        if total == 0 {
            return Err(EvalError::EmptyMatrix);
        }
        let r = |n: u64, d: u64| Ratio::new(n as i128, d as i128);
        let mut recall = [Ratio::zero(); K];
        let mut empty_rows = [false; K];
        let mut f1_sum = Ratio::<i128>::zero();
        for c in 0..K {
            let tp = self.counts[c][c];
            let row = self.row_total(c);
            let col = self.column_total(c);
            if row == 0 {
                empty_rows[c] = true;
            } else {
                recall[c] = r(tp, row);
            }
            // 2PR/(P+R) simplifies to 2TP/(row+col); zero when TP is zero.
            if tp > 0 {
                f1_sum += r(2 * tp, row + col);
            }
        }
        Ok(ExactMetrics {
            recall,
            accuracy: r(self.trace(), total),
            macro_f1: f1_sum / Ratio::from_integer(K as i128),
            empty_rows,
        })
    }
}

pub fn confusion_matrix(preds: &[AttentionClass], labels: &[AttentionClass]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut counts = [[0u64; K]; K];
    for (p, l) in preds.iter().zip(labels) {
        counts[l.index()][p.index()] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMetrics {
    pub recall: [Ratio<i128>; K],
    pub accuracy: Ratio<i128>,
    pub macro_f1: Ratio<i128>,
    /// Classes without any true sample; their recall is reported as 0.
    pub empty_rows: [bool; K],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: [f64; K],
    pub accuracy: f64,
    pub macro_f1: f64,
}

/// Correctly rounded while numerator and denominator stay below 2^53, since
/// both convert exactly and IEEE division rounds once.
fn to_f64(r: &Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Per-class recall, accuracy and macro F1. A class with no true samples
/// gets recall 0 and a logged warning.
pub fn fold_metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    let exact = cm.exact_metrics()?;
    for (c, empty) in exact.empty_rows.iter().enumerate() {
        if *empty {
            log::warn!("no {} samples in the evaluated set; recall reported as 0", AttentionClass::ALL[c]);
        }
    }
    Ok(Metrics {
        recall: exact.recall.each_ref().map(to_f64),
        accuracy: to_f64(&exact.accuracy),
        macro_f1: to_f64(&exact.macro_f1),
    })
}

/// Rounds half away from zero at `decimals` places. Values within 1e-9 of
/// a tie (decimal inputs such as 0.9425 are rarely exact in binary) count
/// as ties.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = value.abs() * scale;
    let floor = scaled.floor();
    let rounded = if scaled - floor >= 0.5 - 1e-9 { floor + 1.0 } else { floor };
    (rounded / scale).copysign(value)
}

/// Arithmetic means of (accuracy, F1) pairs.
pub fn aggregate(pairs: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let (a, f) = pairs.iter().fold((0.0, 0.0), |(a, f), (x, y)| (a + x, f + y));
    Some((a / n, f / n))
}

/// Overall accuracy implied by per-class recalls and class sizes: each
/// class contributes round(recall * count) correct samples.
pub fn accuracy_from_recalls(recalls: [f64; K], counts: [u64; K]) -> f64 {
    let correct: f64 = recalls.iter().zip(counts).map(|(r, n)| round_half_up(r * n as f64, 0)).sum();
    correct / counts.iter().sum::<u64>() as f64
}

/// Paper-style two-decimal rendering of a fold's metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundedMetrics {
    pub recall: [f64; K],
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    /// Row label, e.g. `Model3`.
    pub model: String,
    /// Held-out subject for LOSO folds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    pub rounded: RoundedMetrics,
}

impl FoldReport {
    pub fn new(model: impl Into<String>, subject: Option<String>, confusion: ConfusionMatrix) -> Result<Self, EvalError> {
        let metrics = fold_metrics(&confusion)?;
        let rounded = RoundedMetrics {
            recall: metrics.recall.map(|r| round_half_up(r, 2)),
            accuracy: round_half_up(metrics.accuracy, 2),
            macro_f1: round_half_up(metrics.macro_f1, 2),
        };
        Ok(Self { model: model.into(), subject, confusion, metrics, rounded })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub folds: Vec<FoldReport>,
    pub average_accuracy: f64,
    pub average_macro_f1: f64,
}

impl LosoReport {
    pub fn from_folds(folds: Vec<FoldReport>) -> Result<Self, EvalError> {
        let pairs: Vec<_> = folds.iter().map(|f| (f.metrics.accuracy, f.metrics.macro_f1)).collect();
        let (average_accuracy, average_macro_f1) = aggregate(&pairs).ok_or(EvalError::EmptyInput)?;
        Ok(Self { folds, average_accuracy, average_macro_f1 })
    }
}

/// Scores `model` on an already prepared test set.
pub fn evaluate_prepared(
    model: &AttentionModel,
    name: impl Into<String>,
    subject: Option<String>,
    test: &crate::model::PreparedSet,
) -> Result<FoldReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let preds: Vec<AttentionClass> = model.predict_set(test)?.iter().map(|p| p.argmax()).collect();
    let labels: Vec<AttentionClass> =
        test.labels().into_iter().map(|l| AttentionClass::from_index(l).expect("labels come from AttentionClass")).collect();
    FoldReport::new(name, subject, confusion_matrix(&preds, &labels)?)
}

/// Seed handed to the trainer of fold `index`.
pub fn fold_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Leave-one-subject-out evaluation. `trainer` receives the training
/// manifest, the fold seed and the held-out subject; folds are visited in
/// subject-id order and named `Model1`, `Model2`, ...
pub fn run_loso<F>(
    manifest: &Manifest<AttentionSample>,
    pre: &Preprocessor,
    seed: u64,
    mut trainer: F,
) -> Result<LosoReport, EvalError>
where
    F: FnMut(&Manifest<AttentionSample>, u64, &str) -> Result<AttentionModel, EvalError>,
{
    let folds = loso_folds(manifest)?;
    let mut reports = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        let model = trainer(&fold.train, fold_seed(seed, i), &fold.subject)?;
        let test = pre.prepare_attention(&fold.test)?;
        let report = evaluate_prepared(&model, format!("Model{}", i + 1), Some(fold.subject.clone()), &test)?;
        log::info!("fold {} ({}): accuracy {:.4}", i + 1, fold.subject, report.metrics.accuracy);
        reports.push(report);
    }
    LosoReport::from_folds(reports)
}

/// Scores every model on the same test set, in model order.
pub fn evaluate_models(
    models: &[AttentionModel],
    test: &Manifest<AttentionSample>,
    pre: &Preprocessor,
) -> Result<Vec<FoldReport>, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let prepared = pre.prepare_attention(test)?;
    models
        .iter()
        .enumerate()
        .map(|(i, m)| evaluate_prepared(m, format!("Model{}", i + 1), None, &prepared))
        .collect()
}
