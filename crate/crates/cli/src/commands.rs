use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use gazeattn::datasets::{
    build_assembly_test_set, generate_synthetic, load_manifest, open_video, split_by_subject, AttentionSample,
    DatasetError, GazeSample, Manifest, SegmentAnnotation,
};
use gazeattn::eval::{self, EvalError, FoldReport, LosoReport};
use gazeattn::model::{
    build_gaze_model, load_checkpoint, save_checkpoint, train_attention, train_gaze, transfer_to_attention,
    AttentionModel, ModelCheckpoint, ModelError, Preprocessor,
};
use gazeattn::runtime::{self, RuntimeError};
use gazeattn::vision::ContrastDetector;
use thiserror::Error;

use crate::config::{CommandId, ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or unusable inputs; exit status 1.
    #[error("{0}")]
    Validation(String),
    /// Failure while running; exit status 2.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Validation(format!("config error: {e}"))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        use DatasetError::*;
        match e {
            Parse { .. } | Schema { .. } | EmptyManifest(_) | VersionMismatch { .. } | KindMismatch { .. }
            | UnknownSubject(_) | TooFewSubjects(_) | InvalidConfig(_) | InvalidGeometry(_) => {
                Self::Validation(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Dataset(d) => d.into(),
            ModelError::Config(_) | ModelError::UnknownArchitecture(_) | ModelError::IncompatibleCheckpoint(_) => {
                Self::Validation(e.to_string())
            }
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dataset(d) => d.into(),
            EvalError::Model(m) => m.into(),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<RuntimeError> for CliError {
    fn from(e: RuntimeError) -> Self {
        match e {
            RuntimeError::Model(m) => m.into(),
            RuntimeError::Log { .. } | RuntimeError::Parameter(_) => Self::Validation(e.to_string()),
            other => Self::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, body + "\n").map_err(io_err(path))
}

/// Writes the resolved config into the output directory, then runs the command.
pub fn execute(cfg: &RunConfig) -> Result<(), CliError> {
    cfg.validate()?;
    let out = cfg.out_dir()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_json(cfg, &out.join("resolved_config.json"))?;
    match cfg.command {
        CommandId::SynthData => synth_data(cfg, out),
        CommandId::TrainGaze => train_gaze_cmd(cfg, out),
        CommandId::TransferTrain => transfer_train(cfg, out),
        CommandId::Loso => loso(cfg, out),
        CommandId::EvalAssembly => eval_assembly(cfg, out),
        CommandId::Infer => infer(cfg, out),
        CommandId::Report => report(cfg, out),
    }
}

fn synth_data(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = generate_synthetic(&cfg.synth, out)?;
    println!(
        "wrote {} gaze and {} attention samples for {} subjects to {}",
        data.gaze.len(),
        data.attention.len(),
        data.attention.subject_count(),
        out.display()
    );
    Ok(())
}

/// Held-out validation subjects: the configured list, or the last tenth
/// (at least one) of the sorted subject ids.
fn validation_subjects(cfg: &RunConfig, manifest: &Manifest<GazeSample>) -> BTreeSet<String> {
    if !cfg.val_subjects.is_empty() {
        return cfg.val_subjects.iter().cloned().collect();
    }
    let subjects: Vec<&str> = manifest.subjects().collect();
    let n = subjects.len().div_ceil(10).max(1);
    subjects[subjects.len().saturating_sub(n)..].iter().map(|s| s.to_string()).collect()
}

fn train_gaze_cmd(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let manifest: Manifest<GazeSample> = load_manifest(cfg.paths.manifest.as_deref().expect("validated"))?;
    let (train, val) = match &cfg.paths.val_manifest {
        Some(path) => (manifest, load_manifest(path)?),
        None => {
            let held = validation_subjects(cfg, &manifest);
            if held.len() >= manifest.subject_count() {
                return Err(CliError::Validation("val_subjects leaves no training subjects".into()));
            }
            split_by_subject(&manifest, &held)?
        }
    };
    let detector = ContrastDetector::default();
    let pre = Preprocessor::new(cfg.backbone.input_side, cfg.backbone.crop_margin, &detector);
    let (train, val) = (pre.prepare_gaze(&train)?, pre.prepare_gaze(&val)?);
    log::info!("gaze training on {} samples, validating on {}", train.len(), val.len());
    let model = build_gaze_model(&cfg.backbone, cfg.seed)?;
    let ckpt = train_gaze(model, &train, &val, &cfg.gaze_train)?;
    let path = out.join("gaze.ckpt");
    save_checkpoint(&ckpt, &path)?;
    write_json(&ckpt.history, &out.join("history.json"))?;
    let best = ckpt.history.iter().filter_map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
    println!("best validation MAE {best:.5} rad after {} epochs; saved {}", ckpt.history.len(), path.display());
    Ok(())
}

fn attention_manifest(path: &Path) -> Result<Manifest<AttentionSample>, CliError> {
    Ok(load_manifest(path)?)
}

fn transfer_train(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let gaze = load_checkpoint(cfg.paths.gaze_checkpoint.as_deref().expect("validated"))?;
    let manifest = attention_manifest(cfg.paths.manifest.as_deref().expect("validated"))?;
    let detector = ContrastDetector::default();
    let pre = Preprocessor::new(gaze.backbone.input_side, gaze.backbone.crop_margin, &detector);
    let train = pre.prepare_attention(&manifest)?;
    let model = transfer_to_attention(&gaze, cfg.seed)?;
    let ckpt = train_attention(model, &train, &cfg.attention_train)?;
    let path = out.join("attention.ckpt");
    save_checkpoint(&ckpt, &path)?;
    write_json(&ckpt.history, &out.join("history.json"))?;
    println!("trained {} epochs on {} samples; saved {}", ckpt.history.len(), train.len(), path.display());
    Ok(())
}

fn loso(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let manifest = attention_manifest(cfg.paths.manifest.as_deref().expect("validated"))?;
    let gaze: ModelCheckpoint = match &cfg.paths.gaze_checkpoint {
        Some(path) => load_checkpoint(path)?,
        None => {
            log::warn!("no gaze checkpoint given; transferring from an untrained backbone");
            build_gaze_model(&cfg.backbone, cfg.seed)?.checkpoint(cfg.gaze_train.clone(), Vec::new())
        }
    };
    let detector = ContrastDetector::default();
    let pre = Preprocessor::new(gaze.backbone.input_side, gaze.backbone.crop_margin, &detector);
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let mut fold = 0;
    let report = eval::run_loso(&manifest, &pre, cfg.seed, |train, seed, subject| {
        fold += 1;
        let prepared = pre.prepare_attention(train)?;
        let model = transfer_to_attention(&gaze, seed)?;
        let train_cfg = gazeattn::model::TrainConfig { seed, ..cfg.attention_train.clone() };
        let ckpt = train_attention(model, &prepared, &train_cfg)?;
        let path = ckpt_dir.join(format!("Model{fold}.ckpt"));
        save_checkpoint(&ckpt, &path)?;
        log::info!("fold {fold} (held out {subject}): {} epochs, saved {}", ckpt.history.len(), path.display());
        Ok(AttentionModel::from_checkpoint(&ckpt)?)
    })?;
    report.render(out)?;
    print!("{}", eval::render_text_table(&report.folds, Some((report.average_accuracy, report.average_macro_f1))));
    Ok(())
}

fn eval_assembly(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let manifest_path = cfg.paths.manifest.as_deref().expect("validated");
    let models = cfg
        .paths
        .models
        .iter()
        .map(|p| Ok(AttentionModel::from_checkpoint(&load_checkpoint(p)?)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let backbone = &models[0].backbone;
    let detector = ContrastDetector::default();
    let test = match &cfg.paths.videos {
        Some(videos) => {
            let segments: Manifest<SegmentAnnotation> = load_manifest(manifest_path)?;
            let (test, rejections) =
                build_assembly_test_set(&segments, videos, &detector, backbone.crop_margin, &out.join("assembly"))?;
            rejections.write_csv(&out.join("assembly").join("rejections.csv"))?;
            test.save(&out.join("assembly").join("attention.jsonl"))?;
            println!("assembly test set: {} samples, {} rejected frames", test.len(), rejections.rejections.len());
            test
        }
        None => attention_manifest(manifest_path)?,
    };
    let pre = Preprocessor::new(backbone.input_side, backbone.crop_margin, &detector);
    let reports = eval::evaluate_models(&models, &test, &pre)?;
    let pairs: Vec<_> = reports.iter().map(|r| (r.metrics.accuracy, r.metrics.macro_f1)).collect();
    let average = eval::aggregate(&pairs);
    eval::render_report(&reports, average, out)?;
    print!("{}", eval::render_text_table(&reports, average));
    Ok(())
}

fn infer(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let rt = &cfg.runtime;
    let commands = match &cfg.paths.events {
        Some(events) => runtime::replay(&runtime::read_events(events)?, rt.window, rt.dwell)?,
        None => {
            let model = AttentionModel::from_checkpoint(&load_checkpoint(&cfg.paths.models[0])?)?;
            let frames = open_video(cfg.paths.video.as_deref().expect("validated"))?;
            let detector = ContrastDetector::default();
            let pre = Preprocessor::new(model.backbone.input_side, model.backbone.crop_margin, &detector);
            let stream = runtime::run_stream(frames.as_ref(), rt.fps, &model, &pre, rt.window, rt.dwell)?;
            runtime::write_jsonl(&stream.events, &out.join("events.jsonl"))?;
            runtime::write_jsonl(&stream.states, &out.join("states.jsonl"))?;
            stream.commands
        }
    };
    runtime::write_jsonl(&commands, &out.join("commands.jsonl"))?;
    println!("{} command switches written to {}", commands.len(), out.join("commands.jsonl").display());
    Ok(())
}

fn report(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let path = cfg.paths.report.as_deref().expect("validated");
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let invalid = |e: serde_json::Error| CliError::Validation(format!("{}: {e}", path.display()));
    let (folds, average) = if text.trim_start().starts_with('[') {
        let folds: Vec<FoldReport> = serde_json::from_str(&text).map_err(invalid)?;
        let pairs: Vec<_> = folds.iter().map(|r| (r.metrics.accuracy, r.metrics.macro_f1)).collect();
        let average = eval::aggregate(&pairs);
        (folds, average)
    } else {
        let r: LosoReport = serde_json::from_str(&text).map_err(invalid)?;
        (r.folds, Some((r.average_accuracy, r.average_macro_f1)))
    };
    eval::render_report(&folds, average, out)?;
    print!("{}", eval::render_text_table(&folds, average));
    Ok(())
}
