//! Streaming attention recognition: per-frame classification, majority
//! smoothing and the cobot pacing policy.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{DatasetError, FrameSource};
use crate::model::{AttentionModel, ModelError, Preprocessor};
use crate::types::{AttentionClass, ClassProbabilities};
use crate::vision::VisionError;

pub const DEFAULT_WINDOW: usize = 7;
pub const DEFAULT_DWELL_SECONDS: f64 = 2.0;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Frame(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Log { path: PathBuf, line: usize, message: String },
    #[error("invalid runtime parameter: {0}")]
    Parameter(String),
}

/// Classifier output for one frame. `probabilities` and `class` are both
/// absent when no face was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionEvent {
    pub frame: usize,
    pub timestamp: f64,
    pub probabilities: Option<ClassProbabilities>,
    pub class: Option<AttentionClass>,
}

impl AttentionEvent {
    pub fn classified(frame: usize, timestamp: f64, probabilities: ClassProbabilities) -> Self {
        Self { frame, timestamp, class: Some(probabilities.argmax()), probabilities: Some(probabilities) }
    }

    pub fn no_face(frame: usize, timestamp: f64) -> Self {
        Self { frame, timestamp, probabilities: None, class: None }
    }

    pub fn is_no_face(&self) -> bool {
        self.class.is_none()
    }

    fn check(&self) -> Result<(), String> {
        if !self.timestamp.is_finite() {
            return Err("non-finite timestamp".into());
        }
        match (&self.probabilities, self.class) {
            (Some(p), Some(c)) if p.argmax() == c => Ok(()),
            (Some(p), Some(c)) => Err(format!("class {c} disagrees with probabilities (argmax {})", p.argmax())),
            (None, None) => Ok(()),
            _ => Err("probabilities and class must be both present or both absent".into()),
        }
    }
}

/// Runs the attention model on every frame, in order. Frames without a
/// detectable face become no-face events. Timestamps are `index / fps`.
pub fn stream_classify(
    frames: &dyn FrameSource,
    fps: f64,
    model: &AttentionModel,
    pre: &Preprocessor,
) -> Result<Vec<AttentionEvent>, RuntimeError> {
    check_fps(fps)?;
    (0..frames.frame_count()).map(|i| classify_frame(frames, i, fps, model, pre)).collect()
}

fn check_fps(fps: f64) -> Result<(), RuntimeError> {
    if fps > 0.0 && fps.is_finite() {
        Ok(())
    } else {
        Err(RuntimeError::Parameter(format!("fps must be positive, got {fps}")))
    }
}

fn classify_frame(
    frames: &dyn FrameSource,
    index: usize,
    fps: f64,
    model: &AttentionModel,
    pre: &Preprocessor,
) -> Result<AttentionEvent, RuntimeError> {
    let timestamp = index as f64 / fps;
    let image = frames.read_frame(index)?;
    match pre.prepare(&image, None) {
        Ok(input) => Ok(AttentionEvent::classified(index, timestamp, model.predict_raw(&[input])?.remove(0))),
        Err(ModelError::Vision(VisionError::NoFace)) => Ok(AttentionEvent::no_face(index, timestamp)),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothedState {
    pub frame: usize,
    pub timestamp: f64,
    pub class: AttentionClass,
    pub window: usize,
    /// Events in the current window that agree with `class`.
    pub support: usize,
}

/// Incremental plurality vote over the last `window` classified events.
#[derive(Debug, Clone)]
pub struct Smoother {
    window: usize,
    recent: VecDeque<AttentionClass>,
    state: Option<AttentionClass>,
}

impl Smoother {
    /// `window` is clamped to at least 1.
    pub fn new(window: usize) -> Self {
        let window = window.max(1);
        Self { window, recent: VecDeque::with_capacity(window), state: None }
    }

    /// A no-face event leaves the window untouched and repeats the current state.
    pub fn push(&mut self, event: &AttentionEvent) -> SmoothedState {
        if let Some(class) = event.class {
            if self.recent.len() == self.window {
                self.recent.pop_front();
            }
            self.recent.push_back(class);
        }
        let mut counts = [0usize; AttentionClass::COUNT];
        for c in &self.recent {
            counts[c.index()] += 1;
        }
        let best = *counts.iter().max().expect("three classes");
        let leaders: Vec<AttentionClass> = AttentionClass::ALL.into_iter().filter(|c| counts[c.index()] == best).collect();
        let class = match (leaders.as_slice(), self.state) {
            ([only], _) => *only,
            (_, Some(previous)) => previous,
            (_, None) => AttentionClass::Distracted,
        };
        self.state = Some(class);
        SmoothedState {
            frame: event.frame,
            timestamp: event.timestamp,
            class,
            window: self.window,
            support: counts[class.index()],
        }
    }
}

/// One smoothed state per event.
pub fn smooth_majority(events: &[AttentionEvent], window: usize) -> Vec<SmoothedState> {
    let mut smoother = Smoother::new(window);
    events.iter().map(|e| smoother.push(e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    ProceedNextPart,
    IncreasePace,
    NormalPace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CobotCommand {
    pub command: Command,
    pub distracted: bool,
}

impl CobotCommand {
    pub fn for_state(class: AttentionClass) -> Self {
        match class {
            AttentionClass::Table => Self { command: Command::ProceedNextPart, distracted: false },
            AttentionClass::Cobot => Self { command: Command::IncreasePace, distracted: false },
            AttentionClass::Distracted => Self { command: Command::NormalPace, distracted: true },
        }
    }
}

/// A command switch, logged at the state that triggered it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub frame: usize,
    pub timestamp: f64,
    #[serde(flatten)]
    pub command: CobotCommand,
}

/// Hysteresis policy: the first state sets the command immediately; later a
/// different command takes over only once it has been requested
/// continuously for `dwell` seconds.
#[derive(Debug, Clone)]
pub struct Policy {
    dwell: f64,
    active: Option<CobotCommand>,
    candidate: Option<(CobotCommand, f64)>,
}

impl Policy {
    pub fn new(dwell: f64) -> Result<Self, RuntimeError> {
        if !(dwell >= 0.0 && dwell.is_finite()) {
            return Err(RuntimeError::Parameter(format!("dwell must be non-negative, got {dwell}")));
        }
        Ok(Self { dwell, active: None, candidate: None })
    }

    pub fn active(&self) -> Option<CobotCommand> {
        self.active
    }

    /// Returns the new command when this state causes a switch.
    pub fn push(&mut self, state: &SmoothedState) -> Option<CommandRecord> {
        let wanted = CobotCommand::for_state(state.class);
        let record = |command| CommandRecord { frame: state.frame, timestamp: state.timestamp, command };
        if self.active.is_none() || self.active == Some(wanted) {
            self.candidate = None;
            if self.active.is_none() {
                self.active = Some(wanted);
                return Some(record(wanted));
            }
            return None;
        }
        let since = match self.candidate {
            Some((c, since)) if c == wanted => since,
            _ => {
                self.candidate = Some((wanted, state.timestamp));
                state.timestamp
            }
        };
        if state.timestamp - since >= self.dwell {
            self.active = Some(wanted);
            self.candidate = None;
            return Some(record(wanted));
        }
        None
    }
}

/// Command switches for a state stream.
pub fn adapt_policy(states: &[SmoothedState], dwell: f64) -> Result<Vec<CommandRecord>, RuntimeError> {
    let mut policy = Policy::new(dwell)?;
    Ok(states.iter().filter_map(|s| policy.push(s)).collect())
}

/// Smoothing and policy over a logged event stream.
pub fn replay(events: &[AttentionEvent], window: usize, dwell: f64) -> Result<Vec<CommandRecord>, RuntimeError> {
    adapt_policy(&smooth_majority(events, window), dwell)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput {
    pub events: Vec<AttentionEvent>,
    pub states: Vec<SmoothedState>,
    pub commands: Vec<CommandRecord>,
}

/// Classification, smoothing and policy as three threads joined by ordered
/// channels. Produces the same output as running the stages one after
/// another.
pub fn run_stream(
    frames: &dyn FrameSource,
    fps: f64,
    model: &AttentionModel,
    pre: &Preprocessor,
    window: usize,
    dwell: f64,
) -> Result<StreamOutput, RuntimeError> {
    check_fps(fps)?;
    let mut policy = Policy::new(dwell)?;
    let (event_tx, event_rx) = mpsc::channel::<AttentionEvent>();
    let (state_tx, state_rx) = mpsc::channel::<SmoothedState>();
    std::thread::scope(|scope| {
        let smoother = scope.spawn(move || {
            let mut smoother = Smoother::new(window);
            let mut events = Vec::new();
            for e in event_rx {
                if state_tx.send(smoother.push(&e)).is_err() {
                    break;
                }
                events.push(e);
            }
            events
        });
        let policy = scope.spawn(move || {
            let mut states = Vec::new();
            let mut commands = Vec::new();
            for s in state_rx {
                commands.extend(policy.push(&s));
                states.push(s);
            }
            (states, commands)
        });
        let classified: Result<(), RuntimeError> = (0..frames.frame_count()).try_for_each(|i| {
            let event = classify_frame(frames, i, fps, model, pre)?;
            event_tx.send(event).expect("smoothing stage outlives the classifier");
            Ok(())
        });
        drop(event_tx);
        let events = smoother.join().expect("smoothing stage panicked");
        let (states, commands) = policy.join().expect("policy stage panicked");
        classified.map(|()| StreamOutput { events, states, commands })
    })
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), RuntimeError> {
    let io = |source| RuntimeError::Io { path: path.to_path_buf(), source };
    let mut out = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a JSON-lines file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, RuntimeError> {
    let file = fs::File::open(path).map_err(|source| RuntimeError::Io { path: path.to_path_buf(), source })?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| RuntimeError::Io { path: path.to_path_buf(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| RuntimeError::Log {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Reads an event log and checks its invariants: consistent argmax and
/// non-decreasing timestamps.
pub fn read_events(path: &Path) -> Result<Vec<AttentionEvent>, RuntimeError> {
    let events: Vec<AttentionEvent> = read_jsonl(path)?;
    let bad = |line: usize, message: String| RuntimeError::Log { path: path.to_path_buf(), line, message };
    for (i, e) in events.iter().enumerate() {
        e.check().map_err(|m| bad(i + 1, m))?;
        if i > 0 && e.timestamp < events[i - 1].timestamp {
            return Err(bad(i + 1, "timestamps must not decrease".into()));
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use AttentionClass::*;

    fn events(classes: &[Option<AttentionClass>], fps: f64) -> Vec<AttentionEvent> {
        classes
            .iter()
            .enumerate()
            .map(|(i, c)| match c {
                Some(c) => {
                    let mut p = [0.1; 3];
                    p[c.index()] = 0.8;
                    AttentionEvent::classified(i, i as f64 / fps, ClassProbabilities::new(p).unwrap())
                }
                None => AttentionEvent::no_face(i, i as f64 / fps),
            })
            .collect()
    }

    #[test]
    fn plurality_examples() {
        let s = smooth_majority(&events(&[Some(Table); 5], 1.0), 5);
        assert_eq!((s[4].class, s[4].support), (Table, 5));
        let s = smooth_majority(&events(&[Some(Cobot), Some(Cobot), Some(Table)], 1.0), 3);
        assert_eq!((s[2].class, s[2].support), (Cobot, 2));
    }

    #[test]
    fn tie_keeps_previous_state() {
        // Window 2: [Table] -> Table, then [Table, Cobot] tie -> Table.
        let s = smooth_majority(&events(&[Some(Table), Some(Cobot)], 1.0), 2);
        assert_eq!(s[1].class, Table);
        // Window 2 after a Table state: [Cobot, Table] still ties -> Table.
        let s = smooth_majority(&events(&[Some(Table), Some(Table), Some(Cobot)], 1.0), 2);
        assert_eq!(s[2].class, Table);
        let s = smooth_majority(&events(&[None, None], 1.0), 3);
        assert_eq!((s[0].class, s[0].support), (Distracted, 0));
    }

    #[test]
    fn no_face_carries_state() {
        let s = smooth_majority(&events(&[Some(Cobot), None, None, Some(Cobot)], 1.0), 3);
        assert!(s.iter().all(|x| x.class == Cobot));
        assert_eq!(s[2].support, 1);
        assert_eq!(s[3].support, 2);
    }

    #[test]
    fn pacing_commands() {
        let table = smooth_majority(&events(&[Some(Table); 30], 10.0), 7);
        let log = adapt_policy(&table, 2.0).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].command, CobotCommand { command: Command::ProceedNextPart, distracted: false });
        assert_eq!(log[0].frame, 0);
        let cobot = smooth_majority(&events(&[Some(Cobot); 30], 10.0), 7);
        assert_eq!(adapt_policy(&cobot, 2.0).unwrap()[0].command.command, Command::IncreasePace);
        let d = adapt_policy(&smooth_majority(&events(&[Some(Distracted); 3], 10.0), 1), 2.0).unwrap();
        assert_eq!(d[0].command, CobotCommand { command: Command::NormalPace, distracted: true });
    }

    #[test]
    fn short_flicker_is_ignored() {
        // 10 fps, dwell 2 s: 1.5 s of Cobot inside a Table stream.
        let mut classes = vec![Some(Table); 20];
        classes.extend([Some(Cobot); 15]);
        classes.extend([Some(Table); 20]);
        let log = adapt_policy(&smooth_majority(&events(&classes, 10.0), 1), 2.0).unwrap();
        assert_eq!(log.len(), 1);
        // 2.5 s of Cobot switches once it has lasted 2 s.
        let mut classes = vec![Some(Table); 20];
        classes.extend([Some(Cobot); 25]);
        let log = adapt_policy(&smooth_majority(&events(&classes, 10.0), 1), 2.0).unwrap();
        assert_eq!(log.len(), 2);
        assert_eq!((log[1].frame, log[1].command.command), (40, Command::IncreasePace));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(Policy::new(-1.0), Err(RuntimeError::Parameter(_))));
        assert!(matches!(Policy::new(f64::NAN), Err(RuntimeError::Parameter(_))));
    }

    #[test]
    fn event_log_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let ev = events(&[Some(Table), None, Some(Cobot)], 30.0);
        write_jsonl(&ev, &path).unwrap();
        assert_eq!(read_events(&path).unwrap(), ev);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("\"probabilities\":null"));

        let mut bad = ev.clone();
        bad[2].class = Some(Table);
        write_jsonl(&bad, &path).unwrap();
        assert!(matches!(read_events(&path), Err(RuntimeError::Log { line: 3, .. })));
        let mut bad = ev;
        bad[1].timestamp = 5.0;
        write_jsonl(&bad, &path).unwrap();
        assert!(matches!(read_events(&path), Err(RuntimeError::Log { line: 3, .. })));
    }

    proptest::proptest! {
        #[test]
        fn support_never_exceeds_window(raw in proptest::collection::vec(0usize..4, 1..80), window in 1usize..10) {
            let classes: Vec<_> = raw.iter().map(|&i| AttentionClass::from_index(i)).collect();
            for s in smooth_majority(&events(&classes, 25.0), window) {
                proptest::prop_assert!(s.support <= window);
            }
        }
    }
}
