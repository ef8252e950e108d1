//! Dataset directories: a `manifest.json` plus per-session CSV files under
//! `sessions/`.

use std::fs;
use std::path::{Path, PathBuf};

use keystroke_core::labels::{align_ground_truth, key_intervals, smooth_classes};
use keystroke_core::synth::CorpusSession;
use keystroke_core::train::Recording;
use keystroke_core::{FrameLandmarks, KeyClass, NUM_CLASSES};
use serde::{Deserialize, Serialize};

use crate::csvio;
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SESSIONS_DIR: &str = "sessions";

/// Frames of one class, one cell of the class table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub index: usize,
    pub class: String,
    pub frames: u64,
}

pub fn class_table(counts: &[u64; NUM_CLASSES]) -> Vec<ClassCount> {
    KeyClass::all()
        .map(|k| ClassCount {
            index: k.code(),
            class: k.to_string(),
            frames: counts[k.code()],
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub id: String,
    pub text: String,
    pub wpm: f64,
    pub seed: u64,
    pub frames: usize,
    /// Paths relative to the dataset directory.
    pub landmarks: String,
    pub keylog: String,
    pub labels: String,
    pub class_counts: Vec<ClassCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fps: f64,
    pub label_smoothing: usize,
    pub total_frames: u64,
    pub class_counts: Vec<ClassCount>,
    pub sessions: Vec<SessionEntry>,
}

/// A session read back from disk with its frame labels realigned from the
/// keylog.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSession {
    pub id: String,
    pub wpm: f64,
    pub frames: Vec<FrameLandmarks>,
    pub labels: Vec<KeyClass>,
    /// The keys pressed, in order, as text.
    pub reference: String,
}

impl LabeledSession {
    pub fn recording(&self) -> Recording {
        Recording {
            id: self.id.clone(),
            frames: self.frames.clone(),
            labels: self.labels.clone(),
        }
    }
}

fn session_paths(id: &str) -> [String; 3] {
    ["landmarks", "keylog", "labels"].map(|kind| format!("{SESSIONS_DIR}/{id}.{kind}.csv"))
}

/// Writes every session and the manifest into `dir`, creating it if needed.
pub fn write_corpus(dir: &Path, sessions: &[CorpusSession], fps: f64, smoothing: usize) -> Result<Manifest> {
    let session_dir = dir.join(SESSIONS_DIR);
    fs::create_dir_all(&session_dir).map_err(|e| Error::io(&session_dir, e))?;
    let mut totals = [0u64; NUM_CLASSES];
    let mut entries = Vec::with_capacity(sessions.len());
    for s in sessions {
        let [landmarks, keylog, labels] = session_paths(&s.id);
        csvio::write_landmarks_file(&dir.join(&landmarks), &s.session.frames)?;
        csvio::write_keylog_file(&dir.join(&keylog), &s.session.keylog)?;
        csvio::write_labels_file(&dir.join(&labels), &smooth_classes(&s.session.labels, smoothing))?;
        let counts = s.session.class_counts();
        for (t, c) in totals.iter_mut().zip(counts) {
            *t += c;
        }
        entries.push(SessionEntry {
            id: s.id.clone(),
            text: s.text.clone(),
            wpm: s.wpm,
            seed: s.seed,
            frames: s.session.frames.len(),
            landmarks,
            keylog,
            labels,
            class_counts: class_table(&counts),
        });
    }
    let manifest = Manifest {
        fps,
        label_smoothing: smoothing,
        total_frames: totals.iter().sum(),
        class_counts: class_table(&totals),
        sessions: entries,
    };
    let path = dir.join(MANIFEST);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads landmarks and keylog of one session and aligns the labels.
pub fn load_session(dir: &Path, entry: &SessionEntry) -> Result<LabeledSession> {
    let frames = csvio::read_landmarks_file(&dir.join(&entry.landmarks))?;
    let keylog = csvio::read_keylog_file(&dir.join(&entry.keylog))?;
    let ts: Vec<u64> = frames.iter().map(|f| f.timestamp_ms).collect();
    let labels = align_ground_truth(&keylog, &ts)?;
    let reference = key_intervals(&keylog)?.iter().filter_map(|iv| iv.key.to_char()).collect();
    Ok(LabeledSession {
        id: entry.id.clone(),
        wpm: entry.wpm,
        frames,
        labels,
        reference,
    })
}

/// A dataset directory with its manifest.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: read_manifest(dir)?,
        })
    }

    pub fn load_all(&self) -> Result<Vec<LabeledSession>> {
        self.manifest.sessions.iter().map(|e| load_session(&self.dir, e)).collect()
    }
}
