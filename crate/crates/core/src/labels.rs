//! Class taxonomy and label pre-processing.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::landmarks::FrameLandmarks;
use crate::{Error, Result};

pub const NUM_CLASSES: usize = 28;

/// Hold duration synthesized for key presses logged without a release edge.
pub const DEFAULT_HOLD_MS: u64 = 100;

/// Class code: 0 is idle, 1..=26 are `a`..`z`, 27 is space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyClass(u8);

impl KeyClass {
    pub const IDLE: KeyClass = KeyClass(0);
    pub const SPACE: KeyClass = KeyClass(27);

    pub fn new(code: usize) -> Option<Self> {
        (code < NUM_CLASSES).then_some(KeyClass(code as u8))
    }

    pub fn code(self) -> usize {
        self.0 as usize
    }

    pub fn is_idle(self) -> bool {
        self.0 == 0
    }

    /// `a`..`z` (either case) and `' '`.
    pub fn from_char(c: char) -> Option<Self> {
        match c {
            ' ' => Some(Self::SPACE),
            'a'..='z' => Some(KeyClass(c as u8 - b'a' + 1)),
            'A'..='Z' => Some(KeyClass(c as u8 - b'A' + 1)),
            _ => None,
        }
    }

    /// The typed character; idle has none.
    pub fn to_char(self) -> Option<char> {
        match self.0 {
            0 => None,
            27 => Some(' '),
            c => Some((b'a' + c - 1) as char),
        }
    }

    /// Key token as used in keylog files: a lowercase letter or `SPACE`.
    pub fn from_token(token: &str) -> Option<Self> {
        if token == "SPACE" {
            return Some(Self::SPACE);
        }
        let mut chars = token.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_lowercase() => Self::from_char(c),
            _ => None,
        }
    }

    pub fn token(self) -> String {
        match self.0 {
            27 => String::from("SPACE"),
            _ => self.to_char().map(String::from).unwrap_or_else(|| String::from("IDLE")),
        }
    }

    pub fn all() -> impl Iterator<Item = KeyClass> {
        (0..NUM_CLASSES as u8).map(KeyClass)
    }
}

impl fmt::Display for KeyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => f.write_str("IDLE"),
            27 => f.write_str("SPACE"),
            c => write!(f, "{}", (b'A' + c - 1) as char),
        }
    }
}

/// A 28-way label distribution for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelVector(pub [f64; NUM_CLASSES]);

impl LabelVector {
    pub fn argmax(&self) -> KeyClass {
        KeyClass(argmax(&self.0) as u8)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn one_hot(class: KeyClass) -> LabelVector {
    let mut v = [0.0; NUM_CLASSES];
    v[class.code()] = 1.0;
    LabelVector(v)
}

/// Per-class frame counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetStats {
    pub counts: [u64; NUM_CLASSES],
}

impl DatasetStats {
    pub fn from_classes(classes: &[KeyClass]) -> Self {
        let mut stats = Self::default();
        stats.add(classes);
        stats
    }

    pub fn add(&mut self, classes: &[KeyClass]) {
        for c in classes {
            self.counts[c.code()] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// `w_i = N / (k * n_i)` with `k = 28`. Every class must have samples.
pub fn class_weights(stats: &DatasetStats) -> Result<[f64; NUM_CLASSES]> {
    if let Some(i) = stats.counts.iter().position(|&n| n == 0) {
        return Err(Error::ZeroClassCount(i));
    }
    Ok(class_weights_partial(stats))
}

/// Like [`class_weights`] but classes without samples get weight zero and
/// drop out of the loss.
pub fn class_weights_partial(stats: &DatasetStats) -> [f64; NUM_CLASSES] {
    let total = stats.total() as f64;
    let k = NUM_CLASSES as f64;
    let mut w = [0.0; NUM_CLASSES];
    for (wi, &n) in w.iter_mut().zip(&stats.counts) {
        if n > 0 {
            *wi = total / (k * n as f64);
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    Down,
    Up,
}

/// One keylog row. `edge: None` means the logger only recorded the press.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyEdge {
    pub timestamp_ms: u64,
    pub key: KeyClass,
    pub edge: Option<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyInterval {
    pub down_ms: u64,
    pub up_ms: u64,
    pub key: KeyClass,
}

/// Pairs press and release edges into closed intervals, sorted by press time.
/// A press with no matching release is held for [`DEFAULT_HOLD_MS`].
pub fn key_intervals(keylog: &[KeyEdge]) -> Result<Vec<KeyInterval>> {
    if keylog.windows(2).any(|w| w[0].timestamp_ms > w[1].timestamp_ms) {
        return Err(Error::UnsortedInput);
    }
    let mut out = Vec::new();
    for (i, e) in keylog.iter().enumerate() {
        let up_ms = match e.edge {
            Some(Edge::Up) => continue,
            Some(Edge::Down) => keylog[i + 1..]
                .iter()
                .find(|n| n.key == e.key)
                .filter(|n| n.edge == Some(Edge::Up))
                .map(|n| n.timestamp_ms)
                .unwrap_or(e.timestamp_ms + DEFAULT_HOLD_MS),
            None => e.timestamp_ms + DEFAULT_HOLD_MS,
        };
        out.push(KeyInterval {
            down_ms: e.timestamp_ms,
            up_ms,
            key: e.key,
        });
    }
    Ok(out)
}

/// Labels each frame timestamp with the key held at that instant; when key
/// intervals overlap the most recent press wins.
pub fn align_ground_truth(keylog: &[KeyEdge], frame_ts: &[u64]) -> Result<Vec<KeyClass>> {
    if frame_ts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::UnsortedInput);
    }
    let intervals = key_intervals(keylog)?;
    let max_hold = intervals.iter().map(|iv| iv.up_ms - iv.down_ms).max().unwrap_or(0);

    let mut started = 0;
    let mut out = Vec::with_capacity(frame_ts.len());
    for &ts in frame_ts {
        while started < intervals.len() && intervals[started].down_ms <= ts {
            started += 1;
        }
        let class = intervals[..started]
            .iter()
            .rev()
            .take_while(|iv| iv.down_ms + max_hold >= ts)
            .find(|iv| iv.up_ms >= ts)
            .map_or(KeyClass::IDLE, |iv| iv.key);
        out.push(class);
    }
    Ok(out)
}

/// Temporal label smoothing with blend size `s`.
///
/// Idle frames within `s` frames of a key run are blended toward that key: at
/// distance `d` the label is `d/(s+1)` idle and `1 - d/(s+1)` key. Blending
/// stops at the first non-idle frame. An idle frame near two runs takes the
/// closer one, and the following run on a tie.
pub fn smooth_labels(seq: &[LabelVector], s: usize) -> Vec<LabelVector> {
    let classes: Vec<KeyClass> = seq.iter().map(LabelVector::argmax).collect();
    smooth_classes(&classes, s)
}

/// [`smooth_labels`] starting from class codes instead of one-hot vectors.
pub fn smooth_classes(classes: &[KeyClass], s: usize) -> Vec<LabelVector> {
    let n = classes.len();
    // (distance, key) of the best blend source per frame
    let mut blend: Vec<Option<(usize, KeyClass)>> = alloc::vec![None; n];
    let mut consider = |i: usize, d: usize, key: KeyClass, prefer_new: bool| {
        let better = match blend[i] {
            None => true,
            Some((bd, _)) => d < bd || (d == bd && prefer_new),
        };
        if better {
            blend[i] = Some((d, key));
        }
    };

    let mut i = 0;
    while i < n {
        let key = classes[i];
        if key.is_idle() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && classes[i] == key {
            i += 1;
        }
        let end = i - 1;
        for d in 1..=s {
            match start.checked_sub(d) {
                Some(j) if classes[j].is_idle() => consider(j, d, key, true),
                _ => break,
            }
        }
        for d in 1..=s {
            match end.checked_add(d) {
                Some(j) if j < n && classes[j].is_idle() => consider(j, d, key, false),
                _ => break,
            }
        }
    }

    classes
        .iter()
        .zip(blend)
        .map(|(&c, b)| match b {
            Some((d, key)) => {
                let idle_w = d as f64 / (s + 1) as f64;
                let mut v = [0.0; NUM_CLASSES];
                v[0] = idle_w;
                v[key.code()] = 1.0 - idle_w;
                LabelVector(v)
            }
            None => one_hot(c),
        })
        .collect()
}

/// Start offsets of all full windows over a sequence of length `n`.
pub fn window_starts(n: usize, size: usize, step: usize) -> Vec<usize> {
    assert!(size >= 1 && step >= 1, "window size and step must be positive");
    if n < size {
        return Vec::new();
    }
    (0..=(n - size) / step).map(|i| i * step).collect()
}

/// A training window cut from one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub recording: String,
    pub start: usize,
    pub landmarks: Vec<FrameLandmarks>,
    pub labels: Vec<LabelVector>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }
}

/// Cuts aligned landmark/label sequences of one recording into windows.
pub fn sliding_windows(
    recording: &str,
    landmarks: &[FrameLandmarks],
    labels: &[LabelVector],
    size: usize,
    step: usize,
) -> Result<Vec<Window>> {
    if landmarks.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "sliding_windows",
            expected: alloc::vec![landmarks.len()],
            actual: alloc::vec![labels.len()],
        });
    }
    Ok(window_starts(landmarks.len(), size, step)
        .into_iter()
        .map(|start| Window {
            recording: String::from(recording),
            start,
            landmarks: landmarks[start..start + size].to_vec(),
            labels: labels[start..start + size].to_vec(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn c(ch: char) -> KeyClass {
        KeyClass::from_char(ch).unwrap()
    }

    #[test]
    fn taxonomy() {
        assert_eq!(KeyClass::IDLE.code(), 0);
        assert_eq!(c('a').code(), 1);
        assert_eq!(c('z').code(), 26);
        assert_eq!(c(' '), KeyClass::SPACE);
        assert_eq!(KeyClass::from_token("SPACE"), Some(KeyClass::SPACE));
        assert_eq!(KeyClass::from_token("q"), Some(c('q')));
        assert_eq!(KeyClass::from_token("Q"), None);
        assert_eq!(alloc::format!("{}", c('x')), "X");
        for k in KeyClass::all().skip(1) {
            assert_eq!(KeyClass::from_char(k.to_char().unwrap()), Some(k));
        }
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(KeyClass::IDLE).0[0], 1.0);
        assert_eq!(one_hot(c('a')).0[1], 1.0);
        assert_eq!(one_hot(KeyClass::SPACE).0[27], 1.0);
        assert_eq!(one_hot(c('a')).sum(), 1.0);
    }

    #[test]
    fn equal_counts_give_unit_weights() {
        let stats = DatasetStats { counts: [10; NUM_CLASSES] };
        assert!(class_weights(&stats).unwrap().iter().all(|&w| w == 1.0));
        let mut stats = stats;
        stats.counts[5] = 0;
        assert_eq!(class_weights(&stats), Err(Error::ZeroClassCount(5)));
        assert_eq!(class_weights_partial(&stats)[5], 0.0);
    }

    #[test]
    fn align_examples() {
        assert_eq!(
            align_ground_truth(&[], &[0, 33, 66]).unwrap(),
            vec![KeyClass::IDLE; 3]
        );
        let log = [
            KeyEdge { timestamp_ms: 100, key: c('a'), edge: Some(Edge::Down) },
            KeyEdge { timestamp_ms: 180, key: c('a'), edge: Some(Edge::Up) },
        ];
        assert_eq!(
            align_ground_truth(&log, &[90, 120, 150, 200]).unwrap(),
            vec![KeyClass::IDLE, c('a'), c('a'), KeyClass::IDLE]
        );
        let no_up = [KeyEdge { timestamp_ms: 100, key: c('a'), edge: None }];
        assert_eq!(align_ground_truth(&no_up, &[150, 201]).unwrap(), vec![c('a'), KeyClass::IDLE]);
        let down_only = [KeyEdge { timestamp_ms: 100, key: c('a'), edge: Some(Edge::Down) }];
        assert_eq!(align_ground_truth(&down_only, &[150]).unwrap(), vec![c('a')]);
    }

    #[test]
    fn rollover_takes_latest_press() {
        let log = [
            KeyEdge { timestamp_ms: 100, key: c('a'), edge: Some(Edge::Down) },
            KeyEdge { timestamp_ms: 150, key: c('s'), edge: Some(Edge::Down) },
            KeyEdge { timestamp_ms: 200, key: c('a'), edge: Some(Edge::Up) },
            KeyEdge { timestamp_ms: 250, key: c('s'), edge: Some(Edge::Up) },
        ];
        assert_eq!(
            align_ground_truth(&log, &[120, 160, 210, 260]).unwrap(),
            vec![c('a'), c('s'), c('s'), KeyClass::IDLE]
        );
    }

    #[test]
    fn unsorted_is_rejected() {
        let log = [
            KeyEdge { timestamp_ms: 200, key: c('a'), edge: None },
            KeyEdge { timestamp_ms: 100, key: c('b'), edge: None },
        ];
        assert_eq!(align_ground_truth(&log, &[0]), Err(Error::UnsortedInput));
        assert_eq!(align_ground_truth(&[], &[5, 1]), Err(Error::UnsortedInput));
    }

    #[test]
    fn smoothing_ramp() {
        let mut classes = vec![KeyClass::IDLE; 5];
        classes.extend([c('a'); 3]);
        classes.extend([KeyClass::IDLE; 5]);
        let out = smooth_classes(&classes, 3);
        let expect = |i: usize, key_w: f64| {
            assert!((out[i].0[1] - key_w).abs() < 1e-15, "frame {i}: {:?}", out[i]);
            assert!((out[i].0[0] - (1.0 - key_w)).abs() < 1e-15);
        };
        expect(4, 0.75);
        expect(3, 0.5);
        expect(2, 0.25);
        expect(1, 0.0);
        expect(8, 0.75);
        expect(9, 0.5);
        expect(10, 0.25);
        for i in 5..8 {
            assert_eq!(out[i], one_hot(c('a')));
        }
    }

    #[test]
    fn smoothing_truncates_at_sequence_start() {
        let classes = [c('a'), c('a'), KeyClass::IDLE, KeyClass::IDLE];
        let out = smooth_classes(&classes, 3);
        assert_eq!(out[0], one_hot(c('a')));
        assert!((out[2].0[1] - 0.75).abs() < 1e-15);
        let idle = vec![one_hot(KeyClass::IDLE); 6];
        assert_eq!(smooth_labels(&idle, 3), idle);
    }

    #[test]
    fn smoothing_between_close_runs() {
        // a at 0..2, b at 5..7: frame 3 is nearer a, frame 4 nearer b
        let i = KeyClass::IDLE;
        let classes = [c('a'), c('a'), i, i, c('b'), c('b')];
        let out = smooth_classes(&classes, 3);
        assert!((out[2].0[1] - 0.75).abs() < 1e-15);
        assert!((out[3].0[2] - 0.75).abs() < 1e-15);
        for v in &out {
            assert!((v.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(128, 128, 64), vec![0]);
        assert_eq!(window_starts(256, 128, 64), vec![0, 64, 128]);
        assert!(window_starts(100, 128, 64).is_empty());
    }
}
