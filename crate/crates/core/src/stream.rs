//! Frame-at-a-time inference and keystroke event extraction.
//!
//! The first convolution looks one frame ahead, so [`StreamState::push_frame`]
//! emits the probabilities of the *previous* frame once the current one is
//! known. [`StreamState::finish`] flushes the last frame with zero look-ahead,
//! exactly like the zero padding of a batch pass. Per-frame outputs therefore
//! equal a batch forward over the same frames.

use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use crate::labels::{argmax, KeyClass, NUM_CLASSES};
use crate::landmarks::{normalize_sequence, FrameLandmarks, NormalizationState, DEFAULT_JITTER_WINDOW, DEFAULT_SCALE_EPSILON, FRAME_LEN};
use crate::nn::{forward_frames, FramePipeline, Mode, ModelConfig, ModelParams};
use crate::{Error, Result};

pub const DEFAULT_DEBOUNCE: usize = 2;

/// Monotonic time source used to measure per-frame latency.
pub trait Clock {
    fn now(&mut self) -> Duration;
}

/// A detected key press.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeystrokeEvent {
    pub key: KeyClass,
    /// Frame at which the press was confirmed.
    pub frame: u64,
    /// Highest class probability of that frame.
    pub confidence: f64,
}

/// Rising-edge detector: a run of `d` identical non-idle argmax frames emits
/// one event; the key must change (to idle or another key) before it can be
/// emitted again.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Debouncer {
    debounce: usize,
    current: Option<KeyClass>,
    run: usize,
}

impl Debouncer {
    pub fn new(debounce: usize) -> Self {
        assert!(debounce >= 1, "debounce must be at least one frame");
        Self {
            debounce,
            current: None,
            run: 0,
        }
    }

    pub fn debounce(&self) -> usize {
        self.debounce
    }

    /// Feeds one argmax class; returns it when an event fires on this frame.
    pub fn push(&mut self, class: KeyClass) -> Option<KeyClass> {
        if self.current == Some(class) {
            self.run = self.run.saturating_add(1);
        } else {
            self.current = Some(class);
            self.run = 1;
        }
        (!class.is_idle() && self.run == self.debounce).then_some(class)
    }

    pub fn reset(&mut self) {
        self.current = None;
        self.run = 0;
    }
}

/// Events from a sequence of argmax classes; `frame` is the sequence index.
pub fn extract_events(argmax: &[KeyClass], debounce: usize) -> Vec<(u64, KeyClass)> {
    let mut d = Debouncer::new(debounce);
    argmax
        .iter()
        .enumerate()
        .filter_map(|(i, &c)| d.push(c).map(|k| (i as u64, k)))
        .collect()
}

/// Events from per-frame probability rows, with confidences.
pub fn extract_events_from_probs(probs: &[[f64; NUM_CLASSES]], debounce: usize) -> Vec<KeystrokeEvent> {
    let mut d = Debouncer::new(debounce);
    probs
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let class = KeyClass::new(argmax(p)).expect("argmax is a class index");
            d.push(class).map(|key| KeystrokeEvent {
                key,
                frame: i as u64,
                confidence: p[key.code()],
            })
        })
        .collect()
}

/// The typed text an event list stands for.
pub fn events_to_text(events: &[KeystrokeEvent]) -> String {
    events.iter().filter_map(|e| e.key.to_char()).collect()
}

/// Latency summary in microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub frames: usize,
    pub mean_us: f64,
    /// Nearest-rank 95th percentile.
    pub p95_us: f64,
    pub max_us: f64,
    /// `1e6 / mean_us`.
    pub fps: f64,
}

pub fn latency_stats(samples: &[Duration]) -> Result<LatencyStats> {
    if samples.is_empty() {
        return Err(Error::NoFramesProcessed);
    }
    let mut us: Vec<f64> = samples.iter().map(|d| d.as_nanos() as f64 / 1000.0).collect();
    us.sort_by(f64::total_cmp);
    let n = us.len();
    let mean = us.iter().sum::<f64>() / n as f64;
    let rank = (95 * n).div_ceil(100);
    Ok(LatencyStats {
        frames: n,
        mean_us: mean,
        p95_us: us[rank - 1],
        max_us: us[n - 1],
        fps: 1e6 / mean,
    })
}

/// Model output for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameOutput {
    pub frame_index: u64,
    pub timestamp_ms: u64,
    pub probs: [f64; NUM_CLASSES],
    pub event: Option<KeystrokeEvent>,
}

/// Result of one [`StreamState::push_frame`] call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Output for the previous frame, if there was one.
    pub output: Option<FrameOutput>,
    pub latency: Duration,
}

#[derive(Debug, Clone)]
struct Pending {
    frame_index: u64,
    timestamp_ms: u64,
    hands: bool,
    flat: [f64; FRAME_LEN],
}

/// Per-stream inference state. Parameters are borrowed and can be shared by
/// any number of streams.
#[derive(Debug, Clone)]
pub struct StreamState<'a> {
    params: &'a ModelParams,
    config: ModelConfig,
    normalizer: NormalizationState,
    pipeline: FramePipeline,
    debouncer: Debouncer,
    previous: Option<[f64; FRAME_LEN]>,
    pending: Option<Pending>,
    frames_seen: u64,
    latencies: Vec<Duration>,
}

impl<'a> StreamState<'a> {
    pub fn new(params: &'a ModelParams, config: &ModelConfig, debounce: usize) -> Result<Self> {
        config.validate()?;
        params.check_shapes(config)?;
        Ok(Self {
            params,
            config: *config,
            normalizer: NormalizationState::new(DEFAULT_JITTER_WINDOW, DEFAULT_SCALE_EPSILON),
            pipeline: FramePipeline::new(params, config),
            debouncer: Debouncer::new(debounce),
            previous: None,
            pending: None,
            frames_seen: 0,
            latencies: Vec::new(),
        })
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Recurrent states of the two GRU layers.
    pub fn hidden_states(&self) -> (&[f64], &[f64]) {
        self.pipeline.hidden_states()
    }

    pub fn latencies(&self) -> &[Duration] {
        &self.latencies
    }

    pub fn latency_report(&self) -> Result<LatencyStats> {
        latency_stats(&self.latencies)
    }

    /// Normalizes `frame`, classifies the frame before it and updates the
    /// debouncer. The measured latency covers the whole call.
    pub fn push_frame(&mut self, frame: &FrameLandmarks, clock: &mut impl Clock) -> StepOutput {
        let start = clock.now();
        let normalized = self.normalizer.process(frame);
        let incoming = Pending {
            frame_index: frame.frame_index,
            timestamp_ms: frame.timestamp_ms,
            hands: normalized.any_present(),
            flat: normalized.to_flat(),
        };
        let output = self.advance(Some(incoming));
        self.frames_seen += 1;
        let latency = clock.now().saturating_sub(start);
        self.latencies.push(latency);
        StepOutput { output, latency }
    }

    /// Emits the last buffered frame and resets the stream state (latency
    /// samples are kept).
    pub fn finish(&mut self) -> Option<FrameOutput> {
        let out = self.advance(None);
        self.normalizer = NormalizationState::new(self.normalizer.window(), self.normalizer.epsilon());
        self.pipeline.reset();
        self.debouncer.reset();
        self.previous = None;
        out
    }

    fn advance(&mut self, incoming: Option<Pending>) -> Option<FrameOutput> {
        let current = self.pending.take();
        let out = current.as_ref().map(|cur| {
            let probs = self.pipeline.step(
                self.params,
                &self.config,
                [
                    self.previous.as_ref().map(|p| &p[..]),
                    Some(&cur.flat[..]),
                    incoming.as_ref().map(|n| &n.flat[..]),
                ],
            );
            // the model still runs so the recurrent state stays in step
            let probs = if cur.hands {
                probs
            } else {
                let mut idle = [0.0; NUM_CLASSES];
                idle[KeyClass::IDLE.code()] = 1.0;
                idle
            };
            let class = KeyClass::new(argmax(&probs)).expect("argmax is a class index");
            let event = self.debouncer.push(class).map(|key| KeystrokeEvent {
                key,
                frame: cur.frame_index,
                confidence: probs[key.code()],
            });
            FrameOutput {
                frame_index: cur.frame_index,
                timestamp_ms: cur.timestamp_ms,
                probs,
                event,
            }
        });
        if let Some(cur) = current {
            self.previous = Some(cur.flat);
        }
        self.pending = incoming;
        out
    }
}

/// Batch counterpart of a [`StreamState`] run over a whole recording: the same
/// normalization and the same idle output for frames without hands, computed
/// in one eval-mode forward pass.
pub fn predict_sequence(
    params: &ModelParams,
    config: &ModelConfig,
    frames: &[FrameLandmarks],
) -> Result<Vec<[f64; NUM_CLASSES]>> {
    config.validate()?;
    params.check_shapes(config)?;
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let normalized = normalize_sequence(frames, DEFAULT_JITTER_WINDOW);
    let flat: Vec<f64> = normalized.iter().flat_map(|f| f.to_flat()).collect();
    let (probs, _) = forward_frames(params, config, &flat, 1, frames.len(), Mode::Eval)?;
    Ok(probs
        .chunks_exact(NUM_CLASSES)
        .zip(&normalized)
        .map(|(row, f)| {
            let mut out = [0.0; NUM_CLASSES];
            if f.any_present() {
                out.copy_from_slice(row);
            } else {
                out[KeyClass::IDLE.code()] = 1.0;
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct Scripted {
        times: Vec<Duration>,
        next: usize,
    }

    impl Clock for Scripted {
        fn now(&mut self) -> Duration {
            let t = self.times[self.next];
            self.next += 1;
            t
        }
    }

    fn k(c: char) -> KeyClass {
        KeyClass::from_char(c).unwrap()
    }

    #[test]
    fn debounce_examples() {
        let i = KeyClass::IDLE;
        let seq = [i, i, k('a'), k('a'), k('a'), i];
        assert_eq!(extract_events(&seq, 2), vec![(3, k('a'))]);
        assert!(extract_events(&[i; 10], 2).is_empty());
        assert!(extract_events(&[k('a')], 2).is_empty());
        let seq = [k('a'), k('a'), k('b'), k('a'), k('a')];
        assert_eq!(extract_events(&seq, 2), vec![(1, k('a')), (4, k('a'))]);
        assert_eq!(extract_events(&seq, 1).len(), 3);
    }

    #[test]
    fn latency_examples() {
        let constant = vec![Duration::from_micros(1000); 7];
        let s = latency_stats(&constant).unwrap();
        assert_eq!((s.mean_us, s.p95_us, s.max_us, s.fps), (1000.0, 1000.0, 1000.0, 1000.0));
        assert_eq!(latency_stats(&[]), Err(Error::NoFramesProcessed));
        let ramp: Vec<Duration> = (1..=100).rev().map(Duration::from_millis).collect();
        let s = latency_stats(&ramp).unwrap();
        assert_eq!(s.p95_us, 95_000.0);
        assert_eq!(s.max_us, 100_000.0);
    }

    #[test]
    fn zero_frames_never_emit() {
        let cfg = ModelConfig {
            conv1_channels: 2,
            conv2_channels: 3,
            gru_hidden: 4,
            fc_hidden: 5,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 1);
        let mut state = StreamState::new(&params, &cfg, 2).unwrap();
        let mut times = Vec::new();
        for i in 0..20u64 {
            times.push(Duration::from_micros(i * 5000));
            times.push(Duration::from_micros(i * 5000 + 1000));
        }
        let mut clock = Scripted { times, next: 0 };
        let mut outputs = Vec::new();
        for i in 0..20 {
            let step = state.push_frame(&FrameLandmarks::empty(i, i * 33), &mut clock);
            assert_eq!(step.latency, Duration::from_micros(1000));
            outputs.extend(step.output);
        }
        outputs.extend(state.finish());
        assert_eq!(outputs.len(), 20);
        for o in &outputs {
            assert!(o.event.is_none());
            assert_eq!(o.probs[0], 1.0);
        }
        let report = state.latency_report().unwrap();
        assert_eq!(report.fps, 1000.0);
    }

    #[test]
    fn batch_prediction_matches_the_stream() {
        use crate::synth::{generate_session, HandKinematicModel, KeyboardLayout, TypingScript};
        let cfg = ModelConfig {
            conv1_channels: 3,
            conv2_channels: 4,
            gru_hidden: 5,
            fc_hidden: 6,
            ..ModelConfig::default()
        };
        let params = ModelParams::init(&cfg, 8);
        let session = generate_session(
            &TypingScript::new("fox", 40.0, 2),
            &HandKinematicModel::default(),
            &KeyboardLayout::qwerty(),
        )
        .unwrap();
        let mut frames = session.frames;
        frames[5] = FrameLandmarks::empty(5, frames[5].timestamp_ms);
        frames[6].left = None;
        let batch = predict_sequence(&params, &cfg, &frames).unwrap();
        let mut clock = Scripted {
            times: vec![Duration::ZERO; 2 * frames.len()],
            next: 0,
        };
        let mut state = StreamState::new(&params, &cfg, 2).unwrap();
        let mut streamed = Vec::new();
        for f in &frames {
            streamed.extend(state.push_frame(f, &mut clock).output.map(|o| o.probs));
        }
        streamed.extend(state.finish().map(|o| o.probs));
        assert_eq!(batch, streamed);
        assert_eq!(batch[5][0], 1.0);
        assert!(predict_sequence(&params, &cfg, &[]).unwrap().is_empty());
    }
}
