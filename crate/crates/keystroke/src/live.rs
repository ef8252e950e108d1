//! Streaming front end: a producer thread reads frames from a CSV file or a
//! TCP socket into a bounded queue; the calling thread runs inference.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread;
use std::time::{Duration, Instant};

use keystroke_core::nn::{ModelConfig, ModelParams};
use keystroke_core::stream::{latency_stats, Clock, FrameOutput, KeystrokeEvent, LatencyStats, StreamState};
use keystroke_core::{FrameLandmarks, KeyClass};
use serde::Serialize;

use crate::csvio::LandmarkReader;
use crate::error::{Error, Result};
use crate::wire::read_frame;

/// Wall clock measured from construction.
#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now(&mut self) -> Duration {
        self.0.elapsed()
    }
}

pub enum FrameSource {
    Csv(PathBuf),
    /// Accepts one connection and reads binary frame records from it.
    Socket(TcpListener),
}

/// Holds the producer to at most `fps` frames per second.
struct Pacer {
    start: Instant,
    period: Option<Duration>,
    sent: u32,
}

impl Pacer {
    fn new(fps_cap: Option<f64>) -> Self {
        Self {
            start: Instant::now(),
            period: fps_cap.map(|f| Duration::from_secs_f64(1.0 / f)),
            sent: 0,
        }
    }

    fn wait(&mut self) {
        if let Some(p) = self.period {
            let due = self.start + p * self.sent;
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        self.sent += 1;
    }
}

enum Item {
    Frame(FrameLandmarks),
    Failed(Error),
}

fn spawn_producer(source: FrameSource, capacity: usize, fps_cap: Option<f64>) -> Result<Receiver<Item>> {
    let (tx, rx) = sync_channel(capacity.max(1));
    match source {
        FrameSource::Csv(path) => {
            let file = File::open(&path).map_err(|e| Error::SourceUnavailable(format!("{}: {e}", path.display())))?;
            let reader = LandmarkReader::new(BufReader::new(file))?;
            thread::spawn(move || {
                let mut pacer = Pacer::new(fps_cap);
                for item in reader {
                    pacer.wait();
                    let item = match item {
                        Ok(f) => Item::Frame(f),
                        Err(e) => Item::Failed(e),
                    };
                    let failed = matches!(item, Item::Failed(_));
                    if tx.send(item).is_err() || failed {
                        break;
                    }
                }
            });
        }
        FrameSource::Socket(listener) => {
            thread::spawn(move || {
                let (stream, peer) = match listener.accept() {
                    Ok(c) => c,
                    Err(e) => {
                        let _ = tx.send(Item::Failed(Error::SourceUnavailable(e.to_string())));
                        return;
                    }
                };
                log::info!("frame source connected from {peer}");
                let mut input = BufReader::new(stream);
                let mut pacer = Pacer::new(fps_cap);
                loop {
                    match read_frame(&mut input) {
                        Ok(Some(f)) => {
                            pacer.wait();
                            if tx.send(Item::Frame(f)).is_err() {
                                break;
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            // a peer that hangs up mid-record ends the stream
                            log::warn!("frame source closed: {e}");
                            break;
                        }
                    }
                }
            });
        }
    }
    Ok(rx)
}

#[derive(Debug, Serialize)]
struct EventLine<'a> {
    frame: u64,
    key: &'a str,
    confidence: f64,
}

pub struct StreamOptions {
    pub debounce: usize,
    pub queue: usize,
    pub fps_cap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamReport {
    pub frames: usize,
    pub events: Vec<KeystrokeEvent>,
    pub latency: Option<LatencyStats>,
}

fn emit(
    out: &FrameOutput,
    events_out: &mut dyn Write,
    probs_out: &mut Option<csv::Writer<BufWriter<File>>>,
    events: &mut Vec<KeystrokeEvent>,
) -> Result<()> {
    if let Some(e) = out.event {
        let token = e.key.token();
        let line = EventLine {
            frame: e.frame,
            key: &token,
            confidence: e.confidence,
        };
        serde_json::to_writer(&mut *events_out, &line)?;
        writeln!(events_out).map_err(|e| Error::io("<stdout>", e))?;
        events.push(e);
    }
    if let Some(w) = probs_out {
        let mut row = vec![out.frame_index.to_string(), out.timestamp_ms.to_string()];
        row.extend(out.probs.iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    Ok(())
}

/// Runs `params` over every frame of `source`, writing one JSON line per
/// keystroke event to `events_out`. A source error stops the stream after the
/// buffered frame is flushed and is then returned.
pub fn run_stream(
    params: &ModelParams,
    config: &ModelConfig,
    source: FrameSource,
    options: &StreamOptions,
    events_out: &mut dyn Write,
    probs_path: Option<&std::path::Path>,
) -> Result<StreamReport> {
    let mut state = StreamState::new(params, config, options.debounce)?;
    let mut probs_out = match probs_path {
        Some(p) => {
            let file = File::create(p).map_err(|e| Error::io(p, e))?;
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            let mut header = vec!["frame_index".to_string(), "timestamp_ms".to_string()];
            header.extend(KeyClass::all().map(|k| k.to_string()));
            w.write_record(&header)?;
            Some(w)
        }
        None => None,
    };
    let rx = spawn_producer(source, options.queue, options.fps_cap)?;
    let mut clock = StdClock::new();
    let mut events = Vec::new();
    let mut failure = None;
    for item in rx {
        match item {
            Item::Frame(frame) => {
                let step = state.push_frame(&frame, &mut clock);
                if let Some(out) = step.output {
                    emit(&out, events_out, &mut probs_out, &mut events)?;
                }
            }
            Item::Failed(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(out) = state.finish() {
        emit(&out, events_out, &mut probs_out, &mut events)?;
    }
    events_out.flush().map_err(|e| Error::io("<stdout>", e))?;
    if let Some(mut w) = probs_out {
        w.flush().map_err(|e| Error::io("<probs csv>", e))?;
    }
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(StreamReport {
        frames: state.latencies().len(),
        events,
        latency: latency_stats(state.latencies()).ok(),
    })
}

pub fn format_latency(stats: &LatencyStats) -> String {
    format!(
        "frames={} mean_us={:.1} p95_us={:.1} max_us={:.1} fps={:.1}",
        stats.frames, stats.mean_us, stats.p95_us, stats.max_us, stats.fps
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pacer_spaces_frames() {
        let mut p = Pacer::new(Some(200.0));
        let start = Instant::now();
        for _ in 0..5 {
            p.wait();
        }
        // frames go out at 0, 5, 10, 15 and 20 ms
        assert!(start.elapsed() >= Duration::from_millis(20));
        let mut free = Pacer::new(None);
        let start = Instant::now();
        for _ in 0..1000 {
            free.wait();
        }
        assert!(start.elapsed() < Duration::from_millis(20));
    }
}
