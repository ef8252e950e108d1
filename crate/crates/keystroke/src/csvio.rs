//! CSV formats: landmark sequences, keylogs and per-frame label vectors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Writer};
use keystroke_core::labels::{Edge, KeyEdge, LabelVector};
use keystroke_core::landmarks::{FrameLandmarks, FRAME_LEN, POINTS_PER_HAND};
use keystroke_core::{KeyClass, NUM_CLASSES};

use crate::error::{Error, Result};

const LANDMARK_COLUMNS: usize = 4 + FRAME_LEN;

pub fn landmark_header() -> Vec<String> {
    let mut h = vec![
        "frame_index".to_string(),
        "timestamp_ms".to_string(),
        "left_present".to_string(),
        "right_present".to_string(),
    ];
    for side in ["l", "r"] {
        for p in 0..POINTS_PER_HAND {
            for axis in ["x", "y", "z"] {
                h.push(format!("{side}{p}_{axis}"));
            }
        }
    }
    h
}

/// Ten significant digits.
fn real(v: f64) -> String {
    format!("{v:.9e}")
}

pub fn write_landmarks<W: Write>(out: W, frames: &[FrameLandmarks]) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(landmark_header())?;
    for f in frames {
        let mut row = vec![
            f.frame_index.to_string(),
            f.timestamp_ms.to_string(),
            u8::from(f.left_present()).to_string(),
            u8::from(f.right_present()).to_string(),
        ];
        row.extend(f.to_flat().iter().map(|&v| real(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<landmark csv>", e))?;
    Ok(())
}

pub fn write_landmarks_file(path: &Path, frames: &[FrameLandmarks]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_landmarks(BufWriter::new(file), frames)
}

fn field<T: std::str::FromStr>(rec: &StringRecord, i: usize, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).ok_or_else(|| Error::format(what, format!("missing column {i}")))?;
    raw.trim().parse().map_err(|e| {
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        Error::format(what, format!("line {line}, column {i} ({raw:?}): {e}"))
    })
}

fn flag(rec: &StringRecord, i: usize) -> Result<bool> {
    match field::<u8>(rec, i, "landmark csv")? {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::format("landmark csv", format!("presence flag must be 0 or 1, got {other}"))),
    }
}

pub fn parse_landmark_record(rec: &StringRecord) -> Result<FrameLandmarks> {
    if rec.len() != LANDMARK_COLUMNS {
        return Err(Error::format(
            "landmark csv",
            format!("expected {LANDMARK_COLUMNS} columns, got {}", rec.len()),
        ));
    }
    let mut flat = [0.0; FRAME_LEN];
    for (i, v) in flat.iter_mut().enumerate() {
        *v = field(rec, 4 + i, "landmark csv")?;
    }
    Ok(FrameLandmarks::from_flat(
        field(rec, 0, "landmark csv")?,
        field(rec, 1, "landmark csv")?,
        flag(rec, 2)?,
        flag(rec, 3)?,
        &flat,
    ))
}

/// Streams frames out of a landmark CSV one record at a time.
pub struct LandmarkReader<R: Read> {
    inner: csv::Reader<R>,
    record: StringRecord,
}

impl<R: Read> LandmarkReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut inner = ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = inner.headers()?.clone();
        if header.len() != LANDMARK_COLUMNS || header.get(0) != Some("frame_index") {
            return Err(Error::format("landmark csv", "unexpected header"));
        }
        Ok(Self {
            inner,
            record: StringRecord::new(),
        })
    }
}

impl<R: Read> Iterator for LandmarkReader<R> {
    type Item = Result<FrameLandmarks>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.inner.read_record(&mut self.record) {
            Ok(true) => Some(parse_landmark_record(&self.record)),
            Ok(false) => None,
            Err(e) => Some(Err(e.into())),
        }
    }
}

pub fn read_landmarks<R: Read>(input: R) -> Result<Vec<FrameLandmarks>> {
    LandmarkReader::new(input)?.collect()
}

pub fn read_landmarks_file(path: &Path) -> Result<Vec<FrameLandmarks>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_landmarks(BufReader::new(file))
}

pub fn write_keylog<W: Write>(out: W, keylog: &[KeyEdge]) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(["timestamp_ms", "key", "edge"])?;
    for e in keylog {
        let edge = match e.edge {
            Some(Edge::Down) => "down",
            Some(Edge::Up) => "up",
            None => "",
        };
        w.write_record([e.timestamp_ms.to_string(), e.key.token(), edge.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<keylog csv>", e))?;
    Ok(())
}

pub fn write_keylog_file(path: &Path, keylog: &[KeyEdge]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_keylog(BufWriter::new(file), keylog)
}

/// Reads a keylog; the `edge` column may be missing or empty.
pub fn read_keylog<R: Read>(input: R) -> Result<Vec<KeyEdge>> {
    let mut r = ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let key_raw = rec.get(1).unwrap_or("").trim();
        let key = KeyClass::from_token(key_raw)
            .filter(|k| !k.is_idle())
            .ok_or_else(|| Error::format("keylog csv", format!("unknown key {key_raw:?}")))?;
        let edge = match rec.get(2).map(str::trim) {
            None | Some("") => None,
            Some("down") => Some(Edge::Down),
            Some("up") => Some(Edge::Up),
            Some(other) => return Err(Error::format("keylog csv", format!("unknown edge {other:?}"))),
        };
        out.push(KeyEdge {
            timestamp_ms: field(&rec, 0, "keylog csv")?,
            key,
            edge,
        });
    }
    Ok(out)
}

pub fn read_keylog_file(path: &Path) -> Result<Vec<KeyEdge>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_keylog(BufReader::new(file))
}

pub fn label_header() -> Vec<String> {
    KeyClass::all().map(|k| k.to_string()).collect()
}

pub fn write_labels<W: Write>(out: W, labels: &[LabelVector]) -> Result<()> {
    let mut w = Writer::from_writer(out);
    w.write_record(label_header())?;
    for l in labels {
        w.write_record(l.0.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<label csv>", e))?;
    Ok(())
}

pub fn write_labels_file(path: &Path, labels: &[LabelVector]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_labels(BufWriter::new(file), labels)
}

pub fn read_labels<R: Read>(input: R) -> Result<Vec<LabelVector>> {
    let mut r = ReaderBuilder::new().has_headers(true).from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != NUM_CLASSES {
            return Err(Error::format("label csv", format!("expected {NUM_CLASSES} columns")));
        }
        let mut v = [0.0; NUM_CLASSES];
        for (i, x) in v.iter_mut().enumerate() {
            *x = field(&rec, i, "label csv")?;
        }
        out.push(LabelVector(v));
    }
    Ok(out)
}
