//! Binary frame records for socket input.
//!
//! Each record is a `u32` byte length (always [`RECORD_LEN`]) followed by
//! `frame_index: u32`, `timestamp_ms: u64`, `flags: u8` (bit 0 left hand
//! present, bit 1 right) and 126 `f32` coordinates. Little-endian throughout.

use std::io::{self, Read, Write};

use keystroke_core::landmarks::{FrameLandmarks, FRAME_LEN};

use crate::error::{Error, Result};

pub const RECORD_LEN: usize = 4 + 8 + 1 + 4 * FRAME_LEN;

const LEFT: u8 = 1;
const RIGHT: u8 = 2;

pub fn encode_frame(frame: &FrameLandmarks) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + RECORD_LEN);
    out.extend_from_slice(&(RECORD_LEN as u32).to_le_bytes());
    out.extend_from_slice(&(frame.frame_index as u32).to_le_bytes());
    out.extend_from_slice(&frame.timestamp_ms.to_le_bytes());
    let mut flags = 0;
    if frame.left_present() {
        flags |= LEFT;
    }
    if frame.right_present() {
        flags |= RIGHT;
    }
    out.push(flags);
    for v in frame.to_flat() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn write_frame<W: Write>(out: &mut W, frame: &FrameLandmarks) -> io::Result<()> {
    out.write_all(&encode_frame(frame))
}

/// Fills `buf`, returning how many bytes arrived before end of stream.
fn read_full<R: Read>(input: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match input.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn truncated(got: usize, want: usize) -> Error {
    Error::format("frame record", format!("stream ended after {got} of {want} bytes"))
}

/// Reads one record. `Ok(None)` at a clean end of stream; a record cut short
/// is an error.
pub fn read_frame<R: Read>(input: &mut R) -> Result<Option<FrameLandmarks>> {
    let mut len = [0u8; 4];
    match read_full(input, &mut len).map_err(|e| Error::io("<frame stream>", e))? {
        0 => return Ok(None),
        4 => {}
        got => return Err(truncated(got, 4)),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len != RECORD_LEN {
        return Err(Error::format("frame record", format!("length {len}, expected {RECORD_LEN}")));
    }
    let mut body = [0u8; RECORD_LEN];
    let got = read_full(input, &mut body).map_err(|e| Error::io("<frame stream>", e))?;
    if got != RECORD_LEN {
        return Err(truncated(got, RECORD_LEN));
    }
    let index = u32::from_le_bytes(body[0..4].try_into().expect("4 bytes"));
    let ts = u64::from_le_bytes(body[4..12].try_into().expect("8 bytes"));
    let flags = body[12];
    if flags & !(LEFT | RIGHT) != 0 {
        return Err(Error::format("frame record", format!("unknown flag bits {flags:#04x}")));
    }
    let mut flat = [0.0; FRAME_LEN];
    for (v, b) in flat.iter_mut().zip(body[13..].chunks_exact(4)) {
        *v = f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes")));
    }
    Ok(Some(FrameLandmarks::from_flat(
        u64::from(index),
        ts,
        flags & LEFT != 0,
        flags & RIGHT != 0,
        &flat,
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use keystroke_core::landmarks::HandLandmarks;

    fn frame() -> FrameLandmarks {
        let mut points = [[0.0; 3]; 21];
        for (i, p) in points.iter_mut().enumerate() {
            *p = [0.25 + i as f64 / 64.0, 0.5, -0.125];
        }
        FrameLandmarks::new(7, 233, None, Some(HandLandmarks::new(points)))
    }

    #[test]
    fn record_layout() {
        let bytes = encode_frame(&frame());
        assert_eq!(RECORD_LEN, 517);
        assert_eq!(bytes.len(), 521);
        assert_eq!(&bytes[..4], &517u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &7u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &233u64.to_le_bytes());
        assert_eq!(bytes[16], 0b10);
    }

    #[test]
    fn round_trip_and_end_of_stream() {
        let mut buf = Vec::new();
        write_frame(&mut buf, &frame()).unwrap();
        write_frame(&mut buf, &FrameLandmarks::empty(8, 266)).unwrap();
        let mut r = &buf[..];
        // every coordinate above is exact in f32
        assert_eq!(read_frame(&mut r).unwrap(), Some(frame()));
        assert_eq!(read_frame(&mut r).unwrap(), Some(FrameLandmarks::empty(8, 266)));
        assert_eq!(read_frame(&mut r).unwrap(), None);

        let mut cut = &buf[..100];
        assert!(read_frame(&mut cut).is_err());
        let mut bad = buf.clone();
        bad[0] = 9;
        assert!(read_frame(&mut &bad[..]).is_err());
    }
}
