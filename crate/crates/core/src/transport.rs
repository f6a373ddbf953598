//! Framed byte streams: sockets, pipes and capture files.

use std::io::{self, Read, Write};

use crate::wire::{split_frame, MAGIC, WIRE_VERSION};

/// Refuse stream frames with payloads beyond this, before allocating.
pub const MAX_STREAM_PAYLOAD: usize = 64 * 1024 * 1024;

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> io::Result<()> {
    split_frame(frame).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
    w.write_all(frame)
}

/// Reads one whole encoded frame. `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut head = [0u8; 6];
    match read_exact_or_eof(r, &mut head)? {
        0 => return Ok(None),
        6 => {}
        n => {
            return Err(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                format!("stream ended inside a frame header ({n} of 6 bytes)"),
            ))
        }
    }
    if head[..2] != MAGIC || head[2] != WIRE_VERSION {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad frame magic or version"));
    }
    let topic_len = u16::from_le_bytes([head[4], head[5]]) as usize;
    let mut frame = head.to_vec();
    frame.resize(6 + topic_len + 4, 0);
    r.read_exact(&mut frame[6..])?;
    let len_at = 6 + topic_len;
    let payload_len = u32::from_le_bytes(frame[len_at..len_at + 4].try_into().expect("4 bytes")) as usize;
    if payload_len > MAX_STREAM_PAYLOAD {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame payload of {payload_len} bytes exceeds stream limit"),
        ));
    }
    let start = frame.len();
    frame.resize(start + payload_len, 0);
    r.read_exact(&mut frame[start..])?;
    Ok(Some(frame))
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads every frame from a capture.
pub fn read_all_frames<R: Read>(r: &mut R) -> io::Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    while let Some(f) = read_frame(r)? {
        out.push(f);
    }
    Ok(out)
}
