//! Byte-level reading and writing of standard MIDI file chunks.

use super::MidiError;

pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], pos: usize) -> Self {
        Self { bytes, pos }
    }

    pub(crate) fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.bytes.len() - self.pos < n {
            return Err(MidiError::parse(self.pos, format!("expected {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn peek(&self) -> Result<u8, MidiError> {
        self.bytes
            .get(self.pos)
            .copied()
            .ok_or_else(|| MidiError::parse(self.pos, "unexpected end of data"))
    }

    pub(crate) fn u16(&mut self) -> Result<u16, MidiError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Variable-length quantity, at most four bytes.
    pub(crate) fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | (b & 0x7f) as u32;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(MidiError::parse(start, "variable-length quantity longer than 4 bytes"))
    }
}

pub fn write_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 5];
    let mut i = buf.len() - 1;
    buf[i] = (v & 0x7f) as u8;
    v >>= 7;
    while v > 0 {
        i -= 1;
        buf[i] = (v & 0x7f) as u8 | 0x80;
        v >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Builds one track chunk body from events given in absolute ticks, which
/// must be non-decreasing.
#[derive(Default)]
pub struct TrackWriter {
    body: Vec<u8>,
    tick: u32,
}

impl TrackWriter {
    fn delta(&mut self, tick: u32) {
        assert!(tick >= self.tick, "events must be in tick order");
        write_vlq(&mut self.body, tick - self.tick);
        self.tick = tick;
    }

    pub fn last_tick(&self) -> u32 {
        self.tick
    }

    pub fn meta(&mut self, tick: u32, kind: u8, data: &[u8]) {
        self.delta(tick);
        self.body.extend_from_slice(&[0xff, kind]);
        write_vlq(&mut self.body, data.len() as u32);
        self.body.extend_from_slice(data);
    }

    /// A two-data-byte channel message, always with an explicit status byte.
    pub fn channel(&mut self, tick: u32, status: u8, d1: u8, d2: u8) {
        self.delta(tick);
        self.body.extend_from_slice(&[status, d1, d2]);
    }

    pub fn finish(self) -> Vec<u8> {
        self.body
    }
}

pub fn file_bytes(format: u16, division: u16, tracks: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&format.to_be_bytes());
    out.extend_from_slice(&(tracks.len() as u16).to_be_bytes());
    out.extend_from_slice(&division.to_be_bytes());
    for t in tracks {
        out.extend_from_slice(b"MTrk");
        out.extend_from_slice(&(t.len() as u32).to_be_bytes());
        out.extend_from_slice(t);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vlq_round_trip() {
        for (v, bytes) in [
            (0u32, vec![0x00]),
            (0x7f, vec![0x7f]),
            (0x80, vec![0x81, 0x00]),
            (0x3fff, vec![0xff, 0x7f]),
            (0x0fff_ffff, vec![0xff, 0xff, 0xff, 0x7f]),
        ] {
            let mut out = Vec::new();
            write_vlq(&mut out, v);
            assert_eq!(out, bytes);
            assert_eq!(Cursor::new(&out, 0).vlq().unwrap(), v);
        }
        assert!(Cursor::new(&[0x80, 0x80, 0x80, 0x80, 0x00], 0).vlq().is_err());
    }
}
