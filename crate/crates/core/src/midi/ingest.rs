use std::collections::{HashMap, VecDeque};

use rand::Rng;

use super::smf::Cursor;
use super::MidiError;
use crate::score::{Excerpt, Note, DEFAULT_SLOTS, MAX_DURATION, PITCH_VALUES, STEPS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RawNote {
    pub onset_tick: u64,
    pub channel: u8,
    pub pitch: u8,
    pub duration_tick: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MidiFile {
    pub ticks_per_quarter: u16,
    /// Sorted by onset, channel, pitch, duration.
    pub notes: Vec<RawNote>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QuantizedNote {
    pub onset_step: u64,
    pub pitch: u8,
    pub duration_steps: u8,
}

/// One 64-step window; onsets are window-relative.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbsExcerpt {
    pub segment: usize,
    pub notes: Vec<QuantizedNote>,
}

/// Parses a format 0 or 1 file and pairs note-ons with note-offs, first in
/// first out per track, channel and pitch. Notes still sounding at the end
/// of a track end there.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiFile, MidiError> {
    let mut c = Cursor::new(bytes, 0);
    if c.take(4)? != b"MThd" {
        return Err(MidiError::parse(0, "missing MThd header"));
    }
    let header_len = c.u32()? as usize;
    if header_len < 6 {
        return Err(MidiError::parse(4, format!("header length {header_len} < 6")));
    }
    let body = c.pos;
    let format = c.u16()?;
    if format > 1 {
        return Err(MidiError::parse(body, format!("unsupported format {format}")));
    }
    let _declared_tracks = c.u16()?;
    let division = c.u16()?;
    if division & 0x8000 != 0 {
        return Err(MidiError::parse(body + 4, "SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(MidiError::parse(body + 4, "zero ticks per quarter note"));
    }
    c.pos = body + header_len;

    let mut notes = Vec::new();
    let mut time_signatures = Vec::new();
    while !c.at_end() {
        let start = c.pos;
        let id = c.take(4)?;
        let len = c.u32()? as usize;
        let chunk_start = c.pos;
        let chunk = c.take(len)?;
        if id == b"MTrk" {
            parse_track(bytes, chunk_start, chunk.len(), &mut notes, &mut time_signatures)?;
        } else if !id.iter().all(u8::is_ascii_graphic) {
            return Err(MidiError::parse(start, "malformed chunk id"));
        }
    }

    match time_signatures.as_slice() {
        [] => {}
        [(4, 2)] => {}
        [_] => return Err(MidiError::Rejected("not 4/4".into())),
        _ => return Err(MidiError::Rejected("multiple time signatures".into())),
    }
    notes.sort();
    Ok(MidiFile {
        ticks_per_quarter: division,
        notes,
    })
}

fn parse_track(
    bytes: &[u8],
    start: usize,
    len: usize,
    notes: &mut Vec<RawNote>,
    time_signatures: &mut Vec<(u8, u8)>,
) -> Result<(), MidiError> {
    let bytes = &bytes[..start + len];
    let mut c = Cursor::new(bytes, start);
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut open: HashMap<(u8, u8), VecDeque<u64>> = HashMap::new();

    while !c.at_end() {
        tick += c.vlq()? as u64;
        let at = c.pos;
        let first = c.peek()?;
        let status = if first >= 0x80 {
            c.pos += 1;
            first
        } else {
            running.ok_or_else(|| MidiError::parse(at, "data byte without running status"))?
        };
        match status {
            0xff => {
                running = None;
                let kind = c.u8()?;
                let n = c.vlq()? as usize;
                let data = c.take(n)?;
                match kind {
                    0x58 => {
                        if data.len() < 2 {
                            return Err(MidiError::parse(at, "short time signature"));
                        }
                        time_signatures.push((data[0], data[1]));
                    }
                    0x2f => break,
                    _ => {}
                }
            }
            0xf0 | 0xf7 => {
                running = None;
                let n = c.vlq()? as usize;
                c.take(n)?;
            }
            0xf1..=0xfe => {
                return Err(MidiError::parse(at, format!("unexpected system message {status:#04x}")));
            }
            _ => {
                running = Some(status);
                let kind = status & 0xf0;
                let channel = status & 0x0f;
                let d1 = c.u8()?;
                let d2 = if kind == 0xc0 || kind == 0xd0 { 0 } else { c.u8()? };
                if d1 > 0x7f || d2 > 0x7f {
                    return Err(MidiError::parse(at, "data byte out of range"));
                }
                match (kind, d2) {
                    (0x90, v) if v > 0 => open.entry((channel, d1)).or_default().push_back(tick),
                    (0x80, _) | (0x90, _) => {
                        if let Some(on) = open.get_mut(&(channel, d1)).and_then(VecDeque::pop_front) {
                            notes.push(raw(on, tick, channel, d1));
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    let mut dangling: Vec<_> = open.into_iter().collect();
    dangling.sort();
    for ((channel, pitch), onsets) in dangling {
        for on in onsets {
            notes.push(raw(on, tick, channel, pitch));
        }
    }
    Ok(())
}

fn raw(on: u64, off: u64, channel: u8, pitch: u8) -> RawNote {
    RawNote {
        onset_tick: on,
        channel,
        pitch,
        duration_tick: (off - on).max(1),
    }
}

/// Drops MIDI channel 10 (zero-based 9).
pub fn strip_percussion(notes: &[RawNote]) -> Vec<RawNote> {
    notes.iter().copied().filter(|n| n.channel != 9).collect()
}

/// `round(ticks / (tpq / 4))` with halves rounded up.
fn to_steps(ticks: u64, tpq: u16) -> u64 {
    let tpq = tpq as u64;
    (8 * ticks + tpq) / (2 * tpq)
}

pub fn quantize(notes: &[RawNote], ticks_per_quarter: u16) -> Vec<QuantizedNote> {
    assert!(ticks_per_quarter > 0, "ticks per quarter must be positive");
    notes
        .iter()
        .map(|n| QuantizedNote {
            onset_step: to_steps(n.onset_tick, ticks_per_quarter),
            pitch: n.pitch,
            duration_steps: to_steps(n.duration_tick, ticks_per_quarter).clamp(1, MAX_DURATION as u64)
                as u8,
        })
        .collect()
}

/// Cuts 64-step windows starting at the first onset. Durations are cut at the
/// window end, duplicate (pitch, onset) pairs keep the longest duration, and
/// windows holding more than 64 notes are dropped.
pub fn segment(notes: &[QuantizedNote]) -> Vec<AbsExcerpt> {
    let Some(origin) = notes.iter().map(|n| n.onset_step).min() else {
        return Vec::new();
    };
    let steps = STEPS as u64;
    let mut windows: std::collections::BTreeMap<u64, HashMap<(u8, u64), u8>> = Default::default();
    for n in notes {
        let offset = n.onset_step - origin;
        let rel = offset % steps;
        let duration = (n.duration_steps as u64).min(steps - rel) as u8;
        let slot = windows.entry(offset / steps).or_default().entry((n.pitch, rel)).or_insert(0);
        *slot = (*slot).max(duration);
    }
    windows
        .into_iter()
        .filter(|(_, w)| w.len() <= DEFAULT_SLOTS)
        .map(|(index, w)| {
            let mut notes: Vec<QuantizedNote> = w
                .into_iter()
                .map(|((pitch, onset_step), duration_steps)| QuantizedNote {
                    onset_step,
                    pitch,
                    duration_steps,
                })
                .collect();
            notes.sort();
            AbsExcerpt {
                segment: index as usize,
                notes,
            }
        })
        .collect()
}

/// Picks a 36-pitch window and rebases pitches into it. When the excerpt
/// already fits, the window is drawn among those that keep every note;
/// otherwise notes outside the drawn window are dropped. `None` if nothing is
/// left.
pub fn crop_pitch<R: Rng>(excerpt: &AbsExcerpt, rng: &mut R) -> Option<Excerpt> {
    let span = PITCH_VALUES as u8 - 1;
    let lo = excerpt.notes.iter().map(|n| n.pitch).min()?;
    let hi = excerpt.notes.iter().map(|n| n.pitch).max()?;
    let start = if hi - lo <= span {
        rng.random_range(hi.saturating_sub(span)..=lo.min(127 - span))
    } else {
        rng.random_range(lo..=hi - span)
    };
    let notes: Vec<Note> = excerpt
        .notes
        .iter()
        .filter(|n| n.pitch >= start && n.pitch <= start + span)
        .map(|n| Note::new(n.pitch - start, n.onset_step as u8, n.duration_steps).expect("segment keeps notes in range"))
        .collect();
    if notes.is_empty() {
        return None;
    }
    Some(Excerpt::from_notes(&notes, DEFAULT_SLOTS).expect("at most 64 notes"))
}
