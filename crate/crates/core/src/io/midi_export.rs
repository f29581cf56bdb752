//! Standard MIDI file export.

use crate::midi::smf;
use crate::score::Excerpt;

pub const EXPORT_TPQ: u16 = 480;
/// MIDI note number of pitch value 0.
pub const EXPORT_PITCH_BASE: u8 = 48;

const TICKS_PER_STEP: u32 = EXPORT_TPQ as u32 / 4;
const VELOCITY: u8 = 96;
/// Microseconds per quarter note at 120 BPM.
const TEMPO: u32 = 500_000;

/// Format-0 file: tempo, one 4/4 time signature, then the notes on channel 0.
/// At equal ticks note-offs come before note-ons.
pub fn excerpt_to_midi(excerpt: &Excerpt) -> Vec<u8> {
    // (tick, is_on, note number)
    let mut events: Vec<(u32, bool, u8)> = Vec::new();
    for n in excerpt.notes() {
        let key = EXPORT_PITCH_BASE + n.pitch;
        let on = n.onset as u32 * TICKS_PER_STEP;
        events.push((on, true, key));
        events.push((on + n.duration as u32 * TICKS_PER_STEP, false, key));
    }
    events.sort();

    let mut track = smf::TrackWriter::default();
    track.meta(0, 0x51, &TEMPO.to_be_bytes()[1..]);
    track.meta(0, 0x58, &[4, 2, 24, 8]);
    for (tick, on, key) in events {
        if on {
            track.channel(tick, 0x90, key, VELOCITY);
        } else {
            track.channel(tick, 0x80, key, 0);
        }
    }
    track.meta(track.last_tick(), 0x2f, &[]);
    smf::file_bytes(0, EXPORT_TPQ, &[track.finish()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Note;

    const HEADER: [u8; 14] = [
        b'M', b'T', b'h', b'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
    ];
    const META: [u8; 15] = [
        0x00, 0xff, 0x51, 0x03, 0x07, 0xa1, 0x20, // tempo
        0x00, 0xff, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08, // 4/4
    ];

    fn with_track(body: &[u8]) -> Vec<u8> {
        let mut v = HEADER.to_vec();
        v.extend_from_slice(b"MTrk");
        v.extend_from_slice(&(body.len() as u32).to_be_bytes());
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn empty_excerpt_has_only_meta_events() {
        let mut body = META.to_vec();
        body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        assert_eq!(excerpt_to_midi(&Excerpt::empty(64)), with_track(&body));
    }

    #[test]
    fn single_note_bytes() {
        let e = Excerpt::from_notes(&[Note::new(0, 0, 1).unwrap()], 64).unwrap();
        let mut body = META.to_vec();
        // note-on 48 at 0, note-off at 120 (single-byte delta 0x78)
        body.extend_from_slice(&[0x00, 0x90, 48, 96, 0x78, 0x80, 48, 0]);
        body.extend_from_slice(&[0x00, 0xff, 0x2f, 0x00]);
        assert_eq!(excerpt_to_midi(&e), with_track(&body));
    }
}
