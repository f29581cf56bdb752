//! MIDI ingestion: parse standard MIDI files, drop percussion, quantize to
//! sixteenth-note steps, cut 64-step excerpts and crop them to a 36-pitch
//! window.

mod ingest;
mod prepare;
pub mod smf;

pub use ingest::{
    crop_pitch, parse_midi, quantize, segment, strip_percussion, AbsExcerpt, MidiFile,
    QuantizedNote, RawNote,
};
pub use prepare::{prepare, prepare_file, source_hash, PrepareReport, Rejected};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MidiError {
    #[error("malformed MIDI at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("rejected: {0}")]
    Rejected(String),
}

impl MidiError {
    pub(crate) fn parse(offset: usize, message: impl Into<String>) -> Self {
        MidiError::Parse {
            offset,
            message: message.into(),
        }
    }
}
