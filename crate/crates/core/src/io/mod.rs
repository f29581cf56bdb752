//! Files: the excerpt dataset, MIDI export and piano-roll rendering.

mod dataset;
mod midi_export;
mod render;

pub use dataset::{format_dataset, parse_dataset, read_dataset, write_dataset, DatasetRecord};
pub use midi_export::{excerpt_to_midi, EXPORT_PITCH_BASE, EXPORT_TPQ};
pub use render::render_piano_roll;

use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
}

impl IoError {
    pub(crate) fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
