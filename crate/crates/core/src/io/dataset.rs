//! The excerpt dataset: one JSON object per line,
//! `{"sourceId":"<id>","notes":[[pitch,onset,duration],...]}`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_atomic, IoError};
use crate::score::{Excerpt, Note, ScoreError, DEFAULT_SLOTS};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DatasetRecord {
    pub source_id: String,
    pub notes: Vec<[u8; 3]>,
}

impl DatasetRecord {
    pub fn from_excerpt(source_id: impl Into<String>, excerpt: &Excerpt) -> Self {
        Self {
            source_id: source_id.into(),
            notes: excerpt.notes().map(|n| n.triple()).collect(),
        }
    }

    pub fn to_notes(&self) -> Result<Vec<Note>, ScoreError> {
        self.notes.iter().map(|&[p, o, d]| Note::new(p, o, d)).collect()
    }

    pub fn to_excerpt(&self, slot_count: usize) -> Result<Excerpt, ScoreError> {
        Excerpt::from_notes(&self.to_notes()?, slot_count)
    }

    fn validate(&self) -> Result<(), String> {
        if self.notes.len() > DEFAULT_SLOTS {
            return Err(format!("{} notes exceed {DEFAULT_SLOTS}", self.notes.len()));
        }
        self.to_notes().map(|_| ()).map_err(|e| e.to_string())
    }
}

pub fn format_dataset(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Parses dataset text. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| IoError::Line {
            line: i + 1,
            message,
        };
        let r: DatasetRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        r.validate().map_err(err)?;
        out.push(r);
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    parse_dataset(&text)
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), IoError> {
    write_atomic(path, format_dataset(records).as_bytes()).map_err(|e| IoError::file(path, e))
}
