//! Directory-level dataset preparation.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{crop_pitch, parse_midi, quantize, segment, strip_percussion, MidiError};
use crate::io::DatasetRecord;
use crate::{rng, Execution};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rejected {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrepareReport {
    pub records: Vec<DatasetRecord>,
    pub rejected: Vec<Rejected>,
    pub files: usize,
}

/// First 16 hex digits of the SHA-256 of the file contents.
pub fn source_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Runs one file through the pipeline. Records come out in segment order with
/// ids `<hash>:<segment>`; each segment's pitch crop uses its own stream keyed
/// by the content hash, so results do not depend on file names or order.
pub fn prepare_file(bytes: &[u8], seed: u64) -> Result<Vec<DatasetRecord>, MidiError> {
    let file = parse_midi(bytes)?;
    let notes = quantize(&strip_percussion(&file.notes), file.ticks_per_quarter);
    let hash = source_hash(bytes);
    let key = u64::from_str_radix(&hash, 16).expect("hex digest");
    Ok(segment(&notes)
        .iter()
        .filter_map(|seg| {
            let mut r = rng::stream(seed, &[rng::tag("crop"), key, seg.segment as u64]);
            crop_pitch(seg, &mut r).map(|e| DatasetRecord::from_excerpt(format!("{hash}:{}", seg.segment), &e))
        })
        .collect())
}

fn is_midi(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// Prepares every `.mid`/`.midi` file under `dir`. Output is ordered by file
/// path, then segment. Unreadable or rejected files are reported, not fatal.
pub fn prepare(dir: &Path, seed: u64, exec: Execution) -> std::io::Result<PrepareReport> {
    let mut paths = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        if entry.file_type().is_file() && is_midi(entry.path()) {
            paths.push(entry.into_path());
        }
    }
    paths.sort();
    let results = exec.map(&paths, |_, path| {
        std::fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| prepare_file(&bytes, seed).map_err(|e| e.to_string()))
    });
    let mut report = PrepareReport {
        files: paths.len(),
        ..Default::default()
    };
    for (path, result) in paths.into_iter().zip(results) {
        match result {
            Ok(records) => report.records.extend(records),
            Err(reason) => {
                log::info!("skipping {}: {reason}", path.display());
                report.rejected.push(Rejected { path, reason });
            }
        }
    }
    Ok(report)
}
