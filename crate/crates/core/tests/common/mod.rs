#![allow(dead_code)]

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use smlm::score::{
    ConstraintSpec, Excerpt, Note, OnsetGrid, PitchClasses, Range, Region, RegionMode,
};

pub fn random_excerpt<R: Rng>(r: &mut R, notes: usize, slots: usize) -> Excerpt {
    let notes: Vec<Note> = (0..notes)
        .map(|_| {
            let onset = r.random_range(0..64u8);
            let duration = r.random_range(1..=(64 - onset).min(16));
            Note::new(r.random_range(0..36), onset, duration).unwrap()
        })
        .collect();
    let mut e = Excerpt::from_notes(&notes, slots).unwrap();
    let mut perm: Vec<usize> = (0..slots).collect();
    perm.shuffle(r);
    e = e.permuted(&perm);
    e
}

fn subset<R: Rng>(r: &mut R, universe: impl Iterator<Item = u8>, keep: f64) -> Vec<u8> {
    let all: Vec<u8> = universe.collect();
    let mut out: Vec<u8> = all.iter().copied().filter(|_| r.random_bool(keep)).collect();
    if out.is_empty() {
        out.push(*all.choose(r).unwrap());
    }
    out
}

/// A random spec touching a random selection of constraint families, plus a
/// base excerpt when it uses imputation regions.
pub fn random_spec<R: Rng>(r: &mut R) -> (ConstraintSpec, Option<Excerpt>) {
    let mut spec = ConstraintSpec::default();
    if r.random_bool(0.4) {
        spec.pitch_classes = Some(PitchClasses {
            root: r.random_range(0..12),
            classes: subset(r, 0..12, 0.5),
        });
    }
    if r.random_bool(0.25) {
        let keep = r.random_range(0.1..0.9);
        spec.allowed_pitches = Some(subset(r, 0..36, keep));
    }
    if r.random_bool(0.4) {
        let period = *[1u8, 2, 3, 4, 6, 8, 16].choose(r).unwrap();
        spec.onset_grid = Some(OnsetGrid {
            period,
            phase: r.random_range(0..period),
        });
    }
    if r.random_bool(0.3) {
        let min = r.random_range(1..=32u8);
        spec.duration_range = Some(Range {
            min,
            max: r.random_range(min..=63),
        });
    } else if r.random_bool(0.15) {
        spec.allowed_durations = Some(subset(r, 1..=63, 0.1));
    }
    if r.random_bool(0.4) {
        let min = r.random_range(0..=16u8);
        spec.note_count = Some(Range {
            min,
            max: r.random_range(min.max(1)..=64),
        });
    }
    if r.random_bool(0.2) {
        spec.locked_notes = (0..r.random_range(1..=2))
            .map(|_| {
                let onset = r.random_range(0..60u8);
                [r.random_range(0..36), onset, r.random_range(1..=4)]
            })
            .collect();
    }
    let mut base = None;
    if r.random_bool(0.3) {
        let (plo, slo) = (r.random_range(0..30u8), r.random_range(0..56u8));
        spec.imputation_regions.push(Region {
            pitch_lo: plo,
            pitch_hi: r.random_range(plo..36),
            step_lo: slo,
            step_hi: r.random_range(slo..64),
            mode: RegionMode::Generate,
        });
        let n = r.random_range(4..24);
        base = Some(random_excerpt(r, n, 64));
    }
    (spec, base)
}
