mod common;

use proptest::prelude::*;
use rand::Rng;
use smlm::io::{excerpt_to_midi, format_dataset, parse_dataset, DatasetRecord, EXPORT_PITCH_BASE, EXPORT_TPQ};
use smlm::masking::{soft_mask, MaskSchemeConfig};
use smlm::midi::{parse_midi, prepare_file, quantize};
use smlm::rng;
use smlm::score::{
    compile_constraints, one_hot_prior, Attribute, AttributeMask, ConstraintSpec, Excerpt, Note, NoteSlot, SlotPrior,
};

fn mask(attr: Attribute, bits: u128) -> AttributeMask {
    AttributeMask::from_bits(attr, bits)
}

fn valid_slot() -> impl Strategy<Value = NoteSlot> {
    prop_oneof![
        1 => Just(NoteSlot::Empty),
        4 => (0u8..36, 0u8..64, 1u8..=63).prop_filter_map("fits", |(p, o, d)| {
            Note::new(p, o, d).ok().map(NoteSlot::Note)
        }),
    ]
}

fn arbitrary_prior() -> impl Strategy<Value = SlotPrior> {
    (any::<u128>(), any::<u128>(), any::<u128>())
        .prop_map(|(p, o, d)| SlotPrior::new(mask(Attribute::Pitch, p), mask(Attribute::Onset, o), mask(Attribute::Duration, d)))
}

proptest! {
    #[test]
    fn normalise_is_idempotent_and_monotone(prior in arbitrary_prior()) {
        if let Ok(n) = prior.normalise() {
            prop_assert!(n.is_subset(&prior));
            prop_assert_eq!(n.normalise().unwrap(), n);
        }
        if let Ok(r) = prior.refine() {
            prop_assert!(r.is_subset(&prior));
            prop_assert_eq!(r.refine().unwrap(), r);
        }
    }

    #[test]
    fn normalise_keeps_any_contained_truth(prior in arbitrary_prior(), slot in valid_slot()) {
        let with_truth = prior.union(&one_hot_prior(&slot));
        let n = with_truth.normalise().expect("a prior holding a valid slot is feasible");
        prop_assert!(n.contains_slot(&slot));
        let r = with_truth.refine().expect("refine is feasible too");
        prop_assert!(r.contains_slot(&slot));
    }

    #[test]
    fn soft_masks_contain_the_truth(seed in any::<u64>(), notes in 0usize..=64) {
        let mut r = rng::stream(seed, &[]);
        let e = common::random_excerpt(&mut r, notes, 64);
        let grid = soft_mask(&e, &MaskSchemeConfig::default(), &mut r);
        prop_assert!(grid.contains_excerpt(&e));
        prop_assert!(grid.normalise().is_ok());
    }

    #[test]
    fn dataset_text_round_trips(records in prop::collection::vec(
        ("[a-z0-9]{1,16}:[0-9]{1,3}", prop::collection::vec(valid_slot(), 0..=64)),
        0..20,
    )) {
        let records: Vec<DatasetRecord> = records
            .into_iter()
            .map(|(id, slots)| {
                let notes: Vec<[u8; 3]> = slots.iter().filter_map(|s| s.note()).map(|n| n.triple()).collect();
                DatasetRecord { source_id: id, notes }
            })
            .collect();
        let text = format_dataset(&records);
        prop_assert_eq!(parse_dataset(&text).unwrap(), records.clone());
        prop_assert_eq!(format_dataset(&parse_dataset(&text).unwrap()), text);
    }

    #[test]
    fn prepare_never_emits_invalid_excerpts(bytes in prop::collection::vec(any::<u8>(), 0..400), seed in any::<u64>()) {
        // Random bytes rarely parse; splice a valid header in front half the time.
        let mut input = Vec::new();
        if seed % 2 == 0 {
            input.extend_from_slice(b"MThd\0\0\0\x06\0\0\0\x01\x01\xe0MTrk");
            input.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        }
        input.extend_from_slice(&bytes);
        if let Ok(records) = prepare_file(&input, seed) {
            for r in records {
                let e = r.to_excerpt(64).unwrap();
                prop_assert!((1..=64).contains(&e.note_count()));
            }
        }
    }
}

/// Excerpts whose same-pitch notes never overlap, so note-off pairing is
/// unambiguous.
fn non_overlapping_excerpt(seed: u64) -> Excerpt {
    let mut r = rng::stream(seed, &[]);
    let mut notes: Vec<Note> = Vec::new();
    for _ in 0..r.random_range(0..=64) {
        let onset = r.random_range(0..64u8);
        let n = Note::new(r.random_range(0..36), onset, r.random_range(1..=(64 - onset).min(63))).unwrap();
        let clash = notes
            .iter()
            .any(|m| m.pitch == n.pitch && m.onset < n.onset + n.duration && n.onset < m.onset + m.duration);
        if !clash {
            notes.push(n);
        }
    }
    Excerpt::from_notes(&notes, 64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn midi_export_then_ingest_is_identity(seed in any::<u64>()) {
        let e = non_overlapping_excerpt(seed);
        let midi = parse_midi(&excerpt_to_midi(&e)).unwrap();
        prop_assert_eq!(midi.ticks_per_quarter, EXPORT_TPQ);
        let mut back: Vec<[u8; 3]> = quantize(&midi.notes, midi.ticks_per_quarter)
            .iter()
            .map(|q| [q.pitch - EXPORT_PITCH_BASE, q.onset_step as u8, q.duration_steps])
            .collect();
        back.sort();
        let mut want: Vec<[u8; 3]> = e.notes().map(|n| n.triple()).collect();
        want.sort();
        prop_assert_eq!(back, want);
    }
}

/// Per-note part of the spec semantics, written against the spec's own
/// predicates rather than the compiled masks.
fn note_allowed(spec: &ConstraintSpec, n: &Note) -> bool {
    spec.pitch_classes.as_ref().is_none_or(|pc| pc.allows(n.pitch))
        && spec.allowed_pitches.as_ref().is_none_or(|ps| ps.contains(&n.pitch))
        && spec.onset_grid.as_ref().is_none_or(|g| g.allows(n.onset))
        && spec.duration_range.as_ref().is_none_or(|r| (r.min..=r.max).contains(&n.duration))
        && spec.allowed_durations.as_ref().is_none_or(|ds| ds.contains(&n.duration))
        && spec
            .imputation_regions
            .iter()
            .filter(|r| r.mode == smlm::score::RegionMode::Generate)
            .all(|r| r.contains(n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn compiled_grids_are_normalised_and_sound(seed in any::<u64>()) {
        let mut r = rng::stream(seed, &[]);
        let (spec, base) = common::random_spec(&mut r);
        let Ok(grid) = compile_constraints(&spec, base.as_ref(), 64) else {
            return Ok(());
        };
        prop_assert_eq!(&grid.normalise().unwrap(), &grid);

        // Build satisfying excerpts in the canonical layout (kept, locked,
        // free notes, empty slots) by rejection sampling free notes.
        let mut fixed: Vec<Note> = base.as_ref().map(|b| spec.kept_base_notes(b)).unwrap_or_default();
        fixed.extend(spec.locked_notes.iter().map(|t| Note::new(t[0], t[1], t[2]).unwrap()));
        let (lo, hi) = spec.note_count.map_or((0, 64), |c| (c.min as usize, c.max as usize));
        for _ in 0..5 {
            let mut notes = fixed.clone();
            let target = r.random_range(lo.max(notes.len())..=hi.max(notes.len()));
            let mut tries = 0;
            while notes.len() < target && tries < 20_000 {
                tries += 1;
                let onset = r.random_range(0..64u8);
                let n = Note::new(r.random_range(0..36), onset, r.random_range(1..=(64 - onset).min(63))).unwrap();
                if note_allowed(&spec, &n) {
                    notes.push(n);
                }
            }
            if notes.len() != target {
                continue;
            }
            let e = Excerpt::from_notes(&notes, 64).unwrap();
            if !spec.violations(&e, base.as_ref()).is_empty() {
                continue;
            }
            prop_assert!(grid.contains_excerpt(&e), "spec {:?}\nexcerpt {:?}\n{}", spec, notes, grid.dump());
        }
    }
}
