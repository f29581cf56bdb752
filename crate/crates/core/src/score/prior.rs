use std::fmt;

use super::domain::{Attribute, AttributeMask, STEPS};
use super::excerpt::{Excerpt, Note, NoteSlot};
use super::ScoreError;

/// Allowed values for each attribute of one slot.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotPrior {
    masks: [AttributeMask; 3],
}

/// Returned by [`SlotPrior::normalise`] when a slot can be neither a note nor
/// empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Infeasible;

impl SlotPrior {
    pub fn new(pitch: AttributeMask, onset: AttributeMask, duration: AttributeMask) -> Self {
        assert_eq!(pitch.attribute(), Attribute::Pitch);
        assert_eq!(onset.attribute(), Attribute::Onset);
        assert_eq!(duration.attribute(), Attribute::Duration);
        Self {
            masks: [pitch, onset, duration],
        }
    }

    /// Every value allowed, including "no note".
    pub fn full() -> Self {
        Self::new(
            AttributeMask::full(Attribute::Pitch),
            AttributeMask::full(Attribute::Onset),
            AttributeMask::full(Attribute::Duration),
        )
    }

    pub fn empty_slot() -> Self {
        one_hot_prior(&NoteSlot::Empty)
    }

    pub fn get(&self, attr: Attribute) -> &AttributeMask {
        &self.masks[attr.index()]
    }

    pub fn set(&mut self, mask: AttributeMask) {
        self.masks[mask.attribute().index()] = mask;
    }

    pub fn masks(&self) -> &[AttributeMask; 3] {
        &self.masks
    }

    pub fn is_subset(&self, other: &SlotPrior) -> bool {
        self.masks
            .iter()
            .zip(&other.masks)
            .all(|(a, b)| a.is_subset(b))
    }

    pub fn union(&self, other: &SlotPrior) -> SlotPrior {
        let mut out = *self;
        for a in Attribute::ALL {
            out.set(self.get(a).union(other.get(a)));
        }
        out
    }

    pub fn intersect(&self, other: &SlotPrior) -> SlotPrior {
        let mut out = *self;
        for a in Attribute::ALL {
            out.set(self.get(a).intersect(other.get(a)));
        }
        out
    }

    pub fn contains_slot(&self, slot: &NoteSlot) -> bool {
        Attribute::ALL
            .iter()
            .all(|&a| self.get(a).contains(slot.index(a)))
    }

    /// True when every mask holds exactly one value.
    pub fn is_determined(&self) -> bool {
        self.masks.iter().all(|m| m.count() == 1)
    }

    /// Resolves definedness across the three attributes: a slot is a note only
    /// if every attribute may be defined, and empty only if every attribute may
    /// be undefined.
    pub fn normalise(&self) -> Result<SlotPrior, Infeasible> {
        let can_undef = self.masks.iter().all(AttributeMask::has_undefined);
        let can_def = self.masks.iter().all(AttributeMask::has_defined);
        if !can_undef && !can_def {
            return Err(Infeasible);
        }
        let mut out = *self;
        for m in out.masks.iter_mut() {
            let a = m.attribute();
            if !can_undef {
                m.remove(a.undefined_index());
            }
            if !can_def {
                *m = m.intersect(&AttributeMask::undefined_only(a));
            }
        }
        Ok(out)
    }

    /// Drops onsets that no allowed duration fits after, and durations that no
    /// allowed onset can hold, so every remaining defined value belongs to a
    /// note that ends inside the excerpt. Undefined bits are untouched.
    pub fn restrict_span(&self) -> SlotPrior {
        let onset = self.get(Attribute::Onset);
        let duration = self.get(Attribute::Duration);
        let min_dur = duration
            .iter()
            .filter_map(|i| Attribute::Duration.index_to_value(i))
            .min();
        let min_onset = onset
            .iter()
            .filter_map(|i| Attribute::Onset.index_to_value(i))
            .min();
        let mut out = *self;
        let mut new_onset = *onset;
        for i in onset.iter() {
            if let Some(o) = Attribute::Onset.index_to_value(i) {
                if min_dur.is_none_or(|d| o as usize + d as usize > STEPS) {
                    new_onset.remove(i);
                }
            }
        }
        let mut new_dur = *duration;
        for i in duration.iter() {
            if let Some(d) = Attribute::Duration.index_to_value(i) {
                if min_onset.is_none_or(|o| o as usize + d as usize > STEPS) {
                    new_dur.remove(i);
                }
            }
        }
        out.set(new_onset);
        out.set(new_dur);
        out
    }

    /// `restrict_span` followed by `normalise`.
    pub fn refine(&self) -> Result<SlotPrior, Infeasible> {
        self.restrict_span().normalise()
    }

    /// The slot value this prior pins down, if it is determined.
    pub fn collapse(&self) -> Option<NoteSlot> {
        let idx: Vec<usize> = self.masks.iter().filter_map(AttributeMask::single).collect();
        if idx.len() != 3 {
            return None;
        }
        let vals: Vec<Option<u8>> = Attribute::ALL
            .iter()
            .zip(&idx)
            .map(|(a, &i)| a.index_to_value(i))
            .collect();
        match (vals[0], vals[1], vals[2]) {
            (None, None, None) => Some(NoteSlot::Empty),
            (Some(p), Some(o), Some(d)) => Note::new(p, o, d).ok().map(NoteSlot::Note),
            _ => None,
        }
    }
}

impl fmt::Debug for SlotPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for SlotPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "p={} o={} d={}",
            self.masks[0].to_hex(),
            self.masks[1].to_hex(),
            self.masks[2].to_hex()
        )
    }
}

/// One-hot prior holding exactly the slot's own values.
pub fn one_hot_prior(slot: &NoteSlot) -> SlotPrior {
    SlotPrior::new(
        AttributeMask::only(Attribute::Pitch, slot.index(Attribute::Pitch)),
        AttributeMask::only(Attribute::Onset, slot.index(Attribute::Onset)),
        AttributeMask::only(Attribute::Duration, slot.index(Attribute::Duration)),
    )
}

/// Per-slot priors for a whole excerpt.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PriorGrid {
    priors: Vec<SlotPrior>,
}

impl PriorGrid {
    pub fn new(priors: Vec<SlotPrior>) -> Self {
        Self { priors }
    }

    pub fn full(slot_count: usize) -> Self {
        Self::new(vec![SlotPrior::full(); slot_count])
    }

    pub fn from_excerpt(excerpt: &Excerpt) -> Self {
        Self::new(excerpt.slots().iter().map(one_hot_prior).collect())
    }

    pub fn slot_count(&self) -> usize {
        self.priors.len()
    }

    pub fn priors(&self) -> &[SlotPrior] {
        &self.priors
    }

    pub fn get(&self, slot: usize) -> &SlotPrior {
        &self.priors[slot]
    }

    pub fn set(&mut self, slot: usize, prior: SlotPrior) {
        self.priors[slot] = prior;
    }

    pub fn normalise(&self) -> Result<PriorGrid, ScoreError> {
        self.priors
            .iter()
            .enumerate()
            .map(|(slot, p)| p.normalise().map_err(|_| ScoreError::Infeasible { slot }))
            .collect::<Result<Vec<_>, _>>()
            .map(PriorGrid::new)
    }

    pub fn refine(&self) -> Result<PriorGrid, ScoreError> {
        self.priors
            .iter()
            .enumerate()
            .map(|(slot, p)| p.refine().map_err(|_| ScoreError::Infeasible { slot }))
            .collect::<Result<Vec<_>, _>>()
            .map(PriorGrid::new)
    }

    /// The excerpt a fully determined grid describes.
    pub fn collapse(&self) -> Result<Excerpt, ScoreError> {
        let slots = self
            .priors
            .iter()
            .enumerate()
            .map(|(slot, p)| p.collapse().ok_or(ScoreError::NotDetermined { slot }))
            .collect::<Result<Vec<_>, _>>()?;
        Excerpt::new(slots)
    }

    pub fn contains_excerpt(&self, excerpt: &Excerpt) -> bool {
        self.priors.len() == excerpt.slot_count()
            && self
                .priors
                .iter()
                .zip(excerpt.slots())
                .all(|(p, s)| p.contains_slot(s))
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(perm.iter().map(|&i| self.priors[i]).collect())
    }

    /// One line per slot, masks as hex.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, p) in self.priors.iter().enumerate() {
            s.push_str(&format!("{i:02} {p}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::domain::AttributeMask as M;

    fn prior(p: M, o: M, d: M) -> SlotPrior {
        SlotPrior::new(p, o, d)
    }

    #[test]
    fn one_hot_examples() {
        let slot = NoteSlot::Note(Note::new(5, 3, 7).unwrap());
        let p = one_hot_prior(&slot);
        assert_eq!(p.get(Attribute::Pitch).single(), Some(5));
        assert_eq!(p.get(Attribute::Onset).single(), Some(3));
        assert_eq!(p.get(Attribute::Duration).single(), Some(6));
        assert_eq!(p.collapse(), Some(slot));

        let e = one_hot_prior(&NoteSlot::Empty);
        assert_eq!(e.get(Attribute::Pitch).single(), Some(36));
        assert_eq!(e.get(Attribute::Onset).single(), Some(64));
        assert_eq!(e.get(Attribute::Duration).single(), Some(63));
        assert_eq!(e.collapse(), Some(NoteSlot::Empty));
    }

    #[test]
    fn normalise_propagates_defined() {
        let input = prior(
            M::from_indices(Attribute::Pitch, [2, 36]),
            M::only(Attribute::Onset, 4),
            M::full(Attribute::Duration),
        );
        let out = input.normalise().unwrap();
        assert_eq!(out.get(Attribute::Pitch).iter().collect::<Vec<_>>(), vec![2]);
        assert_eq!(out.get(Attribute::Onset).single(), Some(4));
        assert_eq!(*out.get(Attribute::Duration), M::defined_only(Attribute::Duration));
    }

    #[test]
    fn normalise_propagates_undefined() {
        let input = prior(
            M::undefined_only(Attribute::Pitch),
            M::full(Attribute::Onset),
            M::full(Attribute::Duration),
        );
        assert_eq!(input.normalise().unwrap(), SlotPrior::empty_slot());
    }

    #[test]
    fn normalise_detects_contradiction() {
        let input = prior(
            M::undefined_only(Attribute::Pitch),
            M::only(Attribute::Onset, 4),
            M::full(Attribute::Duration),
        );
        assert_eq!(input.normalise(), Err(Infeasible));
    }

    #[test]
    fn collapse_rejects_multi_bit_and_mixed() {
        let grid = PriorGrid::full(2);
        assert!(matches!(grid.collapse(), Err(ScoreError::NotDetermined { slot: 0 })));
        let mixed = prior(
            M::only(Attribute::Pitch, 3),
            M::undefined_only(Attribute::Onset),
            M::only(Attribute::Duration, 0),
        );
        assert_eq!(mixed.collapse(), None);
    }

    #[test]
    fn collapse_golden_grid() {
        let notes = [Note::new(0, 0, 1).unwrap(), Note::new(35, 60, 4).unwrap()];
        let grid = PriorGrid::new(vec![
            one_hot_prior(&NoteSlot::Empty),
            one_hot_prior(&NoteSlot::Note(notes[1])),
            one_hot_prior(&NoteSlot::Note(notes[0])),
        ]);
        let e = grid.collapse().unwrap();
        assert_eq!(
            e.slots(),
            &[NoteSlot::Empty, NoteSlot::Note(notes[1]), NoteSlot::Note(notes[0])]
        );
        assert_eq!(PriorGrid::from_excerpt(&Excerpt::empty(4)).collapse().unwrap().note_count(), 0);
    }

    #[test]
    fn restrict_span_drops_unreachable_pairs() {
        let p = prior(
            M::full(Attribute::Pitch),
            M::from_indices(Attribute::Onset, [10, 60, 64]),
            M::from_indices(Attribute::Duration, [7, 62, 63]), // values 8, 63
        );
        let r = p.restrict_span();
        // onset 60 + 8 > 64; duration 63 needs onset <= 1.
        assert_eq!(r.get(Attribute::Onset).iter().collect::<Vec<_>>(), vec![10, 64]);
        assert_eq!(r.get(Attribute::Duration).iter().collect::<Vec<_>>(), vec![7, 63]);
    }
}
