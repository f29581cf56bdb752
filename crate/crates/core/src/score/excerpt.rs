use serde::{Deserialize, Serialize};

use super::domain::{Attribute, MAX_DURATION, PITCH_VALUES, STEPS};
use super::ScoreError;

/// A fully defined note in window coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Note {
    pub pitch: u8,
    pub onset: u8,
    pub duration: u8,
}

impl Note {
    pub fn new(pitch: u8, onset: u8, duration: u8) -> Result<Self, ScoreError> {
        let n = Self {
            pitch,
            onset,
            duration,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        let ok = (self.pitch as usize) < PITCH_VALUES
            && (self.onset as usize) < STEPS
            && (1..=MAX_DURATION).contains(&(self.duration as usize))
            && self.onset as usize + self.duration as usize <= STEPS;
        if ok {
            Ok(())
        } else {
            Err(ScoreError::InvalidNote(*self))
        }
    }

    pub fn triple(&self) -> [u8; 3] {
        [self.pitch, self.onset, self.duration]
    }

    pub fn get(&self, attr: Attribute) -> u8 {
        match attr {
            Attribute::Pitch => self.pitch,
            Attribute::Onset => self.onset,
            Attribute::Duration => self.duration,
        }
    }
}

/// A note slot is either a complete note or completely empty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum NoteSlot {
    Note(Note),
    #[default]
    Empty,
}

impl NoteSlot {
    /// Domain index of this slot's value for `attr`.
    pub fn index(&self, attr: Attribute) -> usize {
        match self {
            NoteSlot::Note(n) => attr.value_to_index(n.get(attr)),
            NoteSlot::Empty => attr.undefined_index(),
        }
    }

    pub fn note(&self) -> Option<Note> {
        match self {
            NoteSlot::Note(n) => Some(*n),
            NoteSlot::Empty => None,
        }
    }
}

/// A fixed-size set of note slots.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Excerpt {
    slots: Vec<NoteSlot>,
}

impl Excerpt {
    pub fn new(slots: Vec<NoteSlot>) -> Result<Self, ScoreError> {
        if slots.is_empty() {
            return Err(ScoreError::SlotCount(0));
        }
        for s in &slots {
            if let NoteSlot::Note(n) = s {
                n.validate()?;
            }
        }
        Ok(Self { slots })
    }

    /// Notes in the lowest slots, the rest empty.
    pub fn from_notes(notes: &[Note], slot_count: usize) -> Result<Self, ScoreError> {
        if notes.len() > slot_count {
            return Err(ScoreError::Capacity {
                notes: notes.len(),
                slots: slot_count,
            });
        }
        let mut slots: Vec<NoteSlot> = notes.iter().map(|&n| NoteSlot::Note(n)).collect();
        slots.resize(slot_count, NoteSlot::Empty);
        Self::new(slots)
    }

    pub fn empty(slot_count: usize) -> Self {
        Self {
            slots: vec![NoteSlot::Empty; slot_count],
        }
    }

    pub fn slots(&self) -> &[NoteSlot] {
        &self.slots
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn notes(&self) -> impl Iterator<Item = Note> + '_ {
        self.slots.iter().filter_map(NoteSlot::note)
    }

    pub fn note_count(&self) -> usize {
        self.notes().count()
    }

    /// Notes sorted by onset then pitch, for comparing excerpts as sets.
    pub fn sorted_notes(&self) -> Vec<Note> {
        let mut v: Vec<Note> = self.notes().collect();
        v.sort_by_key(|n| (n.onset, n.pitch, n.duration));
        v
    }

    /// Reorders slots: `out[i] = self[perm[i]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            slots: perm.iter().map(|&i| self.slots[i]).collect(),
        }
    }
}
