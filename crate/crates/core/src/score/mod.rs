//! Note-slot representation, multi-hot priors, normalisation and constraint
//! compilation.

pub mod constraints;
mod domain;
mod excerpt;
mod prior;

pub use constraints::{
    compile_constraints, CompileError, Conflict, ConstraintSpec, Family, OnsetGrid, PitchClasses,
    Range, Region, RegionMode,
};
pub use domain::{Attribute, AttributeMask, DEFAULT_SLOTS, MAX_DURATION, PITCH_VALUES, STEPS};
pub use excerpt::{Excerpt, Note, NoteSlot};
pub use prior::{one_hot_prior, Infeasible, PriorGrid, SlotPrior};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("invalid note {0:?}")]
    InvalidNote(Note),
    #[error("excerpt needs at least one slot, got {0}")]
    SlotCount(usize),
    #[error("{notes} notes do not fit in {slots} slots")]
    Capacity { notes: usize, slots: usize },
    #[error("slot {slot} is infeasible after normalisation")]
    Infeasible { slot: usize },
    #[error("slot {slot} is not determined")]
    NotDetermined { slot: usize },
}
