//! Declarative user constraints and their compilation into a [`PriorGrid`].
//!
//! Slots are laid out as kept base notes first, then locked notes, then free
//! slots. Note-count bounds bind to slot prefixes and suffixes, which is sound
//! because the network treats slots as an unordered set.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::domain::{Attribute, AttributeMask, MAX_DURATION, PITCH_VALUES, STEPS};
use super::excerpt::{Excerpt, Note, NoteSlot};
use super::prior::{one_hot_prior, PriorGrid, SlotPrior};
use super::ScoreError;

/// Allowed pitch classes: pitch `p` is allowed when `(p - root) mod 12` is in
/// `classes`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PitchClasses {
    pub root: u8,
    pub classes: Vec<u8>,
}

impl PitchClasses {
    pub fn major(root: u8) -> Self {
        Self {
            root,
            classes: vec![0, 2, 4, 5, 7, 9, 11],
        }
    }

    pub fn major_pentatonic(root: u8) -> Self {
        Self {
            root,
            classes: vec![0, 2, 4, 7, 9],
        }
    }

    pub fn allows(&self, pitch: u8) -> bool {
        let residue = (pitch as i32 - self.root as i32).rem_euclid(12) as u8;
        self.classes.contains(&residue)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OnsetGrid {
    pub period: u8,
    #[serde(default)]
    pub phase: u8,
}

impl OnsetGrid {
    pub fn allows(&self, onset: u8) -> bool {
        onset % self.period == self.phase % self.period
    }
}

/// Inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: u8,
    pub max: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionMode {
    Generate,
    Keep,
}

/// Inclusive rectangle in pitch × step space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Region {
    pub pitch_lo: u8,
    pub pitch_hi: u8,
    pub step_lo: u8,
    pub step_hi: u8,
    pub mode: RegionMode,
}

impl Region {
    pub fn contains(&self, note: &Note) -> bool {
        (self.pitch_lo..=self.pitch_hi).contains(&note.pitch)
            && (self.step_lo..=self.step_hi).contains(&note.onset)
    }
}

/// User constraints. Absent families do not constrain anything.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pitch_classes: Option<PitchClasses>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_pitches: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset_grid: Option<OnsetGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_range: Option<Range>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_durations: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub imputation_regions: Vec<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_count: Option<Range>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub locked_notes: Vec<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
}

/// Constraint families, named as in the spec document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Family {
    BaseNotes,
    PitchClasses,
    AllowedPitches,
    OnsetGrid,
    DurationRange,
    AllowedDurations,
    ImputationRegions,
    NoteCount,
    LockedNotes,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::BaseNotes => "baseNotes",
            Family::PitchClasses => "pitchClasses",
            Family::AllowedPitches => "allowedPitches",
            Family::OnsetGrid => "onsetGrid",
            Family::DurationRange => "durationRange",
            Family::AllowedDurations => "allowedDurations",
            Family::ImputationRegions => "imputationRegions",
            Family::NoteCount => "noteCount",
            Family::LockedNotes => "lockedNotes",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A slot no value can satisfy, and the families that emptied it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conflict {
    pub slot: usize,
    pub families: Vec<Family>,
}

impl fmt::Display for Conflict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.families.iter().map(|f| f.name()).collect();
        write!(
            f,
            "slot {} has no consistent value; conflicting constraints: {}",
            self.slot,
            names.join(", ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error("invalid constraint spec: {0}")]
    Invalid(String),
    #[error("infeasible constraints: {0}")]
    Infeasible(Conflict),
}

impl ConstraintSpec {
    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        let spec: ConstraintSpec =
            serde_json::from_str(text).map_err(|e| CompileError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }

    /// Range and consistency checks that do not need compilation.
    pub fn validate(&self, slot_count: usize) -> Result<(), CompileError> {
        let bad = |m: String| Err(CompileError::Invalid(m));
        if let Some(pc) = &self.pitch_classes {
            if pc.root > 11 || pc.classes.iter().any(|&c| c > 11) {
                return bad("pitchClasses root and classes must be in 0..11".into());
            }
        }
        if let Some(ps) = &self.allowed_pitches {
            if ps.iter().any(|&p| p as usize >= PITCH_VALUES) {
                return bad("allowedPitches must be in 0..35".into());
            }
        }
        if let Some(g) = &self.onset_grid {
            if g.period == 0 || g.period as usize > STEPS || g.phase as usize >= STEPS {
                return bad("onsetGrid period must be in 1..64 and phase in 0..63".into());
            }
        }
        if let Some(r) = &self.duration_range {
            if r.min == 0 || r.max as usize > MAX_DURATION || r.min > r.max {
                return bad("durationRange must satisfy 1 <= min <= max <= 63".into());
            }
        }
        if let Some(ds) = &self.allowed_durations {
            if ds.iter().any(|&d| d == 0 || d as usize > MAX_DURATION) {
                return bad("allowedDurations must be in 1..63".into());
            }
        }
        for r in &self.imputation_regions {
            if r.pitch_lo > r.pitch_hi
                || r.step_lo > r.step_hi
                || r.pitch_hi as usize >= PITCH_VALUES
                || r.step_hi as usize >= STEPS
            {
                return bad(format!("imputation region {r:?} outside 0..35 x 0..63"));
            }
        }
        if let Some(c) = &self.note_count {
            if c.min > c.max || c.max as usize > slot_count {
                return bad(format!("noteCount must satisfy min <= max <= {slot_count}"));
            }
        }
        for t in &self.locked_notes {
            if Note::new(t[0], t[1], t[2]).is_err() {
                return bad(format!("locked note {t:?} is not a valid note"));
            }
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return bad("temperature must be positive".into());
            }
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad("topP must be in (0, 1]".into());
            }
        }
        Ok(())
    }

    fn generate_regions(&self) -> Vec<Region> {
        self.imputation_regions
            .iter()
            .copied()
            .filter(|r| r.mode == RegionMode::Generate)
            .collect()
    }

    /// Base notes that survive imputation: everything outside the generate
    /// regions, plus anything inside a keep region.
    pub fn kept_base_notes(&self, base: &Excerpt) -> Vec<Note> {
        let generate = self.generate_regions();
        base.notes()
            .filter(|n| {
                let regenerated = generate.iter().any(|r| r.contains(n));
                let protected = self
                    .imputation_regions
                    .iter()
                    .any(|r| r.mode == RegionMode::Keep && r.contains(n));
                !regenerated || protected
            })
            .collect()
    }

    fn pitch_mask(&self) -> Vec<(Family, AttributeMask)> {
        let a = Attribute::Pitch;
        let mut out = Vec::new();
        if let Some(pc) = &self.pitch_classes {
            let m = AttributeMask::from_indices(
                a,
                (0..PITCH_VALUES as u8).filter(|&p| pc.allows(p)).map(usize::from),
            );
            out.push((Family::PitchClasses, with_undefined(m)));
        }
        if let Some(ps) = &self.allowed_pitches {
            let m = AttributeMask::from_indices(a, ps.iter().map(|&p| p as usize));
            out.push((Family::AllowedPitches, with_undefined(m)));
        }
        out
    }

    fn onset_mask(&self) -> Vec<(Family, AttributeMask)> {
        let mut out = Vec::new();
        if let Some(g) = &self.onset_grid {
            let m = AttributeMask::from_indices(
                Attribute::Onset,
                (0..STEPS as u8).filter(|&o| g.allows(o)).map(usize::from),
            );
            out.push((Family::OnsetGrid, with_undefined(m)));
        }
        out
    }

    fn duration_mask(&self) -> Vec<(Family, AttributeMask)> {
        let a = Attribute::Duration;
        let mut out = Vec::new();
        if let Some(r) = &self.duration_range {
            let m = AttributeMask::from_indices(a, (r.min..=r.max).map(|d| a.value_to_index(d)));
            out.push((Family::DurationRange, with_undefined(m)));
        }
        if let Some(ds) = &self.allowed_durations {
            let m = AttributeMask::from_indices(a, ds.iter().map(|&d| a.value_to_index(d)));
            out.push((Family::AllowedDurations, with_undefined(m)));
        }
        out
    }

    /// Semantic check of an excerpt against the spec, independent of the
    /// compiled grid. Returns human-readable violations.
    pub fn violations(&self, excerpt: &Excerpt, base: Option<&Excerpt>) -> Vec<String> {
        let mut out = Vec::new();
        let notes: Vec<Note> = excerpt.notes().collect();
        for n in &notes {
            if let Some(pc) = &self.pitch_classes {
                if !pc.allows(n.pitch) {
                    out.push(format!("{n:?} outside pitch classes"));
                }
            }
            if let Some(ps) = &self.allowed_pitches {
                if !ps.contains(&n.pitch) {
                    out.push(format!("{n:?} pitch not allowed"));
                }
            }
            if let Some(g) = &self.onset_grid {
                if !g.allows(n.onset) {
                    out.push(format!("{n:?} off the onset grid"));
                }
            }
            if let Some(r) = &self.duration_range {
                if n.duration < r.min || n.duration > r.max {
                    out.push(format!("{n:?} duration outside range"));
                }
            }
            if let Some(ds) = &self.allowed_durations {
                if !ds.contains(&n.duration) {
                    out.push(format!("{n:?} duration not allowed"));
                }
            }
        }
        if let Some(c) = &self.note_count {
            if notes.len() < c.min as usize || notes.len() > c.max as usize {
                out.push(format!("{} notes outside [{}, {}]", notes.len(), c.min, c.max));
            }
        }
        // Every fixed note must be present; every other note must lie in a
        // generate region when regions exist.
        let mut pool = notes.clone();
        let mut fixed: Vec<Note> = base.map(|b| self.kept_base_notes(b)).unwrap_or_default();
        fixed.extend(self.locked_notes.iter().filter_map(|t| Note::new(t[0], t[1], t[2]).ok()));
        for f in &fixed {
            match pool.iter().position(|n| n == f) {
                Some(i) => {
                    pool.swap_remove(i);
                }
                None => out.push(format!("fixed note {f:?} missing")),
            }
        }
        let generate = self.generate_regions();
        if !generate.is_empty() {
            for n in &pool {
                if !generate.iter().any(|r| r.contains(n)) {
                    out.push(format!("{n:?} outside generate regions"));
                }
            }
        }
        out
    }
}

fn with_undefined(mut m: AttributeMask) -> AttributeMask {
    m.insert(m.attribute().undefined_index());
    m
}

/// Per-slot record of which families removed bits.
#[derive(Clone, Default)]
struct Provenance {
    removed_undefined: [BTreeSet<Family>; 3],
    removed_defined: [BTreeSet<Family>; 3],
}

struct Builder {
    priors: Vec<SlotPrior>,
    provenance: Vec<Provenance>,
}

impl Builder {
    fn restrict(&mut self, slot: usize, family: Family, mask: &AttributeMask) {
        let a = mask.attribute();
        let before = *self.priors[slot].get(a);
        let after = before.intersect(mask);
        if before.has_undefined() && !after.has_undefined() {
            self.provenance[slot].removed_undefined[a.index()].insert(family);
        }
        let defined = AttributeMask::defined_only(a);
        if before.intersect(&defined) != after.intersect(&defined) {
            self.provenance[slot].removed_defined[a.index()].insert(family);
        }
        self.priors[slot].set(after);
    }

    fn restrict_prior(&mut self, slot: usize, family: Family, prior: &SlotPrior) {
        for m in prior.masks() {
            self.restrict(slot, family, m);
        }
    }

    fn conflict(&self, slot: usize, prior: &SlotPrior) -> Conflict {
        let prov = &self.provenance[slot];
        let mut families = BTreeSet::new();
        for a in Attribute::ALL {
            let m = prior.get(a);
            let i = a.index();
            if m.is_empty() {
                families.extend(&prov.removed_undefined[i]);
                families.extend(&prov.removed_defined[i]);
            }
        }
        if families.is_empty() {
            for a in Attribute::ALL {
                let m = prior.get(a);
                let i = a.index();
                if !m.has_undefined() {
                    families.extend(&prov.removed_undefined[i]);
                }
                if !m.has_defined() {
                    families.extend(&prov.removed_defined[i]);
                }
            }
        }
        Conflict {
            slot,
            families: families.into_iter().collect(),
        }
    }
}

/// Compiles a spec into per-slot allowed sets. With a `base` excerpt, base
/// notes outside generate regions are kept as fixed slots.
pub fn compile_constraints(
    spec: &ConstraintSpec,
    base: Option<&Excerpt>,
    slot_count: usize,
) -> Result<PriorGrid, CompileError> {
    spec.validate(slot_count)?;
    let kept = base.map(|b| spec.kept_base_notes(b)).unwrap_or_default();
    let locked: Vec<Note> = spec
        .locked_notes
        .iter()
        .map(|t| Note::new(t[0], t[1], t[2]))
        .collect::<Result<_, ScoreError>>()
        .map_err(|e| CompileError::Invalid(e.to_string()))?;
    if kept.len() + locked.len() > slot_count {
        return Err(CompileError::Invalid(format!(
            "{} kept and {} locked notes exceed {slot_count} slots",
            kept.len(),
            locked.len()
        )));
    }

    let mut b = Builder {
        priors: vec![SlotPrior::full(); slot_count],
        provenance: vec![Provenance::default(); slot_count],
    };
    for (slot, n) in kept.iter().enumerate() {
        b.restrict_prior(slot, Family::BaseNotes, &one_hot_prior(&NoteSlot::Note(*n)));
    }

    let families: Vec<(Family, AttributeMask)> = spec
        .pitch_mask()
        .into_iter()
        .chain(spec.onset_mask())
        .chain(spec.duration_mask())
        .collect();
    for slot in 0..slot_count {
        for (family, mask) in &families {
            b.restrict(slot, *family, mask);
        }
    }

    let free_start = kept.len() + locked.len();
    let generate = spec.generate_regions();
    if !generate.is_empty() {
        // Each free slot is bound to one region, round-robin, so its pitch and
        // onset sets describe exactly that rectangle.
        for (k, slot) in (free_start..slot_count).enumerate() {
            let r = &generate[k % generate.len()];
            let pitch = with_undefined(AttributeMask::from_indices(
                Attribute::Pitch,
                (r.pitch_lo..=r.pitch_hi).map(usize::from),
            ));
            let onset = with_undefined(AttributeMask::from_indices(
                Attribute::Onset,
                (r.step_lo..=r.step_hi).map(usize::from),
            ));
            b.restrict(slot, Family::ImputationRegions, &pitch);
            b.restrict(slot, Family::ImputationRegions, &onset);
        }
    }

    if let Some(c) = &spec.note_count {
        for slot in 0..(c.min as usize).min(slot_count) {
            for a in Attribute::ALL {
                b.restrict(slot, Family::NoteCount, &AttributeMask::defined_only(a));
            }
        }
        for slot in (c.max as usize)..slot_count {
            b.restrict_prior(slot, Family::NoteCount, &SlotPrior::empty_slot());
        }
    }

    for (i, n) in locked.iter().enumerate() {
        b.restrict_prior(kept.len() + i, Family::LockedNotes, &one_hot_prior(&NoteSlot::Note(*n)));
    }

    let mut out = Vec::with_capacity(slot_count);
    for slot in 0..slot_count {
        let raw = b.priors[slot];
        let spanned = raw.restrict_span();
        if spanned != raw {
            // Span pruning acts on behalf of whatever shaped onset/duration.
            for a in [Attribute::Onset, Attribute::Duration] {
                let i = a.index();
                let touched: Vec<Family> = b.provenance[slot].removed_defined[Attribute::Onset.index()]
                    .iter()
                    .chain(&b.provenance[slot].removed_defined[Attribute::Duration.index()])
                    .copied()
                    .collect();
                if spanned.get(a) != raw.get(a) {
                    b.provenance[slot].removed_defined[i].extend(touched);
                }
            }
        }
        match spanned.normalise() {
            Ok(p) => out.push(p),
            Err(_) => return Err(CompileError::Infeasible(b.conflict(slot, &spanned))),
        }
    }
    Ok(PriorGrid::new(out))
}
