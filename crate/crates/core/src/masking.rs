//! Training-time soft masks.
//!
//! Stage one picks a random set of slots and widens each of their masks with
//! one shared confound set per attribute. Stage two picks another random set
//! and widens each slot independently. Masks only ever grow, so the ground
//! truth is always allowed.

use rand::seq::index;
use rand::Rng;

use crate::score::{one_hot_prior, Attribute, AttributeMask, Excerpt, PriorGrid};

/// How many slots a stage touches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlotCount {
    /// Uniform over `0..=T`.
    Uniform,
    Fixed(usize),
}

/// Per-entry inclusion probability for confound sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rate {
    /// Uniform on (0, 1), drawn fresh each time a rate is needed.
    Uniform,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSchemeConfig {
    pub stage1_slots: SlotCount,
    pub stage2_slots: SlotCount,
    pub stage1_rate: Rate,
    pub stage2_rate: Rate,
}

impl Default for MaskSchemeConfig {
    fn default() -> Self {
        Self {
            stage1_slots: SlotCount::Uniform,
            stage2_slots: SlotCount::Uniform,
            stage1_rate: Rate::Uniform,
            stage2_rate: Rate::Uniform,
        }
    }
}

impl MaskSchemeConfig {
    /// No widening at all: every prior stays one-hot.
    pub fn none() -> Self {
        Self {
            stage1_slots: SlotCount::Fixed(0),
            stage2_slots: SlotCount::Fixed(0),
            ..Self::default()
        }
    }
}

fn draw_count<R: Rng>(count: SlotCount, slots: usize, rng: &mut R) -> usize {
    match count {
        SlotCount::Uniform => rng.random_range(0..=slots),
        SlotCount::Fixed(n) => n.min(slots),
    }
}

fn draw_rate<R: Rng>(rate: Rate, rng: &mut R) -> f64 {
    match rate {
        // `random` is in [0, 1); resample the measure-zero endpoint.
        Rate::Uniform => loop {
            let r: f64 = rng.random();
            if r > 0.0 {
                break r;
            }
        },
        Rate::Fixed(r) => r,
    }
}

fn confound_set<R: Rng>(attr: Attribute, rate: f64, rng: &mut R) -> AttributeMask {
    AttributeMask::from_indices(
        attr,
        (0..attr.domain_size()).filter(|_| rng.random_bool(rate.clamp(0.0, 1.0))),
    )
}

/// Draws a soft-masked prior grid for `excerpt`.
pub fn soft_mask<R: Rng>(excerpt: &Excerpt, cfg: &MaskSchemeConfig, rng: &mut R) -> PriorGrid {
    let slots = excerpt.slot_count();
    let mut priors: Vec<_> = excerpt.slots().iter().map(one_hot_prior).collect();

    let n1 = draw_count(cfg.stage1_slots, slots, rng);
    let chosen1 = index::sample(rng, slots, n1).into_vec();
    let rate1 = draw_rate(cfg.stage1_rate, rng);
    let shared: Vec<AttributeMask> = Attribute::ALL
        .iter()
        .map(|&a| confound_set(a, rate1, rng))
        .collect();
    for &s in &chosen1 {
        for m in &shared {
            let widened = priors[s].get(m.attribute()).union(m);
            priors[s].set(widened);
        }
    }

    let n2 = draw_count(cfg.stage2_slots, slots, rng);
    let mut chosen2 = index::sample(rng, slots, n2).into_vec();
    chosen2.sort_unstable();
    for s in chosen2 {
        let rate2 = draw_rate(cfg.stage2_rate, rng);
        for a in Attribute::ALL {
            let widened = priors[s].get(a).union(&confound_set(a, rate2, rng));
            priors[s].set(widened);
        }
    }

    let grid = PriorGrid::new(priors);
    grid.normalise()
        .expect("truth-containing priors always normalise")
}
