//! Constrained generation: sample one undetermined (slot, attribute) pair at
//! a time, in random order, re-running the network after each decision.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::net::{forward_slot, forward_slot_all, ModelError, ModelParams};
use crate::numerics::Scalar;
use crate::score::{Attribute, AttributeMask, Excerpt, PriorGrid, ScoreError};
use crate::rng;

/// Logits at or below this are treated as disallowed.
pub const DISALLOWED: f64 = -1e8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Granularity {
    /// One forward pass per sampled attribute.
    #[default]
    PerAttribute,
    /// One forward pass per slot; its open attributes are then sampled in
    /// random order from those logits.
    PerNote,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
    pub granularity: Granularity,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.9,
            seed: 0,
            granularity: Granularity::PerAttribute,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SampleError::Contract(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(SampleError::Contract(format!("topP must be in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Decision {
    pub slot: usize,
    pub attribute: Attribute,
    pub value_index: usize,
    /// The attribute value, `None` for undefined.
    pub value: Option<u8>,
    /// Size of the allowed set the value was drawn from.
    pub allowed: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GenerationTrace {
    pub decisions: Vec<Decision>,
    pub forward_passes: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("contract violation: {0}")]
    Contract(String),
}

/// The renormalised nucleus: allowed entries of `softmax(logits / τ)` in
/// descending order (ties by index), cut at the smallest prefix whose mass
/// reaches `top_p`.
pub fn nucleus<F: Scalar>(masked: &[F], temperature: f64, top_p: f64) -> Result<Vec<(usize, f64)>, SampleError> {
    let allowed: Vec<(usize, f64)> = masked
        .iter()
        .enumerate()
        .filter_map(|(i, z)| {
            let z = z.to_f64().unwrap_or(f64::NEG_INFINITY);
            (z > DISALLOWED).then_some((i, z / temperature))
        })
        .collect();
    if allowed.is_empty() {
        return Err(SampleError::Contract("no allowed value".into()));
    }
    let m = allowed.iter().map(|&(_, z)| z).fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(usize, f64)> = allowed.iter().map(|&(i, z)| (i, (z - m).exp())).collect();
    let total: f64 = probs.iter().map(|p| p.1).sum();
    for p in probs.iter_mut() {
        p.1 /= total;
    }
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut cum = 0.0;
    let mut keep = probs.len();
    for (k, p) in probs.iter().enumerate() {
        cum += p.1;
        if cum >= top_p {
            keep = k + 1;
            break;
        }
    }
    probs.truncate(keep);
    let mass: f64 = probs.iter().map(|p| p.1).sum();
    for p in probs.iter_mut() {
        p.1 /= mass;
    }
    Ok(probs)
}

pub fn top_p_sample<F: Scalar, R: Rng>(
    masked: &[F],
    temperature: f64,
    top_p: f64,
    rng: &mut R,
) -> Result<usize, SampleError> {
    if !(temperature > 0.0) {
        return Err(SampleError::Contract(format!("temperature must be positive, got {temperature}")));
    }
    let n = nucleus(masked, temperature, top_p)?;
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for &(i, p) in &n {
        cum += p;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(n.last().expect("non-empty nucleus").0)
}

fn is_open(grid: &PriorGrid, slot: usize, attr: Attribute) -> bool {
    grid.get(slot).get(attr).count() >= 2
}

fn open_pairs(grid: &PriorGrid) -> Vec<(usize, Attribute)> {
    (0..grid.slot_count())
        .flat_map(|s| Attribute::ALL.map(|a| (s, a)))
        .filter(|&(s, a)| is_open(grid, s, a))
        .collect()
}

/// Fixes one attribute and propagates definedness and span limits within the
/// slot.
fn decide(grid: &mut PriorGrid, slot: usize, attr: Attribute, index: usize) -> Result<Decision, SampleError> {
    let prior = *grid.get(slot);
    let allowed = prior.get(attr).count();
    if !prior.get(attr).contains(index) {
        return Err(SampleError::Contract(format!("slot {slot}: {attr} index {index} is not allowed")));
    }
    let mut p = prior;
    p.set(AttributeMask::only(attr, index));
    let p = p.refine().map_err(|_| ScoreError::Infeasible { slot })?;
    grid.set(slot, p);
    Ok(Decision {
        slot,
        attribute: attr,
        value_index: index,
        value: attr.index_to_value(index),
        allowed,
    })
}

fn masked_row<F: Scalar>(raw_masked: &[F], mask: &AttributeMask) -> Vec<F> {
    // Re-mask against the current prior, which may have narrowed since the
    // forward pass.
    raw_masked
        .iter()
        .enumerate()
        .map(|(i, &z)| if mask.contains(i) { z } else { F::of(DISALLOWED * 10.0) })
        .collect()
}

/// Samples every open attribute of `grid`. `on_decision` sees each decision
/// as it is made.
pub fn generate_with<F: Scalar>(
    grid: &PriorGrid,
    params: &ModelParams<F>,
    cfg: &SamplerConfig,
    mut on_decision: impl FnMut(&Decision),
) -> Result<(Excerpt, GenerationTrace), SampleError> {
    cfg.validate()?;
    if grid.slot_count() != params.config.slot_count {
        return Err(ModelError::SlotCount {
            expected: params.config.slot_count,
            got: grid.slot_count(),
        }
        .into());
    }
    let mut grid = grid.refine()?;
    let mut rng = rng::stream(cfg.seed, &[rng::tag("generate")]);
    let mut trace = GenerationTrace::default();
    let mut pending = open_pairs(&grid);
    let mut record = |d: Decision, trace: &mut GenerationTrace| {
        on_decision(&d);
        trace.decisions.push(d);
    };

    while !pending.is_empty() {
        match cfg.granularity {
            Granularity::PerAttribute => {
                let (slot, attr) = pending[rng.random_range(0..pending.len())];
                let logits = forward_slot(&grid, params, slot, attr)?;
                trace.forward_passes += 1;
                let idx = top_p_sample(&logits, cfg.temperature, cfg.top_p, &mut rng)?;
                let d = decide(&mut grid, slot, attr, idx)?;
                record(d, &mut trace);
            }
            Granularity::PerNote => {
                let mut slots: Vec<usize> = pending.iter().map(|p| p.0).collect();
                slots.dedup();
                let slot = slots[rng.random_range(0..slots.len())];
                let logits = forward_slot_all(&grid, params, slot)?;
                trace.forward_passes += 1;
                let mut attrs: Vec<Attribute> = Attribute::ALL.to_vec();
                rand::seq::SliceRandom::shuffle(attrs.as_mut_slice(), &mut rng);
                for attr in attrs {
                    if !is_open(&grid, slot, attr) {
                        continue;
                    }
                    let row = masked_row(&logits[attr.index()], grid.get(slot).get(attr));
                    let idx = top_p_sample(&row, cfg.temperature, cfg.top_p, &mut rng)?;
                    let d = decide(&mut grid, slot, attr, idx)?;
                    record(d, &mut trace);
                }
            }
        }
        pending.retain(|&(s, a)| is_open(&grid, s, a));
    }
    Ok((grid.collapse()?, trace))
}

pub fn generate<F: Scalar>(
    grid: &PriorGrid,
    params: &ModelParams<F>,
    cfg: &SamplerConfig,
) -> Result<(Excerpt, GenerationTrace), SampleError> {
    generate_with(grid, params, cfg, |_| {})
}

/// Applies recorded decisions to `grid` without the model.
pub fn replay(grid: &PriorGrid, decisions: &[Decision]) -> Result<Excerpt, SampleError> {
    let mut grid = grid.refine()?;
    for d in decisions {
        if !is_open(&grid, d.slot, d.attribute) {
            return Err(SampleError::Contract(format!(
                "slot {} {} is already determined",
                d.slot, d.attribute
            )));
        }
        decide(&mut grid, d.slot, d.attribute, d.value_index)?;
    }
    Ok(grid.collapse()?)
}
