use super::{ModelError, ModelParams, Weights};
use crate::numerics::{ops, Scalar, Tape, Tensor, Var};
use crate::score::{Attribute, PriorGrid, SlotPrior};

/// Subtracted from the logits of disallowed values. Large enough that the
/// shifted exponent underflows to exactly zero in `f32`.
pub const MASK_OFFSET: f64 = 1e9;

pub(super) const NORM_EPS: f64 = 1e-5;

/// Per-slot, per-attribute logits from one forward pass.
#[derive(Clone, Debug)]
pub struct LogitGrid<F = f32> {
    /// The normalised priors the logits were masked with.
    pub prior: PriorGrid,
    /// `[T × V_a]` per attribute, in [`Attribute::ALL`] order.
    pub raw: Vec<Tensor<F>>,
    pub masked: Vec<Tensor<F>>,
}

impl<F: Scalar> LogitGrid<F> {
    pub fn masked_row(&self, slot: usize, attr: Attribute) -> &[F] {
        self.masked[attr.index()].row(slot)
    }

    pub fn raw_row(&self, slot: usize, attr: Attribute) -> &[F] {
        self.raw[attr.index()].row(slot)
    }

    /// Masked softmax for one slot and attribute.
    pub fn probabilities(&self, slot: usize, attr: Attribute) -> Vec<F> {
        ops::softmax(self.masked_row(slot, attr), F::one()).expect("positive temperature")
    }
}

/// `0` where the prior allows a value, `-MASK_OFFSET` elsewhere; `[T × V]`.
pub fn mask_offsets<F: Scalar>(grid: &PriorGrid, attr: Attribute) -> Tensor<F> {
    let v = attr.domain_size();
    let mut data = Vec::with_capacity(grid.slot_count() * v);
    for p in grid.priors() {
        let m = p.get(attr);
        data.extend((0..v).map(|i| if m.contains(i) { F::zero() } else { F::of(-MASK_OFFSET) }));
    }
    Tensor::new(&[grid.slot_count(), v], data).expect("shape")
}

fn multi_hot<F: Scalar>(grid: &PriorGrid, attr: Attribute) -> Tensor<F> {
    let data: Vec<F> = grid
        .priors()
        .iter()
        .flat_map(|p| p.get(attr).to_multi_hot::<F>())
        .collect();
    Tensor::new(&[grid.slot_count(), attr.domain_size()], data).expect("shape")
}

/// Slot embedding: the sum over attributes of `m_a W_a + b_a`, with `m_a` the
/// raw 0/1 mask.
pub fn embed_slot<F: Scalar>(prior: &SlotPrior, params: &ModelParams<F>) -> Tensor<F> {
    let d = params.config.hidden_size;
    let mut out = Tensor::zeros(&[d]);
    for (a, enc) in Attribute::ALL.iter().zip(&params.encoders) {
        let row = Tensor::new(&[1, a.domain_size()], prior.get(*a).to_multi_hot()).expect("shape");
        let e = ops::affine(&row, &enc.weight, &enc.bias).expect("encoder shapes");
        out.add_scaled(&e.reshape(&[d]).expect("vector"), F::one());
    }
    out
}

/// Registers every parameter as a trainable leaf.
pub fn register<F: Scalar>(tape: &mut Tape<F>, params: &ModelParams<F>) -> Weights<Var> {
    params.map(|t| tape.param(t.clone()))
}

fn check_grid(grid: &PriorGrid, params_slots: usize) -> Result<PriorGrid, ModelError> {
    if grid.slot_count() != params_slots {
        return Err(ModelError::SlotCount {
            expected: params_slots,
            got: grid.slot_count(),
        });
    }
    Ok(grid.normalise()?)
}

/// Records the encoder trunk and returns the final normalised hidden states
/// `[T × d]`. `grid` must already be normalised.
pub fn record_trunk<F: Scalar>(
    tape: &mut Tape<F>,
    w: &Weights<Var>,
    grid: &PriorGrid,
) -> Result<Var, ModelError> {
    let cfg = w.config;
    let eps = F::of(NORM_EPS);

    let mut x: Option<Var> = None;
    for (a, enc) in Attribute::ALL.iter().zip(&w.encoders) {
        let m = tape.constant(multi_hot(grid, *a));
        let e = tape.affine(m, enc.weight, enc.bias)?;
        x = Some(match x {
            None => e,
            Some(acc) => tape.add(acc, e)?,
        });
    }
    let mut x = x.expect("three attributes");

    let dh = cfg.head_dim();
    let scale = F::of(1.0 / (dh as f64).sqrt());
    for layer in &w.layers {
        let h = tape.layer_norm_rows(x, layer.norm1_gain, layer.norm1_shift, eps)?;
        let q = tape.affine(h, layer.query.weight, layer.query.bias)?;
        let k = tape.affine(h, layer.key.weight, layer.key.bias)?;
        let v = tape.affine(h, layer.value.weight, layer.value.bias)?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for head in 0..cfg.num_heads {
            let (qh, kh, vh) = if cfg.num_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, head * dh, dh)?,
                    tape.slice_cols(k, head * dh, dh)?,
                    tape.slice_cols(v, head * dh, dh)?,
                )
            };
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scores);
            heads.push(tape.matmul(attn, vh)?);
        }
        let joined = if heads.len() == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        let o = tape.affine(joined, layer.output.weight, layer.output.bias)?;
        x = tape.add(x, o)?;

        let h = tape.layer_norm_rows(x, layer.norm2_gain, layer.norm2_shift, eps)?;
        let f = tape.affine(h, layer.ffn_in.weight, layer.ffn_in.bias)?;
        let f = tape.gelu(f);
        let f = tape.affine(f, layer.ffn_out.weight, layer.ffn_out.bias)?;
        x = tape.add(x, f)?;
    }
    Ok(tape.layer_norm_rows(x, w.final_gain, w.final_shift, eps)?)
}

/// Records the full forward pass; returns `(raw, masked)` logit vars per
/// attribute. `grid` must already be normalised.
pub fn record_forward<F: Scalar>(
    tape: &mut Tape<F>,
    w: &Weights<Var>,
    grid: &PriorGrid,
) -> Result<(Vec<Var>, Vec<Var>), ModelError> {
    let hidden = record_trunk(tape, w, grid)?;
    let mut raw = Vec::with_capacity(3);
    let mut masked = Vec::with_capacity(3);
    for (a, dec) in Attribute::ALL.iter().zip(&w.decoders) {
        let r = tape.affine(hidden, dec.weight, dec.bias)?;
        masked.push(tape.add_const(r, &mask_offsets(grid, *a))?);
        raw.push(r);
    }
    Ok((raw, masked))
}

/// Normalises every slot, runs the network and masks the logits with the
/// normalised priors.
pub fn forward<F: Scalar>(
    grid: &PriorGrid,
    params: &ModelParams<F>,
) -> Result<LogitGrid<F>, ModelError> {
    let prior = check_grid(grid, params.config.slot_count)?;
    let mut tape = Tape::new();
    let w = register(&mut tape, params);
    let (raw, masked) = record_forward(&mut tape, &w, &prior)?;
    Ok(LogitGrid {
        prior,
        raw: raw.iter().map(|&v| tape.value(v).clone()).collect(),
        masked: masked.iter().map(|&v| tape.value(v).clone()).collect(),
    })
}

/// Masked logits for a single slot and attribute, through the tape-free
/// inference path. Matches the corresponding row of [`forward`] up to float
/// rounding.
pub fn forward_slot<F: Scalar>(
    grid: &PriorGrid,
    params: &ModelParams<F>,
    slot: usize,
    attr: Attribute,
) -> Result<Vec<F>, ModelError> {
    Ok(forward_slot_all(grid, params, slot)?.swap_remove(attr.index()))
}

/// Masked logits for every attribute of one slot.
pub fn forward_slot_all<F: Scalar>(
    grid: &PriorGrid,
    params: &ModelParams<F>,
    slot: usize,
) -> Result<Vec<Vec<F>>, ModelError> {
    let prior = check_grid(grid, params.config.slot_count)?;
    if slot >= prior.slot_count() {
        return Err(ModelError::SlotCount {
            expected: prior.slot_count(),
            got: slot,
        });
    }
    let raw = super::infer::slot_raw_logits(&prior, params, slot);
    Ok(raw
        .into_iter()
        .zip(Attribute::ALL)
        .map(|(logits, attr)| {
            let mask = prior.get(slot).get(attr);
            logits
                .into_iter()
                .enumerate()
                .map(|(i, z)| if mask.contains(i) { z } else { z - F::of(MASK_OFFSET) })
                .collect()
        })
        .collect())
}
