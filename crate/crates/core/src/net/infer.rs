//! Tape-free inference for the sampler. Only the queried slot's row goes
//! through the last layer's attention output and FFN; every other slot is
//! needed there only as a key and value.

use super::model::NORM_EPS;
use super::{EncoderLayer, ModelParams};
use crate::numerics::ops::{dot, gelu, layer_norm_row, matmul_into, softmax_in_place};
use crate::numerics::Scalar;
use crate::score::{Attribute, PriorGrid};

/// `x[rows×in] · W + b`.
fn linear<F: Scalar>(x: &[F], rows: usize, w: &super::Linear<crate::numerics::Tensor<F>>) -> Vec<F> {
    let (k, n) = w.weight.dims2();
    let mut out = Vec::with_capacity(rows * n);
    for _ in 0..rows {
        out.extend_from_slice(w.bias.data());
    }
    matmul_into(x, w.weight.data(), &mut out, rows, k, n);
    out
}

fn norm_rows<F: Scalar>(x: &[F], d: usize, gain: &[F], shift: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for (src, dst) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        layer_norm_row(src, gain, shift, F::of(NORM_EPS), dst);
    }
    out
}

/// Attention for the query rows in `q` (`rows × d`) against all `T` keys.
fn attend<F: Scalar>(q: &[F], k: &[F], v: &[F], slots: usize, heads: usize, d: usize) -> Vec<F> {
    let rows = q.len() / d;
    let dh = d / heads;
    let scale = F::of(1.0 / (dh as f64).sqrt());
    let mut out = vec![F::zero(); rows * d];
    let mut scores = vec![F::zero(); slots];
    for r in 0..rows {
        for h in 0..heads {
            let qh = &q[r * d + h * dh..r * d + (h + 1) * dh];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qh, &k[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
            }
            softmax_in_place(&mut scores);
            let o = &mut out[r * d + h * dh..r * d + (h + 1) * dh];
            for (j, &a) in scores.iter().enumerate() {
                for (ov, &vv) in o.iter_mut().zip(&v[j * d + h * dh..j * d + (h + 1) * dh]) {
                    *ov += a * vv;
                }
            }
        }
    }
    out
}

/// One pre-norm block. `x` holds all slots; the block's output is produced
/// only for the slots listed in `keep` (all slots when `None`).
fn block<F: Scalar>(x: &[F], layer: &EncoderLayer<crate::numerics::Tensor<F>>, slots: usize, heads: usize, keep: Option<usize>) -> Vec<F> {
    let d = x.len() / slots;
    let h = norm_rows(x, d, layer.norm1_gain.data(), layer.norm1_shift.data());
    let k = linear(&h, slots, &layer.key);
    let v = linear(&h, slots, &layer.value);
    let (mut x, hq, rows) = match keep {
        None => (x.to_vec(), h, slots),
        Some(s) => (x[s * d..(s + 1) * d].to_vec(), h[s * d..(s + 1) * d].to_vec(), 1),
    };
    let q = linear(&hq, rows, &layer.query);
    let a = attend(&q, &k, &v, slots, heads, d);
    let o = linear(&a, rows, &layer.output);
    for (xv, ov) in x.iter_mut().zip(&o) {
        *xv += *ov;
    }
    let h2 = norm_rows(&x, d, layer.norm2_gain.data(), layer.norm2_shift.data());
    let mut f = linear(&h2, rows, &layer.ffn_in);
    for v in f.iter_mut() {
        *v = gelu(*v);
    }
    let f = linear(&f, rows, &layer.ffn_out);
    for (xv, fv) in x.iter_mut().zip(&f) {
        *xv += *fv;
    }
    x
}

/// Raw logits of every attribute for one slot. `grid` must be normalised and
/// match the model's slot count.
pub(crate) fn slot_raw_logits<F: Scalar>(grid: &PriorGrid, params: &ModelParams<F>, slot: usize) -> [Vec<F>; 3] {
    let cfg = params.config;
    let (t, d) = (grid.slot_count(), cfg.hidden_size);
    let mut x = vec![F::zero(); t * d];
    for (prior, row) in grid.priors().iter().zip(x.chunks_exact_mut(d)) {
        for (a, enc) in Attribute::ALL.iter().zip(&params.encoders) {
            for (r, b) in row.iter_mut().zip(enc.bias.data()) {
                *r += *b;
            }
            for bit in prior.get(*a).iter() {
                for (r, w) in row.iter_mut().zip(enc.weight.row(bit)) {
                    *r += *w;
                }
            }
        }
    }
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        x = block(&x, layer, t, cfg.num_heads, (i == last).then_some(slot));
    }
    let h = norm_rows(&x, d, params.final_gain.data(), params.final_shift.data());
    std::array::from_fn(|a| linear(&h, 1, &params.decoders[a]))
}
