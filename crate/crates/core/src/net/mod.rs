//! The SMLM network: per-attribute encoders summed into slot embeddings, a
//! pre-norm transformer encoder over the slot set (no positional encoding),
//! per-attribute decoders, and logit masking against the normalised priors.

pub mod checkpoint;
mod config;
mod infer;
mod model;
mod params;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use config::ModelConfig;
pub use model::{
    embed_slot, forward, forward_slot, forward_slot_all, mask_offsets, record_forward, record_trunk, register,
    LogitGrid, MASK_OFFSET,
};
pub use params::{init_params, EncoderLayer, Linear, ModelParams, Weights};

use crate::numerics::NumericsError;
use crate::score::ScoreError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("grid has {got} slots, model expects {expected}")]
    SlotCount { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masking::{soft_mask, MaskSchemeConfig};
    use crate::numerics::{Tape, Tensor};
    use crate::rng;
    use crate::score::{Attribute, AttributeMask, Excerpt, Note, PriorGrid, SlotPrior};
    use rand::seq::SliceRandom;

    fn tiny(slots: usize) -> ModelConfig {
        ModelConfig {
            hidden_size: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_multiplier: 4,
            slot_count: slots,
        }
    }

    fn fixture(slots: usize) -> Excerpt {
        let notes = [Note::new(3, 0, 4).unwrap(), Note::new(10, 16, 8).unwrap()];
        Excerpt::from_notes(&notes, slots).unwrap()
    }

    #[test]
    fn desk_parameter_count_matches_closed_form() {
        let cfg = ModelConfig::desk();
        let p: ModelParams = init_params(&cfg, &mut rng::stream(1, &[]));
        // d = 64, ffn = 256, vocabulary 37 + 65 + 64 = 166:
        // encoders 166*64 + 3*64, per layer 4*(64*64+64) + 4*64 + 2*64*256 + 256 + 64,
        // final norm 2*64, decoders 64*166 + 166.
        let expected = 166 * 64 + 3 * 64 + 2 * (4 * (64 * 64 + 64) + 4 * 64 + 2 * 64 * 256 + 256 + 64)
            + 2 * 64
            + 64 * 166
            + 166;
        assert_eq!(expected, 121_702);
        assert_eq!(cfg.parameter_count(), expected);
        assert_eq!(p.parameter_count(), expected);
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a: ModelParams = init_params(&ModelConfig::desk(), &mut rng::stream(9, &[]));
        let b: ModelParams = init_params(&ModelConfig::desk(), &mut rng::stream(9, &[]));
        assert_eq!(encode_checkpoint(&a), encode_checkpoint(&b));
        assert!(a.decoders.iter().all(|d| d.weight.data().iter().all(|&v| v == 0.0)));
        let max = a.layers[0].query.weight.data().iter().fold(0f32, |m, v| m.max(v.abs()));
        assert!(max <= 0.04 && max > 0.0);
    }

    #[test]
    fn fresh_model_is_uniform_over_allowed_values() {
        let cfg = tiny(4);
        let p: ModelParams = init_params(&cfg, &mut rng::stream(2, &[]));
        let mut grid = PriorGrid::full(4);
        let mut prior = SlotPrior::full();
        prior.set(AttributeMask::from_indices(Attribute::Pitch, [0, 5, 9]));
        grid.set(1, prior);
        let logits = forward(&grid, &p).unwrap();
        let probs = logits.probabilities(1, Attribute::Pitch);
        for (i, &pr) in probs.iter().enumerate() {
            let expected = if [0, 5, 9].contains(&i) { 1.0 / 3.0 } else { 0.0 };
            assert!((pr - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn embed_slot_is_bias_sum_for_zero_weights() {
        let cfg = tiny(2);
        let mut p: ModelParams = init_params(&cfg, &mut rng::stream(2, &[]));
        for (k, enc) in p.encoders.iter_mut().enumerate() {
            enc.weight = Tensor::zeros(enc.weight.shape());
            enc.bias = Tensor::full(&[8], (k + 1) as f32);
        }
        let e = embed_slot(&SlotPrior::full(), &p);
        assert!(e.data().iter().all(|&v| v == 6.0));
    }

    #[test]
    fn embed_slot_widening_adds_rows() {
        let cfg = tiny(2);
        let p: ModelParams<f64> = init_params(&cfg, &mut rng::stream(4, &[]));
        let narrow = crate::score::one_hot_prior(&fixture(2).slots()[0]);
        let mut wide = narrow;
        wide.set(narrow.get(Attribute::Onset).union(&AttributeMask::only(Attribute::Onset, 7)));
        let diff: Vec<f64> = embed_slot(&wide, &p)
            .data()
            .iter()
            .zip(embed_slot(&narrow, &p).data())
            .map(|(a, b)| a - b)
            .collect();
        let row = p.encoders[1].weight.row(7);
        for (d, r) in diff.iter().zip(row) {
            assert!((d - r).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_slot_golden_tiny() {
        // d = 4; W[i][j] = (i + 1) * 0.01 + j * 0.001 for every attribute,
        // biases 0.5 * (attribute + 1).
        let cfg = ModelConfig {
            hidden_size: 4,
            num_layers: 1,
            num_heads: 1,
            ffn_multiplier: 1,
            slot_count: 1,
        };
        let mut p: ModelParams<f64> = init_params(&cfg, &mut rng::stream(0, &[]));
        for (k, (a, enc)) in Attribute::ALL.iter().zip(p.encoders.iter_mut()).enumerate() {
            let v = a.domain_size();
            let data = (0..v)
                .flat_map(|i| (0..4).map(move |j| (i + 1) as f64 * 0.01 + j as f64 * 0.001))
                .collect();
            enc.weight = Tensor::new(&[v, 4], data).unwrap();
            enc.bias = Tensor::full(&[4], 0.5 * (k + 1) as f64);
        }
        let prior = SlotPrior::new(
            AttributeMask::from_indices(Attribute::Pitch, [0, 2]),
            AttributeMask::only(Attribute::Onset, 4),
            AttributeMask::from_indices(Attribute::Duration, [1, 63]),
        );
        // Scalar loop: rows {1,3} + {5} + {2,64} plus bias 3.0.
        let expected: Vec<f64> = (0..4)
            .map(|j| {
                let w = |i: usize| (i + 1) as f64 * 0.01 + j as f64 * 0.001;
                w(0) + w(2) + w(4) + w(1) + w(63) + 3.0
            })
            .collect();
        let e = embed_slot(&prior, &p);
        for (a, b) in e.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((expected[0] - 3.75).abs() < 1e-12);
    }

    #[test]
    fn one_hot_grid_saturates() {
        let cfg = ModelConfig {
            slot_count: 6,
            ..ModelConfig::desk()
        };
        let mut p: ModelParams = init_params(&cfg, &mut rng::stream(3, &[]));
        // Non-zero decoders so the check is not trivially uniform.
        for (k, dec) in p.decoders.iter_mut().enumerate() {
            let n = dec.weight.len();
            dec.weight = Tensor::new(dec.weight.shape(), (0..n).map(|i| ((i * 7 + k) % 13) as f32 * 0.3).collect()).unwrap();
        }
        let e = fixture(6);
        let logits = forward(&PriorGrid::from_excerpt(&e), &p).unwrap();
        for (slot, s) in e.slots().iter().enumerate() {
            for a in Attribute::ALL {
                let probs = logits.probabilities(slot, a);
                assert!(probs[s.index(a)] >= 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn forward_slot_matches_full_forward() {
        let cfg = tiny(5);
        let mut p: ModelParams = init_params(&cfg, &mut rng::stream(8, &[]));
        for dec in p.decoders.iter_mut() {
            let n = dec.weight.len();
            dec.weight = Tensor::new(dec.weight.shape(), (0..n).map(|i| (i % 5) as f32 * 0.1 - 0.2).collect()).unwrap();
        }
        let g = soft_mask(&fixture(5), &MaskSchemeConfig::default(), &mut rng::stream(1, &[]));
        let full = forward(&g, &p).unwrap();
        for a in Attribute::ALL {
            let single = forward_slot(&g, &p, 2, a).unwrap();
            for (x, y) in single.iter().zip(full.masked_row(2, a)) {
                assert!((x - y).abs() <= 1e-5 * y.abs().max(1.0), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let cfg = ModelConfig {
            slot_count: 16,
            ..ModelConfig::desk()
        };
        let mut p: ModelParams = init_params(&cfg, &mut rng::stream(6, &[]));
        for dec in p.decoders.iter_mut() {
            let n = dec.weight.len();
            dec.weight = Tensor::new(dec.weight.shape(), (0..n).map(|i| ((i * 31) % 17) as f32 * 0.05 - 0.4).collect()).unwrap();
        }
        let mut r = rng::stream(7, &[]);
        let g = soft_mask(&fixture(16), &MaskSchemeConfig::default(), &mut r);
        let mut perm: Vec<usize> = (0..16).collect();
        perm.shuffle(&mut r);
        let a = forward(&g, &p).unwrap();
        let b = forward(&g.permuted(&perm), &p).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for attr in Attribute::ALL {
                for (x, y) in a.raw_row(src, attr).iter().zip(b.raw_row(i, attr)) {
                    assert!((x - y).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn infeasible_grid_is_an_error() {
        let cfg = tiny(2);
        let p: ModelParams = init_params(&cfg, &mut rng::stream(2, &[]));
        let mut g = PriorGrid::full(2);
        g.set(
            0,
            SlotPrior::new(
                AttributeMask::undefined_only(Attribute::Pitch),
                AttributeMask::only(Attribute::Onset, 3),
                AttributeMask::full(Attribute::Duration),
            ),
        );
        assert!(matches!(forward(&g, &p), Err(ModelError::Score(_))));
        assert!(matches!(forward(&PriorGrid::full(3), &p), Err(ModelError::SlotCount { .. })));
    }

    #[test]
    fn register_then_record_reaches_every_parameter() {
        let cfg = tiny(3);
        let p: ModelParams<f64> = init_params(&cfg, &mut rng::stream(2, &[]));
        let mut tape = Tape::new();
        let w = register(&mut tape, &p);
        let grid = soft_mask(&fixture(3), &MaskSchemeConfig::default(), &mut rng::stream(3, &[]));
        let (raw, _) = record_forward(&mut tape, &w, &grid).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!(tape.value(raw[1]).shape(), &[3, 65]);
    }
}
