use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::numerics::{Scalar, Tensor};
use crate::score::Attribute;

/// Affine map `x W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub norm1_gain: T,
    pub norm1_shift: T,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub output: Linear<T>,
    pub norm2_gain: T,
    pub norm2_shift: T,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
}

/// Network weights. `T` is a tensor for stored values, or a tape handle while
/// a forward pass is being recorded.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub config: ModelConfig,
    /// One encoder per attribute, in [`Attribute::ALL`] order.
    pub encoders: Vec<Linear<T>>,
    pub layers: Vec<EncoderLayer<T>>,
    pub final_gain: T,
    pub final_shift: T,
    pub decoders: Vec<Linear<T>>,
}

pub type ModelParams<F = f32> = Weights<Tensor<F>>;

impl<T> Weights<T> {
    /// Every tensor in canonical order.
    pub fn iter(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for l in &self.encoders {
            out.extend([&l.weight, &l.bias]);
        }
        for layer in &self.layers {
            out.extend([&layer.norm1_gain, &layer.norm1_shift]);
            for l in [&layer.query, &layer.key, &layer.value, &layer.output] {
                out.extend([&l.weight, &l.bias]);
            }
            out.extend([&layer.norm2_gain, &layer.norm2_shift]);
            for l in [&layer.ffn_in, &layer.ffn_out] {
                out.extend([&l.weight, &l.bias]);
            }
        }
        out.extend([&self.final_gain, &self.final_shift]);
        for l in &self.decoders {
            out.extend([&l.weight, &l.bias]);
        }
        out
    }

    pub fn iter_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for l in &mut self.encoders {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        for layer in &mut self.layers {
            out.extend([&mut layer.norm1_gain, &mut layer.norm1_shift]);
            for l in [&mut layer.query, &mut layer.key, &mut layer.value, &mut layer.output] {
                out.extend([&mut l.weight, &mut l.bias]);
            }
            out.extend([&mut layer.norm2_gain, &mut layer.norm2_shift]);
            for l in [&mut layer.ffn_in, &mut layer.ffn_out] {
                out.extend([&mut l.weight, &mut l.bias]);
            }
        }
        out.extend([&mut self.final_gain, &mut self.final_shift]);
        for l in &mut self.decoders {
            out.extend([&mut l.weight, &mut l.bias]);
        }
        out
    }

    /// Tensor names in canonical order.
    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in Attribute::ALL {
            out.push(format!("encoder.{a}.weight"));
            out.push(format!("encoder.{a}.bias"));
        }
        for i in 0..self.layers.len() {
            out.push(format!("layer{i}.norm1.gain"));
            out.push(format!("layer{i}.norm1.shift"));
            for p in ["query", "key", "value", "output"] {
                out.push(format!("layer{i}.attention.{p}.weight"));
                out.push(format!("layer{i}.attention.{p}.bias"));
            }
            out.push(format!("layer{i}.norm2.gain"));
            out.push(format!("layer{i}.norm2.shift"));
            for p in ["ffn_in", "ffn_out"] {
                out.push(format!("layer{i}.{p}.weight"));
                out.push(format!("layer{i}.{p}.bias"));
            }
        }
        out.push("final_norm.gain".into());
        out.push("final_norm.shift".into());
        for a in Attribute::ALL {
            out.push(format!("decoder.{a}.weight"));
            out.push(format!("decoder.{a}.bias"));
        }
        out
    }

    /// Rebuilds the same structure from a canonical-order sequence.
    pub fn from_sequence<U>(config: ModelConfig, values: Vec<U>) -> Option<Weights<U>> {
        let mut it = values.into_iter();
        let mut next = || it.next();
        let linear = |next: &mut dyn FnMut() -> Option<U>| -> Option<Linear<U>> {
            Some(Linear {
                weight: next()?,
                bias: next()?,
            })
        };
        let mut encoders = Vec::new();
        for _ in 0..3 {
            encoders.push(linear(&mut next)?);
        }
        let mut layers = Vec::new();
        for _ in 0..config.num_layers {
            layers.push(EncoderLayer {
                norm1_gain: next()?,
                norm1_shift: next()?,
                query: linear(&mut next)?,
                key: linear(&mut next)?,
                value: linear(&mut next)?,
                output: linear(&mut next)?,
                norm2_gain: next()?,
                norm2_shift: next()?,
                ffn_in: linear(&mut next)?,
                ffn_out: linear(&mut next)?,
            });
        }
        let final_gain = next()?;
        let final_shift = next()?;
        let mut decoders = Vec::new();
        for _ in 0..3 {
            decoders.push(linear(&mut next)?);
        }
        if next().is_some() {
            return None;
        }
        Some(Weights {
            config,
            encoders,
            layers,
            final_gain,
            final_shift,
            decoders,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Weights<U> {
        let values: Vec<U> = self.iter().into_iter().map(&mut f).collect();
        Self::from_sequence(self.config, values).expect("same layout")
    }
}

impl<F: Scalar> Weights<Tensor<F>> {
    /// Expected shapes in canonical order.
    pub fn shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        let d = config.hidden_size;
        let f = config.ffn_width();
        let mut out = Vec::new();
        for a in Attribute::ALL {
            out.extend([vec![a.domain_size(), d], vec![d]]);
        }
        for _ in 0..config.num_layers {
            out.extend([vec![d], vec![d]]);
            for _ in 0..4 {
                out.extend([vec![d, d], vec![d]]);
            }
            out.extend([vec![d], vec![d]]);
            out.extend([vec![d, f], vec![f], vec![f, d], vec![d]]);
        }
        out.extend([vec![d], vec![d]]);
        for a in Attribute::ALL {
            out.extend([vec![d, a.domain_size()], vec![a.domain_size()]]);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.iter().iter().map(|t| t.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        self.map(|t| t.cast())
    }

    pub fn all_finite(&self) -> bool {
        self.iter().iter().all(|t| t.all_finite())
    }
}

/// Truncated normal `N(0, 0.02²)` cut at two standard deviations.
fn truncated_normal<F: Scalar, R: Rng>(shape: &[usize], rng: &mut R) -> Tensor<F> {
    const STD: f64 = 0.02;
    let normal = Normal::new(0.0, STD).expect("valid normal");
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * STD {
                break F::of(v);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Fresh parameters: random encoder, attention and FFN weights, zero biases,
/// zero decoders, unit norm gains.
pub fn init_params<F: Scalar, R: Rng>(config: &ModelConfig, rng: &mut R) -> ModelParams<F> {
    let d = config.hidden_size;
    let f = config.ffn_width();
    let random_linear = |i: usize, o: usize, rng: &mut R| Linear {
        weight: truncated_normal(&[i, o], rng),
        bias: Tensor::zeros(&[o]),
    };
    let encoders = Attribute::ALL
        .iter()
        .map(|a| random_linear(a.domain_size(), d, rng))
        .collect();
    let layers = (0..config.num_layers)
        .map(|_| EncoderLayer {
            norm1_gain: Tensor::ones(&[d]),
            norm1_shift: Tensor::zeros(&[d]),
            query: random_linear(d, d, rng),
            key: random_linear(d, d, rng),
            value: random_linear(d, d, rng),
            output: random_linear(d, d, rng),
            norm2_gain: Tensor::ones(&[d]),
            norm2_shift: Tensor::zeros(&[d]),
            ffn_in: random_linear(d, f, rng),
            ffn_out: random_linear(f, d, rng),
        })
        .collect();
    let decoders = Attribute::ALL
        .iter()
        .map(|a| Linear {
            weight: Tensor::zeros(&[d, a.domain_size()]),
            bias: Tensor::zeros(&[a.domain_size()]),
        })
        .collect();
    Weights {
        config: *config,
        encoders,
        layers,
        final_gain: Tensor::ones(&[d]),
        final_shift: Tensor::zeros(&[d]),
        decoders,
    }
}
