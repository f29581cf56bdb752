use serde::{Deserialize, Serialize};

use crate::score::{Attribute, DEFAULT_SLOTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    #[serde(default = "default_ffn_multiplier")]
    pub ffn_multiplier: usize,
    #[serde(default = "default_slots")]
    pub slot_count: usize,
}

fn default_ffn_multiplier() -> usize {
    4
}

fn default_slots() -> usize {
    DEFAULT_SLOTS
}

impl ModelConfig {
    /// Small model that trains on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            hidden_size: 64,
            num_layers: 2,
            num_heads: 2,
            ffn_multiplier: 4,
            slot_count: DEFAULT_SLOTS,
        }
    }

    /// Full-size model: 768 hidden, 8 layers, 8 heads.
    pub fn paper() -> Self {
        Self {
            hidden_size: 768,
            num_layers: 8,
            num_heads: 8,
            ffn_multiplier: 4,
            slot_count: DEFAULT_SLOTS,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hidden_size == 0 || self.num_heads == 0 || self.hidden_size % self.num_heads != 0 {
            return Err(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.hidden_size, self.num_heads
            ));
        }
        if self.num_layers == 0 || self.ffn_multiplier == 0 || self.slot_count == 0 {
            return Err("layers, ffn multiplier and slot count must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn ffn_width(&self) -> usize {
        self.hidden_size * self.ffn_multiplier
    }

    /// Closed-form parameter count; the slot count does not enter because the
    /// network has no positional parameters.
    pub fn parameter_count(&self) -> usize {
        let d = self.hidden_size;
        let f = self.ffn_width();
        let vocab: usize = Attribute::ALL.iter().map(|a| a.domain_size()).sum();
        let encoders = vocab * d + 3 * d;
        let attention = 4 * (d * d + d);
        let norms = 2 * 2 * d;
        let ffn = d * f + f + f * d + d;
        let decoders = d * vocab + vocab;
        encoders + self.num_layers * (attention + norms + ffn) + 2 * d + decoders
    }
}
