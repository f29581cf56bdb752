use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::io::write_atomic;
use crate::net::checkpoint::{put_config, put_u32, put_weights, read_config, read_weights, Reader};
use crate::net::{ModelError, ModelParams};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates with the same layout as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: ModelParams<f32>,
    pub v: ModelParams<f32>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams<f32>, config: AdamConfig) -> Self {
        let zeros = params.map(|t| Tensor::zeros(t.shape()));
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Bias-corrected Adam update.
    pub fn update(&mut self, params: &mut ModelParams<f32>, grads: &ModelParams<f32>, lr: f32) {
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let tensors = params
            .iter_mut()
            .into_iter()
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
            .zip(grads.iter());
        for (((p, m), v), g) in tensors {
            let (p, m, v) = (p.data_mut(), m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + epsilon);
            }
        }
    }
}

const MAGIC: &[u8; 4] = b"SMAD";
const VERSION: u32 = 1;

/// Layout: "SMAD", version, model config, step (low then high `u32`), beta1,
/// beta2, epsilon as `f32` bits, then the first and second moment tables in
/// checkpoint format.
pub fn encode_optimizer(state: &AdamState) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, VERSION);
    put_config(&mut out, &state.m.config);
    put_u32(&mut out, state.step as u32);
    put_u32(&mut out, (state.step >> 32) as u32);
    for f in [state.config.beta1, state.config.beta2, state.config.epsilon] {
        put_u32(&mut out, f.to_bits());
    }
    put_weights(&mut out, &state.m);
    put_weights(&mut out, &state.v);
    out
}

pub fn decode_optimizer(bytes: &[u8]) -> Result<AdamState, ModelError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported optimizer version {version}")));
    }
    let cfg = read_config(&mut r)?;
    let step = r.u32()? as u64 | (r.u32()? as u64) << 32;
    let config = AdamConfig {
        beta1: f32::from_bits(r.u32()?),
        beta2: f32::from_bits(r.u32()?),
        epsilon: f32::from_bits(r.u32()?),
    };
    let m = read_weights(&mut r, cfg)?;
    let v = read_weights(&mut r, cfg)?;
    r.finish()?;
    Ok(AdamState { config, m, v, step })
}

pub fn write_optimizer(path: &Path, state: &AdamState) -> Result<(), TrainError> {
    write_atomic(path, &encode_optimizer(state)).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
}

pub fn read_optimizer(path: &Path) -> Result<AdamState, TrainError> {
    let bytes = std::fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
    Ok(decode_optimizer(&bytes)?)
}
