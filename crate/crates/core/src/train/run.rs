use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_optimizer, train_step, write_optimizer, AdamConfig, AdamState, TrainError};
use crate::io::{write_atomic, DatasetRecord};
use crate::masking::{soft_mask, MaskSchemeConfig};
use crate::net::{forward, init_params, read_checkpoint, write_checkpoint, ModelConfig, ModelParams};
use crate::score::Excerpt;
use crate::{rng, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lr_decay_per_epoch: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Seed for the masks used to score the validation split.
    pub eval_seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            lr_decay_per_epoch: 0.95,
            batch_size: 16,
            max_epochs: 10,
            seed: 0,
            validation_fraction: 0.05,
            eval_seed: 1234,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learningRate must be positive");
        }
        if !(self.lr_decay_per_epoch > 0.0 && self.lr_decay_per_epoch.is_finite()) {
            return bad("lrDecayPerEpoch must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batchSize and maxEpochs must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validationFraction must be in (0, 1)");
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (zero-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f32 {
        (self.learning_rate * self.lr_decay_per_epoch.powi(epoch as i32)) as f32
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Continue from the state in the output directory if there is one.
    pub resume: bool,
    pub execution: Execution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_nll: f64,
    pub val_nll: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub params: ModelParams<f32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct TrainState {
    next_epoch: usize,
    best_epoch: usize,
    best_val_nll: f64,
    model: ModelConfig,
    train: TrainConfig,
}

/// Validation membership depends only on the source id, so re-preparing a
/// corpus never moves an example across the split.
pub fn is_validation(source_id: &str, fraction: f64) -> bool {
    let digest = Sha256::digest(source_id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(b) as f64 / 2f64.powi(64)) < fraction
}

/// Mean masked NLL with masks drawn from `eval_seed`.
pub fn evaluate(
    data: &[Excerpt],
    params: &ModelParams<f32>,
    eval_seed: u64,
    exec: Execution,
) -> Result<f64, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Contract("empty evaluation set".into()));
    }
    let losses = exec.map(data, |i, e| {
        let grid = soft_mask(e, &MaskSchemeConfig::default(), &mut rng::stream(eval_seed, &[rng::tag("eval"), i as u64]));
        super::smlm_loss(&forward(&grid, params)?, e)
    });
    let mut total = 0.0f64;
    for l in losses {
        total += l? as f64;
    }
    Ok(total / data.len() as f64)
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> TrainError {
    TrainError::Io(format!("{}: {e}", path.display()))
}

/// Trains for `max_epochs`, writing after every epoch:
/// `last.smlm`, `optimizer.bin`, `best.smlm` (lowest validation NLL so far),
/// `metrics.jsonl` (one line per epoch) and `train_state.json`.
pub fn run_training(
    records: &[DatasetRecord],
    tcfg: &TrainConfig,
    mcfg: &ModelConfig,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<TrainReport, TrainError> {
    tcfg.validate()?;
    mcfg.validate().map_err(TrainError::Config)?;
    if records.is_empty() {
        return Err(TrainError::Config("empty dataset".into()));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for r in records {
        let e = r.to_excerpt(mcfg.slot_count)?;
        if is_validation(&r.source_id, tcfg.validation_fraction) {
            val.push(e);
        } else {
            train.push(e);
        }
    }
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config(format!(
            "split produced {} training and {} validation examples",
            train.len(),
            val.len()
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let state_path = out_dir.join("train_state.json");
    let last_path = out_dir.join("last.smlm");
    let best_path = out_dir.join("best.smlm");
    let opt_path = out_dir.join("optimizer.bin");
    let metrics_path = out_dir.join("metrics.jsonl");

    let (mut params, mut opt, mut state, mut metrics) = if opts.resume && state_path.exists() {
        let text = std::fs::read_to_string(&state_path).map_err(|e| io_err(&state_path, e))?;
        let state: TrainState = serde_json::from_str(&text).map_err(|e| io_err(&state_path, e))?;
        let same_train = TrainConfig {
            max_epochs: tcfg.max_epochs,
            ..state.train
        } == *tcfg;
        if state.model != *mcfg || !same_train {
            return Err(TrainError::Config("resume state was written with a different configuration".into()));
        }
        let params = read_checkpoint(&last_path)?;
        let opt = read_optimizer(&opt_path)?;
        let metrics: Vec<EpochMetrics> = std::fs::read_to_string(&metrics_path)
            .map_err(|e| io_err(&metrics_path, e))?
            .lines()
            .take(state.next_epoch)
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| io_err(&metrics_path, e))?;
        log::info!("resuming at epoch {}", state.next_epoch);
        (params, opt, state, metrics)
    } else {
        let params: ModelParams<f32> = init_params(mcfg, &mut rng::stream(tcfg.seed, &[rng::tag("init")]));
        let opt = AdamState::new(&params, tcfg.adam);
        let state = TrainState {
            next_epoch: 0,
            best_epoch: 0,
            best_val_nll: f64::INFINITY,
            model: *mcfg,
            train: *tcfg,
        };
        (params, opt, state, Vec::new())
    };
    state.train = *tcfg;

    let started = Instant::now();
    let mask_cfg = MaskSchemeConfig::default();
    let exec = opts.execution;
    for epoch in state.next_epoch..tcfg.max_epochs {
        let lr = tcfg.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng::stream(tcfg.seed, &[rng::tag("shuffle"), epoch as u64]));
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(tcfg.batch_size) {
            let batch = exec.map(chunk, |_, &i| {
                let mut r = rng::stream(tcfg.seed, &[rng::tag("mask"), epoch as u64, i as u64]);
                (soft_mask(&train[i], &mask_cfg, &mut r), train[i].clone())
            });
            let loss = train_step(&batch, &mut params, &mut opt, lr, exec)?;
            loss_sum += loss as f64 * chunk.len() as f64;
        }
        let train_nll = loss_sum / train.len() as f64;
        let val_nll = evaluate(&val, &params, tcfg.eval_seed, exec)?;
        write_checkpoint(&last_path, &params)?;
        write_optimizer(&opt_path, &opt)?;
        if val_nll < state.best_val_nll {
            state.best_val_nll = val_nll;
            state.best_epoch = epoch;
            write_checkpoint(&best_path, &params)?;
        }
        metrics.push(EpochMetrics {
            epoch,
            lr: lr as f64,
            train_nll,
            val_nll,
            wall_time: started.elapsed().as_secs_f64(),
        });
        let lines: String = metrics
            .iter()
            .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
            .collect();
        write_atomic(&metrics_path, lines.as_bytes()).map_err(|e| io_err(&metrics_path, e))?;
        state.next_epoch = epoch + 1;
        let text = serde_json::to_string_pretty(&state).expect("state serializes");
        write_atomic(&state_path, text.as_bytes()).map_err(|e| io_err(&state_path, e))?;
        log::info!("epoch {epoch}: lr {lr:.3e} train {train_nll:.4} val {val_nll:.4}");
    }

    Ok(TrainReport {
        epochs: metrics,
        best_epoch: state.best_epoch,
        best_val_nll: state.best_val_nll,
        params,
    })
}
