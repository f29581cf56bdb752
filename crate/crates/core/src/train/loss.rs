use super::{AdamState, TrainError};
use crate::net::{record_forward, register, LogitGrid, ModelParams, Weights};
use crate::numerics::{ops, Scalar, Tape, Var};
use crate::score::{Attribute, Excerpt, PriorGrid};
use crate::Execution;

/// A training example: the prior the model sees and the excerpt it must
/// recover.
pub type BatchItem = (PriorGrid, Excerpt);

fn truth_indices(grid: &PriorGrid, truth: &Excerpt, attr: Attribute) -> Result<Vec<usize>, TrainError> {
    if truth.slot_count() != grid.slot_count() {
        return Err(TrainError::Contract(format!(
            "truth has {} slots, prior has {}",
            truth.slot_count(),
            grid.slot_count()
        )));
    }
    truth
        .slots()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let idx = s.index(attr);
            if grid.get(i).get(attr).contains(idx) {
                Ok(idx)
            } else {
                Err(TrainError::Contract(format!(
                    "slot {i}: true {attr} index {idx} is outside the prior"
                )))
            }
        })
        .collect()
}

/// Mean over slots and attributes of the masked cross-entropy.
pub fn smlm_loss<F: Scalar>(logits: &LogitGrid<F>, truth: &Excerpt) -> Result<F, TrainError> {
    let mut total = F::zero();
    for attr in Attribute::ALL {
        for (slot, idx) in truth_indices(&logits.prior, truth, attr)?.into_iter().enumerate() {
            total += ops::cross_entropy(logits.masked_row(slot, attr), idx)?;
        }
    }
    Ok(total / F::of((3 * truth.slot_count()) as f64))
}

/// Records the loss for one example. `grid` must already be normalised.
pub fn record_loss<F: Scalar>(
    tape: &mut Tape<F>,
    w: &Weights<Var>,
    grid: &PriorGrid,
    truth: &Excerpt,
) -> Result<Var, TrainError> {
    let targets: Vec<Vec<usize>> = Attribute::ALL
        .iter()
        .map(|&a| truth_indices(grid, truth, a))
        .collect::<Result<_, _>>()?;
    let (_, masked) = record_forward(tape, w, grid)?;
    let mut total: Option<Var> = None;
    for (logits, t) in masked.into_iter().zip(&targets) {
        let ce = tape.cross_entropy_sum(logits, t)?;
        total = Some(match total {
            None => ce,
            Some(acc) => tape.add(acc, ce)?,
        });
    }
    let scale = F::of(1.0 / (3 * truth.slot_count()) as f64);
    Ok(tape.scale(total.expect("three attributes"), scale))
}

/// Loss and its gradient with respect to every parameter.
pub fn loss_and_gradients<F: Scalar>(
    params: &ModelParams<F>,
    grid: &PriorGrid,
    truth: &Excerpt,
) -> Result<(F, ModelParams<F>), TrainError> {
    let grid = grid.normalise()?;
    let mut tape = Tape::new();
    let w = register(&mut tape, params);
    let loss = record_loss(&mut tape, &w, &grid, truth)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.gradients(loss)?.into_vec();
    let grads = ModelParams::<F>::from_sequence(params.config, grads).expect("one gradient per parameter");
    Ok((value, grads))
}

fn dump_batch(batch: &[BatchItem]) -> String {
    let mut s = String::new();
    for (i, (grid, truth)) in batch.iter().enumerate() {
        s.push_str(&format!("example {i} truth {:?}\n", truth.sorted_notes().iter().map(|n| n.triple()).collect::<Vec<_>>()));
        s.push_str(&grid.dump());
    }
    s
}

/// One Adam step on the mean batch loss. Per-example gradients may be computed
/// in parallel; they are summed in batch order. Returns the pre-update loss.
pub fn train_step(
    batch: &[BatchItem],
    params: &mut ModelParams<f32>,
    opt: &mut AdamState,
    lr: f32,
    exec: Execution,
) -> Result<f32, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Contract("empty batch".into()));
    }
    let results = exec.map(batch, |_, (grid, truth)| loss_and_gradients(params, grid, truth));
    let mut loss = 0.0f32;
    let mut sum: Option<ModelParams<f32>> = None;
    for r in results {
        let (l, g) = r?;
        loss += l;
        match sum.as_mut() {
            None => sum = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().into_iter().zip(g.iter()) {
                    a.add_scaled(b, 1.0);
                }
            }
        }
    }
    let n = batch.len() as f32;
    let loss = loss / n;
    let mut grads = sum.expect("non-empty batch");
    if !loss.is_finite() || !grads.all_finite() {
        return Err(TrainError::NonFinite(dump_batch(batch)));
    }
    for g in grads.iter_mut() {
        for v in g.data_mut() {
            *v /= n;
        }
    }
    opt.update(params, &grads, lr);
    Ok(loss)
}
