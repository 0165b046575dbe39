use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::TcnModel;
use super::optim::{adam_step, mse_loss, AdamConfig, AdamState};
use super::{Mode, Tensor3, TcnError};
use crate::fusion::FusedDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Drives the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Mean over the epoch's mini-batches, weighted by batch size.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

fn gather(x: &Tensor3, idx: &[usize]) -> Tensor3 {
    let stride = x.t * x.c;
    let mut data = Vec::with_capacity(idx.len() * stride);
    for &i in idx {
        data.extend_from_slice(&x.data[i * stride..(i + 1) * stride]);
    }
    Tensor3 {
        n: idx.len(),
        t: x.t,
        c: x.c,
        data,
    }
}

/// Splits `order` into mini-batches, folding a trailing single-item batch
/// into its predecessor so batch norm always has more than one sample.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size.max(1)).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

/// Mean squared error of inference-mode predictions.
pub fn evaluate_loss(model: &TcnModel, x: &Tensor3, y: &[f64]) -> Result<f64, TcnError> {
    let p = model.predict(x)?;
    Ok(mse_loss(&p, y)?.0)
}

/// Mini-batch Adam over shuffled samples. Batch-norm running statistics
/// are recomputed from the training data once the last epoch ends.
pub fn train(
    model: &mut TcnModel,
    x: &Tensor3,
    y: &[f64],
    val: Option<(&Tensor3, &[f64])>,
    schedule: &TrainSchedule,
) -> Result<Vec<EpochLoss>, TcnError> {
    if x.n == 0 || y.is_empty() {
        return Err(TcnError::EmptyDataset);
    }
    if x.n != y.len() {
        return Err(TcnError::ShapeMismatch(format!("{} windows vs {} targets", x.n, y.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut adam = AdamState::new(schedule.adam, &model.params());
    let mut order: Vec<usize> = (0..x.n).collect();
    let mut trace = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (step, idx) in batches(&order, schedule.batch_size).into_iter().enumerate() {
            let xb = gather(x, idx);
            let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let cache = model.forward(&xb, Mode::Train)?;
            let (loss, grad) = mse_loss(&cache.preds, &yb)?;
            if !loss.is_finite() {
                return Err(TcnError::DivergenceDetected {
                    epoch,
                    step,
                    model: Box::new(model.clone()),
                });
            }
            sum += loss * idx.len() as f64;
            let (_, grads) = model.backward(&cache, &grad)?;
            model.update_running_stats(&cache);
            adam_step(&mut model.params_mut(), &grads, &mut adam)?;
            if model.params().iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(TcnError::DivergenceDetected {
                    epoch,
                    step,
                    model: Box::new(model.clone()),
                });
            }
        }
        let val_loss = match val {
            Some((vx, vy)) if vx.n > 0 => Some(evaluate_loss(model, vx, vy)?),
            _ => None,
        };
        trace.push(EpochLoss {
            epoch: epoch + 1,
            train_loss: sum / x.n as f64,
            val_loss,
        });
    }
    if schedule.epochs > 0 {
        finalize_batchnorm(model, x, schedule.batch_size, schedule.seed)?;
    }
    Ok(trace)
}

/// Replaces the exponential moving averages with the mean batch statistics
/// over one seeded shuffle of the training set, using the final weights.
/// Each layer sees the same batch-normalised upstream activations it saw in
/// training. Shuffling matters: contiguous windows share a voyage, and
/// unshuffled batches would understate the variance.
pub fn finalize_batchnorm(model: &mut TcnModel, x: &Tensor3, batch_size: usize, seed: u64) -> Result<(), TcnError> {
    let mut order: Vec<usize> = (0..x.n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let groups = batches(&order, batch_size);
    let layers = model.blocks.len() * 2;
    let c = model.hyper.filters;
    let mut mean = vec![vec![0.0; c]; layers];
    let mut var = vec![vec![0.0; c]; layers];
    let mut weight = 0.0;
    for idx in &groups {
        let xb = gather(x, idx);
        let cache = model.forward(&xb, Mode::Train)?;
        let w = idx.len() as f64;
        weight += w;
        for (l, bc) in cache.blocks.iter().enumerate() {
            for (k, bn) in [&bc.bn1, &bc.bn2].into_iter().enumerate() {
                let stats = bn.batch.as_ref().expect("training-mode cache");
                for ch in 0..c {
                    mean[2 * l + k][ch] += w * stats.mean[ch];
                    var[2 * l + k][ch] += w * stats.unbiased_var[ch];
                }
            }
        }
    }
    for (l, block) in model.blocks.iter_mut().enumerate() {
        for (k, bn) in [&mut block.bn1, &mut block.bn2].into_iter().enumerate() {
            for ch in 0..c {
                bn.running_mean[ch] = mean[2 * l + k][ch] / weight;
                bn.running_var[ch] = var[2 * l + k][ch] / weight;
            }
        }
    }
    Ok(())
}

/// Window tensor and targets for a range of dataset rows.
pub fn dataset_tensors(ds: &FusedDataset, range: std::ops::Range<usize>) -> Result<(Tensor3, Vec<f64>), TcnError> {
    let c = ds.n_channels();
    let n = range.len();
    if n == 0 {
        return Ok((
            Tensor3 {
                n: 0,
                t: ds.m,
                c,
                data: Vec::new(),
            },
            Vec::new(),
        ));
    }
    let mut data = Vec::with_capacity(n * ds.m * c);
    for w in &ds.windows[range.clone()] {
        data.extend_from_slice(&w.matrix);
    }
    Ok((Tensor3::from_vec(n, ds.m, c, data)?, ds.targets[range].to_vec()))
}

/// Trains on the dataset's training split, reporting test-split loss per epoch.
pub fn train_on_dataset(
    ds: &FusedDataset,
    model: &mut TcnModel,
    schedule: &TrainSchedule,
) -> Result<Vec<EpochLoss>, TcnError> {
    let (x, y) = dataset_tensors(ds, ds.train_range())?;
    if x.n == 0 {
        return Err(TcnError::EmptyDataset);
    }
    let (vx, vy) = dataset_tensors(ds, ds.test_range())?;
    train(model, &x, &y, Some((&vx, &vy)), schedule)
}

pub fn write_loss_trace<W: Write>(mut out: W, trace: &[EpochLoss]) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_loss")?;
    for e in trace {
        match e.val_loss {
            Some(v) => writeln!(out, "{},{},{}", e.epoch, e.train_loss, v)?,
            None => writeln!(out, "{},{},", e.epoch, e.train_loss)?,
        }
    }
    Ok(())
}
