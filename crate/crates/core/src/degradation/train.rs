//! Training loop for the degradation model: seeded splits, minibatch Adam
//! with global-norm clipping, per-epoch NLL traces, and early stopping on
//! validation NLL.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

use super::model::{backward, forward_trace, nll_bits_per_dim, DegradationModel, ModelGrads};

/// One (condition, degraded) training pair.
#[derive(Debug, Clone)]
pub struct DegradationPair {
    pub condition: Image,
    pub degraded: Image,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub validation_split: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            validation_split: 0.1,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument("learning rate and clip norm must be positive".into()));
        }
        if !(self.validation_split > 0.0 && self.validation_split < 1.0) {
            return Err(Error::InvalidArgument("validation split must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch NLL record; epoch 0 is the untrained baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trace: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
    pub epochs_run: usize,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(model: &DegradationModel, lr: f64) -> Self {
        let mut sizes = Vec::new();
        model.visit_params(|t| sizes.push(t.len()));
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, model: &mut DegradationModel, grads: &mut ModelGrads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut flat_grads: Vec<&Vec<f64>> = Vec::new();
        // Collect gradient buffers in visit order.
        let mut collected: Vec<Vec<f64>> = Vec::new();
        grads.visit_mut(|g| collected.push(std::mem::take(g)));
        for g in &collected {
            flat_grads.push(g);
        }
        let (beta1, beta2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0;
        model.visit_params_mut(|tensor| {
            let g = flat_grads[idx];
            let m = &mut ms[idx];
            let v = &mut vs[idx];
            let data = tensor.data_mut();
            for i in 0..data.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] = (data[i] as f64 - lr * mhat / (vhat.sqrt() + eps)) as f32;
            }
            idx += 1;
        });
    }
}

fn mean_nll(model: &DegradationModel, pairs: &[&DegradationPair]) -> Result<f64> {
    let sums: Vec<f64> = pairs
        .par_iter()
        .map(|p| nll_bits_per_dim(model, &p.degraded, &p.condition).unwrap_or(f64::NAN))
        .collect();
    let total: f64 = sums.iter().sum();
    if !total.is_finite() {
        return Err(Error::NonFinite("NLL evaluation".into()));
    }
    Ok(total / pairs.len() as f64)
}

/// Trains in place. Returns the per-epoch trace; the model ends at the
/// best-validation weights. Aborts with the epoch index if the loss goes
/// non-finite.
pub fn train(
    model: &mut DegradationModel,
    dataset: &[DegradationPair],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    let (h, w, c) = (
        dataset[0].condition.height(),
        dataset[0].condition.width(),
        dataset[0].condition.channels(),
    );
    for p in dataset {
        if p.condition.height() != h
            || p.condition.width() != w
            || p.condition.channels() != c
            || p.degraded.height() != h
            || p.degraded.width() != w
            || p.degraded.channels() != c
        {
            return Err(Error::ShapeMismatch("dataset images must share one size".into()));
        }
    }

    // Seeded split.
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng.shuffle(&mut order);
    let n_val = ((dataset.len() as f64 * cfg.validation_split).round() as usize)
        .clamp(1, dataset.len().saturating_sub(1).max(1));
    let (val_idx, train_idx) = order.split_at(n_val.min(dataset.len() - 1).max(1));
    let val: Vec<&DegradationPair> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let train_set: Vec<&DegradationPair> = if train_idx.is_empty() {
        val.clone()
    } else {
        train_idx.iter().map(|&i| &dataset[i]).collect()
    };

    let mut adam = Adam::new(model, cfg.learning_rate);
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let baseline_val = mean_nll(model, &val)?;
    let baseline_train = mean_nll(model, &train_set)?;
    trace.push(EpochStats {
        epoch: 0,
        train_nll: baseline_train,
        val_nll: baseline_val,
    });

    let mut best_val = baseline_val;
    let mut best_epoch = 0usize;
    let mut best_model = model.clone();
    let mut wait = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut idx: Vec<usize> = (0..train_set.len()).collect();
        rng.shuffle(&mut idx);
        let mut epoch_loss = 0.0f64;
        let mut seen = 0usize;
        for batch in idx.chunks(cfg.batch_size) {
            // Per-item loss and gradients in parallel, reduced in index order.
            let results: Vec<(f64, ModelGrads)> = batch
                .par_iter()
                .map(|&i| {
                    let pair = train_set[i];
                    let trace = forward_trace(model, &pair.degraded, &pair.condition)
                        .expect("dataset shapes validated");
                    let levels = pair.degraded.to_levels();
                    let out = backward(model, &trace, &levels, true);
                    (out.loss_bits, out.param_grads.expect("requested"))
                })
                .collect();

            let mut batch_loss = 0.0;
            let mut grads: Option<ModelGrads> = None;
            for (loss, g) in results {
                batch_loss += loss;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => acc.accumulate(&g),
                }
            }
            let mut grads = grads.expect("non-empty batch");
            let scale = 1.0 / batch.len() as f64;
            grads.scale(scale);
            batch_loss *= scale;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "batch loss non-finite".into(),
                });
            }
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: "gradient norm non-finite".into(),
                });
            }
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            adam.step(model, &mut grads);
            epoch_loss += batch_loss * batch.len() as f64;
            seen += batch.len();
        }

        let train_nll = epoch_loss / seen as f64;
        let val_nll = mean_nll(model, &val)?;
        if !val_nll.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: "validation NLL non-finite".into(),
            });
        }
        trace.push(EpochStats {
            epoch,
            train_nll,
            val_nll,
        });
        epochs_run = epoch;

        if val_nll < best_val - 1e-12 {
            best_val = val_nll;
            best_epoch = epoch;
            best_model = model.clone();
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }

    *model = best_model;
    Ok(TrainOutcome {
        trace,
        best_epoch,
        best_val_nll: best_val,
        epochs_run,
    })
}

/// Renders a trace as CSV (`epoch,train_nll,val_nll`, LF endings).
pub fn trace_to_csv(trace: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_nll,val_nll\n");
    for row in trace {
        out.push_str(&format!("{},{},{}\n", row.epoch, row.train_nll, row.val_nll));
    }
    out
}
