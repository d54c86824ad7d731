//! Per-task supervised training.

mod augment;
mod config;
mod sgd;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use augment::{augment, hflip, pad_crop, rotate, AugmentRecipe, Transform, RECIPES};
pub use config::{lr_at, TrainConfig, TRAIN_PRESETS};
pub use sgd::{sgd_step, SgdParams, SgdState};

use crate::autodiff::Graph;
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::network::{ExpandableNetwork, Mode, Tracking};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub task: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,loss,accuracy\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.lr, e.loss, e.accuracy);
        }
        s
    }
}

/// Result of one optimisation step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub updated: Vec<String>,
}

pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            // first maximum wins
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean cross-entropy step on one batch: train-mode forward, backward, SGD, running statistics.
pub fn train_step<T: Scalar>(
    net: &mut ExpandableNetwork<T>,
    task: usize,
    batch: Tensor<T>,
    labels: &[usize],
    state: &mut SgdState<T>,
    params: SgdParams,
) -> Result<StepOutcome> {
    let mut g = Graph::new();
    let x = g.constant(batch);
    let pass = net.record(&mut g, task, x, Mode::Train, Tracking::Trainable)?;
    let ce = g.softmax_cross_entropy(pass.logits, labels)?;
    let loss = g.mean(ce);
    let loss_value = g.value(loss).item().to_f64_lossy();
    if !loss_value.is_finite() {
        return Err(Error::NonFinite(format!("training loss of task {task}")));
    }
    let grads = g.backward(loss)?;
    let named: Vec<(String, Tensor<T>)> = pass
        .params
        .iter()
        .filter_map(|(path, id)| grads.get(*id).map(|t| (path.clone(), t.clone())))
        .collect();
    let correct = argmax_rows(g.value(pass.logits))
        .iter()
        .zip(labels)
        .filter(|(a, b)| a == b)
        .count();
    let updated = sgd_step(net, &named, state, params)?;
    net.apply_batch_stats(task, &pass.batch_stats)?;
    Ok(StepOutcome {
        loss: loss_value,
        correct,
        updated,
    })
}

/// Augmented copies of the samples `indices`; sample `i` of epoch `e` uses stream `(seed, task, e, i)`.
fn augmented_batch<T: Scalar>(
    data: &TaskDataset<T>,
    indices: &[usize],
    recipe: &AugmentRecipe,
    seed: u64,
    epoch: usize,
) -> Result<Tensor<T>> {
    let items = indices
        .par_iter()
        .map(|&i| {
            let mut r = rng::stream(
                seed,
                "train-augment",
                &[data.task as u64, epoch as u64, i as u64],
            );
            augment(&data.sample(i), recipe, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&items)
}

/// Trains the open view of `data.task` and freezes it afterwards.
pub fn train_task<T: Scalar>(
    net: &mut ExpandableNetwork<T>,
    data: &TaskDataset<T>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let task = data.task;
    net.check_task(task)?;
    if net.is_frozen(task) {
        return Err(Error::Frozen {
            task,
            msg: "cannot train a frozen view".into(),
        });
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "task {task} has no training samples"
        )));
    }
    if data.num_classes() != net.classes(task) {
        return Err(Error::Config(format!(
            "task {task} data has {} classes, its head has {}",
            data.num_classes(),
            net.classes(task)
        )));
    }
    let recipe = AugmentRecipe::by_id(&cfg.augment)?;
    let mut state = SgdState::default();
    let mut log = TrainLog {
        task,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        let params = SgdParams {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(
            cfg.seed,
            "shuffle",
            &[task as u64, epoch as u64],
        ));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = augmented_batch(data, chunk, &recipe, cfg.seed, epoch)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.local[i]).collect();
            let out = train_step(net, task, batch, &labels, &mut state, params)?;
            loss_sum += out.loss * chunk.len() as f64;
            correct += out.correct;
        }
        log.epochs.push(EpochLog {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        });
    }
    net.freeze(task)?;
    Ok(log)
}

/// Eval-mode accuracy of the view of `data.task` on its own labels.
pub fn accuracy<T: Scalar>(
    net: &ExpandableNetwork<T>,
    data: &TaskDataset<T>,
    batch_size: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let logits = net.predict(data.task, &data.batch(chunk)?)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == data.local[i])
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}
