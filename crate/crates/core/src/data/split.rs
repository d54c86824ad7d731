//! Class-disjoint task splits and input standardisation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::container::Container;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation of pixels scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(channels: usize) -> Self {
        Standardizer {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Statistics over the records `indices` of `c`. Channels with zero spread keep unit scale.
    pub fn fit(c: &Container, indices: &[usize]) -> Self {
        let [ch, h, w] = c.dims;
        let hw = h * w;
        let mut mean = vec![0.0; ch];
        let mut sq = vec![0.0; ch];
        for &i in indices {
            let px = c.pixels_of(i);
            for k in 0..ch {
                for &v in &px[k * hw..(k + 1) * hw] {
                    let v = v as f64 / 255.0;
                    mean[k] += v;
                    sq[k] += v * v;
                }
            }
        }
        let n = (indices.len() * hw).max(1) as f64;
        let std = (0..ch)
            .map(|k| {
                let m = mean[k] / n;
                let var = (sq[k] / n - m * m).max(0.0);
                if var.sqrt() > 1e-8 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer {
            mean: mean.iter().map(|m| m / n).collect(),
            std,
        }
    }

    pub fn apply<T: Scalar>(&self, pixels: &[u8], dims: [usize; 3]) -> Vec<T> {
        let hw = dims[1] * dims[2];
        pixels
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = i / hw;
                T::lit((v as f64 / 255.0 - self.mean[k]) / self.std[k])
            })
            .collect()
    }
}

/// How global classes are ordered before being cut into tasks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassOrder {
    Identity,
    Seeded { seed: u64 },
    Explicit { order: Vec<usize> },
}

/// Cuts the class order into `tasks` contiguous blocks. `sizes` allows uneven blocks;
/// without it the class count must divide evenly.
pub fn split_classes(
    classes: usize,
    tasks: usize,
    order: &ClassOrder,
    sizes: Option<&[usize]>,
) -> Result<Vec<Vec<usize>>> {
    if tasks == 0 {
        return Err(Error::Config("at least one task is required".into()));
    }
    let order: Vec<usize> = match order {
        ClassOrder::Identity => (0..classes).collect(),
        ClassOrder::Seeded { seed } => {
            let mut o: Vec<usize> = (0..classes).collect();
            o.shuffle(&mut rng::stream(*seed, "class-order", &[]));
            o
        }
        ClassOrder::Explicit { order } => {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..classes).collect::<Vec<_>>() {
                return Err(Error::Config(format!(
                    "explicit class order must be a permutation of 0..{classes}"
                )));
            }
            order.clone()
        }
    };
    let sizes: Vec<usize> = match sizes {
        Some(s) => {
            if s.len() != tasks || s.iter().sum::<usize>() != classes || s.contains(&0) {
                return Err(Error::Config(format!(
                    "task sizes {s:?} do not partition {classes} classes into {tasks} tasks"
                )));
            }
            s.to_vec()
        }
        None => {
            if !classes.is_multiple_of(tasks) {
                return Err(Error::Config(format!(
                    "{classes} classes do not split evenly into {tasks} tasks"
                )));
            }
            vec![classes / tasks; tasks]
        }
    };
    let mut out = Vec::with_capacity(tasks);
    let mut at = 0;
    for s in sizes {
        let mut block = order[at..at + s].to_vec();
        block.sort_unstable();
        out.push(block);
        at += s;
    }
    Ok(out)
}

/// Samples of one task with global and task-local labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDataset<T> {
    pub task: usize,
    /// Global class ids, sorted; local label `l` is `classes[l]`.
    pub classes: Vec<usize>,
    /// `[N, C, H, W]`, standardised.
    pub images: Tensor<T>,
    pub global: Vec<usize>,
    pub local: Vec<usize>,
}

impl<T: Scalar> TaskDataset<T> {
    pub fn build(
        c: &Container,
        task: usize,
        classes: &[usize],
        norm: &Standardizer,
    ) -> Result<Self> {
        let idx = c.indices_of(classes);
        let mut data = Vec::with_capacity(idx.len() * c.sample_len());
        let mut global = Vec::with_capacity(idx.len());
        let mut local = Vec::with_capacity(idx.len());
        for &i in &idx {
            data.extend(norm.apply::<T>(c.pixels_of(i), c.dims));
            let g = c.labels[i] as usize;
            global.push(g);
            local.push(
                classes
                    .binary_search(&g)
                    .expect("label selected from classes"),
            );
        }
        let [ch, h, w] = c.dims;
        let images = if idx.is_empty() {
            Tensor::new(vec![0, ch, h, w], data)?
        } else {
            Tensor::new(vec![idx.len(), ch, h, w], data)?
        };
        Ok(TaskDataset {
            task,
            classes: classes.to_vec(),
            images,
            global,
            local,
        })
    }

    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn sample(&self, i: usize) -> Tensor<T> {
        self.images.index0(i)
    }

    /// Stacks the samples `indices` into one batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let items: Vec<Tensor<T>> = indices.iter().map(|&i| self.sample(i)).collect();
        Tensor::stack(&items)
    }

    pub fn global_of(&self, local: usize) -> usize {
        self.classes[local]
    }
}

/// Train and test splits of a whole task sequence, standardised with task-1 training statistics.
#[derive(Clone, Debug)]
pub struct TaskSequence<T> {
    pub classes: Vec<Vec<usize>>,
    pub standardizer: Standardizer,
    pub train: Vec<TaskDataset<T>>,
    pub test: Vec<TaskDataset<T>>,
}

impl<T: Scalar> TaskSequence<T> {
    pub fn build(train: &Container, test: &Container, classes: Vec<Vec<usize>>) -> Result<Self> {
        if train.dims != test.dims || train.classes != test.classes {
            return Err(Error::Config(format!(
                "train ({:?}, {} classes) and test ({:?}, {} classes) containers disagree",
                train.dims, train.classes, test.dims, test.classes
            )));
        }
        if let Some(c) = classes.iter().flatten().find(|&&c| c >= train.classes) {
            return Err(Error::Config(format!(
                "class {c} not present in a {}-class container",
                train.classes
            )));
        }
        let first = classes
            .first()
            .ok_or_else(|| Error::Config("empty task sequence".into()))?;
        let standardizer = Standardizer::fit(train, &train.indices_of(first));
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for (i, cls) in classes.iter().enumerate() {
            tr.push(TaskDataset::build(train, i + 1, cls, &standardizer)?);
            te.push(TaskDataset::build(test, i + 1, cls, &standardizer)?);
        }
        Ok(TaskSequence {
            classes,
            standardizer,
            train: tr,
            test: te,
        })
    }
}
