//! Task-id prediction from the gradient norm of an entropy-weighted pseudo-label loss.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, NodeId};
use crate::error::{Error, Result};
use crate::network::{ExpandableNetwork, Mode, NetworkSpec, Tracking};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{argmax_rows, augment, AugmentRecipe};

/// Name of the head in a selected-layer list.
pub const HEAD: &str = "head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// One mean per conv filter and per head output neuron.
    MeanFilters,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    L1,
    L2,
}

/// Per-slot weight of the cross-entropy in the pseudo-label loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    Entropy,
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorMode {
    GradientAggregation,
    Entropy,
    CrossEntropy,
    GradNoAug,
    GradUnweightedAug,
}

impl PredictorMode {
    pub const ALL: [PredictorMode; 5] = [
        PredictorMode::Entropy,
        PredictorMode::CrossEntropy,
        PredictorMode::GradNoAug,
        PredictorMode::GradUnweightedAug,
        PredictorMode::GradientAggregation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictorMode::GradientAggregation => "gradient-aggregation",
            PredictorMode::Entropy => "entropy",
            PredictorMode::CrossEntropy => "cross-entropy",
            PredictorMode::GradNoAug => "grad-no-aug",
            PredictorMode::GradUnweightedAug => "grad-unweighted-aug",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        PredictorMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown predictor mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    /// Batch size `A`; slot 1 is the unaugmented sample.
    pub augmentations: usize,
    pub recipe: String,
    /// Conv layer names plus `"head"`; `None` selects the last two conv layers and the head.
    pub selected_layers: Option<Vec<String>>,
    pub reduction: Reduction,
    pub norm: Norm,
    pub mode: PredictorMode,
    /// Let every task view see the same augmented batch of a sample.
    pub shared_augmentations: bool,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            augmentations: 5,
            recipe: "desk".into(),
            selected_layers: None,
            reduction: Reduction::MeanFilters,
            norm: Norm::L1,
            mode: PredictorMode::GradientAggregation,
            shared_augmentations: false,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn cifar() -> Self {
        PredictorConfig {
            augmentations: 11,
            recipe: "cifar".into(),
            ..PredictorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.augmentations == 0 {
            return Err(Error::Config(
                "at least one augmentation slot is required".into(),
            ));
        }
        AugmentRecipe::by_id(&self.recipe)?;
        Ok(())
    }

    pub fn layers<T: Scalar>(&self, net: &ExpandableNetwork<T>) -> Vec<String> {
        match &self.selected_layers {
            Some(l) => l.clone(),
            None => default_layers(net.spec()),
        }
    }
}

/// Last two conv layers and the head.
pub fn default_layers(spec: &NetworkSpec) -> Vec<String> {
    let (layers, _) = spec.topology();
    let mut out: Vec<String> = layers
        .iter()
        .rev()
        .take(2)
        .rev()
        .map(|l| l.name.clone())
        .collect();
    out.push(HEAD.into());
    out
}

/// `[A, C, H, W]`: the sample followed by `A - 1` independent augmentations.
pub fn make_aug_batch<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    a: usize,
    recipe: &AugmentRecipe,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if a == 0 {
        return Err(Error::InvalidArgument(
            "augmentation batch needs A >= 1".into(),
        ));
    }
    let mut items = Vec::with_capacity(a);
    items.push(x.clone());
    for _ in 1..a {
        items.push(augment(x, recipe, rng)?);
    }
    Tensor::stack(&items)
}

/// Mode of the per-row argmax of `probs: [A, K]`; ties go to the smallest class.
pub fn pseudo_label<T: Scalar>(probs: &Tensor<T>) -> usize {
    mode_of(&argmax_rows(probs), probs.shape()[1])
}

pub fn mode_of(labels: &[usize], classes: usize) -> usize {
    let mut counts = vec![0usize; classes.max(labels.iter().max().map_or(0, |&m| m + 1))];
    for &l in labels {
        counts[l] += 1;
    }
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// `(1/A) Σ_a CE(logits_a, label) · w_a` with `w_a = ENT(softmax(logits_a))` or 1.
pub fn weighted_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: NodeId,
    label: usize,
    weighting: Weighting,
) -> Result<NodeId> {
    let a = g.value(logits).shape()[0];
    let ce = g.softmax_cross_entropy(logits, &vec![label; a])?;
    let per_slot = match weighting {
        Weighting::Entropy => {
            let p = g.softmax(logits)?;
            let ent = g.entropy(p)?;
            g.mul(ce, ent)?
        }
        Weighting::Unit => ce,
    };
    Ok(g.mean(per_slot))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEmbedding {
    pub task: usize,
    pub pseudo_label: usize,
    pub segments: Vec<Segment>,
}

impl GradientEmbedding {
    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.values.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vector(&self) -> Vec<f64> {
        self.segments
            .iter()
            .flat_map(|s| s.values.iter().copied())
            .collect()
    }

    /// `‖θ′‖ / |θ′|`
    pub fn normalized_norm(&self, norm: Norm) -> f64 {
        normalized_norm(&self.vector(), norm)
    }
}

pub fn normalized_norm(v: &[f64], norm: Norm) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = match norm {
        Norm::L1 => v.iter().map(|x| x.abs()).sum::<f64>(),
        Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
    };
    n / v.len() as f64
}

fn block_means<T: Scalar>(t: &Tensor<T>, block: usize) -> Vec<f64> {
    t.data()
        .chunks(block)
        .map(|c| c.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / block as f64)
        .collect()
}

/// Reduces a conv filter-group gradient `[g, D, k, k]` to one mean per filter.
pub fn reduce_conv<T: Scalar>(grad: &Tensor<T>) -> Vec<f64> {
    let per: usize = grad.shape()[1..].iter().product();
    if per == 0 {
        return Vec::new();
    }
    block_means(grad, per)
}

/// Head gradient rows `[w_j, b_j]`, either raw or reduced to one mean per output neuron.
pub fn head_segment<T: Scalar>(w: &Tensor<T>, b: &Tensor<T>, reduction: Reduction) -> Vec<f64> {
    let (k, f) = (w.shape()[0], w.shape()[1]);
    let mut out = Vec::with_capacity(match reduction {
        Reduction::Full => k * (f + 1),
        Reduction::MeanFilters => k,
    });
    for j in 0..k {
        let row = w
            .row(j)
            .iter()
            .map(|v| v.to_f64_lossy())
            .chain([b.data()[j].to_f64_lossy()]);
        match reduction {
            Reduction::Full => out.extend(row),
            Reduction::MeanFilters => out.push(row.sum::<f64>() / (f + 1) as f64),
        }
    }
    out
}

/// Gradient of the pseudo-label loss of `batch` under view `task`, restricted to `layers`.
///
/// All filter groups of a selected layer contribute, frozen ones included.
pub fn gradient_embedding<T: Scalar>(
    net: &ExpandableNetwork<T>,
    task: usize,
    batch: &Tensor<T>,
    layers: &[String],
    weighting: Weighting,
    reduction: Reduction,
) -> Result<GradientEmbedding> {
    let names = net.conv_layer_names();
    if let Some(missing) = layers
        .iter()
        .find(|l| *l != HEAD && !names.contains(&l.as_str()))
    {
        return Err(Error::InvalidArgument(format!(
            "selected layer {missing} does not exist"
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(batch.clone());
    let pass = net.record(&mut g, task, x, Mode::Eval, Tracking::All)?;
    let probs = kernels::softmax_rows(g.value(pass.logits));
    let label = pseudo_label(&probs);
    let loss = weighted_loss(&mut g, pass.logits, label, weighting)?;
    let grads = g.backward(loss)?;
    let grad_of = |path: &str| -> Tensor<T> {
        let id = pass
            .params
            .iter()
            .find(|(p, _)| p == path)
            .expect("parameter recorded")
            .1;
        grads.wrt(id, &g)
    };
    let mut segments = Vec::with_capacity(layers.len());
    for layer in layers {
        let values = if layer == HEAD {
            let w = grad_of(&format!("head{task}/weight"));
            let b = grad_of(&format!("head{task}/bias"));
            head_segment(&w, &b, reduction)
        } else {
            let prefix = format!("{layer}/group");
            let mut v = Vec::new();
            for (path, id) in pass.params.iter().filter(|(p, _)| p.starts_with(&prefix)) {
                let gt = grads.wrt(*id, &g);
                match reduction {
                    Reduction::MeanFilters => v.extend(reduce_conv(&gt)),
                    Reduction::Full => v.extend(gt.data().iter().map(|x| x.to_f64_lossy())),
                }
                debug_assert!(path.ends_with("/weight"));
            }
            v
        };
        segments.push(Segment {
            layer: layer.clone(),
            values,
        });
    }
    let values_finite = segments
        .iter()
        .all(|s| s.values.iter().all(|v| v.is_finite()));
    if !values_finite {
        return Err(Error::NonFinite(format!(
            "gradient embedding of task {task}"
        )));
    }
    Ok(GradientEmbedding {
        task,
        pseudo_label: label,
        segments,
    })
}

/// `(full, reduced)` embedding lengths of the view `task` over `layers`, from the geometry alone.
pub fn embedding_lengths(spec: &NetworkSpec, task: usize, layers: &[String]) -> Result<(u64, u64)> {
    let (convs, _) = spec.topology();
    let (mut full, mut reduced) = (0u64, 0u64);
    for name in layers {
        if name == HEAD {
            let k = spec.classes(task) as u64;
            full += k * (spec.feature_dim(task)? as u64 + 1);
            reduced += k;
            continue;
        }
        let layer = convs.iter().find(|l| &l.name == name).ok_or_else(|| {
            Error::InvalidArgument(format!("selected layer {name} does not exist"))
        })?;
        for t in 1..=task {
            if let Some(s) = spec.group_shape(layer, t) {
                full += s.iter().product::<usize>() as u64;
                reduced += s[0] as u64;
            }
        }
    }
    Ok((full, reduced))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskPrediction {
    pub sample_id: u64,
    /// Score of every view; the predicted task minimises it.
    pub per_task_scores: Vec<f64>,
    pub predicted_task: usize,
    /// Argmax class of the unaugmented sample under the predicted view.
    pub predicted_class_local: usize,
}

/// Index of the smallest score, first one on ties, as a 1-based task id.
pub fn argmin_task(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best + 1
}

struct ViewScore {
    score: f64,
    class: usize,
}

fn score_view<T: Scalar>(
    net: &ExpandableNetwork<T>,
    task: usize,
    x: &Tensor<T>,
    sample_id: u64,
    cfg: &PredictorConfig,
    recipe: &AugmentRecipe,
    layers: &[String],
) -> Result<ViewScore> {
    let single = Tensor::stack(std::slice::from_ref(x))?;
    match cfg.mode {
        PredictorMode::Entropy | PredictorMode::CrossEntropy => {
            let logits = net.predict(task, &single)?;
            let p = kernels::softmax_rows(&logits);
            let class = argmax_rows(&p)[0];
            let score = match cfg.mode {
                PredictorMode::Entropy => p
                    .data()
                    .iter()
                    .map(|v| v.to_f64_lossy())
                    .filter(|&v| v > 0.0)
                    .map(|v| -v * v.ln())
                    .sum(),
                _ => {
                    // CE against the argmax is the negative log of the top probability
                    let lse = kernels::log_sum_exp_rows(&logits)[0].to_f64_lossy();
                    lse - logits.data()[class].to_f64_lossy()
                }
            };
            Ok(ViewScore { score, class })
        }
        _ => {
            let (a, weighting) = match cfg.mode {
                PredictorMode::GradNoAug => (1, Weighting::Unit),
                PredictorMode::GradUnweightedAug => (cfg.augmentations, Weighting::Unit),
                _ => (cfg.augmentations, Weighting::Entropy),
            };
            let ids: Vec<u64> = if cfg.shared_augmentations {
                vec![sample_id]
            } else {
                vec![sample_id, task as u64]
            };
            let mut r = rng::stream(cfg.seed, "tta", &ids);
            let batch = make_aug_batch(x, a, recipe, &mut r)?;
            let emb = gradient_embedding(net, task, &batch, layers, weighting, cfg.reduction)?;
            let class = argmax_rows(&net.predict(task, &single)?)[0];
            Ok(ViewScore {
                score: emb.normalized_norm(cfg.norm),
                class,
            })
        }
    }
}

/// Predicts the task of one `[C, H, W]` sample from views `1..=net.num_tasks()`.
pub fn predict_task<T: Scalar>(
    net: &ExpandableNetwork<T>,
    x: &Tensor<T>,
    sample_id: u64,
    cfg: &PredictorConfig,
) -> Result<TaskPrediction> {
    predict_task_upto(net, net.num_tasks(), x, sample_id, cfg)
}

/// As [`predict_task`] over the views `1..=tasks` only.
pub fn predict_task_upto<T: Scalar>(
    net: &ExpandableNetwork<T>,
    tasks: usize,
    x: &Tensor<T>,
    sample_id: u64,
    cfg: &PredictorConfig,
) -> Result<TaskPrediction> {
    cfg.validate()?;
    if tasks == 0 || tasks > net.num_tasks() {
        return Err(Error::UnknownTask(tasks));
    }
    let recipe = AugmentRecipe::by_id(&cfg.recipe)?;
    let layers = cfg.layers(net);
    let views = (1..=tasks)
        .into_par_iter()
        .map(|t| score_view(net, t, x, sample_id, cfg, &recipe, &layers))
        .collect::<Result<Vec<_>>>()?;
    let scores: Vec<f64> = views.iter().map(|v| v.score).collect();
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!(
            "task scores of sample {sample_id}"
        )));
    }
    let task = argmin_task(&scores);
    Ok(TaskPrediction {
        sample_id,
        per_task_scores: scores,
        predicted_task: task,
        predicted_class_local: views[task - 1].class,
    })
}
