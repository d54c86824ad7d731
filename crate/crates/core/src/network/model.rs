//! The growing network: filter groups per task, per-task batch norm and heads.

use rand::Rng;
use rand_distr::StandardNormal;

use super::ledger::GrowthLedger;
use super::spec::{ConvLayerSpec, NetworkSpec, PlanStep, Template};
use crate::autodiff::{BatchStats, BnMode, Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    /// Unique hierarchical name, e.g. `conv2/group3/weight`.
    pub path: String,
    pub tensor: Tensor<T>,
    /// Frozen parameters are never written by the optimizer.
    pub frozen: bool,
}

impl<T: Scalar> Parameter<T> {
    fn new(path: String, tensor: Tensor<T>) -> Self {
        Parameter {
            path,
            tensor,
            frozen: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Set after the first train-mode batch or when loaded from a checkpoint.
    pub initialised: bool,
}

impl<T: Scalar> BatchNorm<T> {
    fn new(prefix: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Parameter::new(format!("{prefix}/gamma"), Tensor::ones(&[channels])),
            beta: Parameter::new(format!("{prefix}/beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            initialised: false,
        }
    }

    fn prefix(&self) -> &str {
        self.gamma.path.trim_end_matches("/gamma")
    }

    fn update(&mut self, stats: &BatchStats<T>, momentum: T) {
        let keep = T::one() - momentum;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + momentum * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + momentum * b;
        }
        self.initialised = true;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvLayerSpec,
    /// Filter group per task; `None` where the task added no filters.
    pub groups: Vec<Option<Parameter<T>>>,
    /// Full-width batch norm per task.
    pub norms: Vec<BatchNorm<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Head<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Which parameters become differentiable leaves in a recorded pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tracking {
    /// Every parameter of the view, frozen ones included.
    All,
    /// Only parameters that are not frozen.
    Trainable,
}

/// Node handles of one recorded forward pass.
pub struct ForwardPass<T> {
    pub logits: NodeId,
    /// Flattened input of the head.
    pub features: NodeId,
    /// `(path, node)` for every parameter of the view, in forward order.
    pub params: Vec<(String, NodeId)>,
    /// Pre-normalisation output of every conv layer, indexed like the layer list.
    pub conv_outputs: Vec<NodeId>,
    /// Batch statistics per conv layer (train mode only).
    pub batch_stats: Vec<(usize, BatchStats<T>)>,
}

struct Recorder<T> {
    tracking: Tracking,
    params: Vec<(String, NodeId)>,
    stats: Vec<(usize, BatchStats<T>)>,
    conv_outputs: Vec<Option<NodeId>>,
}

impl<T: Scalar> Recorder<T> {
    fn leaf(&mut self, g: &mut Graph<T>, p: &Parameter<T>) -> NodeId {
        let id = if self.tracking == Tracking::All || !p.frozen {
            g.variable(p.tensor.clone())
        } else {
            g.constant(p.tensor.clone())
        };
        self.params.push((p.path.clone(), id));
        id
    }
}

/// A network that grows by one filter group per layer and task.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpandableNetwork<T> {
    spec: NetworkSpec,
    layers: Vec<ConvLayer<T>>,
    plan: Vec<PlanStep>,
    heads: Vec<Head<T>>,
    frozen: Vec<bool>,
}

fn normal_tensor<T: Scalar, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::lit(z * std)
    })
}

impl<T: Scalar> ExpandableNetwork<T> {
    /// Task-1 network for `template` with `classes` outputs; all parameters trainable.
    pub fn build_initial<R: Rng + ?Sized>(
        template: Template,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = NetworkSpec::initial(template, classes)?;
        let (layer_specs, plan) = spec.topology();
        let mut net = ExpandableNetwork {
            layers: layer_specs
                .into_iter()
                .map(|spec| ConvLayer {
                    spec,
                    groups: Vec::new(),
                    norms: Vec::new(),
                })
                .collect(),
            spec,
            plan,
            heads: Vec::new(),
            frozen: Vec::new(),
        };
        net.materialise_task(1, rng)?;
        Ok(net)
    }

    /// Adds the filter groups, batch norms and head for `task`, which must be the next task id.
    pub fn expand_for_task<R: Rng + ?Sized>(
        &mut self,
        task: usize,
        growth: &[usize],
        classes: usize,
        rng: &mut R,
    ) -> Result<()> {
        let next = self.num_tasks() + 1;
        if task != next {
            return Err(Error::InvalidArgument(format!(
                "cannot expand for task {task}: the next task is {next}"
            )));
        }
        if let Some(open) = self.frozen.iter().position(|&f| !f) {
            return Err(Error::InvalidArgument(format!(
                "task {} must be frozen before expanding",
                open + 1
            )));
        }
        self.spec.push_task(growth.to_vec(), classes)?;
        self.materialise_task(task, rng)
    }

    fn materialise_task<R: Rng + ?Sized>(&mut self, task: usize, rng: &mut R) -> Result<()> {
        for layer in &mut self.layers {
            let group = self.spec.group_shape(&layer.spec, task).map(|shape| {
                let fan_in = shape[1] * shape[2] * shape[3];
                Parameter::new(
                    format!("{}/group{task}/weight", layer.spec.name),
                    normal_tensor(rng, &shape, (2.0 / fan_in as f64).sqrt()),
                )
            });
            layer.groups.push(group);
            let width = self.spec.width(layer.spec.unit, task);
            layer.norms.push(BatchNorm::new(
                &format!("{}/bn{task}", layer.spec.name),
                width,
            ));
        }
        let feat = self.spec.feature_dim(task)?;
        let k = self.spec.classes(task);
        self.heads.push(Head {
            weight: Parameter::new(
                format!("head{task}/weight"),
                normal_tensor(rng, &[k, feat], (1.0 / feat as f64).sqrt()),
            ),
            bias: Parameter::new(format!("head{task}/bias"), Tensor::zeros(&[k])),
        });
        self.frozen.push(false);
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn head(&self, task: usize) -> Result<&Head<T>> {
        self.check_task(task)?;
        Ok(&self.heads[task - 1])
    }

    pub fn num_tasks(&self) -> usize {
        self.frozen.len()
    }

    pub fn classes(&self, task: usize) -> usize {
        self.spec.classes(task)
    }

    pub fn check_task(&self, task: usize) -> Result<()> {
        if task == 0 || task > self.num_tasks() {
            return Err(Error::UnknownTask(task));
        }
        Ok(())
    }

    pub fn is_frozen(&self, task: usize) -> bool {
        self.frozen
            .get(task.wrapping_sub(1))
            .copied()
            .unwrap_or(false)
    }

    /// Freezes every parameter owned by `task`.
    pub fn freeze(&mut self, task: usize) -> Result<()> {
        self.check_task(task)?;
        let i = task - 1;
        for layer in &mut self.layers {
            if let Some(g) = &mut layer.groups[i] {
                g.frozen = true;
            }
            layer.norms[i].gamma.frozen = true;
            layer.norms[i].beta.frozen = true;
        }
        self.heads[i].weight.frozen = true;
        self.heads[i].bias.frozen = true;
        self.frozen[i] = true;
        Ok(())
    }

    /// Names of the conv layers, in forward order.
    pub fn conv_layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.spec.name.as_str()).collect()
    }

    /// Every parameter of the view for `task`: all groups of tasks `<= task`,
    /// `BN_task` and `head_task`.
    pub fn view_parameters(&self, task: usize) -> Result<Vec<&Parameter<T>>> {
        self.check_task(task)?;
        let mut out = Vec::new();
        for layer in &self.layers {
            out.extend(layer.groups[..task].iter().flatten());
            out.push(&layer.norms[task - 1].gamma);
            out.push(&layer.norms[task - 1].beta);
        }
        out.push(&self.heads[task - 1].weight);
        out.push(&self.heads[task - 1].bias);
        Ok(out)
    }

    /// Parameters of the view that an optimizer step may change.
    pub fn trainable_paths(&self, task: usize) -> Result<Vec<String>> {
        Ok(self
            .view_parameters(task)?
            .into_iter()
            .filter(|p| !p.frozen)
            .map(|p| p.path.clone())
            .collect())
    }

    fn params_iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.groups
                    .iter()
                    .flatten()
                    .chain(l.norms.iter().flat_map(|n| [&n.gamma, &n.beta]))
            })
            .chain(self.heads.iter().flat_map(|h| [&h.weight, &h.bias]))
    }

    pub fn parameter(&self, path: &str) -> Option<&Parameter<T>> {
        self.params_iter().find(|p| p.path == path)
    }

    pub fn parameter_mut(&mut self, path: &str) -> Option<&mut Parameter<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                l.groups
                    .iter_mut()
                    .flatten()
                    .chain(l.norms.iter_mut().flat_map(|n| [&mut n.gamma, &mut n.beta]))
            })
            .chain(
                self.heads
                    .iter_mut()
                    .flat_map(|h| [&mut h.weight, &mut h.bias]),
            )
            .find(|p| p.path == path)
    }

    /// Every stored tensor (parameters and running statistics) with its path, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for g in layer.groups.iter().flatten() {
                out.push((g.path.clone(), &g.tensor));
            }
            for n in &layer.norms {
                out.push((n.gamma.path.clone(), &n.gamma.tensor));
                out.push((n.beta.path.clone(), &n.beta.tensor));
                out.push((format!("{}/running_mean", n.prefix()), &n.running_mean));
                out.push((format!("{}/running_var", n.prefix()), &n.running_var));
            }
        }
        for h in &self.heads {
            out.push((h.weight.path.clone(), &h.weight.tensor));
            out.push((h.bias.path.clone(), &h.bias.tensor));
        }
        out
    }

    /// Overwrites a stored tensor by path. Loading running statistics marks them initialised.
    pub fn load_tensor(&mut self, path: &str, tensor: Tensor<T>) -> Result<()> {
        let mismatch =
            |have: &Tensor<T>, t: &Tensor<T>| Error::shape("load_tensor", have.shape(), t.shape());
        for layer in &mut self.layers {
            for n in &mut layer.norms {
                let prefix = n.prefix().to_string();
                let target = if path == format!("{prefix}/running_mean") {
                    Some(&mut n.running_mean)
                } else if path == format!("{prefix}/running_var") {
                    Some(&mut n.running_var)
                } else {
                    None
                };
                if let Some(t) = target {
                    if t.shape() != tensor.shape() {
                        return Err(mismatch(t, &tensor));
                    }
                    *t = tensor;
                    n.initialised = true;
                    return Ok(());
                }
            }
        }
        let p = self
            .parameter_mut(path)
            .ok_or_else(|| Error::InvalidArgument(format!("no tensor named {path}")))?;
        if p.tensor.shape() != tensor.shape() {
            return Err(mismatch(&p.tensor, &tensor));
        }
        p.tensor = tensor;
        Ok(())
    }

    /// Marks the running statistics of `task`'s batch norms as usable in eval mode.
    pub fn mark_stats_initialised(&mut self, task: usize) -> Result<()> {
        self.check_task(task)?;
        for layer in &mut self.layers {
            layer.norms[task - 1].initialised = true;
        }
        Ok(())
    }

    /// Records the forward pass of the view for `task` onto `g`.
    ///
    /// Each filter group reads the channel prefix that existed when its task
    /// was added; group outputs are concatenated in task order and normalised
    /// by the task's own batch norm.
    pub fn record(
        &self,
        g: &mut Graph<T>,
        task: usize,
        input: NodeId,
        mode: Mode,
        tracking: Tracking,
    ) -> Result<ForwardPass<T>> {
        self.check_task(task)?;
        if mode == Mode::Train && self.frozen[task - 1] {
            return Err(Error::Frozen {
                task,
                msg: "train-mode forward on a frozen view".into(),
            });
        }
        let [c, h, w] = self.spec.template.input;
        let shape = g.value(input).shape();
        if shape.len() != 4 || shape[1..] != [c, h, w] {
            return Err(Error::shape("forward", shape, &[0, c, h, w]));
        }
        let mut rec = Recorder {
            tracking,
            params: Vec::new(),
            stats: Vec::new(),
            conv_outputs: vec![None; self.layers.len()],
        };
        let mut x = input;
        for step in &self.plan {
            x = match *step {
                PlanStep::Conv(l) => {
                    let y = self.conv_norm(g, &mut rec, l, x, task, mode)?;
                    g.relu(y)
                }
                PlanStep::MaxPool(size) => g.max_pool(x, size)?,
                PlanStep::Residual {
                    first,
                    second,
                    shortcut,
                } => {
                    let a = self.conv_norm(g, &mut rec, first, x, task, mode)?;
                    let a = g.relu(a);
                    let b = self.conv_norm(g, &mut rec, second, a, task, mode)?;
                    let s = match shortcut {
                        Some(l) => self.conv_norm(g, &mut rec, l, x, task, mode)?,
                        None => x,
                    };
                    let sum = g.add(b, s)?;
                    g.relu(sum)
                }
                PlanStep::GlobalAvgPool => g.global_avg_pool(x)?,
            };
        }
        let features = g.flatten(x)?;
        let head = &self.heads[task - 1];
        let hw = rec.leaf(g, &head.weight);
        let hb = rec.leaf(g, &head.bias);
        let logits = g.linear(features, hw, Some(hb))?;
        Ok(ForwardPass {
            logits,
            features,
            params: rec.params,
            conv_outputs: rec
                .conv_outputs
                .into_iter()
                .map(|o| o.expect("every layer visited"))
                .collect(),
            batch_stats: rec.stats,
        })
    }

    fn conv_norm(
        &self,
        g: &mut Graph<T>,
        rec: &mut Recorder<T>,
        l: usize,
        x: NodeId,
        task: usize,
        mode: Mode,
    ) -> Result<NodeId> {
        let layer = &self.layers[l];
        let full = g.value(x).shape()[1];
        let mut outs = Vec::with_capacity(task);
        for t in 1..=task {
            let Some(group) = &layer.groups[t - 1] else {
                continue;
            };
            let depth = self.spec.input_width(layer.spec.input_unit, t);
            let xin = if depth == full {
                x
            } else {
                g.narrow_channels(x, depth)?
            };
            let wn = rec.leaf(g, group);
            outs.push(g.conv2d(xin, wn, None, layer.spec.stride, layer.spec.padding)?);
        }
        let y = g.concat_channels(&outs)?;
        rec.conv_outputs[l] = Some(y);
        let bn = &layer.norms[task - 1];
        let gamma = rec.leaf(g, &bn.gamma);
        let beta = rec.leaf(g, &bn.beta);
        let eps = T::lit(BN_EPS);
        let (out, stats) = match mode {
            Mode::Train => g.batch_norm(y, gamma, beta, BnMode::Train { eps })?,
            Mode::Eval => {
                if !bn.initialised {
                    return Err(Error::UninitialisedStats(bn.prefix().to_string()));
                }
                g.batch_norm(
                    y,
                    gamma,
                    beta,
                    BnMode::Eval {
                        mean: bn.running_mean.data(),
                        var: bn.running_var.data(),
                        eps,
                    },
                )?
            }
        };
        if let Some(s) = stats {
            rec.stats.push((l, s));
        }
        Ok(out)
    }

    /// Folds train-mode batch statistics into `task`'s running estimates.
    pub fn apply_batch_stats(
        &mut self,
        task: usize,
        stats: &[(usize, BatchStats<T>)],
    ) -> Result<()> {
        self.check_task(task)?;
        if self.frozen[task - 1] {
            return Err(Error::Frozen {
                task,
                msg: "running statistics of a frozen view".into(),
            });
        }
        let momentum = T::lit(BN_MOMENTUM);
        for (l, s) in stats {
            self.layers[*l].norms[task - 1].update(s, momentum);
        }
        Ok(())
    }

    /// Logits for `batch` under the view of `task`; train mode also updates running statistics.
    pub fn forward(&mut self, task: usize, batch: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let pass = self.record(&mut g, task, x, mode, Tracking::Trainable)?;
        if mode == Mode::Train {
            self.apply_batch_stats(task, &pass.batch_stats)?;
        }
        Ok(g.value(pass.logits).clone())
    }

    /// Eval-mode logits without mutating the network.
    pub fn predict(&self, task: usize, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let pass = self.record(&mut g, task, x, Mode::Eval, Tracking::Trainable)?;
        Ok(g.value(pass.logits).clone())
    }

    /// Eval-mode head input for `batch`.
    pub fn features(&self, task: usize, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let pass = self.record(&mut g, task, x, Mode::Eval, Tracking::Trainable)?;
        Ok(g.value(pass.features).clone())
    }

    pub fn ledger(&self) -> Result<GrowthLedger> {
        GrowthLedger::from_spec(&self.spec)
    }

    /// Same network with every tensor converted to `U`.
    pub fn cast<U: Scalar>(&self) -> ExpandableNetwork<U> {
        let cp = |p: &Parameter<T>| Parameter {
            path: p.path.clone(),
            tensor: p.tensor.cast(),
            frozen: p.frozen,
        };
        ExpandableNetwork {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    spec: l.spec.clone(),
                    groups: l.groups.iter().map(|g| g.as_ref().map(cp)).collect(),
                    norms: l
                        .norms
                        .iter()
                        .map(|n| BatchNorm {
                            gamma: cp(&n.gamma),
                            beta: cp(&n.beta),
                            running_mean: n.running_mean.cast(),
                            running_var: n.running_var.cast(),
                            initialised: n.initialised,
                        })
                        .collect(),
                })
                .collect(),
            plan: self.plan.clone(),
            heads: self
                .heads
                .iter()
                .map(|h| Head {
                    weight: cp(&h.weight),
                    bias: cp(&h.bias),
                })
                .collect(),
            frozen: self.frozen.clone(),
        }
    }
}
