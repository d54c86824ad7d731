//! Architecture templates and per-task filter-group geometry.
//!
//! A template is a sequence of blocks. Every `Conv` and `Residual` block is a
//! *width unit*: it owns one filter count per task (the base count for task 1,
//! the growth for later tasks). All convolutions inside a unit share that
//! width. A filter group added for task `t` reads only the channel prefix of
//! its input that existed at task `t`.

use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::window_out;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Block {
    /// conv → batch norm → relu
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        size: usize,
    },
    /// Basic residual block: two 3×3 convs with a 1×1 projection shortcut
    /// when the stride or base width changes.
    Residual {
        filters: usize,
        stride: usize,
    },
    GlobalAvgPool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub name: String,
    /// Input image `[C, H, W]`.
    pub input: [usize; 3],
    pub blocks: Vec<Block>,
}

impl Template {
    /// Two conv/pool stages for 1×16×16 inputs.
    pub fn desk_cnn() -> Template {
        Template::vgg_style("desk-cnn", [1, 16, 16], &[8, 16])
    }

    /// conv(f) → pool for each entry of `filters`.
    pub fn vgg_style(name: &str, input: [usize; 3], filters: &[usize]) -> Template {
        let blocks = filters
            .iter()
            .flat_map(|&f| {
                [
                    Block::Conv {
                        filters: f,
                        kernel: 3,
                        stride: 1,
                        padding: 1,
                    },
                    Block::MaxPool { size: 2 },
                ]
            })
            .collect();
        Template {
            name: name.into(),
            input,
            blocks,
        }
    }

    /// CIFAR ResNet-18: 3×3 stem and four stages of two basic blocks.
    pub fn resnet18_cifar() -> Template {
        let mut blocks = vec![Block::Conv {
            filters: 64,
            kernel: 3,
            stride: 1,
            padding: 1,
        }];
        for (i, &f) in [64, 128, 256, 512].iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            blocks.push(Block::Residual { filters: f, stride });
            blocks.push(Block::Residual {
                filters: f,
                stride: 1,
            });
        }
        blocks.push(Block::GlobalAvgPool);
        Template {
            name: "resnet18-cifar".into(),
            input: [3, 32, 32],
            blocks,
        }
    }

    /// VGG-16 with batch norm for 64×64 inputs.
    pub fn vgg16_tiny() -> Template {
        let cfg: [&[usize]; 5] = [
            &[64, 64],
            &[128, 128],
            &[256, 256, 256],
            &[512, 512, 512],
            &[512, 512, 512],
        ];
        let mut blocks = Vec::new();
        for stage in cfg {
            for &f in stage {
                blocks.push(Block::Conv {
                    filters: f,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                });
            }
            blocks.push(Block::MaxPool { size: 2 });
        }
        Template {
            name: "vgg16-tiny".into(),
            input: [3, 64, 64],
            blocks,
        }
    }

    pub fn by_name(name: &str) -> Result<Template> {
        match name {
            "desk-cnn" => Ok(Template::desk_cnn()),
            "resnet18-cifar" => Ok(Template::resnet18_cifar()),
            "vgg16-tiny" => Ok(Template::vgg16_tiny()),
            other => Err(Error::Config(format!(
                "unknown architecture template {other:?}"
            ))),
        }
    }

    /// Base filter count of every width unit, in block order.
    pub fn base_widths(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter_map(|b| match *b {
                Block::Conv { filters, .. } | Block::Residual { filters, .. } => Some(filters),
                _ => None,
            })
            .collect()
    }

    pub fn units(&self) -> usize {
        self.base_widths().len()
    }
}

/// Role of a convolution inside its block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvRole {
    Plain,
    ResidualFirst,
    ResidualSecond,
    Shortcut,
}

/// Static topology of one convolution; identical for every task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub name: String,
    pub role: ConvRole,
    /// Width unit that sets this layer's filter count.
    pub unit: usize,
    /// Width unit producing the input, `None` for the image.
    pub input_unit: Option<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// One step of the forward plan, indexing into the conv layer list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PlanStep {
    Conv(usize),
    MaxPool(usize),
    Residual {
        first: usize,
        second: usize,
        shortcut: Option<usize>,
    },
    GlobalAvgPool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub classes: usize,
    /// Filters added per width unit; for task 1 these are the base counts.
    pub growth: Vec<usize>,
}

/// Template plus the growth history of every task so far.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub template: Template,
    pub tasks: Vec<TaskSpec>,
}

/// Parameter counts of one task view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewCounts {
    /// Conv weights of all groups of tasks `<= i`.
    pub conv: u64,
    /// Conv weights if every layer of the view were stored as one dense
    /// `width_out x width_in x k x k` tensor (old filters padded over new channels).
    pub conv_dense: u64,
    /// `BN_i` affine parameters.
    pub norm: u64,
    /// `head_i` weight and bias.
    pub head: u64,
}

impl ViewCounts {
    pub fn total(&self) -> u64 {
        self.conv + self.norm + self.head
    }

    pub fn exclusive(&self) -> u64 {
        self.norm + self.head
    }

    pub fn dense_total(&self) -> u64 {
        self.conv_dense + self.norm + self.head
    }
}

impl NetworkSpec {
    /// Task-1 spec for `template`; fails if shape inference fails.
    pub fn initial(template: Template, classes: usize) -> Result<NetworkSpec> {
        let growth = template.base_widths();
        if growth.is_empty() {
            return Err(Error::Config("template has no convolutional blocks".into()));
        }
        if growth.contains(&0) {
            return Err(Error::Config("base filter counts must be positive".into()));
        }
        let mut spec = NetworkSpec {
            template,
            tasks: Vec::new(),
        };
        spec.push_task(growth, classes)?;
        Ok(spec)
    }

    /// Appends a task with per-unit `growth`; rolls back on shape failure.
    pub fn push_task(&mut self, growth: Vec<usize>, classes: usize) -> Result<usize> {
        if classes == 0 {
            return Err(Error::InvalidArgument(
                "a task needs at least one class".into(),
            ));
        }
        let units = self.template.units();
        if growth.len() != units {
            return Err(Error::InvalidArgument(format!(
                "growth has {} entries, template has {units} width units",
                growth.len()
            )));
        }
        self.tasks.push(TaskSpec { classes, growth });
        let task = self.tasks.len();
        if let Err(e) = self.feature_dim(task) {
            self.tasks.pop();
            return Err(e);
        }
        Ok(task)
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task == 0 || task > self.tasks.len() {
            return Err(Error::UnknownTask(task));
        }
        Ok(())
    }

    pub fn classes(&self, task: usize) -> usize {
        self.tasks[task - 1].classes
    }

    /// Filters added to `unit` by `task` (base count for task 1).
    pub fn growth(&self, unit: usize, task: usize) -> usize {
        self.tasks[task - 1].growth[unit]
    }

    /// Cumulative filter count of `unit` through `task`.
    pub fn width(&self, unit: usize, task: usize) -> usize {
        self.tasks[..task].iter().map(|t| t.growth[unit]).sum()
    }

    /// Channels entering a layer whose input is `input_unit`, as of `task`.
    pub fn input_width(&self, input_unit: Option<usize>, task: usize) -> usize {
        match input_unit {
            None => self.template.input[0],
            Some(u) => self.width(u, task),
        }
    }

    /// Conv layers and the forward plan derived from the template.
    pub fn topology(&self) -> (Vec<ConvLayerSpec>, Vec<PlanStep>) {
        topology(&self.template)
    }

    /// Weight shape `[filters, depth, k, k]` of the group that `task` adds to `layer`,
    /// or `None` when the task adds no filters there.
    pub fn group_shape(&self, layer: &ConvLayerSpec, task: usize) -> Option<[usize; 4]> {
        let g = self.growth(layer.unit, task);
        (g > 0).then(|| {
            [
                g,
                self.input_width(layer.input_unit, task),
                layer.kernel,
                layer.kernel,
            ]
        })
    }

    /// Flattened feature length entering `head_task`; validates every shape on the way.
    pub fn feature_dim(&self, task: usize) -> Result<usize> {
        self.check_task(task)?;
        let (layers, plan) = self.topology();
        let [c, mut h, mut w] = self.template.input;
        let mut channels = c;
        let spatial = |layer: &ConvLayerSpec, h: usize, w: usize| -> Result<(usize, usize)> {
            let oh = window_out(h, layer.kernel, layer.stride, layer.padding);
            let ow = window_out(w, layer.kernel, layer.stride, layer.padding);
            match (oh, ow) {
                (Some(a), Some(b)) => Ok((a, b)),
                _ => Err(Error::invalid_shape(
                    "shape inference",
                    format!(
                        "{}: {h}x{w} input too small for kernel {}",
                        layer.name, layer.kernel
                    ),
                )),
            }
        };
        for step in &plan {
            match *step {
                PlanStep::Conv(l) => {
                    let layer = &layers[l];
                    (h, w) = spatial(layer, h, w)?;
                    channels = self.width(layer.unit, task);
                }
                PlanStep::MaxPool(size) => {
                    if size == 0 || h % size != 0 || w % size != 0 {
                        return Err(Error::invalid_shape(
                            "shape inference",
                            format!("pool {size} does not divide {h}x{w}"),
                        ));
                    }
                    h /= size;
                    w /= size;
                }
                PlanStep::Residual {
                    first,
                    second,
                    shortcut,
                } => {
                    let a = &layers[first];
                    let (oh, ow) = spatial(a, h, w)?;
                    spatial(&layers[second], oh, ow)?;
                    match shortcut {
                        Some(s) => {
                            let (sh, sw) = spatial(&layers[s], h, w)?;
                            if (sh, sw) != (oh, ow) {
                                return Err(Error::invalid_shape(
                                    "shape inference",
                                    format!(
                                        "{}: shortcut {sh}x{sw} vs main path {oh}x{ow}",
                                        a.name
                                    ),
                                ));
                            }
                        }
                        None => {
                            for t in 1..=task {
                                let win = self.input_width(a.input_unit, t);
                                let wout = self.width(a.unit, t);
                                if win != wout {
                                    return Err(Error::invalid_shape(
                                        "shape inference",
                                        format!(
                                            "{}: identity shortcut needs equal widths, task {t} has {win} in and {wout} out",
                                            a.name
                                        ),
                                    ));
                                }
                            }
                        }
                    }
                    (h, w) = (oh, ow);
                    channels = self.width(a.unit, task);
                }
                PlanStep::GlobalAvgPool => {
                    h = 1;
                    w = 1;
                }
            }
        }
        Ok(channels * h * w)
    }

    /// Parameter counts of the view for `task`.
    pub fn view_counts(&self, task: usize) -> Result<ViewCounts> {
        let feat = self.feature_dim(task)? as u64;
        let (layers, _) = self.topology();
        let mut conv = 0u64;
        let mut conv_dense = 0u64;
        let mut norm = 0u64;
        for layer in &layers {
            let w_out = self.width(layer.unit, task);
            let w_in = self.input_width(layer.input_unit, task);
            conv_dense += (w_out * w_in * layer.kernel * layer.kernel) as u64;
            for t in 1..=task {
                if let Some(s) = self.group_shape(layer, t) {
                    conv += s.iter().product::<usize>() as u64;
                }
            }
            norm += 2 * self.width(layer.unit, task) as u64;
        }
        let k = self.classes(task) as u64;
        Ok(ViewCounts {
            conv,
            conv_dense,
            norm,
            head: k * feat + k,
        })
    }
}

pub(crate) fn topology(template: &Template) -> (Vec<ConvLayerSpec>, Vec<PlanStep>) {
    let mut layers = Vec::new();
    let mut plan = Vec::new();
    let mut unit = 0usize;
    let mut prev: Option<usize> = None;
    let in_channels = template.input[0];
    let base = template.base_widths();
    for block in &template.blocks {
        match *block {
            Block::Conv {
                kernel,
                stride,
                padding,
                ..
            } => {
                layers.push(ConvLayerSpec {
                    name: format!("conv{}", unit + 1),
                    role: ConvRole::Plain,
                    unit,
                    input_unit: prev,
                    kernel,
                    stride,
                    padding,
                });
                plan.push(PlanStep::Conv(layers.len() - 1));
                prev = Some(unit);
                unit += 1;
            }
            Block::Residual { stride, .. } => {
                let name = format!("res{}", unit + 1);
                let first = layers.len();
                layers.push(ConvLayerSpec {
                    name: format!("{name}/a"),
                    role: ConvRole::ResidualFirst,
                    unit,
                    input_unit: prev,
                    kernel: 3,
                    stride,
                    padding: 1,
                });
                layers.push(ConvLayerSpec {
                    name: format!("{name}/b"),
                    role: ConvRole::ResidualSecond,
                    unit,
                    input_unit: Some(unit),
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                });
                let base_in = prev.map_or(in_channels, |p| base[p]);
                let shortcut = (stride != 1 || base_in != base[unit]).then(|| {
                    layers.push(ConvLayerSpec {
                        name: format!("{name}/short"),
                        role: ConvRole::Shortcut,
                        unit,
                        input_unit: prev,
                        kernel: 1,
                        stride,
                        padding: 0,
                    });
                    layers.len() - 1
                });
                plan.push(PlanStep::Residual {
                    first,
                    second: first + 1,
                    shortcut,
                });
                prev = Some(unit);
                unit += 1;
            }
            Block::MaxPool { size } => plan.push(PlanStep::MaxPool(size)),
            Block::GlobalAvgPool => plan.push(PlanStep::GlobalAvgPool),
        }
    }
    (layers, plan)
}
