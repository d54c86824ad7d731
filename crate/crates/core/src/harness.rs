//! End-to-end experiment driver: configuration, sequential training with
//! growth, checkpointing, evaluation and the ordered/mixed similarity toy.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{
    read_checkpoint, read_manifest, write_checkpoint, GrowthStep, Manifest, RunState, SummaryEntry,
    MANIFEST,
};
use crate::data::{
    split_classes, BlobSpec, ClassOrder, Container, OrderedMixed, OrderedMixedSpec, TaskDataset,
    TaskSequence,
};
use crate::error::{Error, Result};
use crate::eval::{cil_report, til_accuracy, EvalReport, TaskPredictor, REPORT_SCHEMA};
use crate::growth::{
    compute_alpha, growth_vector, mean_gradient, GrowthConfig, GrowthMode, TaskGradientSummary,
};
use crate::inference::{default_layers, PredictorConfig, PredictorMode};
use crate::network::{schedule_growth, ExpandableNetwork, GrowthLedger, NetworkSpec, Template};
use crate::rng;
use crate::tensor::Tensor;
use crate::trainer::{train_task, TrainConfig};

pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Synthetic blobs; `seed` defaults to the experiment seed.
    Blobs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dims: [usize; 3],
        noise: f64,
        seed: Option<u64>,
    },
    /// Train and test containers on disk.
    Container { train: PathBuf, test: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub tasks: usize,
    pub class_order: ClassOrder,
    /// Explicit classes per task, for uneven splits.
    pub task_sizes: Option<Vec<usize>>,
    pub template: String,
    pub growth: GrowthConfig,
    pub train: TrainConfig,
    pub predictor: PredictorConfig,
    pub seed: u64,
}

pub const EXPERIMENT_PRESETS: [&str; 4] = ["desk", "desk-spg", "cifar100-10", "tiny-imagenet-10"];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Blobs {
                classes: 10,
                per_class: 200,
                test_per_class: 40,
                dims: [1, 16, 16],
                noise: 0.1,
                seed: None,
            },
            tasks: 5,
            class_order: ClassOrder::Identity,
            task_sizes: None,
            template: "desk-cnn".into(),
            growth: GrowthConfig {
                mode: GrowthMode::Apg,
                ..GrowthConfig::default()
            },
            train: TrainConfig::default(),
            predictor: PredictorConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Named configurations. The CIFAR and Tiny-ImageNet presets expect
    /// containers under `data/`; they describe full-scale runs.
    pub fn preset(name: &str) -> Result<Self> {
        let desk = ExperimentConfig::default();
        match name {
            "desk" => Ok(desk),
            "desk-spg" => Ok(ExperimentConfig {
                growth: GrowthConfig::default(),
                ..desk
            }),
            "cifar100-10" => Ok(ExperimentConfig {
                data: DataSource::Container {
                    train: "data/cifar100-train.clds".into(),
                    test: "data/cifar100-test.clds".into(),
                },
                tasks: 10,
                class_order: ClassOrder::Seeded { seed: 1993 },
                task_sizes: None,
                template: "resnet18-cifar".into(),
                growth: GrowthConfig {
                    mode: GrowthMode::Apg,
                    preset: Some("cifar-resnet-schedule".into()),
                    ..GrowthConfig::default()
                },
                train: TrainConfig::preset("cifar")?,
                predictor: PredictorConfig::cifar(),
                seed: 0,
            }),
            "tiny-imagenet-10" => Ok(ExperimentConfig {
                data: DataSource::Container {
                    train: "data/tiny-imagenet-train.clds".into(),
                    test: "data/tiny-imagenet-val.clds".into(),
                },
                tasks: 10,
                class_order: ClassOrder::Seeded { seed: 1993 },
                task_sizes: None,
                template: "vgg16-tiny".into(),
                growth: GrowthConfig {
                    mode: GrowthMode::Apg,
                    preset: Some("tiny-vgg-schedule".into()),
                    ..GrowthConfig::default()
                },
                train: TrainConfig::preset("tiny")?,
                predictor: PredictorConfig {
                    augmentations: 11,
                    recipe: "tiny".into(),
                    ..PredictorConfig::default()
                },
                seed: 0,
            }),
            other => Err(Error::Config(format!(
                "unknown experiment preset {other:?} (known: {})",
                EXPERIMENT_PRESETS.join(", ")
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Sets the experiment, training, prediction and generator seeds at once.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.predictor.seed = seed;
        if let DataSource::Blobs { seed: s, .. } = &mut self.data {
            *s = Some(seed);
        }
        self
    }

    pub fn template(&self) -> Result<Template> {
        Template::by_name(&self.template)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::Config("at least one task is required".into()));
        }
        let template = self.template()?;
        self.growth.bounds(&template)?;
        self.train.validate()?;
        self.predictor.validate()?;
        if let DataSource::Blobs { dims, .. } = &self.data {
            if *dims != template.input {
                return Err(Error::Config(format!(
                    "blob images are {dims:?} but {} expects {:?}",
                    template.name, template.input
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        let text = serde_json::to_string(self)?;
        Ok(Sha256::digest(text.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut s = BTreeMap::new();
        s.insert("experiment".into(), self.seed);
        s.insert("train".into(), self.train.seed);
        s.insert("predictor".into(), self.predictor.seed);
        if let DataSource::Blobs { seed, .. } = &self.data {
            s.insert("data".into(), seed.unwrap_or(self.seed));
        }
        if let ClassOrder::Seeded { seed } = &self.class_order {
            s.insert("class_order".into(), *seed);
        }
        s
    }

    /// Train and test containers.
    pub fn load_data(&self) -> Result<(Container, Container)> {
        match &self.data {
            DataSource::Blobs {
                classes,
                per_class,
                test_per_class,
                dims,
                noise,
                seed,
            } => {
                let spec = BlobSpec {
                    classes: *classes,
                    per_class: *per_class,
                    dims: *dims,
                    noise: *noise,
                    seed: seed.unwrap_or(self.seed),
                };
                let test = BlobSpec {
                    per_class: *test_per_class,
                    ..spec.clone()
                };
                Ok((spec.generate(0)?, test.generate(1)?))
            }
            DataSource::Container { train, test } => {
                Ok((Container::read(train)?, Container::read(test)?))
            }
        }
    }

    pub fn load_sequence(&self) -> Result<TaskSequence<f32>> {
        let (train, test) = self.load_data()?;
        if train.classes != test.classes || train.dims != test.dims {
            return Err(Error::Config(
                "train and test containers disagree on classes or image size".into(),
            ));
        }
        let template = self.template()?;
        if train.dims != template.input {
            return Err(Error::Config(format!(
                "images are {:?} but {} expects {:?}",
                train.dims, template.name, template.input
            )));
        }
        let classes = split_classes(
            train.classes,
            self.tasks,
            &self.class_order,
            self.task_sizes.as_deref(),
        )?;
        TaskSequence::build(&train, &test, classes)
    }
}

fn capped(data: &TaskDataset<f32>, cap: usize) -> Vec<Tensor<f32>> {
    (0..data.len().min(cap)).map(|i| data.sample(i)).collect()
}

/// Mean gradient of `data` under `view`, rounded through the stored `f32` form
/// so a resumed run sees exactly what an uninterrupted one does.
fn stored_summary(
    net: &ExpandableNetwork<f32>,
    view: usize,
    data: &TaskDataset<f32>,
    layers: &[String],
    cap: usize,
) -> Result<SummaryEntry> {
    let s = mean_gradient(net, view, &capped(data, cap), layers, data.task)?;
    Ok(SummaryEntry::encode(&s))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainOptions {
    pub resume: bool,
    /// Stop after this task has been checkpointed.
    pub stop_after: Option<usize>,
}

/// Trains every task of `cfg` in order, checkpointing into `out/checkpoint`
/// after each one. Returns the final manifest.
pub fn run_train(cfg: &ExperimentConfig, out: &Path, opts: TrainOptions) -> Result<Manifest> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let ckdir = out.join(CHECKPOINT_DIR);
    let (mut net, mut state) = if ckdir.join(MANIFEST).exists() {
        if !opts.resume {
            return Err(Error::Config(format!(
                "{} already holds a checkpoint; pass --resume to continue it",
                out.display()
            )));
        }
        let (m, net) = read_checkpoint::<f32>(&ckdir)?;
        if m.state.config_hash != hash {
            return Err(Error::Config(format!(
                "config hash {hash} does not match the checkpoint's {}",
                m.state.config_hash
            )));
        }
        (Some(net), m.state)
    } else {
        let state = RunState {
            config_hash: hash,
            config: serde_json::to_value(cfg)?,
            seeds: cfg.seeds(),
            history: Vec::new(),
            summaries: Vec::new(),
        };
        (None, state)
    };
    fs::create_dir_all(out)?;
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(cfg)? + "\n",
    )?;

    let seq = cfg.load_sequence()?;
    let template = cfg.template()?;
    let bounds = cfg.growth.bounds(&template)?;
    let cap = cfg.growth.sample_cap;
    let start = state.history.len() + 1;
    for task in start..=cfg.tasks {
        let data = &seq.train[task - 1];
        let k = data.num_classes();
        let mut init = rng::stream(cfg.seed, "init", &[task as u64]);
        let mut current = match net.take() {
            None => ExpandableNetwork::build_initial(template.clone(), k, &mut init)?,
            Some(mut n) => {
                let alpha = match cfg.growth.mode {
                    GrowthMode::Spg => 0.0,
                    GrowthMode::Apg => {
                        let prev = state
                            .summaries
                            .last()
                            .ok_or_else(|| Error::Checkpoint {
                                path: ckdir.clone(),
                                msg: "missing gradient summary of the previous task".into(),
                            })?
                            .decode()?;
                        let layers = cfg.predictor.layers(&n);
                        let new = stored_summary(&n, task - 1, data, &layers, cap)?.decode()?;
                        compute_alpha(&prev, &new)?
                    }
                };
                let growth = growth_vector(cfg.growth.mode, alpha, &bounds);
                n.expand_for_task(task, &growth, k, &mut init)?;
                state.history.push(GrowthStep {
                    task,
                    alpha: Some(alpha),
                    growth,
                });
                n
            }
        };
        if task == 1 {
            state.history.push(GrowthStep {
                task,
                alpha: None,
                growth: template.base_widths(),
            });
        }
        let log = train_task(&mut current, data, &cfg.train)?;
        fs::write(out.join(format!("train_task{task}.csv")), log.to_csv())?;
        let layers = cfg.predictor.layers(&current);
        state
            .summaries
            .push(stored_summary(&current, task, data, &layers, cap)?);
        write_checkpoint(&ckdir, &current, &state)?;
        net = Some(current);
        if opts.stop_after == Some(task) {
            break;
        }
    }
    read_manifest(&ckdir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Til,
    Cil,
    TaskPred,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub mode: EvalMode,
    /// Replaces the predictor stored with the checkpoint.
    pub predictor: Option<PredictorConfig>,
    /// Add the oracle task predictor.
    pub oracle: bool,
    /// Evaluate every predictor mode.
    pub sweep: bool,
    /// Accuracy after each task as well as the final one.
    pub curve: bool,
    /// Replaces the dataset stored with the checkpoint.
    pub data: Option<DataSource>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            mode: EvalMode::Cil,
            predictor: None,
            oracle: false,
            sweep: false,
            curve: false,
            data: None,
        }
    }
}

/// A loaded checkpoint with the config it was trained from and its test sets.
pub type LoadedRun = (
    Manifest,
    ExperimentConfig,
    ExpandableNetwork<f32>,
    Vec<TaskDataset<f32>>,
);

/// Loads a checkpoint and its test data.
pub fn load_run(ckdir: &Path, data: Option<&DataSource>) -> Result<LoadedRun> {
    let (m, net) = read_checkpoint::<f32>(ckdir)?;
    let mut cfg: ExperimentConfig =
        serde_json::from_value(m.state.config.clone()).map_err(|e| Error::Checkpoint {
            path: ckdir.join(MANIFEST),
            msg: format!("stored config: {e}"),
        })?;
    if let Some(d) = data {
        cfg.data = d.clone();
    }
    let n = m.tasks_completed;
    if n == 0 {
        return Err(Error::Checkpoint {
            path: ckdir.to_path_buf(),
            msg: "no completed task".into(),
        });
    }
    let seq = cfg.load_sequence()?;
    if seq.test.len() < n {
        return Err(Error::Config(format!(
            "dataset splits into {} tasks, checkpoint has {n}",
            seq.test.len()
        )));
    }
    for (t, d) in seq.test.iter().take(n).enumerate() {
        if d.num_classes() != net.classes(t + 1) {
            return Err(Error::Config(format!(
                "task {}: dataset has {} classes, checkpoint head has {}",
                t + 1,
                d.num_classes(),
                net.classes(t + 1)
            )));
        }
    }
    let tests = seq.test.into_iter().take(n).collect();
    Ok((m, cfg, net, tests))
}

pub fn run_eval(ckdir: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let (m, cfg, net, tests) = load_run(ckdir, opts.data.as_ref())?;
    let til = til_accuracy(&net, &tests)?;
    let base = opts.predictor.clone().unwrap_or(cfg.predictor);
    base.validate()?;
    let mut predictors = Vec::new();
    if opts.mode != EvalMode::Til {
        if opts.oracle {
            predictors.push(TaskPredictor::Oracle);
        }
        predictors.push(TaskPredictor::Predict(base.clone()));
        if opts.sweep {
            for &mode in PredictorMode::ALL.iter().filter(|&&m| m != base.mode) {
                predictors.push(TaskPredictor::Predict(PredictorConfig {
                    mode,
                    ..base.clone()
                }));
            }
        }
    }
    let cil = predictors
        .iter()
        .map(|p| cil_report(&net, &tests, p, opts.curve))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA,
        tasks: tests.len(),
        til,
        cil,
        ledger: m.ledger,
    })
}

/// Writes `report.json`, `report.csv` and `curves.dat` into `out`.
pub fn write_report(report: &EvalReport, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), report.to_json()?)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    fs::write(out.join("curves.dat"), report.to_gnuplot())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub generator: OrderedMixedSpec,
    pub template: String,
    pub train: TrainConfig,
    pub sample_cap: usize,
    pub selected_layers: Option<Vec<String>>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            generator: OrderedMixedSpec::desk(0),
            template: "desk-cnn".into(),
            // short training: once task 1 has converged its mean gradient
            // mostly balances weight decay and stops reflecting the data
            train: TrainConfig {
                epochs: 5,
                milestones: vec![2, 3],
                ..TrainConfig::default()
            },
            sample_cap: 512,
            selected_layers: None,
        }
    }
}

impl ToyConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.generator.seed = seed;
        self.train.seed = seed;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyAlpha {
    pub alpha_ordered: f64,
    pub alpha_mixed: f64,
    /// `alpha_mixed - alpha_ordered`
    pub gap: f64,
}

/// Trains the first task of `tasks` and returns the similarity of the second
/// task to it, both measured under the first task's view.
pub fn sequence_alpha(
    data: &OrderedMixed,
    tasks: &[Vec<usize>; 2],
    cfg: &ToyConfig,
) -> Result<f64> {
    let template = Template::by_name(&cfg.template)?;
    let seq = TaskSequence::<f32>::build(&data.train, &data.test, tasks.to_vec())?;
    let mut init = rng::stream(cfg.train.seed, "toy-init", &[]);
    let mut net =
        ExpandableNetwork::build_initial(template, seq.train[0].num_classes(), &mut init)?;
    train_task(&mut net, &seq.train[0], &cfg.train)?;
    let layers = cfg
        .selected_layers
        .clone()
        .unwrap_or_else(|| default_layers(net.spec()));
    let summary = |d: &TaskDataset<f32>| -> Result<TaskGradientSummary> {
        mean_gradient(&net, 1, &capped(d, cfg.sample_cap), &layers, d.task)
    };
    compute_alpha(&summary(&seq.train[0])?, &summary(&seq.train[1])?)
}

pub fn run_toy_alpha(cfg: &ToyConfig) -> Result<ToyAlpha> {
    cfg.train.validate()?;
    let data = cfg.generator.generate()?;
    let alpha_ordered = sequence_alpha(&data, &data.ordered, cfg)?;
    let alpha_mixed = sequence_alpha(&data, &data.mixed, cfg)?;
    Ok(ToyAlpha {
        alpha_ordered,
        alpha_mixed,
        gap: alpha_mixed - alpha_ordered,
    })
}

/// Template, task count and classes per task that a named schedule describes.
pub fn schedule_defaults(schedule: &str) -> Result<(&'static str, usize, usize)> {
    match schedule {
        "cifar-resnet-schedule" => Ok(("resnet18-cifar", 10, 10)),
        "tiny-vgg-schedule" => Ok(("vgg16-tiny", 10, 20)),
        "desk-schedule" => Ok(("desk-cnn", 5, 2)),
        other => Err(Error::Config(format!(
            "schedule {other:?} has no default template; pass one explicitly"
        ))),
    }
}

/// Growth ledger of `tasks` static-growth tasks without building any weights.
pub fn params_ledger(
    schedule: &str,
    template: &Template,
    tasks: usize,
    classes: usize,
) -> Result<GrowthLedger> {
    if tasks == 0 {
        return Err(Error::Config("at least one task is required".into()));
    }
    let growth = schedule_growth(schedule, template)?;
    let mut spec = NetworkSpec::initial(template.clone(), classes)?;
    for _ in 1..tasks {
        spec.push_task(growth.clone(), classes)?;
    }
    GrowthLedger::from_spec(&spec)
}
