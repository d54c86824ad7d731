use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use taskgrow::data::BlobSpec;
use taskgrow::eval::sample_id;
use taskgrow::harness::{
    load_run, params_ledger, run_eval, run_toy_alpha, run_train, schedule_defaults, write_report,
    DataSource, EvalMode, EvalOptions, ExperimentConfig, ToyConfig, TrainOptions, CHECKPOINT_DIR,
};
use taskgrow::inference::{predict_task, PredictorConfig};
use taskgrow::network::Template;
use taskgrow::{Error, Result};

#[derive(Parser)]
#[command(
    name = "taskgrow",
    version,
    about = "Continual learning with per-task filter growth and gradient-based task prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every task of an experiment, checkpointing after each one.
    Train(TrainArgs),
    /// Evaluate a trained run.
    Eval(EvalArgs),
    /// Predict the task of one test sample.
    PredictTask(PredictArgs),
    /// Parameter ledger of a static growth schedule, without training.
    Params(ParamsArgs),
    /// Gradient similarity of the ordered and mixed toy sequences.
    AlphaToy(ToyArgs),
    /// Write a synthetic blob dataset container.
    GenData(GenArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named experiment preset.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let cfg = match (&self.config, &self.preset) {
            (Some(p), _) => ExperimentConfig::load(p)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => ExperimentConfig::default(),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Continue the checkpoint in the run directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this task.
    #[arg(long)]
    stop_after: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Til,
    Cil,
    TaskPred,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "cil")]
    mode: ModeArg,
    /// Predictor config (JSON) replacing the one stored with the run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the predictor seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluate every predictor mode.
    #[arg(long)]
    sweep: bool,
    /// Include the oracle task predictor.
    #[arg(long)]
    oracle: bool,
    /// Accuracy after every task.
    #[arg(long)]
    curve: bool,
    /// Test container replacing the stored dataset (needs --train-data).
    #[arg(long, requires = "train_data")]
    test_data: Option<PathBuf>,
    /// Training container, used for standardisation statistics.
    #[arg(long, requires = "test_data")]
    train_data: Option<PathBuf>,
    /// Report directory; defaults to `<out>/eval`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    out: PathBuf,
    /// True task of the test sample (1-based).
    #[arg(long)]
    task: usize,
    /// Index of the sample within that task's test set.
    #[arg(long)]
    index: usize,
    /// Predictor config (JSON) replacing the one stored with the run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ParamsArgs {
    /// Growth schedule name.
    #[arg(long, default_value = "cifar-resnet-schedule")]
    preset: String,
    /// Architecture template; defaults to the schedule's own.
    #[arg(long)]
    template: Option<String>,
    #[arg(long)]
    tasks: Option<usize>,
    /// Classes per task.
    #[arg(long)]
    classes: Option<usize>,
    /// Print the ledger as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ToyArgs {
    /// Toy config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    /// Write the results as JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    per_class: usize,
    /// Image height and width.
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 0 for training data, 1 for test data.
    #[arg(long, default_value_t = 0)]
    split: u64,
    #[arg(long)]
    out: PathBuf,
}

fn predictor_override(
    path: &Option<PathBuf>,
    seed: Option<u64>,
    stored: PredictorConfig,
) -> Result<Option<PredictorConfig>> {
    let mut p = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None if seed.is_some() => stored,
        None => return Ok(None),
    };
    if let Some(s) = seed {
        p.seed = s;
    }
    Ok(Some(p))
}

fn stored_predictor(out: &Path) -> Result<PredictorConfig> {
    let m = taskgrow::checkpoint::read_manifest(&out.join(CHECKPOINT_DIR))?;
    let cfg: ExperimentConfig =
        serde_json::from_value(m.state.config).map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg.predictor)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.experiment.load()?;
    let m = run_train(
        &cfg,
        &a.out,
        TrainOptions {
            resume: a.resume,
            stop_after: a.stop_after,
        },
    )?;
    for (step, e) in m.state.history.iter().zip(&m.ledger.entries) {
        let alpha = step.alpha.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!(
            "task {:>2}  alpha {alpha:>6}  growth {:?}  params {}  dense growth {:.2}%",
            step.task,
            step.growth,
            e.total,
            100.0 * e.dense_growth
        );
    }
    println!("checkpoint {}", a.out.join(CHECKPOINT_DIR).display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let predictor = predictor_override(&a.config, a.seed, stored_predictor(&a.out)?)?;
    let data = match (&a.train_data, &a.test_data) {
        (Some(train), Some(test)) => Some(DataSource::Container {
            train: train.clone(),
            test: test.clone(),
        }),
        _ => None,
    };
    let opts = EvalOptions {
        mode: match a.mode {
            ModeArg::Til => EvalMode::Til,
            ModeArg::Cil => EvalMode::Cil,
            ModeArg::TaskPred => EvalMode::TaskPred,
        },
        predictor,
        oracle: a.oracle,
        sweep: a.sweep,
        curve: a.curve,
        data,
    };
    let report = run_eval(&a.out.join(CHECKPOINT_DIR), &opts)?;
    println!(
        "til average {:.4}  pooled {:.4}",
        report.til.average, report.til.pooled
    );
    for c in &report.cil {
        match opts.mode {
            EvalMode::TaskPred => println!(
                "{:>22}  task prediction {:.4}",
                c.predictor, c.task_prediction_accuracy
            ),
            _ => println!(
                "{:>22}  cil {:.4}  task prediction {:.4}",
                c.predictor, c.accuracy, c.task_prediction_accuracy
            ),
        }
    }
    let dir = a.report.unwrap_or_else(|| a.out.join("eval"));
    write_report(&report, &dir)?;
    println!("report {}", dir.display());
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let stored = stored_predictor(&a.out)?;
    let cfg = predictor_override(&a.config, a.seed, stored.clone())?.unwrap_or(stored);
    cfg.validate()?;
    let (_, _, net, tests) = load_run(&a.out.join(CHECKPOINT_DIR), None)?;
    let data = tests
        .get(a.task.wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("no task {} in this run", a.task)))?;
    if a.index >= data.len() {
        return Err(Error::Config(format!(
            "task {} has {} test samples, index {} requested",
            a.task,
            data.len(),
            a.index
        )));
    }
    let p = predict_task(
        &net,
        &data.sample(a.index),
        sample_id(a.task, a.index),
        &cfg,
    )?;
    let out = serde_json::json!({
        "sample_id": p.sample_id,
        "per_task_normalized_norms": p.per_task_scores,
        "predicted_task": p.predicted_task,
        "predicted_class_local": p.predicted_class_local,
        "predicted_class_global": tests[p.predicted_task - 1].global_of(p.predicted_class_local),
        "true_task": a.task,
        "true_class_global": data.global[a.index],
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn params(a: ParamsArgs) -> Result<()> {
    let defaults = schedule_defaults(&a.preset);
    let template = match (&a.template, &defaults) {
        (Some(t), _) => Template::by_name(t)?,
        (None, Ok((t, _, _))) => Template::by_name(t)?,
        (None, Err(_)) => return defaults.map(|_| ()),
    };
    let tasks = a
        .tasks
        .or(defaults.as_ref().ok().map(|d| d.1))
        .unwrap_or(10);
    let classes = a
        .classes
        .or(defaults.as_ref().ok().map(|d| d.2))
        .unwrap_or(10);
    let ledger = params_ledger(&a.preset, &template, tasks, classes)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&ledger)?);
        return Ok(());
    }
    println!(
        "{} on {}, {tasks} tasks x {classes} classes",
        a.preset, template.name
    );
    println!("standard network: {} parameters", ledger.standard);
    println!("task      params  dense params  exclusive  growth  dense growth");
    for e in &ledger.entries {
        println!(
            "{:>4} {:>11} {:>13} {:>10} {:>6.2}% {:>12.2}%",
            e.task,
            e.total,
            e.dense_total,
            e.exclusive,
            100.0 * e.growth,
            100.0 * e.dense_growth
        );
    }
    println!(
        "average growth {:.2}% (dense footprint), {:.2}% (prefix-wired weights)",
        100.0 * ledger.average_dense_growth,
        100.0 * ledger.average_growth
    );
    Ok(())
}

fn alpha_toy(a: ToyArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<ToyConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => ToyConfig::default(),
    };
    let mut rows = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        let r = run_toy_alpha(&base.clone().with_seed(seed))?;
        println!(
            "seed {seed}  alpha_ordered {:.4}  alpha_mixed {:.4}  gap {:+.4}",
            r.alpha_ordered, r.alpha_mixed, r.gap
        );
        rows.push(serde_json::json!({ "seed": seed, "result": r }));
    }
    if let Some(out) = a.out {
        std::fs::write(out, serde_json::to_string_pretty(&rows)? + "\n")?;
    }
    Ok(())
}

fn gen_data(a: GenArgs) -> Result<()> {
    let spec = BlobSpec {
        classes: a.classes,
        per_class: a.per_class,
        dims: [a.channels, a.size, a.size],
        noise: a.noise,
        seed: a.seed,
    };
    let c = spec.generate(a.split)?;
    c.write(&a.out)?;
    println!(
        "{} samples of {} classes -> {}",
        c.len(),
        c.classes,
        a.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::PredictTask(a) => predict(a),
        Command::Params(a) => params(a),
        Command::AlphaToy(a) => alpha_toy(a),
        Command::GenData(a) => gen_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
