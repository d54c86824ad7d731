//! Task-incremental and class-incremental accuracy, task-prediction accuracy and reports.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::inference::{predict_task_upto, PredictorConfig};
use crate::network::{ExpandableNetwork, GrowthLedger};
use crate::scalar::Scalar;
use crate::trainer::{accuracy, argmax_rows};

pub const REPORT_SCHEMA: u32 = 1;

/// How the task of a test sample is chosen in class-incremental evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TaskPredictor {
    /// The true task id is given.
    Oracle,
    Predict(PredictorConfig),
}

impl TaskPredictor {
    pub fn name(&self) -> &'static str {
        match self {
            TaskPredictor::Oracle => "oracle",
            TaskPredictor::Predict(c) => c.mode.name(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub true_task: usize,
    pub predicted_task: usize,
    pub true_class: usize,
    /// Global class chosen by the predicted view.
    pub predicted_class: usize,
}

impl SampleOutcome {
    pub fn class_correct(&self) -> bool {
        self.predicted_task == self.true_task && self.predicted_class == self.true_class
    }
}

fn fraction(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Sample-weighted accuracy where a sample counts only with the right task and class.
pub fn cil_accuracy(outcomes: &[SampleOutcome]) -> f64 {
    fraction(
        outcomes.iter().filter(|o| o.class_correct()).count(),
        outcomes.len(),
    )
}

pub fn task_pred_accuracy(outcomes: &[SampleOutcome]) -> f64 {
    fraction(
        outcomes
            .iter()
            .filter(|o| o.predicted_task == o.true_task)
            .count(),
        outcomes.len(),
    )
}

/// `confusion[true - 1][predicted - 1]`
pub fn confusion(outcomes: &[SampleOutcome], tasks: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; tasks]; tasks];
    for o in outcomes {
        m[o.true_task - 1][o.predicted_task - 1] += 1;
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TilReport {
    pub per_task: Vec<f64>,
    /// Unweighted mean over tasks.
    pub average: f64,
    /// Accuracy over the pooled samples of all tasks.
    pub pooled: f64,
}

/// Accuracy of every view on its own test set.
pub fn til_accuracy<T: Scalar>(
    net: &ExpandableNetwork<T>,
    tests: &[TaskDataset<T>],
) -> Result<TilReport> {
    if tests.is_empty() {
        return Err(Error::InvalidArgument("no test sets".into()));
    }
    let mut per_task = Vec::with_capacity(tests.len());
    let (mut hits, mut total) = (0.0, 0usize);
    for d in tests {
        net.check_task(d.task)?;
        let a = accuracy(net, d, 256)?;
        hits += a * d.len() as f64;
        total += d.len();
        per_task.push(a);
    }
    Ok(TilReport {
        average: per_task.iter().sum::<f64>() / per_task.len() as f64,
        pooled: if total == 0 { 0.0 } else { hits / total as f64 },
        per_task,
    })
}

/// Stable id of sample `i` of task `task` within a pooled evaluation.
pub fn sample_id(task: usize, i: usize) -> u64 {
    ((task as u64) << 32) | i as u64
}

/// Outcomes on the pooled test sets of tasks `1..=upto`, using views `1..=upto`.
pub fn cil_outcomes<T: Scalar>(
    net: &ExpandableNetwork<T>,
    tests: &[TaskDataset<T>],
    upto: usize,
    predictor: &TaskPredictor,
) -> Result<Vec<SampleOutcome>> {
    if upto == 0 || upto > tests.len() || upto > net.num_tasks() {
        return Err(Error::UnknownTask(upto));
    }
    let mut out = Vec::new();
    for d in &tests[..upto] {
        let per_sample = (0..d.len())
            .into_par_iter()
            .map(|i| {
                let x = d.sample(i);
                let (task, local) = match predictor {
                    TaskPredictor::Oracle => {
                        let logits = net.predict(d.task, &crate::tensor::Tensor::stack(&[x])?)?;
                        (d.task, argmax_rows(&logits)[0])
                    }
                    TaskPredictor::Predict(cfg) => {
                        let p = predict_task_upto(net, upto, &x, sample_id(d.task, i), cfg)?;
                        (p.predicted_task, p.predicted_class_local)
                    }
                };
                Ok(SampleOutcome {
                    true_task: d.task,
                    predicted_task: task,
                    true_class: d.global[i],
                    predicted_class: tests[task - 1].global_of(local),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(per_sample);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CilReport {
    pub predictor: String,
    pub accuracy: f64,
    pub task_prediction_accuracy: f64,
    /// Accuracy over tasks `1..=i` with the stack as of task `i`, for every `i`.
    pub curve: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn cil_report<T: Scalar>(
    net: &ExpandableNetwork<T>,
    tests: &[TaskDataset<T>],
    predictor: &TaskPredictor,
    with_curve: bool,
) -> Result<CilReport> {
    let tasks = tests.len().min(net.num_tasks());
    let last = cil_outcomes(net, tests, tasks, predictor)?;
    let mut curve = Vec::new();
    if with_curve {
        for i in 1..tasks {
            curve.push(cil_accuracy(&cil_outcomes(net, tests, i, predictor)?));
        }
    }
    curve.push(cil_accuracy(&last));
    Ok(CilReport {
        predictor: predictor.name().into(),
        accuracy: cil_accuracy(&last),
        task_prediction_accuracy: task_pred_accuracy(&last),
        curve,
        confusion: confusion(&last, tasks),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub tasks: usize,
    pub til: TilReport,
    /// One entry per predictor that was evaluated.
    pub cil: Vec<CilReport>,
    pub ledger: GrowthLedger,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// One row per task: TIL accuracy and ledger entry.
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("task,til_accuracy,params,dense_params,exclusive,growth,dense_growth\n");
        for (i, a) in self.til.per_task.iter().enumerate() {
            let e = &self.ledger.entries[i];
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                i + 1,
                a,
                e.total,
                e.dense_total,
                e.exclusive,
                e.growth,
                e.dense_growth
            );
        }
        s
    }

    /// Whitespace-separated columns: task, TIL accuracy, then one CIL curve per predictor.
    pub fn to_gnuplot(&self) -> String {
        let mut s = String::from("# task til");
        for c in &self.cil {
            let _ = write!(s, " cil_{}", c.predictor);
        }
        s.push('\n');
        for i in 0..self.tasks {
            let _ = write!(s, "{} {}", i + 1, self.til.per_task[i]);
            for c in &self.cil {
                match c.curve.get(i) {
                    Some(v) if c.curve.len() == self.tasks => {
                        let _ = write!(s, " {v}");
                    }
                    _ => s.push_str(" nan"),
                }
            }
            s.push('\n');
        }
        s
    }
}
