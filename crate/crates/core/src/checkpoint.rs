//! On-disk checkpoints: `manifest.json` plus one little-endian blob per tensor
//! under `tensors/`, named after the tensor path with `/` replaced by `__`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::TaskGradientSummary;
use crate::network::{ExpandableNetwork, GrowthLedger, NetworkSpec};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_SCHEMA: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
const TENSOR_DIR: &str = "tensors";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn of<T: Scalar>() -> Dtype {
        if std::mem::size_of::<T>() == 4 {
            Dtype::F32
        } else {
            Dtype::F64
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub path: String,
    pub file: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
}

/// Gradient summary stored as base64 of little-endian `f32`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryEntry {
    pub task: usize,
    pub length: usize,
    pub data: String,
}

impl SummaryEntry {
    pub fn encode(s: &TaskGradientSummary) -> SummaryEntry {
        let bytes: Vec<u8> = s
            .vector
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        SummaryEntry {
            task: s.task,
            length: s.vector.len(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<TaskGradientSummary> {
        let bad = |msg: String| Error::Checkpoint {
            path: PathBuf::from(MANIFEST),
            msg,
        };
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| bad(format!("summary of task {}: {e}", self.task)))?;
        if bytes.len() != self.length * 4 {
            return Err(bad(format!(
                "summary of task {} declares {} values but holds {} bytes",
                self.task,
                self.length,
                bytes.len()
            )));
        }
        Ok(TaskGradientSummary {
            task: self.task,
            vector: bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
        })
    }
}

/// Growth decision taken before training a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthStep {
    pub task: usize,
    /// `None` for the first task.
    pub alpha: Option<f64>,
    pub growth: Vec<usize>,
}

/// Everything in a manifest that the network itself does not determine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunState {
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub history: Vec<GrowthStep>,
    pub summaries: Vec<SummaryEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub tasks_completed: usize,
    pub frozen: Vec<bool>,
    pub spec: NetworkSpec,
    pub ledger: GrowthLedger,
    pub state: RunState,
    pub tensors: Vec<TensorEntry>,
}

pub fn tensor_file(path: &str) -> String {
    format!("{}.bin", path.replace('/', "__"))
}

fn err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn encode<T: Scalar>(t: &Tensor<T>, dtype: Dtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.numel() * dtype.width());
    for &v in t.data() {
        match dtype {
            Dtype::F32 => out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&v.to_f64_lossy().to_le_bytes()),
        }
    }
    out
}

fn decode<T: Scalar>(bytes: &[u8], dtype: Dtype) -> Vec<T> {
    match dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
            .collect(),
    }
}

/// Writes `net` and `state` to `dir`, replacing any previous checkpoint there.
/// The new checkpoint is assembled next to `dir` and moved into place.
pub fn write_checkpoint<T: Scalar>(
    dir: &Path,
    net: &ExpandableNetwork<T>,
    state: &RunState,
) -> Result<()> {
    let staging = dir.with_extension("partial");
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(staging.join(TENSOR_DIR))?;
    let dtype = Dtype::of::<T>();
    let mut tensors = Vec::new();
    for (path, t) in net.named_tensors() {
        let file = tensor_file(&path);
        fs::write(staging.join(TENSOR_DIR).join(&file), encode(t, dtype))?;
        tensors.push(TensorEntry {
            path,
            file,
            shape: t.shape().to_vec(),
            dtype,
        });
    }
    let manifest = Manifest {
        schema_version: CHECKPOINT_SCHEMA,
        tasks_completed: (1..=net.num_tasks()).filter(|&t| net.is_frozen(t)).count(),
        frozen: (1..=net.num_tasks()).map(|t| net.is_frozen(t)).collect(),
        spec: net.spec().clone(),
        ledger: net.ledger()?,
        state: state.clone(),
        tensors,
    };
    fs::write(
        staging.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&staging, dir)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| err(&path, e.to_string()))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| err(&path, e.to_string()))?;
    if m.schema_version != CHECKPOINT_SCHEMA {
        return Err(err(
            &path,
            format!("unsupported schema version {}", m.schema_version),
        ));
    }
    if m.frozen.len() != m.spec.num_tasks() || m.spec.num_tasks() == 0 {
        return Err(err(&path, "frozen flags do not match the task count"));
    }
    Ok(m)
}

/// Rebuilds the network stored in `dir`.
pub fn read_checkpoint<T: Scalar>(dir: &Path) -> Result<(Manifest, ExpandableNetwork<T>)> {
    let m = read_manifest(dir)?;
    let mpath = dir.join(MANIFEST);
    // weights are overwritten below; the stream only fixes shapes
    let mut r = rng::stream(0, "restore", &[]);
    let tasks = &m.spec.tasks;
    let mut net =
        ExpandableNetwork::<T>::build_initial(m.spec.template.clone(), tasks[0].classes, &mut r)
            .map_err(|e| err(&mpath, e.to_string()))?;
    for (i, ts) in tasks.iter().enumerate().skip(1) {
        if !m.frozen[i - 1] {
            return Err(err(
                &mpath,
                format!("task {i} is not frozen but task {} exists", i + 1),
            ));
        }
        net.freeze(i)?;
        net.expand_for_task(i + 1, &ts.growth, ts.classes, &mut r)
            .map_err(|e| err(&mpath, e.to_string()))?;
    }
    if m.frozen[tasks.len() - 1] {
        net.freeze(tasks.len())?;
    }
    let expected: Vec<(String, Vec<usize>)> = net
        .named_tensors()
        .into_iter()
        .map(|(p, t)| (p, t.shape().to_vec()))
        .collect();
    let stored: Vec<(String, Vec<usize>)> = m
        .tensors
        .iter()
        .map(|e| (e.path.clone(), e.shape.clone()))
        .collect();
    if expected != stored {
        return Err(err(
            &mpath,
            "tensor list does not match the stored architecture",
        ));
    }
    for e in &m.tensors {
        let file = dir.join(TENSOR_DIR).join(&e.file);
        let bytes = fs::read(&file).map_err(|x| err(&file, x.to_string()))?;
        let n: usize = e.shape.iter().product();
        if bytes.len() != n * e.dtype.width() {
            return Err(err(
                &file,
                format!(
                    "expected {} bytes, found {}",
                    n * e.dtype.width(),
                    bytes.len()
                ),
            ));
        }
        net.load_tensor(
            &e.path,
            Tensor::new(e.shape.clone(), decode(&bytes, e.dtype))?,
        )?;
    }
    Ok((m, net))
}
