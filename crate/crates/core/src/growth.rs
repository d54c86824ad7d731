//! Static and adaptive per-task growth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{gradient_embedding, Reduction, Weighting};
use crate::network::{schedule_growth, ExpandableNetwork, Template};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthMode {
    /// Always grow by `g_max`.
    Spg,
    /// Interpolate between `g_max` and `g_min` by task similarity.
    Apg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub mode: GrowthMode,
    /// Named schedule providing `g_max`; ignored when `g_max` is given.
    pub preset: Option<String>,
    pub g_min: Option<Vec<usize>>,
    pub g_max: Option<Vec<usize>>,
    /// Samples per task used for mean gradients.
    pub sample_cap: usize,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            mode: GrowthMode::Spg,
            preset: Some("desk-schedule".into()),
            g_min: None,
            g_max: None,
            sample_cap: 512,
        }
    }
}

/// Per-unit growth bounds for one template.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrowthBounds {
    pub g_min: Vec<usize>,
    pub g_max: Vec<usize>,
}

impl GrowthConfig {
    pub fn bounds(&self, template: &Template) -> Result<GrowthBounds> {
        let units = template.units();
        let g_max = match (&self.g_max, &self.preset) {
            (Some(g), _) => g.clone(),
            (None, Some(p)) => schedule_growth(p, template)?,
            (None, None) => {
                return Err(Error::Config(
                    "growth needs a preset or explicit g_max".into(),
                ))
            }
        };
        let g_min = self.g_min.clone().unwrap_or_else(|| vec![1; units]);
        if g_max.len() != units || g_min.len() != units {
            return Err(Error::Config(format!(
                "growth bounds need {units} entries for {}, got g_min {} and g_max {}",
                template.name,
                g_min.len(),
                g_max.len()
            )));
        }
        if let Some(j) = (0..units).find(|&j| g_min[j] == 0 || g_min[j] > g_max[j]) {
            return Err(Error::Config(format!(
                "unit {j}: need 1 <= g_min ({}) <= g_max ({})",
                g_min[j], g_max[j]
            )));
        }
        if self.sample_cap == 0 {
            return Err(Error::Config("sample cap must be positive".into()));
        }
        Ok(GrowthBounds { g_min, g_max })
    }
}

/// Unit-norm mean of reduced gradient embeddings over one task's samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGradientSummary {
    pub task: usize,
    pub vector: Vec<f64>,
}

fn pairwise_sum(items: &[Vec<f64>]) -> Vec<f64> {
    match items.len() {
        0 => Vec::new(),
        1 => items[0].clone(),
        n => {
            let (a, b) = rayon::join(
                || pairwise_sum(&items[..n / 2]),
                || pairwise_sum(&items[n / 2..]),
            );
            a.iter().zip(&b).map(|(x, y)| x + y).collect()
        }
    }
}

/// Embeds each sample under view `view` (one slot, unit weight, mean-filters
/// reduction), averages with a fixed pairwise order and normalises.
pub fn mean_gradient<T: Scalar>(
    net: &ExpandableNetwork<T>,
    view: usize,
    samples: &[Tensor<T>],
    layers: &[String],
    task: usize,
) -> Result<TaskGradientSummary> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "mean gradient of an empty sample set".into(),
        ));
    }
    let embeddings = samples
        .par_iter()
        .map(|x| {
            let batch = Tensor::stack(std::slice::from_ref(x))?;
            Ok(gradient_embedding(
                net,
                view,
                &batch,
                layers,
                Weighting::Unit,
                Reduction::MeanFilters,
            )?
            .vector())
        })
        .collect::<Result<Vec<_>>>()?;
    let n = embeddings.len() as f64;
    let mean: Vec<f64> = pairwise_sum(&embeddings)
        .into_iter()
        .map(|v| v / n)
        .collect();
    Ok(TaskGradientSummary {
        task,
        vector: normalize(&mean)?,
    })
}

pub fn normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Degenerate(format!("mean gradient has norm {norm}")));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// `|u · v|` for unit vectors, in `[0, 1]`. Both are renormalised first, since
/// stored summaries are rounded to f32 and are unit only to about 1e-7.
pub fn compute_alpha(prev: &TaskGradientSummary, new: &TaskGradientSummary) -> Result<f64> {
    if prev.vector.len() != new.vector.len() {
        return Err(Error::shape(
            "compute_alpha",
            &[prev.vector.len()],
            &[new.vector.len()],
        ));
    }
    let u = normalize(&prev.vector)?;
    let v = normalize(&new.vector)?;
    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let alpha = dot.abs();
    // unit vectors bound the product up to rounding
    assert!(
        alpha <= 1.0 + 1e-9,
        "Cauchy-Schwarz violated: alpha = {alpha}"
    );
    Ok(alpha.min(1.0))
}

/// `round(α·g_min + (1-α)·g_max)`, halves rounded away from zero.
pub fn growth_rate(alpha: f64, g_min: usize, g_max: usize) -> usize {
    let a = alpha.clamp(0.0, 1.0);
    (a * g_min as f64 + (1.0 - a) * g_max as f64).round() as usize
}

/// Growth for every unit; static growth ignores `alpha`.
pub fn growth_vector(mode: GrowthMode, alpha: f64, bounds: &GrowthBounds) -> Vec<usize> {
    let a = match mode {
        GrowthMode::Spg => 0.0,
        GrowthMode::Apg => alpha,
    };
    bounds
        .g_min
        .iter()
        .zip(&bounds.g_max)
        .map(|(&lo, &hi)| growth_rate(a, lo, hi))
        .collect()
}
