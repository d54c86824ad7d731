//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct FdConfig {
    /// Perturbation is `step * max(|p|, 1)` for coordinate value `p`.
    pub step: f64,
    /// Coordinates checked per tensor; all of them when the tensor is smaller.
    pub max_coords: usize,
    /// Seeds the coordinate sampler.
    pub seed: u64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step: 1e-3,
            max_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `(tensor index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Compares `analytic[i]` against central differences of `f` around `params`.
///
/// The error for a coordinate is `|a - n| / max(|a|, 1e-8)`; the report carries
/// the maximum over all sampled coordinates. `f` must be deterministic.
pub fn finite_diff_check<T: Scalar>(
    params: &mut [Tensor<T>],
    analytic: &[Tensor<T>],
    mut f: impl FnMut(&[Tensor<T>]) -> Result<T>,
    cfg: &FdConfig,
) -> Result<FdReport> {
    if params.len() != analytic.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameters but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for ti in 0..params.len() {
        if params[ti].shape() != analytic[ti].shape() {
            return Err(Error::shape(
                "finite_diff_check",
                params[ti].shape(),
                analytic[ti].shape(),
            ));
        }
        let n = params[ti].numel();
        let coords: Vec<usize> = if n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let orig = params[ti].data()[idx];
            let h = T::lit(cfg.step * orig.to_f64_lossy().abs().max(1.0));
            params[ti].data_mut()[idx] = orig + h;
            let plus = f(params)?;
            params[ti].data_mut()[idx] = orig - h;
            let minus = f(params)?;
            params[ti].data_mut()[idx] = orig;
            let numeric = ((plus - minus) / (h + h)).to_f64_lossy();
            let a = analytic[ti].data()[idx].to_f64_lossy();
            let err = (a - numeric).abs() / a.abs().max(1e-8);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((ti, idx));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
