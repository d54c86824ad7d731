//! Parameter-growth accounting.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::spec::NetworkSpec;
use crate::error::{Error, Result};

/// Growth from one task to the next: `(P_next - P_prev + E_next) / P_prev`,
/// computed exactly on the integer counts.
pub fn parameter_growth(p_prev: i64, p_next: i64, e_next: i64) -> Result<BigRational> {
    if p_prev < 0 || p_next < 0 || e_next < 0 {
        return Err(Error::InvalidArgument(format!(
            "negative parameter count ({p_prev}, {p_next}, {e_next})"
        )));
    }
    if p_prev == 0 {
        return Err(Error::InvalidArgument(
            "previous parameter count must be positive".into(),
        ));
    }
    Ok(BigRational::new(
        BigInt::from(p_next) - BigInt::from(p_prev) + BigInt::from(e_next),
        BigInt::from(p_prev),
    ))
}

/// Exact mean of growth ratios.
pub fn average_growth(ratios: &[BigRational]) -> BigRational {
    if ratios.is_empty() {
        return BigRational::zero();
    }
    let sum = ratios.iter().fold(BigRational::zero(), |acc, r| acc + r);
    sum / BigRational::from_integer(BigInt::from(ratios.len()))
}

pub fn ratio_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub task: usize,
    /// Parameters used by this task's view.
    pub total: u64,
    /// Same view with each conv layer counted as one dense tensor.
    pub dense_total: u64,
    /// Batch-norm and head parameters trained from scratch for this task.
    pub exclusive: u64,
    pub growth: f64,
    pub dense_growth: f64,
}

/// Per-task parameter counts and growth ratios.
///
/// `growth` counts the weights that exist under prefix wiring. `dense_growth`
/// counts every conv layer of a view as a full `width_out x width_in` tensor,
/// the footprint of an implementation that stores each layer as one array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthLedger {
    /// Parameter count of the equivalent standard (unexpanded) network.
    pub standard: u64,
    pub entries: Vec<LedgerEntry>,
    pub average_growth: f64,
    pub average_dense_growth: f64,
}

fn ratios(totals: &[u64], exclusive: &[u64], standard: u64) -> Result<Vec<BigRational>> {
    let mut out = Vec::with_capacity(totals.len());
    for (i, &p) in totals.iter().enumerate() {
        out.push(if i == 0 {
            BigRational::new(
                BigInt::from(p) - BigInt::from(standard),
                BigInt::from(standard),
            )
        } else {
            parameter_growth(totals[i - 1] as i64, p as i64, exclusive[i] as i64)?
        });
    }
    Ok(out)
}

impl GrowthLedger {
    /// Ledger for every task in `spec`. The first task is measured against the
    /// standard network, which here is the task-1 view itself.
    pub fn from_spec(spec: &NetworkSpec) -> Result<GrowthLedger> {
        let counts = (1..=spec.num_tasks())
            .map(|t| spec.view_counts(t))
            .collect::<Result<Vec<_>>>()?;
        let standard = counts[0].total();
        let exclusive: Vec<u64> = counts.iter().map(|c| c.exclusive()).collect();
        let totals: Vec<u64> = counts.iter().map(|c| c.total()).collect();
        let dense: Vec<u64> = counts.iter().map(|c| c.dense_total()).collect();
        let r = ratios(&totals, &exclusive, standard)?;
        let rd = ratios(&dense, &exclusive, standard)?;
        let entries = (0..counts.len())
            .map(|i| LedgerEntry {
                task: i + 1,
                total: totals[i],
                dense_total: dense[i],
                exclusive: exclusive[i],
                growth: ratio_to_f64(&r[i]),
                dense_growth: ratio_to_f64(&rd[i]),
            })
            .collect();
        Ok(GrowthLedger {
            standard,
            entries,
            average_growth: ratio_to_f64(&average_growth(&r)),
            average_dense_growth: ratio_to_f64(&average_growth(&rd)),
        })
    }
}
