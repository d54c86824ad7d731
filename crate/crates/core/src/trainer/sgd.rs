use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::network::ExpandableNetwork;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Momentum buffers by parameter path.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SgdState<T> {
    pub velocity: BTreeMap<String, Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// `v <- m·v + g + wd·w; w <- w - lr·v` for every non-frozen parameter in `grads`.
///
/// All gradients are checked before anything is written, so a non-finite
/// gradient leaves the network and state untouched. Returns the paths updated.
pub fn sgd_step<T: Scalar>(
    net: &mut ExpandableNetwork<T>,
    grads: &[(String, Tensor<T>)],
    state: &mut SgdState<T>,
    p: SgdParams,
) -> Result<Vec<String>> {
    for (path, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {path}")));
        }
        let param = net
            .parameter(path)
            .ok_or_else(|| Error::InvalidArgument(format!("no parameter named {path}")))?;
        if param.tensor.shape() != g.shape() {
            return Err(Error::shape("sgd_step", param.tensor.shape(), g.shape()));
        }
    }
    let (lr, m, wd) = (T::lit(p.lr), T::lit(p.momentum), T::lit(p.weight_decay));
    let mut updated = Vec::new();
    for (path, g) in grads {
        let param = net.parameter_mut(path).expect("checked above");
        if param.frozen {
            continue;
        }
        let v = state
            .velocity
            .entry(path.clone())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        for ((vi, &gi), wi) in v
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(param.tensor.data_mut())
        {
            *vi = m * *vi + gi + wd * *wi;
            *wi -= lr * *vi;
        }
        updated.push(path.clone());
    }
    Ok(updated)
}
