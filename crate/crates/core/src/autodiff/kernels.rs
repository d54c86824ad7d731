//! Forward and backward kernels for the layer primitives.
//!
//! All image tensors are NCHW, row-major. Convolution is cross-correlation
//! (no kernel flip).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Output extent of a strided, padded window (floor division); `None` when the
/// window does not fit.
pub fn window_out(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

impl ConvGeometry {
    pub fn infer(
        input: &[usize],
        weight: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<ConvGeometry> {
        let (&[n, c, h, w], &[f, wc, kh, kw]) = (input, weight) else {
            return Err(Error::shape("conv2d", input, weight));
        };
        if wc != c || kh != kw || kh == 0 {
            return Err(Error::shape("conv2d", input, weight));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d: stride must be >= 1".into()));
        }
        let out = |len| {
            window_out(len, kh, stride, padding).ok_or_else(|| {
                Error::invalid_shape(
                    "conv2d",
                    format!("extent {len} is smaller than kernel {kh} with padding {padding}"),
                )
            })
        };
        Ok(ConvGeometry {
            batch: n,
            in_channels: c,
            in_h: h,
            in_w: w,
            filters: f,
            kernel: kh,
            stride,
            padding,
            out_h: out(h)?,
            out_w: out(w)?,
        })
    }
}

/// Range of output positions `o` for which `o * stride + offset - padding` lands inside `[0, len)`.
#[inline]
fn valid(offset: usize, g: &ConvGeometry, len: usize, out_len: usize) -> (usize, usize) {
    let s = g.stride;
    let lo = if g.padding > offset {
        (g.padding - offset).div_ceil(s)
    } else {
        0
    };
    let top = len + g.padding;
    let hi = if top > offset {
        ((top - offset - 1) / s + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeometry,
) -> Tensor<T> {
    let (xd, wd) = (x.data(), w.data());
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let mut out = vec![T::zero(); g.batch * g.filters * plane_out];
    if plane_out == 0 {
        return Tensor::new(vec![g.batch, g.filters, g.out_h, g.out_w], out)
            .expect("conv output shape");
    }
    // one task per output plane; each plane is accumulated in a fixed order
    out.par_chunks_mut(plane_out)
        .enumerate()
        .for_each(|(nf, o)| {
            let (n, f) = (nf / g.filters, nf % g.filters);
            if let Some(b) = bias {
                o.fill(b.data()[f]);
            }
            for c in 0..g.in_channels {
                let xin = &xd[(n * g.in_channels + c) * plane_in..][..plane_in];
                for kh in 0..k {
                    let (oh_lo, oh_hi) = valid(kh, g, g.in_h, g.out_h);
                    for kw in 0..k {
                        let wv = wd[((f * g.in_channels + c) * k + kh) * k + kw];
                        let (ow_lo, ow_hi) = valid(kw, g, g.in_w, g.out_w);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + kh - p;
                            let row = &xin[ih * g.in_w..];
                            let orow = &mut o[oh * g.out_w..];
                            for ow in ow_lo..ow_hi {
                                orow[ow] += wv * row[ow * s + kw - p];
                            }
                        }
                    }
                }
            }
        });
    Tensor::new(vec![g.batch, g.filters, g.out_h, g.out_w], out).expect("conv output shape")
}

/// Returns `(dx, dw, db)`; `dx` is skipped when `need_input` is false.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: &ConvGeometry,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let (k, s, p) = (g.kernel, g.stride, g.padding);
    let plane_in = g.in_h * g.in_w;
    let plane_out = g.out_h * g.out_w;
    let filter_len = g.in_channels * k * k;
    let mut dw = vec![T::zero(); wd.len()];
    let mut db = vec![T::zero(); g.filters];
    // weight and bias gradients: one task per filter
    dw.par_chunks_mut(filter_len.max(1))
        .zip(db.par_iter_mut())
        .enumerate()
        .for_each(|(f, (dwf, dbf))| {
            for n in 0..g.batch {
                let go = &dyd[(n * g.filters + f) * plane_out..][..plane_out];
                *dbf += go.iter().copied().sum::<T>();
                for c in 0..g.in_channels {
                    let xin = &xd[(n * g.in_channels + c) * plane_in..][..plane_in];
                    for kh in 0..k {
                        let (oh_lo, oh_hi) = valid(kh, g, g.in_h, g.out_h);
                        for kw in 0..k {
                            let (ow_lo, ow_hi) = valid(kw, g, g.in_w, g.out_w);
                            let mut acc = T::zero();
                            for oh in oh_lo..oh_hi {
                                let ih = oh * s + kh - p;
                                let grow = &go[oh * g.out_w..];
                                let xrow = &xin[ih * g.in_w..];
                                for ow in ow_lo..ow_hi {
                                    acc += grow[ow] * xrow[ow * s + kw - p];
                                }
                            }
                            dwf[(c * k + kh) * k + kw] += acc;
                        }
                    }
                }
            }
        });
    // input gradient: one task per input plane
    let dx = need_input.then(|| {
        let mut dx = vec![T::zero(); xd.len()];
        if plane_in > 0 {
            dx.par_chunks_mut(plane_in)
                .enumerate()
                .for_each(|(nc, dxp)| {
                    let (n, c) = (nc / g.in_channels, nc % g.in_channels);
                    for f in 0..g.filters {
                        let go = &dyd[(n * g.filters + f) * plane_out..][..plane_out];
                        for kh in 0..k {
                            let (oh_lo, oh_hi) = valid(kh, g, g.in_h, g.out_h);
                            for kw in 0..k {
                                let wv = wd[((f * g.in_channels + c) * k + kh) * k + kw];
                                let (ow_lo, ow_hi) = valid(kw, g, g.in_w, g.out_w);
                                for oh in oh_lo..oh_hi {
                                    let ih = oh * s + kh - p;
                                    let grow = &go[oh * g.out_w..];
                                    let dxrow = &mut dxp[ih * g.in_w..];
                                    for ow in ow_lo..ow_hi {
                                        dxrow[ow * s + kw - p] += grow[ow] * wv;
                                    }
                                }
                            }
                        }
                    }
                });
        }
        Tensor::new(x.shape().to_vec(), dx).expect("dx shape")
    });
    (
        dx,
        Tensor::new(w.shape().to_vec(), dw).expect("dw shape"),
        Tensor::new(vec![g.filters], db).expect("db shape"),
    )
}

/// `input · weightᵀ + bias` for `input: [N, D]`, `weight: [O, D]`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, d) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    let mut out = vec![T::zero(); n * o];
    for i in 0..n {
        let xr = &x.data()[i * d..(i + 1) * d];
        for j in 0..o {
            let wr = &w.data()[j * d..(j + 1) * d];
            let mut acc = b.map_or(T::zero(), |b| b.data()[j]);
            for (&a, &b) in xr.iter().zip(wr) {
                acc += a * b;
            }
            out[i * o + j] = acc;
        }
    }
    Tensor::new(vec![n, o], out).expect("linear output shape")
}

pub struct BnForward<T> {
    pub output: Tensor<T>,
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
    /// Batch mean and unbiased batch variance (train mode only).
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

fn bn_layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let inner: usize = shape[2..].iter().product();
    (n, c, inner)
}

/// Batch norm with batch statistics (`stats = None`) or fixed statistics.
pub fn batch_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    stats: Option<(&[T], &[T])>,
    eps: T,
) -> BnForward<T> {
    let (n, c, inner) = bn_layout(x.shape());
    let m = n * inner;
    let xd = x.data();
    let mut x_hat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    let mut inv_std = vec![T::zero(); c];
    let mut batch_mean = Vec::new();
    let mut batch_var = Vec::new();
    let mf = T::from_usize_lossy(m);
    for ch in 0..c {
        let idx = |b: usize, i: usize| (b * c + ch) * inner + i;
        let (mean, var) = match stats {
            Some((mu, var)) => (mu[ch], var[ch]),
            None => {
                let mut s = T::zero();
                for b in 0..n {
                    for i in 0..inner {
                        s += xd[idx(b, i)];
                    }
                }
                let mean = s / mf;
                let mut sq = T::zero();
                for b in 0..n {
                    for i in 0..inner {
                        let d = xd[idx(b, i)] - mean;
                        sq += d * d;
                    }
                }
                let var = sq / mf;
                batch_mean.push(mean);
                let unbiased = if m > 1 {
                    sq / T::from_usize_lossy(m - 1)
                } else {
                    var
                };
                batch_var.push(unbiased);
                (mean, var)
            }
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        for b in 0..n {
            for i in 0..inner {
                let j = idx(b, i);
                let h = (xd[j] - mean) * is;
                x_hat[j] = h;
                out[j] = gamma[ch] * h + beta[ch];
            }
        }
    }
    BnForward {
        output: Tensor::new(x.shape().to_vec(), out).expect("bn output"),
        x_hat: Tensor::new(x.shape().to_vec(), x_hat).expect("bn x_hat"),
        inv_std,
        batch_mean,
        batch_var,
    }
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    x_hat: &Tensor<T>,
    gamma: &[T],
    inv_std: &[T],
    batch_stats: bool,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let (n, c, inner) = bn_layout(dy.shape());
    let m = T::from_usize_lossy(n * inner);
    let (dyd, xh) = (dy.data(), x_hat.data());
    let mut dx = vec![T::zero(); dyd.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let idx = |b: usize, i: usize| (b * c + ch) * inner + i;
        let (mut sdy, mut sdyx) = (T::zero(), T::zero());
        for b in 0..n {
            for i in 0..inner {
                let j = idx(b, i);
                sdy += dyd[j];
                sdyx += dyd[j] * xh[j];
            }
        }
        dgamma[ch] = sdyx;
        dbeta[ch] = sdy;
        let scale = gamma[ch] * inv_std[ch];
        for b in 0..n {
            for i in 0..inner {
                let j = idx(b, i);
                dx[j] = if batch_stats {
                    scale / m * (m * dyd[j] - sdy - xh[j] * sdyx)
                } else {
                    scale * dyd[j]
                };
            }
        }
    }
    (
        Tensor::new(dy.shape().to_vec(), dx).expect("bn dx"),
        dgamma,
        dbeta,
    )
}

/// Non-overlapping max pooling; returns the output and the flat input index of each maximum.
/// Ties go to the first index in row-major window order.
pub fn max_pool_forward<T: Scalar>(x: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4("max_pool")?;
    if size == 0 || h % size != 0 || w % size != 0 {
        return Err(Error::invalid_shape(
            "max_pool",
            format!("window {size} does not divide {h}x{w}"),
        ));
    }
    let (oh, ow) = (h / size, w / size);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * size * w + j * size;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = base + (i * size + di) * w + j * size + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

/// Numerically stable softmax over the rows of `[N, K]`.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let k = x.shape()[1];
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("softmax shape")
}

/// `log Σ exp(row)` per row.
pub fn log_sum_exp_rows<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let k = x.shape()[1];
    x.data()
        .chunks(k)
        .map(|row| {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extent() {
        assert_eq!(window_out(5, 3, 1, 1), Some(5));
        assert_eq!(window_out(16, 3, 2, 1), Some(8));
        assert_eq!(window_out(4, 3, 2, 1), Some(2));
        assert_eq!(window_out(2, 3, 1, 0), None);
    }

    #[test]
    fn strided_conv_bounds() {
        // 4x4 input, 3x3 ones kernel, stride 2, padding 1 -> 2x2 output
        let x = Tensor::<f64>::ones(&[1, 1, 4, 4]);
        let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let g = ConvGeometry::infer(x.shape(), w.shape(), 2, 1).unwrap();
        let y = conv2d_forward(&x, &w, None, &g);
        assert_eq!(y.data(), &[4.0, 6.0, 6.0, 9.0]);
    }
}
