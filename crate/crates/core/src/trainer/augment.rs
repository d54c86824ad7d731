//! Shape-preserving image augmentations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    /// Zero-pad by `pad` on every side, then crop back to the original size at a random offset.
    PadCrop {
        pad: usize,
    },
    HorizontalFlip {
        p: f64,
    },
    /// Bilinear rotation about the centre by a uniform angle in `[-degrees, degrees]`.
    Rotation {
        degrees: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentRecipe {
    pub transforms: Vec<Transform>,
}

pub const RECIPES: [&str; 4] = ["none", "desk", "cifar", "tiny"];

impl AugmentRecipe {
    pub fn identity() -> Self {
        AugmentRecipe { transforms: vec![] }
    }

    pub fn by_id(id: &str) -> Result<Self> {
        use Transform::*;
        let transforms = match id {
            "none" => vec![],
            // blob classes are position coded: small shifts only, no flips
            "desk" => vec![PadCrop { pad: 2 }],
            "cifar" => vec![
                PadCrop { pad: 4 },
                HorizontalFlip { p: 0.5 },
                Rotation { degrees: 10.0 },
            ],
            "tiny" => vec![
                PadCrop { pad: 8 },
                HorizontalFlip { p: 0.5 },
                Rotation { degrees: 10.0 },
            ],
            other => {
                return Err(Error::Config(format!(
                    "unknown augmentation recipe {other:?}"
                )))
            }
        };
        Ok(AugmentRecipe { transforms })
    }

    pub fn is_identity(&self) -> bool {
        self.transforms.iter().all(|t| match *t {
            Transform::PadCrop { pad } => pad == 0,
            Transform::HorizontalFlip { p } => p <= 0.0,
            Transform::Rotation { degrees } => degrees == 0.0,
        })
    }
}

fn dims3<T: Scalar>(x: &Tensor<T>) -> Result<[usize; 3]> {
    match x.shape() {
        &[c, h, w] => Ok([c, h, w]),
        s => Err(Error::InvalidArgument(format!(
            "augment expects a C×H×W image, got {s:?}"
        ))),
    }
}

pub fn hflip<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [c, h, w] = dims3(x).expect("image");
    let d = x.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let col = i % w;
        d[i - col + (w - 1 - col)]
    })
}

/// Window of the zero-padded image starting at `(oy, ox)` in padded coordinates.
pub fn pad_crop<T: Scalar>(x: &Tensor<T>, pad: usize, oy: usize, ox: usize) -> Tensor<T> {
    let [c, h, w] = dims3(x).expect("image");
    let d = x.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let (y, xx) = ((i / w) % h + oy, i % w + ox);
        if y < pad || xx < pad || y - pad >= h || xx - pad >= w {
            T::zero()
        } else {
            d[(ch * h + y - pad) * w + xx - pad]
        }
    })
}

pub fn rotate<T: Scalar>(x: &Tensor<T>, degrees: f64) -> Tensor<T> {
    let [c, h, w] = dims3(x).expect("image");
    let d = x.data();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let at = |ch: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            d[(ch * h + y as usize) * w + xx as usize].to_f64_lossy()
        }
    };
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let (y, xx) = (((i / w) % h) as f64 - cy, (i % w) as f64 - cx);
        // inverse map from output to source coordinates
        let sx = cos * xx + sin * y + cx;
        let sy = -sin * xx + cos * y + cy;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let v = (1.0 - fy) * ((1.0 - fx) * at(ch, y0, x0) + fx * at(ch, y0, x0 + 1))
            + fy * ((1.0 - fx) * at(ch, y0 + 1, x0) + fx * at(ch, y0 + 1, x0 + 1));
        T::lit(v)
    })
}

/// Applies the recipe in order, drawing every random decision from `rng`.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    x: &Tensor<T>,
    recipe: &AugmentRecipe,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let [_, h, w] = dims3(x)?;
    let mut out = x.clone();
    for t in &recipe.transforms {
        match *t {
            Transform::PadCrop { pad } => {
                if pad == 0 {
                    continue;
                }
                if h * w <= 1 {
                    return Err(Error::InvalidArgument("random crop on a 1×1 image".into()));
                }
                let oy = rng.gen_range(0..=2 * pad);
                let ox = rng.gen_range(0..=2 * pad);
                out = pad_crop(&out, pad, oy, ox);
            }
            Transform::HorizontalFlip { p } => {
                if rng.gen::<f64>() < p {
                    out = hflip(&out);
                }
            }
            Transform::Rotation { degrees } => {
                if degrees == 0.0 {
                    continue;
                }
                if h * w <= 1 {
                    return Err(Error::InvalidArgument("rotation on a 1×1 image".into()));
                }
                out = rotate(&out, rng.gen_range(-degrees..=degrees));
            }
        }
    }
    Ok(out)
}
