//! Synthetic Gaussian-blob image families.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::container::Container;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Shape of one class: an oriented anisotropic Gaussian at a fixed position.
#[derive(Clone, Debug, PartialEq)]
struct Style {
    /// Centre as a fraction of the image extent.
    cx: f64,
    cy: f64,
    /// Standard deviations along the rotated axes, as fractions of the extent.
    sx: f64,
    sy: f64,
    theta: f64,
    /// Peak intensity per channel.
    amp: Vec<f64>,
}

const BACKGROUND: f64 = 0.1;
/// Standard deviation of the per-sample centre shift, as a fraction of the
/// extent, per unit of noise.
const JITTER: f64 = 0.3;

fn render(style: &Style, dims: [usize; 3], noise: f64, r: &mut Stream) -> Vec<u8> {
    let [c, h, w] = dims;
    let ext = h.min(w) as f64;
    // position and scale are nuisances; both vanish with the noise level
    let jx = noise * JITTER * r.sample::<f64, _>(StandardNormal);
    let jy = noise * JITTER * r.sample::<f64, _>(StandardNormal);
    let js = 1.0 + noise * r.gen_range(-0.5..0.5);
    let (cx, cy) = (
        (style.cx + jx.clamp(-0.1, 0.1)) * w as f64,
        (style.cy + jy.clamp(-0.1, 0.1)) * h as f64,
    );
    let (sx, sy) = (style.sx * js * ext, style.sy * js * ext);
    let (sin, cos) = style.theta.sin_cos();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                let g = (-0.5 * (u * u / (sx * sx) + v * v / (sy * sy))).exp();
                let mut p = BACKGROUND + style.amp[ch] * g;
                if noise > 0.0 {
                    p += noise * r.sample::<f64, _>(StandardNormal);
                }
                out.push((p.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    out
}

fn assemble(
    styles: &[Style],
    per_class: usize,
    dims: [usize; 3],
    noise: f64,
    seed: u64,
    split: u64,
) -> Result<Container> {
    let mut labels = Vec::with_capacity(styles.len() * per_class);
    let mut pixels = Vec::with_capacity(styles.len() * per_class * dims.iter().product::<usize>());
    // interleaved so any prefix of the records is class-balanced
    for i in 0..per_class {
        for (k, s) in styles.iter().enumerate() {
            let mut r = rng::stream(seed, "blob-sample", &[split, k as u64, i as u64]);
            labels.push(k as u16);
            pixels.extend(render(s, dims, noise, &mut r));
        }
    }
    Container::new(dims, styles.len(), labels, pixels)
}

/// Parameters of a blob dataset; class appearance depends only on `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    /// `[C, H, W]`
    pub dims: [usize; 3],
    /// Pixel noise standard deviation on the `[0, 1]` scale.
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.1
}

impl BlobSpec {
    /// Class centres are spread around a ring and neighbouring classes have
    /// orthogonal orientations, so every pair is separable without noise and a
    /// shift of a pixel or two never turns one class into another.
    fn styles(&self) -> Vec<Style> {
        let k = self.classes.max(1) as f64;
        (0..self.classes)
            .map(|c| {
                let mut r = rng::stream(self.seed, "blob-class", &[c as u64]);
                let angle = 2.0 * PI * (c as f64 + r.gen_range(-0.15..0.15)) / k;
                let radius = r.gen_range(0.22..0.3);
                let sx = r.gen_range(0.05..0.07);
                Style {
                    cx: 0.5 + radius * angle.cos(),
                    cy: 0.5 + radius * angle.sin(),
                    sx,
                    sy: sx * r.gen_range(2.2..3.0),
                    theta: PI / 4.0 + PI / 2.0 * (c % 2) as f64 + r.gen_range(-0.2..0.2),
                    amp: (0..self.dims[0]).map(|_| r.gen_range(0.6..1.0)).collect(),
                }
            })
            .collect()
    }

    /// Renders split `split` (0 for training, 1 for test); splits share class styles.
    pub fn generate(&self, split: u64) -> Result<Container> {
        assemble(
            &self.styles(),
            self.per_class,
            self.dims,
            self.noise,
            self.seed,
            split,
        )
    }
}

pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    dims: [usize; 3],
    noise: f64,
    seed: u64,
) -> Result<Container> {
    BlobSpec {
        classes,
        per_class,
        dims,
        noise,
        seed,
    }
    .generate(0)
}

/// Superclass-structured blobs and the two 2-task sequences built from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderedMixedSpec {
    pub superclasses: usize,
    pub classes_per_super: usize,
    pub per_class: usize,
    pub dims: [usize; 3],
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Give every superclass the same style and scatter class positions
    /// independently of superclass, removing the superclass structure.
    #[serde(default)]
    pub shared_style: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderedMixed {
    pub train: Container,
    pub test: Container,
    /// Superclass of every global class.
    pub superclass: Vec<usize>,
    pub ordered: [Vec<usize>; 2],
    pub mixed: [Vec<usize>; 2],
}

impl OrderedMixedSpec {
    pub fn desk(seed: u64) -> Self {
        OrderedMixedSpec {
            superclasses: 4,
            classes_per_super: 5,
            per_class: 40,
            dims: [1, 16, 16],
            noise: 0.1,
            shared_style: false,
            seed,
        }
    }

    /// A superclass occupies one sector of the ring and fixes blob aspect and
    /// intensity; its classes sit at distinct positions inside the sector with
    /// alternating orientations.
    fn styles(&self) -> Vec<Style> {
        let s = self.superclasses as f64;
        let per = self.classes_per_super as f64;
        let mut slots: Vec<usize> = (0..self.superclasses * self.classes_per_super).collect();
        if self.shared_style {
            slots.shuffle(&mut rng::stream(self.seed, "shared-slots", &[]));
        }
        let mut out = Vec::new();
        for sup in 0..self.superclasses {
            let key = if self.shared_style { 0 } else { sup as u64 };
            let mut rs = rng::stream(self.seed, "super-style", &[key]);
            let aspect = rs.gen_range(2.0..3.0);
            let width = rs.gen_range(0.05..0.07);
            let amp: Vec<f64> = (0..self.dims[0]).map(|_| rs.gen_range(0.6..1.0)).collect();
            for c in 0..self.classes_per_super {
                let mut rc = rng::stream(self.seed, "sub-style", &[sup as u64, c as u64]);
                let slot = slots[sup * self.classes_per_super + c] as f64;
                let angle = 2.0 * PI * (slot + rc.gen_range(-0.15..0.15)) / (s * per);
                let radius = rc.gen_range(0.22..0.3);
                out.push(Style {
                    cx: 0.5 + radius * angle.cos(),
                    cy: 0.5 + radius * angle.sin(),
                    sx: width,
                    sy: width * aspect,
                    theta: PI / 4.0 + PI / 2.0 * (c % 2) as f64 + rc.gen_range(-0.2..0.2),
                    amp: amp.iter().map(|a| a * rc.gen_range(0.85..1.0)).collect(),
                });
            }
        }
        out
    }

    pub fn generate(&self) -> Result<OrderedMixed> {
        if self.superclasses == 0 || !self.superclasses.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "superclass count must be even and positive, got {}",
                self.superclasses
            )));
        }
        if self.classes_per_super < 2 {
            return Err(Error::Config(
                "each superclass needs at least two classes".into(),
            ));
        }
        let styles = self.styles();
        let per = self.classes_per_super;
        let superclass: Vec<usize> = (0..styles.len()).map(|c| c / per).collect();
        let half = self.superclasses / 2;
        let ordered = [
            (0..half * per).collect(),
            (half * per..self.superclasses * per).collect(),
        ];
        let mut mixed = [Vec::new(), Vec::new()];
        for sup in 0..self.superclasses {
            // alternate ceil/floor so both tasks get the same total
            let take = if sup % 2 == 0 {
                per.div_ceil(2)
            } else {
                per / 2
            };
            for c in 0..per {
                mixed[usize::from(c >= take)].push(sup * per + c);
            }
        }
        Ok(OrderedMixed {
            train: assemble(&styles, self.per_class, self.dims, self.noise, self.seed, 0)?,
            test: assemble(&styles, self.per_class, self.dims, self.noise, self.seed, 1)?,
            superclass,
            ordered,
            mixed,
        })
    }
}
