use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AsiError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::volume::{Image, Volume};

/// Patches cut at one in-plane location from slices `n−1`, `n`, `n+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceTriplet {
    pub x_prev: Image<f32>,
    pub x_mid: Image<f32>,
    pub x_next: Image<f32>,
}

impl SliceTriplet {
    pub fn new(x_prev: Image<f32>, x_mid: Image<f32>, x_next: Image<f32>) -> Result<Self> {
        x_prev.check_same(&x_mid)?;
        x_mid.check_same(&x_next)?;
        Ok(Self {
            x_prev,
            x_mid,
            x_next,
        })
    }

    pub fn map(&self, f: impl Fn(&Image<f32>) -> Image<f32>) -> Self {
        Self {
            x_prev: f(&self.x_prev),
            x_mid: f(&self.x_mid),
            x_next: f(&self.x_next),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.x_mid.height(), self.x_mid.width())
    }
}

/// Triplets stacked into three `[T, 1, H, W]` tensors.
#[derive(Clone, Debug)]
pub struct TripletBatch<T> {
    pub prev: Tensor<T>,
    pub mid: Tensor<T>,
    pub next: Tensor<T>,
}

impl<T: Scalar> TripletBatch<T> {
    pub fn from_triplets(triplets: &[SliceTriplet]) -> Result<Self> {
        let stack = |f: fn(&SliceTriplet) -> &Image<f32>| -> Result<Tensor<T>> {
            let imgs: Vec<Image<T>> = triplets.iter().map(|t| f(t).cast()).collect();
            Image::stack(&imgs.iter().collect::<Vec<_>>())
        };
        Ok(Self {
            prev: stack(|t| &t.x_prev)?,
            mid: stack(|t| &t.x_mid)?,
            next: stack(|t| &t.x_next)?,
        })
    }

    pub fn len(&self) -> usize {
        self.mid.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Source of training triplets for one epoch.
pub trait TripletSampler {
    /// Number of distinct middle slices; one epoch draws about this many
    /// triplets.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(
        &self,
        count: usize,
        patch: usize,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<SliceTriplet>>;
}

/// Slice stacks from which consecutive triplets are cut.
#[derive(Clone, Debug, Default)]
pub struct StackDataset {
    stacks: Vec<Vec<Image<f32>>>,
    /// `(stack, middle slice)` for every slice with two neighbours.
    middles: Vec<(usize, usize)>,
}

impl StackDataset {
    /// Stacks with fewer than three slices are skipped.
    pub fn new(stacks: Vec<Vec<Image<f32>>>) -> Result<Self> {
        let mut middles = Vec::new();
        for (s, stack) in stacks.iter().enumerate() {
            if let Some(first) = stack.first() {
                for im in stack {
                    first.check_same(im)?;
                }
            }
            if stack.len() < 3 {
                log::warn!("stack {s} has {} slices and is skipped", stack.len());
                continue;
            }
            middles.extend((1..stack.len() - 1).map(|n| (s, n)));
        }
        Ok(Self { stacks, middles })
    }

    pub fn from_volumes(volumes: &[Volume]) -> Result<Self> {
        Self::new(volumes.iter().map(Volume::slices).collect())
    }

    pub fn middles(&self) -> &[(usize, usize)] {
        &self.middles
    }

    pub fn triplet_at(&self, stack: usize, n: usize) -> SliceTriplet {
        let s = &self.stacks[stack];
        SliceTriplet {
            x_prev: s[n - 1].clone(),
            x_mid: s[n].clone(),
            x_next: s[n + 1].clone(),
        }
    }

    /// Every triplet at full slice size, centre-cropped to a multiple of 4.
    pub fn all_triplets(&self) -> Result<Vec<SliceTriplet>> {
        self.middles
            .iter()
            .map(|&(s, n)| {
                let t = self.triplet_at(s, n);
                let (h, w) = t.dims();
                let (ch, cw) = (h / 4 * 4, w / 4 * 4);
                let (y0, x0) = ((h - ch) / 2, (w - cw) / 2);
                let crop = |im: &Image<f32>| im.crop(y0, x0, ch, cw);
                SliceTriplet::new(crop(&t.x_prev)?, crop(&t.x_mid)?, crop(&t.x_next)?)
            })
            .collect()
    }
}

impl TripletSampler for StackDataset {
    fn len(&self) -> usize {
        self.middles.len()
    }

    fn sample(
        &self,
        count: usize,
        patch: usize,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<SliceTriplet>> {
        sample_triplets(self, count, patch, rng)
    }
}

/// `count` triplets with middle slice and patch position drawn uniformly.
pub fn sample_triplets<R: Rng + ?Sized>(
    data: &StackDataset,
    count: usize,
    patch: usize,
    rng: &mut R,
) -> Result<Vec<SliceTriplet>> {
    if data.middles.is_empty() {
        return Err(AsiError::EmptyDataset(
            "no stack has three or more slices".into(),
        ));
    }
    (0..count)
        .map(|_| {
            let (s, n) = data.middles[rng.random_range(0..data.middles.len())];
            let stack = &data.stacks[s];
            let (h, w) = (stack[n].height(), stack[n].width());
            if h < patch || w < patch {
                return Err(AsiError::InvalidArgument(format!(
                    "patch {patch} exceeds slice {h}x{w}"
                )));
            }
            let y0 = rng.random_range(0..=h - patch);
            let x0 = rng.random_range(0..=w - patch);
            let cut = |im: &Image<f32>| im.crop(y0, x0, patch, patch);
            Ok(SliceTriplet {
                x_prev: cut(&stack[n - 1])?,
                x_mid: cut(&stack[n])?,
                x_next: cut(&stack[n + 1])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Random multiples of 90° rotation.
    pub rot90: bool,
    /// Range of the multiplicative intensity change; `[1, 1]` disables it.
    pub intensity_scale: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rot90: true,
            intensity_scale: [0.9, 1.1],
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rot90: false,
            intensity_scale: [1.0, 1.0],
        }
    }
}

/// Rotates by `quarter_turns · 90°` counter-clockwise, then scales and
/// clamps to `[0, 1]`.
pub fn transform(im: &Image<f32>, quarter_turns: usize, scale: f32) -> Image<f32> {
    let mut out = im.clone();
    for _ in 0..quarter_turns % 4 {
        out = out.rot90();
    }
    if scale != 1.0 {
        out = out.map(|v| (v * scale).clamp(0.0, 1.0));
    }
    out
}

/// Applies one random transform per triplet, shared by its three patches.
pub fn augment<R: Rng + ?Sized>(
    batch: &[SliceTriplet],
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Vec<SliceTriplet> {
    batch
        .iter()
        .map(|t| {
            let k = if cfg.rot90 { rng.random_range(0..4) } else { 0 };
            let [lo, hi] = cfg.intensity_scale;
            let s = if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            } as f32;
            t.map(|im| transform(im, k, s))
        })
        .collect()
}
