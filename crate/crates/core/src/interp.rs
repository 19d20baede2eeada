//! Slice synthesis by convex combination of adjacent latent codes, and
//! through-plane volume upsampling built on it.

use rayon::prelude::*;

use crate::error::{AsiError, Result};
use crate::model::{self, Autoencoder, LatentCode};
use crate::scalar::Scalar;
use crate::volume::{Image, Volume};

/// Mixing coefficients `{1/K, …, (K−1)/K}` for upsampling by `K`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaSet {
    factor: usize,
    values: Vec<f64>,
}

impl AlphaSet {
    pub fn new(factor: usize) -> Result<Self> {
        if factor < 2 {
            return Err(AsiError::InvalidArgument(format!(
                "upsampling factor {factor} must be >= 2"
            )));
        }
        let values = (1..factor).map(|i| i as f64 / factor as f64).collect();
        Ok(Self { factor, values })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AsiError::InvalidArgument(format!(
            "mixing coefficient {alpha} outside [0, 1]"
        )));
    }
    Ok(())
}

/// `(1 − α)·z_a + α·z_b`. The endpoints return the corresponding code
/// unchanged.
pub fn convex_combine<T: Scalar>(
    za: &LatentCode<T>,
    zb: &LatentCode<T>,
    alpha: f64,
) -> Result<LatentCode<T>> {
    check_alpha(alpha)?;
    if za.shape() != zb.shape() {
        return Err(AsiError::Shape(format!(
            "latent shapes {:?} vs {:?}",
            za.shape(),
            zb.shape()
        )));
    }
    if alpha == 0.0 {
        return Ok(za.clone());
    }
    if alpha == 1.0 {
        return Ok(zb.clone());
    }
    let (wa, wb) = (T::c(1.0 - alpha), T::c(alpha));
    let data = za
        .data()
        .iter()
        .zip(zb.data())
        .map(|(&a, &b)| wa * a + wb * b)
        .collect();
    LatentCode::new(za.shape(), data)
}

/// Symmetric zero padding that brings `n` up to a multiple of four.
fn pad_amounts(n: usize) -> (usize, usize) {
    let total = (4 - n % 4) % 4;
    (total / 2, total - total / 2)
}

fn pad_to_multiple_of_four<T: Scalar>(im: &Image<T>) -> Image<T> {
    let (t, b) = pad_amounts(im.height());
    let (l, r) = pad_amounts(im.width());
    if t + b + l + r == 0 {
        im.clone()
    } else {
        im.pad(t, b, l, r)
    }
}

fn crop_back<T: Scalar>(im: Image<T>, height: usize, width: usize) -> Image<T> {
    if im.height() == height && im.width() == width {
        return im;
    }
    let (t, _) = pad_amounts(height);
    let (l, _) = pad_amounts(width);
    im.crop(t, l, height, width)
        .expect("padded image covers original")
}

/// Eval-mode encoding of images of equal size, padding to a multiple of four
/// when needed.
pub fn encode_images<T: Scalar, M: Autoencoder<T>>(
    model: &M,
    images: &[&Image<T>],
) -> Result<Vec<LatentCode<T>>> {
    let padded: Vec<Image<T>> = images
        .iter()
        .map(|im| pad_to_multiple_of_four(im))
        .collect();
    let refs: Vec<&Image<T>> = padded.iter().collect();
    model::encode(model, &Image::stack(&refs)?)
}

/// Eval-mode decoding, cropped back to `height × width`.
pub fn decode_images<T: Scalar, M: Autoencoder<T>>(
    model: &M,
    codes: &[LatentCode<T>],
    height: usize,
    width: usize,
) -> Result<Vec<Image<T>>> {
    let out = model::decode(model, codes)?;
    Ok(Image::unstack(&out)
        .into_iter()
        .map(|im| crop_back(im, height, width))
        .collect())
}

/// Decodes one image per coefficient from the convex combination of the
/// codes of `x_n` and `x_next`, in coefficient order.
pub fn synthesize_between<T: Scalar, M: Autoencoder<T>>(
    model: &M,
    x_n: &Image<T>,
    x_next: &Image<T>,
    alphas: &[f64],
) -> Result<Vec<Image<T>>> {
    x_n.check_same(x_next)?;
    alphas.iter().try_for_each(|&a| check_alpha(a))?;
    let codes = encode_images(model, &[x_n, x_next])?;
    let mixed = alphas
        .iter()
        .map(|&a| convex_combine(&codes[0], &codes[1], a))
        .collect::<Result<Vec<_>>>()?;
    decode_images(model, &mixed, x_n.height(), x_n.width())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpsampleOptions {
    /// Replace the original slices by their reconstructions instead of
    /// copying them.
    pub reconstruct_originals: bool,
}

/// Upsamples along `z` by `factor`: `(Z − 1)·K + 1` output slices with the
/// originals at `0, K, 2K, …` and synthesized slices in between.
pub fn upsample_volume<M: Autoencoder<f32> + Sync>(
    model: &M,
    vol: &Volume,
    factor: usize,
    opts: UpsampleOptions,
) -> Result<Volume> {
    let alphas = AlphaSet::new(factor)?;
    let depth = vol.depth();
    if depth < 2 {
        return Err(AsiError::InvalidArgument(format!(
            "upsampling needs >= 2 slices, got {depth}"
        )));
    }
    let [_, h, w] = vol.dims();
    let slices = vol.slices();

    const CHUNK: usize = 8;
    let codes: Vec<LatentCode<f32>> = slices
        .par_chunks(CHUNK)
        .map(|chunk| encode_images(model, &chunk.iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let synthesized: Vec<Vec<Image<f32>>> = (0..depth - 1)
        .into_par_iter()
        .map(|n| {
            let mixed = alphas
                .values()
                .iter()
                .map(|&a| convex_combine(&codes[n], &codes[n + 1], a))
                .collect::<Result<Vec<_>>>()?;
            decode_images(model, &mixed, h, w)
        })
        .collect::<Result<Vec<_>>>()?;

    let originals: Vec<Image<f32>> = if opts.reconstruct_originals {
        codes
            .par_chunks(CHUNK)
            .map(|c| decode_images(model, c, h, w))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect()
    } else {
        slices
    };

    let mut out = Vec::with_capacity((depth - 1) * factor + 1);
    for (n, original) in originals.into_iter().enumerate() {
        out.push(original);
        if let Some(between) = synthesized.get(n) {
            out.extend(between.iter().cloned());
        }
    }
    let mut spacing = vol.spacing();
    spacing[0] /= factor as f64;
    Volume::from_slices(&out, spacing, "upsampled")
}
