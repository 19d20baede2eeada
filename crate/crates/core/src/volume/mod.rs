//! Volumes, intensity normalisation and the through-plane degradation model.

mod image;
mod io;

pub use image::Image;
pub use io::{load_volume, save_volume, sidecar_path};

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{AsiError, Result};

/// Rank-3 `f32` grid indexed `(z, y, x)` with per-axis spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    data: Vec<f32>,
    spacing: [f64; 3],
    pub provenance: String,
}

/// Section orientation used when extracting 2-D images from a volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    /// Fixed `z`: an acquired slice, `(y, x)`.
    Axial,
    /// Fixed `x`: a through-plane section, `(z, y)`.
    Sagittal,
    /// Fixed `y`: a through-plane section, `(z, x)`.
    Coronal,
}

impl FromStr for Plane {
    type Err = AsiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(Plane::Axial),
            "sagittal" => Ok(Plane::Sagittal),
            "coronal" => Ok(Plane::Coronal),
            other => Err(AsiError::InvalidArgument(format!(
                "unknown plane {other:?}"
            ))),
        }
    }
}

impl fmt::Display for Plane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Plane::Axial => "axial",
            Plane::Sagittal => "sagittal",
            Plane::Coronal => "coronal",
        })
    }
}

/// `2·√(2 ln 2)`: FWHM of a unit-σ Gaussian.
pub fn fwhm_per_sigma() -> f64 {
    2.0 * (2.0 * std::f64::consts::LN_2).sqrt()
}

/// Whole-sample symmetric reflection of `i` into `0..n`.
pub(crate) fn mirror_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

impl Volume {
    pub fn new(
        dims: [usize; 3],
        data: Vec<f32>,
        spacing: [f64; 3],
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(AsiError::Shape(format!(
                "volume dims {dims:?} must be positive"
            )));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(AsiError::Shape(format!(
                "volume dims {dims:?} need {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(AsiError::InvalidArgument(format!(
                "spacing {spacing:?} must be positive"
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(AsiError::NonFinite(format!(
                "volume value at flat index {i}"
            )));
        }
        Ok(Self {
            dims,
            data,
            spacing,
            provenance: provenance.into(),
        })
    }

    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        provenance: &str,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, data, spacing, provenance)
    }

    /// Stacks equally sized `(y, x)` slices along `z`.
    pub fn from_slices(slices: &[Image<f32>], spacing: [f64; 3], provenance: &str) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| AsiError::Shape("volume needs at least one slice".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut data = Vec::with_capacity(slices.len() * h * w);
        for s in slices {
            if (s.height(), s.width()) != (h, w) {
                return Err(AsiError::Shape("slices differ in size".into()));
            }
            data.extend_from_slice(s.data());
        }
        Self::new([slices.len(), h, w], data, spacing, provenance)
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[(z * self.dims[1] + y) * self.dims[2] + x]
    }

    pub fn with_provenance(mut self, p: &str) -> Self {
        self.provenance = p.to_owned();
        self
    }

    /// Slice `z` as a `(y, x)` image.
    pub fn slice(&self, z: usize) -> Image<f32> {
        let per = self.dims[1] * self.dims[2];
        Image::new(
            self.dims[1],
            self.dims[2],
            self.data[z * per..(z + 1) * per].to_vec(),
        )
        .expect("slice shape")
    }

    pub fn slices(&self) -> Vec<Image<f32>> {
        (0..self.depth()).map(|z| self.slice(z)).collect()
    }

    /// Number of sections along `plane`.
    pub fn section_count(&self, plane: Plane) -> usize {
        match plane {
            Plane::Axial => self.dims[0],
            Plane::Sagittal => self.dims[2],
            Plane::Coronal => self.dims[1],
        }
    }

    /// Section `i` along `plane`; through-plane sections have rows along `z`.
    pub fn section(&self, plane: Plane, i: usize) -> Image<f32> {
        let [d, h, w] = self.dims;
        match plane {
            Plane::Axial => self.slice(i),
            Plane::Sagittal => Image::from_fn(d, h, |z, y| self.get(z, y, i)),
            Plane::Coronal => Image::from_fn(d, w, |z, x| self.get(z, i, x)),
        }
    }

    fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    fn rescale(&self, lo: f32, hi: f32, what: &str) -> Volume {
        let mut out = self.clone();
        if !(hi > lo) {
            warn!("{what}: degenerate intensity range [{lo}, {hi}], returning zeros");
            out.data.fill(0.0);
            return out;
        }
        let (lo, span) = (lo as f64, (hi - lo) as f64);
        for v in &mut out.data {
            *v = (((*v as f64).clamp(lo, lo + span) - lo) / span).clamp(0.0, 1.0) as f32;
        }
        out
    }

    /// Clamps to the `[p_lo, p_hi]` percentile range of the whole volume and
    /// maps it affinely onto `[0, 1]`. Percentiles interpolate linearly
    /// between order statistics. A constant volume maps to zeros.
    pub fn normalize_percentile(&self, p_lo: f64, p_hi: f64) -> Result<Volume> {
        if !(0.0..=100.0).contains(&p_lo) || !(0.0..=100.0).contains(&p_hi) || p_lo >= p_hi {
            return Err(AsiError::InvalidArgument(format!(
                "percentiles must satisfy 0 <= {p_lo} < {p_hi} <= 100"
            )));
        }
        let mut sorted = self.data.clone();
        sorted.sort_by(f32::total_cmp);
        let lo = percentile_sorted(&sorted, p_lo);
        let hi = percentile_sorted(&sorted, p_hi);
        Ok(self.rescale(lo, hi, "normalize_percentile"))
    }

    /// `(v − min) / (max − min)`; a constant volume maps to zeros.
    pub fn normalize_minmax(&self) -> Volume {
        let (lo, hi) = self.min_max();
        self.rescale(lo, hi, "normalize_minmax")
    }

    /// Gaussian smoothing along `z` with the given FWHM in mm, simulating a
    /// thicker slice profile. The kernel is truncated at `⌈4σ⌉` taps per side
    /// and renormalised; boundaries are mirrored.
    pub fn gaussian_blur_z(&self, fwhm_mm: f64) -> Result<Volume> {
        if !(fwhm_mm > 0.0 && fwhm_mm.is_finite()) {
            return Err(AsiError::InvalidArgument(format!(
                "fwhm {fwhm_mm} must be positive"
            )));
        }
        let sigma = blur_sigma_slices(fwhm_mm, self.spacing[0]);
        let kernel = gaussian_kernel(sigma);
        if kernel.len() == 1 {
            return Ok(self.clone());
        }
        let radius = (kernel.len() / 2) as isize;
        let [d, h, w] = self.dims;
        let plane = h * w;
        let mut out = vec![0f32; self.data.len()];
        for z in 0..d {
            let dst = &mut out[z * plane..(z + 1) * plane];
            let mut acc = vec![0f64; plane];
            for (t, &k) in kernel.iter().enumerate() {
                let src_z = mirror_index(z as isize + t as isize - radius, d);
                let src = &self.data[src_z * plane..(src_z + 1) * plane];
                for (a, &s) in acc.iter_mut().zip(src) {
                    *a += k * s as f64;
                }
            }
            for (o, a) in dst.iter_mut().zip(acc) {
                *o = a as f32;
            }
        }
        let mut v = Volume::new(self.dims, out, self.spacing, "blurred")?;
        v.provenance = "blurred".into();
        Ok(v)
    }

    /// Keeps slices `0, K, 2K, …` and multiplies the `z` spacing by `K`.
    pub fn subsample_z(&self, factor: usize) -> Result<Volume> {
        if factor < 2 {
            return Err(AsiError::InvalidArgument(format!(
                "subsampling factor {factor} must be >= 2"
            )));
        }
        if self.depth() < factor + 1 {
            return Err(AsiError::InvalidArgument(format!(
                "{} slices cannot be subsampled by {factor}",
                self.depth()
            )));
        }
        let plane = self.dims[1] * self.dims[2];
        let kept: Vec<usize> = (0..self.depth()).step_by(factor).collect();
        let mut data = Vec::with_capacity(kept.len() * plane);
        for &z in &kept {
            data.extend_from_slice(&self.data[z * plane..(z + 1) * plane]);
        }
        let mut spacing = self.spacing;
        spacing[0] *= factor as f64;
        Volume::new(
            [kept.len(), self.dims[1], self.dims[2]],
            data,
            spacing,
            "subsampled",
        )
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Linear interpolation between order statistics of `sorted`.
pub fn percentile_sorted(sorted: &[f32], p: f64) -> f32 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    (sorted[lo] as f64 + frac * (sorted[hi] as f64 - sorted[lo] as f64)) as f32
}

/// Gaussian σ in slice units for a FWHM in mm and a slice spacing in mm.
pub fn blur_sigma_slices(fwhm_mm: f64, spacing_z: f64) -> f64 {
    fwhm_mm / (spacing_z * fwhm_per_sigma())
}

/// Sampled Gaussian truncated at `⌈4σ⌉` taps per side, summing to one.
/// Returns `[1.0]` when the off-centre taps vanish.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as usize;
    if radius == 0 || (-0.5 / (sigma * sigma)).exp() < 1e-12 {
        return vec![1.0];
    }
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}
