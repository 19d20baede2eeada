//! Image quality metrics and paired significance testing.

mod report;
mod wilcoxon;

pub use report::{
    evaluate_slices, evaluate_volume, synthesized_indices, Aggregate, Comparison, MetricReport,
    MetricRow, PSNR_CAP_DB,
};
pub use wilcoxon::{wilcoxon_one_sided, Alternative, WilcoxonResult};

use crate::error::{AsiError, Result};
use crate::scalar::Scalar;
use crate::volume::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const VIF_SIGMA_NSQ: f64 = 2.0;
const VIF_EPS: f64 = 1e-10;
const VIF_SCALES: u32 = 4;

/// Normalised 1-D Gaussian of `width` taps.
pub fn gaussian_window(width: usize, sigma: f64) -> Vec<f64> {
    let c = (width as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..width)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn from_image<T: Scalar>(im: &Image<T>, scale: f64) -> Self {
        Self {
            h: im.height(),
            w: im.width(),
            v: im.data().iter().map(|x| x.f64() * scale).collect(),
        }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Separable "valid" correlation with `k ⊗ k`.
    fn filter_valid(&self, k: &[f64]) -> Plane {
        let n = k.len();
        let (oh, ow) = (self.h + 1 - n, self.w + 1 - n);
        let mut tmp = vec![0.0; self.h * ow];
        for y in 0..self.h {
            for x in 0..ow {
                tmp[y * ow + x] = (0..n).map(|t| k[t] * self.v[y * self.w + x + t]).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..n).map(|t| k[t] * tmp[(y + t) * ow + x]).sum();
            }
        }
        Plane {
            h: oh,
            w: ow,
            v: out,
        }
    }

    fn decimate2(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut v = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                v.push(self.v[2 * y * self.w + 2 * x]);
            }
        }
        Plane { h, w, v }
    }
}

/// Mean structural similarity over all 11×11 windows (Gaussian σ = 1.5,
/// K1 = 0.01, K2 = 0.03, data range 1).
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.check_same(b)?;
    if a.height() < SSIM_WINDOW || a.width() < SSIM_WINDOW {
        return Err(AsiError::Shape(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let win = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let (pa, pb) = (Plane::from_image(a, 1.0), Plane::from_image(b, 1.0));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = pa.filter_valid(&win);
    let mu_b = pb.filter_valid(&win);
    let aa = pa.zip(&pa, |x, y| x * y).filter_valid(&win);
    let bb = pb.zip(&pb, |x, y| x * y).filter_valid(&win);
    let ab = pa.zip(&pb, |x, y| x * y).filter_valid(&win);
    let n = mu_a.v.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a.v[i], mu_b.v[i]);
        let va = aa.v[i] - ma * ma;
        let vb = bb.v[i] - mb * mb;
        let cov = ab.v[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / n as f64)
}

/// `10·log10(range² / mse)`; identical images give `+∞`.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>, data_range: f64) -> Result<f64> {
    let mse = a.mse(b)?;
    Ok(psnr_from_mse(mse, data_range))
}

pub fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (data_range * data_range / mse).log10()
    }
}

/// Pixel-domain visual information fidelity over four scales. Window width
/// at scale `s` (1-based) is `N = 2^(5−s) + 1` with Gaussian σ = N/5;
/// intensities are mapped from `[0, data_range]` to `[0, 255]` so that the
/// noise variance `σ_n² = 2` has its customary meaning.
pub fn vif_p<T: Scalar>(
    reference: &Image<T>,
    distorted: &Image<T>,
    data_range: f64,
) -> Result<f64> {
    reference.check_same(distorted)?;
    let scale = 255.0 / data_range;
    let mut r = Plane::from_image(reference, scale);
    let mut d = Plane::from_image(distorted, scale);
    let (mut num, mut den) = (0.0, 0.0);
    for s in 1..=VIF_SCALES {
        let n = (1usize << (VIF_SCALES + 1 - s)) + 1;
        let win = gaussian_window(n, n as f64 / 5.0);
        if s > 1 {
            if r.h < n || r.w < n {
                return Err(too_small(reference, s));
            }
            r = r.filter_valid(&win).decimate2();
            d = d.filter_valid(&win).decimate2();
        }
        if r.h < n || r.w < n {
            return Err(too_small(reference, s));
        }
        let mu1 = r.filter_valid(&win);
        let mu2 = d.filter_valid(&win);
        let s11 = r.zip(&r, |a, b| a * b).filter_valid(&win);
        let s22 = d.zip(&d, |a, b| a * b).filter_valid(&win);
        let s12 = r.zip(&d, |a, b| a * b).filter_valid(&win);
        for i in 0..mu1.v.len() {
            let mut sigma1 = (s11.v[i] - mu1.v[i] * mu1.v[i]).max(0.0);
            let sigma2 = (s22.v[i] - mu2.v[i] * mu2.v[i]).max(0.0);
            let sigma12 = s12.v[i] - mu1.v[i] * mu2.v[i];
            let mut g = sigma12 / (sigma1 + VIF_EPS);
            let mut sv = sigma2 - g * sigma12;
            if sigma1 < VIF_EPS {
                g = 0.0;
                sv = sigma2;
                sigma1 = 0.0;
            }
            if sigma2 < VIF_EPS {
                g = 0.0;
                sv = 0.0;
            }
            if g < 0.0 {
                sv = sigma2;
                g = 0.0;
            }
            let sv = sv.max(VIF_EPS);
            num += (1.0 + g * g * sigma1 / (sv + VIF_SIGMA_NSQ)).log10();
            den += (1.0 + sigma1 / VIF_SIGMA_NSQ).log10();
        }
    }
    if den <= 0.0 {
        return Err(AsiError::InvalidArgument(
            "VIF undefined for a reference without variance".into(),
        ));
    }
    Ok(num / den)
}

fn too_small<T: Scalar>(im: &Image<T>, scale: u32) -> AsiError {
    AsiError::Shape(format!(
        "image {}x{} too small for VIF window at scale {scale}",
        im.height(),
        im.width()
    ))
}
