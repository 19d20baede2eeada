//! Cubic B-spline interpolation along z.

use rayon::prelude::*;

use crate::error::{AsiError, Result};
use crate::volume::Volume;

/// Pole of the cubic B-spline interpolation prefilter.
pub fn cubic_pole() -> f64 {
    3f64.sqrt() - 2.0
}

/// Samples of cubic extrapolation appended on each side of a column before
/// prefiltering. The mirror boundary then sits far enough away that its
/// influence on the original range is below `|pole|^16 ≈ 7e-10`.
pub const EXTRAPOLATION_PAD: usize = 16;

/// In-place cubic B-spline coefficients of `s` under whole-sample mirror
/// boundaries, by the causal/anticausal recursion.
pub fn prefilter_in_place(s: &mut [f64]) {
    let n = s.len();
    if n < 2 {
        return;
    }
    let z = cubic_pole();
    for v in s.iter_mut() {
        *v *= 6.0;
    }
    // Exact causal initial value for the mirrored, period 2n−2 signal.
    let z2n = z.powi(2 * n as i32 - 2);
    let mut c0 = s[0] + z.powi(n as i32 - 1) * s[n - 1];
    let mut zk = z;
    for (k, &v) in s.iter().enumerate().take(n - 1).skip(1) {
        c0 += (zk + z.powi(2 * n as i32 - 2 - k as i32)) * v;
        zk *= z;
    }
    s[0] = c0 / (1.0 - z2n);
    for k in 1..n {
        s[k] += z * s[k - 1];
    }
    s[n - 1] = z / (z * z - 1.0) * (s[n - 1] + z * s[n - 2]);
    for k in (0..n - 1).rev() {
        s[k] = z * (s[k + 1] - s[k]);
    }
}

/// Coefficients of every `(y, x)` column of `vol`.
pub fn bspline_prefilter_z(vol: &Volume) -> Volume {
    let [z, y, x] = vol.dims();
    let plane = y * x;
    let mut out = vec![0f32; vol.data().len()];
    let cols: Vec<Vec<f64>> = (0..plane)
        .into_par_iter()
        .map(|p| {
            let mut col: Vec<f64> = (0..z).map(|k| vol.data()[k * plane + p] as f64).collect();
            prefilter_in_place(&mut col);
            col
        })
        .collect();
    for (p, col) in cols.iter().enumerate() {
        for (k, &c) in col.iter().enumerate() {
            out[k * plane + p] = c as f32;
        }
    }
    Volume::new(vol.dims(), out, vol.spacing(), "bspline-coefficients").expect("same dims")
}

/// Cubic B-spline basis weights for `c[i−1..=i+2]` at `i + u`, `u ∈ [0,1)`.
fn basis(u: f64) -> [f64; 4] {
    let (u2, u3) = (u * u, u * u * u);
    let v = 1.0 - u;
    [
        v * v * v / 6.0,
        (4.0 - 6.0 * u2 + 3.0 * u3) / 6.0,
        (1.0 + 3.0 * u + 3.0 * u2 - 3.0 * u3) / 6.0,
        u3 / 6.0,
    ]
}

/// Value at `t` of the polynomial of degree `len−1` through `(i, s[i])`.
fn lagrange(s: &[f64], t: f64) -> f64 {
    let mut acc = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let mut w = 1.0;
        for j in 0..s.len() {
            if j != i {
                w *= (t - j as f64) / (i as f64 - j as f64);
            }
        }
        acc += w * v;
    }
    acc
}

/// Interpolates `column` at `j/K` for `j ∈ 0..=(n−1)K`. The column is
/// extended by cubic extrapolation of its end samples before prefiltering,
/// so polynomials up to degree three are reproduced up to the boundary.
pub fn interpolate_column(column: &[f64], factor: usize) -> Vec<f64> {
    let n = column.len();
    if n == 1 {
        return column.to_vec();
    }
    let pad = EXTRAPOLATION_PAD;
    let m = n.min(4);
    let head = &column[..m];
    let tail = &column[n - m..];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|j| lagrange(head, -(j as f64))));
    ext.extend_from_slice(column);
    ext.extend((1..=pad).map(|j| lagrange(tail, (m - 1 + j) as f64)));
    prefilter_in_place(&mut ext);
    (0..=(n - 1) * factor)
        .map(|j| {
            let i = j / factor;
            let u = (j % factor) as f64 / factor as f64;
            let base = pad + i;
            basis(u)
                .iter()
                .enumerate()
                .map(|(o, w)| w * ext[base + o - 1])
                .sum()
        })
        .collect()
}

/// `(Z−1)·K+1` slices, original slices at multiples of `K`, values clamped
/// to `[0, 1]`.
pub fn bspline_upsample_z(vol: &Volume, factor: usize) -> Result<Volume> {
    if factor < 2 {
        return Err(AsiError::InvalidArgument(format!(
            "upsampling factor {factor} must be >= 2"
        )));
    }
    let [z, y, x] = vol.dims();
    let plane = y * x;
    let depth = (z - 1) * factor + 1;
    let cols: Vec<Vec<f64>> = (0..plane)
        .into_par_iter()
        .map(|p| {
            let col: Vec<f64> = (0..z).map(|k| vol.data()[k * plane + p] as f64).collect();
            interpolate_column(&col, factor)
        })
        .collect();
    let mut out = vec![0f32; depth * plane];
    for (p, col) in cols.iter().enumerate() {
        for (k, &v) in col.iter().enumerate() {
            out[k * plane + p] = v.clamp(0.0, 1.0) as f32;
        }
    }
    let mut spacing = vol.spacing();
    spacing[0] /= factor as f64;
    Volume::new(
        [depth, y, x],
        out,
        spacing,
        "bspline-upsampled (clamped to [0,1])",
    )
}
