use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{write_grid_png, ExperimentSpec};
use crate::error::{AsiError, Result};
use crate::interp::{convex_combine, decode_images, encode_images};
use crate::model::ModelParams;
use crate::training::{train, SliceTriplet, TrainOutput, TripletSampler};
use crate::volume::Image;

/// Rotation between a training image and each of its two neighbours.
pub const NEIGHBOUR_DEGREES: f64 = 15.0;
/// Rotation of the second endpoint at evaluation.
pub const ENDPOINT_DEGREES: f64 = 40.0;
pub const EVAL_ALPHAS: [f64; 3] = [0.25, 0.5, 0.75];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MnistSpec {
    /// Gzipped IDX image file (magic 2051).
    pub images: PathBuf,
    /// Gzipped IDX label file (magic 2049).
    pub labels: PathBuf,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Side length after symmetric zero padding.
    pub size: usize,
    /// Digits shown in `grids/`.
    pub grid_digits: usize,
}

impl Default for MnistSpec {
    fn default() -> Self {
        Self {
            images: "data/mnist/mnist5k-images-idx3-ubyte.gz".into(),
            labels: "data/mnist/mnist5k-labels-idx1-ubyte.gz".into(),
            n_train: 2000,
            n_val: 200,
            n_test: 500,
            size: 32,
            grid_digits: 8,
        }
    }
}

fn read_gz(path: &Path) -> Result<Vec<u8>> {
    let f = File::open(path).map_err(|e| AsiError::io(path, e))?;
    let mut out = Vec::new();
    GzDecoder::new(f)
        .read_to_end(&mut out)
        .map_err(|e| AsiError::io(path, e))?;
    Ok(out)
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Images scaled to `[0, 1]` and their labels.
pub fn load_idx(images: &Path, labels: &Path) -> Result<(Vec<Image<f32>>, Vec<u8>)> {
    let ib = read_gz(images)?;
    if ib.len() < 16 || be_u32(&ib, 0) != 2051 {
        return Err(AsiError::format(images, "not an IDX image file"));
    }
    let (n, h, w) = (
        be_u32(&ib, 4) as usize,
        be_u32(&ib, 8) as usize,
        be_u32(&ib, 12) as usize,
    );
    if ib.len() != 16 + n * h * w {
        return Err(AsiError::format(
            images,
            format!("expected {n}x{h}x{w} pixels"),
        ));
    }
    let lb = read_gz(labels)?;
    if lb.len() < 8 || be_u32(&lb, 0) != 2049 || be_u32(&lb, 4) as usize != n || lb.len() != 8 + n {
        return Err(AsiError::format(
            labels,
            format!("not an IDX label file for {n} images"),
        ));
    }
    let imgs = ib[16..]
        .chunks_exact(h * w)
        .map(|px| {
            Image::new(h, w, px.iter().map(|&v| v as f32 / 255.0).collect()).expect("chunk size")
        })
        .collect();
    Ok((imgs, lb[8..].to_vec()))
}

/// Bilinear rotation about the image centre by `degrees` counter-clockwise
/// (as displayed, rows growing downwards), zero outside the source.
pub fn rotate(im: &Image<f32>, degrees: f64) -> Image<f32> {
    let (h, w) = (im.height(), im.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (s, c) = degrees.to_radians().sin_cos();
    let sample = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            im.get(y as usize, x as usize) as f64
        }
    };
    Image::from_fn(h, w, |y, x| {
        let (u, v) = (x as f64 - cx, cy - y as f64);
        let (us, vs) = (c * u + s * v, -s * u + c * v);
        let (xs, ys) = (cx + us, cy - vs);
        let (x0, y0) = (xs.floor(), ys.floor());
        let (fx, fy) = (xs - x0, ys - y0);
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = sample(y0, x0) * (1.0 - fx) + sample(y0, x0 + 1) * fx;
        let bot = sample(y0 + 1, x0) * (1.0 - fx) + sample(y0 + 1, x0 + 1) * fx;
        (top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0) as f32
    })
}

/// Neighbours rotated `+15°` (previous) and `−15°` (next) about `x`.
pub fn rotation_triplet(x: &Image<f32>, base_degrees: f64) -> SliceTriplet {
    SliceTriplet {
        x_prev: rotate(x, base_degrees + NEIGHBOUR_DEGREES),
        x_mid: rotate(x, base_degrees),
        x_next: rotate(x, base_degrees - NEIGHBOUR_DEGREES),
    }
}

/// Training triplets around digits at a random base rotation.
pub struct RotationSampler {
    pub digits: Vec<Image<f32>>,
}

impl TripletSampler for RotationSampler {
    fn len(&self) -> usize {
        self.digits.len()
    }

    fn sample(
        &self,
        count: usize,
        patch: usize,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Vec<SliceTriplet>> {
        if self.digits.is_empty() {
            return Err(AsiError::EmptyDataset("no training digits".into()));
        }
        (0..count)
            .map(|_| {
                let d = &self.digits[rng.random_range(0..self.digits.len())];
                let t = rotation_triplet(d, rng.random_range(0.0..360.0));
                let (h, w) = t.dims();
                if patch > h || patch > w {
                    return Err(AsiError::InvalidArgument(format!(
                        "patch {patch} exceeds digit {h}x{w}"
                    )));
                }
                let (y0, x0) = (
                    rng.random_range(0..=h - patch),
                    rng.random_range(0..=w - patch),
                );
                let cut = |im: &Image<f32>| im.crop(y0, x0, patch, patch).expect("in bounds");
                Ok(t.map(cut))
            })
            .collect()
    }
}

pub struct MnistSplits {
    pub train: Vec<Image<f32>>,
    pub val: Vec<Image<f32>>,
    pub test: Vec<Image<f32>>,
    pub test_labels: Vec<u8>,
}

/// Seeded shuffle, then train/validation/test prefixes, padded to `size`.
pub fn load_splits(spec: &MnistSpec, seed: u64) -> Result<MnistSplits> {
    let (imgs, labels) = load_idx(&spec.images, &spec.labels)?;
    let need = spec.n_train + spec.n_val + spec.n_test;
    if imgs.len() < need {
        return Err(AsiError::InvalidArgument(format!(
            "{} digits available, {need} requested",
            imgs.len()
        )));
    }
    let mut order: Vec<usize> = (0..imgs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pad = |i: usize| -> Result<Image<f32>> {
        let im = &imgs[i];
        if im.height() > spec.size || im.width() > spec.size {
            return Err(AsiError::InvalidArgument(format!(
                "digit larger than {}",
                spec.size
            )));
        }
        let (dh, dw) = (spec.size - im.height(), spec.size - im.width());
        Ok(im.pad(dh / 2, dh - dh / 2, dw / 2, dw - dw / 2))
    };
    let take =
        |r: std::ops::Range<usize>| order[r].iter().map(|&i| pad(i)).collect::<Result<Vec<_>>>();
    let a = spec.n_train;
    let b = a + spec.n_val;
    Ok(MnistSplits {
        train: take(0..a)?,
        val: take(a..b)?,
        test: take(b..need)?,
        test_labels: order[b..need].iter().map(|&i| labels[i]).collect(),
    })
}

/// Metrics for one test digit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DigitRow {
    pub index: usize,
    pub label: u8,
    pub alpha: f64,
    pub target_degrees: f64,
    /// MSE of the synthesized image against the true rotation.
    pub mse_synth: f64,
    /// MSE of the unrotated endpoint against the true rotation.
    pub mse_endpoint0: f64,
    /// MSE of the 40° endpoint against the true rotation.
    pub mse_endpoint40: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistReport {
    pub rows: Vec<DigitRow>,
    /// Share of test digits whose `α = 0.5` synthesis is closer to the true
    /// 20° rotation than the unrotated endpoint is.
    pub success_rate: f64,
    pub mean_mse_synth: [f64; 3],
    pub mean_mse_endpoint0: [f64; 3],
    pub best_epoch: usize,
}

/// Scores a model on the rotation task over `digits`; writes the first
/// `grid` digits as a PNG grid when `grid_path` is given.
pub fn evaluate_rotation(
    model: &ModelParams<f32>,
    digits: &[Image<f32>],
    labels: &[u8],
    grid: Option<(&Path, usize)>,
) -> Result<(Vec<DigitRow>, f64)> {
    let mut rows = Vec::with_capacity(digits.len() * 3);
    let mut grid_rows = Vec::new();
    let mut wins = 0usize;
    const CHUNK: usize = 50;
    for (c, chunk) in digits.chunks(CHUNK).enumerate() {
        let rotated: Vec<Image<f32>> = chunk.iter().map(|x| rotate(x, ENDPOINT_DEGREES)).collect();
        let a = encode_images(model, &chunk.iter().collect::<Vec<_>>())?;
        let b = encode_images(model, &rotated.iter().collect::<Vec<_>>())?;
        let mut mixed = Vec::with_capacity(chunk.len() * 3);
        for (za, zb) in a.iter().zip(&b) {
            for &alpha in &EVAL_ALPHAS {
                mixed.push(convex_combine(za, zb, alpha)?);
            }
        }
        let (h, w) = (chunk[0].height(), chunk[0].width());
        let synth = decode_images(model, &mixed, h, w)?;
        for (j, x) in chunk.iter().enumerate() {
            let index = c * CHUNK + j;
            let mut row_imgs = vec![x.clone()];
            for (k, &alpha) in EVAL_ALPHAS.iter().enumerate() {
                let deg = alpha * ENDPOINT_DEGREES;
                let truth = rotate(x, deg);
                let s = &synth[j * 3 + k];
                let r = DigitRow {
                    index,
                    label: labels.get(index).copied().unwrap_or(0),
                    alpha,
                    target_degrees: deg,
                    mse_synth: s.mse(&truth)?,
                    mse_endpoint0: x.mse(&truth)?,
                    mse_endpoint40: rotated[j].mse(&truth)?,
                };
                if alpha == 0.5 && r.mse_synth < r.mse_endpoint0 {
                    wins += 1;
                }
                rows.push(r);
                row_imgs.push(s.clone());
            }
            row_imgs.push(rotated[j].clone());
            if grid.is_some_and(|(_, n)| index < n) {
                grid_rows.push(row_imgs);
                let mut truth_row = vec![x.clone()];
                truth_row.extend(EVAL_ALPHAS.iter().map(|a| rotate(x, a * ENDPOINT_DEGREES)));
                truth_row.push(rotated[j].clone());
                grid_rows.push(truth_row);
            }
        }
    }
    if let Some((path, _)) = grid {
        if !grid_rows.is_empty() {
            write_grid_png(path, &grid_rows)?;
        }
    }
    Ok((rows, wins as f64 / digits.len().max(1) as f64))
}

/// Trains on rotation triplets and measures how well latent interpolation
/// between a digit and its 40° rotation follows the true rotations.
pub fn mnist_rotation_experiment(spec: &ExperimentSpec) -> Result<(MnistReport, ModelParams<f32>)> {
    let ms = &spec.mnist;
    let splits = load_splits(ms, spec.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x7a11);
    let val: Vec<SliceTriplet> = splits
        .val
        .iter()
        .map(|x| rotation_triplet(x, rng.random_range(0.0..360.0)))
        .collect();
    let sampler = RotationSampler {
        digits: splits.train,
    };
    let out = spec.prepare_output()?;
    let mut train_cfg = spec.train.clone();
    train_cfg.seed = spec.seed;
    let outcome = train::<f32>(
        spec.model.clone(),
        train_cfg,
        &sampler,
        &val,
        &TrainOutput { dir: out.clone() },
    )?;
    let grid_path = out.as_ref().map(|d| d.join("grids").join("rotation.png"));
    let grid = grid_path.as_deref().map(|p| (p, ms.grid_digits));
    let (rows, success_rate) =
        evaluate_rotation(&outcome.best, &splits.test, &splits.test_labels, grid)?;
    let mean = |f: fn(&DigitRow) -> f64| -> [f64; 3] {
        let mut m = [0.0; 3];
        for (k, &alpha) in EVAL_ALPHAS.iter().enumerate() {
            let v: Vec<f64> = rows.iter().filter(|r| r.alpha == alpha).map(f).collect();
            m[k] = v.iter().sum::<f64>() / v.len().max(1) as f64;
        }
        m
    };
    let report = MnistReport {
        success_rate,
        mean_mse_synth: mean(|r| r.mse_synth),
        mean_mse_endpoint0: mean(|r| r.mse_endpoint0),
        best_epoch: outcome.best_epoch,
        rows,
    };
    if let Some(d) = &out {
        super::write_rows_csv(&d.join("metrics.csv"), &report.rows)?;
        super::write_json(
            &d.join("tests.json"),
            &serde_json::json!({
                "success_rate": report.success_rate,
                "mean_mse_synth": report.mean_mse_synth,
                "mean_mse_endpoint0": report.mean_mse_endpoint0,
                "alphas": EVAL_ALPHAS,
                "best_epoch": report.best_epoch,
            }),
        )?;
    }
    Ok((report, outcome.best))
}
