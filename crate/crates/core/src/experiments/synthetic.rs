use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AsiError, Result};
use crate::volume::Volume;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub slices: usize,
    pub size: usize,
    /// Blobs per volume, inclusive range.
    pub blobs: [usize; 2],
    /// Largest in-plane blob displacement per slice, in pixels.
    pub max_speed: f64,
    /// Amplitude of the smooth background texture.
    pub texture: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 40,
            n_val: 4,
            n_test: 8,
            slices: 24,
            size: 64,
            blobs: [4, 7],
            max_speed: 1.2,
            texture: 0.06,
        }
    }
}

struct Blob {
    centre: [f64; 3],
    velocity: [f64; 2],
    wobble: [f64; 3],
    radii: [f64; 3],
    radius_rate: f64,
    angle: f64,
    spin: f64,
    intensity: f64,
    edge: f64,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Self {
        let (d, s) = (spec.slices as f64, spec.size as f64);
        let speed = rng.random_range(0.3..=1.0) * spec.max_speed;
        let dir: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        Blob {
            centre: [
                rng.random_range(0.2..0.8) * d,
                rng.random_range(0.25..0.75) * s,
                rng.random_range(0.25..0.75) * s,
            ],
            velocity: [speed * dir.sin(), speed * dir.cos()],
            wobble: [
                rng.random_range(0.0..3.0),
                rng.random_range(0.1..0.4),
                rng.random_range(0.0..std::f64::consts::TAU),
            ],
            radii: [
                rng.random_range(0.35..0.8) * d,
                rng.random_range(0.07..0.2) * s,
                rng.random_range(0.07..0.2) * s,
            ],
            radius_rate: rng.random_range(-0.02..0.02),
            angle: rng.random_range(0.0..std::f64::consts::PI),
            spin: rng.random_range(-0.08..0.08),
            intensity: rng.random_range(0.35..0.75),
            edge: rng.random_range(0.05..0.15),
        }
    }

    fn value(&self, z: f64, y: f64, x: f64) -> f64 {
        let dz = z - self.centre[0];
        let wob = self.wobble[0] * (self.wobble[1] * z + self.wobble[2]).sin();
        let cy = self.centre[1] + self.velocity[0] * dz + wob;
        let cx = self.centre[2] + self.velocity[1] * dz - 0.5 * wob;
        let grow = (1.0 + self.radius_rate * dz).max(0.3);
        let (s, c) = (self.angle + self.spin * dz).sin_cos();
        let (v, u) = (y - cy, x - cx);
        let (a, b) = (c * u + s * v, -s * u + c * v);
        let r = ((a / (self.radii[2] * grow)).powi(2)
            + (b / (self.radii[1] * grow)).powi(2)
            + (dz / self.radii[0]).powi(2))
        .sqrt();
        self.intensity / (1.0 + ((r - 1.0) / self.edge).exp())
    }
}

struct Texture {
    waves: Vec<[f64; 4]>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                [
                    rng.random_range(0.05..0.25),
                    rng.random_range(0.05..0.25),
                    rng.random_range(0.02..0.1),
                    rng.random_range(0.0..std::f64::consts::TAU),
                ]
            })
            .collect();
        Self { waves }
    }

    fn value(&self, z: f64, y: f64, x: f64) -> f64 {
        self.waves
            .iter()
            .map(|w| (w[0] * y + w[1] * x + w[2] * z + w[3]).sin())
            .sum::<f64>()
            / self.waves.len() as f64
    }
}

/// One volume of the synthetic family, regenerable from `seed` alone.
pub fn synthetic_volume(spec: &SyntheticSpec, seed: u64) -> Result<Volume> {
    if spec.slices < 3 || spec.size < 4 || spec.blobs[0] > spec.blobs[1] {
        return Err(AsiError::InvalidArgument(format!(
            "invalid synthetic spec {spec:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs: Vec<Blob> = (0..rng.random_range(spec.blobs[0]..=spec.blobs[1]))
        .map(|_| Blob::random(&mut rng, spec))
        .collect();
    let texture = Texture::random(&mut rng);
    let base = rng.random_range(0.05..0.15);
    Volume::from_fn(
        [spec.slices, spec.size, spec.size],
        [1.0, 1.0, 1.0],
        "synthetic",
        |z, y, x| {
            let (z, y, x) = (z as f64, y as f64, x as f64);
            let v = base
                + spec.texture * texture.value(z, y, x)
                + blobs.iter().map(|b| b.value(z, y, x)).sum::<f64>();
            v.clamp(0.0, 1.0) as f32
        },
    )
}

/// `n` volumes with per-volume seeds derived from `seed`.
pub fn synthetic_volume_dataset(spec: &SyntheticSpec, n: usize, seed: u64) -> Result<Vec<Volume>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| synthetic_volume(spec, seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect()
}

/// The train, validation and test splits, generated from disjoint seeds.
pub fn synthetic_splits(spec: &SyntheticSpec, seed: u64) -> Result<[Vec<Volume>; 3]> {
    Ok([
        synthetic_volume_dataset(spec, spec.n_train, seed.wrapping_mul(3))?,
        synthetic_volume_dataset(spec, spec.n_val, seed.wrapping_mul(3).wrapping_add(1))?,
        synthetic_volume_dataset(spec, spec.n_test, seed.wrapping_mul(3).wrapping_add(2))?,
    ])
}

/// Blurs along `z` with FWHM equal to the target spacing `K·sz`, keeps every
/// `K`-th slice, and returns the ground truth restricted to the slices the
/// low-resolution volume spans: `(Z_low − 1)·K + 1` of them.
pub fn degradation_protocol(vol: &Volume, factor: usize) -> Result<(Volume, Volume)> {
    let fwhm = factor as f64 * vol.spacing()[0];
    let low = vol
        .gaussian_blur_z(fwhm)?
        .subsample_z(factor)?
        .with_provenance(&format!("degraded K={factor}"));
    let keep = (low.depth() - 1) * factor + 1;
    let [_, y, x] = vol.dims();
    let plane = y * x;
    let truth = Volume::new(
        [keep, y, x],
        vol.data()[..keep * plane].to_vec(),
        vol.spacing(),
        "ground truth",
    )?;
    Ok((low, truth))
}
