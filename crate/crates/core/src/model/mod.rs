//! The convolutional autoencoder: configuration, parameters, initialisation
//! and the layer manifest.

mod checkpoint;
mod network;

pub use checkpoint::{read_archive, write_archive, Archive, ArchiveEntry};
pub use network::{decode, encode, reconstruct, Autoencoder, ForwardCtx, LatentCode, Mode};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{AsiError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Kernels of the first encoder block; the second block and the head
    /// use twice and four times as many.
    pub base_kernels: usize,
    pub latent_channels: usize,
    pub leaky_slope: f64,
    pub input_channels: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_kernels: 32,
            latent_channels: 128,
            leaky_slope: 0.2,
            input_channels: 1,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Defaults with the 16-channel latent used for digit images.
    pub fn mnist() -> Self {
        Self {
            latent_channels: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_kernels == 0 || self.latent_channels == 0 || self.input_channels == 0 {
            return Err(AsiError::InvalidArgument(
                "model channel counts must be positive".into(),
            ));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(AsiError::InvalidArgument(format!(
                "leaky slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0 && self.bn_eps > 0.0) {
            return Err(AsiError::InvalidArgument(
                "batch-norm momentum/eps out of range".into(),
            ));
        }
        Ok(())
    }

    /// Latent spatial shape for an `h × w` input.
    pub fn latent_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(AsiError::Shape(format!(
                "input {h}x{w} must have height and width divisible by 4"
            )));
        }
        Ok([self.latent_channels, h / 4, w / 4])
    }

    /// Whether latent capacity exceeds the input size (`C·H·W/16 > H·W`).
    pub fn is_overcomplete(&self) -> bool {
        self.latent_channels > 16 * self.input_channels
    }

    /// Every convolution in forward order.
    pub fn conv_layers(&self) -> Vec<ConvLayer> {
        let (b, l, i) = (self.base_kernels, self.latent_channels, self.input_channels);
        let conv = |name: &str, c_out, c_in, activation| ConvLayer {
            name: name.to_owned(),
            c_out,
            c_in,
            activation,
        };
        use Activation::*;
        vec![
            conv("enc.block1.conv0", b, i, Leaky),
            conv("enc.block1.conv1", b, b, Leaky),
            conv("enc.block2.conv0", 2 * b, b, Leaky),
            conv("enc.block2.conv1", 2 * b, 2 * b, Leaky),
            conv("enc.head.conv0", 4 * b, 2 * b, Leaky),
            conv("enc.latent", l, 4 * b, Identity),
            conv("dec.block1.conv0", 2 * b, l, Leaky),
            conv("dec.block1.conv1", 2 * b, 2 * b, Leaky),
            conv("dec.block2.conv0", b, 2 * b, Leaky),
            conv("dec.block2.conv1", b, b, Leaky),
            conv("dec.head.conv0", b, b, Leaky),
            conv("dec.out", i, b, Sigmoid),
        ]
    }

    /// Batch-norm layers as `(name, channels)` in forward order.
    pub fn bn_layers(&self) -> Vec<(String, usize)> {
        let b = self.base_kernels;
        vec![
            ("enc.block1.bn".into(), b),
            ("enc.block2.bn".into(), 2 * b),
            ("dec.block1.bn".into(), 2 * b),
            ("dec.block2.bn".into(), b),
        ]
    }

    /// Expected shape of every trainable tensor and buffer.
    pub fn manifest(&self) -> (BTreeMap<String, [usize; 4]>, BTreeMap<String, [usize; 4]>) {
        let mut params = BTreeMap::new();
        let mut buffers = BTreeMap::new();
        for l in self.conv_layers() {
            params.insert(format!("{}.weight", l.name), [l.c_out, l.c_in, 3, 3]);
            params.insert(format!("{}.bias", l.name), [1, l.c_out, 1, 1]);
        }
        for (name, c) in self.bn_layers() {
            params.insert(format!("{name}.gamma"), [1, c, 1, 1]);
            params.insert(format!("{name}.beta"), [1, c, 1, 1]);
            buffers.insert(format!("{name}.running_mean"), [1, c, 1, 1]);
            buffers.insert(format!("{name}.running_var"), [1, c, 1, 1]);
        }
        (params, buffers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Leaky,
    Identity,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub c_out: usize,
    pub c_in: usize,
    pub activation: Activation,
}

impl ConvLayer {
    /// Incoming connections per output unit.
    pub fn fan_in(&self) -> usize {
        self.c_in * 9
    }
}

/// Standard deviation of the zero-mean Gaussian weight initialisation for a
/// layer with `fan_in` incoming connections feeding a leaky ReLU.
pub fn init_std(fan_in: usize, leaky_slope: f64) -> f64 {
    1.0 / (fan_in as f64 * (1.0 + leaky_slope * leaky_slope)).sqrt()
}

/// Encoder and decoder parameters plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    /// Trainable tensors, keyed by dotted path.
    pub params: BTreeMap<String, Tensor<T>>,
    /// Running batch-norm statistics.
    pub buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Fresh parameters: Gaussian conv weights, zero biases, unit BN scale,
    /// zero BN shift, running mean 0 / variance 1. Deterministic in `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for layer in config.conv_layers() {
            let std = init_std(layer.fan_in(), config.leaky_slope);
            let normal = Normal::new(0.0, std).expect("finite std");
            let w = Tensor::from_fn([layer.c_out, layer.c_in, 3, 3], |_| {
                T::c(normal.sample(&mut rng))
            });
            params.insert(format!("{}.weight", layer.name), w);
            params.insert(
                format!("{}.bias", layer.name),
                Tensor::zeros([1, layer.c_out, 1, 1]),
            );
        }
        let mut buffers = BTreeMap::new();
        for (name, c) in config.bn_layers() {
            params.insert(
                format!("{name}.gamma"),
                Tensor::full([1, c, 1, 1], T::one()),
            );
            params.insert(format!("{name}.beta"), Tensor::zeros([1, c, 1, 1]));
            buffers.insert(format!("{name}.running_mean"), Tensor::zeros([1, c, 1, 1]));
            buffers.insert(
                format!("{name}.running_var"),
                Tensor::full([1, c, 1, 1], T::one()),
            );
        }
        Ok(Self {
            config,
            params,
            buffers,
        })
    }

    pub fn param(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| AsiError::InvalidArgument(format!("missing parameter {name}")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>> {
        self.buffers
            .get(name)
            .ok_or_else(|| AsiError::InvalidArgument(format!("missing buffer {name}")))
    }

    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Checks names and shapes against the architecture manifest.
    pub fn check_complete(&self) -> Result<()> {
        let (want_p, want_b) = self.config.manifest();
        for (want, have, kind) in [
            (&want_p, &self.params, "parameter"),
            (&want_b, &self.buffers, "buffer"),
        ] {
            for (name, shape) in want {
                match have.get(name) {
                    None => {
                        return Err(AsiError::InvalidArgument(format!("missing {kind} {name}")))
                    }
                    Some(t) if t.shape() != *shape => {
                        return Err(AsiError::Shape(format!(
                            "{kind} {name}: expected {shape:?}, found {:?}",
                            t.shape()
                        )))
                    }
                    _ => {}
                }
            }
            if let Some(extra) = have.keys().find(|k| !want.contains_key(*k)) {
                return Err(AsiError::InvalidArgument(format!(
                    "unexpected {kind} {extra}"
                )));
            }
        }
        Ok(())
    }

    /// Folds training-mode batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[(String, crate::tensor::BatchStats<T>)]) {
        let m = T::c(self.config.bn_momentum);
        for (layer, s) in stats {
            for (suffix, fresh) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                if let Some(buf) = self.buffers.get_mut(&format!("{layer}.{suffix}")) {
                    for (r, &v) in buf.data_mut().iter_mut().zip(fresh.iter()) {
                        *r = (T::one() - m) * *r + m * v;
                    }
                }
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .values()
            .chain(self.buffers.values())
            .all(Tensor::all_finite)
    }
}
