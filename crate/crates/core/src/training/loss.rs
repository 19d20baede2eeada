use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::TripletBatch;
use crate::error::{AsiError, Result};
use crate::metrics::{gaussian_window, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
use crate::model::{read_archive, write_archive};
use crate::model::{Autoencoder, ForwardCtx};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

pub const KIND_FEATURE_STACK: &str = "feature-stack";

/// Distance `d` used by the synthesis term.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SynthesisDistance {
    Mse,
    #[default]
    Dssim,
    /// Fixed convolutional feature stack read from an ASCK archive.
    ExternalFeature {
        path: std::path::PathBuf,
    },
}

/// Resolved distance, with any external weights loaded.
#[derive(Clone, Debug)]
pub enum Distance<T> {
    Mse,
    Dssim,
    Feature(FeatureStack<T>),
}

impl<T: Scalar> Distance<T> {
    pub fn resolve(spec: &SynthesisDistance) -> Result<Self> {
        Ok(match spec {
            SynthesisDistance::Mse => Self::Mse,
            SynthesisDistance::Dssim => Self::Dssim,
            SynthesisDistance::ExternalFeature { path } => Self::Feature(FeatureStack::load(path)?),
        })
    }

    pub fn apply(&self, g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
        match self {
            Self::Mse => g.mse(a, b),
            Self::Dssim => dssim_distance(g, a, b),
            Self::Feature(f) => f.distance(g, a, b),
        }
    }
}

/// `(1 − SSIM(a, b)) / 2` with the metric's Gaussian window, averaged over
/// all valid windows of the batch.
pub fn dssim_distance<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let k: Vec<T> = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
        .into_iter()
        .map(T::c)
        .collect();
    let c1 = T::c(SSIM_K1 * SSIM_K1);
    let c2 = T::c(SSIM_K2 * SSIM_K2);
    let mu_a = g.sep_filter_valid(a, &k)?;
    let mu_b = g.sep_filter_valid(b, &k)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = g.sep_filter_valid(aa, &k)?;
    let e_bb = g.sep_filter_valid(bb, &k)?;
    let e_ab = g.sep_filter_valid(ab, &k)?;
    let mu_aa = g.mul(mu_a, mu_a)?;
    let mu_bb = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_aa)?;
    let var_b = g.sub(e_bb, mu_bb)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let two = T::c(2.0);
    let l_num = g.scale(mu_ab, two);
    let l_num = g.add_scalar(l_num, c1);
    let cs_num = g.scale(cov, two);
    let cs_num = g.add_scalar(cs_num, c2);
    let l_den = g.add(mu_aa, mu_bb)?;
    let l_den = g.add_scalar(l_den, c1);
    let cs_den = g.add(var_a, var_b)?;
    let cs_den = g.add_scalar(cs_den, c2);
    let num = g.mul(l_num, cs_num)?;
    let den = g.mul(l_den, cs_den)?;
    let map = g.div(num, den)?;
    let s = g.mean(map);
    let one_minus = g.scale(s, T::c(-0.5));
    Ok(g.add_scalar(one_minus, T::c(0.5)))
}

/// Fixed 3×3 conv + leaky-ReLU layers; the distance sums the MSE of every
/// layer's activations.
#[derive(Clone, Debug)]
pub struct FeatureStack<T> {
    pub layers: Vec<(Tensor<T>, Tensor<T>)>,
    pub leaky_slope: f64,
}

impl<T: Scalar> FeatureStack<T> {
    pub fn new(layers: Vec<(Tensor<T>, Tensor<T>)>, leaky_slope: f64) -> Result<Self> {
        let mut c_in = 1;
        for (i, (w, b)) in layers.iter().enumerate() {
            let s = w.shape();
            if s[1] != c_in || s[2] != 3 || s[3] != 3 || b.shape() != [1, s[0], 1, 1] {
                return Err(AsiError::Shape(format!(
                    "feature layer {i}: weight {s:?}, bias {:?}",
                    b.shape()
                )));
            }
            c_in = s[0];
        }
        if layers.is_empty() {
            return Err(AsiError::InvalidArgument(
                "feature stack has no layers".into(),
            ));
        }
        Ok(Self {
            layers,
            leaky_slope,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ar = read_archive(path)?;
        if ar.kind != KIND_FEATURE_STACK {
            return Err(AsiError::format(
                path,
                format!("archive kind {} is not {KIND_FEATURE_STACK}", ar.kind),
            ));
        }
        let slope = ar
            .config
            .get("leaky_slope")
            .and_then(|v| v.as_f64())
            .unwrap_or(0.2);
        let mut layers = Vec::new();
        while let Some(w) = ar.tensor(&format!("layer{}.weight", layers.len())) {
            let b = ar
                .tensor(&format!("layer{}.bias", layers.len()))
                .ok_or_else(|| {
                    AsiError::format(path, format!("layer{} has no bias", layers.len()))
                })?;
            layers.push((w, b));
        }
        Self::new(layers, slope).map_err(|e| AsiError::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let names: Vec<(String, String)> = (0..self.layers.len())
            .map(|i| (format!("layer{i}.weight"), format!("layer{i}.bias")))
            .collect();
        let mut tensors = Vec::new();
        for ((wn, bn), (w, b)) in names.iter().zip(&self.layers) {
            tensors.push((wn.as_str(), "param", w));
            tensors.push((bn.as_str(), "param", b));
        }
        write_archive(
            path,
            KIND_FEATURE_STACK,
            serde_json::json!({ "leaky_slope": self.leaky_slope }),
            &tensors,
        )
    }

    pub fn distance(&self, g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
        let (mut fa, mut fb) = (a, b);
        let mut total: Option<Var> = None;
        for (w, bias) in &self.layers {
            let w = g.input(w.clone());
            let bias = g.input(bias.clone());
            let ya = g.conv2d(fa, w, Some(bias))?;
            let yb = g.conv2d(fb, w, Some(bias))?;
            fa = g.leaky_relu(ya, T::c(self.leaky_slope));
            fb = g.leaky_relu(yb, T::c(self.leaky_slope));
            let d = g.mse(fa, fb)?;
            total = Some(match total {
                Some(t) => g.add(t, d)?,
                None => d,
            });
        }
        Ok(total.expect("at least one layer"))
    }
}

/// Loss nodes of one step. `synth` is absent when `λ = 0` in training mode,
/// where the synthesis branch is not recorded at all.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub recon: Var,
    pub synth: Option<Var>,
}

/// Reconstruction MSE of the middle slices plus `λ·d` between the middle
/// slices and the decoded midpoint of their neighbours' codes.
///
/// All encoder inputs of the batch go through the encoder together and all
/// decoder inputs through the decoder together, so batch-norm statistics in
/// training mode cover the whole triplet batch.
pub fn combined_loss<T: Scalar, M: Autoencoder<T>>(
    g: &mut Graph<T>,
    model: &M,
    batch: &TripletBatch<T>,
    lambda: f64,
    distance: &Distance<T>,
    ctx: &mut ForwardCtx<T>,
    with_synthesis: bool,
) -> Result<LossVars> {
    if !(lambda >= 0.0) {
        return Err(AsiError::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let n = batch.len();
    let mid = g.input(batch.mid.clone());
    if !with_synthesis {
        let z = model.encode(g, mid, ctx)?;
        let rec = model.decode(g, z, ctx)?;
        let recon = g.mse(rec, mid)?;
        return Ok(LossVars {
            total: recon,
            recon,
            synth: None,
        });
    }
    let prev = g.input(batch.prev.clone());
    let next = g.input(batch.next.clone());
    let x = g.concat_batch(&[prev, mid, next])?;
    let z = model.encode(g, x, ctx)?;
    let zp = g.narrow_batch(z, 0, n)?;
    let zm = g.narrow_batch(z, n, n)?;
    let zn = g.narrow_batch(z, 2 * n, n)?;
    let half = T::c(0.5);
    let hp = g.scale(zp, half);
    let hn = g.scale(zn, half);
    let zmix = g.add(hp, hn)?;
    let zd = g.concat_batch(&[zm, zmix])?;
    let out = model.decode(g, zd, ctx)?;
    let rec = g.narrow_batch(out, 0, n)?;
    let syn = g.narrow_batch(out, n, n)?;
    let recon = g.mse(rec, mid)?;
    let synth = distance.apply(g, syn, mid)?;
    let weighted = g.scale(synth, T::c(lambda));
    let total = g.add(recon, weighted)?;
    Ok(LossVars {
        total,
        recon,
        synth: Some(synth),
    })
}
