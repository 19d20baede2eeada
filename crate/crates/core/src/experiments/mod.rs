//! Seeded experiment drivers: MNIST rotation, synthetic volume comparison
//! against B-spline interpolation, and the synthesis weight sweep.

mod compare;
mod mnist;
mod synthetic;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use compare::{
    compare_methods, compare_on, group_axial, group_sagittal, lambda_sweep, rec_syn_scores,
    summarize_sweep, sweep_entry, train_synthetic, SweepEntry, SweepReport, ASI, BSPLINE,
};
pub use mnist::{
    evaluate_rotation, load_idx, load_splits, mnist_rotation_experiment, rotate, rotation_triplet,
    DigitRow, MnistReport, MnistSpec, MnistSplits, RotationSampler, ENDPOINT_DEGREES, EVAL_ALPHAS,
    NEIGHBOUR_DEGREES,
};
pub use synthetic::{
    degradation_protocol, synthetic_splits, synthetic_volume, synthetic_volume_dataset,
    SyntheticSpec,
};

use crate::error::{AsiError, Result};
use crate::model::ModelConfig;
use crate::training::{AugmentConfig, TrainConfig, LAMBDA_CARDIAC, LAMBDA_MNIST};
use crate::volume::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    MnistRotation,
    SyntheticVolume,
    LambdaSweep,
}

/// Everything an experiment needs; with the seed it determines the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; nothing is written when absent.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_factors")]
    pub factors: Vec<usize>,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mnist: MnistSpec,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
}

fn default_factors() -> Vec<usize> {
    vec![2]
}

fn default_lambdas() -> Vec<f64> {
    vec![0.0, 0.001, 0.01, 0.05, 0.1, 1.0]
}

impl ExperimentSpec {
    /// Desk-scale MNIST defaults.
    pub fn mnist_default() -> Self {
        Self {
            kind: ExperimentKind::MnistRotation,
            seed: 0,
            output_dir: None,
            factors: default_factors(),
            lambdas: default_lambdas(),
            model: ModelConfig {
                base_kernels: 16,
                ..ModelConfig::mnist()
            },
            train: TrainConfig {
                lr: 1e-3,
                lambda: LAMBDA_MNIST,
                pairs_per_batch: 32,
                patch_size: 32,
                epochs: 15,
                augment: AugmentConfig::none(),
                ..TrainConfig::default()
            },
            mnist: MnistSpec::default(),
            synthetic: SyntheticSpec::default(),
        }
    }

    /// Desk-scale synthetic volume defaults.
    pub fn synthetic_default(kind: ExperimentKind) -> Self {
        Self {
            kind,
            seed: 0,
            output_dir: None,
            factors: default_factors(),
            lambdas: default_lambdas(),
            model: ModelConfig {
                base_kernels: 16,
                latent_channels: 64,
                ..ModelConfig::default()
            },
            train: TrainConfig {
                lr: 1e-3,
                lambda: LAMBDA_CARDIAC,
                pairs_per_batch: 16,
                patch_size: 32,
                epochs: 50,
                ..TrainConfig::default()
            },
            mnist: MnistSpec::default(),
            synthetic: SyntheticSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)
            .map_err(|e| AsiError::InvalidArgument(format!("experiment spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AsiError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            AsiError::InvalidArgument(m) => {
                AsiError::InvalidArgument(format!("{}: {m}", path.display()))
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.factors.is_empty() || self.factors.iter().any(|&k| k < 2) {
            return Err(AsiError::InvalidArgument(format!(
                "factors {:?} must all be >= 2",
                self.factors
            )));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(AsiError::InvalidArgument(format!(
                "lambdas {:?} must be >= 0",
                self.lambdas
            )));
        }
        Ok(())
    }

    /// Creates the output layout and echoes the spec as `spec.toml`.
    pub fn prepare_output(&self) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.output_dir else {
            return Ok(None);
        };
        for d in [dir.clone(), dir.join("grids"), dir.join("checkpoints")] {
            fs::create_dir_all(&d).map_err(|e| AsiError::io(&d, e))?;
        }
        let echo = dir.join("spec.toml");
        fs::write(&echo, self.to_toml()).map_err(|e| AsiError::io(&echo, e))?;
        Ok(Some(dir.clone()))
    }
}

/// Runs the experiment named by `spec.kind` and returns its summary.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<serde_json::Value> {
    spec.validate()?;
    let v = match spec.kind {
        ExperimentKind::MnistRotation => {
            let (r, _) = mnist_rotation_experiment(spec)?;
            serde_json::json!({
                "success_rate": r.success_rate,
                "mean_mse_synth": r.mean_mse_synth,
                "mean_mse_endpoint0": r.mean_mse_endpoint0,
                "best_epoch": r.best_epoch,
            })
        }
        ExperimentKind::SyntheticVolume => {
            let r = compare_methods(spec, None)?;
            serde_json::json!({ "aggregate": r.aggregate, "comparisons": r.comparisons })
        }
        ExperimentKind::LambdaSweep => {
            serde_json::to_value(lambda_sweep(spec)?.0).expect("serialisable")
        }
    };
    Ok(v)
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable");
    fs::write(path, text).map_err(|e| AsiError::io(path, e))
}

pub(crate) fn write_rows_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AsiError::format(path, e.to_string()))?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| AsiError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| AsiError::io(path, e))
}

/// Writes rows of equally sized `[0, 1]` images as an 8-bit grayscale PNG
/// with a 2-pixel gap between cells.
pub fn write_grid_png(path: &Path, rows: &[Vec<Image<f32>>]) -> Result<()> {
    const GAP: usize = 2;
    let first = rows
        .iter()
        .flat_map(|r| r.first())
        .next()
        .ok_or_else(|| AsiError::InvalidArgument("empty image grid".into()))?;
    let (h, w) = (first.height(), first.width());
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let (gh, gw) = (rows.len() * (h + GAP) - GAP, cols * (w + GAP) - GAP);
    let mut px = vec![0u8; gh * gw];
    for (r, row) in rows.iter().enumerate() {
        for (c, im) in row.iter().enumerate() {
            if im.height() != h || im.width() != w {
                return Err(AsiError::Shape("grid images differ in size".into()));
            }
            for y in 0..h {
                for x in 0..w {
                    px[(r * (h + GAP) + y) * gw + c * (w + GAP) + x] =
                        (im.get(y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| AsiError::io(parent, e))?;
    }
    let f = fs::File::create(path).map_err(|e| AsiError::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(f), gw as u32, gh as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut wr = enc
        .write_header()
        .map_err(|e| AsiError::format(path, e.to_string()))?;
    wr.write_image_data(&px)
        .map_err(|e| AsiError::format(path, e.to_string()))
}
