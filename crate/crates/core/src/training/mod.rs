//! Optimisation of the autoencoder with the combined reconstruction and
//! synthesis objective.

mod adam;
mod data;
mod loss;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use data::{
    augment, sample_triplets, transform, AugmentConfig, SliceTriplet, StackDataset, TripletBatch,
    TripletSampler,
};
pub use loss::{
    combined_loss, dssim_distance, Distance, FeatureStack, LossVars, SynthesisDistance,
    KIND_FEATURE_STACK,
};

use crate::error::{AsiError, Result};
use crate::model::{ForwardCtx, ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::Graph;

/// Synthesis weights used for the datasets in the original experiments.
pub const LAMBDA_CARDIAC: f64 = 0.05;
pub const LAMBDA_BRAIN: f64 = 0.001;
pub const LAMBDA_MNIST: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lambda: f64,
    /// Triplets per optimisation step.
    pub pairs_per_batch: usize,
    pub patch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub synthesis_distance: SynthesisDistance,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
    /// Write `checkpoints/epoch_NNN.asck` every this many epochs (0: never).
    pub checkpoint_every: usize,
    /// Triplets per forward pass during validation.
    pub val_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            lambda: LAMBDA_CARDIAC,
            pairs_per_batch: 32,
            patch_size: 64,
            epochs: 50,
            seed: 0,
            synthesis_distance: SynthesisDistance::Dssim,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
            checkpoint_every: 0,
            val_batch: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AsiError::InvalidArgument(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.patch_size == 0 || self.patch_size % 4 != 0 {
            return bad(format!(
                "patch size {} is not a positive multiple of 4",
                self.patch_size
            ));
        }
        if self.pairs_per_batch == 0 || self.val_batch == 0 {
            return bad("batch sizes must be positive".into());
        }
        let [lo, hi] = self.augment.intensity_scale;
        if !(lo > 0.0 && hi >= lo) {
            return bad(format!("intensity scale range [{lo}, {hi}] is invalid"));
        }
        Ok(())
    }
}

/// Mean loss components over a set of triplets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub recon: f64,
    /// Not computed by training steps with `λ = 0`.
    pub synth: Option<f64>,
}

/// One line of `history.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub recon_loss: f64,
    pub synth_loss: Option<f64>,
    pub val_loss: f64,
    pub val_recon: f64,
    pub val_synth: f64,
    pub seconds: f64,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| AsiError::format(path, e.to_string()))?;
    for r in history {
        w.serialize(r)
            .map_err(|e| AsiError::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| AsiError::io(path, e))
}

/// Model, optimiser state and distance for a training run.
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: ModelParams<T>,
    pub state: AdamState<T>,
    pub distance: Distance<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ModelParams::build(model_config, config.seed)?;
        Self::from_model(model, config)
    }

    pub fn from_model(model: ModelParams<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let distance = Distance::resolve(&config.synthesis_distance)?;
        Ok(Self {
            config,
            model,
            state: AdamState::new(),
            distance,
        })
    }

    /// One Adam step on `batch` in training mode; updates the batch-norm
    /// running statistics.
    pub fn step(&mut self, batch: &[SliceTriplet]) -> Result<LossComponents> {
        let b = TripletBatch::<T>::from_triplets(batch)?;
        let mut g = Graph::new();
        let mut ctx = ForwardCtx::train();
        let lambda = self.config.lambda;
        let l = combined_loss(
            &mut g,
            &self.model,
            &b,
            lambda,
            &self.distance,
            &mut ctx,
            lambda > 0.0,
        )?;
        let out = LossComponents {
            total: g.value(l.total).item().f64(),
            recon: g.value(l.recon).item().f64(),
            synth: l.synth.map(|s| g.value(s).item().f64()),
        };
        if !out.total.is_finite() {
            return Err(AsiError::NonFinite(format!(
                "training loss {} at step {}",
                out.total,
                self.state.step + 1
            )));
        }
        g.backward(l.total)?;
        let grads = g.param_grads();
        adam_step(
            &mut self.model.params,
            &grads,
            &mut self.state,
            self.config.lr,
            &self.config.adam,
        )?;
        self.model.update_running_stats(&ctx.stats);
        if !self.model.all_finite() {
            return Err(AsiError::NonFinite(format!(
                "parameters after step {}",
                self.state.step
            )));
        }
        Ok(out)
    }

    /// Mean eval-mode loss components over `triplets`.
    pub fn evaluate(&self, triplets: &[SliceTriplet]) -> Result<LossComponents> {
        evaluate_loss(
            &self.model,
            triplets,
            self.config.lambda,
            &self.distance,
            self.config.val_batch,
        )
    }
}

/// Eval-mode combined loss, averaged per triplet, with the synthesis term
/// always computed.
pub fn evaluate_loss<T: Scalar>(
    model: &ModelParams<T>,
    triplets: &[SliceTriplet],
    lambda: f64,
    distance: &Distance<T>,
    chunk: usize,
) -> Result<LossComponents> {
    if triplets.is_empty() {
        return Err(AsiError::EmptyDataset("no validation triplets".into()));
    }
    let (mut recon, mut synth) = (0.0, 0.0);
    for part in triplets.chunks(chunk.max(1)) {
        let b = TripletBatch::<T>::from_triplets(part)?;
        let mut g = Graph::new();
        let l = combined_loss(
            &mut g,
            model,
            &b,
            lambda,
            distance,
            &mut ForwardCtx::eval(),
            true,
        )?;
        let w = part.len() as f64;
        recon += w * g.value(l.recon).item().f64();
        synth += w * g.value(l.synth.expect("synthesis requested")).item().f64();
    }
    let n = triplets.len() as f64;
    let (recon, synth) = (recon / n, synth / n);
    let total = recon + lambda * synth;
    if !total.is_finite() {
        return Err(AsiError::NonFinite(format!("validation loss {total}")));
    }
    Ok(LossComponents {
        total,
        recon,
        synth: Some(synth),
    })
}

/// Where a run writes its history and checkpoints.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    /// Parameters of the epoch with the lowest validation loss.
    pub best: ModelParams<T>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Parameters after the last epoch.
    pub last: ModelParams<T>,
}

/// Runs `config.epochs` epochs of about `train.len() / T` steps each and
/// keeps the parameters with the lowest validation loss.
pub fn train<T: Scalar>(
    model_config: ModelConfig,
    config: TrainConfig,
    train_set: &dyn TripletSampler,
    val_set: &[SliceTriplet],
    output: &TrainOutput,
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() {
        return Err(AsiError::EmptyDataset(
            "training set has no triplets".into(),
        ));
    }
    if val_set.is_empty() {
        return Err(AsiError::EmptyDataset(
            "validation set has no triplets".into(),
        ));
    }
    let mut trainer = Trainer::<T>::new(model_config, config)?;
    let cfg = trainer.config.clone();
    let ckpt_dir = output.dir.as_ref().map(|d| d.join("checkpoints"));
    if let Some(d) = &ckpt_dir {
        std::fs::create_dir_all(d).map_err(|e| AsiError::io(d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let steps = train_set.len().div_ceil(cfg.pairs_per_batch);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ModelParams<T>)> = None;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let (mut recon, mut synth, mut has_synth) = (0.0, 0.0, false);
        for _ in 0..steps {
            let batch = train_set.sample(cfg.pairs_per_batch, cfg.patch_size, &mut rng)?;
            let batch = augment(&batch, &cfg.augment, &mut rng);
            let l = trainer.step(&batch)?;
            recon += l.recon;
            if let Some(s) = l.synth {
                synth += s;
                has_synth = true;
            }
        }
        let val = trainer.evaluate(val_set)?;
        let rec = EpochRecord {
            epoch,
            recon_loss: recon / steps as f64,
            synth_loss: has_synth.then(|| synth / steps as f64),
            val_loss: val.total,
            val_recon: val.recon,
            val_synth: val.synth.unwrap_or(f64::NAN),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: recon {:.5} synth {:?} val {:.5} ({:.1}s)",
            rec.recon_loss,
            rec.synth_loss,
            rec.val_loss,
            rec.seconds
        );
        let improved = best.as_ref().is_none_or(|(b, _, _)| val.total < *b);
        if improved {
            best = Some((val.total, epoch, trainer.model.clone()));
            if let Some(d) = &ckpt_dir {
                trainer.model.save_checkpoint(&d.join("best.asck"))?;
            }
        }
        if let Some(d) = &ckpt_dir {
            if cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0 {
                trainer
                    .model
                    .save_checkpoint(&d.join(format!("epoch_{epoch:03}.asck")))?;
            }
        }
        history.push(rec);
        if let Some(d) = &output.dir {
            write_history(&d.join("history.csv"), &history)?;
        }
    }
    let (_, best_epoch, best) =
        best.ok_or_else(|| AsiError::InvalidArgument("zero epochs requested".into()))?;
    Ok(TrainOutcome {
        best,
        best_epoch,
        history,
        last: trainer.model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Image;

    fn stacks(n: usize) -> StackDataset {
        let stacks = (0..n)
            .map(|s| {
                (0..4)
                    .map(|z| {
                        Image::from_fn(16, 16, |y, x| {
                            let c = 8.0 + (z as f32 - 1.5) * 2.0;
                            let r = ((y as f32 - c).powi(2)
                                + (x as f32 - 8.0 - s as f32 * 0.3).powi(2))
                            .sqrt();
                            (1.0 - r / 5.0).clamp(0.0, 1.0)
                        })
                    })
                    .collect()
            })
            .collect();
        StackDataset::new(stacks).unwrap()
    }

    fn tiny() -> (ModelConfig, TrainConfig) {
        let m = ModelConfig {
            base_kernels: 4,
            latent_channels: 4,
            ..ModelConfig::default()
        };
        let t = TrainConfig {
            lr: 3e-3,
            lambda: 0.5,
            pairs_per_batch: 4,
            patch_size: 12,
            epochs: 6,
            seed: 11,
            val_batch: 8,
            ..TrainConfig::default()
        };
        (m, t)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                lambda: -0.1,
                ..TrainConfig::default()
            },
            TrainConfig {
                patch_size: 30,
                ..TrainConfig::default()
            },
            TrainConfig {
                lr: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        let text = toml::to_string(&TrainConfig::default()).unwrap();
        assert_eq!(
            toml::from_str::<TrainConfig>(&text).unwrap(),
            TrainConfig::default()
        );
    }

    #[test]
    fn training_reduces_loss_and_selects_best_epoch() {
        let (m, t) = tiny();
        let data = stacks(3);
        let val = data.all_triplets().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = train::<f32>(
            m,
            TrainConfig {
                checkpoint_every: 3,
                ..t
            },
            &data,
            &val,
            &TrainOutput {
                dir: Some(dir.path().to_owned()),
            },
        )
        .unwrap();
        let h = &out.history;
        assert_eq!(h.len(), 6);
        assert!(h.last().unwrap().recon_loss < h[0].recon_loss);
        let best_val = h[out.best_epoch - 1].val_loss;
        assert!(h.iter().all(|r| best_val <= r.val_loss));
        let d = Distance::resolve(&SynthesisDistance::Dssim).unwrap();
        let again = evaluate_loss(&out.best, &val, 0.5, &d, 8).unwrap();
        assert!((again.total - best_val).abs() < 1e-6);
        let loaded =
            ModelParams::<f32>::load_checkpoint(&dir.path().join("checkpoints/best.asck")).unwrap();
        assert_eq!(loaded.params, out.best.params);
        assert!(dir.path().join("checkpoints/epoch_006.asck").exists());
        let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
        assert!(csv.starts_with("epoch,recon_loss,synth_loss,val_loss"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let (m, t) = tiny();
        let t = TrainConfig { epochs: 2, ..t };
        let data = stacks(2);
        let val = data.all_triplets().unwrap();
        let a = train::<f32>(m.clone(), t.clone(), &data, &val, &TrainOutput::default()).unwrap();
        let b = train::<f32>(m, t, &data, &val, &TrainOutput::default()).unwrap();
        assert_eq!(a.last.params, b.last.params);
        assert_eq!(a.history[1].val_loss, b.history[1].val_loss);
    }

    #[test]
    fn zero_lambda_logs_no_training_synthesis() {
        let (m, t) = tiny();
        let data = stacks(2);
        let val = data.all_triplets().unwrap();
        let out = train::<f32>(
            m,
            TrainConfig {
                lambda: 0.0,
                epochs: 1,
                ..t
            },
            &data,
            &val,
            &TrainOutput::default(),
        )
        .unwrap();
        assert_eq!(out.history[0].synth_loss, None);
        assert!(out.history[0].val_synth.is_finite());
        assert_eq!(out.history[0].val_loss, out.history[0].val_recon);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (m, t) = tiny();
        let empty = StackDataset::new(vec![]).unwrap();
        let data = stacks(1);
        let val = data.all_triplets().unwrap();
        let r = train::<f32>(m.clone(), t.clone(), &empty, &val, &TrainOutput::default());
        assert!(matches!(r, Err(AsiError::EmptyDataset(_))));
        let r = train::<f32>(m, t, &data, &[], &TrainOutput::default());
        assert!(matches!(r, Err(AsiError::EmptyDataset(_))));
    }
}
