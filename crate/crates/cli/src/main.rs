use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asi::baselines::bspline_upsample_z;
use asi::experiments::{
    compare_methods, degradation_protocol, run_experiment, synthetic_splits, ExperimentKind,
    ExperimentSpec, SyntheticSpec,
};
use asi::interp::{upsample_volume, UpsampleOptions};
use asi::metrics::{evaluate_volume, synthesized_indices, MetricReport};
use asi::model::{ModelConfig, ModelParams};
use asi::training::{train, StackDataset, TrainConfig, TrainOutput};
use asi::volume::{load_volume, save_volume, Plane, Volume};
use asi::AsiError;
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

const EXIT_ARGS: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "asi",
    version,
    about = "Through-plane upsampling by latent-space slice interpolation"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train an autoencoder from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Blur along z with FWHM K·sz and keep every K-th slice.
    Downsample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        factor: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Insert K−1 slices between every pair of neighbours.
    Upsample {
        #[arg(long = "in")]
        input: PathBuf,
        /// Checkpoint, required for `--method asi`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        factor: usize,
        #[arg(long, value_enum, default_value_t = Method::Asi)]
        method: Method,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-section SSIM, PSNR, VIF and MSE of a candidate against a reference.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        cand: PathBuf,
        #[arg(long, default_value = "axial")]
        plane: Plane,
        /// Mark axial slices that are not multiples of this factor as synthesized.
        #[arg(long)]
        factor: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare ASI with B-spline interpolation on the synthetic family.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an experiment spec.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Asi,
    Bspline,
}

/// Schema of `train --config`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct TrainFile {
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
    /// VOLF training volumes; the synthetic family is used when empty.
    #[serde(default)]
    train_volumes: Vec<PathBuf>,
    #[serde(default)]
    val_volumes: Vec<PathBuf>,
    #[serde(default)]
    synthetic: SyntheticSpec,
}

fn seed_override() -> Result<Option<u64>, AsiError> {
    match std::env::var("ASI_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| {
            AsiError::InvalidArgument(format!("ASI_SEED={s} is not an unsigned integer"))
        }),
        Err(_) => Ok(None),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AsiError> {
    let text = fs::read_to_string(path).map_err(|e| AsiError::io(path, e))?;
    toml::from_str(&text).map_err(|e| AsiError::InvalidArgument(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), AsiError> {
    fs::write(path, text).map_err(|e| AsiError::io(path, e))
}

fn load_all(paths: &[PathBuf]) -> Result<Vec<Volume>, AsiError> {
    paths.iter().map(|p| load_volume(p)).collect()
}

fn cmd_train(config: &Path, out: &Path) -> Result<(), AsiError> {
    let mut file: TrainFile = read_toml(config)?;
    if let Some(s) = seed_override()? {
        file.seed = Some(s);
    }
    if let Some(s) = file.seed {
        file.train.seed = s;
    }
    file.model.validate()?;
    file.train.validate()?;
    fs::create_dir_all(out).map_err(|e| AsiError::io(out, e))?;
    write_text(
        &out.join("config.toml"),
        &toml::to_string(&file).expect("config serialises"),
    )?;
    let (train_vols, val_vols) = if file.train_volumes.is_empty() {
        let [t, v, _] = synthetic_splits(&file.synthetic, file.train.seed)?;
        (t, v)
    } else {
        (load_all(&file.train_volumes)?, load_all(&file.val_volumes)?)
    };
    let data = StackDataset::from_volumes(&train_vols)?;
    let val = StackDataset::from_volumes(&val_vols)?.all_triplets()?;
    let outcome = train::<f32>(
        file.model,
        file.train,
        &data,
        &val,
        &TrainOutput {
            dir: Some(out.to_owned()),
        },
    )?;
    println!(
        "best epoch {} (val loss {:.6}); checkpoint {}",
        outcome.best_epoch,
        outcome.history[outcome.best_epoch - 1].val_loss,
        out.join("checkpoints/best.asck").display()
    );
    Ok(())
}

fn cmd_downsample(input: &Path, factor: usize, out: &Path) -> Result<(), AsiError> {
    let vol = load_volume(input)?;
    let (low, _) = degradation_protocol(&vol, factor)?;
    save_volume(&low, out)?;
    println!("{:?} -> {:?}", vol.dims(), low.dims());
    Ok(())
}

fn cmd_upsample(
    input: &Path,
    model: Option<&Path>,
    factor: usize,
    method: Method,
    out: &Path,
) -> Result<(), AsiError> {
    let vol = load_volume(input)?;
    let up = match method {
        Method::Bspline => bspline_upsample_z(&vol, factor)?,
        Method::Asi => {
            let path = model.ok_or_else(|| {
                AsiError::InvalidArgument("--model is required for --method asi".into())
            })?;
            let m = ModelParams::<f32>::load_checkpoint(path)?;
            upsample_volume(&m, &vol, factor, UpsampleOptions::default())?
        }
    };
    if !up.data().iter().all(|v| v.is_finite()) {
        return Err(AsiError::NonFinite("upsampled volume".into()));
    }
    save_volume(&up, out)?;
    println!("{:?} -> {:?}", vol.dims(), up.dims());
    Ok(())
}

fn cmd_evaluate(
    reference: &Path,
    cand: &Path,
    plane: Plane,
    factor: Option<usize>,
    out: &Path,
) -> Result<(), AsiError> {
    let r = load_volume(reference)?;
    let c = load_volume(cand)?;
    let syn = factor
        .map(|k| synthesized_indices(r.depth(), k))
        .unwrap_or_default();
    let mut report = MetricReport::default();
    report.push_rows(
        &plane.to_string(),
        evaluate_volume(&r, &c, plane, "candidate", &syn)?,
    );
    report.aggregate();
    report.write_csv(out)?;
    for a in &report.aggregate {
        println!("{} {:.6} ± {:.6} (n={})", a.metric, a.mean, a.std, a.n);
    }
    Ok(())
}

fn load_spec(path: &Path) -> Result<ExperimentSpec, AsiError> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(s) = seed_override()? {
        spec.seed = s;
    }
    spec.train.seed = spec.seed;
    Ok(spec)
}

fn cmd_compare(config: &Path) -> Result<(), AsiError> {
    let mut spec = load_spec(config)?;
    spec.kind = ExperimentKind::SyntheticVolume;
    let report = compare_methods(&spec, None)?;
    for c in &report.comparisons {
        println!(
            "{} {}: {} > {} p={:.4e} (n={})",
            c.group, c.metric, c.method_a, c.method_b, c.p_value, c.n
        );
    }
    Ok(())
}

fn cmd_experiment(path: &Path) -> Result<(), AsiError> {
    let spec = load_spec(path)?;
    let summary = run_experiment(&spec)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("serialisable")
    );
    Ok(())
}

fn exit_code(e: &AsiError) -> u8 {
    match e {
        AsiError::Io { .. } | AsiError::Format { .. } => EXIT_IO,
        AsiError::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_ARGS,
    }
}

fn run(cli: Cli) -> Result<(), AsiError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(AsiError::InvalidArgument(
                "--workers must be positive".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AsiError::InvalidArgument(e.to_string()))?;
    }
    match cli.command {
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Downsample { input, factor, out } => cmd_downsample(&input, factor, &out),
        Command::Upsample {
            input,
            model,
            factor,
            method,
            out,
        } => cmd_upsample(&input, model.as_deref(), factor, method, &out),
        Command::Evaluate {
            reference,
            cand,
            plane,
            factor,
            out,
        } => cmd_evaluate(&reference, &cand, plane, factor, &out),
        Command::Compare { config } => cmd_compare(&config),
        Command::Experiment { spec } => cmd_experiment(&spec),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGS } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
