use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synthetic::{degradation_protocol, synthetic_splits};
use super::{write_grid_png, write_json, ExperimentSpec};
use crate::baselines::bspline_upsample_z;
use crate::error::Result;
use crate::interp::{upsample_volume, UpsampleOptions};
use crate::metrics::{
    evaluate_slices, evaluate_volume, synthesized_indices, MetricReport, MetricRow,
};
use crate::model::ModelParams;
use crate::training::{train, StackDataset, TrainConfig, TrainOutput};
use crate::volume::{Plane, Volume};

pub const ASI: &str = "asi";
pub const BSPLINE: &str = "bspline";

/// Trains one model on the synthetic training split with weight `lambda`.
pub fn train_synthetic(
    spec: &ExperimentSpec,
    lambda: f64,
    train_vols: &[Volume],
    val_vols: &[Volume],
    dir: Option<&Path>,
) -> Result<(ModelParams<f32>, usize)> {
    let data = StackDataset::from_volumes(train_vols)?;
    let val = StackDataset::from_volumes(val_vols)?.all_triplets()?;
    let cfg = TrainConfig {
        lambda,
        seed: spec.seed,
        ..spec.train.clone()
    };
    let out = train::<f32>(
        spec.model.clone(),
        cfg,
        &data,
        &val,
        &TrainOutput {
            dir: dir.map(Path::to_owned),
        },
    )?;
    Ok((out.best, out.best_epoch))
}

fn tag(rows: Vec<MetricRow>, volume: usize) -> Vec<MetricRow> {
    rows.into_iter()
        .map(|r| MetricRow {
            id: format!("v{volume}/{}", r.id),
            ..r
        })
        .collect()
}

pub fn group_axial(factor: usize) -> String {
    format!("K={factor}/axial-synthesized")
}

pub fn group_sagittal(factor: usize) -> String {
    format!("K={factor}/sagittal")
}

/// Degrades every test volume by each factor, upsamples it with the model
/// and with the B-spline baseline, and scores both against the ground truth
/// on synthesized axial slices and on sagittal sections.
pub fn compare_on(
    model: &ModelParams<f32>,
    test: &[Volume],
    factors: &[usize],
    grids: Option<&Path>,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for &k in factors {
        let per_volume: Vec<[Vec<MetricRow>; 2]> = test
            .par_iter()
            .enumerate()
            .map(|(i, vol)| -> Result<[Vec<MetricRow>; 2]> {
                let (low, truth) = degradation_protocol(vol, k)?;
                let asi = upsample_volume(model, &low, k, UpsampleOptions::default())?;
                let bs = bspline_upsample_z(&low, k)?;
                let syn = synthesized_indices(truth.depth(), k);
                if i == 0 {
                    if let Some(dir) = grids {
                        let rows: Vec<_> = syn
                            .iter()
                            .take(4)
                            .map(|&z| vec![truth.slice(z), bs.slice(z), asi.slice(z)])
                            .collect();
                        write_grid_png(&dir.join(format!("compare_k{k}.png")), &rows)?;
                    }
                }
                let mut axial = Vec::new();
                let mut sagittal = Vec::new();
                for (name, cand) in [(ASI, &asi), (BSPLINE, &bs)] {
                    axial.extend(tag(evaluate_slices(&truth, cand, &syn, name)?, i));
                    sagittal.extend(tag(
                        evaluate_volume(&truth, cand, Plane::Sagittal, name, &syn)?,
                        i,
                    ));
                }
                Ok([axial, sagittal])
            })
            .collect::<Result<_>>()?;
        let (ga, gs) = (group_axial(k), group_sagittal(k));
        for [axial, sagittal] in per_volume {
            report.push_rows(&ga, axial);
            report.push_rows(&gs, sagittal);
        }
        report.compare(&ga, ASI, BSPLINE)?;
        report.compare(&gs, ASI, BSPLINE)?;
    }
    report.aggregate();
    Ok(report)
}

/// Full comparison: generate data, train (unless a model is given), score.
pub fn compare_methods(
    spec: &ExperimentSpec,
    model: Option<&ModelParams<f32>>,
) -> Result<MetricReport> {
    let [train_vols, val_vols, test] = synthetic_splits(&spec.synthetic, spec.seed)?;
    let out = spec.prepare_output()?;
    let trained;
    let model = match model {
        Some(m) => m,
        None => {
            trained = train_synthetic(
                spec,
                spec.train.lambda,
                &train_vols,
                &val_vols,
                out.as_deref(),
            )?
            .0;
            &trained
        }
    };
    let grids = out.as_ref().map(|d| d.join("grids"));
    let report = compare_on(model, &test, &spec.factors, grids.as_deref())?;
    if let Some(d) = &out {
        report.write_csv(&d.join("metrics.csv"))?;
        report.write_json(&d.join("tests.json"))?;
    }
    Ok(report)
}

/// Reconstruction and synthesis scores of one model, as in a row of a
/// "Rec"/"Syn" table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda: f64,
    pub best_epoch: usize,
    pub rec_ssim: f64,
    pub rec_psnr: f64,
    pub rec_vif: Option<f64>,
    pub syn_ssim: f64,
    pub syn_psnr: f64,
    pub syn_vif: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub factor: usize,
    pub entries: Vec<SweepEntry>,
    /// Reconstruction SSIM never rises with λ over the whole sweep.
    pub rec_non_increasing: bool,
    /// Synthesis SSIM never falls with λ over the whole sweep.
    pub syn_non_decreasing: bool,
}

/// Scores reconstructions of the kept slices against the low-resolution
/// input and synthesized slices against the ground truth.
pub fn rec_syn_scores(
    model: &ModelParams<f32>,
    test: &[Volume],
    factor: usize,
) -> Result<MetricReport> {
    let per: Vec<[Vec<MetricRow>; 2]> = test
        .par_iter()
        .enumerate()
        .map(|(i, vol)| -> Result<[Vec<MetricRow>; 2]> {
            let (low, truth) = degradation_protocol(vol, factor)?;
            let up = upsample_volume(
                model,
                &low,
                factor,
                UpsampleOptions {
                    reconstruct_originals: true,
                },
            )?;
            let kept: Vec<usize> = (0..low.depth()).map(|n| n * factor).collect();
            let recon_stack = Volume::from_slices(
                &kept.iter().map(|&z| up.slice(z)).collect::<Vec<_>>(),
                low.spacing(),
                "reconstructed",
            )?;
            let all: Vec<usize> = (0..low.depth()).collect();
            let rec = tag(evaluate_slices(&low, &recon_stack, &all, ASI)?, i);
            let syn = tag(
                evaluate_slices(
                    &truth,
                    &up,
                    &synthesized_indices(truth.depth(), factor),
                    ASI,
                )?,
                i,
            );
            Ok([rec, syn])
        })
        .collect::<Result<_>>()?;
    let mut report = MetricReport::default();
    for [rec, syn] in per {
        report.push_rows("rec", rec);
        report.push_rows("syn", syn);
    }
    report.aggregate();
    Ok(report)
}

pub fn sweep_entry(lambda: f64, best_epoch: usize, r: &MetricReport) -> SweepEntry {
    let m = |g: &str, metric: &str| r.mean(g, ASI, metric);
    SweepEntry {
        lambda,
        best_epoch,
        rec_ssim: m("rec", "ssim").unwrap_or(f64::NAN),
        rec_psnr: m("rec", "psnr").unwrap_or(f64::NAN),
        rec_vif: m("rec", "vif"),
        syn_ssim: m("syn", "ssim").unwrap_or(f64::NAN),
        syn_psnr: m("syn", "psnr").unwrap_or(f64::NAN),
        syn_vif: m("syn", "vif"),
    }
}

pub fn summarize_sweep(factor: usize, mut entries: Vec<SweepEntry>) -> SweepReport {
    entries.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let rec_non_increasing = entries.windows(2).all(|w| w[1].rec_ssim <= w[0].rec_ssim);
    let syn_non_decreasing = entries.windows(2).all(|w| w[1].syn_ssim >= w[0].syn_ssim);
    SweepReport {
        factor,
        entries,
        rec_non_increasing,
        syn_non_decreasing,
    }
}

/// Trains one model per λ and reports reconstruction and synthesis scores
/// at the first factor of the spec. Returns the models alongside.
pub fn lambda_sweep(spec: &ExperimentSpec) -> Result<(SweepReport, Vec<(f64, ModelParams<f32>)>)> {
    let [train_vols, val_vols, test] = synthetic_splits(&spec.synthetic, spec.seed)?;
    let out = spec.prepare_output()?;
    let factor = spec.factors.first().copied().unwrap_or(2);
    let mut entries = Vec::new();
    let mut models = Vec::new();
    let mut rows = MetricReport::default();
    for &lambda in &spec.lambdas {
        let dir = out.as_ref().map(|d| d.join(format!("lambda_{lambda}")));
        let (model, best_epoch) =
            train_synthetic(spec, lambda, &train_vols, &val_vols, dir.as_deref())?;
        let r = rec_syn_scores(&model, &test, factor)?;
        log::info!("lambda {lambda}: {:?}", sweep_entry(lambda, best_epoch, &r));
        entries.push(sweep_entry(lambda, best_epoch, &r));
        for (g, row) in r.rows {
            rows.rows.push((format!("lambda={lambda}/{g}"), row));
        }
        models.push((lambda, model));
    }
    let report = summarize_sweep(factor, entries);
    if let Some(d) = &out {
        rows.write_csv(&d.join("metrics.csv"))?;
        write_json(&d.join("tests.json"), &report)?;
    }
    Ok((report, models))
}
