use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{psnr, ssim, vif_p, wilcoxon_one_sided, Alternative};
use crate::error::{AsiError, Result};
use crate::volume::{Image, Plane, Volume};

/// PSNR written to tables in place of `+∞`.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub method: String,
    pub plane: Plane,
    /// Whether the section is a synthesized (not original) slice.
    pub synthesized: bool,
    pub ssim: f64,
    /// `+∞` for identical images.
    pub psnr: f64,
    /// `None` when the section is too small or flat for VIF.
    pub vif: Option<f64>,
    pub mse: f64,
}

impl MetricRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "ssim" => Some(self.ssim),
            "psnr" => Some(self.psnr.min(PSNR_CAP_DB)),
            "vif" => self.vif,
            "mse" => Some(self.mse),
            _ => None,
        }
    }
}

pub fn metric_row(
    id: String,
    method: &str,
    plane: Plane,
    synthesized: bool,
    r: &Image<f32>,
    c: &Image<f32>,
) -> Result<MetricRow> {
    Ok(MetricRow {
        id,
        method: method.to_owned(),
        plane,
        synthesized,
        ssim: ssim(r, c)?,
        psnr: psnr(r, c, 1.0)?,
        vif: vif_p(r, c, 1.0).ok(),
        mse: r.mse(c)?,
    })
}

/// Indices of the synthesized slices in a `(Z−1)·K+1` upsampled stack.
pub fn synthesized_indices(depth: usize, factor: usize) -> Vec<usize> {
    (0..depth)
        .filter(|z| factor > 1 && z % factor != 0)
        .collect()
}

fn check_dims(reference: &Volume, candidate: &Volume) -> Result<()> {
    if reference.dims() != candidate.dims() {
        return Err(AsiError::Shape(format!(
            "reference {:?} vs candidate {:?}",
            reference.dims(),
            candidate.dims()
        )));
    }
    Ok(())
}

/// One row per section of `candidate` along `plane`. `synthesized` marks
/// axial slices that were generated (ignored for through-plane sections).
pub fn evaluate_volume(
    reference: &Volume,
    candidate: &Volume,
    plane: Plane,
    method: &str,
    synthesized: &[usize],
) -> Result<Vec<MetricRow>> {
    check_dims(reference, candidate)?;
    (0..reference.section_count(plane))
        .into_par_iter()
        .map(|i| {
            let syn = plane == Plane::Axial && synthesized.contains(&i);
            metric_row(
                format!("{plane}:{i}"),
                method,
                plane,
                syn,
                &reference.section(plane, i),
                &candidate.section(plane, i),
            )
        })
        .collect()
}

/// Axial rows restricted to the given slice indices.
pub fn evaluate_slices(
    reference: &Volume,
    candidate: &Volume,
    indices: &[usize],
    method: &str,
) -> Result<Vec<MetricRow>> {
    check_dims(reference, candidate)?;
    indices
        .par_iter()
        .map(|&z| {
            metric_row(
                format!("axial:{z}"),
                method,
                Plane::Axial,
                true,
                &reference.slice(z),
                &candidate.slice(z),
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub group: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub group: String,
    pub metric: String,
    pub method_a: String,
    pub method_b: String,
    /// `W+` of the differences `a − b` (for MSE, `b − a`, so that a small
    /// p-value always means "a is better").
    pub w_statistic: f64,
    pub p_value: f64,
    pub direction: Alternative,
    pub n: usize,
}

/// Per-item rows grouped by a free-form label (e.g. `K=2/syn`), with
/// aggregates and paired tests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<(String, MetricRow)>,
    pub aggregate: Vec<Aggregate>,
    pub comparisons: Vec<Comparison>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    group: &'a str,
    id: &'a str,
    method: &'a str,
    plane: Plane,
    synthesized: bool,
    ssim: f64,
    psnr: f64,
    psnr_capped: bool,
    vif: Option<f64>,
    mse: f64,
}

pub const METRICS: [&str; 4] = ["ssim", "psnr", "vif", "mse"];

impl MetricReport {
    pub fn push_rows(&mut self, group: &str, rows: impl IntoIterator<Item = MetricRow>) {
        self.rows
            .extend(rows.into_iter().map(|r| (group.to_owned(), r)));
    }

    pub fn rows_for<'a>(
        &'a self,
        group: &'a str,
        method: &'a str,
    ) -> impl Iterator<Item = &'a MetricRow> + 'a {
        self.rows
            .iter()
            .filter(move |(g, r)| g == group && r.method == method)
            .map(|(_, r)| r)
    }

    pub fn mean(&self, group: &str, method: &str, metric: &str) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows_for(group, method)
            .filter_map(|r| r.metric(metric))
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Recomputes mean ± sample std for every (group, method, metric).
    pub fn aggregate(&mut self) {
        let mut keys: Vec<(String, String)> = Vec::new();
        for (g, r) in &self.rows {
            let k = (g.clone(), r.method.clone());
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        self.aggregate.clear();
        for (g, m) in keys {
            for metric in METRICS {
                let vals: Vec<f64> = self
                    .rows_for(&g, &m)
                    .filter_map(|r| r.metric(metric))
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                let n = vals.len();
                let mean = vals.iter().sum::<f64>() / n as f64;
                let std = if n > 1 {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                self.aggregate.push(Aggregate {
                    group: g.clone(),
                    method: m.clone(),
                    metric: metric.into(),
                    mean,
                    std,
                    n,
                });
            }
        }
    }

    /// One-sided signed-rank test that `method_a` beats `method_b` on every
    /// metric of `group`, pairing rows by id.
    pub fn compare(&mut self, group: &str, method_a: &str, method_b: &str) -> Result<()> {
        for metric in METRICS {
            let mut diffs = Vec::new();
            for ra in self.rows_for(group, method_a) {
                let Some(rb) = self.rows_for(group, method_b).find(|r| r.id == ra.id) else {
                    return Err(AsiError::InvalidArgument(format!(
                        "row {} of {method_a} has no partner in {method_b}",
                        ra.id
                    )));
                };
                if let (Some(a), Some(b)) = (ra.metric(metric), rb.metric(metric)) {
                    diffs.push(if metric == "mse" { b - a } else { a - b });
                }
            }
            if diffs.is_empty() {
                continue;
            }
            let (w, p, n) = match wilcoxon_one_sided(&diffs, Alternative::Greater) {
                Ok(r) => (r.w_plus, r.p_value, r.n),
                Err(AsiError::UndefinedTest(_)) => (0.0, 1.0, 0),
                Err(e) => return Err(e),
            };
            self.comparisons.push(Comparison {
                group: group.into(),
                metric: metric.into(),
                method_a: method_a.into(),
                method_b: method_b.into(),
                w_statistic: w,
                p_value: p,
                direction: Alternative::Greater,
                n,
            });
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for (group, r) in &self.rows {
            w.serialize(CsvRow {
                group,
                id: &r.id,
                method: &r.method,
                plane: r.plane,
                synthesized: r.synthesized,
                ssim: r.ssim,
                psnr: r.psnr.min(PSNR_CAP_DB),
                psnr_capped: r.psnr > PSNR_CAP_DB,
                vif: r.vif,
                mse: r.mse,
            })
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| AsiError::io(path, e))
    }

    /// Aggregates and tests as JSON (rows are left to the CSV).
    pub fn write_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            aggregate: &'a [Aggregate],
            comparisons: &'a [Comparison],
        }
        let text = serde_json::to_string_pretty(&Summary {
            aggregate: &self.aggregate,
            comparisons: &self.comparisons,
        })
        .expect("summary serialises");
        fs::write(path, text).map_err(|e| AsiError::io(path, e))
    }
}

fn csv_err(path: &Path, e: csv::Error) -> AsiError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AsiError::io(path, io),
        other => AsiError::format(path, format!("{other:?}")),
    }
}
