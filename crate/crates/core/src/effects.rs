//! Probability-scale effect summaries of a fitted model: average marginal
//! effects for every covariate and predicted-probability surfaces over
//! covariate pairs.
//!
//! Effects are discrete contrasts. Distance dummies are compared against the
//! reference class; similarity, prestige, and the continuous distance
//! covariate are moved from 0 to 1 on the normalized scale. The remaining
//! covariates are either held at their means or kept at each observed row
//! and averaged. Group intercepts enter every prediction at their mean.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::{FitResult, Layout};
use crate::pairs::{Dataset, PairRecord};
use crate::stats::{quantile_sorted, tree_reduce};

/// Where the non-contrasted covariates sit during a contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectMode {
    /// One contrast at the sample means (dummies at their class shares).
    AtMeans,
    /// Per-row contrasts averaged over the sample.
    SampleAveraged,
}

impl std::fmt::Display for EffectMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EffectMode::AtMeans => write!(f, "at_means"),
            EffectMode::SampleAveraged => write!(f, "sample_averaged"),
        }
    }
}

impl FromStr for EffectMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "at_means" | "at-means" => Ok(EffectMode::AtMeans),
            "sample_averaged" | "sample-averaged" => Ok(EffectMode::SampleAveraged),
            other => Err(Error::InvalidArgument(format!(
                "unknown effect mode {other:?}; expected at-means or sample-averaged"
            ))),
        }
    }
}

/// Row-resampling bootstrap request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub seed: u64,
}

/// One covariate's probability-scale effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub covariate: String,
    pub estimate: f64,
    /// 95% percentile bootstrap interval when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub interval: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmeResult {
    pub mode: EffectMode,
    pub effects: Vec<EffectEstimate>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bootstrap: Option<BootstrapSpec>,
}

/// Normalized covariate parts of one row: similarity, the distance block in
/// layout encoding, prestige.
#[derive(Debug, Clone)]
struct Parts {
    sim: f64,
    block: Vec<f64>,
    prestige: f64,
}

fn row_parts(layout: &Layout, fit: &FitResult, r: &PairRecord) -> Parts {
    Parts {
        sim: fit.norm.sim_norm(r),
        block: layout.distance_block_for_class(r.distance, &fit.norm),
        prestige: fit.norm.prestige_norm(r),
    }
}

fn mean_parts(layout: &Layout, rows: &[Parts]) -> Parts {
    let d = layout.distance_terms();
    let n = rows.len() as f64;
    let mut sim = 0.0;
    let mut block = vec![0.0; d];
    let mut prestige = 0.0;
    for p in rows {
        sim += p.sim;
        prestige += p.prestige;
        for (b, v) in block.iter_mut().zip(&p.block) {
            *b += v;
        }
    }
    for b in block.iter_mut() {
        *b /= n;
    }
    Parts {
        sim: sim / n,
        block,
        prestige: prestige / n,
    }
}

fn predict_parts(fit: &FitResult, layout: &Layout, parts: &Parts) -> Result<f64> {
    let row = layout.features_from_parts(parts.sim, &parts.block, parts.prestige)?;
    fit.predict_probability(&row, None)
}

/// The contrasted covariates, in reporting order: similarity, each distance
/// term, prestige.
fn covariate_names(layout: &Layout) -> Vec<String> {
    let mut names = vec!["similarity".to_string()];
    if layout.is_continuous() {
        names.push("distance".into());
    } else {
        names.extend((0..layout.distance_terms()).map(|j| format!("step{j}")));
    }
    names.push("prestige".into());
    names
}

/// (high, low) variants of `base` for the k-th reported covariate.
fn contrast_parts(layout: &Layout, base: &Parts, k: usize) -> (Parts, Parts) {
    let d = layout.distance_terms();
    let mut hi = base.clone();
    let mut lo = base.clone();
    if k == 0 {
        hi.sim = 1.0;
        lo.sim = 0.0;
    } else if k <= d {
        let term = k - 1;
        if layout.is_continuous() {
            hi.block[0] = 1.0;
            lo.block[0] = 0.0;
        } else {
            // Dummy contrast: this class against the reference, which has
            // every dummy at zero.
            hi.block = vec![0.0; d];
            hi.block[term] = 1.0;
            lo.block = vec![0.0; d];
        }
    } else {
        hi.prestige = 1.0;
        lo.prestige = 0.0;
    }
    (hi, lo)
}

fn contrast(fit: &FitResult, layout: &Layout, base: &Parts, k: usize) -> Result<f64> {
    let (hi, lo) = contrast_parts(layout, base, k);
    Ok(predict_parts(fit, layout, &hi)? - predict_parts(fit, layout, &lo)?)
}

fn mean_tree(values: &[f64]) -> f64 {
    let sums: Vec<f64> = values
        .par_chunks(8192)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    tree_reduce(sums, |a, b| a + b).unwrap_or(0.0) / values.len() as f64
}

/// Point estimates for every covariate given the precomputed per-row parts.
/// `per_row[k]` caches each row's contrast for sample averaging.
fn estimates(
    fit: &FitResult,
    layout: &Layout,
    mode: EffectMode,
    rows: &[Parts],
    per_row: Option<&[Vec<f64>]>,
) -> Result<Vec<f64>> {
    let names = covariate_names(layout);
    match mode {
        EffectMode::AtMeans => {
            let base = mean_parts(layout, rows);
            (0..names.len())
                .map(|k| contrast(fit, layout, &base, k))
                .collect()
        }
        EffectMode::SampleAveraged => {
            let cached = per_row.expect("per-row contrasts supplied for sample averaging");
            Ok(cached.iter().map(|c| mean_tree(c)).collect())
        }
    }
}

/// Probability-scale effect of each covariate under the chosen evaluation
/// mode, with an optional row-resampling bootstrap for intervals. The model
/// itself is not refitted.
pub fn marginal_effects(
    fit: &FitResult,
    dataset: &Dataset,
    mode: EffectMode,
    bootstrap: Option<BootstrapSpec>,
) -> Result<AmeResult> {
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(b) = bootstrap {
        if b.replicates < 2 {
            return Err(Error::InvalidArgument(
                "bootstrap needs at least 2 replicates".into(),
            ));
        }
    }
    let layout = fit.layout();
    let names = covariate_names(&layout);
    let rows: Vec<Parts> = dataset
        .records
        .iter()
        .map(|r| row_parts(&layout, fit, r))
        .collect();

    // Per-row contrasts, reused by the point estimate and every bootstrap
    // replicate under sample averaging.
    let per_row: Option<Vec<Vec<f64>>> = match mode {
        EffectMode::SampleAveraged => {
            let mut all = Vec::with_capacity(names.len());
            for k in 0..names.len() {
                let column: Result<Vec<f64>> = rows
                    .par_iter()
                    .map(|base| contrast(fit, &layout, base, k))
                    .collect();
                all.push(column?);
            }
            Some(all)
        }
        EffectMode::AtMeans => None,
    };

    let point = estimates(fit, &layout, mode, &rows, per_row.as_deref())?;

    let intervals: Option<Vec<(f64, f64)>> = match bootstrap {
        None => None,
        Some(b) => {
            let replicate_estimates: Result<Vec<Vec<f64>>> = (0..b.replicates)
                .into_par_iter()
                .map(|rep| {
                    let mut rng =
                        crate::rng::StreamRng::from_seed(b.seed, &format!("ame-bootstrap-{rep}"));
                    let n = rows.len();
                    let draw: Vec<usize> =
                        (0..n).map(|_| rng.next_below(n as u64) as usize).collect();
                    match mode {
                        EffectMode::SampleAveraged => {
                            let cached = per_row.as_deref().unwrap();
                            Ok(cached
                                .iter()
                                .map(|col| {
                                    let picked: Vec<f64> = draw.iter().map(|&i| col[i]).collect();
                                    mean_tree(&picked)
                                })
                                .collect())
                        }
                        EffectMode::AtMeans => {
                            let picked: Vec<Parts> =
                                draw.iter().map(|&i| rows[i].clone()).collect();
                            let base = mean_parts(&layout, &picked);
                            (0..names.len())
                                .map(|k| contrast(fit, &layout, &base, k))
                                .collect()
                        }
                    }
                })
                .collect();
            let replicate_estimates = replicate_estimates?;
            let per_covariate = (0..names.len())
                .map(|k| {
                    let mut vals: Vec<f64> = replicate_estimates.iter().map(|r| r[k]).collect();
                    vals.sort_by(f64::total_cmp);
                    (quantile_sorted(&vals, 0.025), quantile_sorted(&vals, 0.975))
                })
                .collect();
            Some(per_covariate)
        }
    };

    let effects = names
        .into_iter()
        .enumerate()
        .map(|(k, covariate)| EffectEstimate {
            covariate,
            estimate: point[k],
            interval: intervals.as_ref().map(|iv| iv[k]),
        })
        .collect();
    Ok(AmeResult {
        mode,
        effects,
        bootstrap,
    })
}

impl AmeResult {
    /// One row per covariate: `covariate,mode,estimate,lo,hi`, interval
    /// columns empty without a bootstrap.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write_with(path, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            let fmt_err = |e: csv::Error| Error::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            };
            w.write_record(["covariate", "mode", "estimate", "lo", "hi"])
                .map_err(fmt_err)?;
            for e in &self.effects {
                let (lo, hi) = match e.interval {
                    Some((lo, hi)) => (lo.to_string(), hi.to_string()),
                    None => (String::new(), String::new()),
                };
                w.write_record([
                    e.covariate.as_str(),
                    &self.mode.to_string(),
                    &e.estimate.to_string(),
                    &lo,
                    &hi,
                ])
                .map_err(fmt_err)?;
            }
            w.flush()
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            Ok(())
        })
    }
}

/// Quartile anchors of one grid axis, in lattice units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Predicted-probability surface over two covariates with all others at
/// their means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_name: String,
    pub y_name: String,
    pub x_values: Vec<f64>,
    pub y_values: Vec<f64>,
    /// Row-major: `cells[yi * x_values.len() + xi]`.
    pub cells: Vec<f64>,
    pub x_anchors: AnchorSet,
    pub y_anchors: AnchorSet,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Axis {
    Similarity,
    Distance,
    Prestige,
}

impl Axis {
    fn parse(name: &str) -> Result<Axis> {
        match name {
            "similarity" => Ok(Axis::Similarity),
            "distance" => Ok(Axis::Distance),
            "prestige" => Ok(Axis::Prestige),
            other => Err(Error::UnknownCovariate(other.to_owned())),
        }
    }
}

/// Observed per-row value of an axis variable in lattice units: normalized
/// similarity/prestige, the normalized distance for continuous layouts, or
/// the distance-class value folded at the reference for dummy layouts.
fn axis_value(layout: &Layout, fit: &FitResult, r: &PairRecord, axis: Axis) -> f64 {
    match axis {
        Axis::Similarity => fit.norm.sim_norm(r),
        Axis::Prestige => fit.norm.prestige_norm(r),
        Axis::Distance => {
            if layout.is_continuous() {
                fit.norm.distance_norm(r)
            } else {
                f64::from(r.distance.distance_value()).min(layout.distance_terms() as f64)
            }
        }
    }
}

fn axis_lattice(layout: &Layout, observed: &[f64], axis: Axis, resolution: usize) -> Vec<f64> {
    if axis == Axis::Distance && !layout.is_continuous() {
        // One level per dummy class plus the reference.
        return (0..=layout.distance_terms()).map(|v| v as f64).collect();
    }
    let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..resolution)
        .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
        .collect()
}

fn apply_axis(layout: &Layout, parts: &mut Parts, axis: Axis, value: f64) {
    match axis {
        Axis::Similarity => parts.sim = value,
        Axis::Prestige => parts.prestige = value,
        Axis::Distance => {
            if layout.is_continuous() {
                parts.block[0] = value;
            } else {
                let d = layout.distance_terms();
                parts.block = vec![0.0; d];
                let class = value as usize;
                if class < d {
                    parts.block[class] = 1.0;
                }
            }
        }
    }
}

fn anchors(observed: &mut [f64]) -> AnchorSet {
    observed.sort_by(f64::total_cmp);
    AnchorSet {
        q1: quantile_sorted(observed, 0.25),
        median: quantile_sorted(observed, 0.5),
        q3: quantile_sorted(observed, 0.75),
    }
}

/// Surface of predicted probabilities over `x` and `y` (one of `similarity`,
/// `distance`, `prestige`), spanning each variable's observed range with the
/// other covariates at their sample means. Anchors carry each axis
/// variable's quartiles for plot overlays.
pub fn prediction_grid(
    fit: &FitResult,
    dataset: &Dataset,
    x: &str,
    y: &str,
    resolution: usize,
) -> Result<Grid> {
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if resolution < 2 {
        return Err(Error::InvalidArgument(
            "grid resolution must be at least 2".into(),
        ));
    }
    let x_axis = Axis::parse(x)?;
    let y_axis = Axis::parse(y)?;
    if x_axis == y_axis {
        return Err(Error::InvalidArgument(format!(
            "grid axes must differ, both are {x:?}"
        )));
    }
    let layout = fit.layout();
    let rows: Vec<Parts> = dataset
        .records
        .iter()
        .map(|r| row_parts(&layout, fit, r))
        .collect();
    let base = mean_parts(&layout, &rows);

    let mut x_observed: Vec<f64> = dataset
        .records
        .iter()
        .map(|r| axis_value(&layout, fit, r, x_axis))
        .collect();
    let mut y_observed: Vec<f64> = dataset
        .records
        .iter()
        .map(|r| axis_value(&layout, fit, r, y_axis))
        .collect();
    let x_values = axis_lattice(&layout, &x_observed, x_axis, resolution);
    let y_values = axis_lattice(&layout, &y_observed, y_axis, resolution);

    let mut cells = Vec::with_capacity(x_values.len() * y_values.len());
    for &yv in &y_values {
        for &xv in &x_values {
            let mut parts = base.clone();
            apply_axis(&layout, &mut parts, x_axis, xv);
            apply_axis(&layout, &mut parts, y_axis, yv);
            cells.push(predict_parts(fit, &layout, &parts)?);
        }
    }

    Ok(Grid {
        x_name: x.to_owned(),
        y_name: y.to_owned(),
        x_values,
        y_values,
        cells,
        x_anchors: anchors(&mut x_observed),
        y_anchors: anchors(&mut y_observed),
    })
}

#[derive(Serialize, Deserialize)]
struct AnchorSidecar {
    x_name: String,
    y_name: String,
    x: AnchorSet,
    y: AnchorSet,
}

impl Grid {
    pub fn cell(&self, xi: usize, yi: usize) -> f64 {
        self.cells[yi * self.x_values.len() + xi]
    }

    /// One row per cell: `x_name,y_name,x,y,p`, y-major in lattice order.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write_with(path, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            let fmt_err = |e: csv::Error| Error::Format {
                path: path.display().to_string(),
                message: e.to_string(),
            };
            w.write_record(["x_name", "y_name", "x", "y", "p"])
                .map_err(fmt_err)?;
            for (yi, &yv) in self.y_values.iter().enumerate() {
                for (xi, &xv) in self.x_values.iter().enumerate() {
                    w.write_record([
                        self.x_name.as_str(),
                        self.y_name.as_str(),
                        &xv.to_string(),
                        &yv.to_string(),
                        &self.cell(xi, yi).to_string(),
                    ])
                    .map_err(fmt_err)?;
                }
            }
            w.flush()
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            Ok(())
        })
    }

    /// Quartile anchors of both axis variables as a JSON sidecar.
    pub fn write_anchors(&self, path: &Path) -> Result<()> {
        let sidecar = AnchorSidecar {
            x_name: self.x_name.clone(),
            y_name: self.y_name.clone(),
            x: self.x_anchors,
            y: self.y_anchors,
        };
        let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        fsutil::atomic_write(path, &json)
    }
}
