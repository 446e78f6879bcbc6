//! Logistic model of citation-link formation: design layout over similarity,
//! distance terms, and prestige with optional interaction blocks; damped
//! Newton fitting with optional per-cited-article intercepts absorbed by
//! alternating profiling; evaluation metrics; and the cut-point sweep that
//! compares dummy granularities against a continuous-distance baseline.
//!
//! All likelihood accumulation runs over fixed-size row blocks combined by a
//! fixed-shape pairwise tree, so fits are bitwise reproducible at any thread
//! count.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::DistanceClass;
use crate::pairs::{Dataset, NormTransform, MAX_CUTPOINT};
use crate::stats::tree_reduce;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 100;
/// Separation guard: coefficients are capped at this magnitude on the
/// normalized scale and the fit is flagged.
pub const COEFFICIENT_CAP: f64 = 30.0;

/// Rows per accumulation block. Fixed so the reduction tree's shape depends
/// only on the row count.
const BLOCK: usize = 8192;

/// Model structure switches. The coefficient layout is a pure function of
/// this type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Number of distance dummies; classes at or beyond it fold into the
    /// reference. Ignored when `continuous_distance` is set.
    pub cutpoint: usize,
    /// Replace the dummy block with one normalized distance covariate.
    pub continuous_distance: bool,
    /// Include similarity x distance, similarity x prestige, and
    /// distance x prestige blocks.
    pub interactions: bool,
    /// Estimate one intercept per cited article.
    pub group_effects: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            cutpoint: MAX_CUTPOINT,
            continuous_distance: false,
            interactions: true,
            group_effects: false,
        }
    }
}

impl ModelSpec {
    pub fn layout(&self) -> Result<Layout> {
        Layout::from_spec(self)
    }
}

/// Coefficient order and design-row construction for a [`ModelSpec`]. The
/// intercept is position 0; feature rows exclude it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    names: Vec<String>,
    cutpoint: usize,
    continuous: bool,
    interactions: bool,
}

impl Layout {
    fn from_spec(spec: &ModelSpec) -> Result<Layout> {
        if !spec.continuous_distance && (spec.cutpoint < 1 || spec.cutpoint > MAX_CUTPOINT) {
            return Err(Error::InvalidArgument(format!(
                "cutpoint {} outside supported range 1..={MAX_CUTPOINT}",
                spec.cutpoint
            )));
        }
        let dist_names: Vec<String> = if spec.continuous_distance {
            vec!["distance".into()]
        } else {
            (0..spec.cutpoint).map(|j| format!("step{j}")).collect()
        };
        let mut names = vec!["beta0".to_string(), "similarity".to_string()];
        names.extend(dist_names.iter().cloned());
        names.push("prestige".into());
        if spec.interactions {
            names.extend(dist_names.iter().map(|d| format!("sim_x_{d}")));
            names.push("sim_x_prestige".into());
            names.extend(dist_names.iter().map(|d| format!("{d}_x_prestige")));
        }
        Ok(Layout {
            names,
            cutpoint: if spec.continuous_distance {
                0
            } else {
                spec.cutpoint
            },
            continuous: spec.continuous_distance,
            interactions: spec.interactions,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total coefficients including the intercept.
    pub fn coefficient_count(&self) -> usize {
        self.names.len()
    }

    /// Columns in the distance block: the dummy count, or 1 when continuous.
    pub fn distance_terms(&self) -> usize {
        if self.continuous {
            1
        } else {
            self.cutpoint
        }
    }

    pub fn is_continuous(&self) -> bool {
        self.continuous
    }

    /// Fills a feature row (without the intercept) in coefficient order from
    /// the similarity, the distance-block values, and the prestige covariate.
    fn fill(&self, out: &mut [f64], sim: f64, dist: &[f64], prestige: f64) {
        debug_assert_eq!(dist.len(), self.distance_terms());
        debug_assert_eq!(out.len(), self.coefficient_count() - 1);
        let d = dist.len();
        out[0] = sim;
        out[1..1 + d].copy_from_slice(dist);
        out[1 + d] = prestige;
        if self.interactions {
            let base = 2 + d;
            for j in 0..d {
                out[base + j] = sim * dist[j];
            }
            out[base + d] = sim * prestige;
            for j in 0..d {
                out[base + d + 1 + j] = dist[j] * prestige;
            }
        }
    }

    pub(crate) fn distance_block_for_class(
        &self,
        class: DistanceClass,
        norm: &NormTransform,
    ) -> Vec<f64> {
        if self.continuous {
            vec![norm.distance.normalize(f64::from(class.distance_value()))]
        } else {
            let mut block = vec![0.0; self.cutpoint];
            let idx = class.index();
            if idx < self.cutpoint {
                block[idx] = 1.0;
            }
            block
        }
    }

    /// Feature row for a distance class; classes at or beyond the cutpoint
    /// fall into the reference (all dummies zero). Continuous layouts map
    /// the class through its numeric value and the distance normalization.
    pub fn features_for_class(
        &self,
        sim: f64,
        class: DistanceClass,
        prestige: f64,
        norm: &NormTransform,
    ) -> Vec<f64> {
        let dist = self.distance_block_for_class(class, norm);
        let mut out = vec![0.0; self.coefficient_count() - 1];
        self.fill(&mut out, sim, &dist, prestige);
        out
    }

    /// Feature row from explicit covariate parts; the distance block length
    /// must match the layout. Accepts fractional dummy values, which is how
    /// covariates are held at their means.
    pub fn features_from_parts(
        &self,
        sim: f64,
        distance_block: &[f64],
        prestige: f64,
    ) -> Result<Vec<f64>> {
        if distance_block.len() != self.distance_terms() {
            return Err(Error::LayoutMismatch {
                fit: self.distance_terms(),
                row: distance_block.len(),
            });
        }
        let mut out = vec![0.0; self.coefficient_count() - 1];
        self.fill(&mut out, sim, distance_block, prestige);
        Ok(out)
    }

    /// Feature row for an arbitrary normalized distance value; continuous
    /// layouts only.
    pub fn features_for_distance_norm(
        &self,
        sim: f64,
        dist_norm: f64,
        prestige: f64,
    ) -> Result<Vec<f64>> {
        if !self.continuous {
            return Err(Error::InvalidArgument(
                "arbitrary distance values require the continuous-distance layout".into(),
            ));
        }
        let mut out = vec![0.0; self.coefficient_count() - 1];
        self.fill(&mut out, sim, &[dist_norm], prestige);
        Ok(out)
    }
}

/// Optional fitting knobs beyond the spec'd tolerance and iteration budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Ridge penalty on group intercepts. Zero keeps them unpenalized, which
    /// requires dropping single-label groups and recentres intercepts to
    /// mean zero.
    pub group_ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { group_ridge: 0.0 }
    }
}

/// Per-cited-article intercept block of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEffects {
    pub ridge: f64,
    /// Offset per cited document index.
    pub intercepts: HashMap<u32, f64>,
    /// Unweighted mean offset, used for unknown groups in prediction. Zero
    /// by construction when unpenalized.
    pub mean_intercept: f64,
    pub dropped_rows: usize,
    pub dropped_groups: usize,
}

/// Maximum-likelihood fit of the citation-link model.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub norm: NormTransform,
    /// Coefficients in layout order; position 0 is the intercept.
    pub beta: Vec<f64>,
    /// Standard errors from the inverse observed information, profile
    /// corrected when group effects are present.
    pub se: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Max-abs log-likelihood gradient at the reported coefficients, within
    /// the identified coefficient subspace (directions without curvature,
    /// such as covariates absorbed by group intercepts, are excluded).
    pub gradient_norm: f64,
    pub tolerance: f64,
    /// Set when the separation guard capped a coefficient.
    pub separated: bool,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Log-likelihood after each accepted update, starting at the initial
    /// point. Non-decreasing unless the separation cap intervened.
    pub ll_trace: Vec<f64>,
    pub group: Option<GroupEffects>,
}

impl FitResult {
    pub fn layout(&self) -> Layout {
        // The spec was validated when the fit was produced or loaded.
        Layout::from_spec(&self.spec).expect("fit carries a valid spec")
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        let layout = self.layout();
        layout
            .names()
            .iter()
            .position(|n| n == name)
            .map(|i| self.beta[i])
    }

    /// Intercept offset for a cited document; unknown documents and absent
    /// groups get the mean offset, zero when groups are disabled.
    pub fn group_offset(&self, doc: Option<u32>) -> f64 {
        match (&self.group, doc) {
            (Some(g), Some(d)) => g.intercepts.get(&d).copied().unwrap_or(g.mean_intercept),
            (Some(g), None) => g.mean_intercept,
            (None, _) => 0.0,
        }
    }

    /// Linear predictor for a feature row laid out as [`Layout`] minus the
    /// intercept.
    pub fn linear_predictor(&self, features: &[f64], group: Option<u32>) -> Result<f64> {
        if features.len() + 1 != self.beta.len() {
            return Err(Error::LayoutMismatch {
                fit: self.beta.len() - 1,
                row: features.len(),
            });
        }
        let mut eta = self.beta[0] + self.group_offset(group);
        for (x, b) in features.iter().zip(&self.beta[1..]) {
            eta += x * b;
        }
        Ok(eta)
    }

    pub fn predict_probability(&self, features: &[f64], group: Option<u32>) -> Result<f64> {
        Ok(sigmoid(self.linear_predictor(features, group)?))
    }
}

pub(crate) fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli log-likelihood term, stable across the whole linear-predictor
/// range: y*eta - log(1 + e^eta).
fn loglik_term(y: f64, eta: f64) -> f64 {
    y * eta - eta.max(0.0) - (-eta.abs()).exp().ln_1p()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

/// Dense design with labels; group bookkeeping present only when group
/// effects are fitted, with each group's rows contiguous.
struct Problem {
    /// Row-major n x p, column 0 all ones.
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
    /// Group index per row; empty when groups are disabled.
    group_of_row: Vec<u32>,
    /// Row range per group.
    group_ranges: Vec<(usize, usize)>,
    /// Cited document index per group.
    group_docs: Vec<u32>,
}

impl Problem {
    fn n(&self) -> usize {
        self.y.len()
    }
}

struct ProblemBuild {
    problem: Problem,
    n_pos: usize,
    n_neg: usize,
    dropped_rows: usize,
    dropped_groups: usize,
}

fn build_problem(
    dataset: &Dataset,
    layout: &Layout,
    group_effects: bool,
    ridge: f64,
) -> Result<ProblemBuild> {
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = layout.coefficient_count();

    let mut rows: Vec<usize> = (0..dataset.records.len()).collect();
    let mut group_of_row = Vec::new();
    let mut group_ranges = Vec::new();
    let mut group_docs = Vec::new();
    let mut dropped_rows = 0;
    let mut dropped_groups = 0;

    if group_effects {
        let mut label_mix: BTreeMap<u32, (bool, bool)> = BTreeMap::new();
        for r in &dataset.records {
            let e = label_mix.entry(r.group()).or_insert((false, false));
            if r.label == 1 {
                e.0 = true;
            } else {
                e.1 = true;
            }
        }
        // Unpenalized group intercepts diverge when a group carries one
        // label; drop those rows. A ridge penalty identifies them instead.
        let keep = |doc: u32| -> bool {
            if ridge > 0.0 {
                return true;
            }
            let &(pos, neg) = label_mix.get(&doc).unwrap();
            pos && neg
        };
        if ridge == 0.0 {
            dropped_groups = label_mix.values().filter(|&&(p, n)| !(p && n)).count();
        }
        let mut kept: Vec<usize> = rows
            .into_iter()
            .filter(|&i| {
                let ok = keep(dataset.records[i].group());
                if !ok {
                    dropped_rows += 1;
                }
                ok
            })
            .collect();
        if kept.is_empty() {
            return Err(Error::InvalidArgument(
                "no group contains both labels; use matched sampling".into(),
            ));
        }
        kept.sort_by_key(|&i| (dataset.records[i].group(), i));
        let mut doc_to_group: BTreeMap<u32, u32> = BTreeMap::new();
        for &i in &kept {
            let doc = dataset.records[i].group();
            let next = doc_to_group.len() as u32;
            let g = *doc_to_group.entry(doc).or_insert(next);
            group_of_row.push(g);
        }
        group_docs = doc_to_group.keys().copied().collect();
        let mut start = 0;
        for g in 0..group_docs.len() {
            let end = group_of_row.partition_point(|&x| x <= g as u32);
            group_ranges.push((start, end));
            start = end;
        }
        rows = kept;
        if dropped_rows > 0 {
            log::warn!("dropped {dropped_rows} rows in {dropped_groups} single-label groups");
        }
    }

    let n = rows.len();
    let mut x = vec![0.0; n * p];
    let mut y = vec![0.0; n];
    let mut n_pos = 0;
    for (slot, &i) in rows.iter().enumerate() {
        let r = &dataset.records[i];
        let row = &mut x[slot * p..(slot + 1) * p];
        row[0] = 1.0;
        let dist = layout.distance_block_for_class(r.distance, &dataset.norm);
        layout.fill(
            &mut row[1..],
            dataset.norm.sim_norm(r),
            &dist,
            dataset.norm.prestige_norm(r),
        );
        y[slot] = f64::from(r.label);
        n_pos += usize::from(r.label == 1);
    }

    Ok(ProblemBuild {
        problem: Problem {
            x,
            y,
            p,
            group_of_row,
            group_ranges,
            group_docs,
        },
        n_pos,
        n_neg: n - n_pos,
        dropped_rows,
        dropped_groups,
    })
}

struct Partial {
    ll: f64,
    grad: Vec<f64>,
    /// Lower triangle of X'WX, packed row by row.
    hess: Vec<f64>,
}

fn eval_block(x: &[f64], y: &[f64], offsets: Option<&[f64]>, p: usize, beta: &[f64]) -> Partial {
    let mut ll = 0.0;
    let mut grad = vec![0.0; p];
    let mut hess = vec![0.0; p * (p + 1) / 2];
    for (i, &yi) in y.iter().enumerate() {
        let row = &x[i * p..(i + 1) * p];
        let mut eta = offsets.map_or(0.0, |o| o[i]);
        for (xv, b) in row.iter().zip(beta) {
            eta += xv * b;
        }
        ll += loglik_term(yi, eta);
        let prob = sigmoid(eta);
        let resid = yi - prob;
        let w = prob * (1.0 - prob);
        let mut idx = 0;
        for (j, &xj) in row.iter().enumerate() {
            grad[j] += xj * resid;
            let wxj = w * xj;
            for &xk in &row[..=j] {
                hess[idx] += wxj * xk;
                idx += 1;
            }
        }
    }
    Partial { ll, grad, hess }
}

/// Log-likelihood, gradient, and packed Hessian of the data likelihood at
/// `beta` given fixed per-row offsets.
fn eval_full(
    problem: &Problem,
    beta: &[f64],
    offsets: Option<&[f64]>,
) -> (f64, Vec<f64>, Vec<f64>) {
    let p = problem.p;
    let blocks: Vec<Partial> = problem
        .y
        .par_chunks(BLOCK)
        .enumerate()
        .map(|(bi, yb)| {
            let start = bi * BLOCK;
            let xs = &problem.x[start * p..(start + yb.len()) * p];
            let os = offsets.map(|o| &o[start..start + yb.len()]);
            eval_block(xs, yb, os, p, beta)
        })
        .collect();
    let total = tree_reduce(blocks, |mut a, b| {
        a.ll += b.ll;
        for (ga, gb) in a.grad.iter_mut().zip(&b.grad) {
            *ga += gb;
        }
        for (ha, hb) in a.hess.iter_mut().zip(&b.hess) {
            *ha += hb;
        }
        a
    })
    .expect("problem has rows");
    (total.ll, total.grad, total.hess)
}

fn loglik_at(problem: &Problem, beta: &[f64], offsets: Option<&[f64]>) -> f64 {
    let p = problem.p;
    let blocks: Vec<f64> = problem
        .y
        .par_chunks(BLOCK)
        .enumerate()
        .map(|(bi, yb)| {
            let start = bi * BLOCK;
            let xs = &problem.x[start * p..(start + yb.len()) * p];
            let mut ll = 0.0;
            for (i, &yi) in yb.iter().enumerate() {
                let row = &xs[i * p..(i + 1) * p];
                let mut eta = offsets.map_or(0.0, |o| o[start + i]);
                for (xv, b) in row.iter().zip(beta) {
                    eta += xv * b;
                }
                ll += loglik_term(yi, eta);
            }
            ll
        })
        .collect();
    tree_reduce(blocks, |a, b| a + b).expect("problem has rows")
}

fn unpack_symmetric(packed: &[f64], p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    let mut idx = 0;
    for j in 0..p {
        for k in 0..=j {
            m[(j, k)] = packed[idx];
            m[(k, j)] = packed[idx];
            idx += 1;
        }
    }
    m
}

/// Eigen-truncated view of the observed information. Directions with
/// near-zero curvature are unidentified (all-zero columns; covariates
/// absorbed by group intercepts, such as the global intercept and any
/// cited-article-level covariate under unpenalized group effects): the
/// Newton step and the convergence test are restricted to the identified
/// subspace, and unidentified coefficients keep their current value with a
/// large variance bound.
struct NewtonSystem {
    vals: DVector<f64>,
    vecs: DMatrix<f64>,
    floor: f64,
}

impl NewtonSystem {
    fn new(packed: &[f64], p: usize) -> NewtonSystem {
        let eig = nalgebra::SymmetricEigen::new(unpack_symmetric(packed, p));
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        NewtonSystem {
            vals: eig.eigenvalues,
            vecs: eig.eigenvectors,
            floor: (top * 1e-10).max(f64::MIN_POSITIVE),
        }
    }

    fn spectral_coords(&self, grad: &[f64]) -> DVector<f64> {
        self.vecs.tr_mul(&DVector::from_column_slice(grad))
    }

    /// Ascent step within the identified subspace.
    fn step(&self, grad: &[f64]) -> DVector<f64> {
        let mut coords = self.spectral_coords(grad);
        for (c, &v) in coords.iter_mut().zip(self.vals.iter()) {
            *c = if v > self.floor { *c / v } else { 0.0 };
        }
        &self.vecs * coords
    }

    /// Max-abs gradient after projecting out unidentified directions.
    fn projected_max_abs(&self, grad: &[f64]) -> f64 {
        let mut coords = self.spectral_coords(grad);
        for (c, &v) in coords.iter_mut().zip(self.vals.iter()) {
            if v <= self.floor {
                *c = 0.0;
            }
        }
        max_abs((&self.vecs * coords).as_slice())
    }

    /// Square roots of the inverse-information diagonal, with truncated
    /// eigenvalues raised to the floor so unidentified coefficients report a
    /// conservatively large uncertainty instead of a spurious zero.
    fn standard_errors(&self) -> Vec<f64> {
        let p = self.vals.len();
        (0..p)
            .map(|j| {
                (0..p)
                    .map(|k| {
                        let q = self.vecs[(j, k)];
                        q * q / self.vals[k].max(self.floor)
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

fn clamp_cap(beta: &mut [f64]) -> bool {
    let mut hit = false;
    for b in beta {
        if b.abs() > COEFFICIENT_CAP {
            *b = b.clamp(-COEFFICIENT_CAP, COEFFICIENT_CAP);
            hit = true;
        }
    }
    hit
}

/// One-dimensional Newton ascent of each group's intercept with the fixed
/// part of the linear predictor held constant. Deterministic: groups are
/// independent and each is scanned in row order.
fn profile_groups(problem: &Problem, xb: &[f64], u: &mut [f64], ridge: f64, tol: f64) -> f64 {
    let grads: Vec<f64> = u
        .par_iter_mut()
        .enumerate()
        .map(|(g, ug)| {
            let (start, end) = problem.group_ranges[g];
            let mut grad = 0.0;
            for _ in 0..50 {
                grad = -ridge * *ug;
                let mut curv = ridge;
                for (&xbi, &yi) in xb[start..end].iter().zip(&problem.y[start..end]) {
                    let prob = sigmoid(xbi + *ug);
                    grad += yi - prob;
                    curv += prob * (1.0 - prob);
                }
                if grad.abs() <= tol {
                    break;
                }
                let step = (grad / curv.max(1e-12)).clamp(-4.0, 4.0);
                *ug = (*ug + step).clamp(-COEFFICIENT_CAP, COEFFICIENT_CAP);
            }
            grad.abs()
        })
        .collect();
    grads.into_iter().fold(0.0f64, f64::max)
}

fn fixed_part(problem: &Problem, beta: &[f64]) -> Vec<f64> {
    let p = problem.p;
    problem
        .y
        .par_chunks(BLOCK)
        .enumerate()
        .flat_map_iter(|(bi, yb)| {
            let start = bi * BLOCK;
            (0..yb.len()).map(move |i| {
                let row = &problem.x[(start + i) * p..(start + i + 1) * p];
                row.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>()
            })
        })
        .collect()
}

fn offsets_per_row(problem: &Problem, u: &[f64]) -> Vec<f64> {
    problem
        .group_of_row
        .iter()
        .map(|&g| u[g as usize])
        .collect()
}

/// Subtracts the group block's Schur complement from the packed fixed-effect
/// Hessian, turning it into the profile-likelihood observed information.
fn apply_group_schur(problem: &Problem, beta: &[f64], u: &[f64], ridge: f64, hess: &mut [f64]) {
    let p = problem.p;
    let per_group: Vec<(Vec<f64>, f64)> = (0..problem.group_ranges.len())
        .into_par_iter()
        .map(|g| {
            let (start, end) = problem.group_ranges[g];
            let mut v = vec![0.0; p];
            let mut s = 0.0;
            for i in start..end {
                let row = &problem.x[i * p..(i + 1) * p];
                let mut eta = u[g];
                for (x, b) in row.iter().zip(beta) {
                    eta += x * b;
                }
                let prob = sigmoid(eta);
                let w = prob * (1.0 - prob);
                s += w;
                for (vj, &xj) in v.iter_mut().zip(row) {
                    *vj += w * xj;
                }
            }
            (v, s)
        })
        .collect();
    for (v, s) in per_group {
        let denom = s + ridge;
        if denom < 1e-12 {
            continue;
        }
        let mut idx = 0;
        for j in 0..p {
            for k in 0..=j {
                hess[idx] -= v[j] * v[k] / denom;
                idx += 1;
            }
        }
    }
}

/// Fits by damped Newton with step-halving, default options.
pub fn fit_logistic(
    dataset: &Dataset,
    spec: &ModelSpec,
    tol: f64,
    max_iter: usize,
) -> Result<FitResult> {
    fit_logistic_with(dataset, spec, tol, max_iter, FitOptions::default())
}

pub fn fit_logistic_with(
    dataset: &Dataset,
    spec: &ModelSpec,
    tol: f64,
    max_iter: usize,
    options: FitOptions,
) -> Result<FitResult> {
    if tol <= 0.0 || tol.is_nan() || max_iter == 0 {
        return Err(Error::InvalidArgument(
            "tolerance must be positive and iteration budget nonzero".into(),
        ));
    }
    if options.group_ridge < 0.0 {
        return Err(Error::InvalidArgument(
            "group ridge must be non-negative".into(),
        ));
    }
    let layout = spec.layout()?;
    let build = build_problem(dataset, &layout, spec.group_effects, options.group_ridge)?;
    let problem = &build.problem;
    let p = problem.p;
    let groups = spec.group_effects;
    let ridge = options.group_ridge;

    let mut beta = vec![0.0; p];
    let mut u = vec![0.0; problem.group_ranges.len()];
    let mut separated = false;
    let mut iterations = 0;
    let mut converged = false;
    let mut ll_trace = Vec::new();
    let mut u_grad = 0.0;
    // Each group intercept is profiled far below the outer tolerance so that
    // residual group gradients cannot leak into unidentified fixed-effect
    // directions above it.
    let inner_tol = (tol * 1e-3).min(1e-10);

    if groups {
        let xb = fixed_part(problem, &beta);
        u_grad = profile_groups(problem, &xb, &mut u, ridge, inner_tol);
        if ridge == 0.0 {
            recenter(&mut u, &mut beta);
        }
    }

    let (mut ll, mut grad, mut hess) = {
        let offs = groups.then(|| offsets_per_row(problem, &u));
        let (ll, grad, mut hess) = eval_full(problem, &beta, offs.as_deref());
        if groups {
            apply_group_schur(problem, &beta, &u, ridge, &mut hess);
        }
        (ll, grad, hess)
    };
    ll_trace.push(ll);

    let mut system = NewtonSystem::new(&hess, p);
    let mut gradient_norm = system.projected_max_abs(&grad);
    loop {
        if gradient_norm.max(u_grad) <= tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let delta = system.step(&grad);

        // Objective differences smaller than this are rounding noise.
        let resolution = 1e-12 * (1.0 + ll.abs());
        let quad_gain = 0.5
            * grad
                .iter()
                .zip(delta.iter())
                .map(|(g, d)| g * d)
                .sum::<f64>();
        let candidate_at = |step: f64| -> (Vec<f64>, bool) {
            let mut cand: Vec<f64> = beta
                .iter()
                .zip(delta.iter())
                .map(|(b, d)| b + step * d)
                .collect();
            let hit = clamp_cap(&mut cand);
            (cand, hit)
        };
        let accepted = if quad_gain <= resolution {
            // The expected gain is below what the likelihood can resolve:
            // take the undamped Newton step, which contracts near the
            // optimum, instead of stalling in the line search.
            Some(candidate_at(1.0))
        } else {
            // Projected step-halving: candidates are capped before
            // evaluation so the guard and the search agree on what was
            // tried.
            let offs = groups.then(|| offsets_per_row(problem, &u));
            let mut step = 1.0;
            let mut found = None;
            while step >= 2f64.powi(-30) {
                let (cand, hit) = candidate_at(step);
                let cll = loglik_at(problem, &cand, offs.as_deref());
                if cll > ll - resolution {
                    found = Some((cand, hit));
                    break;
                }
                step *= 0.5;
            }
            found
        };
        let Some((next, hit)) = accepted else {
            // No ascent direction at floating-point resolution.
            break;
        };
        separated |= hit;
        if hit {
            log::warn!("separation guard capped a coefficient at {COEFFICIENT_CAP}");
        }
        beta = next;

        if groups {
            let xb = fixed_part(problem, &beta);
            u_grad = profile_groups(problem, &xb, &mut u, ridge, inner_tol);
            if ridge == 0.0 {
                recenter(&mut u, &mut beta);
            }
        }
        let offs = groups.then(|| offsets_per_row(problem, &u));
        let (nll, ngrad, mut nhess) = eval_full(problem, &beta, offs.as_deref());
        if groups {
            apply_group_schur(problem, &beta, &u, ridge, &mut nhess);
        }
        ll = nll;
        grad = ngrad;
        hess = nhess;
        ll_trace.push(ll);
        system = NewtonSystem::new(&hess, p);
        gradient_norm = system.projected_max_abs(&grad);
    }

    if !converged {
        log::warn!(
            "fit stopped after {iterations} iterations with max-abs gradient {gradient_norm:.3e}"
        );
    }

    // Standard errors from the (profile) observed information at the optimum.
    let se = system.standard_errors();

    let group = groups.then(|| {
        let intercepts: HashMap<u32, f64> = problem
            .group_docs
            .iter()
            .copied()
            .zip(u.iter().copied())
            .collect();
        let mean_intercept = if u.is_empty() {
            0.0
        } else {
            u.iter().sum::<f64>() / u.len() as f64
        };
        GroupEffects {
            ridge,
            intercepts,
            mean_intercept,
            dropped_rows: build.dropped_rows,
            dropped_groups: build.dropped_groups,
        }
    });

    Ok(FitResult {
        spec: *spec,
        norm: dataset.norm,
        beta,
        se,
        loglik: ll,
        iterations,
        converged,
        gradient_norm: gradient_norm.max(u_grad),
        tolerance: tol,
        separated,
        n: problem.n(),
        n_pos: build.n_pos,
        n_neg: build.n_neg,
        ll_trace,
        group,
    })
}

/// Shifts the mean group intercept into the global intercept. The
/// unpenalized likelihood is invariant to this reparameterization.
fn recenter(u: &mut [f64], beta: &mut [f64]) {
    if u.is_empty() {
        return;
    }
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    for ug in u.iter_mut() {
        *ug -= mean;
    }
    beta[0] += mean;
}

/// Data log-likelihood and its gradient at an arbitrary coefficient vector,
/// for derivative checks against finite differences.
pub fn log_likelihood_and_gradient(
    dataset: &Dataset,
    spec: &ModelSpec,
    beta: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let layout = spec.layout()?;
    let build = build_problem(dataset, &layout, false, 0.0)?;
    if beta.len() != build.problem.p {
        return Err(Error::LayoutMismatch {
            fit: build.problem.p,
            row: beta.len(),
        });
    }
    let (ll, grad, _) = eval_full(&build.problem, beta, None);
    Ok((ll, grad))
}

/// Fit quality on a labelled dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean negative log-likelihood per row.
    pub logloss: f64,
    /// Midrank-tie concordance statistic; absent on single-class data.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub auc: Option<f64>,
    pub n: usize,
}

/// Concordance of scores with binary labels, ties counted at half weight via
/// midranks. `None` when a class is empty.
pub fn auc_midrank(scores: &[f64], labels: &[u8]) -> Option<f64> {
    debug_assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a run of ties shares the mean rank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            if labels[k] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    Some((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// In-sample or held-out metrics for a fit; rows are featurized with the
/// fit's own normalization so train and test enter the model identically.
pub fn evaluate(fit: &FitResult, dataset: &Dataset) -> Result<Metrics> {
    if dataset.records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let layout = fit.layout();
    let p = layout.coefficient_count();
    let rows: Vec<(f64, u8)> = dataset
        .records
        .par_chunks(BLOCK)
        .flat_map_iter(|chunk| {
            chunk.iter().map(|r| {
                let mut row = vec![0.0; p - 1];
                let dist = layout.distance_block_for_class(r.distance, &fit.norm);
                layout.fill(
                    &mut row,
                    fit.norm.sim_norm(r),
                    &dist,
                    fit.norm.prestige_norm(r),
                );
                let mut eta = fit.beta[0] + fit.group_offset(Some(r.group()));
                for (x, b) in row.iter().zip(&fit.beta[1..]) {
                    eta += x * b;
                }
                (eta, r.label)
            })
        })
        .collect();
    let block_lls: Vec<f64> = rows
        .par_chunks(BLOCK)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&(eta, label)| loglik_term(f64::from(label), eta))
                .sum::<f64>()
        })
        .collect();
    let total_ll = tree_reduce(block_lls, |a, b| a + b).expect("dataset non-empty");
    let scores: Vec<f64> = rows.iter().map(|&(eta, _)| eta).collect();
    let labels: Vec<u8> = rows.iter().map(|&(_, l)| l).collect();
    Ok(Metrics {
        logloss: -total_ll / rows.len() as f64,
        auc: auc_midrank(&scores, &labels),
        n: rows.len(),
    })
}

/// One model in the cut-point sweep: a dummy granularity or the
/// continuous-distance baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cutpoint", rename_all = "snake_case")]
pub enum SweepModel {
    Cutpoint(usize),
    Continuous,
}

impl std::fmt::Display for SweepModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepModel::Cutpoint(c) => write!(f, "cutpoint_{c}"),
            SweepModel::Continuous => write!(f, "continuous"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepFit {
    pub loglik: f64,
    pub converged: bool,
    pub coefficients: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: SweepModel,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit: Option<SweepFit>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Fits one model per requested cut-point, plus optionally the
/// continuous-distance baseline on the full-granularity dataset. A failing
/// row records its error and the sweep continues.
pub fn cutpoint_sweep(
    builder: &mut dyn FnMut(usize) -> Result<Dataset>,
    cutpoints: &[usize],
    include_continuous: bool,
    base: &ModelSpec,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<SweepRow>> {
    if cutpoints.is_empty() && !include_continuous {
        return Err(Error::InvalidArgument("sweep has no models to fit".into()));
    }
    let mut rows = Vec::new();
    let mut run = |model: SweepModel, builder: &mut dyn FnMut(usize) -> Result<Dataset>| {
        let (cutpoint, continuous) = match model {
            SweepModel::Cutpoint(c) => (c, false),
            SweepModel::Continuous => (MAX_CUTPOINT, true),
        };
        let spec = ModelSpec {
            cutpoint,
            continuous_distance: continuous,
            ..*base
        };
        let outcome = builder(cutpoint).and_then(|dataset| {
            let fit = fit_logistic(&dataset, &spec, tol, max_iter)?;
            let metrics = evaluate(&fit, &dataset)?;
            Ok(SweepFit {
                loglik: fit.loglik,
                converged: fit.converged,
                coefficients: fit.beta.len(),
                metrics,
            })
        });
        match outcome {
            Ok(fit) => rows.push(SweepRow {
                model,
                fit: Some(fit),
                error: None,
            }),
            Err(e) => {
                log::warn!("sweep model {model} failed: {e}");
                rows.push(SweepRow {
                    model,
                    fit: None,
                    error: Some(e.to_string()),
                });
            }
        }
    };
    for &c in cutpoints {
        run(SweepModel::Cutpoint(c), builder);
    }
    if include_continuous {
        run(SweepModel::Continuous, builder);
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct CoefficientDump {
    estimate: f64,
    se: f64,
}

#[derive(Serialize, Deserialize)]
struct GroupDump {
    ridge: f64,
    mean_intercept: f64,
    dropped_rows: usize,
    dropped_groups: usize,
    intercepts: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct FitDump {
    spec: ModelSpec,
    coefficients: BTreeMap<String, CoefficientDump>,
    loglik: f64,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
    tolerance: f64,
    separated: bool,
    n: usize,
    n_pos: usize,
    n_neg: usize,
    norm: NormTransform,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    group: Option<GroupDump>,
}

impl FitResult {
    /// Dumps the fit as JSON with coefficients keyed by layout name and group
    /// intercepts keyed by cited document id.
    pub fn write_file(&self, corpus: &Corpus, path: &Path) -> Result<()> {
        let layout = self.layout();
        let coefficients: BTreeMap<String, CoefficientDump> = layout
            .names()
            .iter()
            .enumerate()
            .map(|(i, name)| {
                (
                    name.clone(),
                    CoefficientDump {
                        estimate: self.beta[i],
                        se: self.se[i],
                    },
                )
            })
            .collect();
        let group = self.group.as_ref().map(|g| GroupDump {
            ridge: g.ridge,
            mean_intercept: g.mean_intercept,
            dropped_rows: g.dropped_rows,
            dropped_groups: g.dropped_groups,
            intercepts: g
                .intercepts
                .iter()
                .map(|(&doc, &off)| (corpus.doc_id(doc).to_owned(), off))
                .collect(),
        });
        let dump = FitDump {
            spec: self.spec,
            coefficients,
            loglik: self.loglik,
            iterations: self.iterations,
            converged: self.converged,
            gradient_norm: self.gradient_norm,
            tolerance: self.tolerance,
            separated: self.separated,
            n: self.n,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
            norm: self.norm,
            group,
        };
        let json = serde_json::to_vec_pretty(&dump).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        fsutil::atomic_write(path, &json)
    }

    /// Reloads a dumped fit. The coefficient vector is rebuilt in layout
    /// order from the named map; the trace is not persisted.
    pub fn load_file(corpus: &Corpus, path: &Path) -> Result<FitResult> {
        let bad = |message: String| Error::Format {
            path: path.display().to_string(),
            message,
        };
        let dump: FitDump =
            serde_json::from_slice(&fsutil::read_bytes(path)?).map_err(|e| bad(e.to_string()))?;
        let layout = dump.spec.layout()?;
        if dump.coefficients.len() != layout.coefficient_count() {
            return Err(bad(format!(
                "expected {} coefficients, found {}",
                layout.coefficient_count(),
                dump.coefficients.len()
            )));
        }
        let mut beta = Vec::with_capacity(layout.coefficient_count());
        let mut se = Vec::with_capacity(layout.coefficient_count());
        for name in layout.names() {
            let c = dump
                .coefficients
                .get(name)
                .ok_or_else(|| bad(format!("missing coefficient {name:?}")))?;
            beta.push(c.estimate);
            se.push(c.se);
        }
        let group = match dump.group {
            None => None,
            Some(g) => {
                let mut intercepts = HashMap::with_capacity(g.intercepts.len());
                for (id, off) in &g.intercepts {
                    let doc = corpus
                        .doc_index(id)
                        .ok_or_else(|| Error::UnknownDocument(id.clone()))?;
                    intercepts.insert(doc, *off);
                }
                Some(GroupEffects {
                    ridge: g.ridge,
                    intercepts,
                    mean_intercept: g.mean_intercept,
                    dropped_rows: g.dropped_rows,
                    dropped_groups: g.dropped_groups,
                })
            }
        };
        Ok(FitResult {
            spec: dump.spec,
            norm: dump.norm,
            beta,
            se,
            loglik: dump.loglik,
            iterations: dump.iterations,
            converged: dump.converged,
            gradient_norm: dump.gradient_norm,
            tolerance: dump.tolerance,
            separated: dump.separated,
            n: dump.n,
            n_pos: dump.n_pos,
            n_neg: dump.n_neg,
            ll_trace: vec![dump.loglik],
            group,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::DISTANCE_CLASSES;
    use crate::pairs::{assemble_dataset_with, PairRecord, Range};
    use crate::rng::StreamRng;
    use approx::assert_relative_eq;

    /// Normalization that leaves fabricated covariates untouched: similarity
    /// and prestige already in 0..1 (prestige stored as parts per thousand),
    /// distance on its native 0..6 scale.
    fn unit_norm() -> NormTransform {
        NormTransform {
            similarity: Range { min: 0.0, max: 1.0 },
            prestige: Range {
                min: 0.0,
                max: 1000.0,
            },
            distance: Range { min: 0.0, max: 6.0 },
        }
    }

    /// Fabricates a dataset of `n` rows from a known coefficient vector under
    /// `spec`, returning it with the exact generating beta.
    fn planted_dataset(n: usize, spec: &ModelSpec, beta: &[f64], seed: u64) -> Dataset {
        let layout = spec.layout().unwrap();
        assert_eq!(beta.len(), layout.coefficient_count());
        let norm = unit_norm();
        let mut rng = StreamRng::from_seed(seed, "planted");
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let sim = rng.next_f64();
            let prestige = rng.next_below(1001);
            let class = DISTANCE_CLASSES[rng.next_below(7) as usize];
            let features = layout.features_for_class(sim, class, prestige as f64 / 1000.0, &norm);
            let eta = beta[0]
                + features
                    .iter()
                    .zip(&beta[1..])
                    .map(|(x, b)| x * b)
                    .sum::<f64>();
            let label = u8::from(rng.next_f64() < sigmoid(eta));
            records.push(PairRecord {
                citing: i as u32,
                cited: (i % 97) as u32,
                label,
                distance: class,
                // Raw similarity equals the normalized value under unit_norm.
                similarity: sim,
                prestige_raw: prestige,
            });
        }
        assemble_dataset_with(records, Vec::new(), 6, None, Some(norm)).unwrap()
    }

    #[test]
    fn layout_names_follow_coefficient_order() {
        let full = ModelSpec::default().layout().unwrap();
        let expected: Vec<&str> = vec![
            "beta0",
            "similarity",
            "step0",
            "step1",
            "step2",
            "step3",
            "step4",
            "step5",
            "prestige",
            "sim_x_step0",
            "sim_x_step1",
            "sim_x_step2",
            "sim_x_step3",
            "sim_x_step4",
            "sim_x_step5",
            "sim_x_prestige",
            "step0_x_prestige",
            "step1_x_prestige",
            "step2_x_prestige",
            "step3_x_prestige",
            "step4_x_prestige",
            "step5_x_prestige",
        ];
        assert_eq!(full.names(), expected.as_slice());
        assert_eq!(full.coefficient_count(), 22);

        let cont = ModelSpec {
            continuous_distance: true,
            ..ModelSpec::default()
        }
        .layout()
        .unwrap();
        assert_eq!(
            cont.names(),
            [
                "beta0",
                "similarity",
                "distance",
                "prestige",
                "sim_x_distance",
                "sim_x_prestige",
                "distance_x_prestige"
            ]
        );

        let plain = ModelSpec {
            cutpoint: 3,
            interactions: false,
            ..ModelSpec::default()
        }
        .layout()
        .unwrap();
        assert_eq!(
            plain.names(),
            ["beta0", "similarity", "step0", "step1", "step2", "prestige"]
        );

        assert!(ModelSpec {
            cutpoint: 0,
            ..ModelSpec::default()
        }
        .layout()
        .is_err());
        assert!(ModelSpec {
            cutpoint: 7,
            ..ModelSpec::default()
        }
        .layout()
        .is_err());
    }

    #[test]
    fn reference_class_row_is_all_zeros() {
        let layout = ModelSpec::default().layout().unwrap();
        let row = layout.features_for_class(0.0, DistanceClass::SixPlus, 0.0, &unit_norm());
        assert!(row.iter().all(|&x| x == 0.0));
        // Classes at or beyond a smaller cutpoint fold into the reference.
        let small = ModelSpec {
            cutpoint: 2,
            ..ModelSpec::default()
        }
        .layout()
        .unwrap();
        let folded = small.features_for_class(0.0, DistanceClass::D4, 0.0, &unit_norm());
        assert!(folded.iter().all(|&x| x == 0.0));
        let step1 = small.features_for_class(0.0, DistanceClass::D1, 0.0, &unit_norm());
        assert_eq!(step1[1..3], [0.0, 1.0]);
    }

    #[test]
    fn continuous_layout_maps_distance_through_normalization() {
        let layout = ModelSpec {
            continuous_distance: true,
            ..ModelSpec::default()
        }
        .layout()
        .unwrap();
        let row = layout.features_for_class(0.5, DistanceClass::D3, 0.2, &unit_norm());
        assert_relative_eq!(row[1], 0.5); // 3 / 6
        let row = layout.features_for_class(0.5, DistanceClass::SixPlus, 0.2, &unit_norm());
        assert_relative_eq!(row[1], 1.0);
        // Interactions multiply through.
        assert_relative_eq!(row[3], 0.5 * 1.0); // sim x distance
        assert_relative_eq!(row[4], 0.5 * 0.2); // sim x prestige
        assert_relative_eq!(row[5], 1.0 * 0.2); // distance x prestige

        let dummy = ModelSpec::default().layout().unwrap();
        assert!(dummy.features_for_distance_norm(0.5, 0.3, 0.2).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let spec = ModelSpec::default();
        let dataset = planted_dataset(400, &spec, &[0.1; 22], 5);
        let mut rng = StreamRng::from_seed(17, "beta-draws");
        for _ in 0..5 {
            let beta: Vec<f64> = (0..22).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let (_, grad) = log_likelihood_and_gradient(&dataset, &spec, &beta).unwrap();
            let h = 1e-5;
            for j in 0..beta.len() {
                let mut hi = beta.clone();
                hi[j] += h;
                let mut lo = beta.clone();
                lo[j] -= h;
                let (ll_hi, _) = log_likelihood_and_gradient(&dataset, &spec, &hi).unwrap();
                let (ll_lo, _) = log_likelihood_and_gradient(&dataset, &spec, &lo).unwrap();
                let fd = (ll_hi - ll_lo) / (2.0 * h);
                let denom = grad[j].abs().max(1.0);
                assert!(
                    (grad[j] - fd).abs() / denom <= 1e-6,
                    "coefficient {j}: analytic {} vs finite difference {fd}",
                    grad[j]
                );
            }
        }
    }

    #[test]
    fn likelihood_is_nondecreasing_across_iterations() {
        let spec = ModelSpec::default();
        let beta_true: Vec<f64> = (0..22).map(|i| 0.1 * (i as f64 % 5.0) - 0.2).collect();
        let dataset = planted_dataset(3000, &spec, &beta_true, 11);
        let fit = fit_logistic(&dataset, &spec, 1e-8, 100).unwrap();
        assert!(fit.converged);
        assert!(fit.gradient_norm <= fit.tolerance);
        for w in fit.ll_trace.windows(2) {
            let slack = 1e-9 * (1.0 + w[0].abs());
            assert!(
                w[1] >= w[0] - slack,
                "log-likelihood decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn planted_coefficients_recovered_within_three_se() {
        let spec = ModelSpec::default();
        let mut beta_true = vec![0.0; 22];
        beta_true[0] = -1.0; // intercept
        beta_true[1] = 1.5; // similarity
        for j in 0..6 {
            beta_true[2 + j] = 1.2 - 0.2 * j as f64; // steps
        }
        beta_true[8] = 0.8; // prestige
        for j in 0..6 {
            beta_true[9 + j] = 0.3 - 0.1 * j as f64; // sim x step
        }
        beta_true[15] = -0.4; // sim x prestige
        for j in 0..6 {
            beta_true[16 + j] = 0.2 - 0.05 * j as f64; // step x prestige
        }
        let dataset = planted_dataset(30_000, &spec, &beta_true, 23);
        let fit = fit_logistic(&dataset, &spec, 1e-8, 100).unwrap();
        assert!(fit.converged);
        for (j, (&b, &t)) in fit.beta.iter().zip(&beta_true).enumerate() {
            assert!(
                (b - t).abs() <= 3.0 * fit.se[j],
                "coefficient {j}: fitted {b}, true {t}, se {}",
                fit.se[j]
            );
        }
    }

    #[test]
    fn label_noise_yields_null_slopes_and_base_rate_intercept() {
        let spec = ModelSpec {
            interactions: false,
            ..ModelSpec::default()
        };
        // Labels drawn at rate 0.3 independent of all covariates.
        let mut beta = vec![0.0; 9];
        beta[0] = (0.3f64 / 0.7).ln();
        let dataset = planted_dataset(8000, &spec, &beta, 31);
        let fit = fit_logistic(&dataset, &spec, 1e-8, 100).unwrap();
        assert!(fit.converged);
        for j in 1..fit.beta.len() {
            assert!(
                fit.beta[j].abs() <= 3.0 * fit.se[j],
                "slope {j} =  {} with se {}",
                fit.beta[j],
                fit.se[j]
            );
        }
        let rate = fit.n_pos as f64 / fit.n as f64;
        let logit_rate = (rate / (1.0 - rate)).ln();
        assert!((fit.beta[0] - logit_rate).abs() <= 3.0 * fit.se[0]);
    }

    #[test]
    fn constant_covariates_reduce_to_intercept_only() {
        // All covariates pinned at zero and labels balanced: the intercept
        // goes to logit(1/2) = 0 and the unidentified slopes stay at zero.
        let norm = unit_norm();
        let records: Vec<PairRecord> = (0..400)
            .map(|i| PairRecord {
                citing: i,
                cited: 0,
                label: u8::from(i % 2 == 0),
                distance: DistanceClass::SixPlus,
                similarity: 0.0,
                prestige_raw: 0,
            })
            .collect();
        let dataset = assemble_dataset_with(records, Vec::new(), 6, None, Some(norm)).unwrap();
        let spec = ModelSpec::default();
        let fit = fit_logistic(&dataset, &spec, 1e-8, 100).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[0].abs() < 1e-8, "intercept {}", fit.beta[0]);
        for &b in &fit.beta[1..] {
            assert_eq!(b, 0.0);
        }
    }

    #[test]
    fn sigmoid_matches_reference_values() {
        assert_relative_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(2.0), 0.8807970779778823, epsilon = 1e-15);
        assert_relative_eq!(sigmoid(-2.0), 1.0 - 0.8807970779778823, epsilon = 1e-15);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
    }

    #[test]
    fn prediction_is_monotone_in_a_positive_coefficient() {
        let spec = ModelSpec {
            interactions: false,
            ..ModelSpec::default()
        };
        let mut beta = vec![0.0; 9];
        beta[1] = 2.0;
        let dataset = planted_dataset(2000, &spec, &beta, 41);
        let fit = fit_logistic(&dataset, &spec, 1e-8, 100).unwrap();
        let layout = fit.layout();
        assert!(fit.coefficient("similarity").unwrap() > 0.0);
        let mut last = -1.0;
        for s in 0..=10 {
            let row =
                layout.features_for_class(s as f64 / 10.0, DistanceClass::SixPlus, 0.5, &fit.norm);
            let p = fit.predict_probability(&row, None).unwrap();
            assert!(p > last, "not strictly increasing at step {s}");
            last = p;
        }
        let err = fit.predict_probability(&[0.0; 3], None).unwrap_err();
        assert!(
            matches!(err, Error::LayoutMismatch { fit: 8, row: 3 }),
            "{err}"
        );
    }

    #[test]
    fn interactions_never_lower_the_maximized_likelihood() {
        let spec_full = ModelSpec::default();
        let beta: Vec<f64> = (0..22).map(|i| if i < 9 { 0.4 } else { 0.2 }).collect();
        let dataset = planted_dataset(4000, &spec_full, &beta, 51);
        let plain = fit_logistic(
            &dataset,
            &ModelSpec {
                interactions: false,
                ..spec_full
            },
            1e-8,
            100,
        )
        .unwrap();
        let full = fit_logistic(&dataset, &spec_full, 1e-8, 100).unwrap();
        assert!(full.loglik >= plain.loglik - 1e-9);
    }

    #[test]
    fn rescaling_a_covariate_rescales_its_coefficient() {
        let spec = ModelSpec {
            interactions: false,
            ..ModelSpec::default()
        };
        let mut beta = vec![0.0; 9];
        beta[0] = -0.5;
        beta[1] = 1.8;
        beta[8] = 0.9;
        let base = planted_dataset(3000, &spec, &beta, 61);
        let c = 4.0;
        // Widening the similarity range by c shrinks the normalized covariate
        // by c, so its coefficient must grow by c with probabilities intact.
        let scaled_norm = NormTransform {
            similarity: Range { min: 0.0, max: c },
            ..base.norm
        };
        let scaled = Dataset {
            records: base.records.clone(),
            norm: scaled_norm,
            cutpoint: base.cutpoint,
            sampling: None,
        };
        let fit_a = fit_logistic(&base, &spec, 1e-10, 100).unwrap();
        let fit_b = fit_logistic(&scaled, &spec, 1e-10, 100).unwrap();
        assert_relative_eq!(
            fit_b.coefficient("similarity").unwrap(),
            c * fit_a.coefficient("similarity").unwrap(),
            max_relative = 1e-6
        );
        for (ra, rb) in base.records.iter().zip(&scaled.records) {
            let la = fit_a.layout().features_for_class(
                base.norm.sim_norm(ra),
                ra.distance,
                base.norm.prestige_norm(ra),
                &base.norm,
            );
            let lb = fit_b.layout().features_for_class(
                scaled.norm.sim_norm(rb),
                rb.distance,
                scaled.norm.prestige_norm(rb),
                &scaled.norm,
            );
            let pa = fit_a.predict_probability(&la, None).unwrap();
            let pb = fit_b.predict_probability(&lb, None).unwrap();
            assert!((pa - pb).abs() < 1e-6);
        }
    }

    #[test]
    fn separable_data_trips_the_guard_and_respects_the_cap() {
        let norm = unit_norm();
        let records: Vec<PairRecord> = (0..200)
            .map(|i| {
                let sim = i as f64 / 199.0;
                PairRecord {
                    citing: i,
                    cited: 0,
                    label: u8::from(sim > 0.5),
                    distance: DistanceClass::SixPlus,
                    similarity: sim,
                    prestige_raw: 0,
                }
            })
            .collect();
        let dataset = assemble_dataset_with(records, Vec::new(), 6, None, Some(norm)).unwrap();
        let spec = ModelSpec {
            interactions: false,
            ..ModelSpec::default()
        };
        let fit = fit_logistic(&dataset, &spec, 1e-8, 60).unwrap();
        assert!(fit.separated);
        assert!(!fit.converged);
        assert!(fit.beta.iter().all(|b| b.abs() <= COEFFICIENT_CAP + 1e-12));
    }

    #[test]
    fn group_intercepts_are_recovered_and_centred() {
        let spec = ModelSpec {
            interactions: false,
            group_effects: true,
            ..ModelSpec::default()
        };
        let norm = unit_norm();
        let n_groups = 40u32;
        let per_group = 60;
        let mut rng = StreamRng::from_seed(71, "group-data");
        let mut truth = Vec::new();
        for _ in 0..n_groups {
            truth.push(rng.next_gauss() * 1.2);
        }
        let mean = truth.iter().sum::<f64>() / truth.len() as f64;
        for t in truth.iter_mut() {
            *t -= mean;
        }
        let mut records = Vec::new();
        for g in 0..n_groups {
            for i in 0..per_group {
                let sim = rng.next_f64();
                let eta = -0.3 + 1.4 * sim + truth[g as usize];
                records.push(PairRecord {
                    citing: g * per_group + i,
                    cited: g,
                    label: u8::from(rng.next_f64() < sigmoid(eta)),
                    distance: DistanceClass::SixPlus,
                    similarity: sim,
                    prestige_raw: 0,
                });
            }
        }
        let dataset = assemble_dataset_with(records, Vec::new(), 6, None, Some(norm)).unwrap();
        let fit = fit_logistic(&dataset, &spec, 1e-8, 200).unwrap();
        assert!(fit.converged, "gradient norm {}", fit.gradient_norm);
        let g = fit.group.as_ref().unwrap();
        assert_eq!(g.dropped_rows, 0);
        let mean_u: f64 = g.intercepts.values().sum::<f64>() / g.intercepts.len() as f64;
        assert!(mean_u.abs() < 1e-9, "intercepts not centred: mean {mean_u}");
        // Estimated offsets track the planted ones.
        let mut cov = 0.0;
        let mut var_t = 0.0;
        let mut var_e = 0.0;
        for doc in 0..n_groups {
            let est = g.intercepts[&doc];
            let tru = truth[doc as usize];
            cov += est * tru;
            var_t += tru * tru;
            var_e += est * est;
        }
        let corr = cov / (var_t.sqrt() * var_e.sqrt());
        assert!(corr > 0.8, "correlation with planted offsets {corr}");
        assert!(fit.coefficient("similarity").unwrap() > 0.7);
    }

    #[test]
    fn single_label_groups_are_dropped_and_counted() {
        let spec = ModelSpec {
            interactions: false,
            group_effects: true,
            ..ModelSpec::default()
        };
        let norm = unit_norm();
        let mut rng = StreamRng::from_seed(81, "drop-data");
        let mut records = Vec::new();
        // Groups 0..8 mixed; groups 8 and 9 all-positive and all-negative.
        for g in 0..10u32 {
            for i in 0..30 {
                let label = match g {
                    8 => 1,
                    9 => 0,
                    _ => u8::from(rng.next_f64() < 0.5),
                };
                records.push(PairRecord {
                    citing: g * 30 + i,
                    cited: g,
                    label,
                    distance: DistanceClass::D0,
                    similarity: rng.next_f64(),
                    prestige_raw: 0,
                });
            }
        }
        let dataset = assemble_dataset_with(records, Vec::new(), 6, None, Some(norm)).unwrap();
        let fit = fit_logistic(&dataset, &spec, 1e-8, 200).unwrap();
        let g = fit.group.as_ref().unwrap();
        assert_eq!(g.dropped_groups, 2);
        assert_eq!(g.dropped_rows, 60);
        assert_eq!(fit.n, 240);
        assert_eq!(g.intercepts.len(), 8);
        assert!(!g.intercepts.contains_key(&8) && !g.intercepts.contains_key(&9));

        // A ridge penalty identifies every group instead of dropping.
        let ridged =
            fit_logistic_with(&dataset, &spec, 1e-8, 200, FitOptions { group_ridge: 1.0 }).unwrap();
        let rg = ridged.group.as_ref().unwrap();
        assert_eq!(rg.dropped_rows, 0);
        assert_eq!(rg.intercepts.len(), 10);
        assert!(ridged.group_offset(Some(8)) > ridged.group_offset(Some(9)));
    }

    #[test]
    fn auc_matches_quadratic_concordance_oracle() {
        let mut rng = StreamRng::from_seed(91, "auc");
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = (0..1000).map(|_| rng.next_below(20) as f64).collect();
        let labels: Vec<u8> = scores
            .iter()
            .map(|&s| u8::from(rng.next_f64() < 0.02 * s + 0.2))
            .collect();
        let fast = auc_midrank(&scores, &labels).unwrap();
        let mut concordant = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        concordant += 1.0;
                    } else if scores[i] == scores[j] {
                        concordant += 0.5;
                    }
                }
            }
        }
        assert_relative_eq!(fast, concordant / pairs, epsilon = 1e-12);
        assert!(auc_midrank(&[1.0, 2.0], &[1, 1]).is_none());
    }

    #[test]
    fn metrics_hit_analytic_anchors() {
        let norm = unit_norm();
        // Perfectly separated scores via a planted fit evaluated on its data.
        let records: Vec<PairRecord> = (0..100)
            .map(|i| {
                let label = u8::from(i % 2 == 0);
                PairRecord {
                    citing: i,
                    cited: 0,
                    label,
                    distance: DistanceClass::SixPlus,
                    similarity: f64::from(label),
                    prestige_raw: 0,
                }
            })
            .collect();
        let dataset = assemble_dataset_with(records, Vec::new(), 6, None, Some(norm)).unwrap();
        let spec = ModelSpec {
            interactions: false,
            ..ModelSpec::default()
        };
        let separator = FitResult {
            spec,
            norm,
            beta: vec![-15.0, 30.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            se: vec![0.0; 9],
            loglik: 0.0,
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            tolerance: 1e-8,
            separated: false,
            n: 100,
            n_pos: 50,
            n_neg: 50,
            ll_trace: vec![0.0],
            group: None,
        };
        let m = evaluate(&separator, &dataset).unwrap();
        assert_eq!(m.auc, Some(1.0));
        assert!(m.logloss < 1e-6);

        // All-zero coefficients predict one half everywhere.
        let flat = FitResult {
            beta: vec![0.0; 9],
            ..separator
        };
        let m = evaluate(&flat, &dataset).unwrap();
        assert_relative_eq!(m.logloss, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(m.auc, Some(0.5));
        assert_eq!(m.n, 100);
    }

    #[test]
    fn sweep_covers_models_continues_past_errors_and_repeats_exactly() {
        let spec = ModelSpec::default();
        let beta: Vec<f64> = (0..22).map(|i| 0.3 - 0.02 * i as f64).collect();
        let dataset = planted_dataset(2500, &spec, &beta, 101);
        let base = ModelSpec {
            interactions: false,
            ..ModelSpec::default()
        };
        let mut build = |c: usize| -> Result<Dataset> {
            if c == 4 {
                return Err(Error::InvalidArgument("synthetic failure".into()));
            }
            Ok(Dataset {
                cutpoint: c,
                ..dataset.clone()
            })
        };
        let rows = cutpoint_sweep(&mut build, &[1, 2, 4, 6], true, &base, 1e-8, 100).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[0].model, SweepModel::Cutpoint(1));
        assert_eq!(rows[4].model, SweepModel::Continuous);
        assert!(rows[2].fit.is_none() && rows[2].error.is_some());
        for (i, row) in rows.iter().enumerate() {
            if i != 2 {
                let fit = row.fit.as_ref().unwrap();
                assert!(fit.converged);
                assert!(fit.metrics.logloss > 0.0);
            }
        }
        // Coefficient counts: 1 dummy -> 4 columns without interactions.
        assert_eq!(rows[0].fit.as_ref().unwrap().coefficients, 4);
        assert_eq!(rows[3].fit.as_ref().unwrap().coefficients, 9);

        let again = cutpoint_sweep(&mut build, &[1, 2, 4, 6], true, &base, 1e-8, 100).unwrap();
        assert_eq!(rows, again);

        assert!(cutpoint_sweep(&mut build, &[], false, &base, 1e-8, 100).is_err());
    }

    #[test]
    fn fit_dump_round_trips_bit_for_bit() {
        let (corpus, store, graph) = crate::pairs::fixtures::fixture();
        let pos = crate::pairs::extract_positive_pairs(&corpus, &store, &graph, 6).unwrap();
        let neg =
            crate::pairs::sample_negative_pairs(&corpus, &store, &graph, 4, 13, false, false, 6)
                .unwrap();
        let dataset = crate::pairs::assemble_dataset(pos, neg, 6).unwrap();
        let spec = ModelSpec {
            cutpoint: 2,
            interactions: false,
            ..ModelSpec::default()
        };
        let fit = fit_logistic(&dataset, &spec, 1e-6, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fit.json");
        fit.write_file(&corpus, &path).unwrap();
        let back = FitResult::load_file(&corpus, &path).unwrap();
        assert_eq!(back.beta, fit.beta);
        assert_eq!(back.se, fit.se);
        assert_eq!(back.loglik, fit.loglik);
        assert_eq!(back.spec, fit.spec);
        assert_eq!(back.norm, fit.norm);
        assert_eq!(back.converged, fit.converged);

        // Group fits carry their intercepts through the dump.
        let matched =
            crate::pairs::sample_negative_pairs(&corpus, &store, &graph, 3, 13, true, false, 6)
                .unwrap();
        let pos2 = crate::pairs::extract_positive_pairs(&corpus, &store, &graph, 6).unwrap();
        let ds2 = crate::pairs::assemble_dataset(pos2, matched, 6).unwrap();
        let gspec = ModelSpec {
            cutpoint: 1,
            interactions: false,
            group_effects: true,
            ..ModelSpec::default()
        };
        let gfit =
            fit_logistic_with(&ds2, &gspec, 1e-6, 100, FitOptions { group_ridge: 0.5 }).unwrap();
        let gpath = dir.path().join("gfit.json");
        gfit.write_file(&corpus, &gpath).unwrap();
        let gback = FitResult::load_file(&corpus, &gpath).unwrap();
        assert_eq!(gback.group, gfit.group);
    }
}
