//! Descriptive artifacts: distance-shift comparisons, joint
//! distance-similarity distributions, prestige-decile breakdowns, and model
//! sweep charts, bundled as CSV tables plus SVG figures and rendered to a
//! deterministic directory layout with a hashed manifest.
//!
//! Every figure is derived from a backing table and embeds its exact plotted
//! values, so figures can always be reconciled against their tables. Assembly
//! is single threaded; inputs arrive precomputed from the other stages.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::{DistanceClass, DistanceDistribution, DISTANCE_CLASSES};
use crate::model::SweepRow;
use crate::pairs::{doc_prestige, PairRecord};
use crate::rng::{fnv1a64, fnv1a64_extend};
use crate::stats::{quantile_sorted, Moments};

/// Similarity histogram resolution used when the caller does not choose one.
pub const DEFAULT_SIMILARITY_BINS: usize = 50;

/// One named CSV payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: String,
    pub csv: String,
}

/// One named SVG payload tied to the table it was derived from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Figure {
    pub name: String,
    pub svg: String,
    pub backing_table: String,
}

/// Run metadata echoed into the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub corpus_hash: Option<String>,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

/// Accumulated tables and figures awaiting [`render`].
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub meta: RunMeta,
    tables: Vec<Table>,
    figures: Vec<Figure>,
}

impl ReportBundle {
    pub fn new(meta: RunMeta) -> Self {
        ReportBundle {
            meta,
            tables: Vec::new(),
            figures: Vec::new(),
        }
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn figures(&self) -> &[Figure] {
        &self.figures
    }

    pub fn push_table(&mut self, table: Table) -> Result<()> {
        if self.tables.iter().any(|t| t.name == table.name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate table name {:?}",
                table.name
            )));
        }
        self.tables.push(table);
        Ok(())
    }

    /// Figures may only reference tables already in the bundle.
    pub fn push_figure(&mut self, figure: Figure) -> Result<()> {
        if self.figures.iter().any(|f| f.name == figure.name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate figure name {:?}",
                figure.name
            )));
        }
        if !self.tables.iter().any(|t| t.name == figure.backing_table) {
            return Err(Error::InvalidArgument(format!(
                "figure {:?} references missing table {:?}",
                figure.name, figure.backing_table
            )));
        }
        self.figures.push(figure);
        Ok(())
    }

    /// Stable content hash over metadata and every payload, in order.
    pub fn bundle_hash(&self) -> u64 {
        let mut h = fnv1a64(b"report-bundle");
        if let Some(seed) = self.meta.seed {
            h = fnv1a64_extend(h, &seed.to_le_bytes());
        }
        if let Some(ch) = &self.meta.corpus_hash {
            h = fnv1a64_extend(h, ch.as_bytes());
        }
        for (k, v) in &self.meta.config {
            h = fnv1a64_extend(h, k.as_bytes());
            h = fnv1a64_extend(h, v.as_bytes());
        }
        for t in &self.tables {
            h = fnv1a64_extend(h, t.name.as_bytes());
            h = fnv1a64_extend(h, t.csv.as_bytes());
        }
        for f in &self.figures {
            h = fnv1a64_extend(h, f.name.as_bytes());
            h = fnv1a64_extend(h, f.backing_table.as_bytes());
            h = fnv1a64_extend(h, f.svg.as_bytes());
        }
        h
    }
}

// ---------------------------------------------------------------------------
// Distance shift
// ---------------------------------------------------------------------------

/// Side-by-side distance distributions of all potential pairs and citing
/// pairs, with the headline comparisons. `shares` rows run from distance 0
/// through the merged at-or-beyond-cap bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceShift {
    pub cap: u32,
    pub labels: Vec<String>,
    pub all_shares: Vec<f64>,
    pub citing_shares: Vec<f64>,
    /// Per-distance `citing - all` share difference.
    pub shift: Vec<f64>,
    pub all_modal: u32,
    pub citing_modal: u32,
    pub all_self_share: f64,
    pub citing_self_share: f64,
    pub all_mean_finite: f64,
    pub citing_mean_finite: f64,
}

/// Compares the citing-pair distance distribution against the all-pairs
/// baseline. Both distributions must share the cap and be non-empty.
pub fn distance_shift_report(
    all_pairs: &DistanceDistribution,
    citing_pairs: &DistanceDistribution,
) -> Result<DistanceShift> {
    if all_pairs.cap != citing_pairs.cap {
        return Err(Error::InvalidArgument(format!(
            "distance caps differ: all-pairs {} vs citing {}",
            all_pairs.cap, citing_pairs.cap
        )));
    }
    if all_pairs.total_pairs() == 0 || citing_pairs.total_pairs() == 0 {
        return Err(Error::InvalidArgument(
            "distance distributions must be non-empty".into(),
        ));
    }
    let cap = all_pairs.cap;
    let labels: Vec<String> = (0..cap)
        .map(|d| d.to_string())
        .chain(std::iter::once(format!("{cap}+")))
        .collect();
    let all_shares: Vec<f64> = (0..=cap).map(|d| all_pairs.share(d)).collect();
    let citing_shares: Vec<f64> = (0..=cap).map(|d| citing_pairs.share(d)).collect();
    let shift = citing_shares
        .iter()
        .zip(&all_shares)
        .map(|(c, a)| c - a)
        .collect();
    Ok(DistanceShift {
        cap,
        labels,
        all_shares,
        citing_shares,
        shift,
        all_modal: all_pairs.modal_distance(),
        citing_modal: citing_pairs.modal_distance(),
        all_self_share: all_pairs.self_link_share(),
        citing_self_share: citing_pairs.self_link_share(),
        all_mean_finite: all_pairs.mean_finite_distance(),
        citing_mean_finite: citing_pairs.mean_finite_distance(),
    })
}

impl DistanceShift {
    pub fn attach(&self, bundle: &mut ReportBundle) -> Result<()> {
        let mut csv = String::from("distance,all_share,citing_share,shift\n");
        for i in 0..self.labels.len() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                self.labels[i], self.all_shares[i], self.citing_shares[i], self.shift[i]
            ));
        }
        bundle.push_table(Table {
            name: "distance_shift".into(),
            csv,
        })?;

        let annotations = vec![
            format!(
                "mode: all {} vs citing {}",
                self.labels[self.all_modal as usize], self.labels[self.citing_modal as usize]
            ),
            format!(
                "self-link share: all {:.4} vs citing {:.4}",
                self.all_self_share, self.citing_self_share
            ),
        ];
        let svg = grouped_bar_svg(
            "Distance distribution: citing pairs vs all pairs",
            &annotations,
            &self.labels,
            &[
                ("all", "#8a8f98", &self.all_shares),
                ("citing", "#2563eb", &self.citing_shares),
            ],
        );
        bundle.push_figure(Figure {
            name: "distance_shift".into(),
            svg,
            backing_table: "distance_shift".into(),
        })
    }
}

// ---------------------------------------------------------------------------
// Joint distance-similarity distribution
// ---------------------------------------------------------------------------

/// Similarity summary of one label and distance class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSummary {
    pub label: u8,
    pub class: DistanceClass,
    pub n: u64,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub excess_kurtosis: f64,
}

/// One cell of the binned distance-by-similarity table.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCell {
    pub label: u8,
    pub class: DistanceClass,
    pub bin: usize,
    pub sim_lo: f64,
    pub sim_hi: f64,
    pub count: u64,
    /// Share of the cell within its label's records.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    pub bins: usize,
    pub sim_lo: f64,
    pub sim_hi: f64,
    /// Labels present in the input, ascending.
    pub labels: Vec<u8>,
    pub summaries: Vec<ClassSummary>,
    /// Rectangular per label: every class and bin, zeros included.
    pub cells: Vec<JointCell>,
}

/// Bins similarity against distance class, split by label, with per-class
/// similarity summaries. Binning spans the pooled observed similarity range
/// so cells are comparable across labels.
pub fn joint_distribution_report(records: &[PairRecord], bins: usize) -> Result<JointDistribution> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("bin count must be positive".into()));
    }
    let sim_lo = records
        .iter()
        .map(|r| r.similarity)
        .fold(f64::INFINITY, f64::min);
    let observed_hi = records
        .iter()
        .map(|r| r.similarity)
        .fold(f64::NEG_INFINITY, f64::max);
    // A constant similarity column still needs a non-degenerate bin width.
    let sim_hi = if observed_hi > sim_lo {
        observed_hi
    } else {
        sim_lo + 1.0
    };
    let width = (sim_hi - sim_lo) / bins as f64;
    let bin_of = |s: f64| {
        let t = ((s - sim_lo) / (sim_hi - sim_lo) * bins as f64).floor() as i64;
        t.clamp(0, bins as i64 - 1) as usize
    };

    let labels: Vec<u8> = records
        .iter()
        .map(|r| r.label)
        .collect::<BTreeSet<u8>>()
        .into_iter()
        .collect();

    let mut summaries = Vec::new();
    let mut cells = Vec::new();
    for &label in &labels {
        let label_total = records.iter().filter(|r| r.label == label).count() as u64;
        let mut counts = vec![0u64; DISTANCE_CLASSES.len() * bins];
        let mut sims_by_class: Vec<Vec<f64>> = vec![Vec::new(); DISTANCE_CLASSES.len()];
        for r in records.iter().filter(|r| r.label == label) {
            let ci = r.distance.index();
            counts[ci * bins + bin_of(r.similarity)] += 1;
            sims_by_class[ci].push(r.similarity);
        }
        for (ci, sims) in sims_by_class.iter_mut().enumerate() {
            if sims.is_empty() {
                continue;
            }
            sims.sort_by(f64::total_cmp);
            let mut m = Moments::new();
            for &s in sims.iter() {
                m.push(s);
            }
            summaries.push(ClassSummary {
                label,
                class: DISTANCE_CLASSES[ci],
                n: sims.len() as u64,
                mean: m.mean(),
                q1: quantile_sorted(sims, 0.25),
                median: quantile_sorted(sims, 0.5),
                q3: quantile_sorted(sims, 0.75),
                excess_kurtosis: m.excess_kurtosis(),
            });
        }
        for (ci, &class) in DISTANCE_CLASSES.iter().enumerate() {
            for b in 0..bins {
                let count = counts[ci * bins + b];
                cells.push(JointCell {
                    label,
                    class,
                    bin: b,
                    sim_lo: sim_lo + width * b as f64,
                    sim_hi: sim_lo + width * (b + 1) as f64,
                    count,
                    share: count as f64 / label_total as f64,
                });
            }
        }
    }
    Ok(JointDistribution {
        bins,
        sim_lo,
        sim_hi,
        labels,
        summaries,
        cells,
    })
}

impl JointDistribution {
    fn panel_title(label: u8) -> String {
        if label == 1 {
            "citing pairs".into()
        } else {
            "non-citing pairs".into()
        }
    }

    pub fn attach(&self, bundle: &mut ReportBundle) -> Result<()> {
        let mut csv = String::from("label,dist_class,n,mean,q1,median,q3,excess_kurtosis\n");
        for s in &self.summaries {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.label, s.class, s.n, s.mean, s.q1, s.median, s.q3, s.excess_kurtosis
            ));
        }
        bundle.push_table(Table {
            name: "joint_class_summary".into(),
            csv,
        })?;

        let mut csv = String::from("label,dist_class,bin,sim_lo,sim_hi,count,share\n");
        for c in &self.cells {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.label, c.class, c.bin, c.sim_lo, c.sim_hi, c.count, c.share
            ));
        }
        bundle.push_table(Table {
            name: "joint_binned".into(),
            csv,
        })?;

        // One heat panel per label: distance classes across, similarity bins
        // up, highest bin on top.
        let cols: Vec<String> = DISTANCE_CLASSES.iter().map(|c| c.to_string()).collect();
        let rows: Vec<String> = (0..self.bins)
            .rev()
            .map(|b| {
                format!(
                    "{:.2}",
                    self.sim_lo + (self.sim_hi - self.sim_lo) * (b as f64 + 0.5) / self.bins as f64
                )
            })
            .collect();
        let panels: Vec<HeatPanel> = self
            .labels
            .iter()
            .map(|&label| {
                let mut values = Vec::with_capacity(rows.len() * cols.len());
                for b in (0..self.bins).rev() {
                    for ci in 0..DISTANCE_CLASSES.len() {
                        let cell = self
                            .cells
                            .iter()
                            .find(|c| c.label == label && c.class.index() == ci && c.bin == b)
                            .expect("rectangular cells");
                        values.push(cell.share);
                    }
                }
                HeatPanel {
                    subtitle: Self::panel_title(label),
                    cols: cols.clone(),
                    rows: rows.clone(),
                    values,
                }
            })
            .collect();
        let svg = heatmap_svg(
            "Joint distribution of distance and similarity",
            "distance",
            "similarity",
            &panels,
        );
        bundle.push_figure(Figure {
            name: "joint_binned".into(),
            svg,
            backing_table: "joint_binned".into(),
        })
    }
}

// ---------------------------------------------------------------------------
// Prestige decile breakdown
// ---------------------------------------------------------------------------

/// One decile-group-class cell of the prestige breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct DecileCell {
    pub decile: usize,
    /// True for citing pairs (label 1), false for the all-pairs group.
    pub citing: bool,
    pub class: DistanceClass,
    pub count: u64,
    /// Share within this decile and group.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecileBreakdown {
    /// Bucket count; fewer than 10 when the prestige support is too coarse.
    pub buckets: usize,
    pub coarsened: bool,
    /// Internal bucket boundaries (length `buckets - 1`).
    pub boundaries: Vec<f64>,
    pub prestige_min: u64,
    pub prestige_max: u64,
    pub cells: Vec<DecileCell>,
}

/// Buckets records by deciles of the cited document's prestige, the maximum
/// career citations across its byline, and tabulates distance distributions
/// per bucket for the citing (label 1) and all-pairs (label 0) groups.
/// Boundaries come from quantiles of the pooled record stream; prestige
/// supports with fewer than 10 distinct values fall back to coarser
/// quantiles with a warning.
pub fn decile_breakdown(records: &[PairRecord], corpus: &Corpus) -> Result<DecileBreakdown> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut prestige = Vec::with_capacity(records.len());
    let mut cache: HashMap<u32, u64> = HashMap::new();
    for r in records {
        let p = match cache.get(&r.cited) {
            Some(&p) => p,
            None => {
                let p = doc_prestige(corpus, r.cited)?;
                cache.insert(r.cited, p);
                p
            }
        };
        prestige.push(p);
    }
    let distinct: BTreeSet<u64> = prestige.iter().copied().collect();
    let buckets = distinct.len().min(10);
    let coarsened = buckets < 10;
    if coarsened {
        log::warn!(
            "{} distinct prestige value(s); falling back to {} bucket(s)",
            distinct.len(),
            buckets
        );
    }
    let mut sorted: Vec<f64> = prestige.iter().map(|&p| p as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let boundaries: Vec<f64> = (1..buckets)
        .map(|i| quantile_sorted(&sorted, i as f64 / buckets as f64))
        .collect();
    let bucket_of = |p: u64| boundaries.iter().filter(|&&b| p as f64 > b).count();

    let classes = DISTANCE_CLASSES.len();
    let mut counts = vec![0u64; buckets * 2 * classes];
    for (r, &p) in records.iter().zip(&prestige) {
        let g = usize::from(r.label == 1);
        counts[(bucket_of(p) * 2 + g) * classes + r.distance.index()] += 1;
    }
    let mut cells = Vec::new();
    for decile in 0..buckets {
        for g in 0..2 {
            let base = (decile * 2 + g) * classes;
            let total: u64 = counts[base..base + classes].iter().sum();
            if total == 0 {
                continue;
            }
            for (ci, &class) in DISTANCE_CLASSES.iter().enumerate() {
                cells.push(DecileCell {
                    decile,
                    citing: g == 1,
                    class,
                    count: counts[base + ci],
                    share: counts[base + ci] as f64 / total as f64,
                });
            }
        }
    }
    Ok(DecileBreakdown {
        buckets,
        coarsened,
        boundaries,
        prestige_min: *distinct.iter().next().unwrap(),
        prestige_max: *distinct.iter().last().unwrap(),
        cells,
    })
}

impl DecileBreakdown {
    /// Self-link share of one decile and group, when populated.
    pub fn self_share(&self, decile: usize, citing: bool) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.decile == decile && c.citing == citing && c.class == DistanceClass::D0)
            .map(|c| c.share)
    }

    pub fn attach(&self, bundle: &mut ReportBundle) -> Result<()> {
        let mut csv = String::from("decile,lower,upper\n");
        for d in 0..self.buckets {
            let lower = if d == 0 {
                self.prestige_min as f64
            } else {
                self.boundaries[d - 1]
            };
            let upper = if d + 1 == self.buckets {
                self.prestige_max as f64
            } else {
                self.boundaries[d]
            };
            csv.push_str(&format!("{d},{lower},{upper}\n"));
        }
        bundle.push_table(Table {
            name: "decile_bounds".into(),
            csv,
        })?;

        let mut csv = String::from("decile,group,dist_class,count,share\n");
        for c in &self.cells {
            let group = if c.citing { "citing" } else { "all" };
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                c.decile, group, c.class, c.count, c.share
            ));
        }
        bundle.push_table(Table {
            name: "decile_distance".into(),
            csv,
        })?;

        let cols: Vec<String> = DISTANCE_CLASSES.iter().map(|c| c.to_string()).collect();
        let rows: Vec<String> = (0..self.buckets).map(|d| d.to_string()).collect();
        let panels: Vec<HeatPanel> = [true, false]
            .iter()
            .map(|&citing| {
                let mut values = Vec::with_capacity(self.buckets * cols.len());
                for decile in 0..self.buckets {
                    for &class in &DISTANCE_CLASSES {
                        let share = self
                            .cells
                            .iter()
                            .find(|c| c.decile == decile && c.citing == citing && c.class == class)
                            .map_or(0.0, |c| c.share);
                        values.push(share);
                    }
                }
                HeatPanel {
                    subtitle: if citing {
                        "citing pairs".into()
                    } else {
                        "all pairs".into()
                    },
                    cols: cols.clone(),
                    rows: rows.clone(),
                    values,
                }
            })
            .collect();
        let svg = heatmap_svg(
            "Distance distribution by prestige decile",
            "distance",
            "decile",
            &panels,
        );
        bundle.push_figure(Figure {
            name: "decile_distance".into(),
            svg,
            backing_table: "decile_distance".into(),
        })
    }
}

// ---------------------------------------------------------------------------
// Model sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// Wraps sweep rows for reporting; failed rows keep their error text.
pub fn sweep_report(rows: &[SweepRow]) -> Result<SweepReport> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("sweep has no rows".into()));
    }
    Ok(SweepReport {
        rows: rows.to_vec(),
    })
}

impl SweepReport {
    pub fn attach(&self, bundle: &mut ReportBundle) -> Result<()> {
        let mut csv = String::from("model,coefficients,loglik,logloss,auc,converged,error\n");
        for row in &self.rows {
            match (&row.fit, &row.error) {
                (Some(fit), _) => {
                    let auc = fit.metrics.auc.map(|a| a.to_string()).unwrap_or_default();
                    csv.push_str(&format!(
                        "{},{},{},{},{},{},\n",
                        row.model,
                        fit.coefficients,
                        fit.loglik,
                        fit.metrics.logloss,
                        auc,
                        fit.converged
                    ));
                }
                (None, Some(err)) => {
                    csv.push_str(&format!(
                        "{},,,,,,{}\n",
                        row.model,
                        err.replace(',', ";").replace('\n', " ")
                    ));
                }
                (None, None) => {
                    csv.push_str(&format!("{},,,,,,\n", row.model));
                }
            }
        }
        bundle.push_table(Table {
            name: "model_sweep".into(),
            csv,
        })?;

        let fitted: Vec<&SweepRow> = self.rows.iter().filter(|r| r.fit.is_some()).collect();
        let labels: Vec<String> = fitted.iter().map(|r| r.model.to_string()).collect();
        let logloss: Vec<f64> = fitted
            .iter()
            .map(|r| r.fit.as_ref().unwrap().metrics.logloss)
            .collect();
        let svg = grouped_bar_svg(
            "Held-in log loss by distance specification",
            &[],
            &labels,
            &[("logloss", "#2563eb", &logloss)],
        );
        bundle.push_figure(Figure {
            name: "model_sweep".into(),
            svg,
            backing_table: "model_sweep".into(),
        })
    }
}

// ---------------------------------------------------------------------------
// SVG assembly
// ---------------------------------------------------------------------------

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

struct SvgDoc {
    body: String,
    width: f64,
    height: f64,
}

impl SvgDoc {
    fn new(width: f64, height: f64) -> Self {
        SvgDoc {
            body: String::new(),
            width,
            height,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn rect(
        &mut self,
        x: f64,
        y: f64,
        w: f64,
        h: f64,
        fill: &str,
        opacity: Option<f64>,
        title: Option<&str>,
    ) {
        let op = opacity
            .map(|o| format!(" fill-opacity=\"{:.4}\"", o))
            .unwrap_or_default();
        match title {
            Some(t) => self.body.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"{}><title>{}</title></rect>\n",
                f2(x), f2(y), f2(w), f2(h), fill, op, xml_escape(t)
            )),
            None => self.body.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"{}/>\n",
                f2(x), f2(y), f2(w), f2(h), fill, op
            )),
        }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        self.body.push_str(&format!(
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\" stroke-width=\"1\"/>\n",
            f2(x1),
            f2(y1),
            f2(x2),
            f2(y2),
            stroke
        ));
    }

    fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"{}\" text-anchor=\"{}\" fill=\"#24292f\">{}</text>\n",
            f2(x), f2(y), f2(size), anchor, xml_escape(s)
        ));
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {} {}\" width=\"{}\" height=\"{}\">\n<rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>\n{}</svg>\n",
            f2(self.width), f2(self.height), f2(self.width), f2(self.height),
            f2(self.width), f2(self.height), self.body
        )
    }
}

/// Grouped bar chart. Each bar embeds `series: value` as its tooltip with the
/// exact plotted number, so the figure reconciles against its backing table.
fn grouped_bar_svg(
    title: &str,
    annotations: &[String],
    labels: &[String],
    series: &[(&str, &str, &[f64])],
) -> String {
    let width = 720.0;
    let height = 420.0;
    let left = 64.0;
    let right = 20.0;
    let top = 54.0 + 16.0 * annotations.len() as f64;
    let bottom = 56.0;
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let mut doc = SvgDoc::new(width, height);
    doc.text(width / 2.0, 24.0, 15.0, "middle", title);
    for (i, a) in annotations.iter().enumerate() {
        doc.text(width / 2.0, 44.0 + 16.0 * i as f64, 12.0, "middle", a);
    }

    let max_val = series
        .iter()
        .flat_map(|(_, _, vals)| vals.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let y_top = max_val * 1.05;

    // Axes and y ticks.
    doc.line(left, top, left, top + plot_h, "#24292f");
    doc.line(left, top + plot_h, left + plot_w, top + plot_h, "#24292f");
    for t in 0..=4 {
        let v = y_top * t as f64 / 4.0;
        let y = top + plot_h * (1.0 - t as f64 / 4.0);
        doc.line(left - 4.0, y, left, y, "#24292f");
        doc.text(left - 8.0, y + 4.0, 11.0, "end", &format!("{v:.3}"));
    }

    let slots = labels.len().max(1) as f64;
    let slot_w = plot_w / slots;
    let group_w = slot_w * 0.8;
    let bar_w = group_w / series.len().max(1) as f64;
    for (li, label) in labels.iter().enumerate() {
        let x0 = left + slot_w * li as f64 + (slot_w - group_w) / 2.0;
        for (si, (name, color, vals)) in series.iter().enumerate() {
            let v = vals[li];
            let h = plot_h * (v / y_top).clamp(0.0, 1.0);
            doc.rect(
                x0 + bar_w * si as f64,
                top + plot_h - h,
                bar_w.max(0.5),
                h,
                color,
                None,
                Some(&format!("{name} {label}: {v}")),
            );
        }
        doc.text(
            left + slot_w * (li as f64 + 0.5),
            top + plot_h + 18.0,
            11.0,
            "middle",
            label,
        );
    }

    // Legend, only when there is more than one series.
    if series.len() > 1 {
        let mut x = left + 8.0;
        let y = top - 10.0;
        for (name, color, _) in series {
            doc.rect(x, y - 9.0, 10.0, 10.0, color, None, None);
            doc.text(x + 14.0, y, 11.0, "start", name);
            x += 14.0 + 8.0 * name.len() as f64 + 18.0;
        }
    }
    doc.finish()
}

/// One panel of a heat map: `values` row-major over `rows x cols`.
struct HeatPanel {
    subtitle: String,
    cols: Vec<String>,
    rows: Vec<String>,
    values: Vec<f64>,
}

/// Side-by-side heat panels with per-panel intensity scaling. Every cell
/// embeds its exact value as a tooltip.
fn heatmap_svg(title: &str, x_label: &str, y_label: &str, panels: &[HeatPanel]) -> String {
    let cell = 16.0f64;
    let left_gutter = 58.0;
    let top_gutter = 64.0;
    let panel_gap = 34.0;
    let max_rows = panels.iter().map(|p| p.rows.len()).max().unwrap_or(0);
    let panel_widths: Vec<f64> = panels.iter().map(|p| p.cols.len() as f64 * cell).collect();
    let width = left_gutter
        + panel_widths.iter().sum::<f64>()
        + panel_gap * panels.len().saturating_sub(1) as f64
        + 20.0;
    let height = top_gutter + max_rows as f64 * cell + 56.0;

    let mut doc = SvgDoc::new(width, height);
    doc.text(width / 2.0, 24.0, 15.0, "middle", title);

    let mut x0 = left_gutter;
    for (pi, panel) in panels.iter().enumerate() {
        let rows = panel.rows.len();
        let cols = panel.cols.len();
        let max_v = panel
            .values
            .iter()
            .copied()
            .fold(0.0f64, f64::max)
            .max(1e-12);
        doc.text(
            x0 + cols as f64 * cell / 2.0,
            top_gutter - 18.0,
            12.0,
            "middle",
            &panel.subtitle,
        );
        for ri in 0..rows {
            for ci in 0..cols {
                let v = panel.values[ri * cols + ci];
                doc.rect(
                    x0 + ci as f64 * cell,
                    top_gutter + ri as f64 * cell,
                    cell - 1.0,
                    cell - 1.0,
                    "#2563eb",
                    Some(v / max_v),
                    Some(&format!(
                        "{} {} x {} {}: {}",
                        x_label, panel.cols[ci], y_label, panel.rows[ri], v
                    )),
                );
            }
        }
        for (ci, c) in panel.cols.iter().enumerate() {
            doc.text(
                x0 + (ci as f64 + 0.5) * cell,
                top_gutter + rows as f64 * cell + 14.0,
                10.0,
                "middle",
                c,
            );
        }
        // Row labels only on the first panel; every fifth row to stay legible.
        if pi == 0 {
            for (ri, r) in panel.rows.iter().enumerate() {
                if rows <= 12 || ri % 5 == 0 {
                    doc.text(
                        x0 - 6.0,
                        top_gutter + (ri as f64 + 0.75) * cell,
                        10.0,
                        "end",
                        r,
                    );
                }
            }
        }
        doc.text(
            x0 + cols as f64 * cell / 2.0,
            top_gutter + rows as f64 * cell + 34.0,
            11.0,
            "middle",
            x_label,
        );
        x0 += cols as f64 * cell + panel_gap;
    }
    doc.finish()
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFigure {
    pub name: String,
    pub file: String,
    pub backing_table: String,
    pub hash: String,
}

/// Run metadata plus content hashes of every rendered payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub meta: RunMeta,
    pub tables: Vec<ManifestEntry>,
    pub figures: Vec<ManifestFigure>,
    pub bundle_hash: String,
}

/// Writes the bundle under `out_dir` as `tables/*.csv`, `figures/*.svg`, and
/// `manifest.json`, all atomically, and returns the written paths. An empty
/// bundle produces the manifest alone.
pub fn render(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mkdir =
        |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p.display().to_string(), e));
    mkdir(out_dir)?;
    let mut written = Vec::new();

    let mut manifest = Manifest {
        meta: bundle.meta.clone(),
        tables: Vec::new(),
        figures: Vec::new(),
        bundle_hash: format!("{:016x}", bundle.bundle_hash()),
    };

    if !bundle.tables.is_empty() {
        let dir = out_dir.join("tables");
        mkdir(&dir)?;
        for t in &bundle.tables {
            let path = dir.join(format!("{}.csv", t.name));
            fsutil::atomic_write(&path, t.csv.as_bytes())?;
            manifest.tables.push(ManifestEntry {
                name: t.name.clone(),
                file: format!("tables/{}.csv", t.name),
                hash: format!("{:016x}", fnv1a64(t.csv.as_bytes())),
            });
            written.push(path);
        }
    }
    if !bundle.figures.is_empty() {
        let dir = out_dir.join("figures");
        mkdir(&dir)?;
        for f in &bundle.figures {
            let path = dir.join(format!("{}.svg", f.name));
            fsutil::atomic_write(&path, f.svg.as_bytes())?;
            manifest.figures.push(ManifestFigure {
                name: f.name.clone(),
                file: format!("figures/{}.svg", f.name),
                backing_table: f.backing_table.clone(),
                hash: format!("{:016x}", fnv1a64(f.svg.as_bytes())),
            });
            written.push(path);
        }
    }

    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Format {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    fsutil::atomic_write(&manifest_path, &json)?;
    written.push(manifest_path);
    Ok(written)
}
