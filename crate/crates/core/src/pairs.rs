//! Pair materialization: positive citing-cited pairs, temporally constrained
//! negative sampling, and normalized model features.
//!
//! The unit of analysis is the ordered (citing, cited) document pair. Positives
//! are the citation links whose endpoints both carry embeddings; negatives are
//! drawn by rejection sampling over the eligible non-citing region, with the
//! exact region size computed up front so infeasible requests fail early and
//! the sampling fraction is known to downstream intercept corrections.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::{CollabGraph, DistanceClass};
use crate::rng::StreamRng;
use crate::semantics::EmbeddingStore;

/// One labelled document pair with raw features. The cited document doubles
/// as the group id for article-level intercepts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRecord {
    pub citing: u32,
    pub cited: u32,
    pub label: u8,
    pub distance: DistanceClass,
    pub similarity: f64,
    pub prestige_raw: u64,
}

impl PairRecord {
    pub fn group(&self) -> u32 {
        self.cited
    }
}

/// Min-max bounds of one covariate over the pooled estimation sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn over(values: impl Iterator<Item = f64>) -> Range {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        Range { min, max }
    }

    /// Maps `min..max` onto `0..1`; constant variables map to 0.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }
}

/// Per-variable normalization bounds, persisted alongside every dataset so
/// grids and marginal effects invert consistently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormTransform {
    pub similarity: Range,
    pub prestige: Range,
    pub distance: Range,
}

impl NormTransform {
    pub fn from_records(records: &[PairRecord]) -> NormTransform {
        NormTransform {
            similarity: Range::over(records.iter().map(|r| r.similarity)),
            prestige: Range::over(records.iter().map(|r| r.prestige_raw as f64)),
            distance: Range::over(
                records
                    .iter()
                    .map(|r| f64::from(r.distance.distance_value())),
            ),
        }
    }

    pub fn sim_norm(&self, r: &PairRecord) -> f64 {
        self.similarity.normalize(r.similarity)
    }

    pub fn prestige_norm(&self, r: &PairRecord) -> f64 {
        self.prestige.normalize(r.prestige_raw as f64)
    }

    pub fn distance_norm(&self, r: &PairRecord) -> f64 {
        self.distance
            .normalize(f64::from(r.distance.distance_value()))
    }
}

/// Positive pair extraction output: one record per embedded citation link,
/// plus the tally of links skipped for missing embeddings.
#[derive(Debug, Clone)]
pub struct PositivePairs {
    pub records: Vec<PairRecord>,
    pub skipped_missing_embedding: u64,
}

/// Negative sampling provenance, persisted in the dataset sidecar. The
/// sampling fraction `n / eligible_pairs` is what a case-control intercept
/// correction needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingInfo {
    pub n: u64,
    pub seed: u64,
    pub matched: bool,
    pub strict_year: bool,
    /// Ordered non-citing pairs satisfying all eligibility constraints.
    pub eligible_pairs: u64,
    /// Citation links inside the same eligibility region.
    pub region_positives: u64,
}

impl SamplingInfo {
    /// Offset to add to a fitted intercept to undo negative subsampling:
    /// drawing a fraction f of eligible negatives shifts the intercept by
    /// -ln f while leaving slopes unbiased.
    pub fn intercept_offset(&self) -> f64 {
        (self.n as f64 / self.eligible_pairs as f64).ln()
    }
}

/// Sampled negatives in draw order, with provenance.
#[derive(Debug, Clone)]
pub struct NegativePairs {
    pub records: Vec<PairRecord>,
    pub info: SamplingInfo,
}

/// Assembled estimation sample: positives first (citation-table order), then
/// negatives (draw order), with pooled normalization bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<PairRecord>,
    pub norm: NormTransform,
    pub cutpoint: usize,
    pub sampling: Option<SamplingInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetSidecar {
    norm: NormTransform,
    cutpoint: usize,
    seed: Option<u64>,
    sampling: Option<SamplingInfo>,
}

/// Maximum number of distance dummies a dataset can support: exact classes
/// run 0..=5 with six-or-more as the reference.
pub const MAX_CUTPOINT: usize = 6;

fn doc_store_index(corpus: &Corpus, store: &EmbeddingStore) -> Vec<Option<u32>> {
    corpus
        .documents()
        .iter()
        .map(|d| store.index_of(&d.id))
        .collect()
}

pub(crate) fn doc_prestige(corpus: &Corpus, doc: u32) -> Result<u64> {
    let mut best = 0u64;
    for &a in &corpus.documents()[doc as usize].authors {
        let cc = corpus
            .career_citations(a)
            .ok_or(Error::UnresolvedCareerCitations)?;
        best = best.max(cc);
    }
    Ok(best)
}

fn featurize_links(
    corpus: &Corpus,
    store: &EmbeddingStore,
    store_idx: &[Option<u32>],
    graph: &CollabGraph,
    cap: u32,
    links: &[(u32, u32)],
    label: u8,
) -> Result<Vec<PairRecord>> {
    let classes = graph.document_pair_distances(corpus, links, cap)?;
    let mut records = Vec::with_capacity(links.len());
    for (&(citing, cited), &distance) in links.iter().zip(&classes) {
        let (si, sj) = match (store_idx[citing as usize], store_idx[cited as usize]) {
            (Some(i), Some(j)) => (i, j),
            _ => {
                return Err(Error::IneligiblePair {
                    citing: corpus.doc_id(citing).to_owned(),
                    cited: corpus.doc_id(cited).to_owned(),
                    reason: "missing embedding".into(),
                })
            }
        };
        records.push(PairRecord {
            citing,
            cited,
            label,
            distance,
            similarity: store.similarity_by_index(si, sj),
            prestige_raw: doc_prestige(corpus, cited)?,
        });
    }
    Ok(records)
}

/// One positive record per citation link with both endpoints embedded, in
/// citation-table order. Links lacking an embedding are skipped and tallied.
pub fn extract_positive_pairs(
    corpus: &Corpus,
    store: &EmbeddingStore,
    graph: &CollabGraph,
    cap: u32,
) -> Result<PositivePairs> {
    let store_idx = doc_store_index(corpus, store);
    let mut links = Vec::with_capacity(corpus.citation_count());
    let mut skipped = 0u64;
    for link in corpus.citations() {
        if store_idx[link.citing as usize].is_some() && store_idx[link.cited as usize].is_some() {
            links.push((link.citing, link.cited));
        } else {
            skipped += 1;
        }
    }
    let records = featurize_links(corpus, store, &store_idx, graph, cap, &links, 1)?;
    Ok(PositivePairs {
        records,
        skipped_missing_embedding: skipped,
    })
}

struct EligibleRegion {
    /// Embedded documents, in document order: the citing-side universe.
    citing_pool: Vec<u32>,
    /// Candidate cited documents, in first-seen order.
    cited_pool: Vec<u32>,
    eligible_pairs: u64,
    region_positives: u64,
}

fn eligible_region(
    corpus: &Corpus,
    store_idx: &[Option<u32>],
    matched: bool,
    strict_year: bool,
) -> EligibleRegion {
    let docs = corpus.documents();
    let citing_pool: Vec<u32> = (0..docs.len() as u32)
        .filter(|&d| store_idx[d as usize].is_some())
        .collect();

    let cited_pool: Vec<u32> = if matched {
        let mut seen = vec![false; docs.len()];
        let mut pool = Vec::new();
        for link in corpus.citations() {
            if store_idx[link.citing as usize].is_some()
                && store_idx[link.cited as usize].is_some()
                && !std::mem::replace(&mut seen[link.cited as usize], true)
            {
                pool.push(link.cited);
            }
        }
        pool
    } else {
        citing_pool.clone()
    };
    let mut cited_pool_member = vec![false; docs.len()];
    for &d in &cited_pool {
        cited_pool_member[d as usize] = true;
    }

    let mut pool_years: Vec<i32> = cited_pool.iter().map(|&d| docs[d as usize].year).collect();
    pool_years.sort_unstable();
    let count_ok = |citing_year: i32| -> u64 {
        if strict_year {
            pool_years.partition_point(|&y| y < citing_year) as u64
        } else {
            pool_years.partition_point(|&y| y <= citing_year) as u64
        }
    };

    let mut ordered_region = 0u64;
    for &c in &citing_pool {
        let mut count = count_ok(docs[c as usize].year);
        // Exclude the self pair, which the year test admits in non-strict mode.
        if !strict_year && cited_pool_member[c as usize] {
            count -= 1;
        }
        ordered_region += count;
    }

    let mut region_positives = 0u64;
    for link in corpus.citations() {
        if store_idx[link.citing as usize].is_none() || store_idx[link.cited as usize].is_none() {
            continue;
        }
        if !cited_pool_member[link.cited as usize] {
            continue;
        }
        let cy = docs[link.citing as usize].year;
        let ty = docs[link.cited as usize].year;
        let year_ok = if strict_year { ty < cy } else { ty <= cy };
        if year_ok {
            region_positives += 1;
        }
    }

    EligibleRegion {
        citing_pool,
        cited_pool,
        eligible_pairs: ordered_region - region_positives,
        region_positives,
    }
}

/// Draws exactly `n` distinct ordered (citing, cited) pairs with no citation
/// link, both embedded, and the cited document no newer than the citing one
/// (strictly older with `strict_year`). `matched` restricts cited documents
/// to those appearing as cited in the positive pairs, which keeps
/// article-level group intercepts identifiable. Deterministic given the seed.
#[allow(clippy::too_many_arguments)]
pub fn sample_negative_pairs(
    corpus: &Corpus,
    store: &EmbeddingStore,
    graph: &CollabGraph,
    n: u64,
    seed: u64,
    matched: bool,
    strict_year: bool,
    cap: u32,
) -> Result<NegativePairs> {
    if n < 1 {
        return Err(Error::InvalidArgument(
            "negative sample size must be positive".into(),
        ));
    }
    let store_idx = doc_store_index(corpus, store);
    let region = eligible_region(corpus, &store_idx, matched, strict_year);
    if region.eligible_pairs < n {
        return Err(Error::InsufficientPairs {
            requested: n,
            available: region.eligible_pairs,
        });
    }
    if n as f64 > 0.9 * region.eligible_pairs as f64 {
        log::warn!(
            "drawing {n} of {} eligible pairs; rejection sampling will be slow",
            region.eligible_pairs
        );
    }

    let docs = corpus.documents();
    let mut rng = StreamRng::from_seed(seed, "negative-pairs");
    let mut drawn: HashSet<(u32, u32)> = HashSet::with_capacity(n as usize);
    let mut links = Vec::with_capacity(n as usize);
    while links.len() < n as usize {
        let citing = region.citing_pool[rng.next_below(region.citing_pool.len() as u64) as usize];
        let cited = region.cited_pool[rng.next_below(region.cited_pool.len() as u64) as usize];
        if citing == cited {
            continue;
        }
        let cy = docs[citing as usize].year;
        let ty = docs[cited as usize].year;
        let year_ok = if strict_year { ty < cy } else { ty <= cy };
        if !year_ok || corpus.has_citation(citing, cited) || !drawn.insert((citing, cited)) {
            continue;
        }
        links.push((citing, cited));
    }

    let records = featurize_links(corpus, store, &store_idx, graph, cap, &links, 0)?;
    Ok(NegativePairs {
        records,
        info: SamplingInfo {
            n,
            seed,
            matched,
            strict_year,
            eligible_pairs: region.eligible_pairs,
            region_positives: region.region_positives,
        },
    })
}

/// Concatenates positives and negatives and fixes normalization bounds over
/// the pooled records.
pub fn assemble_dataset(
    positives: PositivePairs,
    negatives: NegativePairs,
    cutpoint: usize,
) -> Result<Dataset> {
    let info = negatives.info;
    assemble_dataset_with(
        positives.records,
        negatives.records,
        cutpoint,
        Some(info),
        None,
    )
}

/// Assembly core. `norm_override` substitutes externally fixed bounds (a
/// generator's known feature ranges, say) for the pooled min-max; the default
/// pools over the estimation sample.
pub fn assemble_dataset_with(
    positives: Vec<PairRecord>,
    negatives: Vec<PairRecord>,
    cutpoint: usize,
    sampling: Option<SamplingInfo>,
    norm_override: Option<NormTransform>,
) -> Result<Dataset> {
    if !(1..=MAX_CUTPOINT).contains(&cutpoint) {
        return Err(Error::InvalidArgument(format!(
            "cutpoint {cutpoint} outside supported range 1..={MAX_CUTPOINT}"
        )));
    }
    let mut records = positives;
    records.extend(negatives);
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let norm = norm_override.unwrap_or_else(|| NormTransform::from_records(&records));
    Ok(Dataset {
        records,
        norm,
        cutpoint,
        sampling,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn positives(&self) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(|r| r.label == 1)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PairRecord> {
        self.records.iter().filter(|r| r.label == 0)
    }

    /// Writes the record table as CSV plus the JSON sidecar carrying the
    /// normalization transform, cutpoint, and sampling provenance.
    pub fn write_files(&self, corpus: &Corpus, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        fsutil::atomic_write_with(csv_path, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record([
                "citing_id",
                "cited_id",
                "label",
                "dist_class",
                "similarity",
                "prestige_raw",
                "sim_norm",
                "prestige_norm",
            ])
            .map_err(|e| csv_error(csv_path, e))?;
            for r in &self.records {
                w.write_record([
                    corpus.doc_id(r.citing),
                    corpus.doc_id(r.cited),
                    &r.label.to_string(),
                    &r.distance.to_string(),
                    &r.similarity.to_string(),
                    &r.prestige_raw.to_string(),
                    &self.norm.sim_norm(r).to_string(),
                    &self.norm.prestige_norm(r).to_string(),
                ])
                .map_err(|e| csv_error(csv_path, e))?;
            }
            w.flush()
                .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
            Ok(())
        })?;
        let sidecar = DatasetSidecar {
            norm: self.norm,
            cutpoint: self.cutpoint,
            seed: self.sampling.map(|s| s.seed),
            sampling: self.sampling,
        };
        let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| Error::Format {
            path: sidecar_path.display().to_string(),
            message: e.to_string(),
        })?;
        fsutil::atomic_write(sidecar_path, &json)
    }

    /// Reads a dataset dumped by [`Dataset::write_files`]. Document ids are
    /// resolved against `corpus`; normalized columns are recomputed from the
    /// sidecar transform rather than trusted.
    pub fn load_files(corpus: &Corpus, csv_path: &Path, sidecar_path: &Path) -> Result<Dataset> {
        let sidecar: DatasetSidecar = serde_json::from_slice(&fsutil::read_bytes(sidecar_path)?)
            .map_err(|e| Error::Format {
                path: sidecar_path.display().to_string(),
                message: e.to_string(),
            })?;
        let path = csv_path.display().to_string();
        let file = std::fs::File::open(csv_path).map_err(|e| Error::io(path.clone(), e))?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(file);
        let mut records = Vec::new();
        for row in rdr.records() {
            let record = row.map_err(|e| Error::MalformedRecord {
                path: path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let malformed = |message: String| Error::MalformedRecord {
                path: path.clone(),
                line,
                message,
            };
            if record.len() != 8 {
                return Err(malformed(format!(
                    "expected 8 fields, found {}",
                    record.len()
                )));
            }
            let citing = corpus
                .doc_index(&record[0])
                .ok_or_else(|| Error::UnknownDocument(record[0].to_owned()))?;
            let cited = corpus
                .doc_index(&record[1])
                .ok_or_else(|| Error::UnknownDocument(record[1].to_owned()))?;
            let label: u8 = record[2]
                .parse()
                .map_err(|_| malformed(format!("bad label {:?}", &record[2])))?;
            if label > 1 {
                return Err(malformed(format!("label {label} is not 0 or 1")));
            }
            let distance: DistanceClass = record[3].parse()?;
            let similarity: f64 = record[4]
                .parse()
                .map_err(|_| malformed(format!("bad similarity {:?}", &record[4])))?;
            let prestige_raw: u64 = record[5]
                .parse()
                .map_err(|_| malformed(format!("bad prestige {:?}", &record[5])))?;
            records.push(PairRecord {
                citing,
                cited,
                label,
                distance,
                similarity,
                prestige_raw,
            });
        }
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset {
            records,
            norm: sidecar.norm,
            cutpoint: sidecar.cutpoint,
            sampling: sidecar.sampling,
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}
