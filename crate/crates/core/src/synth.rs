//! Synthetic corpus generation with planted model parameters.
//!
//! Builds an authorship structure under a configurable collaboration model,
//! cluster embeddings, and citation links sampled independently per eligible
//! ordered pair from a planted logistic model. Features flow through the same
//! distance, similarity, and prestige code paths the estimation side uses, so
//! a fit on generated data can be checked against the generator coefficient
//! for coefficient. Generation is deterministic: every random draw comes from
//! a counter stream keyed by the seed and a purpose label, so corpora
//! regenerate bit for bit regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Author, CitationLink, Corpus, Document};
use crate::error::{Error, Result};
use crate::graph::{build_collaboration_graph, CollabGraph, DistanceClass};
use crate::model::{sigmoid, Layout, ModelSpec};
use crate::pairs::{doc_prestige, NormTransform, Range};
use crate::rng::{fnv1a64, StreamRng};
use crate::semantics::EmbeddingStore;
use crate::stats;

/// Collaboration-network distance cap used for generator features; classes at
/// or past it land in the reference category.
const DISTANCE_CAP: u32 = 6;

/// Pairs per accumulation block; fixed so reduction shapes depend only on the
/// pair count, never on thread scheduling.
const BLOCK: usize = 8192;

/// Intercept search bounds for citation-rate calibration. Outside this span
/// the per-pair probabilities underflow to 0 or saturate at 1 anyway.
const CALIBRATION_SPAN: f64 = 40.0;

/// How the generator wires authors into bylines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollabModel {
    /// Authors sit on a ring; each byline is a seed author plus its nearest
    /// ring neighbours. Produces long chains and large diameters.
    RandomGeometric,
    /// Urn scheme: every byline membership feeds back into the draw pool, so
    /// prolific authors keep accumulating papers. Produces hubs and short
    /// paths.
    Preferential,
    /// Authors split round-robin into communities; bylines draw from a home
    /// community, occasionally from an adjacent one. The crosslink rate tunes
    /// how fast distance decays across the ring of communities.
    Community { communities: usize, crosslink: f64 },
}

/// Cluster mixture for document embeddings: documents pick one of `clusters`
/// unit centers and add isotropic gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub clusters: usize,
    pub dim: usize,
    pub noise: f64,
}

/// Full description of one synthetic corpus. Identical configs (same seed
/// included) regenerate identical corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_authors: usize,
    pub n_docs: usize,
    /// Inclusive byline size bounds.
    pub authors_per_doc: (usize, usize),
    pub collaboration: CollabModel,
    pub embedding: EmbeddingModel,
    /// Structure of the generating model; `true_beta` must match its layout.
    pub model: ModelSpec,
    /// Generating coefficients in layout order, intercept first.
    pub true_beta: Vec<f64>,
    /// `None` keeps the configured intercept. A positive rate calibrates the
    /// intercept so the expected citation count is `rate * n_docs`. A zero
    /// rate skips citation sampling entirely and emits a link-free corpus,
    /// the cheap path for structure-only studies at scale.
    pub citations_per_doc: Option<f64>,
    pub seed: u64,
}

impl SynthConfig {
    /// Validates every field and returns the coefficient layout of the
    /// generating model.
    pub fn validate(&self) -> Result<Layout> {
        if self.n_authors == 0 {
            return Err(Error::InvalidArgument(
                "author count must be positive".into(),
            ));
        }
        if self.n_docs == 0 {
            return Err(Error::InvalidArgument(
                "document count must be positive".into(),
            ));
        }
        let (lo, hi) = self.authors_per_doc;
        if lo < 1 || hi < lo || hi > self.n_authors {
            return Err(Error::InvalidArgument(format!(
                "byline size range {lo}..={hi} must satisfy 1 <= lo <= hi <= {} authors",
                self.n_authors
            )));
        }
        if let CollabModel::Community {
            communities,
            crosslink,
        } = self.collaboration
        {
            if communities < 1 || communities > self.n_authors {
                return Err(Error::InvalidArgument(format!(
                    "community count {communities} must be in 1..={} (author count)",
                    self.n_authors
                )));
            }
            if !crosslink.is_finite() || !(0.0..=1.0).contains(&crosslink) {
                return Err(Error::InvalidArgument(format!(
                    "crosslink rate {crosslink} must lie in [0, 1]"
                )));
            }
        }
        let e = &self.embedding;
        if e.clusters < 1 {
            return Err(Error::InvalidArgument(
                "embedding cluster count must be positive".into(),
            ));
        }
        if e.dim < 1 {
            return Err(Error::InvalidArgument(
                "embedding dimension must be positive".into(),
            ));
        }
        if !e.noise.is_finite() || e.noise < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "embedding noise scale {} must be finite and non-negative",
                e.noise
            )));
        }
        if let Some(rate) = self.citations_per_doc {
            if !rate.is_finite() || rate < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "citations per document {rate} must be finite and non-negative"
                )));
            }
        }
        let layout = self.model.layout()?;
        if self.true_beta.len() != layout.coefficient_count() {
            return Err(Error::InvalidArgument(format!(
                "true_beta has {} entries; the model layout needs {}",
                self.true_beta.len(),
                layout.coefficient_count()
            )));
        }
        if self.true_beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument(
                "true_beta entries must be finite".into(),
            ));
        }
        Ok(layout)
    }
}

/// Ground truth emitted alongside a generated corpus: everything needed to
/// score an estimate against the generator or to recompute any pair's exact
/// link probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// Generating coefficients in layout order; position 0 is the intercept
    /// actually used for sampling (calibrated when a rate was requested).
    pub beta: Vec<f64>,
    pub spec: ModelSpec,
    /// Fixed covariate bounds the generator normalized with. A fit on
    /// generated data must adopt these (dataset normalization override) for
    /// its coefficients to be comparable with `beta`.
    pub norm: NormTransform,
    pub seed: u64,
    /// Hash of the full generating config, for provenance checks.
    pub config_hash: String,
    /// Planted per-author career latent. The emitted authors file carries
    /// these as the provided career counts, so pipeline prestige equals
    /// generator prestige exactly; re-ingesting with in-corpus career
    /// counting instead yields the realized counts, which the model did NOT
    /// use, and invalidates [`oracle_probability`] for that corpus.
    pub latent_careers: Vec<u64>,
    /// Ordered (citing, cited) pairs satisfying the year eligibility rule.
    pub eligible_pairs: u64,
    /// Citation links actually sampled.
    pub citations: u64,
    /// Whether the intercept was calibrated to a citation rate.
    pub calibrated_intercept: bool,
}

/// Generates a corpus, its embeddings, and the planted truth. The embedding
/// store holds documents in corpus index order, and the corpus carries the
/// planted career latents as provided career counts.
pub fn generate(config: &SynthConfig) -> Result<(Corpus, EmbeddingStore, SynthTruth)> {
    let layout = config.validate()?;
    let latents = career_latents(config);
    let years = doc_years(config.n_docs);
    let bylines = build_bylines(config);

    let authors: Vec<Author> = latents
        .iter()
        .enumerate()
        .map(|(i, &c)| Author {
            id: format!("a{i}"),
            career_citations: Some(c),
        })
        .collect();
    let documents: Vec<Document> = (0..config.n_docs)
        .map(|i| Document {
            id: format!("d{i}"),
            year: years[i],
            field: "synthetic".into(),
            authors: bylines[i].clone(),
            has_embedding: true,
        })
        .collect();
    let prelim = Corpus::assemble_indexed(authors.clone(), documents.clone(), Vec::new())?;
    let store = build_embeddings(config)?;
    let norm = fixed_norm(&latents);
    let eligible = eligible_count(&years);

    let mut beta = config.true_beta.clone();
    let (links, calibrated) = match config.citations_per_doc {
        Some(0.0) => (Vec::new(), false),
        rate => {
            let graph = build_collaboration_graph(&prelim)?;
            let (pairs, offsets) = eligible_pairs(&years);
            let distances = graph.document_pair_distances(&prelim, &pairs, DISTANCE_CAP)?;
            let prestige_norm: Vec<f64> = (0..config.n_docs as u32)
                .map(|j| Ok(norm.prestige.normalize(doc_prestige(&prelim, j)? as f64)))
                .collect::<Result<_>>()?;
            let etas = slope_etas(
                &layout,
                &beta[1..],
                &store,
                &norm,
                &pairs,
                &offsets,
                &distances,
                &prestige_norm,
            );
            if let Some(rate) = rate {
                beta[0] = calibrate_intercept(&etas, rate * config.n_docs as f64)?;
            }
            (
                sample_links(config.seed, beta[0], &pairs, &offsets, &etas),
                rate.is_some(),
            )
        }
    };
    let citations = links.len() as u64;
    let corpus = Corpus::assemble_indexed(authors, documents, links)?;

    let encoded = serde_json::to_vec(config).map_err(|e| Error::Format {
        path: "synth-config".into(),
        message: e.to_string(),
    })?;
    let truth = SynthTruth {
        beta,
        spec: config.model,
        norm,
        seed: config.seed,
        config_hash: format!("{:016x}", fnv1a64(&encoded)),
        latent_careers: latents,
        eligible_pairs: eligible,
        citations,
        calibrated_intercept: calibrated,
    };
    Ok((corpus, store, truth))
}

/// Exact probability the generator used (or would use) for one ordered
/// document pair, recomputed from the corpus, embeddings, and graph. Valid
/// for corpora as emitted by [`generate`], whose provided career counts are
/// the planted latents.
pub fn oracle_probability(
    truth: &SynthTruth,
    corpus: &Corpus,
    store: &EmbeddingStore,
    graph: &CollabGraph,
    citing: &str,
    cited: &str,
) -> Result<f64> {
    let ci = doc_index(corpus, citing)?;
    let cj = doc_index(corpus, cited)?;
    let ineligible = |reason: &str| Error::IneligiblePair {
        citing: citing.into(),
        cited: cited.into(),
        reason: reason.into(),
    };
    if ci == cj {
        return Err(ineligible("a document cannot cite itself"));
    }
    let docs = corpus.documents();
    if docs[cj].year > docs[ci].year {
        return Err(ineligible("cited document is newer than the citing one"));
    }
    let layout = truth.spec.layout()?;
    if truth.beta.len() != layout.coefficient_count() {
        return Err(Error::InvalidArgument(format!(
            "truth carries {} coefficients; its layout needs {}",
            truth.beta.len(),
            layout.coefficient_count()
        )));
    }
    let sim = truth
        .norm
        .similarity
        .normalize(store.similarity(citing, cited)?);
    let class = graph.document_pair_distance(corpus, ci as u32, cj as u32, DISTANCE_CAP)?;
    let prestige = truth
        .norm
        .prestige
        .normalize(doc_prestige(corpus, cj as u32)? as f64);
    let x = layout.features_for_class(sim, class, prestige, &truth.norm);
    Ok(sigmoid(truth.beta[0] + dot(&x, &truth.beta[1..])))
}

/// Linear scan by id; the corpus keeps no document id index and the oracle is
/// a low-volume validation path.
fn doc_index(corpus: &Corpus, id: &str) -> Result<usize> {
    corpus
        .documents()
        .iter()
        .position(|d| d.id == id)
        .ok_or_else(|| Error::UnknownDocument(id.into()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log-normal career latents, median e^2 (about 7 citations), heavy right
/// tail.
fn career_latents(config: &SynthConfig) -> Vec<u64> {
    let mut rng = StreamRng::from_seed(config.seed, "careers");
    (0..config.n_authors)
        .map(|_| (2.0 + rng.next_gauss()).exp().round() as u64)
        .collect()
}

/// Ten publication-year cohorts, non-decreasing in document index so index
/// order and year order agree.
fn doc_years(n_docs: usize) -> Vec<i32> {
    (0..n_docs)
        .map(|i| 2000 + ((i * 10) / n_docs) as i32)
        .collect()
}

/// Covariate bounds fixed by the generator rather than estimated from any
/// sample: cosine spans [-1, 1], prestige spans the latent career range, and
/// distance spans the class values up to the cap.
fn fixed_norm(latents: &[u64]) -> NormTransform {
    let top = latents.iter().copied().max().unwrap_or(0).max(1) as f64;
    NormTransform {
        similarity: Range {
            min: -1.0,
            max: 1.0,
        },
        prestige: Range { min: 0.0, max: top },
        distance: Range {
            min: 0.0,
            max: f64::from(DISTANCE_CAP),
        },
    }
}

fn build_bylines(config: &SynthConfig) -> Vec<Vec<u32>> {
    match config.collaboration {
        CollabModel::RandomGeometric => geometric_bylines(config),
        CollabModel::Preferential => preferential_bylines(config),
        CollabModel::Community {
            communities,
            crosslink,
        } => community_bylines(config, communities, crosslink),
    }
}

fn byline_size(rng: &mut StreamRng, bounds: (usize, usize)) -> usize {
    let (lo, hi) = bounds;
    lo + rng.next_below((hi - lo + 1) as u64) as usize
}

/// Ring gap walking upward from `from` to `to` on the unit circle.
fn ring_gap(from: f64, to: f64) -> f64 {
    let d = to - from;
    if d < 0.0 {
        d + 1.0
    } else {
        d
    }
}

fn geometric_bylines(config: &SynthConfig) -> Vec<Vec<u32>> {
    let n = config.n_authors;
    let mut pos_rng = StreamRng::from_seed(config.seed, "geo");
    let positions: Vec<f64> = (0..n).map(|_| pos_rng.next_f64()).collect();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        positions[a as usize]
            .total_cmp(&positions[b as usize])
            .then(a.cmp(&b))
    });
    let mut rank = vec![0usize; n];
    for (r, &a) in order.iter().enumerate() {
        rank[a as usize] = r;
    }

    (0..config.n_docs)
        .map(|i| {
            let mut rng = StreamRng::from_seed(config.seed, &format!("byline-{i}"));
            let k = byline_size(&mut rng, config.authors_per_doc);
            let seed_author = rng.next_below(n as u64) as usize;
            let mut byline = vec![seed_author as u32];
            let mut left = (rank[seed_author] + n - 1) % n;
            let mut right = (rank[seed_author] + 1) % n;
            while byline.len() < k {
                let gl = ring_gap(positions[order[left] as usize], positions[seed_author]);
                let gr = ring_gap(positions[seed_author], positions[order[right] as usize]);
                if gl <= gr {
                    byline.push(order[left]);
                    left = (left + n - 1) % n;
                } else {
                    byline.push(order[right]);
                    right = (right + 1) % n;
                }
            }
            byline.sort_unstable();
            byline
        })
        .collect()
}

/// Sequential over documents because the urn grows as bylines land; each
/// document still draws from its own stream, so the output is deterministic.
fn preferential_bylines(config: &SynthConfig) -> Vec<Vec<u32>> {
    let n = config.n_authors;
    let mut urn: Vec<u32> = (0..n as u32).collect();
    (0..config.n_docs)
        .map(|i| {
            let mut rng = StreamRng::from_seed(config.seed, &format!("byline-{i}"));
            let k = byline_size(&mut rng, config.authors_per_doc);
            let mut byline: Vec<u32> = Vec::with_capacity(k);
            let mut attempts = 0usize;
            while byline.len() < k && attempts < 64 * k {
                attempts += 1;
                let cand = urn[rng.next_below(urn.len() as u64) as usize];
                if !byline.contains(&cand) {
                    byline.push(cand);
                }
            }
            fill_missing(&mut byline, k);
            byline.sort_unstable();
            urn.extend_from_slice(&byline);
            byline
        })
        .collect()
}

fn community_bylines(config: &SynthConfig, communities: usize, crosslink: f64) -> Vec<Vec<u32>> {
    let n = config.n_authors;
    // Author a belongs to community a % communities; community c therefore
    // holds ceil((n - c) / communities) members c, c + C, c + 2C, ...
    let members_in = |c: usize| (n - c).div_ceil(communities);
    (0..config.n_docs)
        .map(|i| {
            let mut rng = StreamRng::from_seed(config.seed, &format!("byline-{i}"));
            let k = byline_size(&mut rng, config.authors_per_doc);
            let home = rng.next_below(communities as u64) as usize;
            let mut byline: Vec<u32> = Vec::with_capacity(k);
            let mut attempts = 0usize;
            while byline.len() < k && attempts < 64 * k {
                attempts += 1;
                let comm = if rng.next_f64() < crosslink {
                    if rng.next_f64() < 0.5 {
                        (home + communities - 1) % communities
                    } else {
                        (home + 1) % communities
                    }
                } else {
                    home
                };
                let slot = rng.next_below(members_in(comm) as u64) as usize;
                let cand = (comm + slot * communities) as u32;
                if !byline.contains(&cand) {
                    byline.push(cand);
                }
            }
            fill_missing(&mut byline, k);
            byline.sort_unstable();
            byline
        })
        .collect()
}

/// Tops a byline up to `k` members with the lowest-index absent authors;
/// the fallback when rejection sampling runs out of attempts (tiny
/// communities, saturated urns). `k` never exceeds the author count.
fn fill_missing(byline: &mut Vec<u32>, k: usize) {
    let mut next = 0u32;
    while byline.len() < k {
        if byline.contains(&next) {
            next += 1;
        } else {
            byline.push(next);
            next += 1;
        }
    }
}

fn build_embeddings(config: &SynthConfig) -> Result<EmbeddingStore> {
    let e = config.embedding;
    let mut center_rng = StreamRng::from_seed(config.seed, "embed-centers");
    let mut centers: Vec<Vec<f64>> = (0..e.clusters)
        .map(|_| (0..e.dim).map(|_| center_rng.next_gauss()).collect())
        .collect();
    for center in centers.iter_mut() {
        let norm = center.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in center.iter_mut() {
                *v /= norm;
            }
        } else {
            center[0] = 1.0;
        }
    }

    let vectors: Vec<Vec<f32>> = (0..config.n_docs)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamRng::from_seed(config.seed, &format!("embed-{i}"));
            let cluster = rng.next_below(e.clusters as u64) as usize;
            let mut v: Vec<f32> = centers[cluster]
                .iter()
                .map(|&c| (c + e.noise * rng.next_gauss()) as f32)
                .collect();
            if v.iter().all(|&x| x == 0.0) {
                v[0] = 1.0;
            }
            v
        })
        .collect();

    // Insertion in document order makes store indices equal corpus document
    // indices, which the pair passes rely on.
    let mut store = EmbeddingStore::new(e.dim);
    for (i, v) in vectors.iter().enumerate() {
        store.insert(format!("d{i}"), v, ("synthetic", i))?;
    }
    Ok(store)
}

/// Ordered eligible pairs: cited no newer than citing, self pairs excluded.
/// Cheap count-only version for paths that never enumerate.
fn eligible_count(years: &[i32]) -> u64 {
    (0..years.len())
        .map(|i| years.partition_point(|&y| y <= years[i]) as u64 - 1)
        .sum()
}

/// Materialized eligible pairs grouped by citing document (ascending cited
/// index within each group), plus per-document offsets into the flat list.
fn eligible_pairs(years: &[i32]) -> (Vec<(u32, u32)>, Vec<usize>) {
    let n = years.len();
    let mut pairs = Vec::new();
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for i in 0..n {
        let upper = years.partition_point(|&y| y <= years[i]);
        for j in 0..upper {
            if j != i {
                pairs.push((i as u32, j as u32));
            }
        }
        offsets.push(pairs.len());
    }
    (pairs, offsets)
}

/// Slope part of the linear predictor for every eligible pair, in pair
/// order. The intercept stays out so calibration can move it without
/// recomputing features.
#[allow(clippy::too_many_arguments)]
fn slope_etas(
    layout: &Layout,
    beta_slopes: &[f64],
    store: &EmbeddingStore,
    norm: &NormTransform,
    pairs: &[(u32, u32)],
    offsets: &[usize],
    distances: &[DistanceClass],
    prestige_norm: &[f64],
) -> Vec<f64> {
    let per_doc: Vec<Vec<f64>> = (0..offsets.len() - 1)
        .into_par_iter()
        .map(|i| {
            let lo = offsets[i];
            let hi = offsets[i + 1];
            let mut out = Vec::with_capacity(hi - lo);
            for (k, &(a, b)) in pairs[lo..hi].iter().enumerate() {
                let sim = norm.similarity.normalize(store.similarity_by_index(a, b));
                let x = layout.features_for_class(
                    sim,
                    distances[lo + k],
                    prestige_norm[b as usize],
                    norm,
                );
                out.push(dot(&x, beta_slopes));
            }
            out
        })
        .collect();
    per_doc.into_iter().flatten().collect()
}

/// Expected citation count at a trial intercept, reduced over fixed-size
/// blocks with a fixed-shape pairwise tree for thread-independent totals.
fn expected_citations(etas: &[f64], b0: f64) -> f64 {
    let partials: Vec<f64> = etas
        .par_chunks(BLOCK)
        .map(|chunk| chunk.iter().map(|&e| sigmoid(b0 + e)).sum::<f64>())
        .collect();
    stats::tree_reduce(partials, |a, b| a + b).unwrap_or(0.0)
}

/// Bisects the intercept until the expected citation count meets the target.
/// The expectation is strictly increasing in the intercept, so 80 halvings of
/// an 80-unit bracket pin it far below the target's resolution.
fn calibrate_intercept(etas: &[f64], target: f64) -> Result<f64> {
    let floor = expected_citations(etas, -CALIBRATION_SPAN);
    let ceiling = expected_citations(etas, CALIBRATION_SPAN);
    if target < floor || target > ceiling {
        return Err(Error::InfeasibleConfig(format!(
            "citation target {target:.3} outside the reachable range [{floor:.3}, {ceiling:.3}] \
             for intercepts within +/-{CALIBRATION_SPAN}"
        )));
    }
    let mut lo = -CALIBRATION_SPAN;
    let mut hi = CALIBRATION_SPAN;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if expected_citations(etas, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One uniform draw per eligible pair, from a per-citing-document stream in
/// ascending cited order. Draws do not depend on the coefficients, so runs
/// differing only in `true_beta` face identical noise.
fn sample_links(
    seed: u64,
    b0: f64,
    pairs: &[(u32, u32)],
    offsets: &[usize],
    etas: &[f64],
) -> Vec<CitationLink> {
    let per_doc: Vec<Vec<CitationLink>> = (0..offsets.len() - 1)
        .into_par_iter()
        .map(|i| {
            let mut rng = StreamRng::from_seed(seed, &format!("cite-{i}"));
            let lo = offsets[i];
            let hi = offsets[i + 1];
            let mut out = Vec::new();
            for (k, &(a, b)) in pairs[lo..hi].iter().enumerate() {
                if rng.next_f64() < sigmoid(b0 + etas[lo + k]) {
                    out.push(CitationLink {
                        citing: a,
                        cited: b,
                    });
                }
            }
            out
        })
        .collect();
    per_doc.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fit_logistic;
    use crate::pairs::{assemble_dataset_with, extract_positive_pairs, sample_negative_pairs};

    fn plain_spec() -> ModelSpec {
        ModelSpec {
            cutpoint: 6,
            continuous_distance: false,
            interactions: false,
            group_effects: false,
        }
    }

    fn full_spec() -> ModelSpec {
        ModelSpec {
            cutpoint: 6,
            continuous_distance: false,
            interactions: true,
            group_effects: false,
        }
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    /// Coefficient vector for `spec` with the intercept and the listed
    /// (index, value) slopes set, everything else zero.
    fn beta_with(spec: &ModelSpec, b0: f64, slopes: &[(usize, f64)]) -> Vec<f64> {
        let mut beta = vec![0.0; spec.layout().unwrap().coefficient_count()];
        beta[0] = b0;
        for &(i, v) in slopes {
            beta[i] = v;
        }
        beta
    }

    fn base_config(seed: u64) -> SynthConfig {
        let model = plain_spec();
        SynthConfig {
            n_authors: 140,
            n_docs: 260,
            authors_per_doc: (1, 4),
            collaboration: CollabModel::Community {
                communities: 12,
                crosslink: 0.08,
            },
            embedding: EmbeddingModel {
                clusters: 5,
                dim: 8,
                noise: 0.3,
            },
            true_beta: beta_with(&model, logit(0.01), &[]),
            model,
            citations_per_doc: None,
            seed,
        }
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let ok = base_config(1);
        assert!(ok.validate().is_ok());
        type Mutation = Box<dyn Fn(&mut SynthConfig)>;
        let cases: Vec<Mutation> = vec![
            Box::new(|c| c.n_authors = 0),
            Box::new(|c| c.n_docs = 0),
            Box::new(|c| c.authors_per_doc = (0, 2)),
            Box::new(|c| c.authors_per_doc = (3, 2)),
            Box::new(|c| c.authors_per_doc = (1, 10_000)),
            Box::new(|c| c.true_beta.pop().map(|_| ()).unwrap()),
            Box::new(|c| c.true_beta[3] = f64::NAN),
            Box::new(|c| c.embedding.clusters = 0),
            Box::new(|c| c.embedding.dim = 0),
            Box::new(|c| c.embedding.noise = -0.1),
            Box::new(|c| c.embedding.noise = f64::INFINITY),
            Box::new(|c| {
                c.collaboration = CollabModel::Community {
                    communities: 0,
                    crosslink: 0.1,
                }
            }),
            Box::new(|c| {
                c.collaboration = CollabModel::Community {
                    communities: 4,
                    crosslink: 1.5,
                }
            }),
            Box::new(|c| c.citations_per_doc = Some(-1.0)),
            Box::new(|c| c.citations_per_doc = Some(f64::NAN)),
        ];
        for (i, mutate) in cases.iter().enumerate() {
            let mut bad = ok.clone();
            mutate(&mut bad);
            match bad.validate() {
                Err(Error::InvalidArgument(_)) => {}
                other => panic!("case {i}: expected InvalidArgument, got {other:?}"),
            }
        }
    }

    #[test]
    fn eligible_pairs_match_a_quadratic_scan() {
        let (corpus, _store, truth) = generate(&base_config(7)).unwrap();
        let docs = corpus.documents();
        let mut expect = 0u64;
        for i in 0..docs.len() {
            for j in 0..docs.len() {
                if i != j && docs[j].year <= docs[i].year {
                    expect += 1;
                }
            }
        }
        assert_eq!(truth.eligible_pairs, expect);
        // Every sampled link lies inside the eligibility region.
        for link in corpus.citations() {
            assert_ne!(link.citing, link.cited);
            assert!(docs[link.cited as usize].year <= docs[link.citing as usize].year);
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let mut cfg = base_config(11);
        cfg.true_beta = beta_with(&cfg.model, -4.0, &[(1, 0.7), (2, 1.5), (8, 0.4)]);
        let (c1, s1, t1) = generate(&cfg).unwrap();
        let (c2, s2, t2) = generate(&cfg).unwrap();
        assert_eq!(t1, t2);
        assert!(t1.citations > 0);

        let dir = tempfile::tempdir().unwrap();
        let path = |name: &str| dir.path().join(name);
        c1.write_files(&path("a1.csv"), &path("d1.jsonl"), &path("c1.csv"))
            .unwrap();
        c2.write_files(&path("a2.csv"), &path("d2.jsonl"), &path("c2.csv"))
            .unwrap();
        s1.write_jsonl(&path("e1.jsonl")).unwrap();
        s2.write_jsonl(&path("e2.jsonl")).unwrap();
        for (a, b) in [
            ("a1.csv", "a2.csv"),
            ("d1.jsonl", "d2.jsonl"),
            ("c1.csv", "c2.csv"),
            ("e1.jsonl", "e2.jsonl"),
        ] {
            let left = std::fs::read(path(a)).unwrap();
            let right = std::fs::read(path(b)).unwrap();
            assert!(left == right, "{a} and {b} differ");
        }
    }

    #[test]
    fn config_and_truth_roundtrip_through_json() {
        let cfg = base_config(1);
        let back: SynthConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);

        let mut small = base_config(2);
        small.n_docs = 40;
        small.n_authors = 30;
        let (_c, _s, truth) = generate(&small).unwrap();
        let back: SynthTruth =
            serde_json::from_str(&serde_json::to_string(&truth).unwrap()).unwrap();
        assert_eq!(truth, back);
    }

    #[test]
    fn intercept_only_density_matches() {
        let mut cfg = base_config(3);
        cfg.true_beta = beta_with(&cfg.model, logit(0.01), &[]);
        let (corpus, _store, truth) = generate(&cfg).unwrap();
        assert_eq!(corpus.citation_count() as u64, truth.citations);
        let expected = truth.eligible_pairs as f64 * 0.01;
        let sd = (truth.eligible_pairs as f64 * 0.01 * 0.99).sqrt();
        let got = truth.citations as f64;
        assert!(
            (got - expected).abs() <= 3.0 * sd,
            "citation count {got} outside {expected} +/- {}",
            3.0 * sd
        );
    }

    #[test]
    fn positive_self_link_coefficient_raises_self_citation_share() {
        let d0_share = |true_beta: Vec<f64>| {
            let mut cfg = base_config(5);
            cfg.true_beta = true_beta;
            let (corpus, _store, _truth) = generate(&cfg).unwrap();
            let graph = build_collaboration_graph(&corpus).unwrap();
            let links: Vec<(u32, u32)> = corpus
                .citations()
                .iter()
                .map(|l| (l.citing, l.cited))
                .collect();
            assert!(!links.is_empty());
            let classes = graph
                .document_pair_distances(&corpus, &links, DISTANCE_CAP)
                .unwrap();
            let d0 = classes.iter().filter(|c| **c == DistanceClass::D0).count();
            d0 as f64 / classes.len() as f64
        };
        let spec = plain_spec();
        let flat = d0_share(beta_with(&spec, -3.5, &[]));
        let boosted = d0_share(beta_with(&spec, -3.5, &[(2, 3.0)]));
        assert!(
            boosted > flat,
            "self-link share {boosted} should exceed the zero-coefficient share {flat}"
        );
    }

    #[test]
    fn calibration_hits_citation_target() {
        let mut cfg = base_config(9);
        cfg.true_beta = beta_with(&cfg.model, 0.0, &[(1, 0.8), (2, 1.2), (8, 0.5)]);
        cfg.citations_per_doc = Some(3.0);
        let (_corpus, _store, truth) = generate(&cfg).unwrap();
        let target = 3.0 * cfg.n_docs as f64;
        assert!(truth.calibrated_intercept);
        assert_ne!(truth.beta[0], cfg.true_beta[0]);
        assert_eq!(&truth.beta[1..], &cfg.true_beta[1..]);
        let got = truth.citations as f64;
        assert!(
            (got - target).abs() <= 3.0 * target.sqrt(),
            "citation count {got} outside {target} +/- {}",
            3.0 * target.sqrt()
        );
    }

    #[test]
    fn unreachable_rates_are_infeasible() {
        let mut high = base_config(2);
        high.citations_per_doc = Some(1e9);
        match generate(&high) {
            Err(Error::InfeasibleConfig(_)) => {}
            other => panic!("expected InfeasibleConfig for a huge rate, got {other:?}"),
        }
        // A giant similarity slope keeps many pair probabilities near 1 even
        // at the lowest intercept, so a near-zero target is unreachable too.
        let mut low = base_config(2);
        low.true_beta = beta_with(&low.model, 0.0, &[(1, 120.0)]);
        low.citations_per_doc = Some(1e-9);
        match generate(&low) {
            Err(Error::InfeasibleConfig(_)) => {}
            other => panic!("expected InfeasibleConfig for a vanishing rate, got {other:?}"),
        }
    }

    #[test]
    fn zero_rate_skips_citations() {
        let mut cfg = base_config(4);
        cfg.citations_per_doc = Some(0.0);
        let (corpus, _store, truth) = generate(&cfg).unwrap();
        assert_eq!(corpus.citation_count(), 0);
        assert_eq!(truth.citations, 0);
        assert!(!truth.calibrated_intercept);
        assert_eq!(truth.beta, cfg.true_beta);
    }

    #[test]
    fn oracle_matches_independent_recomputation() {
        let mut cfg = base_config(13);
        cfg.model = full_spec();
        cfg.true_beta = (0..22).map(|k| 0.05 * k as f64 - 0.5).collect();
        cfg.true_beta[0] = -3.0;
        let (corpus, store, truth) = generate(&cfg).unwrap();
        let graph = build_collaboration_graph(&corpus).unwrap();
        let docs = corpus.documents();

        let mut checked = 0usize;
        'outer: for i in (0..docs.len()).step_by(17) {
            for j in (0..docs.len()).step_by(13) {
                if i == j || docs[j].year > docs[i].year {
                    continue;
                }
                let p =
                    oracle_probability(&truth, &corpus, &store, &graph, &docs[i].id, &docs[j].id)
                        .unwrap();

                // Hand-built features, bypassing the layout machinery.
                let u = store.vector(&docs[i].id).unwrap();
                let v = store.vector(&docs[j].id).unwrap();
                let sim = crate::semantics::cosine_similarity(u, v).unwrap();
                let s = (sim + 1.0) / 2.0;
                let class = graph
                    .document_pair_distance(&corpus, i as u32, j as u32, DISTANCE_CAP)
                    .unwrap();
                let mut dummies = [0.0f64; 6];
                if class.index() < 6 {
                    dummies[class.index()] = 1.0;
                }
                let raw = docs[j]
                    .authors
                    .iter()
                    .map(|&a| truth.latent_careers[a as usize])
                    .max()
                    .unwrap();
                let pr = raw as f64 / truth.norm.prestige.max;

                let b = &truth.beta;
                let mut eta = b[0] + b[1] * s;
                for t in 0..6 {
                    eta += b[2 + t] * dummies[t];
                }
                eta += b[8] * pr;
                for t in 0..6 {
                    eta += b[9 + t] * s * dummies[t];
                }
                eta += b[15] * s * pr;
                for t in 0..6 {
                    eta += b[16 + t] * dummies[t] * pr;
                }
                let q = 1.0 / (1.0 + (-eta).exp());
                assert!(
                    (p - q).abs() <= 1e-12,
                    "pair ({i}, {j}): oracle {p} vs recomputed {q}"
                );
                checked += 1;
                if checked >= 50 {
                    break 'outer;
                }
            }
        }
        assert!(checked >= 30, "only {checked} pairs checked");
    }

    #[test]
    fn oracle_rejects_ineligible_pairs() {
        let (corpus, store, truth) = generate(&base_config(6)).unwrap();
        let graph = build_collaboration_graph(&corpus).unwrap();
        let docs = corpus.documents();
        let oldest = docs[0].id.clone();
        let newest = docs[docs.len() - 1].id.clone();
        assert!(docs[docs.len() - 1].year > docs[0].year);

        match oracle_probability(&truth, &corpus, &store, &graph, &oldest, &oldest) {
            Err(Error::IneligiblePair { .. }) => {}
            other => panic!("self pair should be ineligible, got {other:?}"),
        }
        match oracle_probability(&truth, &corpus, &store, &graph, &oldest, &newest) {
            Err(Error::IneligiblePair { .. }) => {}
            other => panic!("newer cited document should be ineligible, got {other:?}"),
        }
        match oracle_probability(&truth, &corpus, &store, &graph, "missing", &oldest) {
            Err(Error::UnknownDocument(_)) => {}
            other => panic!("unknown id should fail, got {other:?}"),
        }
        let p = oracle_probability(&truth, &corpus, &store, &graph, &newest, &oldest).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn oracle_reference_pair_is_intercept_only() {
        // Two single-author documents with disjoint bylines (reference
        // distance), opposite embeddings (normalized similarity 0), and zero
        // careers (prestige 0): every feature vanishes, so the oracle must
        // return exactly sigmoid of the intercept despite junk slopes.
        let authors = vec![
            Author {
                id: "a0".into(),
                career_citations: Some(0),
            },
            Author {
                id: "a1".into(),
                career_citations: Some(0),
            },
        ];
        let documents = vec![
            Document {
                id: "d0".into(),
                year: 2000,
                field: "synthetic".into(),
                authors: vec![0],
                has_embedding: true,
            },
            Document {
                id: "d1".into(),
                year: 2001,
                field: "synthetic".into(),
                authors: vec![1],
                has_embedding: true,
            },
        ];
        let corpus = Corpus::assemble_indexed(authors, documents, Vec::new()).unwrap();
        let mut store = EmbeddingStore::new(2);
        store.insert("d0".into(), &[1.0, 0.0], ("test", 0)).unwrap();
        store
            .insert("d1".into(), &[-1.0, 0.0], ("test", 1))
            .unwrap();
        let graph = build_collaboration_graph(&corpus).unwrap();

        let truth = SynthTruth {
            beta: (0..22).map(|k| 0.3 * k as f64 + 0.7).collect(),
            spec: full_spec(),
            norm: NormTransform {
                similarity: Range {
                    min: -1.0,
                    max: 1.0,
                },
                prestige: Range { min: 0.0, max: 1.0 },
                distance: Range { min: 0.0, max: 6.0 },
            },
            seed: 0,
            config_hash: "0".repeat(16),
            latent_careers: vec![0, 0],
            eligible_pairs: 1,
            citations: 0,
            calibrated_intercept: false,
        };
        let p = oracle_probability(&truth, &corpus, &store, &graph, "d1", "d0").unwrap();
        assert_eq!(p, sigmoid(0.7));
    }

    #[test]
    fn oracle_is_monotone_in_the_similarity_coefficient() {
        let mut cfg = base_config(21);
        cfg.true_beta = beta_with(&cfg.model, -3.0, &[(1, 0.5)]);
        let (corpus, store, truth) = generate(&cfg).unwrap();
        let graph = build_collaboration_graph(&corpus).unwrap();
        let docs = corpus.documents();

        // Years are non-decreasing in index, so any j < i is eligible.
        let mut pair = None;
        'outer: for i in 1..docs.len() {
            for j in 0..i {
                let sim_norm = truth
                    .norm
                    .similarity
                    .normalize(store.similarity_by_index(i as u32, j as u32));
                if sim_norm > 0.2 {
                    pair = Some((i, j));
                    break 'outer;
                }
            }
        }
        let (i, j) = pair.expect("no positively similar pair found");
        let p_flat =
            oracle_probability(&truth, &corpus, &store, &graph, &docs[i].id, &docs[j].id).unwrap();
        let mut steeper = truth.clone();
        steeper.beta[1] += 1.5;
        let p_steep =
            oracle_probability(&steeper, &corpus, &store, &graph, &docs[i].id, &docs[j].id)
                .unwrap();
        assert!(p_steep > p_flat);
    }

    #[test]
    fn proximity_bias_left_shifts_citing_distances() {
        let mut cfg = base_config(31);
        cfg.true_beta = beta_with(
            &cfg.model,
            -5.0,
            &[(2, 2.5), (3, 2.0), (4, 1.5), (5, 1.0), (6, 0.6), (7, 0.3)],
        );
        let (corpus, _store, truth) = generate(&cfg).unwrap();
        assert!(
            truth.citations > 50,
            "only {} links sampled",
            truth.citations
        );
        let graph = build_collaboration_graph(&corpus).unwrap();
        let all_docs: Vec<u32> = (0..corpus.document_count() as u32).collect();
        let all = graph
            .all_pair_distance_distribution(&corpus, &all_docs, DISTANCE_CAP)
            .unwrap();
        let citing = graph
            .citing_pair_distance_distribution(&corpus, DISTANCE_CAP)
            .unwrap();
        assert!(
            citing.mean_finite_distance() < all.mean_finite_distance(),
            "citing mean {} should undercut the all-pairs mean {}",
            citing.mean_finite_distance(),
            all.mean_finite_distance()
        );
        assert!(citing.self_link_share() > all.self_link_share());
    }

    #[test]
    fn collaboration_models_shape_the_distance_profile() {
        let beyond_share = |collab: CollabModel| {
            let mut cfg = base_config(41);
            cfg.collaboration = collab;
            cfg.citations_per_doc = Some(0.0);
            let (corpus, _store, _truth) = generate(&cfg).unwrap();
            let graph = build_collaboration_graph(&corpus).unwrap();
            let all_docs: Vec<u32> = (0..corpus.document_count() as u32).collect();
            let dist = graph
                .all_pair_distance_distribution(&corpus, &all_docs, DISTANCE_CAP)
                .unwrap();
            (
                dist.finite.clone(),
                (dist.beyond_cap + dist.disconnected) as f64 / dist.total_pairs() as f64,
            )
        };
        let (geo_counts, geo_far) = beyond_share(CollabModel::RandomGeometric);
        let (pref_counts, pref_far) = beyond_share(CollabModel::Preferential);
        let (comm_counts, comm_far) = beyond_share(CollabModel::Community {
            communities: 12,
            crosslink: 0.08,
        });
        // Ring geometry keeps most pairs far apart; the urn model's hub
        // authors collapse path lengths.
        assert!(
            pref_far < geo_far,
            "preferential {pref_far} vs geometric {geo_far}"
        );
        assert_ne!(geo_counts, pref_counts);
        assert_ne!(geo_counts, comm_counts);
        assert_ne!(pref_counts, comm_counts);
        let _ = comm_far;
    }

    #[test]
    fn pipeline_fit_recovers_planted_slopes() {
        let mut cfg = base_config(17);
        cfg.n_docs = 400;
        cfg.n_authors = 200;
        cfg.true_beta = beta_with(&cfg.model, 0.0, &[(1, 1.5), (2, 2.0), (5, 0.8), (8, 1.0)]);
        cfg.citations_per_doc = Some(4.0);
        let (corpus, store, truth) = generate(&cfg).unwrap();
        let graph = build_collaboration_graph(&corpus).unwrap();

        let positives = extract_positive_pairs(&corpus, &store, &graph, DISTANCE_CAP).unwrap();
        assert_eq!(positives.skipped_missing_embedding, 0);
        let negatives = sample_negative_pairs(
            &corpus,
            &store,
            &graph,
            6000,
            99,
            false,
            false,
            DISTANCE_CAP,
        )
        .unwrap();
        let info = negatives.info;
        let dataset = assemble_dataset_with(
            positives.records,
            negatives.records,
            cfg.model.cutpoint,
            Some(info),
            Some(truth.norm),
        )
        .unwrap();
        let fit = fit_logistic(&dataset, &cfg.model, 1e-10, 60).unwrap();
        assert!(fit.converged);

        // Negative subsampling shifts only the intercept; undo it before
        // comparing. The wide 5-SE band keeps this single-seed smoke check
        // away from the edge; coverage across seeds is a separate suite.
        let b0 = fit.beta[0] + info.intercept_offset();
        assert!(
            (b0 - truth.beta[0]).abs() <= 5.0 * fit.se[0],
            "intercept {b0} vs planted {} (se {})",
            truth.beta[0],
            fit.se[0]
        );
        for k in 1..fit.beta.len() {
            assert!(
                (fit.beta[k] - truth.beta[k]).abs() <= 5.0 * fit.se[k],
                "coefficient {k}: fitted {} vs planted {} (se {})",
                fit.beta[k],
                truth.beta[k],
                fit.se[k]
            );
        }
    }
}
