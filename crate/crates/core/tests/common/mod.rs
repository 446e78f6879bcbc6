//! Shared fixtures for the integration suites: reference graph algorithms,
//! corpus construction through the text loaders, planted-dataset assembly,
//! and the blocked mean shape used by the streaming reductions.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::sync::{Mutex, MutexGuard};

use proxcite::corpus::{load_corpus, Corpus};
use proxcite::graph::{build_collaboration_graph, DistanceClass};
use proxcite::pairs::{
    assemble_dataset_with, extract_positive_pairs, sample_negative_pairs, Dataset, PairRecord,
    SamplingInfo,
};
use proxcite::rng::StreamRng;
use proxcite::semantics::EmbeddingStore;
use proxcite::synth::{generate, SynthConfig, SynthTruth};

/// Marker for unreachable pairs in the reference distance matrix.
pub const UNREACHED: u32 = u32::MAX;

/// Distance cap matching the model's reference class.
pub const CAP: u32 = 6;

/// Serializes the timed suites so a wall-clock budget is never distorted by
/// unrelated tests saturating the thread pool.
pub fn timed() -> MutexGuard<'static, ()> {
    static GATE: Mutex<()> = Mutex::new(());
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn pass(criterion: u32, name: &str, detail: &str) {
    println!("acceptance {criterion:02} {name}: PASS ({detail})");
}

/// All-pairs shortest hop counts by the cubic reference recurrence, kept in
/// the textbook triple-index form.
#[allow(clippy::needless_range_loop)]
pub fn floyd_warshall(n: usize, edges: &[(u32, u32)]) -> Vec<Vec<u32>> {
    let mut dist = vec![vec![UNREACHED; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in edges {
        if a != b {
            dist[a as usize][b as usize] = 1;
            dist[b as usize][a as usize] = 1;
        }
    }
    for k in 0..n {
        for i in 0..n {
            let dik = dist[i][k];
            if dik == UNREACHED {
                continue;
            }
            for j in 0..n {
                let dkj = dist[k][j];
                if dkj != UNREACHED && dik + dkj < dist[i][j] {
                    dist[i][j] = dik + dkj;
                }
            }
        }
    }
    dist
}

/// Graph with node count uniform in `lo..=hi` and independent edges drawn
/// with a probability uniform in [0.02, 0.2].
pub fn random_graph(rng: &mut StreamRng, lo: u64, hi: u64) -> (usize, Vec<(u32, u32)>) {
    let n = (lo + rng.next_below(hi - lo + 1)) as usize;
    let p = 0.02 + 0.18 * rng.next_f64();
    let mut edges = Vec::new();
    for a in 0..n as u32 {
        for b in (a + 1)..n as u32 {
            if rng.next_f64() < p {
                edges.push((a, b));
            }
        }
    }
    (n, edges)
}

/// Reference distance class of a document pair: minimum cross-byline hop
/// count, with six or beyond (and disconnected) folded into the reference.
pub fn reference_class(dist: &[Vec<u32>], byline_a: &[u32], byline_b: &[u32]) -> DistanceClass {
    let mut best = UNREACHED;
    for &a in byline_a {
        for &b in byline_b {
            best = best.min(dist[a as usize][b as usize]);
        }
    }
    DistanceClass::from_distance((best < CAP).then_some(best))
}

/// Builds a corpus through the text loaders from literal author, document,
/// and citation tables. Documents keep table order, so document index `i`
/// is the `i`-th tuple; likewise for authors.
pub fn corpus_from_tables(
    authors: &[(&str, u64)],
    docs: &[(&str, i32, Vec<String>)],
    citations: &[(&str, &str)],
) -> Corpus {
    let mut author_csv = String::from("author_id,career_citations\n");
    for (id, career) in authors {
        writeln!(author_csv, "{id},{career}").unwrap();
    }
    let mut doc_jsonl = String::new();
    for (id, year, byline) in docs {
        let quoted: Vec<String> = byline.iter().map(|a| format!("{a:?}")).collect();
        writeln!(
            doc_jsonl,
            "{{\"id\":{id:?},\"year\":{year},\"field\":\"synthetic\",\"authors\":[{}]}}",
            quoted.join(",")
        )
        .unwrap();
    }
    let mut cite_csv = String::from("citing_id,cited_id\n");
    for (citing, cited) in citations {
        writeln!(cite_csv, "{citing},{cited}").unwrap();
    }
    load_corpus(
        author_csv.as_bytes(),
        "authors.csv",
        doc_jsonl.as_bytes(),
        "documents.jsonl",
        cite_csv.as_bytes(),
        "citations.csv",
    )
    .expect("corpus from literal tables")
}

/// Generated corpus with its extracted estimation sample. The dataset keeps
/// the generator's fixed normalization bounds so fitted coefficients are
/// directly comparable with the planted ones, and the raw positive and
/// negative records stay available for reassembly at other cut-points.
pub struct Planted {
    pub corpus: Corpus,
    pub store: EmbeddingStore,
    pub truth: SynthTruth,
    pub positives: Vec<PairRecord>,
    pub negatives: Vec<PairRecord>,
    pub info: SamplingInfo,
    pub dataset: Dataset,
}

pub fn planted_dataset(config: &SynthConfig, total_rows: u64, negative_seed: u64) -> Planted {
    let (corpus, store, truth) = generate(config).expect("synthetic corpus");
    let graph = build_collaboration_graph(&corpus).expect("collaboration graph");
    let positives = extract_positive_pairs(&corpus, &store, &graph, CAP).expect("positive pairs");
    assert_eq!(positives.skipped_missing_embedding, 0);
    let n_pos = positives.records.len() as u64;
    assert!(
        n_pos > 0 && n_pos < total_rows,
        "positive count {n_pos} incompatible with a {total_rows}-row sample"
    );
    let negatives = sample_negative_pairs(
        &corpus,
        &store,
        &graph,
        total_rows - n_pos,
        negative_seed,
        false,
        false,
        CAP,
    )
    .expect("negative pairs");
    let dataset = assemble_dataset_with(
        positives.records.clone(),
        negatives.records.clone(),
        config.model.cutpoint,
        Some(negatives.info),
        Some(truth.norm),
    )
    .expect("assembled dataset");
    Planted {
        corpus,
        store,
        truth,
        positives: positives.records,
        negatives: negatives.records,
        info: negatives.info,
        dataset,
    }
}

/// Mean with the fixed-block pairwise reduction used by the streaming paths,
/// reproducing their floating-point accumulation order exactly.
pub fn block_tree_mean(values: &[f64]) -> f64 {
    let mut partials: Vec<f64> = values.chunks(8192).map(|c| c.iter().sum::<f64>()).collect();
    if partials.is_empty() {
        return f64::NAN;
    }
    while partials.len() > 1 {
        partials = partials
            .chunks(2)
            .map(|p| if p.len() == 2 { p[0] + p[1] } else { p[0] })
            .collect();
    }
    partials[0] / values.len() as f64
}

/// Peak resident set size of the current process in KiB from the kernel's
/// accounting, where available.
pub fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}
