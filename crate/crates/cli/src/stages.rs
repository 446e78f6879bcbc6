//! Pipeline stages. Each one reads its predecessors' dumps from the output
//! directory, computes, and writes its own artifacts atomically, so a failed
//! stage never leaves partial output behind.

use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use proxcite::corpus::{load_corpus_files, Corpus};
use proxcite::effects::{marginal_effects, prediction_grid, EffectMode};
use proxcite::fsutil;
use proxcite::graph::{build_collaboration_graph, CollabGraph};
use proxcite::model::{
    cutpoint_sweep, evaluate, fit_logistic_with, FitOptions, FitResult, SweepRow,
};
use proxcite::pairs::{
    assemble_dataset, assemble_dataset_with, extract_positive_pairs, sample_negative_pairs,
    Dataset, PairRecord,
};
use proxcite::report::{
    decile_breakdown, distance_shift_report, joint_distribution_report, render, sweep_report,
    ReportBundle, RunMeta,
};
use proxcite::semantics::{load_embeddings_file, EmbeddingStore};
use proxcite::synth::generate;

use crate::config::{RunConfig, Source};
use crate::failure::{Failure, StageResult};

/// Artifact layout inside one output directory.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn new(root: PathBuf) -> StageResult<OutDir> {
        fsutil::create_dir_all(&root)?;
        Ok(OutDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join(".lock")
    }

    pub fn error_path(&self) -> PathBuf {
        self.root.join("error.json")
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("run.toml")
    }

    pub fn authors(&self) -> PathBuf {
        self.root.join("corpus").join("authors.csv")
    }

    pub fn documents(&self) -> PathBuf {
        self.root.join("corpus").join("documents.jsonl")
    }

    pub fn citations(&self) -> PathBuf {
        self.root.join("corpus").join("citations.csv")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("corpus").join("embeddings.jsonl")
    }

    pub fn corpus_meta(&self) -> PathBuf {
        self.root.join("corpus").join("meta.json")
    }

    pub fn truth(&self) -> PathBuf {
        self.root.join("corpus").join("truth.json")
    }

    pub fn graph_bin(&self) -> PathBuf {
        self.root.join("graph").join("graph.bin")
    }

    pub fn graph_stats(&self) -> PathBuf {
        self.root.join("graph").join("stats.json")
    }

    pub fn dataset_csv(&self) -> PathBuf {
        self.root.join("pairs").join("dataset.csv")
    }

    pub fn dataset_meta(&self) -> PathBuf {
        self.root.join("pairs").join("dataset.json")
    }

    pub fn fit(&self) -> PathBuf {
        self.root.join("fit").join("fit.json")
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep").join("sweep.json")
    }

    pub fn ame(&self, mode: EffectMode) -> PathBuf {
        self.root.join("effects").join(format!("ame_{mode}.csv"))
    }

    pub fn grid_csv(&self) -> PathBuf {
        self.root.join("effects").join("grid.csv")
    }

    pub fn grid_anchors(&self) -> PathBuf {
        self.root.join("effects").join("grid_anchors.json")
    }
}

/// Sidecar describing the corpus dump; downstream stages read the embedding
/// width from here instead of re-deriving it from config.
#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    source: String,
    embedding_dim: usize,
    authors: usize,
    documents: usize,
    citations: usize,
    focal_authors: usize,
    embedded_documents: usize,
}

#[derive(Debug, Serialize)]
struct GraphStats {
    nodes: usize,
    edges: u64,
    components: u32,
}

fn require(path: &Path, producer: &str) -> StageResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::input(format!(
            "missing artifact {}; run {producer} first",
            path.display()
        )))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> StageResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    bytes.push(b'\n');
    fsutil::atomic_write(path, &bytes)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path, producer: &str) -> StageResult<T> {
    require(path, producer)?;
    let text = fsutil::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

struct Dump {
    corpus: Corpus,
    store: EmbeddingStore,
}

fn load_dump(out: &OutDir) -> StageResult<Dump> {
    let meta: CorpusMeta = read_json(&out.corpus_meta(), "`ingest` or `synth`")?;
    for path in [
        out.authors(),
        out.documents(),
        out.citations(),
        out.embeddings(),
    ] {
        require(&path, "`ingest` or `synth`")?;
    }
    let mut corpus = load_corpus_files(&out.authors(), &out.documents(), &out.citations())?;
    let store = load_embeddings_file(&out.embeddings(), meta.embedding_dim)?;
    corpus.set_embedding_flags(|id| store.contains(id));
    Ok(Dump { corpus, store })
}

fn write_dump(
    out: &OutDir,
    corpus: &Corpus,
    store: &EmbeddingStore,
    embedding_dim: usize,
    embedded: usize,
    source: &str,
) -> StageResult<()> {
    corpus.write_files(&out.authors(), &out.documents(), &out.citations())?;
    store.write_jsonl(&out.embeddings())?;
    let meta = CorpusMeta {
        source: source.to_owned(),
        embedding_dim,
        authors: corpus.author_count(),
        documents: corpus.document_count(),
        citations: corpus.citation_count(),
        focal_authors: corpus.focal_authors().len(),
        embedded_documents: embedded,
    };
    write_json(&out.corpus_meta(), &meta)
}

/// Loads external inputs, applies the focal restriction, resolves career
/// citations, checks embedding coverage, and writes the canonical dump.
pub fn ingest(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    let Some(inputs) = &config.inputs else {
        return Err(Failure::input(
            "ingest needs an [inputs] section in the config",
        ));
    };
    let mut corpus = load_corpus_files(&inputs.authors, &inputs.documents, &inputs.citations)?;
    info!(
        "loaded {} authors, {} documents, {} citations",
        corpus.author_count(),
        corpus.document_count(),
        corpus.citation_count()
    );
    if let Some(focal) = &config.focal {
        let selected =
            corpus.select_focal_authors(focal.min_papers, focal.min_field_share, &focal.field)?;
        corpus = corpus.expand_corpus(&selected)?;
        info!(
            "focal slice for {:?}: {} qualifying authors, corpus now {} authors, {} documents",
            focal.field,
            selected.len(),
            corpus.author_count(),
            corpus.document_count()
        );
    }
    let mut corpus = corpus.resolve_career_citations(inputs.career_mode.to_mode())?;
    let store = load_embeddings_file(&inputs.embeddings, inputs.embedding_dim)?;
    let embedded = corpus.set_embedding_flags(|id| store.contains(id));
    info!(
        "embeddings cover {embedded} of {} documents",
        corpus.document_count()
    );
    write_dump(
        out,
        &corpus,
        &store,
        inputs.embedding_dim,
        embedded,
        "ingest",
    )
}

/// Generates a synthetic corpus with known ground truth, writing the same
/// dump layout `ingest` produces plus the generating-truth sidecar.
pub fn synth(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    let Some(synth) = &config.synth else {
        return Err(Failure::input(
            "synth needs a [synth] section in the config",
        ));
    };
    let (mut corpus, store, truth) = generate(synth)?;
    let embedded = corpus.set_embedding_flags(|id| store.contains(id));
    info!(
        "generated {} authors, {} documents, {} citations",
        corpus.author_count(),
        corpus.document_count(),
        corpus.citation_count()
    );
    write_json(&out.truth(), &truth)?;
    write_dump(out, &corpus, &store, synth.embedding.dim, embedded, "synth")
}

/// Builds the co-authorship graph from the corpus dump.
pub fn graph(out: &OutDir) -> StageResult<()> {
    let dump = load_dump(out)?;
    let graph = build_collaboration_graph(&dump.corpus)?;
    graph.write_binary(&out.graph_bin())?;
    let stats = GraphStats {
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        components: graph.component_count(),
    };
    info!(
        "graph: {} nodes, {} edges, {} components",
        stats.nodes, stats.edges, stats.components
    );
    write_json(&out.graph_stats(), &stats)
}

fn load_graph(out: &OutDir) -> StageResult<CollabGraph> {
    require(&out.graph_bin(), "`graph`")?;
    Ok(CollabGraph::read_binary(&out.graph_bin())?)
}

/// Extracts citing pairs, samples negatives, and assembles the normalized
/// estimation dataset.
pub fn pairs(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    let dump = load_dump(out)?;
    let graph = load_graph(out)?;
    let p = &config.pairs;
    let positives = extract_positive_pairs(&dump.corpus, &dump.store, &graph, p.cap)?;
    if positives.skipped_missing_embedding > 0 {
        warn!(
            "{} citation links dropped for missing embeddings",
            positives.skipped_missing_embedding
        );
    }
    let negatives = sample_negative_pairs(
        &dump.corpus,
        &dump.store,
        &graph,
        p.negatives,
        p.seed,
        p.matched,
        p.strict_year,
        p.cap,
    )?;
    let dataset = assemble_dataset(positives, negatives, config.model.cutpoint)?;
    info!(
        "dataset: {} rows ({} positive) at cutpoint {}",
        dataset.records.len(),
        dataset.records.iter().filter(|r| r.label == 1).count(),
        dataset.cutpoint
    );
    dataset.write_files(&dump.corpus, &out.dataset_csv(), &out.dataset_meta())?;
    Ok(())
}

fn load_dataset(out: &OutDir, corpus: &Corpus) -> StageResult<Dataset> {
    require(&out.dataset_csv(), "`pairs`")?;
    require(&out.dataset_meta(), "`pairs`")?;
    Ok(Dataset::load_files(
        corpus,
        &out.dataset_csv(),
        &out.dataset_meta(),
    )?)
}

/// Fits the configured model on the assembled dataset.
pub fn fit(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    let dump = load_dump(out)?;
    let dataset = load_dataset(out, &dump.corpus)?;
    let m = &config.model;
    let options = FitOptions {
        group_ridge: m.group_ridge,
    };
    let result = fit_logistic_with(&dataset, &m.spec(), m.tolerance, m.max_iterations, options)?;
    if !result.converged {
        return Err(Failure::numeric(format!(
            "solver did not converge within {} iterations (gradient norm {:.3e})",
            m.max_iterations, result.gradient_norm
        )));
    }
    let metrics = evaluate(&result, &dataset)?;
    info!(
        "fit: {} iterations, logloss {:.6}, auc {}",
        result.iterations,
        metrics.logloss,
        metrics
            .auc
            .map_or_else(|| "n/a".to_owned(), |a| format!("{a:.4}"))
    );
    result.write_file(&dump.corpus, &out.fit())?;
    Ok(())
}

/// Refits the model across distance cut-points, plus the continuous
/// baseline, reassembling each granularity from the stored pair sample.
pub fn sweep(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    let dump = load_dump(out)?;
    let dataset = load_dataset(out, &dump.corpus)?;
    let positives: Vec<PairRecord> = dataset
        .records
        .iter()
        .filter(|r| r.label == 1)
        .cloned()
        .collect();
    let negatives: Vec<PairRecord> = dataset
        .records
        .iter()
        .filter(|r| r.label == 0)
        .cloned()
        .collect();
    let sampling = dataset.sampling;
    let mut builder = |cutpoint: usize| {
        assemble_dataset_with(
            positives.clone(),
            negatives.clone(),
            cutpoint,
            sampling,
            None,
        )
    };
    let m = &config.model;
    let rows = cutpoint_sweep(
        &mut builder,
        &config.sweep.cutpoints,
        config.sweep.continuous,
        &m.spec(),
        m.tolerance,
        m.max_iterations,
    )?;
    info!("sweep: {} models", rows.len());
    write_json(&out.sweep(), &rows)
}

/// Evaluates probability-scale marginal effects under each configured mode.
pub fn ame(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    let dump = load_dump(out)?;
    let dataset = load_dataset(out, &dump.corpus)?;
    require(&out.fit(), "`fit`")?;
    let fit = FitResult::load_file(&dump.corpus, &out.fit())?;
    for mode in config.effects.parsed_modes()? {
        let result = marginal_effects(&fit, &dataset, mode, config.effects.bootstrap())?;
        result.write_csv(&out.ame(mode))?;
        info!("ame {mode}: {} covariates", result.effects.len());
    }
    Ok(())
}

/// Renders the predicted-probability surface over two covariates.
pub fn grid(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    let dump = load_dump(out)?;
    let dataset = load_dataset(out, &dump.corpus)?;
    require(&out.fit(), "`fit`")?;
    let fit = FitResult::load_file(&dump.corpus, &out.fit())?;
    let e = &config.effects;
    let grid = prediction_grid(&fit, &dataset, &e.grid_x, &e.grid_y, e.grid_resolution)?;
    grid.write_csv(&out.grid_csv())?;
    grid.write_anchors(&out.grid_anchors())?;
    Ok(())
}

/// Cheap order-sensitive fingerprint of the corpus dump files.
fn corpus_fingerprint(out: &OutDir) -> StageResult<String> {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for path in [out.authors(), out.documents(), out.citations()] {
        for &b in fsutil::read_bytes(&path)?.iter() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x100_0000_01b3);
        }
    }
    Ok(format!("{h:016x}"))
}

/// Assembles distribution tables and figures and renders the bundle with
/// its manifest.
pub fn report(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    let dump = load_dump(out)?;
    let graph = load_graph(out)?;
    let dataset = load_dataset(out, &dump.corpus)?;

    let meta = RunMeta {
        seed: Some(config.pairs.seed),
        corpus_hash: Some(corpus_fingerprint(out)?),
        config: config.manifest_echo(),
    };
    let mut bundle = ReportBundle::new(meta);

    let cap = config.pairs.cap;
    let docs: Vec<u32> = (0..dump.corpus.document_count() as u32).collect();
    let all = graph.all_pair_distance_distribution(&dump.corpus, &docs, cap)?;
    let citing = graph.citing_pair_distance_distribution(&dump.corpus, cap)?;
    if citing.total_pairs() == 0 {
        warn!("no citing pairs; skipping the distance-shift table");
    } else {
        distance_shift_report(&all, &citing)?.attach(&mut bundle)?;
    }
    joint_distribution_report(&dataset.records, config.report.similarity_bins)?
        .attach(&mut bundle)?;
    decile_breakdown(&dataset.records, &dump.corpus)?.attach(&mut bundle)?;
    if out.sweep().is_file() {
        let rows: Vec<SweepRow> = read_json(&out.sweep(), "`sweep`")?;
        sweep_report(&rows)?.attach(&mut bundle)?;
    }
    let written = render(&bundle, out.root())?;
    info!("report: {} files", written.len());
    Ok(())
}

/// Runs every stage in order: the corpus source, then graph, pairs, fit,
/// sweep, effects, grid, and report.
pub fn all(config: &RunConfig, out: &OutDir) -> StageResult<()> {
    match config.corpus_source()? {
        Source::Ingest => ingest(config, out)?,
        Source::Synth => synth(config, out)?,
    }
    graph(out)?;
    pairs(config, out)?;
    fit(config, out)?;
    sweep(config, out)?;
    ame(config, out)?;
    grid(config, out)?;
    report(config, out)
}
