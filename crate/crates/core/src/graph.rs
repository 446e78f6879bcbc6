//! Author collaboration network and distance queries over it.
//!
//! The graph lives in compressed sparse row form: `row_ptr[i]..row_ptr[i+1]`
//! indexes the sorted neighbour slice of node `i`. Nodes are the corpus's
//! dense author indices, so no separate id mapping is needed. All distance
//! work is bounded breadth-first search; the all-pairs document distribution
//! runs one multi-source BFS per document instead of touching the quadratic
//! pair space, which is what makes billions of potential pairs countable.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::fsutil;

/// Highest distance cap supported by the u8 distance buffers.
pub const MAX_CAP: u32 = 200;

/// Distance class of a document pair: exact degrees of separation 0..=5, with
/// everything at six or beyond (including disconnected pairs) collapsed into
/// the reference class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DistanceClass {
    D0,
    D1,
    D2,
    D3,
    D4,
    D5,
    SixPlus,
}

pub const DISTANCE_CLASSES: [DistanceClass; 7] = [
    DistanceClass::D0,
    DistanceClass::D1,
    DistanceClass::D2,
    DistanceClass::D3,
    DistanceClass::D4,
    DistanceClass::D5,
    DistanceClass::SixPlus,
];

impl DistanceClass {
    /// Classifies a bounded distance; `None` means unresolved within the cap
    /// or disconnected.
    pub fn from_distance(d: Option<u32>) -> Self {
        match d {
            Some(0) => DistanceClass::D0,
            Some(1) => DistanceClass::D1,
            Some(2) => DistanceClass::D2,
            Some(3) => DistanceClass::D3,
            Some(4) => DistanceClass::D4,
            Some(5) => DistanceClass::D5,
            _ => DistanceClass::SixPlus,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        DISTANCE_CLASSES.get(i).copied()
    }

    /// Numeric distance with the reference class mapped to 6, the convention
    /// used by the continuous-distance model variant.
    pub fn distance_value(self) -> u32 {
        self as u32
    }

    pub fn is_reference(self) -> bool {
        self == DistanceClass::SixPlus
    }
}

impl fmt::Display for DistanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceClass::SixPlus => write!(f, "6+"),
            other => write!(f, "{}", other.distance_value()),
        }
    }
}

impl FromStr for DistanceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" => Ok(DistanceClass::D0),
            "1" => Ok(DistanceClass::D1),
            "2" => Ok(DistanceClass::D2),
            "3" => Ok(DistanceClass::D3),
            "4" => Ok(DistanceClass::D4),
            "5" => Ok(DistanceClass::D5),
            "6+" => Ok(DistanceClass::SixPlus),
            other => Err(Error::InvalidArgument(format!(
                "unknown distance class {other:?}"
            ))),
        }
    }
}

/// Unordered pairs `n * (n - 1) / 2` without intermediate overflow.
pub fn potential_pairs(n: u64) -> u64 {
    if n.is_multiple_of(2) {
        (n / 2) * n.saturating_sub(1)
    } else {
        n * ((n - 1) / 2)
    }
}

/// Distance histogram over document pairs. `finite[d]` counts pairs at exact
/// distance `d` for `d < cap`; connected pairs at `cap` or beyond land in
/// `beyond_cap`, pairs across components in `disconnected`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceDistribution {
    pub cap: u32,
    pub finite: Vec<u64>,
    pub beyond_cap: u64,
    pub disconnected: u64,
}

impl DistanceDistribution {
    pub fn empty(cap: u32) -> Self {
        DistanceDistribution {
            cap,
            finite: vec![0; cap as usize],
            beyond_cap: 0,
            disconnected: 0,
        }
    }

    pub fn total_pairs(&self) -> u64 {
        self.connected_pairs() + self.disconnected
    }

    pub fn connected_pairs(&self) -> u64 {
        self.finite.iter().sum::<u64>() + self.beyond_cap
    }

    /// Pairs whose exact distance was resolved below the cap.
    pub fn finite_pairs(&self) -> u64 {
        self.finite.iter().sum()
    }

    /// Share of pairs at exact distance `d`; `d == cap` addresses the merged
    /// at-or-beyond-cap bucket (including disconnected pairs).
    pub fn share(&self, d: u32) -> f64 {
        let total = self.total_pairs();
        if total == 0 {
            return 0.0;
        }
        let count = if d < self.cap {
            self.finite[d as usize]
        } else {
            self.beyond_cap + self.disconnected
        };
        count as f64 / total as f64
    }

    /// Mean distance over pairs resolved below the cap.
    pub fn mean_finite_distance(&self) -> f64 {
        let n = self.finite_pairs();
        if n == 0 {
            return f64::NAN;
        }
        let weighted: u64 = self
            .finite
            .iter()
            .enumerate()
            .map(|(d, &c)| d as u64 * c)
            .sum();
        weighted as f64 / n as f64
    }

    /// Bucket with the largest mass; `cap` denotes the merged beyond bucket.
    pub fn modal_distance(&self) -> u32 {
        let mut best = self.cap;
        let mut best_count = self.beyond_cap + self.disconnected;
        for (d, &c) in self.finite.iter().enumerate().rev() {
            if c >= best_count {
                best = d as u32;
                best_count = c;
            }
        }
        best
    }

    pub fn self_link_share(&self) -> f64 {
        self.share(0)
    }
}

/// Undirected collaboration graph in CSR form with component labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollabGraph {
    row_ptr: Vec<usize>,
    col: Vec<u32>,
    component_id: Vec<u32>,
    component_count: u32,
}

impl CollabGraph {
    /// Builds a graph on `node_count` nodes from undirected edge pairs.
    /// Self-loops are dropped and duplicate edges deduplicated.
    pub fn from_edges(node_count: usize, edges: &[(u32, u32)]) -> Result<CollabGraph> {
        let mut directed = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a as usize >= node_count || b as usize >= node_count {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a}, {b}) outside node range 0..{node_count}"
                )));
            }
            if a != b {
                directed.push((a, b));
                directed.push((b, a));
            }
        }
        directed.sort_unstable();
        directed.dedup();

        let mut row_ptr = vec![0usize; node_count + 1];
        for &(src, _) in &directed {
            row_ptr[src as usize + 1] += 1;
        }
        for i in 0..node_count {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col: Vec<u32> = directed.iter().map(|&(_, dst)| dst).collect();

        let mut graph = CollabGraph {
            row_ptr,
            col,
            component_id: Vec::new(),
            component_count: 0,
        };
        graph.label_components();
        Ok(graph)
    }

    fn label_components(&mut self) {
        let n = self.node_count();
        let mut labels = vec![u32::MAX; n];
        let mut next = 0u32;
        let mut queue = Vec::new();
        for start in 0..n {
            if labels[start] != u32::MAX {
                continue;
            }
            labels[start] = next;
            queue.clear();
            queue.push(start as u32);
            let mut head = 0;
            while head < queue.len() {
                let u = queue[head];
                head += 1;
                for &v in self.neighbours(u) {
                    if labels[v as usize] == u32::MAX {
                        labels[v as usize] = next;
                        queue.push(v);
                    }
                }
            }
            next += 1;
        }
        self.component_id = labels;
        self.component_count = next;
    }

    pub fn node_count(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Undirected edge count.
    pub fn edge_count(&self) -> u64 {
        (self.col.len() / 2) as u64
    }

    pub fn neighbours(&self, node: u32) -> &[u32] {
        &self.col[self.row_ptr[node as usize]..self.row_ptr[node as usize + 1]]
    }

    pub fn degree(&self, node: u32) -> usize {
        self.neighbours(node).len()
    }

    pub fn component(&self, node: u32) -> u32 {
        self.component_id[node as usize]
    }

    pub fn component_count(&self) -> u32 {
        self.component_count
    }

    /// Component of a document, via its byline (a byline is a clique, so all
    /// its authors share one component).
    pub fn document_component(&self, corpus: &Corpus, doc: u32) -> u32 {
        let byline = &corpus.documents()[doc as usize].authors;
        debug_assert!(byline
            .iter()
            .all(|&a| self.component(a) == self.component(byline[0])));
        self.component(byline[0])
    }

    /// Edges with the smaller endpoint first, in CSR order.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.node_count() as u32).flat_map(move |i| {
            self.neighbours(i)
                .iter()
                .copied()
                .filter(move |&j| i < j)
                .map(move |j| (i, j))
        })
    }

    /// Minimum hop distance from any source, for every node within `cap`
    /// (inclusive). Sources map to 0; unreachable or beyond-cap nodes are
    /// absent from the result.
    pub fn bounded_bfs(&self, sources: &[u32], cap: u32) -> Result<HashMap<u32, u32>> {
        if sources.is_empty() {
            return Err(Error::InvalidArgument("empty BFS source set".into()));
        }
        if cap > MAX_CAP {
            return Err(Error::InvalidArgument(format!(
                "cap {cap} exceeds supported maximum {MAX_CAP}"
            )));
        }
        for &s in sources {
            if s as usize >= self.node_count() {
                return Err(Error::InvalidArgument(format!(
                    "unknown node {s} in BFS sources"
                )));
            }
        }
        let mut scratch = BfsScratch::new(self.node_count(), 0);
        self.bfs_levels(sources, cap, &mut scratch);
        let mut out = HashMap::with_capacity(scratch.queue.len());
        for &node in &scratch.queue {
            out.insert(node, u32::from(scratch.dist[node as usize]));
        }
        Ok(out)
    }

    /// Level BFS into reusable scratch buffers, bounded at `max_dist`
    /// inclusive. Afterwards `scratch.queue` lists visited nodes in
    /// non-decreasing distance order with distances in `scratch.dist`.
    fn bfs_levels(&self, sources: &[u32], max_dist: u32, scratch: &mut BfsScratch) {
        scratch.begin();
        for &src in sources {
            if scratch.node_epoch[src as usize] != scratch.epoch {
                scratch.node_epoch[src as usize] = scratch.epoch;
                scratch.dist[src as usize] = 0;
                scratch.queue.push(src);
            }
        }
        let mut head = 0;
        while head < scratch.queue.len() {
            let u = scratch.queue[head];
            head += 1;
            let du = u32::from(scratch.dist[u as usize]);
            if du >= max_dist {
                continue;
            }
            for &v in self.neighbours(u) {
                if scratch.node_epoch[v as usize] != scratch.epoch {
                    scratch.node_epoch[v as usize] = scratch.epoch;
                    scratch.dist[v as usize] = (du + 1) as u8;
                    scratch.queue.push(v);
                }
            }
        }
    }

    /// Distance class of a document pair: minimum over all cross-document
    /// author pairs, with distances at or beyond `cap` (and disconnected
    /// pairs) collapsing into the reference class.
    pub fn document_pair_distance(
        &self,
        corpus: &Corpus,
        doc_a: u32,
        doc_b: u32,
        cap: u32,
    ) -> Result<DistanceClass> {
        Ok(DistanceClass::from_distance(
            self.document_pair_distance_raw(corpus, doc_a, doc_b, cap)?,
        ))
    }

    /// Exact pair distance when it is below `cap`, `None` otherwise.
    pub fn document_pair_distance_raw(
        &self,
        corpus: &Corpus,
        doc_a: u32,
        doc_b: u32,
        cap: u32,
    ) -> Result<Option<u32>> {
        if cap == 0 || cap > MAX_CAP {
            return Err(Error::InvalidArgument(format!(
                "cap {cap} outside supported range 1..={MAX_CAP}"
            )));
        }
        let docs = corpus.documents();
        let byline_a = &docs[doc_a as usize].authors;
        let byline_b = &docs[doc_b as usize].authors;
        for &a in byline_a.iter().chain(byline_b) {
            if a as usize >= self.node_count() {
                return Err(Error::UnknownAuthor(corpus.author_id(a).to_owned()));
            }
        }
        let mut scratch = BfsScratch::new(self.node_count(), 0);
        Ok(self.pair_distance_with(byline_a, byline_b, cap, &mut scratch))
    }

    fn pair_distance_with(
        &self,
        byline_a: &[u32],
        byline_b: &[u32],
        cap: u32,
        scratch: &mut BfsScratch,
    ) -> Option<u32> {
        self.bfs_levels(byline_a, cap - 1, scratch);
        let mut best: Option<u32> = None;
        for &b in byline_b {
            if scratch.node_epoch[b as usize] == scratch.epoch {
                let d = u32::from(scratch.dist[b as usize]);
                if best.is_none_or(|cur| d < cur) {
                    best = Some(d);
                }
            }
        }
        best
    }

    /// Distance histogram over all unordered pairs of `docs`, via one
    /// multi-source BFS per document plus exact connectivity counts from
    /// component labels. Runs in parallel with order-free integer reduction.
    pub fn all_pair_distance_distribution(
        &self,
        corpus: &Corpus,
        docs: &[u32],
        cap: u32,
    ) -> Result<DistanceDistribution> {
        if cap == 0 || cap > MAX_CAP {
            return Err(Error::InvalidArgument(format!(
                "cap {cap} outside supported range 1..={MAX_CAP}"
            )));
        }
        let n_docs_total = corpus.document_count();
        let mut in_set = vec![false; n_docs_total];
        for &d in docs {
            if d as usize >= n_docs_total {
                return Err(Error::UnknownDocument(format!("#{d}")));
            }
            if std::mem::replace(&mut in_set[d as usize], true) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate document {} in distribution subset",
                    corpus.doc_id(d)
                )));
            }
        }

        let mut comp_docs = vec![0u64; self.component_count() as usize];
        for &d in docs {
            comp_docs[self.document_component(corpus, d) as usize] += 1;
        }
        let connected: u64 = comp_docs.iter().map(|&m| potential_pairs(m)).sum();
        let total = potential_pairs(docs.len() as u64);

        const CHUNK: usize = 256;
        let node_count = self.node_count();
        let ordered_counts = docs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut scratch = BfsScratch::new(node_count, n_docs_total);
                let mut counts = vec![0u64; cap as usize];
                for &source_doc in chunk {
                    let byline = &corpus.documents()[source_doc as usize].authors;
                    self.bfs_levels(byline, cap - 1, &mut scratch);
                    // Queue order is non-decreasing in distance, so the first
                    // touch of a document fixes its minimum distance.
                    for qi in 0..scratch.queue.len() {
                        let node = scratch.queue[qi];
                        let d = scratch.dist[node as usize] as usize;
                        for &doc in corpus.documents_of_author(node) {
                            if scratch.doc_epoch[doc as usize] != scratch.epoch {
                                scratch.doc_epoch[doc as usize] = scratch.epoch;
                                if doc != source_doc && in_set[doc as usize] {
                                    counts[d] += 1;
                                }
                            }
                        }
                    }
                }
                counts
            })
            .reduce(
                || vec![0u64; cap as usize],
                |mut acc, part| {
                    for (a, p) in acc.iter_mut().zip(part) {
                        *a += p;
                    }
                    acc
                },
            );

        let mut finite = Vec::with_capacity(cap as usize);
        for (d, &c) in ordered_counts.iter().enumerate() {
            debug_assert!(c % 2 == 0, "ordered count at distance {d} is odd: {c}");
            finite.push(c / 2);
        }
        let finite_total: u64 = finite.iter().sum();
        Ok(DistanceDistribution {
            cap,
            finite,
            beyond_cap: connected - finite_total,
            disconnected: total - connected,
        })
    }

    /// Distance classes for an ordered pair list, in input order. Pairs are
    /// grouped by their first document so each distinct source byline costs
    /// one BFS; the bulk featurization path for pair datasets.
    pub fn document_pair_distances(
        &self,
        corpus: &Corpus,
        pairs: &[(u32, u32)],
        cap: u32,
    ) -> Result<Vec<DistanceClass>> {
        if cap == 0 || cap > MAX_CAP {
            return Err(Error::InvalidArgument(format!(
                "cap {cap} outside supported range 1..={MAX_CAP}"
            )));
        }
        let n_docs = corpus.document_count();
        for &(a, b) in pairs {
            if a as usize >= n_docs || b as usize >= n_docs {
                return Err(Error::UnknownDocument(format!("#{}", a.max(b))));
            }
        }
        let mut groups: HashMap<u32, Vec<(usize, u32)>> = HashMap::new();
        for (idx, &(a, b)) in pairs.iter().enumerate() {
            groups.entry(a).or_default().push((idx, b));
        }
        let mut sources: Vec<(u32, Vec<(usize, u32)>)> = groups.into_iter().collect();
        sources.sort_unstable_by_key(|(a, _)| *a);

        const CHUNK: usize = 64;
        let node_count = self.node_count();
        let chunked: Vec<Vec<(usize, DistanceClass)>> = sources
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut scratch = BfsScratch::new(node_count, 0);
                let mut out = Vec::new();
                for (source_doc, targets) in chunk {
                    let byline = &corpus.documents()[*source_doc as usize].authors;
                    self.bfs_levels(byline, cap - 1, &mut scratch);
                    for &(idx, target) in targets {
                        let target_byline = &corpus.documents()[target as usize].authors;
                        let mut best: Option<u32> = None;
                        for &b in target_byline {
                            if scratch.node_epoch[b as usize] == scratch.epoch {
                                let d = u32::from(scratch.dist[b as usize]);
                                if best.is_none_or(|cur| d < cur) {
                                    best = Some(d);
                                }
                            }
                        }
                        out.push((idx, DistanceClass::from_distance(best)));
                    }
                }
                out
            })
            .collect();

        let mut classes = vec![DistanceClass::SixPlus; pairs.len()];
        for part in chunked {
            for (idx, class) in part {
                classes[idx] = class;
            }
        }
        Ok(classes)
    }

    /// Distance histogram over exactly the citing-cited pairs in the corpus
    /// citation table, one BFS per citing document.
    pub fn citing_pair_distance_distribution(
        &self,
        corpus: &Corpus,
        cap: u32,
    ) -> Result<DistanceDistribution> {
        if cap == 0 || cap > MAX_CAP {
            return Err(Error::InvalidArgument(format!(
                "cap {cap} outside supported range 1..={MAX_CAP}"
            )));
        }
        let citing_docs: Vec<u32> = (0..corpus.document_count() as u32)
            .filter(|&d| !corpus.cited_documents(d).is_empty())
            .collect();
        let node_count = self.node_count();

        const CHUNK: usize = 256;
        let (finite, beyond_cap, disconnected) = citing_docs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut scratch = BfsScratch::new(node_count, 0);
                let mut finite = vec![0u64; cap as usize];
                let mut beyond = 0u64;
                let mut cross = 0u64;
                for &citing in chunk {
                    let byline = &corpus.documents()[citing as usize].authors;
                    self.bfs_levels(byline, cap - 1, &mut scratch);
                    let citing_comp = self.component(byline[0]);
                    for &cited in corpus.cited_documents(citing) {
                        let cited_byline = &corpus.documents()[cited as usize].authors;
                        let mut best: Option<u32> = None;
                        for &b in cited_byline {
                            if scratch.node_epoch[b as usize] == scratch.epoch {
                                let d = u32::from(scratch.dist[b as usize]);
                                if best.is_none_or(|cur| d < cur) {
                                    best = Some(d);
                                }
                            }
                        }
                        match best {
                            Some(d) => finite[d as usize] += 1,
                            None if self.component(cited_byline[0]) == citing_comp => beyond += 1,
                            None => cross += 1,
                        }
                    }
                }
                (finite, beyond, cross)
            })
            .reduce(
                || (vec![0u64; cap as usize], 0, 0),
                |mut acc, part| {
                    for (a, p) in acc.0.iter_mut().zip(part.0) {
                        *a += p;
                    }
                    (acc.0, acc.1 + part.1, acc.2 + part.2)
                },
            );

        Ok(DistanceDistribution {
            cap,
            finite,
            beyond_cap,
            disconnected,
        })
    }

    /// Writes the edge list in the packed binary format.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write_with(path, |buf| {
            buf.extend_from_slice(b"CPGX");
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(&(self.node_count() as u32).to_le_bytes());
            buf.extend_from_slice(&self.edge_count().to_le_bytes());
            for (a, b) in self.undirected_edges() {
                buf.extend_from_slice(&a.to_le_bytes());
                buf.extend_from_slice(&b.to_le_bytes());
            }
            Ok(())
        })
    }

    /// Reads a graph written by [`CollabGraph::write_binary`].
    pub fn read_binary(path: &Path) -> Result<CollabGraph> {
        let bytes = fsutil::read_bytes(path)?;
        let format_err = |message: String| Error::Format {
            path: path.display().to_string(),
            message,
        };
        if bytes.len() < 20 {
            return Err(format_err("truncated header".into()));
        }
        if &bytes[0..4] != b"CPGX" {
            return Err(format_err("bad magic, expected CPGX".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != 1 {
            return Err(format_err(format!("unsupported version {version}")));
        }
        let node_count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let edge_count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let expected = 20 + edge_count as usize * 8;
        if bytes.len() != expected {
            return Err(format_err(format!(
                "expected {expected} bytes for {edge_count} edges, found {}",
                bytes.len()
            )));
        }
        let mut edges = Vec::with_capacity(edge_count as usize);
        for i in 0..edge_count as usize {
            let off = 20 + i * 8;
            let a = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            let b = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
            if a as usize >= node_count || b as usize >= node_count {
                return Err(format_err(format!(
                    "edge ({a}, {b}) outside node range 0..{node_count}"
                )));
            }
            edges.push((a, b));
        }
        CollabGraph::from_edges(node_count, &edges)
    }
}

/// Reusable per-thread BFS buffers with epoch-based visited marks, so a
/// worker clears nothing between runs.
struct BfsScratch {
    dist: Vec<u8>,
    node_epoch: Vec<u32>,
    doc_epoch: Vec<u32>,
    epoch: u32,
    queue: Vec<u32>,
}

impl BfsScratch {
    fn new(node_count: usize, doc_count: usize) -> Self {
        BfsScratch {
            dist: vec![0; node_count],
            node_epoch: vec![0; node_count],
            doc_epoch: vec![0; doc_count],
            epoch: 0,
            queue: Vec::new(),
        }
    }

    fn begin(&mut self) {
        self.epoch += 1;
        self.queue.clear();
    }
}

/// Builds the collaboration graph: an edge joins two authors iff some
/// document lists both on its byline.
pub fn build_collaboration_graph(corpus: &Corpus) -> Result<CollabGraph> {
    let mut edges = Vec::new();
    for doc in corpus.documents() {
        for (i, &a) in doc.authors.iter().enumerate() {
            for &b in &doc.authors[i + 1..] {
                edges.push((a, b));
            }
        }
    }
    CollabGraph::from_edges(corpus.author_count(), &edges)
}
