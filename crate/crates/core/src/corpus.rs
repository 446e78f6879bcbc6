//! Corpus ingest and construction: authors, documents, citation links.
//!
//! A corpus starts from three plain files (authors CSV, documents JSON-lines,
//! citations CSV), is checked for referential integrity, and is then immutable
//! apart from two explicit single-writer steps: embedding-flag annotation and
//! career-citation resolution. Authors and documents get dense indices in file
//! order, so every downstream structure can use flat arrays.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

/// One author row. `career_citations` may be unknown at ingest and is filled
/// in by [`Corpus::resolve_career_citations`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Author {
    pub id: String,
    pub career_citations: Option<u64>,
}

/// One document with its byline as dense author indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub year: i32,
    pub field: String,
    pub authors: Vec<u32>,
    pub has_embedding: bool,
}

/// A directed citation link between dense document indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CitationLink {
    pub citing: u32,
    pub cited: u32,
}

/// Career-citation resolution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CareerMode {
    /// Use the counts supplied in the authors file; all must be present.
    Provided,
    /// Count citations received within the ingested citation table.
    InCorpus,
}

/// Immutable bibliometric corpus with referential integrity guaranteed.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    authors: Vec<Author>,
    documents: Vec<Document>,
    citations: Vec<CitationLink>,
    author_index: HashMap<String, u32>,
    doc_index: HashMap<String, u32>,
    /// Per-author list of document indices, in document order.
    docs_by_author: Vec<Vec<u32>>,
    /// Per-document sorted list of cited document indices.
    cited_by_doc: Vec<Vec<u32>>,
    focal_authors: Vec<u32>,
    dropped_duplicate_citations: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    id: String,
    year: i32,
    field: String,
    authors: Vec<String>,
}

impl Corpus {
    pub fn author_count(&self) -> usize {
        self.authors.len()
    }

    pub fn document_count(&self) -> usize {
        self.documents.len()
    }

    pub fn citation_count(&self) -> usize {
        self.citations.len()
    }

    pub fn authors(&self) -> &[Author] {
        &self.authors
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn citations(&self) -> &[CitationLink] {
        &self.citations
    }

    pub fn focal_authors(&self) -> &[u32] {
        &self.focal_authors
    }

    pub fn author_index(&self, id: &str) -> Option<u32> {
        self.author_index.get(id).copied()
    }

    pub fn doc_index(&self, id: &str) -> Option<u32> {
        self.doc_index.get(id).copied()
    }

    pub fn author_id(&self, idx: u32) -> &str {
        &self.authors[idx as usize].id
    }

    pub fn doc_id(&self, idx: u32) -> &str {
        &self.documents[idx as usize].id
    }

    /// Documents authored by `author`, in document order.
    pub fn documents_of_author(&self, author: u32) -> &[u32] {
        &self.docs_by_author[author as usize]
    }

    /// Documents cited by `citing`, sorted ascending.
    pub fn cited_documents(&self, citing: u32) -> &[u32] {
        &self.cited_by_doc[citing as usize]
    }

    pub fn has_citation(&self, citing: u32, cited: u32) -> bool {
        self.cited_by_doc[citing as usize]
            .binary_search(&cited)
            .is_ok()
    }

    /// Duplicate citation rows dropped at ingest.
    pub fn dropped_duplicate_citations(&self) -> u64 {
        self.dropped_duplicate_citations
    }

    pub fn career_citations(&self, author: u32) -> Option<u64> {
        self.authors[author as usize].career_citations
    }

    /// Marks each document's embedding availability. Single-writer annotation
    /// step; run it before sharing the corpus across threads. Returns the
    /// number of documents flagged.
    pub fn set_embedding_flags<F>(&mut self, has_embedding: F) -> usize
    where
        F: Fn(&str) -> bool,
    {
        let mut flagged = 0;
        for doc in &mut self.documents {
            doc.has_embedding = has_embedding(&doc.id);
            flagged += usize::from(doc.has_embedding);
        }
        flagged
    }

    /// Selects authors with at least `min_papers` documents of which at least
    /// `min_field_share` lie in `field`. Returns sorted dense author indices.
    /// An unknown field label yields an empty selection with a warning.
    pub fn select_focal_authors(
        &self,
        min_papers: usize,
        min_field_share: f64,
        field: &str,
    ) -> Result<Vec<u32>> {
        if min_papers < 1 {
            return Err(Error::InvalidArgument(
                "min_papers must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&min_field_share) {
            return Err(Error::InvalidArgument(format!(
                "min_field_share {min_field_share} outside [0, 1]"
            )));
        }
        if !self.documents.iter().any(|d| d.field == field) {
            log::warn!("field label {field:?} matches no document; empty focal selection");
            return Ok(Vec::new());
        }
        let mut selected = Vec::new();
        for (a, docs) in self.docs_by_author.iter().enumerate() {
            let total = docs.len();
            if total < min_papers {
                continue;
            }
            let in_field = docs
                .iter()
                .filter(|&&d| self.documents[d as usize].field == field)
                .count();
            // ">= share" with the tie at exactly the threshold passing.
            if (in_field as f64) >= min_field_share * (total as f64) {
                selected.push(a as u32);
            }
        }
        Ok(selected)
    }

    /// Restricts the corpus to the publications of `focal` authors, their
    /// co-authors, and those co-authors' publications. Authors appearing on
    /// any retained document stay in the author table; citations keep only
    /// links with both endpoints retained. Input order is preserved, so the
    /// result is deterministic.
    pub fn expand_corpus(&self, focal: &[u32]) -> Result<Corpus> {
        for &a in focal {
            if a as usize >= self.authors.len() {
                return Err(Error::InvalidArgument(format!(
                    "focal author index {a} out of range"
                )));
            }
        }
        let mut keep_doc = vec![false; self.documents.len()];
        for &a in focal {
            for &d in &self.docs_by_author[a as usize] {
                keep_doc[d as usize] = true;
            }
        }
        let mut coauthor = vec![false; self.authors.len()];
        for (d, doc) in self.documents.iter().enumerate() {
            if keep_doc[d] {
                for &a in &doc.authors {
                    coauthor[a as usize] = true;
                }
            }
        }
        for (a, is_co) in coauthor.iter().enumerate() {
            if *is_co {
                for &d in &self.docs_by_author[a] {
                    keep_doc[d as usize] = true;
                }
            }
        }

        let mut keep_author = vec![false; self.authors.len()];
        for &a in focal {
            keep_author[a as usize] = true;
        }
        for (d, doc) in self.documents.iter().enumerate() {
            if keep_doc[d] {
                for &a in &doc.authors {
                    keep_author[a as usize] = true;
                }
            }
        }

        let mut author_map = vec![u32::MAX; self.authors.len()];
        let mut authors = Vec::new();
        for (a, keep) in keep_author.iter().enumerate() {
            if *keep {
                author_map[a] = authors.len() as u32;
                authors.push(self.authors[a].clone());
            }
        }
        let mut doc_map = vec![u32::MAX; self.documents.len()];
        let mut documents = Vec::new();
        for (d, keep) in keep_doc.iter().enumerate() {
            if *keep {
                doc_map[d] = documents.len() as u32;
                let doc = &self.documents[d];
                documents.push(Document {
                    id: doc.id.clone(),
                    year: doc.year,
                    field: doc.field.clone(),
                    authors: doc
                        .authors
                        .iter()
                        .map(|&a| author_map[a as usize])
                        .collect(),
                    has_embedding: doc.has_embedding,
                });
            }
        }
        let citations: Vec<CitationLink> = self
            .citations
            .iter()
            .filter(|link| keep_doc[link.citing as usize] && keep_doc[link.cited as usize])
            .map(|link| CitationLink {
                citing: doc_map[link.citing as usize],
                cited: doc_map[link.cited as usize],
            })
            .collect();
        let focal_mapped: Vec<u32> = focal.iter().map(|&a| author_map[a as usize]).collect();
        let mut corpus = Corpus::assemble_indexed(authors, documents, citations)?;
        corpus.focal_authors = sorted_dedup(focal_mapped);
        Ok(corpus)
    }

    /// Resolves every author's career-citation count. `Provided` keeps the
    /// ingested values and fails if any are missing; `InCorpus` counts, for
    /// each author, the citation links whose cited document lists them.
    pub fn resolve_career_citations(mut self, mode: CareerMode) -> Result<Corpus> {
        match mode {
            CareerMode::Provided => {
                let missing: Vec<String> = self
                    .authors
                    .iter()
                    .filter(|a| a.career_citations.is_none())
                    .map(|a| a.id.clone())
                    .collect();
                if !missing.is_empty() {
                    return Err(Error::MissingCareerCitations(missing));
                }
            }
            CareerMode::InCorpus => {
                let mut counts = vec![0u64; self.authors.len()];
                for link in &self.citations {
                    for &a in &self.documents[link.cited as usize].authors {
                        counts[a as usize] += 1;
                    }
                }
                for (author, count) in self.authors.iter_mut().zip(counts) {
                    author.career_citations = Some(count);
                }
            }
        }
        Ok(self)
    }

    /// Builds a corpus from already-parsed tables, enforcing referential
    /// integrity and deduplicating citation rows.
    fn assemble(
        authors: Vec<Author>,
        raw_docs: Vec<DocRecord>,
        raw_cites: Vec<(String, String)>,
    ) -> Result<Corpus> {
        let mut author_index = HashMap::with_capacity(authors.len());
        for (i, author) in authors.iter().enumerate() {
            if author_index.insert(author.id.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId {
                    kind: "author",
                    id: author.id.clone(),
                });
            }
        }
        let mut documents = Vec::with_capacity(raw_docs.len());
        for raw in raw_docs {
            let mut byline = Vec::with_capacity(raw.authors.len());
            for id in &raw.authors {
                let idx = *author_index
                    .get(id)
                    .ok_or_else(|| Error::DanglingReference {
                        context: "document byline",
                        kind: "author",
                        id: id.clone(),
                    })?;
                byline.push(idx);
            }
            documents.push(Document {
                id: raw.id,
                year: raw.year,
                field: raw.field,
                authors: byline,
                has_embedding: false,
            });
        }
        let mut doc_index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc_index.insert(doc.id.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId {
                    kind: "document",
                    id: doc.id.clone(),
                });
            }
        }
        let mut citations = Vec::with_capacity(raw_cites.len());
        for (citing, cited) in raw_cites {
            let citing_idx = *doc_index
                .get(&citing)
                .ok_or_else(|| Error::DanglingReference {
                    context: "citation",
                    kind: "document",
                    id: citing.clone(),
                })?;
            let cited_idx = *doc_index
                .get(&cited)
                .ok_or_else(|| Error::DanglingReference {
                    context: "citation",
                    kind: "document",
                    id: cited.clone(),
                })?;
            citations.push(CitationLink {
                citing: citing_idx,
                cited: cited_idx,
            });
        }
        let mut corpus = Corpus {
            authors,
            documents,
            citations,
            author_index,
            doc_index,
            ..Corpus::default()
        };
        corpus.build_derived_tables();
        Ok(corpus)
    }

    /// Like [`Corpus::assemble`] but for documents whose bylines are already
    /// dense indices (used by expansion and the synthetic generator).
    pub(crate) fn assemble_indexed(
        authors: Vec<Author>,
        documents: Vec<Document>,
        citations: Vec<CitationLink>,
    ) -> Result<Corpus> {
        let mut author_index = HashMap::with_capacity(authors.len());
        for (i, author) in authors.iter().enumerate() {
            if author_index.insert(author.id.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId {
                    kind: "author",
                    id: author.id.clone(),
                });
            }
        }
        let mut doc_index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if doc_index.insert(doc.id.clone(), i as u32).is_some() {
                return Err(Error::DuplicateId {
                    kind: "document",
                    id: doc.id.clone(),
                });
            }
            for &a in &doc.authors {
                if a as usize >= authors.len() {
                    return Err(Error::DanglingReference {
                        context: "document byline",
                        kind: "author",
                        id: format!("#{a}"),
                    });
                }
            }
        }
        for link in &citations {
            if link.citing as usize >= documents.len() || link.cited as usize >= documents.len() {
                return Err(Error::DanglingReference {
                    context: "citation",
                    kind: "document",
                    id: format!("#{}", link.citing.max(link.cited)),
                });
            }
        }
        let mut corpus = Corpus {
            authors,
            documents,
            citations,
            author_index,
            doc_index,
            ..Corpus::default()
        };
        corpus.build_derived_tables();
        Ok(corpus)
    }

    fn build_derived_tables(&mut self) {
        // Deduplicate citation rows, keeping first occurrence order.
        let mut seen: std::collections::HashSet<(u32, u32)> =
            std::collections::HashSet::with_capacity(self.citations.len());
        let before = self.citations.len();
        self.citations
            .retain(|link| seen.insert((link.citing, link.cited)));
        self.dropped_duplicate_citations = (before - self.citations.len()) as u64;
        if self.dropped_duplicate_citations > 0 {
            log::warn!(
                "dropped {} duplicate citation row(s)",
                self.dropped_duplicate_citations
            );
        }

        let mut docs_by_author = vec![Vec::new(); self.authors.len()];
        for (d, doc) in self.documents.iter().enumerate() {
            for &a in &doc.authors {
                docs_by_author[a as usize].push(d as u32);
            }
        }
        let mut cited_by_doc = vec![Vec::new(); self.documents.len()];
        for link in &self.citations {
            cited_by_doc[link.citing as usize].push(link.cited);
        }
        for list in &mut cited_by_doc {
            list.sort_unstable();
        }
        self.docs_by_author = docs_by_author;
        self.cited_by_doc = cited_by_doc;
    }

    /// Writes the corpus back out in the canonical ingest formats.
    pub fn write_files(
        &self,
        authors_path: &Path,
        documents_path: &Path,
        citations_path: &Path,
    ) -> Result<()> {
        fsutil::atomic_write_with(authors_path, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["author_id", "career_citations"])
                .map_err(csv_write_err)?;
            for author in &self.authors {
                let cc = author
                    .career_citations
                    .map(|c| c.to_string())
                    .unwrap_or_default();
                w.write_record([author.id.as_str(), cc.as_str()])
                    .map_err(csv_write_err)?;
            }
            w.flush()
                .map_err(|e| Error::io(authors_path.display().to_string(), e))?;
            Ok(())
        })?;
        fsutil::atomic_write_with(documents_path, |buf| {
            for doc in &self.documents {
                let record = DocRecord {
                    id: doc.id.clone(),
                    year: doc.year,
                    field: doc.field.clone(),
                    authors: doc
                        .authors
                        .iter()
                        .map(|&a| self.author_id(a).to_owned())
                        .collect(),
                };
                let line = serde_json::to_string(&record).map_err(|e| Error::Format {
                    path: documents_path.display().to_string(),
                    message: e.to_string(),
                })?;
                buf.extend_from_slice(line.as_bytes());
                buf.push(b'\n');
            }
            Ok(())
        })?;
        fsutil::atomic_write_with(citations_path, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(["citing_id", "cited_id"])
                .map_err(csv_write_err)?;
            for link in &self.citations {
                w.write_record([self.doc_id(link.citing), self.doc_id(link.cited)])
                    .map_err(csv_write_err)?;
            }
            w.flush()
                .map_err(|e| Error::io(citations_path.display().to_string(), e))?;
            Ok(())
        })
    }
}

fn csv_write_err(e: csv::Error) -> Error {
    Error::Format {
        path: String::new(),
        message: e.to_string(),
    }
}

fn sorted_dedup(mut v: Vec<u32>) -> Vec<u32> {
    v.sort_unstable();
    v.dedup();
    v
}

/// Loads a corpus from reader streams. `*_name` strings appear in error
/// messages in place of file paths.
pub fn load_corpus<A, D, C>(
    authors: A,
    authors_name: &str,
    documents: D,
    documents_name: &str,
    citations: C,
    citations_name: &str,
) -> Result<Corpus>
where
    A: Read,
    D: Read,
    C: Read,
{
    let author_table = parse_authors(authors, authors_name)?;
    let doc_table = parse_documents(documents, documents_name)?;
    let cite_table = parse_citations(citations, citations_name)?;
    Corpus::assemble(author_table, doc_table, cite_table)
}

/// Loads a corpus from the three canonical files.
pub fn load_corpus_files(
    authors_path: &Path,
    documents_path: &Path,
    citations_path: &Path,
) -> Result<Corpus> {
    let open = |p: &Path| -> Result<std::fs::File> {
        std::fs::File::open(p).map_err(|e| Error::io(p.display().to_string(), e))
    };
    load_corpus(
        open(authors_path)?,
        &authors_path.display().to_string(),
        open(documents_path)?,
        &documents_path.display().to_string(),
        open(citations_path)?,
        &citations_path.display().to_string(),
    )
}

fn parse_authors(reader: impl Read, path: &str) -> Result<Vec<Author>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    expect_header(&mut rdr, path, &["author_id", "career_citations"])?;
    let mut authors = Vec::new();
    for row in rdr.records() {
        let record = row.map_err(|e| csv_read_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::MalformedRecord {
                path: path.into(),
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.into(),
                line,
                message: "empty author_id".into(),
            });
        }
        let career = &record[1];
        let career_citations = if career.is_empty() {
            None
        } else {
            Some(career.parse::<u64>().map_err(|_| Error::MalformedRecord {
                path: path.into(),
                line,
                message: format!("career_citations {career:?} is not a non-negative integer"),
            })?)
        };
        authors.push(Author {
            id,
            career_citations,
        });
    }
    Ok(authors)
}

fn parse_documents(reader: impl Read, path: &str) -> Result<Vec<DocRecord>> {
    let reader = BufReader::new(reader);
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let record: DocRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: path.into(),
                line: lineno,
                message: e.to_string(),
            })?;
        if record.id.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.into(),
                line: lineno,
                message: "empty document id".into(),
            });
        }
        if record.authors.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.into(),
                line: lineno,
                message: format!("document {:?} has an empty author list", record.id),
            });
        }
        let mut seen = std::collections::HashSet::new();
        for a in &record.authors {
            if !seen.insert(a.as_str()) {
                return Err(Error::MalformedRecord {
                    path: path.into(),
                    line: lineno,
                    message: format!("duplicate author {a:?} in document {:?}", record.id),
                });
            }
        }
        docs.push(record);
    }
    Ok(docs)
}

fn parse_citations(reader: impl Read, path: &str) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    expect_header(&mut rdr, path, &["citing_id", "cited_id"])?;
    let mut cites = Vec::new();
    for row in rdr.records() {
        let record = row.map_err(|e| csv_read_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(Error::MalformedRecord {
                path: path.into(),
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let citing = record[0].to_string();
        let cited = record[1].to_string();
        if citing.is_empty() || cited.is_empty() {
            return Err(Error::MalformedRecord {
                path: path.into(),
                line,
                message: "empty document id".into(),
            });
        }
        if citing == cited {
            return Err(Error::MalformedRecord {
                path: path.into(),
                line,
                message: format!("document {citing:?} cites itself"),
            });
        }
        cites.push((citing, cited));
    }
    Ok(cites)
}

fn expect_header<R: Read>(rdr: &mut csv::Reader<R>, path: &str, want: &[&str]) -> Result<()> {
    let got = rdr.headers().map_err(|e| csv_read_err(path, e))?;
    if got.iter().collect::<Vec<_>>() != want {
        return Err(Error::Format {
            path: path.into(),
            message: format!(
                "expected header {}, found {}",
                want.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    Ok(())
}

fn csv_read_err(path: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::MalformedRecord {
        path: path.into(),
        line,
        message: e.to_string(),
    }
}
