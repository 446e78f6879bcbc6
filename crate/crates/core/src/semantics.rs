//! Precomputed document embeddings and cosine similarity.
//!
//! Vectors are stored as 32-bit floats in one contiguous row-major buffer
//! with their Euclidean norms precomputed at load, so a similarity query is a
//! single 64-bit dot product. Embedding generation is out of scope; any
//! provider can feed the JSON-lines or packed binary format.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::stats::{Histogram, Moments};

const BINARY_MAGIC: &[u8; 4] = b"CPXE";

/// Immutable store of equal-dimension document embeddings.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, u32>,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            norms: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn index_of(&self, id: &str) -> Option<u32> {
        self.index.get(id).copied()
    }

    pub fn id(&self, idx: u32) -> &str {
        &self.ids[idx as usize]
    }

    pub fn vector_by_index(&self, idx: u32) -> &[f32] {
        let start = idx as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.index_of(id).map(|i| self.vector_by_index(i))
    }

    pub fn norm_by_index(&self, idx: u32) -> f64 {
        self.norms[idx as usize]
    }

    /// Inserts a vector, validating dimension, finiteness, and nonzero norm.
    /// `location` feeds error messages (file path and line).
    pub fn insert(&mut self, id: String, vec: &[f32], location: (&str, usize)) -> Result<()> {
        let (path, line) = location;
        if vec.len() != self.dim {
            return Err(Error::DimensionMismatch {
                path: path.into(),
                line,
                expected: self.dim,
                found: vec.len(),
            });
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::MalformedRecord {
                path: path.into(),
                line,
                message: format!("non-finite component in vector for {id:?}"),
            });
        }
        let norm = norm64(vec);
        if norm == 0.0 {
            return Err(Error::ZeroVector {
                path: path.into(),
                line,
                id,
            });
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId {
                kind: "embedding",
                id,
            });
        }
        self.index.insert(id.clone(), self.ids.len() as u32);
        self.ids.push(id);
        self.data.extend_from_slice(vec);
        self.norms.push(norm);
        Ok(())
    }

    /// Cosine similarity between two stored vectors, using the precomputed
    /// norms. This is the hot path for bulk pair featurization.
    pub fn similarity_by_index(&self, a: u32, b: u32) -> f64 {
        let u = self.vector_by_index(a);
        let v = self.vector_by_index(b);
        let dot = dot64(u, v);
        clamp_unit(dot / (self.norms[a as usize] * self.norms[b as usize]))
    }

    pub fn similarity(&self, id_a: &str, id_b: &str) -> Result<f64> {
        let a = self
            .index_of(id_a)
            .ok_or_else(|| Error::UnknownDocument(id_a.to_owned()))?;
        let b = self
            .index_of(id_b)
            .ok_or_else(|| Error::UnknownDocument(id_b.to_owned()))?;
        Ok(self.similarity_by_index(a, b))
    }

    /// Binned similarity histogram over the given id pairs, with moment
    /// summaries. Pairs missing either embedding are skipped and tallied.
    pub fn similarity_distribution<'a, I>(
        &self,
        pairs: I,
        bins: usize,
    ) -> Result<SimilarityDistribution>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        if bins == 0 {
            return Err(Error::InvalidArgument("bins must be positive".into()));
        }
        let mut hist = Histogram::new(-1.0, 1.0, bins);
        let mut moments = Moments::new();
        let mut skipped = 0u64;
        for (a, b) in pairs {
            match (self.index_of(a), self.index_of(b)) {
                (Some(i), Some(j)) => {
                    let s = self.similarity_by_index(i, j);
                    hist.push(s);
                    moments.push(s);
                }
                _ => skipped += 1,
            }
        }
        Ok(SimilarityDistribution {
            counts: hist.counts,
            lo: -1.0,
            hi: 1.0,
            n: moments.count(),
            skipped,
            mean: moments.mean(),
            variance: moments.variance(),
            skewness: moments.skewness(),
            excess_kurtosis: moments.excess_kurtosis(),
        })
    }

    /// Writes the store as JSON-lines records.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write_with(path, |buf| {
            for (i, id) in self.ids.iter().enumerate() {
                let record = EmbeddingRecord {
                    id: id.clone(),
                    vec: self.vector_by_index(i as u32).to_vec(),
                };
                let line = serde_json::to_string(&record).map_err(|e| Error::Format {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                buf.extend_from_slice(line.as_bytes());
                buf.push(b'\n');
            }
            Ok(())
        })
    }

    /// Writes the store in the packed binary format.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        fsutil::atomic_write_with(path, |buf| {
            buf.extend_from_slice(BINARY_MAGIC);
            buf.extend_from_slice(&1u32.to_le_bytes());
            buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
            buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
            for (i, id) in self.ids.iter().enumerate() {
                let id_bytes = id.as_bytes();
                if id_bytes.len() > u16::MAX as usize {
                    return Err(Error::InvalidArgument(format!(
                        "document id longer than {} bytes",
                        u16::MAX
                    )));
                }
                buf.extend_from_slice(&(id_bytes.len() as u16).to_le_bytes());
                buf.extend_from_slice(id_bytes);
                for &x in self.vector_by_index(i as u32) {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
            Ok(())
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    vec: Vec<f32>,
}

/// Similarity histogram plus moment summary; the shape comparisons between
/// citing and non-citing pairs read off `excess_kurtosis`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityDistribution {
    pub counts: Vec<u64>,
    pub lo: f64,
    pub hi: f64,
    pub n: u64,
    pub skipped: u64,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl SimilarityDistribution {
    pub fn bin_center(&self, i: usize) -> f64 {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        self.lo + w * (i as f64 + 0.5)
    }
}

fn norm64(v: &[f32]) -> f64 {
    dot64(v, v).sqrt()
}

fn dot64(u: &[f32], v: &[f32]) -> f64 {
    debug_assert_eq!(u.len(), v.len());
    let mut acc = 0.0f64;
    for (&a, &b) in u.iter().zip(v) {
        acc += f64::from(a) * f64::from(b);
    }
    acc
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Cosine similarity of two raw vectors, accumulated in 64-bit floats and
/// clamped into [-1, 1].
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::VectorLengthMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = norm64(u);
    let nv = norm64(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine of zero-norm vector".into()));
    }
    Ok(clamp_unit(dot64(u, v) / (nu * nv)))
}

/// Loads JSON-lines embeddings from a reader. `name` appears in errors.
pub fn load_embeddings(
    reader: impl Read,
    name: &str,
    expected_dim: usize,
) -> Result<EmbeddingStore> {
    if expected_dim == 0 {
        return Err(Error::InvalidArgument(
            "embedding dimension must be positive".into(),
        ));
    }
    let mut store = EmbeddingStore::new(expected_dim);
    let reader = BufReader::new(reader);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let record: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
                path: name.into(),
                line: lineno,
                message: e.to_string(),
            })?;
        store.insert(record.id, &record.vec, (name, lineno))?;
    }
    Ok(store)
}

/// Loads packed binary embeddings from a byte buffer.
pub fn load_embeddings_binary(
    bytes: &[u8],
    name: &str,
    expected_dim: usize,
) -> Result<EmbeddingStore> {
    let format_err = |message: String| Error::Format {
        path: name.into(),
        message,
    };
    if bytes.len() < 20 {
        return Err(format_err("truncated header".into()));
    }
    if &bytes[0..4] != BINARY_MAGIC {
        return Err(format_err("bad magic, expected CPXE".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != 1 {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if dim != expected_dim {
        return Err(Error::DimensionMismatch {
            path: name.into(),
            line: 0,
            expected: expected_dim,
            found: dim,
        });
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let mut store = EmbeddingStore::new(dim);
    let mut off = 20usize;
    let mut vec_buf = vec![0f32; dim];
    for rec in 0..count {
        if off + 2 > bytes.len() {
            return Err(format_err(format!("truncated id length in record {rec}")));
        }
        let id_len = u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap()) as usize;
        off += 2;
        if off + id_len + dim * 4 > bytes.len() {
            return Err(format_err(format!("truncated record {rec}")));
        }
        let id = std::str::from_utf8(&bytes[off..off + id_len])
            .map_err(|e| format_err(format!("record {rec}: id is not UTF-8: {e}")))?
            .to_owned();
        off += id_len;
        for slot in vec_buf.iter_mut() {
            *slot = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            off += 4;
        }
        store.insert(id, &vec_buf, (name, rec as usize + 1))?;
    }
    if off != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok(store)
}

/// Loads embeddings from a file, sniffing the binary magic to pick a format.
pub fn load_embeddings_file(path: &Path, expected_dim: usize) -> Result<EmbeddingStore> {
    let bytes = fsutil::read_bytes(path)?;
    let name = path.display().to_string();
    if bytes.starts_with(BINARY_MAGIC) {
        load_embeddings_binary(&bytes, &name, expected_dim)
    } else {
        load_embeddings(bytes.as_slice(), &name, expected_dim)
    }
}
