//! Label text to feature vectors.
//!
//! A [`TextEmbedder`] either looks texts up in a precomputed table (for
//! example sentence-encoder exports) or hashes padded character 3-grams into
//! a fixed number of signed buckets. Table mode falls back to hashing for
//! out-of-vocabulary texts and counts those misses.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::graph::{normalize_label, SceneGraph};

pub const DEFAULT_HASH_DIM: usize = 64;
pub const MIN_HASH_DIM: usize = 8;
const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("empty text")]
    EmptyText,
    #[error("hash dimension {0} is below the minimum of {MIN_HASH_DIM}")]
    DimTooSmall(usize),
    #[error("embedding table line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("embedding table line {line}: I/O error: {source}")]
    Io {
        line: usize,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding table line {line}: width {found} differs from {expected}")]
    InconsistentWidth {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding table line {line}: zero or non-finite vector for {text:?}")]
    BadVector { line: usize, text: String },
    #[error("embedding table line {line}: duplicate text {text:?}")]
    DuplicateText { line: usize, text: String },
    #[error("embedding table is empty")]
    EmptyTable,
    #[error("scene {scene_id:?}: edge endpoint does not resolve")]
    Unresolved { scene_id: String },
}

/// Unit-norm embedding of one text.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn cosine(&self, other: &FeatureVector) -> f64 {
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }

    fn normalized(mut values: Vec<f64>) -> Option<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return None;
        }
        // Leave already-unit vectors untouched so a written table reloads bit-exactly.
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Some(FeatureVector(values))
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded 64-bit hash: FNV-1a over the seed bytes then the text bytes,
/// followed by a splitmix64 finalizer. Platform independent.
pub fn seeded_hash(bytes: &[u8], seed: u64) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes().iter().chain(bytes) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Character 3-grams of the normalized text padded as `^^text$$`.
pub fn padded_trigrams(text: &str) -> Vec<String> {
    let chars: Vec<char> = "^^"
        .chars()
        .chain(text.chars())
        .chain("$$".chars())
        .collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Bucket index and sign for one 3-gram.
pub fn trigram_bucket(gram: &str, dim: usize, seed: u64) -> (usize, f64) {
    let h = seeded_hash(gram.as_bytes(), seed);
    let bucket = (h % dim as u64) as usize;
    let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
    (bucket, sign)
}

pub fn hashed_embed(text: &str, dim: usize, seed: u64) -> Result<FeatureVector, TextError> {
    if dim < MIN_HASH_DIM {
        return Err(TextError::DimTooSmall(dim));
    }
    let text = normalize_label(text);
    if text.is_empty() {
        return Err(TextError::EmptyText);
    }
    let mut values = vec![0.0; dim];
    for gram in padded_trigrams(&text) {
        let (bucket, sign) = trigram_bucket(&gram, dim, seed);
        values[bucket] += sign;
    }
    if values.iter().all(|v| *v == 0.0) {
        // Every gram cancelled against another; fall back to the whole-text bucket.
        let (bucket, _) = trigram_bucket(&text, dim, seed);
        values[bucket] = 1.0;
    }
    Ok(FeatureVector::normalized(values).expect("nonzero by construction"))
}

#[derive(Debug, Serialize, Deserialize)]
struct TableLine {
    text: String,
    vector: Vec<f64>,
}

#[derive(Debug)]
enum Mode {
    Hashed,
    Table {
        entries: Vec<(String, FeatureVector)>,
        index: HashMap<String, usize>,
    },
}

/// Text encoder shared by node labels and predicates.
#[derive(Debug)]
pub struct TextEmbedder {
    mode: Mode,
    dim: usize,
    seed: u64,
    misses: AtomicU64,
}

impl Clone for TextEmbedder {
    fn clone(&self) -> Self {
        let mode = match &self.mode {
            Mode::Hashed => Mode::Hashed,
            Mode::Table { entries, index } => Mode::Table {
                entries: entries.clone(),
                index: index.clone(),
            },
        };
        TextEmbedder {
            mode,
            dim: self.dim,
            seed: self.seed,
            misses: AtomicU64::new(self.misses()),
        }
    }
}

impl TextEmbedder {
    pub fn hashed(dim: usize, seed: u64) -> Result<Self, TextError> {
        if dim < MIN_HASH_DIM {
            return Err(TextError::DimTooSmall(dim));
        }
        Ok(TextEmbedder {
            mode: Mode::Hashed,
            dim,
            seed,
            misses: AtomicU64::new(0),
        })
    }

    /// Load a `{"text": .., "vector": [..]}` JSONL table. `fallback_seed`
    /// seeds the hashed embedding used for texts missing from the table.
    pub fn load_table<R: BufRead>(reader: R, fallback_seed: u64) -> Result<Self, TextError> {
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        let mut dim = None;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line.map_err(|source| TextError::Io {
                line: line_no,
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TableLine = serde_json::from_str(&line).map_err(|source| TextError::Json {
                line: line_no,
                source,
            })?;
            let expected = *dim.get_or_insert(parsed.vector.len());
            if parsed.vector.len() != expected {
                return Err(TextError::InconsistentWidth {
                    line: line_no,
                    expected,
                    found: parsed.vector.len(),
                });
            }
            let text = normalize_label(&parsed.text);
            if text.is_empty() {
                return Err(TextError::EmptyText);
            }
            let vector = FeatureVector::normalized(parsed.vector).ok_or_else(|| {
                TextError::BadVector {
                    line: line_no,
                    text: text.clone(),
                }
            })?;
            if index.contains_key(&text) {
                return Err(TextError::DuplicateText {
                    line: line_no,
                    text,
                });
            }
            index.insert(text.clone(), entries.len());
            entries.push((text, vector));
        }
        let dim = dim.ok_or(TextError::EmptyTable)?;
        Ok(TextEmbedder {
            mode: Mode::Table { entries, index },
            dim,
            seed: fallback_seed,
            misses: AtomicU64::new(0),
        })
    }

    /// Write the table back out in load order. No-op in hashed mode.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        if let Mode::Table { entries, .. } = &self.mode {
            for (text, v) in entries {
                let line = TableLine {
                    text: text.clone(),
                    vector: v.0.clone(),
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_table(&self) -> bool {
        matches!(self.mode, Mode::Table { .. })
    }

    /// Table lookups that fell back to hashing.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn contains(&self, text: &str) -> bool {
        match &self.mode {
            Mode::Hashed => false,
            Mode::Table { index, .. } => index.contains_key(&normalize_label(text)),
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<FeatureVector, TextError> {
        let key = normalize_label(text);
        if key.is_empty() {
            return Err(TextError::EmptyText);
        }
        match &self.mode {
            Mode::Hashed => hashed_embed(&key, self.dim, self.seed),
            Mode::Table { entries, index } => match index.get(&key) {
                Some(&i) => Ok(entries[i].1.clone()),
                None => {
                    self.misses.fetch_add(1, Ordering::Relaxed);
                    hashed_fallback(&key, self.dim, self.seed)
                }
            },
        }
    }

    pub fn featurize_graph(&self, g: &SceneGraph) -> Result<FeaturizedGraph, TextError> {
        let edge_index = g.edge_positions().ok_or_else(|| TextError::Unresolved {
            scene_id: g.scene_id.clone(),
        })?;
        let mut node_features = Tensor::zeros(g.node_count(), self.dim);
        for (i, n) in g.nodes.iter().enumerate() {
            node_features
                .row_mut(i)
                .copy_from_slice(self.embed_text(&n.label)?.values());
        }
        let mut edge_features = Tensor::zeros(g.edge_count(), self.dim);
        for (j, e) in g.edges.iter().enumerate() {
            edge_features
                .row_mut(j)
                .copy_from_slice(self.embed_text(&e.predicate)?.values());
        }
        Ok(FeaturizedGraph {
            graph: g.clone(),
            node_features,
            edge_features,
            edge_index,
        })
    }
}

/// Hashed embedding at any width; table widths below [`MIN_HASH_DIM`] still
/// need a fallback.
fn hashed_fallback(text: &str, dim: usize, seed: u64) -> Result<FeatureVector, TextError> {
    if dim >= MIN_HASH_DIM {
        return hashed_embed(text, dim, seed);
    }
    let mut values = vec![0.0; dim];
    for gram in padded_trigrams(text) {
        let (bucket, sign) = trigram_bucket(&gram, dim, seed);
        values[bucket] += sign;
    }
    if values.iter().all(|v| *v == 0.0) {
        values[trigram_bucket(text, dim, seed).0] = 1.0;
    }
    Ok(FeatureVector::normalized(values).expect("nonzero by construction"))
}

/// A scene graph with per-node and per-edge feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizedGraph {
    pub graph: SceneGraph,
    pub node_features: Tensor,
    pub edge_features: Tensor,
    /// `(src, dst)` row positions for every edge, in edge-list order.
    pub edge_index: Vec<(usize, usize)>,
}

impl FeaturizedGraph {
    pub fn node_count(&self) -> usize {
        self.node_features.rows()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_index.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.cols()
    }
}
