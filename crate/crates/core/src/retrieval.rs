//! Hybrid dense/sparse relevance over the memory database.
//!
//! Dense relevance compares the instruction with each record's final-intent
//! embedding; sparse relevance is BM25 over a per-record document built from
//! the final intent, every step intent and every interface description. The
//! two are fused as `alpha * dense01 + (1 - alpha) * sparse01` where
//! `dense01 = (1 + cos) / 2` and `sparse01` is the BM25 score min-max
//! normalized over the candidate set of the query.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemoryDb, MemoryRecord};
use crate::rng;

pub const DEFAULT_EMBED_DIM: usize = 256;

/// Lowercases, splits on non-alphanumeric characters and drops empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Text encoder for the dense channel.
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Feature-hashing encoder: each distinct token adds `1 + ln(tf)` to bucket
/// `fnv1a(token) mod dim`, and the result is L2-normalized. Empty text maps
/// to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (rng::fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_EMBED_DIM)
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokenize(text) {
            *tf.entry(t).or_default() += 1;
        }
        let mut v = vec![0.0; self.dim];
        for (token, n) in &tf {
            v[self.bucket(token)] += 1.0 + (*n as f64).ln();
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

/// Cosine of two unit-or-zero vectors; 0 when either is zero.
pub fn dense_score(query: &[f64], record: &[f64]) -> f64 {
    if query.len() != record.len() {
        return 0.0;
    }
    let dot: f64 = query.iter().zip(record).map(|(a, b)| a * b).sum();
    dot.clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ranking {
    Hybrid,
    Dense,
    Sparse,
    /// Uniformly shuffled records, keyed by the query text and `seed`.
    Random {
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub alpha: f64,
    pub k: usize,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub embed_dim: usize,
    pub ranking: Ranking,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            k: 2,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            embed_dim: DEFAULT_EMBED_DIM,
            ranking: Ranking::Hybrid,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Validation(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.bm25_k1 < 0.0 || !(0.0..=1.0).contains(&self.bm25_b) {
            return Err(Error::Validation("invalid BM25 parameters".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Validation(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Inverse document frequency with the `+1` inside the log, which keeps it
/// positive for terms present in every document.
pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let n = n_docs as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// BM25 term statistics for one snapshot of the memory database.
#[derive(Debug, Clone)]
pub struct SparseIndex {
    k1: f64,
    b: f64,
    tf: Vec<HashMap<String, u32>>,
    lens: Vec<usize>,
    df: HashMap<String, usize>,
    avgdl: f64,
}

impl SparseIndex {
    pub fn build<S: AsRef<str>>(documents: &[S], k1: f64, b: f64) -> Self {
        let mut tf = Vec::with_capacity(documents.len());
        let mut lens = Vec::with_capacity(documents.len());
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in documents {
            let tokens = tokenize(doc.as_ref());
            lens.push(tokens.len());
            let mut counts: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *counts.entry(t).or_default() += 1;
            }
            for t in counts.keys() {
                *df.entry(t.clone()).or_default() += 1;
            }
            tf.push(counts);
        }
        let total: usize = lens.iter().sum();
        let avgdl = if lens.is_empty() {
            0.0
        } else {
            total as f64 / lens.len() as f64
        };
        Self {
            k1,
            b,
            tf,
            lens,
            df,
            avgdl,
        }
    }

    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.lens[doc]
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// BM25 of document `doc`. Repeated query terms count once; terms are
    /// summed in lexicographic order.
    pub fn score(&self, query_tokens: &[String], doc: usize) -> f64 {
        let terms: BTreeSet<&str> = query_tokens.iter().map(String::as_str).collect();
        let n = self.len();
        let len_norm = if self.avgdl > 0.0 {
            self.lens[doc] as f64 / self.avgdl
        } else {
            0.0
        };
        let mut score = 0.0;
        for term in terms {
            let Some(&tf) = self.tf[doc].get(term) else {
                continue;
            };
            let tf = tf as f64;
            let idf = bm25_idf(n, self.df(term));
            score +=
                idf * (tf * (self.k1 + 1.0)) / (tf + self.k1 * (1.0 - self.b + self.b * len_norm));
        }
        score
    }
}

/// One ranked record: position in the database and fused score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub score: f64,
}

/// Dense and sparse indexes over one database snapshot.
#[derive(Debug, Clone)]
pub struct HybridIndex {
    generation: u64,
    positions: HashMap<String, usize>,
    dense: Vec<Vec<f64>>,
    sparse: SparseIndex,
}

impl HybridIndex {
    pub fn build(db: &MemoryDb, cfg: &RetrievalConfig) -> Self {
        let records = db.records();
        let docs: Vec<String> = records.iter().map(MemoryRecord::sparse_document).collect();
        Self {
            generation: db.generation(),
            positions: records
                .iter()
                .enumerate()
                .map(|(i, r)| (r.id().to_string(), i))
                .collect(),
            dense: records.iter().map(|r| r.intent_embedding.clone()).collect(),
            sparse: SparseIndex::build(&docs, cfg.bm25_k1, cfg.bm25_b),
        }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }

    pub fn sparse(&self) -> &SparseIndex {
        &self.sparse
    }

    pub fn ensure_fresh(&self, db: &MemoryDb) -> Result<()> {
        if db.generation() != self.generation || db.len() != self.len() {
            return Err(Error::StaleIndex(format!(
                "index built at generation {}, database is at {}",
                self.generation,
                db.generation()
            )));
        }
        Ok(())
    }

    /// BM25 of `rec` against the query.
    pub fn sparse_score(
        &self,
        db: &MemoryDb,
        query_tokens: &[String],
        rec: &MemoryRecord,
    ) -> Result<f64> {
        self.ensure_fresh(db)?;
        let &pos = self
            .positions
            .get(rec.id())
            .ok_or_else(|| Error::StaleIndex(format!("record `{}` is not indexed", rec.id())))?;
        Ok(self.sparse.score(query_tokens, pos))
    }

    /// Every record, best first. Ties keep insertion order.
    pub fn rank(
        &self,
        db: &MemoryDb,
        query: &str,
        cfg: &RetrievalConfig,
        embedder: &dyn Embedder,
    ) -> Result<Vec<Ranked>> {
        self.ensure_fresh(db)?;
        let n = self.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        if let Ranking::Random { seed } = cfg.ranking {
            let mut order: Vec<usize> = (0..n).collect();
            let mut r = rng::stream(seed, &[rng::fnv1a(query.as_bytes())]);
            order.shuffle(&mut r);
            return Ok(order
                .into_iter()
                .map(|index| Ranked { index, score: 0.0 })
                .collect());
        }

        let alpha = match cfg.ranking {
            Ranking::Dense => 1.0,
            Ranking::Sparse => 0.0,
            _ => cfg.alpha,
        };
        let qv = embedder.embed(query);
        let qt = tokenize(query);
        let sparse: Vec<f64> = (0..n).map(|i| self.sparse.score(&qt, i)).collect();
        let sparse01 = min_max(&sparse);
        let mut ranked: Vec<Ranked> = (0..n)
            .map(|i| {
                let dense01 = (1.0 + dense_score(&qv, &self.dense[i])) / 2.0;
                Ranked {
                    index: i,
                    score: alpha * dense01 + (1.0 - alpha) * sparse01[i],
                }
            })
            .collect();
        // Stable sort: equal scores stay in insertion order.
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(ranked)
    }

    /// The first `min(k, |db|)` records of [`HybridIndex::rank`].
    pub fn retrieve_topk<'a>(
        &self,
        db: &'a MemoryDb,
        query: &str,
        cfg: &RetrievalConfig,
        embedder: &dyn Embedder,
    ) -> Result<Vec<&'a MemoryRecord>> {
        if cfg.k == 0 {
            return Ok(Vec::new());
        }
        let ranked = self.rank(db, query, cfg, embedder)?;
        Ok(ranked
            .iter()
            .take(cfg.k)
            .map(|r| &db.records()[r.index])
            .collect())
    }
}

/// Min-max normalization; a constant input maps to 0.5 everywhere.
pub fn min_max(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if xs.is_empty() || hi - lo <= 0.0 {
        return vec![0.5; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// One-shot convenience: builds an index and returns the top `cfg.k`.
pub fn retrieve_topk<'a>(
    db: &'a MemoryDb,
    query: &str,
    cfg: &RetrievalConfig,
    embedder: &dyn Embedder,
) -> Result<Vec<&'a MemoryRecord>> {
    HybridIndex::build(db, cfg).retrieve_topk(db, query, cfg, embedder)
}
