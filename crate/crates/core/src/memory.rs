//! The two memories of the learning loop.
//!
//! [`MemoryDb`] is the persistent, curated store of abstracted trajectories
//! that passed the critic gate. [`ProcessingDb`] is the volatile per-run
//! buffer of in-progress trajectories that feeds real-time guidance; it is
//! never written to disk.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AbstractedTrajectory, Action, Trajectory};
use crate::retrieval::{dense_score, tokenize, Embedder};

/// Admission threshold of the critic gate.
pub const THETA_GOOD: u8 = 4;

pub const MEMORY_SCHEMA_VERSION: u32 = 1;

/// Records whose intents are at least this similar and whose action
/// sequences are identical are treated as duplicates.
pub const DEDUP_COSINE: f64 = 0.95;

pub const DEFAULT_PROC_CAPACITY: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub abstracted: AbstractedTrajectory,
    pub intent_embedding: Vec<f64>,
    pub token_count: usize,
}

impl MemoryRecord {
    pub fn new(abstracted: AbstractedTrajectory, embedder: &dyn Embedder) -> Self {
        let intent_embedding = embedder.embed(&abstracted.final_intent);
        let token_count = tokenize(&document_of(&abstracted)).len();
        Self {
            abstracted,
            intent_embedding,
            token_count,
        }
    }

    pub fn id(&self) -> &str {
        &self.abstracted.id
    }

    pub fn score(&self) -> u8 {
        self.abstracted.score.value()
    }

    /// Text indexed by the sparse channel.
    pub fn sparse_document(&self) -> String {
        document_of(&self.abstracted)
    }
}

/// Final intent, then each step's intent and interface description, one per
/// line. Actions are left out: they are symbols, not lexical content.
fn document_of(t: &AbstractedTrajectory) -> String {
    let mut doc = t.final_intent.clone();
    for s in &t.steps {
        doc.push('\n');
        doc.push_str(&s.intent);
        doc.push('\n');
        doc.push_str(&s.interface_description);
    }
    doc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InsertOutcome {
    Inserted,
    Deduplicated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    schema_version: u32,
    embed_dim: usize,
    /// `None` marks an ungated database built for ablations.
    theta_good: Option<u8>,
}

const FORMAT_TAG: &str = "etmem";

/// Persistent memory database. Insertion order is preserved and is the
/// retrieval tie-break.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryDb {
    records: Vec<MemoryRecord>,
    gate: Option<u8>,
    embed_dim: usize,
    generation: u64,
}

impl MemoryDb {
    /// Empty database gated at [`THETA_GOOD`].
    pub fn new(embed_dim: usize) -> Self {
        Self::with_gate(embed_dim, Some(THETA_GOOD))
    }

    /// Empty database that admits every record. Only the critic-filter
    /// ablation uses this.
    pub fn ungated(embed_dim: usize) -> Self {
        Self::with_gate(embed_dim, None)
    }

    fn with_gate(embed_dim: usize, gate: Option<u8>) -> Self {
        Self {
            records: Vec::new(),
            gate,
            embed_dim,
            generation: 0,
        }
    }

    pub fn gate(&self) -> Option<u8> {
        self.gate
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn records(&self) -> &[MemoryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Bumped on every mutation; retrieval indexes compare against it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn get(&self, id: &str) -> Option<&MemoryRecord> {
        self.records.iter().find(|r| r.id() == id)
    }

    pub fn insert(&mut self, rec: MemoryRecord) -> Result<InsertOutcome> {
        if let Some(theta) = self.gate {
            if rec.score() < theta {
                return Err(Error::GateRejected {
                    id: rec.id().to_string(),
                    score: rec.score(),
                    threshold: theta,
                });
            }
        }
        if rec.intent_embedding.len() != self.embed_dim {
            return Err(Error::Validation(format!(
                "record `{}` has a {}-dimensional embedding, database expects {}",
                rec.id(),
                rec.intent_embedding.len(),
                self.embed_dim
            )));
        }
        let is_dup = |r: &MemoryRecord| {
            dense_score(&r.intent_embedding, &rec.intent_embedding) >= DEDUP_COSINE
                && r.abstracted.actions().eq(rec.abstracted.actions())
        };
        if self.records.iter().any(is_dup) {
            return Ok(InsertOutcome::Deduplicated);
        }
        if self.get(rec.id()).is_some() {
            return Err(Error::Validation(format!(
                "duplicate record id `{}`",
                rec.id()
            )));
        }
        self.records.push(rec);
        self.generation += 1;
        Ok(InsertOutcome::Inserted)
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = Header {
            format: FORMAT_TAG.to_string(),
            schema_version: MEMORY_SCHEMA_VERSION,
            embed_dim: self.embed_dim,
            theta_good: self.gate,
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for rec in &self.records {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    /// Loads a database and re-derives every embedding, which must match the
    /// stored one bit for bit.
    pub fn load(path: impl AsRef<Path>, embedder: &dyn Embedder) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path)?;
        Self::read_from(BufReader::new(file), &path.display().to_string(), embedder)
    }

    pub fn read_from(reader: impl Read, source: &str, embedder: &dyn Embedder) -> Result<Self> {
        let corrupt = |line: usize, message: String| Error::CorruptLine {
            path: source.to_string(),
            line,
            message,
        };
        let mut lines = BufReader::new(reader).lines();
        let first = lines
            .next()
            .ok_or_else(|| corrupt(1, "missing header".into()))??;
        let header: Header = serde_json::from_str(&first).map_err(|e| corrupt(1, e.to_string()))?;
        if header.format != FORMAT_TAG || header.schema_version != MEMORY_SCHEMA_VERSION {
            return Err(corrupt(
                1,
                format!(
                    "unsupported format {} v{}",
                    header.format, header.schema_version
                ),
            ));
        }
        if header.embed_dim != embedder.dim() {
            return Err(corrupt(
                1,
                format!(
                    "embedding dimension {} does not match the embedder ({})",
                    header.embed_dim,
                    embedder.dim()
                ),
            ));
        }
        let mut db = Self::with_gate(header.embed_dim, header.theta_good);
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            let rec: MemoryRecord =
                serde_json::from_str(&line).map_err(|e| corrupt(line_no, e.to_string()))?;
            let expected = embedder.embed(&rec.abstracted.final_intent);
            let same = expected.len() == rec.intent_embedding.len()
                && expected
                    .iter()
                    .zip(&rec.intent_embedding)
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(corrupt(
                    line_no,
                    "stored embedding differs from the recomputed one".into(),
                ));
            }
            if rec.token_count != tokenize(&rec.sparse_document()).len() {
                return Err(corrupt(
                    line_no,
                    "token count does not match the record".into(),
                ));
            }
            let id = rec.id().to_string();
            match db.insert(rec) {
                Ok(InsertOutcome::Inserted) => {}
                Ok(InsertOutcome::Deduplicated) => {
                    return Err(corrupt(
                        line_no,
                        format!("record `{id}` duplicates an earlier record"),
                    ));
                }
                Err(e) => return Err(corrupt(line_no, e.to_string())),
            }
        }
        Ok(db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Succeeded,
    Failed,
}

impl Outcome {
    /// A step fails when it leaves the device state unchanged.
    pub fn of_step(changed_state: bool) -> Self {
        if changed_state {
            Outcome::Succeeded
        } else {
            Outcome::Failed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcStep {
    pub screen_id: String,
    pub action: Action,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcEntry {
    pub trajectory_id: String,
    pub steps: Vec<ProcStep>,
}

/// Bounded FIFO of in-progress trajectories with per-step outcomes.
#[derive(Debug, Clone)]
pub struct ProcessingDb {
    capacity: usize,
    entries: VecDeque<ProcEntry>,
}

impl ProcessingDb {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "processing DB capacity must be positive");
        Self {
            capacity,
            entries: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Oldest first.
    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &ProcEntry> {
        self.entries.iter()
    }

    /// Stores the current prefix of `partial`, replacing any earlier
    /// snapshot of the same trajectory. The entry becomes the newest; the
    /// oldest entry is evicted at capacity.
    pub fn update(&mut self, partial: &Trajectory) {
        let steps = partial
            .steps
            .iter()
            .map(|s| ProcStep {
                screen_id: s.observation.screen_id.clone(),
                action: s.action.clone(),
                outcome: Outcome::of_step(s.changed_state),
            })
            .collect();
        if let Some(pos) = self
            .entries
            .iter()
            .position(|e| e.trajectory_id == partial.id)
        {
            self.entries.remove(pos);
        }
        self.entries.push_back(ProcEntry {
            trajectory_id: partial.id.clone(),
            steps,
        });
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }
}

impl Default for ProcessingDb {
    fn default() -> Self {
        Self::new(DEFAULT_PROC_CAPACITY)
    }
}
