//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use echotrail::memory::{MemoryDb, MemoryRecord};
use echotrail::model::{AbstractedStep, AbstractedTrajectory, Action, CriticScore};
use echotrail::retrieval::{Embedder, HashEmbedder, RetrievalConfig};
use echotrail::sim::{DeviceState, Suite};

pub const VOCAB: &[&str] = &[
    "open",
    "set",
    "timer",
    "alarm",
    "clock",
    "note",
    "pin",
    "delete",
    "contact",
    "alice",
    "bob",
    "message",
    "send",
    "wifi",
    "bluetooth",
    "dark",
    "theme",
    "mute",
    "favorite",
    "trash",
    "daily",
    "minute",
    "call",
    "mom",
    "screen",
    "button",
    "list",
    "save",
    "start",
    "stop",
];

pub fn words(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> Vec<String> {
    let n = rng.gen_range(lo..=hi);
    (0..n)
        .map(|_| VOCAB.choose(rng).unwrap().to_string())
        .collect()
}

/// Gate-passing records with random intents and step descriptions. Action
/// ids are unique per record, so nothing deduplicates.
pub fn synthetic_db(n: usize, seed: u64) -> MemoryDb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embedder = HashEmbedder::default();
    let mut db = MemoryDb::new(embedder.dim());
    for i in 0..n {
        let steps = (0..rng.gen_range(1..=4))
            .map(|j| AbstractedStep {
                interface_description: words(&mut rng, 2, 8).join(" "),
                intent: words(&mut rng, 1, 4).join(" "),
                action: Action::click(format!("w{i}_{j}")),
                target_label: None,
            })
            .collect();
        let abs = AbstractedTrajectory {
            id: format!("syn-{i}"),
            final_intent: words(&mut rng, 1, 6).join(" "),
            steps,
            score: CriticScore::new(rng.gen_range(4..=5)).unwrap(),
        };
        db.insert(MemoryRecord::new(abs, &embedder)).unwrap();
    }
    db
}

fn lower_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            cur.extend(c.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Textbook Okapi BM25 with `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`,
/// each distinct query term counted once.
pub fn textbook_bm25(docs: &[&str], query: &str, k1: f64, b: f64) -> Vec<f64> {
    let tokenized: Vec<Vec<String>> = docs.iter().map(|d| lower_tokens(d)).collect();
    let n = tokenized.len() as f64;
    let avgdl = tokenized.iter().map(Vec::len).sum::<usize>() as f64 / n.max(1.0);
    let mut terms = lower_tokens(query);
    terms.sort();
    terms.dedup();
    tokenized
        .iter()
        .map(|doc| {
            let mut total = 0.0;
            for t in &terms {
                let tf = doc.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = tokenized.iter().filter(|d| d.contains(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = if avgdl > 0.0 {
                    doc.len() as f64 / avgdl
                } else {
                    0.0
                };
                total += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
            }
            total
        })
        .collect()
}

/// Scores every record on its own and sorts by fused score, ties by
/// insertion order.
pub fn brute_force_topk(
    db: &MemoryDb,
    query: &str,
    cfg: &RetrievalConfig,
    embedder: &dyn Embedder,
) -> Vec<String> {
    if cfg.k == 0 || db.is_empty() {
        return Vec::new();
    }
    let docs: Vec<String> = db.records().iter().map(|r| r.sparse_document()).collect();
    let doc_refs: Vec<&str> = docs.iter().map(String::as_str).collect();
    let sparse = textbook_bm25(&doc_refs, query, cfg.bm25_k1, cfg.bm25_b);
    let lo = sparse.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sparse.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let q = embedder.embed(query);
    let mut scored: Vec<(usize, f64)> = db
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cos: f64 = q.iter().zip(&r.intent_embedding).map(|(a, b)| a * b).sum();
            let dense = (1.0 + cos.clamp(-1.0, 1.0)) / 2.0;
            let s = if hi > lo {
                (sparse[i] - lo) / (hi - lo)
            } else {
                0.5
            };
            (i, cfg.alpha * dense + (1.0 - cfg.alpha) * s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .iter()
        .take(cfg.k)
        .map(|(i, _)| db.records()[*i].id().to_string())
        .collect()
}

/// Length of the shortest action sequence solving `task_id`, searching
/// exhaustively up to `max_depth`. Typed text is limited to the strings the
/// task's instruction asks for, the only ones its goals can test.
pub fn bfs_solution_length(suite: &Suite, task_id: &str, max_depth: usize) -> Option<usize> {
    let task = suite.task(task_id).unwrap();
    let texts = task.typed_texts();
    let solved = |s: &DeviceState| suite.goal_status(s, task).iter().all(|&f| f);
    let (start, _) = suite.reset(task_id, 0).unwrap();
    if solved(&start) {
        return Some(0);
    }
    let mut seen: HashSet<DeviceState> = HashSet::from([start.clone()]);
    let mut frontier = vec![start];
    for depth in 1..=max_depth {
        let mut next = Vec::new();
        for state in &frontier {
            for action in suite.candidate_actions(state, &texts) {
                let Ok((succ, _)) = suite.transition(state, &action) else {
                    continue;
                };
                if solved(&succ) {
                    return Some(depth);
                }
                if seen.insert(succ.clone()) {
                    next.push(succ);
                }
            }
        }
        frontier = next;
    }
    None
}

/// Ids of `db` records, in order.
pub fn ids(db: &MemoryDb) -> Vec<String> {
    db.records().iter().map(|r| r.id().to_string()).collect()
}

pub fn tally<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut out = HashMap::new();
    for i in items {
        *out.entry(i).or_default() += 1;
    }
    out
}
