use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics, MetricsReport};
use crate::error::{Error, Result};
use crate::explore::{run_exploration, EpisodeLog, ExplorationRun, ExplorerConfig};
use crate::inference::{Agent, EpisodeResult, InferenceConfig, TemplateSummarizer};
use crate::memory::{MemoryDb, MemoryRecord, ProcessingDb};
use crate::model::{abstract_trajectory, CriticScore, RawStep, Trajectory};
use crate::retrieval::{Embedder, Ranking};
use crate::sim::Suite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoCriticFilter,
    NoHybrid,
    NoGuidance,
    Baseline,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoGuidance,
        Variant::NoHybrid,
        Variant::Baseline,
        Variant::NoCriticFilter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoCriticFilter => "no_critic_filter",
            Variant::NoHybrid => "no_hybrid",
            Variant::NoGuidance => "no_guidance",
            Variant::Baseline => "baseline",
        }
    }

    fn exploration(self) -> Option<(bool, bool)> {
        // (guidance, critic filter)
        match self {
            Variant::Full | Variant::NoHybrid => Some((true, true)),
            Variant::NoGuidance => Some((false, true)),
            Variant::NoCriticFilter => Some((true, false)),
            Variant::Baseline => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub variants: Vec<Variant>,
    /// Retrieval sizes evaluated for every memory-using variant.
    pub ks: Vec<usize>,
    /// Evaluation seeds; every task runs once per seed.
    pub seeds: Vec<u64>,
    pub explorer: ExplorerConfig,
    pub inference: InferenceConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            ks: vec![2],
            seeds: (0..8).collect(),
            explorer: ExplorerConfig::default(),
            inference: InferenceConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Validation(
                "experiment needs at least one seed".into(),
            ));
        }
        if self.variants.is_empty() {
            return Err(Error::Validation(
                "experiment needs at least one variant".into(),
            ));
        }
        if self.ks.is_empty() {
            return Err(Error::Validation("experiment needs at least one K".into()));
        }
        self.explorer.validate()?;
        self.inference.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub k: usize,
    pub memory_size: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn sr(&self, variant: Variant, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant && r.k == k)
            .map(|r| r.report.overall.sr)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "variant",
            "k",
            "memory_size",
            "episodes",
            "sr",
            "sub_sr",
            "rrr",
            "ror",
            "sr_easy",
            "sr_medium",
            "sr_hard",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            let d = |key| {
                r.report
                    .by_difficulty
                    .get(&key)
                    .map_or(0.0, |m: &Metrics| m.sr)
            };
            w.write_record([
                r.variant.as_str().to_string(),
                r.k.to_string(),
                r.memory_size.to_string(),
                r.report.overall.episodes.to_string(),
                fmt2(r.report.overall.sr),
                fmt2(r.report.overall.sub_sr),
                fmt2(r.report.overall.rrr),
                fmt2(r.report.overall.ror),
                fmt2(d(crate::sim::Difficulty::Easy)),
                fmt2(d(crate::sim::Difficulty::Medium)),
                fmt2(d(crate::sim::Difficulty::Hard)),
            ])
            .map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Validation(format!("CSV write failed: {e}"))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Validation(format!("CSV flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Explores with the given settings into a fresh database.
pub fn build_memory(
    suite: &Suite,
    explorer: &ExplorerConfig,
    embedder: &dyn Embedder,
) -> Result<(MemoryDb, ExplorationRun)> {
    let mut dproc = ProcessingDb::new(explorer.proc_capacity);
    let mut dmem = if explorer.critic_filter {
        MemoryDb::new(embedder.dim())
    } else {
        MemoryDb::ungated(embedder.dim())
    };
    let run = run_exploration(explorer, suite, &mut dproc, &mut dmem, embedder)?;
    Ok((dmem, run))
}

/// One top-scored record per task, holding the task's expert solution
/// replayed from its reset state.
pub fn expert_memory(suite: &Suite, embedder: &dyn Embedder) -> Result<MemoryDb> {
    let mut db = MemoryDb::new(embedder.dim());
    for task in suite.tasks() {
        let (mut state, mut obs) = suite.reset(task.id(), 0)?;
        let mut steps = Vec::new();
        for action in &task.expert_steps {
            let effect = suite.apply(&mut state, action)?;
            steps.push(RawStep {
                observation: std::mem::replace(&mut obs, effect.new_observation),
                action: action.clone(),
                intent: task.instruction.text.clone(),
                changed_state: effect.changed_state,
            });
        }
        let tau = Trajectory {
            id: format!("expert-{}", task.id()),
            task_hint: Some(task.id().to_string()),
            steps,
            final_intent: task.instruction.text.clone(),
            episode_seed: 0,
            critic_score: Some(CriticScore::new(CriticScore::MAX)?),
            final_observation: Some(obs),
        };
        db.insert(MemoryRecord::new(
            abstract_trajectory(&tau, &TemplateSummarizer)?,
            embedder,
        ))?;
    }
    Ok(db)
}

/// Runs every suite task once per seed.
pub fn evaluate(
    suite: &Suite,
    db: &MemoryDb,
    cfg: &InferenceConfig,
    seeds: &[u64],
    embedder: &dyn Embedder,
) -> Result<Vec<EpisodeResult>> {
    Agent::new(suite, db, *cfg, embedder)?.run_suite(seeds)
}

/// Rebuilds the memory for each variant (sharing explorations between
/// variants with identical exploration settings) and evaluates it.
pub fn run_ablation(
    spec: &ExperimentSpec,
    suite: &Suite,
    embedder: &dyn Embedder,
) -> Result<AblationTable> {
    spec.validate()?;
    let mut memories: BTreeMap<(bool, bool), MemoryDb> = BTreeMap::new();
    let empty = MemoryDb::new(embedder.dim());
    let mut table = AblationTable::default();
    for &variant in &spec.variants {
        let db = match variant.exploration() {
            None => &empty,
            Some(key) => {
                if let Entry::Vacant(slot) = memories.entry(key) {
                    let explorer = ExplorerConfig {
                        guidance_enabled: key.0,
                        critic_filter: key.1,
                        ..spec.explorer
                    };
                    slot.insert(build_memory(suite, &explorer, embedder)?.0);
                }
                &memories[&key]
            }
        };
        let ks: Vec<usize> = if variant == Variant::Baseline {
            vec![0]
        } else {
            spec.ks.clone()
        };
        for k in ks {
            let mut cfg = spec.inference;
            cfg.retrieval.k = k;
            if variant == Variant::NoHybrid {
                cfg.retrieval.ranking = Ranking::Random {
                    seed: spec.explorer.seed,
                };
            }
            let results = evaluate(suite, db, &cfg, &spec.seeds, embedder)?;
            table.rows.push(AblationRow {
                variant,
                k,
                memory_size: db.len(),
                report: compute_metrics(&results, suite)?,
            });
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub metrics: Metrics,
}

pub fn sweep_k(
    suite: &Suite,
    db: &MemoryDb,
    cfg: &InferenceConfig,
    ks: &[usize],
    seeds: &[u64],
    embedder: &dyn Embedder,
) -> Result<Vec<SweepRow>> {
    ks.iter()
        .map(|&k| {
            let mut c = *cfg;
            c.retrieval.k = k;
            let results = evaluate(suite, db, &c, seeds, embedder)?;
            Ok(SweepRow {
                k,
                metrics: compute_metrics(&results, suite)?.overall,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["k", "episodes", "sr", "sub_sr", "rrr", "ror"])
        .map_err(csv_err)?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.k.to_string(),
            m.episodes.to_string(),
            fmt2(m.sr),
            fmt2(m.sub_sr),
            fmt2(m.rrr),
            fmt2(m.ror),
        ])
        .map_err(csv_err)?;
    }
    finish_csv(w)
}

pub const STAGES: usize = 4;

/// Splits `n` episodes into `parts` consecutive ranges whose sizes differ by
/// at most one, larger ranges first.
pub fn stage_ranges(n: usize, parts: usize) -> Vec<Range<usize>> {
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageQuality {
    pub stage_sizes: Vec<usize>,
    /// Percentage of episodes scoring at least the threshold, per stage;
    /// `None` for empty stages.
    pub overall: Vec<Option<f64>>,
    /// The same, restricted to episodes whose goal belonged to each app.
    pub per_app: BTreeMap<String, Vec<Option<f64>>>,
}

/// High-quality rate over four consecutive stages of an exploration log.
pub fn quality_over_time(log: &[EpisodeLog], theta: u8) -> StageQuality {
    let mut sorted: Vec<&EpisodeLog> = log.iter().collect();
    sorted.sort_by_key(|e| e.index);
    let ranges = stage_ranges(sorted.len(), STAGES);
    let rate = |eps: &[&&EpisodeLog]| -> Option<f64> {
        if eps.is_empty() {
            return None;
        }
        let good = eps
            .iter()
            .filter(|e| e.verdict.score.value() >= theta)
            .count();
        Some(100.0 * good as f64 / eps.len() as f64)
    };
    let mut apps: Vec<&str> = sorted.iter().map(|e| e.goal_app.as_str()).collect();
    apps.sort_unstable();
    apps.dedup();
    let overall = ranges
        .iter()
        .map(|r| rate(&sorted[r.clone()].iter().collect::<Vec<_>>()))
        .collect();
    let per_app = apps
        .iter()
        .map(|&app| {
            let rates = ranges
                .iter()
                .map(|r| {
                    let eps: Vec<&&EpisodeLog> = sorted[r.clone()]
                        .iter()
                        .filter(|e| e.goal_app == app)
                        .collect();
                    rate(&eps)
                })
                .collect();
            (app.to_string(), rates)
        })
        .collect();
    StageQuality {
        stage_sizes: ranges.iter().map(|r| r.len()).collect(),
        overall,
        per_app,
    }
}

impl StageQuality {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["scope".to_string()];
        header.extend((1..=self.overall.len()).map(|i| format!("stage{i}")));
        w.write_record(&header).map_err(csv_err)?;
        let cell = |x: &Option<f64>| x.map(fmt2).unwrap_or_default();
        let mut rows = vec![("all".to_string(), &self.overall)];
        rows.extend(self.per_app.iter().map(|(a, v)| (a.clone(), v)));
        for (scope, rates) in rows {
            let mut rec = vec![scope];
            rec.extend(rates.iter().map(cell));
            w.write_record(&rec).map_err(csv_err)?;
        }
        finish_csv(w)
    }
}

/// `id,intent,e0,...` with one row per record, floats in shortest
/// round-trip form.
pub fn emit_embeddings(db: &MemoryDb) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "intent".to_string()];
    header.extend((0..db.embed_dim()).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in db.records() {
        let mut rec = vec![r.id().to_string(), r.abstracted.final_intent.clone()];
        rec.extend(r.intent_embedding.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    finish_csv(w)
}
