//! Memory-augmented task execution.
//!
//! Retrieved records are rendered as step-by-step guides and combined with
//! the instruction, the action history and the current screen into a
//! [`ContextRecord`]. The default [`GuidePolicy`] follows whichever guide
//! matches the screen and falls back to a memory-free lexical policy.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{MemoryDb, MemoryRecord};
use crate::model::{
    validate_action, Action, ActionHistory, Observation, ObservationSummarizer, TaskInstruction,
    WidgetKind,
};
use crate::retrieval::{tokenize, Embedder, HybridIndex, RetrievalConfig};
use crate::rng;
use crate::sim::Suite;

/// `App <app> screen <screen>: widgets [<kind>:<label>, ...]`
pub fn summarize_observation(obs: &Observation) -> String {
    let widgets: Vec<String> = obs
        .widgets
        .iter()
        .map(|w| {
            let off = if w.enabled { "" } else { " (disabled)" };
            format!("{}:{}{off}", w.kind.as_str(), w.label)
        })
        .collect();
    format!(
        "App {} screen {}: widgets [{}]",
        obs.app_id,
        obs.screen_id,
        widgets.join(", ")
    )
}

/// The default summarizer, [`summarize_observation`].
#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateSummarizer;

impl ObservationSummarizer for TemplateSummarizer {
    fn summarize(&self, obs: &Observation) -> String {
        summarize_observation(obs)
    }
}

/// Widget labels listed in a summary, lowercased and tokenized.
pub fn summary_label_tokens(summary: &str) -> BTreeSet<String> {
    let (Some(open), Some(close)) = (summary.find('['), summary.rfind(']')) else {
        return BTreeSet::new();
    };
    if close <= open {
        return BTreeSet::new();
    }
    summary[open + 1..close]
        .split(", ")
        .filter_map(|entry| entry.split_once(':').map(|(_, label)| label))
        .flat_map(|label| tokenize(label.trim_end_matches(" (disabled)")))
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Label-token overlap a stored description needs with the live screen.
pub const LABEL_MATCH: f64 = 0.5;

/// Stem overlap a guide's intent needs with the task instruction.
pub const INTENT_MATCH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuideStep {
    pub interface_description: String,
    pub intent: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedMemory {
    pub source_id: String,
    pub header: String,
    pub steps: Vec<GuideStep>,
}

impl FormattedMemory {
    /// One numbered line per step.
    pub fn lines(&self) -> Vec<String> {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                format!(
                    "{}. {{interface: {}; intent: {}; action: {}}}",
                    i + 1,
                    s.interface_description,
                    s.intent,
                    s.action
                )
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!("Guide {} - {}\n", self.source_id, self.header);
        for line in self.lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

pub fn format_memories(records: &[&MemoryRecord]) -> Vec<FormattedMemory> {
    records
        .iter()
        .map(|r| FormattedMemory {
            source_id: r.id().to_string(),
            header: r.abstracted.final_intent.clone(),
            steps: r
                .abstracted
                .steps
                .iter()
                .map(|s| GuideStep {
                    interface_description: s.interface_description.clone(),
                    intent: s.intent.clone(),
                    action: s.action.clone(),
                    target_label: s.target_label.clone(),
                })
                .collect(),
        })
        .collect()
}

/// Everything the policy sees at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub instruction: TaskInstruction,
    pub memories: Vec<FormattedMemory>,
    pub history: ActionHistory,
    pub observation: Observation,
    pub observation_summary: String,
}

impl ContextRecord {
    /// Canonical prompt text handed to model-backed policies.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "## Task\n{}", self.instruction.text);
        if let Some(app) = &self.instruction.app_hint {
            let _ = writeln!(out, "App: {app}");
        }
        out.push_str("\n## Memories\n");
        if self.memories.is_empty() {
            out.push_str("(none)\n");
        }
        for m in &self.memories {
            out.push_str(&m.render());
        }
        out.push_str("\n## History\n");
        if self.history.is_empty() {
            out.push_str("(none)\n");
        }
        for (i, a) in self.history.iter().enumerate() {
            let _ = writeln!(out, "{}. {a}", i + 1);
        }
        let _ = write!(out, "\n## Screen\n{}\n", self.observation_summary);
        let _ = writeln!(
            out,
            "\n## Actions\nClick(widget), Type(widget, text), Scroll(up|down), Back, Home, Finish"
        );
        out
    }
}

pub fn assemble_context(
    instruction: &TaskInstruction,
    memories: &[FormattedMemory],
    history: &ActionHistory,
    observation: &Observation,
) -> ContextRecord {
    assemble_context_with(
        instruction,
        memories,
        history,
        observation,
        &TemplateSummarizer,
    )
}

pub fn assemble_context_with(
    instruction: &TaskInstruction,
    memories: &[FormattedMemory],
    history: &ActionHistory,
    observation: &Observation,
    summarizer: &dyn ObservationSummarizer,
) -> ContextRecord {
    ContextRecord {
        instruction: instruction.clone(),
        memories: memories.to_vec(),
        history: history.clone(),
        observation: observation.clone(),
        observation_summary: summarizer.summarize(observation),
    }
}

/// Chooses the next action from a context.
pub trait Policy: Sync {
    fn act(&self, ctx: &ContextRecord, rng: &mut ChaCha8Rng) -> Action;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "to", "and", "it", "in", "of", "for", "my", "with", "then", "on", "off",
    "at", "app",
];

fn stem(token: &str) -> String {
    match token.strip_suffix('s') {
        Some(s) if token.len() > 3 => s.to_string(),
        _ => token.to_string(),
    }
}

/// Content words of `text`: tokens minus stopwords, with a plural `s`
/// stripped from longer words.
pub fn stems(text: &str) -> BTreeSet<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .map(|t| stem(&t))
        .collect()
}

/// Single-quoted arguments of an instruction, in order.
pub fn quoted_arguments(text: &str) -> Vec<String> {
    text.split('\'')
        .skip(1)
        .step_by(2)
        .map(str::to_string)
        .collect()
}

/// Memory-free policy: clicks the novel widget whose label best overlaps the
/// instruction, types quoted arguments into fields, and finishes once
/// nothing relevant is left. With probability `epsilon` it acts at random.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalPolicy {
    pub epsilon: f64,
}

impl Default for LexicalPolicy {
    fn default() -> Self {
        Self { epsilon: 0.1 }
    }
}

impl Policy for LexicalPolicy {
    fn act(&self, ctx: &ContextRecord, rng: &mut ChaCha8Rng) -> Action {
        let mut query = stems(&ctx.instruction.text);
        if let Some(app) = &ctx.instruction.app_hint {
            query.extend(stems(app));
        }
        let typed: Vec<&str> = ctx
            .history
            .iter()
            .filter_map(|a| match a {
                Action::Type { text, .. } => Some(text.as_str()),
                _ => None,
            })
            .collect();
        let next_arg = quoted_arguments(&ctx.instruction.text)
            .into_iter()
            .find(|a| !typed.contains(&a.as_str()));

        let mut candidates: Vec<(Action, usize)> = Vec::new();
        for w in ctx.observation.enabled_widgets() {
            let overlap = stems(&w.label).intersection(&query).count();
            if w.kind == WidgetKind::Field {
                if let Some(arg) = &next_arg {
                    candidates.push((Action::type_text(&w.widget_id, arg), overlap + 1));
                }
            } else {
                candidates.push((Action::click(&w.widget_id), overlap));
            }
        }
        candidates.push((Action::Back, 0));

        if rng.gen_bool(self.epsilon) {
            return candidates
                .choose(rng)
                .expect("Back is always a candidate")
                .0
                .clone();
        }
        let taken = |a: &Action| ctx.history.iter().filter(|h| *h == a).count();
        let novel_relevant = candidates
            .iter()
            .filter(|(a, r)| *r > 0 && taken(a) == 0)
            .min_by_key(|(_, r)| std::cmp::Reverse(*r));
        if let Some((a, _)) = novel_relevant {
            return a.clone();
        }
        // Everything relevant here has been done: either this screen is
        // finished or the task is.
        if candidates.iter().any(|(_, r)| *r > 0) {
            return Action::Finish;
        }
        Action::Back
    }
}

fn description_app(description: &str) -> Option<&str> {
    description.strip_prefix("App ")?.split(' ').next()
}

/// The steps a guide asks the agent to follow. With a `focus` app, detours
/// before the guide's last visit to it are dropped: only steps inside the
/// app, steps entering it, and everything after the last in-app step are
/// kept. A guide that never visits the app is kept whole.
pub fn guide_steps<'m>(memory: &'m FormattedMemory, focus: Option<&str>) -> Vec<&'m GuideStep> {
    let steps = &memory.steps;
    let inside =
        |i: usize| focus.is_some() && description_app(&steps[i].interface_description) == focus;
    let Some(last) = (0..steps.len()).rev().find(|&i| inside(i)) else {
        return steps.iter().collect();
    };
    (0..steps.len())
        .filter(|&i| i > last || inside(i) || (i + 1 < steps.len() && inside(i + 1)))
        .map(|i| &steps[i])
        .collect()
}

/// How far into [`guide_steps`] the agent has got: every executed action
/// advances the cursor past its first occurrence at or after the cursor.
pub fn guide_cursor(
    memory: &FormattedMemory,
    history: &ActionHistory,
    focus: Option<&str>,
) -> usize {
    let steps = guide_steps(memory, focus);
    let mut cursor = 0;
    for h in history.iter() {
        if let Some(j) = steps[cursor..].iter().position(|s| &s.action == h) {
            cursor += j + 1;
        }
    }
    cursor
}

/// The live form of a recorded action. Widget actions bind to the enabled
/// widget whose label best overlaps the recorded target label (at least
/// [`LABEL_MATCH`]), preferring the recorded id; without a recorded label
/// the action is used as is if valid.
pub fn bind_action(step: &GuideStep, obs: &Observation) -> Option<Action> {
    let (Some(id), Some(label)) = (step.action.widget_id(), &step.target_label) else {
        return validate_action(obs, &step.action).then(|| step.action.clone());
    };
    let want: BTreeSet<String> = tokenize(label).into_iter().collect();
    let mut best: Option<(f64, bool, &str)> = None;
    for w in obs.enabled_widgets() {
        let overlap = jaccard(&want, &tokenize(&w.label).into_iter().collect());
        if overlap < LABEL_MATCH {
            continue;
        }
        let key = (overlap, w.widget_id == id);
        if best.is_none_or(|(o, same, _)| key > (o, same)) {
            best = Some((overlap, key.1, &w.widget_id));
        }
    }
    let (_, _, live) = best?;
    Some(match &step.action {
        Action::Type { text, .. } => Action::type_text(live, text),
        _ => Action::click(live),
    })
}

/// First guide step at or after the cursor that fits the current screen,
/// bound to the live widgets.
pub fn guide_proposal(
    memory: &FormattedMemory,
    history: &ActionHistory,
    screen_labels: &BTreeSet<String>,
    obs: &Observation,
    focus: Option<&str>,
) -> Option<Action> {
    let cursor = guide_cursor(memory, history, focus);
    let steps = guide_steps(memory, focus);
    steps.get(cursor..)?.iter().find_map(|s| {
        if jaccard(
            &summary_label_tokens(&s.interface_description),
            screen_labels,
        ) < LABEL_MATCH
        {
            return None;
        }
        bind_action(s, obs)
    })
}

/// Follows the [`relevant`] retrieved guides. Among guides that propose
/// something, only those whose intent is closest to the task count, and
/// conflicting proposals between them are sampled uniformly; without
/// proposals it defers to `fallback`.
/// Finishes once one of the closest guides has had its last step executed. When the task
/// names an app, guides are read for the steps inside it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidePolicy {
    pub fallback: LexicalPolicy,
}

impl GuidePolicy {
    /// Distinct proposals of the closest proposing guides, in memory order.
    pub fn proposals(ctx: &ContextRecord) -> Vec<Action> {
        let labels = summary_label_tokens(&summarize_observation(&ctx.observation));
        let want = stems(&ctx.instruction.text);
        let focus = ctx.instruction.app_hint.as_deref();
        let scored: Vec<(f64, Action)> = relevant(ctx)
            .into_iter()
            .filter_map(|m| {
                guide_proposal(m, &ctx.history, &labels, &ctx.observation, focus)
                    .map(|a| (jaccard(&stems(&m.header), &want), a))
            })
            .collect();
        let best = scored
            .iter()
            .map(|(j, _)| *j)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<Action> = Vec::new();
        for (j, a) in scored {
            if j == best && !out.contains(&a) {
                out.push(a);
            }
        }
        out
    }
}

/// Retrieved guides whose recorded intent is close enough to the task to be
/// worth following.
pub fn relevant(ctx: &ContextRecord) -> Vec<&FormattedMemory> {
    let want = stems(&ctx.instruction.text);
    ctx.memories
        .iter()
        .filter(|m| jaccard(&stems(&m.header), &want) >= INTENT_MATCH)
        .collect()
}

impl Policy for GuidePolicy {
    fn act(&self, ctx: &ContextRecord, rng: &mut ChaCha8Rng) -> Action {
        let memories = relevant(ctx);
        let focus = ctx.instruction.app_hint.as_deref();
        if memories.is_empty() {
            return self.fallback.act(ctx, rng);
        }
        let want = stems(&ctx.instruction.text);
        let guides: Vec<(f64, &FormattedMemory)> = memories
            .iter()
            .filter(|m| !m.steps.is_empty())
            .map(|m| (jaccard(&stems(&m.header), &want), *m))
            .collect();
        let closest = guides
            .iter()
            .map(|(j, _)| *j)
            .fold(f64::NEG_INFINITY, f64::max);
        if !ctx.history.is_empty()
            && guides.iter().any(|(j, m)| {
                *j == closest && guide_cursor(m, &ctx.history, focus) >= guide_steps(m, focus).len()
            })
        {
            return Action::Finish;
        }
        let proposals = Self::proposals(ctx);
        match proposals.len() {
            0 => self.fallback.act(ctx, rng),
            1 => proposals[0].clone(),
            _ => proposals.choose(rng).expect("non-empty").clone(),
        }
    }
}

pub fn guide_step(ctx: &ContextRecord, rng: &mut ChaCha8Rng) -> Action {
    GuidePolicy::default().act(ctx, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub retrieval: RetrievalConfig,
    pub t_max: usize,
    pub policy: GuidePolicy,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            retrieval: RetrievalConfig::default(),
            t_max: 20,
            policy: GuidePolicy::default(),
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        if self.t_max == 0 {
            return Err(Error::Validation("t_max must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.policy.fallback.epsilon) {
            return Err(Error::Validation("epsilon must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub seed: u64,
    pub success: bool,
    pub sub_goal_flags: Vec<bool>,
    /// Actions executed, not counting `Finish`.
    pub steps_taken: usize,
    /// Executed actions, including a terminal `Finish`.
    pub actions: Vec<Action>,
    /// One flag per executed non-`Finish` action.
    pub changed: Vec<bool>,
    pub finish_emitted: bool,
    pub memory_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs tasks against one memory snapshot.
pub struct Agent<'a> {
    suite: &'a Suite,
    db: &'a MemoryDb,
    index: HybridIndex,
    cfg: InferenceConfig,
    embedder: &'a dyn Embedder,
}

impl<'a> Agent<'a> {
    pub fn new(
        suite: &'a Suite,
        db: &'a MemoryDb,
        cfg: InferenceConfig,
        embedder: &'a dyn Embedder,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            suite,
            db,
            index: HybridIndex::build(db, &cfg.retrieval),
            cfg,
            embedder,
        })
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.cfg
    }

    pub fn retrieve(&self, instruction: &TaskInstruction) -> Result<Vec<&'a MemoryRecord>> {
        self.index.retrieve_topk(
            self.db,
            &instruction.text,
            &self.cfg.retrieval,
            self.embedder,
        )
    }

    pub fn run_task(&self, task_id: &str, seed: u64) -> Result<EpisodeResult> {
        self.run_task_with(task_id, seed, &self.cfg.policy)
    }

    pub fn run_task_with(
        &self,
        task_id: &str,
        seed: u64,
        policy: &dyn Policy,
    ) -> Result<EpisodeResult> {
        let task = self.suite.task(task_id)?;
        let memories = self.retrieve(&task.instruction)?;
        let formatted = format_memories(&memories);
        let (mut state, mut obs) = self.suite.reset(task_id, seed)?;
        let mut rng = rng::stream(seed, &[rng::fnv1a(task_id.as_bytes())]);
        let mut history = ActionHistory::new();
        let mut changed = Vec::new();
        let mut finish_emitted = false;
        let mut error = None;

        while history.len() - usize::from(finish_emitted) < self.cfg.t_max {
            let ctx = assemble_context(&task.instruction, &formatted, &history, &obs);
            let action = policy.act(&ctx, &mut rng);
            if action.is_finish() {
                history.push(action);
                finish_emitted = true;
                break;
            }
            match self.suite.apply(&mut state, &action) {
                Ok(effect) => {
                    history.push(action);
                    changed.push(effect.changed_state);
                    obs = effect.new_observation;
                }
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }

        let flags = self.suite.goal_status(&state, task);
        let success = error.is_none() && flags.iter().all(|&f| f);
        Ok(EpisodeResult {
            task_id: task_id.to_string(),
            seed,
            success,
            sub_goal_flags: flags,
            steps_taken: changed.len(),
            actions: history.entries,
            changed,
            finish_emitted,
            memory_ids: memories.iter().map(|m| m.id().to_string()).collect(),
            error,
        })
    }

    /// Every `(task, seed)` pair in task-major order, run in parallel.
    pub fn run_suite(&self, seeds: &[u64]) -> Result<Vec<EpisodeResult>> {
        let jobs: Vec<(&str, u64)> = self
            .suite
            .tasks()
            .iter()
            .flat_map(|t| seeds.iter().map(move |&s| (t.id(), s)))
            .collect();
        jobs.par_iter()
            .map(|&(task, seed)| self.run_task(task, seed))
            .collect()
    }
}

/// One-shot form of [`Agent::run_task`].
pub fn run_task(
    suite: &Suite,
    task_id: &str,
    db: &MemoryDb,
    cfg: &InferenceConfig,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<EpisodeResult> {
    Agent::new(suite, db, *cfg, embedder)?.run_task(task_id, seed)
}
