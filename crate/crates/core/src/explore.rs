//! Critic-guided self-exploration.
//!
//! Each episode starts in curiosity mode, preferring actions not yet tried in
//! the episode. Past step `t_focus` the explorer commits to an open goal of
//! the app it has been exploring. It takes the planned route where recent
//! experience in the processing DB vouches for the next step, and guesses
//! otherwise; guidance also prunes actions that recently did nothing on the
//! current screen. Terminated episodes are scored by a rubric critic and, if
//! they clear the gate, abstracted into the memory DB.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{stems, TemplateSummarizer};
use crate::memory::{InsertOutcome, MemoryDb, MemoryRecord, Outcome, ProcessingDb, THETA_GOOD};
use crate::model::{
    abstract_trajectory, Action, CriticScore, Direction, Observation, RawStep, Trajectory,
    WidgetKind, EXPLORE_INTENT,
};
use crate::retrieval::Embedder;
use crate::rng;
use crate::sim::{shortest_path, DeviceState, GoalTemplate, PlanLimits, Suite};

/// Text typed into fields while exploring without a goal.
pub const PROBE_TEXT: &str = "test";

/// Most guidance entries returned per step.
pub const GUIDANCE_CAP: usize = 3;

const PLAN_DEPTH: usize = 10;
const PLAN_STATES: usize = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticRubric {
    pub w_success: f64,
    pub w_efficiency: f64,
    pub w_coherence: f64,
    pub theta_good: u8,
}

impl Default for CriticRubric {
    fn default() -> Self {
        Self {
            w_success: 0.5,
            w_efficiency: 0.3,
            w_coherence: 0.2,
            theta_good: THETA_GOOD,
        }
    }
}

impl CriticRubric {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_success, self.w_efficiency, self.w_coherence];
        if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(
                "critic weights must be non-negative and sum to 1".into(),
            ));
        }
        CriticScore::new(self.theta_good)?;
        Ok(())
    }

    /// `1 + round(4 * (w_s * success + w_e * efficiency + w_c * coherence))`.
    pub fn combine(&self, success: bool, efficiency: f64, coherence: f64) -> CriticScore {
        let s = if success { 1.0 } else { 0.0 };
        let q = self.w_success * s + self.w_efficiency * efficiency + self.w_coherence * coherence;
        let value = 1.0 + (4.0 * q.clamp(0.0, 1.0)).round();
        CriticScore::new(value as u8).expect("rubric output lies in 1..=5")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub success: bool,
    pub efficiency: f64,
    pub coherence: f64,
    /// Goal template credited with the success.
    pub matched_goal: Option<String>,
    pub score: CriticScore,
}

/// Replays `tau` from its reset state and grades it.
pub fn critique(tau: &Trajectory, suite: &Suite, rubric: &CriticRubric) -> Result<CriticVerdict> {
    if tau.steps.is_empty() {
        return Err(Error::Validation(format!(
            "cannot score empty trajectory `{}`",
            tau.id
        )));
    }
    let mut state = suite.initial_state(tau.episode_seed);
    for step in &tau.steps {
        suite.apply(&mut state, &step.action)?;
    }
    let holding: Vec<&GoalTemplate> = suite
        .goals()
        .iter()
        .filter(|g| suite.holds_all(&state, &g.predicates))
        .collect();
    let matched = holding
        .iter()
        .find(|g| g.text == tau.final_intent)
        .or_else(|| holding.first())
        .copied();
    let success = matched.is_some();
    let efficiency = match matched {
        Some(g) => (g.expert_length as f64 / tau.steps.len() as f64).min(1.0),
        None => 0.0,
    };
    let changed = tau.steps.iter().filter(|s| s.changed_state).count();
    let coherence = changed as f64 / tau.steps.len() as f64;
    Ok(CriticVerdict {
        success,
        efficiency,
        coherence,
        matched_goal: matched.map(|g| g.text.clone()),
        score: rubric.combine(success, efficiency, coherence),
    })
}

pub fn score_trajectory(
    tau: &Trajectory,
    suite: &Suite,
    rubric: &CriticRubric,
) -> Result<CriticScore> {
    Ok(critique(tau, suite, rubric)?.score)
}

/// Admission test for the memory DB.
pub fn gate(score: CriticScore, theta: u8) -> bool {
    score.value() >= theta
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceEntry {
    pub matched_context: String,
    pub outcome: Outcome,
    pub action: Action,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guidance {
    pub entries: Vec<GuidanceEntry>,
}

impl Guidance {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn avoids(&self, action: &Action) -> bool {
        self.entries
            .iter()
            .any(|e| e.outcome == Outcome::Failed && &e.action == action)
    }

    pub fn suggests(&self, action: &Action) -> bool {
        self.entries
            .iter()
            .any(|e| e.outcome == Outcome::Succeeded && &e.action == action)
    }
}

/// Up to [`GUIDANCE_CAP`] recorded steps taken on the current screen, most
/// recent first and one per action.
pub fn retrieve_guidance(dproc: &ProcessingDb, current: &Observation, enabled: bool) -> Guidance {
    let mut entries: Vec<GuidanceEntry> = Vec::new();
    if !enabled {
        return Guidance { entries };
    }
    'outer: for entry in dproc.entries().rev() {
        for step in entry.steps.iter().rev() {
            if step.screen_id != current.screen_id
                || entries.iter().any(|e| e.action == step.action)
            {
                continue;
            }
            entries.push(GuidanceEntry {
                matched_context: step.screen_id.clone(),
                outcome: step.outcome,
                action: step.action.clone(),
            });
            if entries.len() == GUIDANCE_CAP {
                break 'outer;
            }
        }
    }
    Guidance { entries }
}

/// Visit counts keyed by screen and action, kept per episode.
pub type VisitCounts = HashMap<(String, Action), u32>;

fn probe_actions(obs: &Observation) -> Vec<Action> {
    let mut out: Vec<Action> = obs
        .enabled_widgets()
        .map(|w| match w.kind {
            WidgetKind::Field => Action::type_text(&w.widget_id, PROBE_TEXT),
            _ => Action::click(&w.widget_id),
        })
        .collect();
    out.push(Action::scroll(Direction::Down));
    out.push(Action::Back);
    out
}

/// The least-visited action on the screen that guidance does not advise
/// against, ties broken at random. With nothing left to try the explorer
/// goes back.
pub fn curiosity_action(
    obs: &Observation,
    visits: &VisitCounts,
    guidance: &Guidance,
    rng: &mut ChaCha8Rng,
) -> Action {
    let count = |a: &Action| {
        visits
            .get(&(obs.screen_id.clone(), a.clone()))
            .copied()
            .unwrap_or(0)
    };
    let candidates: Vec<Action> = probe_actions(obs)
        .into_iter()
        .filter(|a| !guidance.avoids(a))
        .collect();
    let Some(least) = candidates.iter().map(count).min() else {
        return Action::Back;
    };
    let ties: Vec<&Action> = candidates.iter().filter(|a| count(a) == least).collect();
    ties.choose(rng)
        .map(|a| (*a).clone())
        .expect("at least one candidate")
}

/// Picks the goal the explorer commits to. Inside an app the goal comes from
/// that app; from the launcher it comes from the app visited most in the
/// prefix (latest wins ties), or a random app if none was visited.
pub fn formulate_subgoal<'a>(
    partial: &Trajectory,
    current: &Observation,
    suite: &'a Suite,
    rng: &mut ChaCha8Rng,
) -> &'a GoalTemplate {
    let home = suite.home_app();
    let app = if current.app_id != home {
        current.app_id.clone()
    } else {
        let mut tally: HashMap<&str, (usize, usize)> = HashMap::new();
        for (i, s) in partial.steps.iter().enumerate() {
            let a = s.observation.app_id.as_str();
            if a != home {
                let e = tally.entry(a).or_default();
                e.0 += 1;
                e.1 = i;
            }
        }
        match tally.into_iter().max_by_key(|&(_, (n, last))| (n, last)) {
            Some((a, _)) => a.to_string(),
            None => {
                let apps: Vec<&str> = suite.user_apps().collect();
                apps.choose(rng).expect("suite has user apps").to_string()
            }
        }
    };
    let mut goals: Vec<&GoalTemplate> = suite.goals().iter().filter(|g| g.app == app).collect();
    if goals.is_empty() {
        goals = suite.goals().iter().collect();
    }
    // Exploration may have made some goals moot or unreachable (a deleted
    // contact cannot be starred); prefer those still open.
    if let Some(state) = replay(partial, suite) {
        let open: Vec<&GoalTemplate> = goals
            .iter()
            .copied()
            .filter(|g| !suite.holds_all(&state, &g.predicates))
            .filter(|g| {
                shortest_path(suite, &state, &g.predicates, &g.inputs, plan_limits()).is_some()
            })
            .collect();
        if !open.is_empty() {
            goals = open;
        }
    }
    goals.choose(rng).expect("suite has goal templates")
}

fn plan_limits() -> PlanLimits {
    PlanLimits {
        max_depth: PLAN_DEPTH,
        max_states: PLAN_STATES,
    }
}

fn replay(partial: &Trajectory, suite: &Suite) -> Option<DeviceState> {
    let mut state = suite.initial_state(partial.episode_seed);
    for s in &partial.steps {
        suite.apply(&mut state, &s.action).ok()?;
    }
    Some(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorerConfig {
    pub t_max: usize,
    pub t_focus: usize,
    pub episodes: usize,
    pub seed: u64,
    pub guidance_enabled: bool,
    /// Probability that a target-mode step follows the plan rather than the
    /// explorer's own lexical guess.
    pub competence: f64,
    /// Plan-following probability when guidance suggests the planned action.
    pub recall: f64,
    /// Probability that an unplanned step is a uniformly random candidate
    /// rather than the lexical guess.
    pub slip: f64,
    pub proc_capacity: usize,
    /// When false every terminated trajectory is archived (ablation).
    pub critic_filter: bool,
    pub rubric: CriticRubric,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        Self {
            t_max: 30,
            t_focus: 6,
            episodes: 200,
            seed: 0,
            guidance_enabled: true,
            competence: 0.0,
            recall: 0.7,
            slip: 1.0,
            proc_capacity: crate::memory::DEFAULT_PROC_CAPACITY,
            critic_filter: true,
            rubric: CriticRubric::default(),
        }
    }
}

impl ExplorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_focus < 1 || self.t_focus >= self.t_max {
            return Err(Error::Validation(format!(
                "need 1 <= t_focus < t_max, got t_focus={} t_max={}",
                self.t_focus, self.t_max
            )));
        }
        if self.episodes == 0 {
            return Err(Error::Validation("episode count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.competence)
            || !(0.0..=1.0).contains(&self.recall)
            || !(0.0..=1.0).contains(&self.slip)
        {
            return Err(Error::Validation(
                "competence, recall and slip must lie in [0, 1]".into(),
            ));
        }
        if self.proc_capacity == 0 {
            return Err(Error::Validation(
                "processing DB capacity must be positive".into(),
            ));
        }
        self.rubric.validate()
    }
}

/// One line of the exploration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub index: usize,
    pub goal_app: String,
    pub goal: String,
    pub verdict: CriticVerdict,
    pub admission: Admission,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    Inserted,
    Deduplicated,
    Rejected,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSummary {
    pub episodes: usize,
    pub inserted: usize,
    pub deduplicated: usize,
    pub rejected: usize,
    pub failed_episodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationRun {
    pub summary: ExplorationSummary,
    pub log: Vec<EpisodeLog>,
}

/// Runs `config.episodes` episodes against `suite`, archiving admitted
/// trajectories into `dmem`. `dproc` is cleared first.
pub fn run_exploration(
    config: &ExplorerConfig,
    suite: &Suite,
    dproc: &mut ProcessingDb,
    dmem: &mut MemoryDb,
    embedder: &dyn Embedder,
) -> Result<ExplorationRun> {
    config.validate()?;
    dproc.clear();
    let explorer = Explorer::new(config, suite);
    let mut run = ExplorationRun::default();
    for index in 0..config.episodes {
        run.summary.episodes += 1;
        let episode = match explorer.episode(index, dproc) {
            Ok(e) => e,
            Err(_) => {
                run.summary.failed_episodes += 1;
                continue;
            }
        };
        let (mut trajectory, goal) = episode;
        let verdict = critique(&trajectory, suite, &config.rubric)?;
        trajectory.critic_score = Some(verdict.score);
        let admission = if config.critic_filter && !gate(verdict.score, config.rubric.theta_good) {
            Admission::Rejected
        } else {
            let abs = abstract_trajectory(&trajectory, &TemplateSummarizer)?;
            match dmem.insert(MemoryRecord::new(abs, embedder))? {
                InsertOutcome::Inserted => Admission::Inserted,
                InsertOutcome::Deduplicated => Admission::Deduplicated,
            }
        };
        match admission {
            Admission::Inserted => run.summary.inserted += 1,
            Admission::Deduplicated => run.summary.deduplicated += 1,
            Admission::Rejected => run.summary.rejected += 1,
        }
        run.log.push(EpisodeLog {
            index,
            goal_app: goal.app.clone(),
            goal: goal.text.clone(),
            verdict,
            admission,
            trajectory,
        });
    }
    Ok(run)
}

struct Explorer<'a> {
    config: &'a ExplorerConfig,
    suite: &'a Suite,
}

impl<'a> Explorer<'a> {
    fn new(config: &'a ExplorerConfig, suite: &'a Suite) -> Self {
        Self { config, suite }
    }

    fn episode(
        &self,
        index: usize,
        dproc: &mut ProcessingDb,
    ) -> Result<(Trajectory, &'a GoalTemplate)> {
        let cfg = self.config;
        let suite = self.suite;
        let episode_seed = rng::mix(cfg.seed, &[index as u64]);
        let mut rng = rng::stream(cfg.seed, &[index as u64, 1]);
        let mut state = suite.initial_state(episode_seed);
        let mut obs = suite.observe(&state);
        let mut tau = Trajectory {
            id: Trajectory::id_for(cfg.seed, index),
            task_hint: None,
            steps: Vec::new(),
            final_intent: String::new(),
            episode_seed,
            critic_score: None,
            final_observation: None,
        };
        let mut visits = VisitCounts::new();
        let mut goal: Option<&'a GoalTemplate> = None;
        let mut plan: Option<Vec<Action>> = None;

        for t in 0..cfg.t_max {
            let guidance = retrieve_guidance(dproc, &obs, cfg.guidance_enabled);
            let (action, intent, planned) = if t <= cfg.t_focus {
                (
                    curiosity_action(&obs, &visits, &guidance, &mut rng),
                    EXPLORE_INTENT.to_string(),
                    false,
                )
            } else {
                let g = *goal.get_or_insert_with(|| formulate_subgoal(&tau, &obs, suite, &mut rng));
                let (a, planned) = self.target_action(&state, g, &guidance, &mut plan, &mut rng);
                (a, g.text.clone(), planned)
            };
            *visits
                .entry((obs.screen_id.clone(), action.clone()))
                .or_default() += 1;
            let effect = suite.apply(&mut state, &action)?;
            match &mut plan {
                Some(p) if planned => {
                    p.remove(0);
                }
                Some(_) if effect.changed_state => plan = None,
                _ => {}
            }
            tau.steps.push(RawStep {
                observation: std::mem::replace(&mut obs, effect.new_observation),
                action,
                intent,
                changed_state: effect.changed_state,
            });
            dproc.update(&tau);
            if goal.is_some_and(|g| suite.holds_all(&state, &g.predicates)) {
                break;
            }
        }

        let goal = goal.expect("t_focus < t_max guarantees a goal");
        tau.final_intent = if suite.holds_all(&state, &goal.predicates) {
            goal.text.clone()
        } else {
            suite
                .goals()
                .iter()
                .find(|g| suite.holds_all(&state, &g.predicates))
                .unwrap_or(goal)
                .text
                .clone()
        };
        tau.final_observation = Some(obs);
        Ok((tau, goal))
    }

    /// Follows the plan with probability `competence`, or `recall` when
    /// guidance lists the planned action as having worked on this screen;
    /// otherwise takes the explorer's own lexical guess. Returns whether the
    /// plan was used.
    fn target_action(
        &self,
        state: &DeviceState,
        goal: &GoalTemplate,
        guidance: &Guidance,
        plan: &mut Option<Vec<Action>>,
        rng: &mut ChaCha8Rng,
    ) -> (Action, bool) {
        let u: f64 = rng.gen();
        let has_suggestions = guidance
            .entries
            .iter()
            .any(|e| e.outcome == Outcome::Succeeded);
        let ceiling = if has_suggestions {
            self.config.competence.max(self.config.recall)
        } else {
            self.config.competence
        };
        // Planning is skipped when no outcome of the draw could follow it.
        if u < ceiling {
            if plan.as_ref().is_none_or(|p| p.is_empty()) {
                *plan = shortest_path(
                    self.suite,
                    state,
                    &goal.predicates,
                    &goal.inputs,
                    plan_limits(),
                );
            }
            if let Some(next) = plan.as_ref().and_then(|p| p.first()) {
                let p = if guidance.suggests(next) {
                    self.config.recall
                } else {
                    self.config.competence
                };
                if u < p {
                    return (next.clone(), true);
                }
            }
        }
        (self.guess(state, goal, guidance, rng), false)
    }

    /// With probability `slip` a random action guidance does not rule out;
    /// otherwise the best label overlap with the goal, ties to the rng.
    fn guess(
        &self,
        state: &DeviceState,
        goal: &GoalTemplate,
        guidance: &Guidance,
        rng: &mut ChaCha8Rng,
    ) -> Action {
        let obs = self.suite.observe(state);
        let goal_words = stems(&goal.text);
        let allowed: Vec<Action> = self
            .suite
            .candidate_actions(state, &goal.inputs)
            .into_iter()
            .filter(|a| !guidance.avoids(a))
            .collect();
        if rng.gen_bool(self.config.slip) {
            return allowed.choose(rng).cloned().unwrap_or(Action::Back);
        }
        let scored: Vec<(Action, usize)> = allowed
            .into_iter()
            .map(|a| {
                let overlap = a
                    .widget_id()
                    .and_then(|id| obs.widget(id))
                    .map_or(0, |w| stems(&w.label).intersection(&goal_words).count());
                let typed = usize::from(matches!(a, Action::Type { .. }));
                (a, overlap + typed)
            })
            .collect();
        let Some(best) = scored.iter().map(|(_, k)| *k).max() else {
            return Action::Back;
        };
        let top: Vec<&Action> = scored
            .iter()
            .filter(|(_, k)| *k == best)
            .map(|(a, _)| a)
            .collect();
        top.choose(rng).map_or(Action::Back, |a| (*a).clone())
    }
}

#[cfg(test)]
mod tests;
