//! Shared data model: tasks, screens, actions, trajectories and their
//! abstracted memory form.
//!
//! Every type here is plain data. Values are built once and then only read,
//! so they can be shared freely between threads.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intent recorded for steps taken in curiosity mode.
pub const EXPLORE_INTENT: &str = "explore";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstruction {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub app_hint: Option<String>,
}

impl TaskInstruction {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let inst = Self {
            id: id.into(),
            text: text.into(),
            app_hint: None,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn with_app_hint(mut self, app: impl Into<String>) -> Self {
        self.app_hint = Some(app.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Validation(format!(
                "task `{}` has an empty instruction",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Click { widget_id: String },
    Type { widget_id: String, text: String },
    Scroll { direction: Direction },
    Back,
    Home,
    Finish,
}

impl Action {
    pub fn click(widget_id: impl Into<String>) -> Self {
        Action::Click {
            widget_id: widget_id.into(),
        }
    }

    pub fn type_text(widget_id: impl Into<String>, text: impl Into<String>) -> Self {
        Action::Type {
            widget_id: widget_id.into(),
            text: text.into(),
        }
    }

    pub fn scroll(direction: Direction) -> Self {
        Action::Scroll { direction }
    }

    /// Widget this action targets, if any.
    pub fn widget_id(&self) -> Option<&str> {
        match self {
            Action::Click { widget_id } | Action::Type { widget_id, .. } => Some(widget_id),
            _ => None,
        }
    }

    pub fn is_finish(&self) -> bool {
        matches!(self, Action::Finish)
    }

    pub fn validate(&self) -> Result<()> {
        match self.widget_id() {
            Some("") => Err(Error::Validation(format!(
                "action {self} carries an empty widget id"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click { widget_id } => write!(f, "click({widget_id})"),
            Action::Type { widget_id, text } => write!(f, "type({widget_id}, {text:?})"),
            Action::Scroll { direction } => match direction {
                Direction::Up => f.write_str("scroll(up)"),
                Direction::Down => f.write_str("scroll(down)"),
            },
            Action::Back => f.write_str("back"),
            Action::Home => f.write_str("home"),
            Action::Finish => f.write_str("finish"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    Button,
    Field,
    ListItem,
    Toggle,
}

impl WidgetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            WidgetKind::Button => "button",
            WidgetKind::Field => "field",
            WidgetKind::ListItem => "list_item",
            WidgetKind::Toggle => "toggle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Widget {
    pub widget_id: String,
    pub kind: WidgetKind,
    pub label: String,
    pub enabled: bool,
}

/// Structured projection of the device screen.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub app_id: String,
    pub screen_id: String,
    pub widgets: Vec<Widget>,
}

impl Observation {
    pub fn widget(&self, widget_id: &str) -> Option<&Widget> {
        self.widgets.iter().find(|w| w.widget_id == widget_id)
    }

    pub fn enabled_widgets(&self) -> impl Iterator<Item = &Widget> {
        self.widgets.iter().filter(|w| w.enabled)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for w in &self.widgets {
            if !seen.insert(w.widget_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate widget id `{}` on screen `{}`",
                    w.widget_id, self.screen_id
                )));
            }
        }
        Ok(())
    }
}

/// True iff `action` is a navigation action or targets an enabled widget
/// present in `obs`.
pub fn validate_action(obs: &Observation, action: &Action) -> bool {
    match action {
        Action::Back | Action::Home | Action::Scroll { .. } | Action::Finish => true,
        Action::Click { widget_id } | Action::Type { widget_id, .. } => {
            !widget_id.is_empty() && obs.widget(widget_id).is_some_and(|w| w.enabled)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawStep {
    pub observation: Observation,
    pub action: Action,
    /// Intent the acting agent held when choosing the action.
    #[serde(default = "default_intent")]
    pub intent: String,
    #[serde(default)]
    pub changed_state: bool,
}

fn default_intent() -> String {
    EXPLORE_INTENT.to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct CriticScore(u8);

impl CriticScore {
    pub const MIN: u8 = 1;
    pub const MAX: u8 = 5;

    pub fn new(value: u8) -> Result<Self> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Validation(format!(
                "critic score {value} outside [{}, {}]",
                Self::MIN,
                Self::MAX
            )))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for CriticScore {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Self::new(value)
    }
}

impl From<CriticScore> for u8 {
    fn from(score: CriticScore) -> u8 {
        score.0
    }
}

impl fmt::Display for CriticScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One recorded episode: `(s0, a0, s1, a1, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_hint: Option<String>,
    pub steps: Vec<RawStep>,
    pub final_intent: String,
    pub episode_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_score: Option<CriticScore>,
    /// Observation after the last action.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_observation: Option<Observation>,
}

impl Trajectory {
    pub fn id_for(run_seed: u64, episode_index: usize) -> String {
        format!("{run_seed}-{episode_index}")
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|s| &s.action)
    }

    pub fn validate(&self, max_steps: usize) -> Result<()> {
        if self.steps.is_empty() || self.steps.len() > max_steps {
            return Err(Error::Validation(format!(
                "trajectory `{}` has {} steps, expected 1..={max_steps}",
                self.id,
                self.steps.len()
            )));
        }
        if self.final_intent.trim().is_empty() {
            return Err(Error::Validation(format!(
                "trajectory `{}` has no final intent",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractedStep {
    pub interface_description: String,
    pub intent: String,
    pub action: Action,
    /// Label of the widget the action targeted, so replay can bind to the
    /// same control when ids have shifted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractedTrajectory {
    pub id: String,
    pub final_intent: String,
    pub steps: Vec<AbstractedStep>,
    pub score: CriticScore,
}

impl AbstractedTrajectory {
    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|s| &s.action)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionHistory {
    pub entries: Vec<Action>,
}

impl ActionHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, action: Action) {
        self.entries.push(action);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.entries.iter()
    }
}

/// Turns a screen into text. The default is the deterministic template in
/// [`crate::inference::TemplateSummarizer`]; model-backed summarizers plug in
/// here.
pub trait ObservationSummarizer {
    fn summarize(&self, obs: &Observation) -> String;
}

impl<F> ObservationSummarizer for F
where
    F: Fn(&Observation) -> String,
{
    fn summarize(&self, obs: &Observation) -> String {
        self(obs)
    }
}

/// Rewrites a scored raw trajectory into its stored form.
pub fn abstract_trajectory(
    raw: &Trajectory,
    summarizer: &dyn ObservationSummarizer,
) -> Result<AbstractedTrajectory> {
    if raw.steps.is_empty() {
        return Err(Error::Validation(format!(
            "cannot abstract empty trajectory `{}`",
            raw.id
        )));
    }
    let score = raw
        .critic_score
        .ok_or_else(|| Error::Validation(format!("trajectory `{}` has not been scored", raw.id)))?;
    let steps = raw
        .steps
        .iter()
        .map(|step| AbstractedStep {
            interface_description: summarizer.summarize(&step.observation),
            intent: if step.intent.is_empty() {
                EXPLORE_INTENT.to_string()
            } else {
                step.intent.clone()
            },
            action: step.action.clone(),
            target_label: step
                .action
                .widget_id()
                .and_then(|id| step.observation.widget(id))
                .map(|w| w.label.clone()),
        })
        .collect();
    Ok(AbstractedTrajectory {
        id: raw.id.clone(),
        final_intent: raw.final_intent.clone(),
        steps,
        score,
    })
}
