//! Deterministic simulated device.
//!
//! Apps are finite state machines described by a [`SuiteDef`]. The device
//! state is plain data and every transition is a pure function of
//! `(DeviceState, Action)`, so replaying an action sequence from the same
//! reset always reproduces the same observations.

mod planner;
pub mod schema;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use planner::{shortest_path, PlanLimits};
pub use schema::{
    AppDef, Effect, GoalDef, ListDef, Predicate, ScreenDef, SuiteDef, TaskDef, WidgetDef,
};

use crate::error::{Error, Result};
use crate::model::{
    validate_action, Action, Direction, Observation, TaskInstruction, Widget, WidgetKind,
};

const DEFAULT_SUITE: &str = include_str!("../../suite/default_suite.json");

/// Longest plan the loader searches when measuring goal templates.
const GOAL_SEARCH_DEPTH: usize = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    /// Bucket by expert length: `<= 3`, `4..=7`, `>= 8`.
    pub fn from_expert_length(len: usize) -> Self {
        match len {
            0..=3 => Difficulty::Easy,
            4..=7 => Difficulty::Medium,
            _ => Difficulty::Hard,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

type Text = Arc<str>;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct AppState {
    screen: u16,
    page: u16,
    vars: Arc<Vec<Text>>,
    lists: Arc<Vec<Vec<Text>>>,
}

/// Full device state. Values are slot-indexed by the owning [`Suite`] and
/// shared copy-on-write between clones, so search frontiers stay small; read
/// it through the suite's accessors.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeviceState {
    current_app: u16,
    apps: Vec<AppState>,
    rng_seed: u64,
}

impl DeviceState {
    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEffect {
    pub changed_state: bool,
    pub new_observation: Observation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: TaskInstruction,
    pub sub_goals: Vec<Predicate>,
    pub expert_steps: Vec<Action>,
    pub initial_vars: BTreeMap<String, BTreeMap<String, String>>,
}

impl TaskSpec {
    pub fn id(&self) -> &str {
        &self.instruction.id
    }

    pub fn difficulty(&self) -> Difficulty {
        Difficulty::from_expert_length(self.expert_steps.len())
    }

    /// Texts appearing in the expert solution's `Type` actions.
    pub fn typed_texts(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for a in &self.expert_steps {
            if let Action::Type { text, .. } = a {
                if !out.contains(text) {
                    out.push(text.clone());
                }
            }
        }
        out
    }
}

/// A goal the explorer can formulate once it switches to target mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalTemplate {
    pub app: String,
    pub text: String,
    pub inputs: Vec<String>,
    pub predicates: Vec<Predicate>,
    /// Shortest solution length from the reset state.
    pub expert_length: usize,
}

#[derive(Debug, Clone)]
struct App {
    def: AppDef,
    screens: HashMap<String, usize>,
    vars: HashMap<String, usize>,
    lists: HashMap<String, usize>,
}

impl App {
    fn new(def: AppDef) -> Result<Self> {
        let mut screens = HashMap::new();
        for (i, s) in def.screens.iter().enumerate() {
            if screens.insert(s.id.clone(), i).is_some() {
                return Err(Error::Suite(format!(
                    "duplicate screen `{}` in app `{}`",
                    s.id, def.id
                )));
            }
        }
        // BTreeMap iteration order fixes the slot layout.
        let vars = def
            .vars
            .keys()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        let lists = def
            .lists
            .keys()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Ok(App {
            def,
            screens,
            vars,
            lists,
        })
    }

    fn screen(&self, id: &str) -> Option<&ScreenDef> {
        self.screens.get(id).map(|&i| &self.def.screens[i])
    }

    fn initial(&self) -> AppState {
        AppState {
            screen: self.screens[&self.def.entry] as u16,
            page: 0,
            vars: Arc::new(
                self.def
                    .vars
                    .values()
                    .map(|v| Text::from(v.as_str()))
                    .collect(),
            ),
            lists: Arc::new(
                self.def
                    .lists
                    .values()
                    .map(|l| l.iter().map(|v| Text::from(v.as_str())).collect())
                    .collect(),
            ),
        }
    }
}

/// A loaded, validated suite. Acts as the environment: all operations take
/// the device state explicitly.
#[derive(Debug, Clone)]
pub struct Suite {
    home: usize,
    apps: Vec<App>,
    app_index: HashMap<String, usize>,
    tasks: Vec<TaskSpec>,
    task_index: HashMap<String, usize>,
    goals: Vec<GoalTemplate>,
}

impl Suite {
    pub fn default_suite() -> Result<Self> {
        Self::from_json(DEFAULT_SUITE)
    }

    pub fn default_suite_json() -> &'static str {
        DEFAULT_SUITE
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let def: SuiteDef = serde_json::from_str(text)?;
        Self::from_def(def)
    }

    pub fn from_def(def: SuiteDef) -> Result<Self> {
        if def.schema_version != schema::SUITE_SCHEMA_VERSION {
            return Err(Error::Suite(format!(
                "unsupported schema version {}",
                def.schema_version
            )));
        }
        if def.apps.len() > u16::MAX as usize {
            return Err(Error::Suite("too many apps".into()));
        }
        let mut apps = Vec::new();
        let mut app_index = HashMap::new();
        for app in def.apps {
            if app_index.insert(app.id.clone(), apps.len()).is_some() {
                return Err(Error::Suite(format!("duplicate app `{}`", app.id)));
            }
            apps.push(App::new(app)?);
        }
        let home = *app_index
            .get(&def.home_app)
            .ok_or_else(|| Error::Suite(format!("home app `{}` missing", def.home_app)))?;
        let mut suite = Suite {
            home,
            apps,
            app_index,
            tasks: Vec::new(),
            task_index: HashMap::new(),
            goals: Vec::new(),
        };
        suite.check_structure()?;

        for t in def.tasks {
            let mut instruction = TaskInstruction::new(t.id.clone(), t.text)?;
            if let Some(hint) = t.app_hint {
                if !suite.app_index.contains_key(&hint) {
                    return Err(Error::Suite(format!(
                        "task `{}` hints unknown app `{hint}`",
                        t.id
                    )));
                }
                instruction = instruction.with_app_hint(hint);
            }
            if suite.task_index.contains_key(&t.id) {
                return Err(Error::Suite(format!("duplicate task `{}`", t.id)));
            }
            let spec = TaskSpec {
                instruction,
                sub_goals: t.sub_goals,
                expert_steps: t.expert_steps,
                initial_vars: t.initial_vars,
            };
            suite.check_task(&spec)?;
            suite.task_index.insert(t.id, suite.tasks.len());
            suite.tasks.push(spec);
        }

        let initial = suite.initial_state(0);
        let mut goals = Vec::new();
        for app in &suite.apps {
            for g in &app.def.goals {
                for p in &g.all {
                    suite.check_predicate(p)?;
                }
                if suite.holds_all(&initial, &g.all) {
                    return Err(Error::Suite(format!(
                        "goal `{}` already holds in the reset state",
                        g.text
                    )));
                }
                let plan = shortest_path(
                    &suite,
                    &initial,
                    &g.all,
                    &g.inputs,
                    PlanLimits::depth(GOAL_SEARCH_DEPTH),
                )
                .ok_or_else(|| Error::Suite(format!("goal `{}` is unreachable", g.text)))?;
                goals.push(GoalTemplate {
                    app: app.def.id.clone(),
                    text: g.text.clone(),
                    inputs: g.inputs.clone(),
                    predicates: g.all.clone(),
                    expert_length: plan.len(),
                });
            }
        }
        suite.goals = goals;
        Ok(suite)
    }

    fn check_structure(&self) -> Result<()> {
        for app in &self.apps {
            let aid = &app.def.id;
            if app.screen(&app.def.entry).is_none() {
                return Err(Error::Suite(format!("app `{aid}` entry screen missing")));
            }
            if app.def.screens.len() > u16::MAX as usize {
                return Err(Error::Suite(format!("app `{aid}` has too many screens")));
            }
            for s in &app.def.screens {
                if let Some(back) = &s.back {
                    if app.screen(back).is_none() {
                        return Err(Error::Suite(format!(
                            "{aid}/{}: back target `{back}` missing",
                            s.id
                        )));
                    }
                }
                if s.pages == 0 || s.pages > u16::MAX as usize {
                    return Err(Error::Suite(format!("{aid}/{}: bad page count", s.id)));
                }
                let mut ids = std::collections::HashSet::new();
                for w in &s.widgets {
                    if !ids.insert(w.id.as_str()) {
                        return Err(Error::Suite(format!(
                            "{aid}/{}: duplicate widget `{}`",
                            s.id, w.id
                        )));
                    }
                    if w.label.contains([',', '[', ']']) || w.label.trim().is_empty() {
                        return Err(Error::Suite(format!(
                            "{aid}/{}: bad label `{}`",
                            s.id, w.label
                        )));
                    }
                    if w.page.is_some_and(|p| p >= s.pages) {
                        return Err(Error::Suite(format!(
                            "{aid}/{}: widget `{}` on missing page",
                            s.id, w.id
                        )));
                    }
                    self.check_effects(app, &w.on)?;
                }
                if let Some(list) = &s.list {
                    if !app.lists.contains_key(&list.source) {
                        return Err(Error::Suite(format!(
                            "{aid}/{}: unknown list `{}`",
                            s.id, list.source
                        )));
                    }
                    self.check_effects(app, &list.on)?;
                }
            }
        }
        Ok(())
    }

    fn check_effects(&self, app: &App, effects: &[Effect]) -> Result<()> {
        for e in effects {
            let ok = match e {
                Effect::Goto(screen) => app.screen(screen).is_some(),
                Effect::Open {
                    app: target,
                    screen,
                } => match self.app_index.get(target) {
                    Some(&i) => screen
                        .as_ref()
                        .is_none_or(|s| self.apps[i].screen(s).is_some()),
                    None => false,
                },
                Effect::Set { var, .. }
                | Effect::Toggle(var)
                | Effect::Add { var, .. }
                | Effect::Input(var)
                | Effect::Clear(var) => app.vars.contains_key(var),
                Effect::SetIn {
                    app: target, var, ..
                } => self
                    .app_index
                    .get(target)
                    .is_some_and(|&i| self.apps[i].vars.contains_key(var)),
                Effect::Append { list, .. }
                | Effect::Remove { list, .. }
                | Effect::ClearList(list) => app.lists.contains_key(list),
            };
            if !ok {
                return Err(Error::Suite(format!(
                    "app `{}`: dangling effect {e:?}",
                    app.def.id
                )));
            }
        }
        Ok(())
    }

    fn check_predicate(&self, p: &Predicate) -> Result<()> {
        let ok = match p {
            Predicate::Var { app, name, .. } => self
                .app_index
                .get(app)
                .is_some_and(|&i| self.apps[i].vars.contains_key(name)),
            Predicate::Contains { app, list, .. } | Predicate::Lacks { app, list, .. } => self
                .app_index
                .get(app)
                .is_some_and(|&i| self.apps[i].lists.contains_key(list)),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Suite(format!(
                "predicate references unknown data: {p:?}"
            )))
        }
    }

    fn check_task(&self, task: &TaskSpec) -> Result<()> {
        let id = task.id();
        if task.expert_steps.is_empty() || task.sub_goals.is_empty() {
            return Err(Error::Suite(format!(
                "task `{id}` needs sub-goals and expert steps"
            )));
        }
        for p in &task.sub_goals {
            self.check_predicate(p)?;
        }
        let mut state = self.task_state(task, 0)?;
        for (i, a) in task.expert_steps.iter().enumerate() {
            let obs = self.observe(&state);
            if !validate_action(&obs, a) || matches!(a, Action::Finish) {
                return Err(Error::Suite(format!(
                    "task `{id}`: expert step {i} ({a}) invalid on {}/{}",
                    obs.app_id, obs.screen_id
                )));
            }
            self.apply(&mut state, a)?;
        }
        if !self.holds_all(&state, &task.sub_goals) {
            return Err(Error::Suite(format!(
                "task `{id}`: expert steps miss a sub-goal"
            )));
        }
        Ok(())
    }

    pub fn home_app(&self) -> &str {
        &self.apps[self.home].def.id
    }

    pub fn app_ids(&self) -> impl Iterator<Item = &str> {
        self.apps.iter().map(|a| a.def.id.as_str())
    }

    /// Apps other than the launcher.
    pub fn user_apps(&self) -> impl Iterator<Item = &str> {
        let home = self.home_app();
        self.app_ids().filter(move |a| *a != home)
    }

    pub fn app_label(&self, app: &str) -> Option<&str> {
        self.app_index
            .get(app)
            .map(|&i| self.apps[i].def.label.as_str())
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec> {
        self.task_index
            .get(id)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| Error::UnknownTask(id.to_string()))
    }

    pub fn goals(&self) -> &[GoalTemplate] {
        &self.goals
    }

    pub fn goals_for_app<'a>(
        &'a self,
        app: &'a str,
    ) -> impl Iterator<Item = &'a GoalTemplate> + 'a {
        self.goals.iter().filter(move |g| g.app == app)
    }

    pub fn expert_length(&self, task_id: &str) -> Result<usize> {
        Ok(self.task(task_id)?.expert_steps.len())
    }

    /// Reset state used for free exploration: default data, launcher open.
    pub fn initial_state(&self, seed: u64) -> DeviceState {
        DeviceState {
            current_app: self.home as u16,
            apps: self.apps.iter().map(App::initial).collect(),
            rng_seed: seed,
        }
    }

    fn task_state(&self, task: &TaskSpec, seed: u64) -> Result<DeviceState> {
        let mut state = self.initial_state(seed);
        for (app, vars) in &task.initial_vars {
            let &ai = self.app_index.get(app).ok_or_else(|| {
                Error::Suite(format!(
                    "task `{}` overrides unknown app `{app}`",
                    task.id()
                ))
            })?;
            for (k, v) in vars {
                let &slot = self.apps[ai].vars.get(k).ok_or_else(|| {
                    Error::Suite(format!(
                        "task `{}` overrides unknown var `{app}.{k}`",
                        task.id()
                    ))
                })?;
                Arc::make_mut(&mut state.apps[ai].vars)[slot] = Text::from(v.as_str());
            }
        }
        Ok(state)
    }

    /// Starts an episode of `task_id`.
    pub fn reset(&self, task_id: &str, seed: u64) -> Result<(DeviceState, Observation)> {
        let task = self.task(task_id)?;
        let state = self.task_state(task, seed)?;
        let obs = self.observe(&state);
        Ok((state, obs))
    }

    pub fn current_app<'a>(&'a self, state: &DeviceState) -> &'a str {
        &self.apps[state.current_app as usize].def.id
    }

    /// `(app, screen, page)` currently shown.
    pub fn location<'a>(&'a self, state: &DeviceState) -> (&'a str, &'a str, usize) {
        let (app, screen, page) = self.current_screen(state);
        (&app.def.id, &screen.id, page)
    }

    pub fn var<'a>(&self, state: &'a DeviceState, app: &str, name: &str) -> Option<&'a str> {
        let ai = *self.app_index.get(app)?;
        let slot = *self.apps[ai].vars.get(name)?;
        Some(&state.apps[ai].vars[slot])
    }

    pub fn list<'a>(&self, state: &'a DeviceState, app: &str, name: &str) -> Option<Vec<&'a str>> {
        let ai = *self.app_index.get(app)?;
        let slot = *self.apps[ai].lists.get(name)?;
        Some(state.apps[ai].lists[slot].iter().map(|s| &**s).collect())
    }

    fn current_screen<'a>(&'a self, state: &DeviceState) -> (&'a App, &'a ScreenDef, usize) {
        let app = &self.apps[state.current_app as usize];
        let ptr = &state.apps[state.current_app as usize];
        (
            app,
            &app.def.screens[ptr.screen as usize],
            ptr.page as usize,
        )
    }

    /// Projects the device state onto the visible screen.
    pub fn observe(&self, state: &DeviceState) -> Observation {
        let (app, screen, page) = self.current_screen(state);
        let mut widgets: Vec<Widget> = screen
            .widgets
            .iter()
            .filter(|w| w.page.is_none_or(|p| p == page))
            .map(|w| Widget {
                widget_id: w.id.clone(),
                kind: w.kind,
                label: w.label.clone(),
                enabled: w.enabled,
            })
            .collect();
        if let Some(list) = &screen.list {
            let items = &state.apps[state.current_app as usize].lists[app.lists[&list.source]];
            widgets.extend(items.iter().enumerate().map(|(i, item)| Widget {
                widget_id: format!("{}_{i}", list.id_prefix),
                kind: WidgetKind::ListItem,
                label: item.to_string(),
                enabled: true,
            }));
        }
        Observation {
            app_id: app.def.id.clone(),
            screen_id: screen.id.clone(),
            widgets,
        }
    }

    /// Whether the current screen scrolls.
    pub fn scrollable(&self, state: &DeviceState) -> bool {
        self.current_screen(state).1.pages > 1
    }

    /// Applies `action` in place. Well-formed actions that do nothing leave
    /// the state untouched and report `changed_state = false`; actions naming
    /// an absent or disabled widget are rejected.
    pub fn apply(&self, state: &mut DeviceState, action: &Action) -> Result<StepEffect> {
        let before = state.clone();
        self.step(state, action)?;
        Ok(StepEffect {
            changed_state: *state != before,
            new_observation: self.observe(state),
        })
    }

    /// Pure form of [`Suite::apply`].
    pub fn transition(
        &self,
        state: &DeviceState,
        action: &Action,
    ) -> Result<(DeviceState, StepEffect)> {
        let mut next = state.clone();
        let effect = self.apply(&mut next, action)?;
        Ok((next, effect))
    }

    /// Successor state without rendering an observation.
    pub(crate) fn successor(&self, state: &DeviceState, action: &Action) -> Result<DeviceState> {
        let mut next = state.clone();
        self.step(&mut next, action)?;
        Ok(next)
    }

    fn step(&self, state: &mut DeviceState, action: &Action) -> Result<()> {
        match action {
            Action::Finish => Ok(()),
            Action::Home => {
                state.current_app = self.home as u16;
                Ok(())
            }
            Action::Back => {
                let (app, screen, _) = self.current_screen(state);
                match &screen.back {
                    Some(target) => {
                        let idx = app.screens[target];
                        set_screen(state, state.current_app as usize, idx);
                    }
                    None => state.current_app = self.home as u16,
                }
                Ok(())
            }
            Action::Scroll { direction } => {
                let (_, screen, page) = self.current_screen(state);
                let next = match direction {
                    Direction::Down if page + 1 < screen.pages => page + 1,
                    Direction::Up if page > 0 => page - 1,
                    _ => page,
                };
                state.apps[state.current_app as usize].page = next as u16;
                Ok(())
            }
            Action::Click { widget_id } | Action::Type { widget_id, .. } => {
                let (app, screen, page) = self.current_screen(state);
                let reject = |reason: &str| Error::InvalidAction {
                    screen: format!("{}/{}", app.def.id, screen.id),
                    action: action.to_string(),
                    reason: reason.to_string(),
                };
                let input = match action {
                    Action::Type { text, .. } => Some(text.as_str()),
                    _ => None,
                };
                let (kind, effects, item) = match screen
                    .widgets
                    .iter()
                    .find(|w| &w.id == widget_id && w.page.is_none_or(|p| p == page))
                {
                    Some(w) => {
                        if !w.enabled {
                            return Err(reject("widget is disabled"));
                        }
                        (w.kind, w.on.as_slice(), None)
                    }
                    None => {
                        let list = screen
                            .list
                            .as_ref()
                            .ok_or_else(|| reject("no such widget"))?;
                        let idx = widget_id
                            .strip_prefix(list.id_prefix.as_str())
                            .and_then(|rest| rest.strip_prefix('_'))
                            .and_then(|n| n.parse::<usize>().ok())
                            .ok_or_else(|| reject("no such widget"))?;
                        let item = state.apps[state.current_app as usize].lists
                            [app.lists[&list.source]]
                            .get(idx)
                            .cloned()
                            .ok_or_else(|| reject("no such widget"))?;
                        (WidgetKind::ListItem, list.on.as_slice(), Some(item))
                    }
                };
                // Typing only lands in fields, and fields only react to typing.
                if input.is_some() != (kind == WidgetKind::Field) {
                    return Ok(());
                }
                let ctx = EffectCtx {
                    app: state.current_app as usize,
                    item,
                    input: input.map(Text::from),
                };
                for e in effects {
                    self.run_effect(state, &ctx, e);
                }
                Ok(())
            }
        }
    }

    fn run_effect(&self, state: &mut DeviceState, ctx: &EffectCtx, effect: &Effect) {
        let ai = ctx.app;
        let app = &self.apps[ai];
        match effect {
            Effect::Goto(screen) => {
                let current = state.current_app as usize;
                let idx = self.apps[current].screens[screen];
                set_screen(state, current, idx);
            }
            Effect::Open {
                app: target,
                screen,
            } => {
                let ti = self.app_index[target];
                let target_app = &self.apps[ti];
                let idx = target_app.screens[screen.as_deref().unwrap_or(&target_app.def.entry)];
                state.current_app = ti as u16;
                set_screen(state, ti, idx);
            }
            Effect::Set { var, value } => {
                let v = self.interpolate(value, state, ctx);
                set_var(state, ai, app.vars[var], v);
            }
            Effect::SetIn {
                app: target,
                var,
                value,
            } => {
                let v = self.interpolate(value, state, ctx);
                let ti = self.app_index[target];
                set_var(state, ti, self.apps[ti].vars[var], v);
            }
            Effect::Toggle(var) => {
                let slot = app.vars[var];
                let next = if &*state.apps[ai].vars[slot] == "on" {
                    "off"
                } else {
                    "on"
                };
                set_var(state, ai, slot, Text::from(next));
            }
            Effect::Add { var, amount } => {
                let slot = app.vars[var];
                let cur: i64 = state.apps[ai].vars[slot].parse().unwrap_or(0);
                set_var(state, ai, slot, Text::from((cur + amount).to_string()));
            }
            Effect::Input(var) => {
                let v = ctx.input.clone().unwrap_or_else(|| Text::from(""));
                set_var(state, ai, app.vars[var], v);
            }
            Effect::Append { list, value } => {
                let v = self.interpolate(value, state, ctx);
                if !v.trim().is_empty() {
                    list_mut(state, ai, app.lists[list]).push(v);
                }
            }
            Effect::Remove { list, value } => {
                let v = self.interpolate(value, state, ctx);
                let slot = app.lists[list];
                if let Some(pos) = state.apps[ai].lists[slot].iter().position(|x| *x == v) {
                    list_mut(state, ai, slot).remove(pos);
                }
            }
            Effect::Clear(var) => set_var(state, ai, app.vars[var], Text::from("")),
            Effect::ClearList(list) => {
                let slot = app.lists[list];
                if !state.apps[ai].lists[slot].is_empty() {
                    list_mut(state, ai, slot).clear();
                }
            }
        }
    }

    fn interpolate(&self, template: &str, state: &DeviceState, ctx: &EffectCtx) -> Text {
        if !template.contains('{') {
            return Text::from(template);
        }
        let app = &self.apps[ctx.app];
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(start) = rest.find('{') {
            out.push_str(&rest[..start]);
            let after = &rest[start + 1..];
            match after.find('}') {
                Some(end) => {
                    match &after[..end] {
                        "item" => out.push_str(ctx.item.as_deref().unwrap_or_default()),
                        "input" => out.push_str(ctx.input.as_deref().unwrap_or_default()),
                        var => {
                            if let Some(&slot) = app.vars.get(var) {
                                out.push_str(&state.apps[ctx.app].vars[slot]);
                            }
                        }
                    }
                    rest = &after[end + 1..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        Text::from(out)
    }

    pub fn predicate_holds(&self, state: &DeviceState, p: &Predicate) -> bool {
        match p {
            Predicate::Var { app, name, equals } => {
                self.var(state, app, name) == Some(equals.as_str())
            }
            Predicate::Contains { app, list, value } => self.list_has(state, app, list, value),
            Predicate::Lacks { app, list, value } => !self.list_has(state, app, list, value),
        }
    }

    fn list_has(&self, state: &DeviceState, app: &str, list: &str, value: &str) -> bool {
        let Some(&ai) = self.app_index.get(app) else {
            return false;
        };
        let Some(&slot) = self.apps[ai].lists.get(list) else {
            return false;
        };
        state.apps[ai].lists[slot].iter().any(|x| &**x == value)
    }

    pub fn holds_all(&self, state: &DeviceState, predicates: &[Predicate]) -> bool {
        predicates.iter().all(|p| self.predicate_holds(state, p))
    }

    /// One flag per sub-goal, evaluated on the current state.
    pub fn goal_status(&self, state: &DeviceState, task: &TaskSpec) -> Vec<bool> {
        task.sub_goals
            .iter()
            .map(|p| self.predicate_holds(state, p))
            .collect()
    }

    /// Every action that is valid on the current screen, in a fixed order:
    /// widget actions in widget order, then navigation.
    pub fn candidate_actions(&self, state: &DeviceState, texts: &[String]) -> Vec<Action> {
        let obs = self.observe(state);
        let mut out = Vec::new();
        for w in obs.enabled_widgets() {
            if w.kind == WidgetKind::Field {
                out.extend(texts.iter().map(|t| Action::type_text(&w.widget_id, t)));
            } else {
                out.push(Action::click(&w.widget_id));
            }
        }
        if self.scrollable(state) {
            out.push(Action::scroll(Direction::Down));
            out.push(Action::scroll(Direction::Up));
        }
        out.push(Action::Back);
        out.push(Action::Home);
        out
    }
}

struct EffectCtx {
    app: usize,
    item: Option<Text>,
    input: Option<Text>,
}

fn set_screen(state: &mut DeviceState, app: usize, screen: usize) {
    let slot = &mut state.apps[app];
    slot.screen = screen as u16;
    slot.page = 0;
}

fn set_var(state: &mut DeviceState, app: usize, slot: usize, value: Text) {
    if state.apps[app].vars[slot] != value {
        Arc::make_mut(&mut state.apps[app].vars)[slot] = value;
    }
}

fn list_mut(state: &mut DeviceState, app: usize, slot: usize) -> &mut Vec<Text> {
    &mut Arc::make_mut(&mut state.apps[app].lists)[slot]
}
