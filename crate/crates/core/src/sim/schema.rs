//! Declarative suite file format.
//!
//! A suite is one JSON document describing apps (screens, widgets and the
//! effects widgets trigger), goal templates the explorer can adopt, and the
//! evaluation tasks with their sub-goal predicates and expert solutions.
//! See `suite/README.md` for the field-by-field description.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Action, WidgetKind};

pub const SUITE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteDef {
    pub schema_version: u32,
    /// App hosting the launcher; `Home` returns here.
    #[serde(default = "default_home")]
    pub home_app: String,
    pub apps: Vec<AppDef>,
    pub tasks: Vec<TaskDef>,
}

fn default_home() -> String {
    "home".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppDef {
    pub id: String,
    pub label: String,
    pub entry: String,
    #[serde(default)]
    pub vars: BTreeMap<String, String>,
    #[serde(default)]
    pub lists: BTreeMap<String, Vec<String>>,
    pub screens: Vec<ScreenDef>,
    #[serde(default)]
    pub goals: Vec<GoalDef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScreenDef {
    pub id: String,
    /// Screen reached by `Back`; `None` leaves the app.
    #[serde(default)]
    pub back: Option<String>,
    #[serde(default = "one")]
    pub pages: usize,
    pub widgets: Vec<WidgetDef>,
    #[serde(default)]
    pub list: Option<ListDef>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WidgetDef {
    pub id: String,
    pub kind: WidgetKind,
    pub label: String,
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Page the widget is shown on; `None` shows it on every page.
    #[serde(default)]
    pub page: Option<usize>,
    #[serde(default)]
    pub on: Vec<Effect>,
}

fn yes() -> bool {
    true
}

/// Renders one `list_item` widget per element of an app list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ListDef {
    pub source: String,
    pub id_prefix: String,
    #[serde(default)]
    pub on: Vec<Effect>,
}

/// State change triggered by a widget. String values may reference
/// `{var}` (a variable of the acting app), `{item}` (the clicked list
/// element) and `{input}` (typed text).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    Goto(String),
    Open {
        app: String,
        #[serde(default)]
        screen: Option<String>,
    },
    Set {
        var: String,
        value: String,
    },
    SetIn {
        app: String,
        var: String,
        value: String,
    },
    Toggle(String),
    Add {
        var: String,
        amount: i64,
    },
    Input(String),
    Append {
        list: String,
        value: String,
    },
    Remove {
        list: String,
        value: String,
    },
    Clear(String),
    ClearList(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Var {
        app: String,
        name: String,
        equals: String,
    },
    Contains {
        app: String,
        list: String,
        value: String,
    },
    Lacks {
        app: String,
        list: String,
        value: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalDef {
    pub text: String,
    /// Texts the explorer may type while pursuing this goal.
    #[serde(default)]
    pub inputs: Vec<String>,
    pub all: Vec<Predicate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDef {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub app_hint: Option<String>,
    /// Per-app variable overrides applied on reset.
    #[serde(default)]
    pub initial_vars: BTreeMap<String, BTreeMap<String, String>>,
    pub sub_goals: Vec<Predicate>,
    pub expert_steps: Vec<Action>,
}
