use rand::SeedableRng;

use super::*;
use crate::retrieval::HashEmbedder;

fn suite() -> Suite {
    Suite::default_suite().unwrap()
}

fn score(v: u8) -> CriticScore {
    CriticScore::new(v).unwrap()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn blank_screen() -> Observation {
    Observation {
        app_id: "clock".into(),
        screen_id: "empty".into(),
        widgets: vec![],
    }
}

fn proc_with(screen: &str, steps: &[(Action, Outcome)]) -> ProcessingDb {
    let mut dproc = ProcessingDb::new(4);
    let tau = Trajectory {
        id: "0-0".into(),
        task_hint: None,
        steps: steps
            .iter()
            .map(|(a, o)| RawStep {
                observation: Observation {
                    app_id: "home".into(),
                    screen_id: screen.into(),
                    widgets: vec![],
                },
                action: a.clone(),
                intent: EXPLORE_INTENT.into(),
                changed_state: *o == Outcome::Succeeded,
            })
            .collect(),
        final_intent: EXPLORE_INTENT.into(),
        episode_seed: 0,
        critic_score: None,
        final_observation: None,
    };
    dproc.update(&tau);
    dproc
}

#[test]
fn rubric_examples() {
    let r = CriticRubric::default();
    assert_eq!(r.combine(true, 1.0, 1.0), score(5));
    assert_eq!(r.combine(false, 0.0, 0.0), score(1));
    assert_eq!(r.combine(true, 0.5, 1.0), score(4));
}

#[test]
fn rubric_validation() {
    assert!(CriticRubric::default().validate().is_ok());
    let lopsided = CriticRubric {
        w_success: 0.6,
        ..CriticRubric::default()
    };
    assert!(lopsided.validate().is_err());
    let bad_theta = CriticRubric {
        theta_good: 6,
        ..CriticRubric::default()
    };
    assert!(bad_theta.validate().is_err());
}

#[test]
fn gate_examples() {
    assert!(gate(score(4), 4));
    assert!(!gate(score(3), 4));
    assert!(gate(score(5), 4));
}

#[test]
fn expert_replay_scores_five() {
    let s = suite();
    let task = s.task("start_stopwatch").unwrap();
    let mut state = s.initial_state(0);
    let mut steps = Vec::new();
    for a in &task.expert_steps {
        let obs = s.observe(&state);
        let eff = s.apply(&mut state, a).unwrap();
        steps.push(RawStep {
            observation: obs,
            action: a.clone(),
            intent: task.instruction.text.clone(),
            changed_state: eff.changed_state,
        });
    }
    let tau = Trajectory {
        id: "0-0".into(),
        task_hint: None,
        steps,
        final_intent: String::new(),
        episode_seed: 0,
        critic_score: None,
        final_observation: None,
    };
    let v = critique(&tau, &s, &CriticRubric::default()).unwrap();
    assert!(v.success);
    assert_eq!(v.efficiency, 1.0);
    assert_eq!(v.coherence, 1.0);
    assert_eq!(v.score, score(5));

    let empty = Trajectory {
        steps: vec![],
        ..tau
    };
    assert!(critique(&empty, &s, &CriticRubric::default()).is_err());
}

#[test]
fn curiosity_takes_the_unique_least_visited_action() {
    let s = suite();
    let obs = s.observe(&s.initial_state(0));
    let mut visits = VisitCounts::new();
    for a in probe_actions(&obs) {
        visits.insert((obs.screen_id.clone(), a), 2);
    }
    visits.insert((obs.screen_id.clone(), Action::click("app_notes")), 1);
    for seed in 0..20 {
        let a = curiosity_action(&obs, &visits, &Guidance::default(), &mut rng(seed));
        assert_eq!(a, Action::click("app_notes"));
    }
}

#[test]
fn curiosity_breaks_ties_among_the_least_visited() {
    let s = suite();
    let obs = s.observe(&s.initial_state(0));
    let mut visits = VisitCounts::new();
    visits.insert((obs.screen_id.clone(), Action::Back), 1);
    visits.insert((obs.screen_id.clone(), Action::scroll(Direction::Down)), 1);
    let mut seen = std::collections::HashSet::new();
    for seed in 0..50 {
        let a = curiosity_action(&obs, &visits, &Guidance::default(), &mut rng(seed));
        assert!(!matches!(a, Action::Back | Action::Scroll { .. }), "{a}");
        seen.insert(a);
    }
    assert!(seen.len() > 1);
}

#[test]
fn curiosity_goes_back_when_nothing_is_left() {
    let obs = blank_screen();
    let avoid_all = Guidance {
        entries: probe_actions(&obs)
            .into_iter()
            .map(|action| GuidanceEntry {
                matched_context: obs.screen_id.clone(),
                outcome: Outcome::Failed,
                action,
            })
            .collect(),
    };
    assert_eq!(
        curiosity_action(&obs, &VisitCounts::new(), &avoid_all, &mut rng(0)),
        Action::Back
    );
}

#[test]
fn guidance_lookup() {
    let s = suite();
    let obs = s.observe(&s.initial_state(0));
    assert!(retrieve_guidance(&ProcessingDb::new(4), &obs, true).is_empty());

    let dproc = proc_with(
        &obs.screen_id,
        &[
            (Action::click("app_clock"), Outcome::Succeeded),
            (Action::Back, Outcome::Failed),
        ],
    );
    assert!(retrieve_guidance(&dproc, &obs, false).is_empty());
    let g = retrieve_guidance(&dproc, &obs, true);
    assert_eq!(g.entries.len(), 2);
    assert_eq!(g.entries[0].action, Action::Back);
    assert!(g.avoids(&Action::Back));
    assert!(g.suggests(&Action::click("app_clock")));

    let elsewhere = proc_with("other", &[(Action::Back, Outcome::Failed)]);
    assert!(retrieve_guidance(&elsewhere, &obs, true).is_empty());
}

#[test]
fn guidance_is_capped_and_distinct() {
    let s = suite();
    let obs = s.observe(&s.initial_state(0));
    let dproc = proc_with(
        &obs.screen_id,
        &[
            (Action::click("app_clock"), Outcome::Succeeded),
            (Action::click("app_notes"), Outcome::Succeeded),
            (Action::Back, Outcome::Failed),
            (Action::Back, Outcome::Failed),
            (Action::click("app_settings"), Outcome::Succeeded),
        ],
    );
    let g = retrieve_guidance(&dproc, &obs, true);
    let actions: Vec<&Action> = g.entries.iter().map(|e| &e.action).collect();
    assert_eq!(
        actions,
        [
            &Action::click("app_settings"),
            &Action::Back,
            &Action::click("app_notes")
        ]
    );
}

#[test]
fn curiosity_respects_avoid_guidance() {
    let s = suite();
    let obs = s.observe(&s.initial_state(0));
    let dproc = proc_with(&obs.screen_id, &[(Action::Back, Outcome::Failed)]);
    let g = retrieve_guidance(&dproc, &obs, true);
    for seed in 0..100 {
        assert_ne!(
            curiosity_action(&obs, &VisitCounts::new(), &g, &mut rng(seed)),
            Action::Back
        );
    }
}

fn prefix(s: &Suite, actions: &[Action]) -> (Trajectory, Observation) {
    let mut state = s.initial_state(0);
    let mut steps = Vec::new();
    for a in actions {
        let obs = s.observe(&state);
        let eff = s.apply(&mut state, a).unwrap();
        steps.push(RawStep {
            observation: obs,
            action: a.clone(),
            intent: EXPLORE_INTENT.into(),
            changed_state: eff.changed_state,
        });
    }
    let tau = Trajectory {
        id: "0-0".into(),
        task_hint: None,
        steps,
        final_intent: String::new(),
        episode_seed: 0,
        critic_score: None,
        final_observation: None,
    };
    (tau, s.observe(&state))
}

#[test]
fn subgoal_comes_from_the_current_app() {
    let s = suite();
    let (tau, obs) = prefix(&s, &[Action::click("app_notes")]);
    for seed in 0..10 {
        let g = formulate_subgoal(&tau, &obs, &s, &mut rng(seed));
        assert_eq!(g.app, "notes");
    }
}

#[test]
fn subgoal_from_the_launcher_uses_the_most_visited_app() {
    let s = suite();
    let (tau, obs) = prefix(
        &s,
        &[
            Action::click("app_clock"),
            Action::Back,
            Action::click("app_settings"),
            Action::click("net"),
            Action::Home,
        ],
    );
    assert_eq!(obs.app_id, s.home_app());
    let g = formulate_subgoal(&tau, &obs, &s, &mut rng(3));
    assert_eq!(g.app, "settings");
    let again = formulate_subgoal(&tau, &obs, &s, &mut rng(3));
    assert_eq!(g.text, again.text);
}

#[test]
fn subgoal_from_a_fresh_launcher_is_any_app() {
    let s = suite();
    let (tau, obs) = prefix(&s, &[]);
    let mut apps = std::collections::BTreeSet::new();
    for seed in 0..40 {
        apps.insert(
            formulate_subgoal(&tau, &obs, &s, &mut rng(seed))
                .app
                .clone(),
        );
    }
    assert!(apps.len() > 2, "{apps:?}");
}

#[test]
fn config_validation() {
    assert!(ExplorerConfig::default().validate().is_ok());
    let bad = [
        ExplorerConfig {
            t_focus: 30,
            ..ExplorerConfig::default()
        },
        ExplorerConfig {
            t_focus: 0,
            ..ExplorerConfig::default()
        },
        ExplorerConfig {
            episodes: 0,
            ..ExplorerConfig::default()
        },
        ExplorerConfig {
            recall: 1.5,
            ..ExplorerConfig::default()
        },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

fn explore(episodes: usize, guidance: bool) -> (ExplorationRun, MemoryDb) {
    let s = suite();
    let cfg = ExplorerConfig {
        episodes,
        guidance_enabled: guidance,
        ..ExplorerConfig::default()
    };
    let embedder = HashEmbedder::default();
    let mut dproc = ProcessingDb::new(cfg.proc_capacity);
    let mut dmem = MemoryDb::new(embedder.dim());
    let run = run_exploration(&cfg, &s, &mut dproc, &mut dmem, &embedder).unwrap();
    (run, dmem)
}

#[test]
fn exploration_invariants() {
    let cfg = ExplorerConfig::default();
    let (run, dmem) = explore(16, true);
    assert_eq!(run.log.len(), 16);
    assert_eq!(run.summary.episodes, 16);
    assert_eq!(
        run.summary.inserted + run.summary.deduplicated + run.summary.rejected,
        16
    );
    assert!(dmem.records().iter().all(|r| r.score() >= THETA_GOOD));
    assert_eq!(dmem.len(), run.summary.inserted);

    let s = suite();
    for e in &run.log {
        let steps = &e.trajectory.steps;
        assert!(!steps.is_empty() && steps.len() <= cfg.t_max);
        for (t, step) in steps.iter().enumerate() {
            if t <= cfg.t_focus {
                assert_eq!(step.intent, EXPLORE_INTENT, "episode {} step {t}", e.index);
            } else {
                assert_eq!(step.intent, e.goal, "episode {} step {t}", e.index);
            }
        }
        // Without reaching its goal an episode runs to the step limit.
        let goal = s.goals().iter().find(|g| g.text == e.goal).unwrap();
        let mut state = s.initial_state(e.trajectory.episode_seed);
        for step in steps {
            s.apply(&mut state, &step.action).unwrap();
        }
        if !s.holds_all(&state, &goal.predicates) {
            assert_eq!(steps.len(), cfg.t_max);
        }
        let admitted = dmem.get(&e.trajectory.id).is_some();
        assert_eq!(admitted, e.admission == Admission::Inserted);
        assert_eq!(
            e.admission == Admission::Rejected,
            e.verdict.score.value() < THETA_GOOD
        );
    }
}

#[test]
fn exploration_is_deterministic() {
    let (a, da) = explore(6, true);
    let (b, db) = explore(6, true);
    assert_eq!(a, b);
    assert_eq!(da.to_bytes().unwrap(), db.to_bytes().unwrap());
}

#[test]
fn unfiltered_exploration_admits_everything() {
    let s = suite();
    let cfg = ExplorerConfig {
        episodes: 8,
        critic_filter: false,
        ..ExplorerConfig::default()
    };
    let embedder = HashEmbedder::default();
    let mut dproc = ProcessingDb::new(cfg.proc_capacity);
    let mut dmem = MemoryDb::ungated(embedder.dim());
    let run = run_exploration(&cfg, &s, &mut dproc, &mut dmem, &embedder).unwrap();
    assert_eq!(run.summary.rejected, 0);
    assert_eq!(dmem.len() + run.summary.deduplicated, 8);
}

#[test]
fn rejected_episodes_leave_memory_unchanged() {
    let s = suite();
    let cfg = ExplorerConfig {
        episodes: 6,
        rubric: CriticRubric {
            w_success: 0.0,
            w_efficiency: 1.0,
            w_coherence: 0.0,
            theta_good: 5,
        },
        ..ExplorerConfig::default()
    };
    let embedder = HashEmbedder::default();
    let mut dproc = ProcessingDb::new(cfg.proc_capacity);
    let mut dmem = MemoryDb::new(embedder.dim());
    let before = dmem.to_bytes().unwrap();
    let run = run_exploration(&cfg, &s, &mut dproc, &mut dmem, &embedder).unwrap();
    assert_eq!(run.summary.rejected, 6);
    assert_eq!(dmem.to_bytes().unwrap(), before);
}
