use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use super::{DeviceState, Predicate, Suite};
use crate::model::Action;

#[derive(Debug, Clone, Copy)]
pub struct PlanLimits {
    pub max_depth: usize,
    pub max_states: usize,
}

impl PlanLimits {
    pub fn depth(max_depth: usize) -> Self {
        Self {
            max_depth,
            max_states: 2_000_000,
        }
    }
}

/// 128-bit state fingerprint; the visited set stores these instead of full
/// states so deep searches stay small.
fn fingerprint(state: &DeviceState) -> (u64, u64) {
    let mut a = DefaultHasher::new();
    state.hash(&mut a);
    let mut b = DefaultHasher::new();
    0x9e37_79b9_7f4a_7c15_u64.hash(&mut b);
    state.hash(&mut b);
    (a.finish(), b.finish())
}

/// Breadth-first search for the shortest action sequence after which every
/// predicate in `goal` holds. `Type` actions draw their text from `texts`.
/// Actions that leave the state unchanged are never expanded.
pub fn shortest_path(
    suite: &Suite,
    start: &DeviceState,
    goal: &[Predicate],
    texts: &[String],
    limits: PlanLimits,
) -> Option<Vec<Action>> {
    if suite.holds_all(start, goal) {
        return Some(Vec::new());
    }
    // Every discovered node as (parent, action from parent); states are only
    // kept for the current frontier.
    let mut nodes: Vec<(usize, Option<Action>)> = vec![(0, None)];
    let mut seen = HashSet::from([fingerprint(start)]);
    let mut frontier = vec![(0usize, start.clone())];

    for _ in 0..limits.max_depth {
        let mut next_frontier = Vec::new();
        for (idx, state) in &frontier {
            for action in suite.candidate_actions(state, texts) {
                let Ok(next) = suite.successor(state, &action) else {
                    continue;
                };
                if next == *state || !seen.insert(fingerprint(&next)) {
                    continue;
                }
                nodes.push((*idx, Some(action)));
                let child = nodes.len() - 1;
                if suite.holds_all(&next, goal) {
                    return Some(unwind(&nodes, child));
                }
                if nodes.len() >= limits.max_states {
                    return None;
                }
                next_frontier.push((child, next));
            }
        }
        if next_frontier.is_empty() {
            break;
        }
        frontier = next_frontier;
    }
    None
}

fn unwind(nodes: &[(usize, Option<Action>)], mut idx: usize) -> Vec<Action> {
    let mut path = Vec::new();
    while let Some(action) = &nodes[idx].1 {
        path.push(action.clone());
        idx = nodes[idx].0;
    }
    path.reverse();
    path
}
