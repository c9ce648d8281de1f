use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::EpisodeResult;
use crate::sim::{Difficulty, Suite};

/// Aggregate scores over a set of episodes, all in percent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub successes: usize,
    pub sr: f64,
    pub sub_sr: f64,
    /// Mean of `100 * expert / steps` over successes; above 100 when the
    /// agent beat the expert.
    pub rrr: f64,
    /// Set when there were no successes, in which case `rrr` is 0.
    pub rrr_undefined: bool,
    pub ror: f64,
}

#[derive(Debug, Default)]
struct Tally {
    episodes: usize,
    successes: usize,
    sub_done: usize,
    sub_total: usize,
    rrr_sum: f64,
    reasonable: usize,
    operations: usize,
}

impl Tally {
    fn add(&mut self, r: &EpisodeResult, expert: usize) {
        self.episodes += 1;
        self.sub_total += r.sub_goal_flags.len();
        self.sub_done += r.sub_goal_flags.iter().filter(|&&f| f).count();
        if r.success {
            self.successes += 1;
            self.rrr_sum += 100.0 * expert as f64 / r.steps_taken.max(1) as f64;
        }
        self.reasonable += r.changed.iter().filter(|&&c| c).count();
        self.reasonable += usize::from(r.success && r.finish_emitted);
        self.operations += r.steps_taken + usize::from(r.finish_emitted);
    }

    fn metrics(&self) -> Metrics {
        let pct = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                100.0 * num as f64 / den as f64
            }
        };
        Metrics {
            episodes: self.episodes,
            successes: self.successes,
            sr: pct(self.successes, self.episodes),
            sub_sr: pct(self.sub_done, self.sub_total),
            rrr: if self.successes == 0 {
                0.0
            } else {
                self.rrr_sum / self.successes as f64
            },
            rrr_undefined: self.successes == 0,
            ror: pct(self.reasonable, self.operations),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: Metrics,
    pub by_difficulty: BTreeMap<Difficulty, Metrics>,
    pub per_task: BTreeMap<String, Metrics>,
}

/// Aggregates episode results. Every difficulty bucket is reported, empty
/// ones with zero counts.
pub fn compute_metrics(results: &[EpisodeResult], suite: &Suite) -> Result<MetricsReport> {
    let mut overall = Tally::default();
    let mut by_difficulty: BTreeMap<Difficulty, Tally> =
        [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard]
            .into_iter()
            .map(|d| (d, Tally::default()))
            .collect();
    let mut per_task: BTreeMap<String, Tally> = BTreeMap::new();
    for r in results {
        let task = suite
            .task(&r.task_id)
            .map_err(|_| Error::UnknownTask(r.task_id.clone()))?;
        let expert = task.expert_steps.len();
        overall.add(r, expert);
        by_difficulty
            .entry(task.difficulty())
            .or_default()
            .add(r, expert);
        per_task
            .entry(r.task_id.clone())
            .or_default()
            .add(r, expert);
    }
    Ok(MetricsReport {
        overall: overall.metrics(),
        by_difficulty: by_difficulty
            .into_iter()
            .map(|(d, t)| (d, t.metrics()))
            .collect(),
        per_task: per_task
            .into_iter()
            .map(|(k, t)| (k, t.metrics()))
            .collect(),
    })
}
