//! Success rate and the declared social score.
//!
//! Social score per episode, on a 0-100 scale:
//!
//! ```text
//! collision or crash: 0
//! otherwise: 100 * clamp(0.5*S + 0.25*S*T + 0.25*(1 - D), 0, 1)
//! ```
//!
//! with S = 1 on success, T = clamp(1 - (t_nav - t_opt) / (t_timeout - t_opt), 0, 1)
//! and D the fraction of steps with any pedestrian inside the social distance.
//! The batch score is the mean. Reports carry [`SS_VERSION`].

use serde::{Deserialize, Serialize};

use crate::episode::{EpisodeLog, EpisodeOutcome, EpisodeStatus};
use crate::types::TaskKind;

pub const SS_VERSION: &str = "ss-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Success,
    Collision,
    Timeout,
    Crashed,
}

impl Bucket {
    pub fn of(o: &EpisodeOutcome) -> Self {
        if o.error.is_some() {
            return Bucket::Crashed;
        }
        match o.status {
            EpisodeStatus::Success => Bucket::Success,
            EpisodeStatus::Collision => Bucket::Collision,
            EpisodeStatus::Timeout | EpisodeStatus::Running => Bucket::Timeout,
        }
    }
}

fn time_bonus(o: &EpisodeOutcome) -> f64 {
    let span = o.t_timeout - o.t_opt;
    if span <= 0.0 {
        return 1.0;
    }
    (1.0 - (o.nav_time - o.t_opt) / span).clamp(0.0, 1.0)
}

pub fn episode_social_score(o: &EpisodeOutcome) -> f64 {
    let success = match Bucket::of(o) {
        Bucket::Collision | Bucket::Crashed => return 0.0,
        Bucket::Success => 1.0,
        Bucket::Timeout => 0.0,
    };
    let raw = 0.5 * success + 0.25 * success * time_bonus(o) + 0.25 * (1.0 - o.discomfort_fraction);
    100.0 * raw.clamp(0.0, 1.0)
}

/// Percent of episodes that succeeded. Empty input gives 0.
pub fn success_rate<'a>(outcomes: impl IntoIterator<Item = &'a EpisodeOutcome>) -> f64 {
    let (mut n, mut ok) = (0usize, 0usize);
    for o in outcomes {
        n += 1;
        ok += usize::from(Bucket::of(o) == Bucket::Success);
    }
    if n == 0 {
        0.0
    } else {
        100.0 * ok as f64 / n as f64
    }
}

pub fn social_score<'a>(outcomes: impl IntoIterator<Item = &'a EpisodeOutcome>) -> f64 {
    let scores: Vec<f64> = outcomes.into_iter().map(episode_social_score).collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// One planner on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub planner: String,
    pub task: TaskKind,
    pub episodes: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub crashes: usize,
    pub success_rate: f64,
    pub social_score: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Over successful episodes.
    pub mean_nav_time: Option<f64>,
    pub mean_discomfort: f64,
    pub feedback_episodes: usize,
}

impl MetricsRow {
    pub fn from_logs(planner: &str, task: TaskKind, logs: &[&EpisodeLog]) -> Self {
        let outcomes: Vec<&EpisodeOutcome> = logs.iter().map(|l| &l.outcome).collect();
        let n = outcomes.len();
        let count = |b: Bucket| outcomes.iter().filter(|o| Bucket::of(o) == b).count();
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        let (successes, collisions, timeouts, crashes) =
            (count(Bucket::Success), count(Bucket::Collision), count(Bucket::Timeout), count(Bucket::Crashed));
        let nav: Vec<f64> = outcomes.iter().filter(|o| Bucket::of(o) == Bucket::Success).map(|o| o.nav_time).collect();
        Self {
            planner: planner.to_string(),
            task,
            episodes: n,
            successes,
            collisions,
            timeouts,
            crashes,
            success_rate: success_rate(outcomes.iter().copied()),
            social_score: social_score(outcomes.iter().copied()),
            collision_rate: pct(collisions),
            timeout_rate: pct(timeouts),
            mean_nav_time: (!nav.is_empty()).then(|| nav.iter().sum::<f64>() / nav.len() as f64),
            mean_discomfort: if n == 0 {
                0.0
            } else {
                outcomes.iter().map(|o| o.discomfort_fraction).sum::<f64>() / n as f64
            },
            feedback_episodes: outcomes.iter().filter(|o| o.feedback_events > 0).count(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn get(&self, planner: &str, task: TaskKind) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.planner == planner && r.task == task)
    }

    /// Planner names in first-seen order.
    pub fn planners(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.planner.as_str()) {
                out.push(&r.planner);
            }
        }
        out
    }

    /// Full per-task metrics; the short Table-shaped report lives in `report`.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# ss_version={SS_VERSION}\nplanner,task,episodes,successes,collisions,timeouts,crashes,sr,ss,collision_rate,timeout_rate,mean_nav_time,mean_discomfort,feedback_episodes\n"
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{:.1},{:.1},{:.1},{:.1},{},{:.3},{}\n",
                r.planner,
                r.task,
                r.episodes,
                r.successes,
                r.collisions,
                r.timeouts,
                r.crashes,
                r.success_rate,
                r.social_score,
                r.collision_rate,
                r.timeout_rate,
                r.mean_nav_time.map(|t| format!("{t:.2}")).unwrap_or_default(),
                r.mean_discomfort,
                r.feedback_episodes
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn outcome(status: EpisodeStatus, nav: f64, disc: f64) -> EpisodeOutcome {
        let mut o = EpisodeOutcome::crashed("x", 30.0);
        o.error = None;
        o.failures = 0;
        o.status = status;
        o.nav_time = nav;
        o.t_opt = 12.0;
        o.discomfort_fraction = disc;
        o
    }

    #[test]
    fn perfect_episode_scores_100() {
        let o = outcome(EpisodeStatus::Success, 12.0, 0.0);
        assert_eq!(episode_social_score(&o), 100.0);
        assert_eq!(social_score([&o, &o]), 100.0);
    }

    #[test]
    fn collisions_score_zero() {
        let o = outcome(EpisodeStatus::Collision, 5.0, 0.0);
        assert_eq!(social_score([&o, &o, &o]), 0.0);
        assert_eq!(success_rate([&o]), 0.0);
    }

    #[test]
    fn success_rate_counts() {
        let ok = outcome(EpisodeStatus::Success, 14.0, 0.0);
        let bad = outcome(EpisodeStatus::Timeout, 30.0, 0.0);
        let batch: Vec<&EpisodeOutcome> = std::iter::repeat_n(&ok, 45).chain(std::iter::repeat_n(&bad, 5)).collect();
        assert_eq!(success_rate(batch.iter().copied()), 90.0);
        assert_eq!(success_rate([&bad, &bad]), 0.0);
        assert_eq!(success_rate([&ok]), 100.0);
    }

    #[test]
    fn hand_computed_mixed_scores() {
        // success at 21 s with 10% discomfort: 0.5 + 0.25*(1 - 9/18) + 0.25*0.9 = 0.85
        let a = outcome(EpisodeStatus::Success, 21.0, 0.1);
        assert!((episode_social_score(&a) - 85.0).abs() < 1e-9);
        // timeout with 40% discomfort: 0.25*0.6
        let b = outcome(EpisodeStatus::Timeout, 30.0, 0.4);
        assert!((episode_social_score(&b) - 15.0).abs() < 1e-9);
        let crashed = EpisodeOutcome::crashed("boom", 30.0);
        assert_eq!(episode_social_score(&crashed), 0.0);
        assert!((social_score([&a, &b, &crashed]) - 100.0 / 3.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn score_is_bounded(nav in 0.0f64..40.0, disc in 0.0f64..1.0, s in 0usize..4) {
            let status = [EpisodeStatus::Success, EpisodeStatus::Collision, EpisodeStatus::Timeout, EpisodeStatus::Running][s];
            let v = episode_social_score(&outcome(status, nav, disc));
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }
}
