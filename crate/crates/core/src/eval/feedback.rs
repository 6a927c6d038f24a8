//! Random mid-episode user feedback for batches.

use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::episode::FeedbackItem;
use crate::types::TaskKind;

/// Feedback lands on one of these steps; early enough that most episodes are still running.
pub const FEEDBACK_STEPS: RangeInclusive<u64> = 5..=30;

// keeps the feedback stream independent of the scene generator seeded with the same number
const STREAM_SALT: u64 = 0x5a17_feed_bac4_0001;
const DISTANCES: [f64; 3] = [0.8, 1.0, 1.5];
const GOAL_RADIUS: f64 = 4.0;

/// With probability `p`, a single goal change (point-to-point only) or social-distance change.
pub fn feedback_script(seed: u64, task: TaskKind, p: f64) -> Vec<FeedbackItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ STREAM_SALT);
    if !rng.gen_bool(p.clamp(0.0, 1.0)) {
        return Vec::new();
    }
    let step = rng.gen_range(FEEDBACK_STEPS);
    let goal_change = task == TaskKind::P2p && rng.gen_bool(0.5);
    let text = if goal_change {
        let x: f64 = rng.gen_range(-GOAL_RADIUS..GOAL_RADIUS);
        let y: f64 = rng.gen_range(0.0..GOAL_RADIUS);
        format!("please go to ({x:.1}, {y:.1}) instead")
    } else {
        let d = DISTANCES[rng.gen_range(0..DISTANCES.len())];
        format!("keep {d:.1} meters from people")
    };
    vec![FeedbackItem::new(step, text)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_probability_never_fires() {
        assert!((0..200).all(|s| feedback_script(s, TaskKind::P2p, 0.0).is_empty()));
    }

    #[test]
    fn certain_feedback_is_in_window() {
        for s in 0..200 {
            let f = feedback_script(s, TaskKind::Hf, 1.0);
            assert_eq!(f.len(), 1);
            assert!(FEEDBACK_STEPS.contains(&f[0].step));
            assert!(f[0].text.starts_with("keep"), "following tasks only get distance changes");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(feedback_script(11, TaskKind::P2p, 0.5), feedback_script(11, TaskKind::P2p, 0.5));
    }
}
