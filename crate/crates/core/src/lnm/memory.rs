//! Bounded step memory seeded with demonstrations.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::episode::current_target;
use crate::guidance::GlobalGuidance;
use crate::lfm::FusionWeights;
use crate::sim::preferred_velocity;
use crate::types::{LocalAction, WorldState};

use super::encoder::{num1, pair};

pub const DEFAULT_CAPACITY: usize = 8;
pub const DEMONSTRATION_RECORDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPhase {
    Demonstration,
    Historical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    /// Step index, `None` for demonstrations.
    pub step: Option<u64>,
    /// Compact robot/target summary of the state the action was taken in.
    pub state_text: String,
    pub action: LocalAction,
    pub weights: Option<FusionWeights>,
    pub reward: Option<f64>,
}

impl MemoryRecord {
    pub fn is_demonstration(&self) -> bool {
        self.step.is_none()
    }

    pub fn summary(w: &WorldState, g: &GlobalGuidance) -> String {
        format!("robot at {} with target {}", pair(w.robot.position), pair(current_target(g, w)))
    }

    fn render(&self) -> String {
        let label = match self.step {
            Some(s) => format!("[step {s}]"),
            None => "[demo]".to_string(),
        };
        let mut line = format!("{label} {}, action ({}, {})", self.state_text, num1(self.action.vx), num1(self.action.vy));
        if let Some(w) = self.weights {
            line.push_str(&format!(", weights s1={:.2} s2={:.2}", w.s1, w.s2));
        }
        if let Some(r) = self.reward {
            line.push_str(&format!(", reward {:.2}", r));
        }
        line
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryBuffer {
    records: VecDeque<MemoryRecord>,
    capacity: usize,
    phase: MemoryPhase,
}

impl MemoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { records: VecDeque::with_capacity(capacity), capacity: capacity.max(1), phase: MemoryPhase::Demonstration }
    }

    /// Fresh buffer holding synthetic goal-directed records rolled out from `w`.
    pub fn with_demonstrations(capacity: usize, w: &WorldState, g: &GlobalGuidance) -> Self {
        let mut m = Self::new(capacity);
        let mut pos = w.robot.position;
        let mut demo_world = w.clone();
        for _ in 0..DEMONSTRATION_RECORDS.min(m.capacity) {
            demo_world.robot.position = pos;
            let target = current_target(g, &demo_world);
            let v = preferred_velocity(pos, target, w.robot.v_pref, w.dt);
            m.records.push_back(MemoryRecord {
                step: None,
                state_text: MemoryRecord::summary(&demo_world, g),
                action: LocalAction::from_vec(v),
                weights: None,
                reward: None,
            });
            pos += v * w.dt;
        }
        m
    }

    pub fn phase(&self) -> MemoryPhase {
        self.phase
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn records(&self) -> impl Iterator<Item = &MemoryRecord> {
        self.records.iter()
    }

    /// FIFO append; switches to the historical phase once no demonstration is left.
    pub fn update(&mut self, record: MemoryRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        let real = !record.is_demonstration();
        self.records.push_back(record);
        if real && self.records.iter().all(|r| !r.is_demonstration()) {
            self.phase = MemoryPhase::Historical;
        }
    }

    /// The `n` most recently executed (non-demonstration) actions, oldest first.
    pub fn recent_actions(&self, n: usize) -> Vec<LocalAction> {
        let real: Vec<LocalAction> = self.records.iter().filter(|r| !r.is_demonstration()).map(|r| r.action).collect();
        real[real.len().saturating_sub(n)..].to_vec()
    }

    pub fn render(&self) -> String {
        let header = match self.phase {
            MemoryPhase::Demonstration => "Demonstrations and first executed steps:",
            MemoryPhase::Historical => "Most recent executed steps:",
        };
        let mut out = String::from(header);
        out.push('\n');
        if self.records.is_empty() {
            out.push_str("(none yet)\n");
        }
        for r in &self.records {
            out.push_str(&r.render());
            out.push('\n');
        }
        out
    }
}

/// Functional form of [`MemoryBuffer::update`].
pub fn update_memory(mut m: MemoryBuffer, record: MemoryRecord) -> MemoryBuffer {
    m.update(record);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::spawn_scenario;
    use crate::types::TaskKind;

    fn real(step: u64) -> MemoryRecord {
        MemoryRecord { step: Some(step), state_text: format!("s{step}"), action: LocalAction::new(0.1, 0.0), weights: None, reward: Some(0.0) }
    }

    #[test]
    fn fresh_buffer_is_demonstration_phase() {
        assert_eq!(MemoryBuffer::new(8).phase(), MemoryPhase::Demonstration);
    }

    #[test]
    fn eviction_is_fifo() {
        let mut m = MemoryBuffer::new(8);
        for s in 0..9 {
            m.update(real(s));
        }
        assert_eq!(m.len(), 8);
        assert_eq!(m.records().next().unwrap().step, Some(1));
    }

    #[test]
    fn phase_flips_once_demonstrations_are_displaced() {
        let w = spawn_scenario(7, 0, TaskKind::P2p).unwrap();
        let g = GlobalGuidance::point_to_point(w.robot.goal);
        let mut m = MemoryBuffer::with_demonstrations(8, &w, &g);
        assert_eq!(m.len(), 4);
        for s in 0..7 {
            m.update(real(s));
            assert_eq!(m.phase(), MemoryPhase::Demonstration, "after {} appends", s + 1);
        }
        m.update(real(7));
        assert_eq!(m.phase(), MemoryPhase::Historical);
        assert!(m.records().all(|r| !r.is_demonstration()));
    }

    #[test]
    fn eight_real_appends_on_empty_capacity_8() {
        let mut m = MemoryBuffer::new(8);
        for s in 0..8 {
            m.update(real(s));
        }
        assert_eq!(m.phase(), MemoryPhase::Historical);
    }

    #[test]
    fn demonstrations_move_toward_target() {
        let w = spawn_scenario(7, 0, TaskKind::P2p).unwrap();
        let g = GlobalGuidance::point_to_point(w.robot.goal);
        let m = MemoryBuffer::with_demonstrations(8, &w, &g);
        for r in m.records() {
            assert_eq!(r.action, LocalAction::new(0.0, 1.0));
        }
        assert!(m.render().contains("[demo] robot at (0.0, -6.0)"));
    }

    #[test]
    fn recent_actions_skip_demonstrations() {
        let w = spawn_scenario(7, 0, TaskKind::P2p).unwrap();
        let g = GlobalGuidance::point_to_point(w.robot.goal);
        let mut m = MemoryBuffer::with_demonstrations(8, &w, &g);
        assert!(m.recent_actions(3).is_empty());
        m.update(real(0));
        m.update(real(1));
        assert_eq!(m.recent_actions(3).len(), 2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn never_exceeds_capacity(cap in 1usize..16, n in 0usize..64) {
                let mut m = MemoryBuffer::new(cap);
                for s in 0..n as u64 {
                    m.update(real(s));
                    prop_assert!(m.len() <= cap);
                }
                // survivors are exactly the last min(n, cap) steps in order
                let steps: Vec<u64> = m.records().map(|r| r.step.unwrap()).collect();
                let expect: Vec<u64> = (n.saturating_sub(cap) as u64..n as u64).collect();
                prop_assert_eq!(steps, expect);
            }
        }
    }
}
