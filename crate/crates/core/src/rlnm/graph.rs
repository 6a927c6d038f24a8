//! Spatio-temporal graph features.

use serde::{Deserialize, Serialize};

use crate::episode::current_target;
use crate::guidance::{GlobalGuidance, Norm};
use crate::types::{AgentId, AgentState, TaskKind, WorldState};
use crate::{Matrix, Real};

use super::tensor;

/// Per-row features: relative position (2), velocity (2), radius, distance,
/// then robot-only target vector (2), social distance and norm flag.
pub const FEATURE_DIM: usize = 10;
pub const DEFAULT_HISTORY: usize = 4;

pub mod col {
    pub const REL_X: usize = 0;
    pub const REL_Y: usize = 1;
    pub const VX: usize = 2;
    pub const VY: usize = 3;
    pub const RADIUS: usize = 4;
    pub const DIST: usize = 5;
    pub const TARGET_X: usize = 6;
    pub const TARGET_Y: usize = 7;
    pub const SOCIAL_DISTANCE: usize = 8;
    pub const NORM: usize = 9;
}

/// `frames[t]` is an `A × FEATURE_DIM` matrix, oldest first. Spatial edges are
/// all pairs within a frame, temporal edges chain each row index across frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StGraph {
    pub agent_ids: Vec<AgentId>,
    pub frames: Vec<Matrix>,
}

impl StGraph {
    pub fn agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn history(&self) -> usize {
        self.frames.len()
    }

    pub fn last(&self) -> &Matrix {
        self.frames.last().expect("graph has at least one frame")
    }

    pub fn frames_as<T: Real>(&self) -> Vec<tensor::Matrix<T>> {
        self.frames.iter().map(|f| f.cast()).collect()
    }

    /// Temporal chain of one agent: `H × FEATURE_DIM`.
    pub fn chain(&self, row: usize) -> Matrix {
        Matrix::concat_rows(&self.frames.iter().map(|f| f.row_matrix(row)).collect::<Vec<_>>())
            .expect("frames share width")
    }
}

fn observed<'a>(w: &'a WorldState, g: &GlobalGuidance) -> Vec<&'a AgentState> {
    let mut others: Vec<&AgentState> = w.pedestrians.iter().collect();
    if g.task == TaskKind::Hf {
        others.push(&w.user);
    }
    others.sort_by_key(|a| a.id);
    let mut out = vec![&w.robot];
    out.extend(others);
    out
}

fn frame(w: &WorldState, g: &GlobalGuidance) -> (Vec<AgentId>, Matrix) {
    let agents = observed(w, g);
    let origin = w.robot.position;
    let target = current_target(g, w) - origin;
    let norm = if g.norm == Norm::PedestrianFirst { 1.0 } else { 0.0 };
    let m = Matrix::from_fn(agents.len(), FEATURE_DIM, |i, j| {
        let a = agents[i];
        let rel = a.position - origin;
        match j {
            col::REL_X => rel.x,
            col::REL_Y => rel.y,
            col::VX => a.velocity.x,
            col::VY => a.velocity.y,
            col::RADIUS => a.radius,
            col::DIST => rel.length(),
            col::TARGET_X if i == 0 => target.x,
            col::TARGET_Y if i == 0 => target.y,
            col::SOCIAL_DISTANCE if i == 0 => g.social_distance,
            col::NORM if i == 0 => norm,
            _ => 0.0,
        }
    });
    (agents.iter().map(|a| a.id).collect(), m)
}

/// Builds the graph from the last `h` states of `history` (oldest first), padding
/// at the front with the oldest state. Guidance conditions the robot row only.
pub fn build_st_graph(history: &[WorldState], g: &GlobalGuidance, h: usize) -> StGraph {
    assert!(!history.is_empty(), "st-graph needs at least one state");
    let h = h.max(1);
    let window = &history[history.len().saturating_sub(h)..];
    let pad = h - window.len();
    let mut frames = Vec::with_capacity(h);
    let mut ids = Vec::new();
    for w in std::iter::repeat_n(&window[0], pad).chain(window) {
        let (i, m) = frame(w, g);
        ids = i;
        frames.push(m);
    }
    StGraph { agent_ids: ids, frames }
}
