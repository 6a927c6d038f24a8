//! JSON-lines trajectory records.

use serde::{Deserialize, Serialize};

use crate::types::{AgentId, AgentState, WorldState};
use crate::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSnapshot {
    pub id: AgentId,
    pub pos: Vec2,
    pub vel: Vec2,
    pub radius: f64,
}

impl From<&AgentState> for AgentSnapshot {
    fn from(a: &AgentState) -> Self {
        Self { id: a.id, pos: a.position, vel: a.velocity, radius: a.radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub t: u64,
    pub robot: AgentSnapshot,
    pub user: AgentSnapshot,
    pub pedestrians: Vec<AgentSnapshot>,
    pub events: Vec<String>,
}

impl TrajectoryRecord {
    pub fn of(w: &WorldState, events: Vec<String>) -> Self {
        Self {
            t: w.time_step,
            robot: (&w.robot).into(),
            user: (&w.user).into(),
            pedestrians: w.pedestrians.iter().map(AgentSnapshot::from).collect(),
            events,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("trajectory record serializes")
    }
}
