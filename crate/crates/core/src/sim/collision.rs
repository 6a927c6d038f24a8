//! Robot-pedestrian contact and discomfort detection.

use serde::{Deserialize, Serialize};

use crate::types::{AgentId, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    /// (pedestrian id, penetration depth in meters)
    pub robot_pedestrian_hits: Vec<(AgentId, f64)>,
    /// Smallest robot-pedestrian surface gap; negative while overlapping, +inf without pedestrians.
    pub min_separation: f64,
    /// Per pedestrian, in world order: gap below the social distance without contact.
    pub discomfort_flags: Vec<bool>,
}

impl CollisionReport {
    pub fn collided(&self) -> bool {
        !self.robot_pedestrian_hits.is_empty()
    }

    pub fn discomfort_count(&self) -> usize {
        self.discomfort_flags.iter().filter(|f| **f).count()
    }
}

pub fn detect_collisions(w: &WorldState, social_distance: f64) -> CollisionReport {
    let d = social_distance.max(0.0);
    let mut hits = Vec::new();
    let mut flags = Vec::with_capacity(w.pedestrians.len());
    let mut min_sep = f64::INFINITY;
    for p in &w.pedestrians {
        let center = w.robot.position.distance(p.position);
        let combined = w.robot.radius + p.radius;
        let sep = center - combined;
        min_sep = min_sep.min(sep);
        let hit = center < combined;
        if hit {
            hits.push((p.id, combined - center));
        }
        flags.push(!hit && sep < d);
    }
    CollisionReport { robot_pedestrian_hits: hits, min_separation: min_sep, discomfort_flags: flags }
}
