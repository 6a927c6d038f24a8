//! Seeded circle-crossing scenarios and the scenario file format.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::types::TaskKind;
use crate::types::{defaults, AgentKind, AgentState, WorldState, FIRST_PEDESTRIAN_ID, ROBOT_ID, USER_ID};
use crate::Vec2;

pub const SCENARIO_SCHEMA: &str = "salm-scenario/1";

/// Extra clearance required between spawned discs, on top of touching.
const SPAWN_CLEARANCE: f64 = 0.1;
const MAX_SPAWN_RETRIES: usize = 100;
/// Angular jitter applied to a pedestrian's antipodal goal, radians.
const GOAL_JITTER: f64 = 0.3;
const HF_USER_SPEED: f64 = 0.8;

/// Builds the circle-crossing scene for `seed`. Identical inputs give bit-identical worlds.
pub fn spawn_scenario(seed: u64, n_pedestrians: usize, task: TaskKind) -> Result<WorldState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = defaults::ARENA_RADIUS;

    let robot_start = Vec2::new(0.0, -r);
    let robot_goal = Vec2::new(0.0, r);
    let mut robot = AgentState::new(ROBOT_ID, AgentKind::Robot, robot_start, robot_goal);

    let (user, user_route) = match task {
        TaskKind::P2p => {
            let p = Vec2::new(1.0, -r);
            (AgentState::new(USER_ID, AgentKind::User, p, p), Vec::new())
        }
        TaskKind::Hf => {
            let start = Vec2::new(rng.gen_range(-1.0..1.0), -r + 2.0);
            let mid = Vec2::new(rng.gen_range(-2.0..2.0), 0.0);
            let end = Vec2::new(rng.gen_range(-2.0..2.0), r - 1.0);
            let mut u = AgentState::new(USER_ID, AgentKind::User, start, mid);
            u.v_pref = HF_USER_SPEED;
            robot.goal = end;
            (u, vec![end])
        }
    };

    // points no pedestrian may start or end on
    let mut reserved: Vec<Vec2> = vec![robot.position, robot_goal, user.position, user.goal];
    reserved.extend(user_route.iter().copied());

    let min_sep = 2.0 * defaults::PEDESTRIAN_RADIUS + SPAWN_CLEARANCE;
    let mut pedestrians: Vec<AgentState> = Vec::with_capacity(n_pedestrians);
    for i in 0..n_pedestrians {
        let mut placed = None;
        for _ in 0..MAX_SPAWN_RETRIES {
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let jitter: f64 = rng.gen_range(-GOAL_JITTER..GOAL_JITTER);
            let start = Vec2::from_angle(theta) * r;
            let goal = Vec2::from_angle(theta + std::f64::consts::PI + jitter) * r;
            let clear_start = reserved.iter().all(|q| q.distance(start) >= min_sep)
                && pedestrians.iter().all(|p| p.position.distance(start) >= min_sep);
            let clear_goal = reserved.iter().all(|q| q.distance(goal) >= min_sep)
                && pedestrians.iter().all(|p| p.goal.distance(goal) >= min_sep);
            if clear_start && clear_goal {
                placed = Some((start, goal));
                break;
            }
        }
        let (start, goal) = placed.ok_or(Error::ScenarioGeneration { seed, placed: i, requested: n_pedestrians })?;
        pedestrians.push(AgentState::new(FIRST_PEDESTRIAN_ID + i as u32, AgentKind::Pedestrian, start, goal));
    }

    Ok(WorldState { time_step: 0, dt: defaults::DT, robot, user, pedestrians, arena_radius: r, user_route })
}

/// One agent entry of a scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioAgent {
    pub kind: AgentKind,
    pub position: Vec2,
    pub goal: Vec2,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_v_pref")]
    pub v_pref: f64,
    /// Follow-up waypoints (user only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub route: Vec<Vec2>,
}

fn default_radius() -> f64 {
    defaults::PEDESTRIAN_RADIUS
}

fn default_v_pref() -> f64 {
    defaults::V_PREF
}

/// `salm-scenario/1` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub schema: String,
    pub arena_radius: f64,
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub agents: Vec<ScenarioAgent>,
}

impl ScenarioFile {
    pub fn from_world(w: &WorldState, task: Option<TaskKind>, seed: Option<u64>) -> Self {
        let entry = |a: &AgentState, route: Vec<Vec2>| ScenarioAgent {
            kind: a.kind,
            position: a.position,
            goal: a.goal,
            radius: a.radius,
            v_pref: a.v_pref,
            route,
        };
        let mut agents = vec![entry(&w.robot, vec![]), entry(&w.user, w.user_route.clone())];
        agents.extend(w.pedestrians.iter().map(|p| entry(p, vec![])));
        Self { schema: SCENARIO_SCHEMA.into(), arena_radius: w.arena_radius, dt: w.dt, task, seed, agents }
    }

    /// Builds the initial world. Exactly one robot is required; a missing user is parked at the robot goal's mirror.
    pub fn to_world(&self) -> Result<WorldState> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::Scenario(format!("unsupported schema `{}`, expected `{SCENARIO_SCHEMA}`", self.schema)));
        }
        let mut robot = None;
        let mut user = None;
        let mut route = Vec::new();
        let mut pedestrians = Vec::new();
        let mut next_ped = FIRST_PEDESTRIAN_ID;
        for a in &self.agents {
            let (id, slot) = match a.kind {
                AgentKind::Robot => (ROBOT_ID, 0),
                AgentKind::User => (USER_ID, 1),
                AgentKind::Pedestrian => {
                    next_ped += 1;
                    (next_ped - 1, 2)
                }
            };
            let mut s = AgentState::new(id, a.kind, a.position, a.goal);
            s.radius = a.radius;
            s.v_pref = a.v_pref;
            match slot {
                0 if robot.is_some() => return Err(Error::Scenario("more than one robot".into())),
                1 if user.is_some() => return Err(Error::Scenario("more than one user".into())),
                0 => robot = Some(s),
                1 => {
                    route = a.route.clone();
                    user = Some(s)
                }
                _ => pedestrians.push(s),
            }
        }
        let robot = robot.ok_or_else(|| Error::Scenario("scenario has no robot".into()))?;
        let user = user.unwrap_or_else(|| {
            let p = Vec2::new(robot.position.x + 1.0, robot.position.y);
            AgentState::new(USER_ID, AgentKind::User, p, p)
        });
        let w = WorldState {
            time_step: 0,
            dt: self.dt,
            robot,
            user,
            pedestrians,
            arena_radius: self.arena_radius,
            user_route: route,
        };
        w.validate()?;
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let a = spawn_scenario(7, 10, TaskKind::P2p).unwrap();
        let b = spawn_scenario(7, 10, TaskKind::P2p).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = spawn_scenario(8, 10, TaskKind::P2p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_p2p_scene() {
        let w = spawn_scenario(7, 0, TaskKind::P2p).unwrap();
        assert!(w.pedestrians.is_empty());
        assert_eq!(w.robot.position.distance(w.robot.goal), 2.0 * w.arena_radius);
    }

    #[test]
    fn spawn_separation_on_seed_7() {
        let w = spawn_scenario(7, 10, TaskKind::P2p).unwrap();
        let pos: Vec<Vec2> = w.agents().map(|a| a.position).collect();
        for i in 0..pos.len() {
            for j in i + 1..pos.len() {
                assert!(pos[i].distance(pos[j]) >= 2.0 * 0.3 + 0.1, "agents {i} and {j} too close");
            }
        }
        w.validate().unwrap();
    }

    #[test]
    fn hf_user_has_route() {
        let w = spawn_scenario(3, 5, TaskKind::Hf).unwrap();
        assert_eq!(w.user_route.len(), 1);
        assert_eq!(w.robot.goal, w.user_final_goal());
    }

    #[test]
    fn crowded_arena_exhausts_retries() {
        let err = spawn_scenario(1, 200, TaskKind::P2p).unwrap_err();
        assert!(matches!(err, Error::ScenarioGeneration { .. }));
    }

    #[test]
    fn scenario_file_round_trip() {
        let w = spawn_scenario(5, 4, TaskKind::Hf).unwrap();
        let f = ScenarioFile::from_world(&w, Some(TaskKind::Hf), Some(5));
        let text = serde_json::to_string_pretty(&f).unwrap();
        assert!(text.contains("\"schema\": \"salm-scenario/1\""));
        let back: ScenarioFile = serde_json::from_str(&text).unwrap();
        let w2 = back.to_world().unwrap();
        assert_eq!(w2.robot.position, w.robot.position);
        assert_eq!(w2.pedestrians.len(), 4);
        assert_eq!(w2.user_route, w.user_route);
        assert_eq!(w2.pedestrians[3].goal, w.pedestrians[3].goal);
    }

    #[test]
    fn scenario_file_rejects_wrong_schema() {
        let w = spawn_scenario(5, 0, TaskKind::P2p).unwrap();
        let mut f = ScenarioFile::from_world(&w, None, None);
        f.schema = "other/2".into();
        assert!(f.to_world().is_err());
    }
}
