//! Shared domain types: agents, actions and the world snapshot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec2;

pub type AgentId = u32;

pub const ROBOT_ID: AgentId = 0;
pub const USER_ID: AgentId = 1;
pub const FIRST_PEDESTRIAN_ID: AgentId = 2;

/// Default simulation constants.
pub mod defaults {
    pub const DT: f64 = 0.25;
    pub const ARENA_RADIUS: f64 = 6.0;
    pub const ROBOT_RADIUS: f64 = 0.3;
    pub const PEDESTRIAN_RADIUS: f64 = 0.3;
    pub const V_PREF: f64 = 1.0;
}

/// Navigation task: point-to-point or human-following.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    P2p,
    Hf,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::P2p => "p2p",
            TaskKind::Hf => "hf",
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "p2p" => Ok(TaskKind::P2p),
            "hf" => Ok(TaskKind::Hf),
            other => Err(Error::Config(format!("unknown task `{other}` (expected p2p or hf)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Robot,
    User,
    Pedestrian,
}

/// Full state of one agent, observable and hidden parts together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: AgentId,
    pub kind: AgentKind,
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
    pub goal: Vec2,
    pub v_pref: f64,
    /// Radians. Follows the velocity direction; kept when the agent stops.
    pub heading: f64,
}

impl AgentState {
    pub fn new(id: AgentId, kind: AgentKind, position: Vec2, goal: Vec2) -> Self {
        let radius = match kind {
            AgentKind::Robot => defaults::ROBOT_RADIUS,
            _ => defaults::PEDESTRIAN_RADIUS,
        };
        Self {
            id,
            kind,
            position,
            velocity: Vec2::zero(),
            radius,
            goal,
            v_pref: defaults::V_PREF,
            heading: (goal - position).angle(),
        }
    }

    pub fn observe(&self) -> ObservableState {
        observable_projection(self)
    }

    pub fn speed(&self) -> f64 {
        self.velocity.length()
    }

    pub fn distance_to_goal(&self) -> f64 {
        self.position.distance(self.goal)
    }

    /// Surface-to-surface gap to another disc.
    pub fn surface_distance(&self, other_pos: Vec2, other_radius: f64) -> f64 {
        self.position.distance(other_pos) - self.radius - other_radius
    }

    pub(crate) fn set_velocity(&mut self, v: Vec2) {
        self.velocity = v;
        if v.length_squared() > 0.0 {
            self.heading = v.angle();
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidAgent(format!("agent {} radius {} must be > 0", self.id, self.radius)));
        }
        if !(self.v_pref > 0.0) || !self.v_pref.is_finite() {
            return Err(Error::InvalidAgent(format!("agent {} v_pref {} must be > 0", self.id, self.v_pref)));
        }
        if !self.goal.is_finite() || !self.position.is_finite() || !self.velocity.is_finite() {
            return Err(Error::InvalidAgent(format!("agent {} has non-finite state", self.id)));
        }
        if self.velocity.length() > self.v_pref + 1e-9 {
            return Err(Error::InvalidAgent(format!(
                "agent {} speed {} exceeds v_pref {}",
                self.id,
                self.velocity.length(),
                self.v_pref
            )));
        }
        Ok(())
    }
}

/// What the robot can estimate about another agent. Goal and preferred speed are absent by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableState {
    pub position: Vec2,
    pub velocity: Vec2,
    pub radius: f64,
}

pub fn observable_projection(agent: &AgentState) -> ObservableState {
    ObservableState {
        position: agent.position,
        velocity: agent.velocity,
        radius: agent.radius,
    }
}

/// A velocity command `[vx, vy]` in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalAction {
    pub vx: f64,
    pub vy: f64,
}

impl LocalAction {
    pub const ZERO: LocalAction = LocalAction { vx: 0.0, vy: 0.0 };

    pub const fn new(vx: f64, vy: f64) -> Self {
        Self { vx, vy }
    }

    pub fn from_vec(v: Vec2) -> Self {
        Self::new(v.x, v.y)
    }

    pub fn as_vec(self) -> Vec2 {
        Vec2::new(self.vx, self.vy)
    }

    pub fn speed(self) -> f64 {
        self.as_vec().length()
    }

    pub fn is_finite(self) -> bool {
        self.vx.is_finite() && self.vy.is_finite()
    }
}

/// Scales `a` down onto the `v_pref` ball; direction is preserved.
pub fn clip_action(a: LocalAction, v_pref: f64) -> Result<LocalAction> {
    if !a.is_finite() {
        return Err(Error::MalformedAction(format!("non-finite action ({}, {})", a.vx, a.vy)));
    }
    if !(v_pref > 0.0) {
        return Err(Error::MalformedAction(format!("v_pref {v_pref} must be > 0")));
    }
    let speed = a.speed();
    if speed <= v_pref {
        Ok(a)
    } else {
        let k = v_pref / speed;
        Ok(LocalAction::new(a.vx * k, a.vy * k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroKind {
    Waypoint,
    Stop,
    OperationTag,
}

/// A robot macro-action: a waypoint, a stop, or a tagged operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroAction {
    pub kind: MacroKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoint: Option<Vec2>,
    pub label: String,
}

impl MacroAction {
    pub fn waypoint(p: Vec2, label: impl Into<String>) -> Self {
        Self { kind: MacroKind::Waypoint, waypoint: Some(p), label: label.into() }
    }

    pub fn stop() -> Self {
        Self { kind: MacroKind::Stop, waypoint: None, label: "stop".into() }
    }

    pub fn operation(label: impl Into<String>) -> Self {
        Self { kind: MacroKind::OperationTag, waypoint: None, label: label.into() }
    }

    pub fn is_consistent(&self) -> bool {
        self.waypoint.is_some() == (self.kind == MacroKind::Waypoint)
    }
}

/// Snapshot of the whole scene at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time_step: u64,
    pub dt: f64,
    pub robot: AgentState,
    pub user: AgentState,
    pub pedestrians: Vec<AgentState>,
    pub arena_radius: f64,
    /// Waypoints the user walks to after its current goal, in order.
    #[serde(default)]
    pub user_route: Vec<Vec2>,
}

impl WorldState {
    pub fn agents(&self) -> impl Iterator<Item = &AgentState> {
        std::iter::once(&self.robot).chain(std::iter::once(&self.user)).chain(self.pedestrians.iter())
    }

    pub fn time(&self) -> f64 {
        self.time_step as f64 * self.dt
    }

    /// The user's last destination: end of its route, or its current goal.
    pub fn user_final_goal(&self) -> Vec2 {
        self.user_route.last().copied().unwrap_or(self.user.goal)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidWorld(format!("dt {} must be > 0", self.dt)));
        }
        let mut ids = std::collections::BTreeSet::new();
        for a in self.agents() {
            a.check()?;
            if !ids.insert(a.id) {
                return Err(Error::InvalidWorld(format!("duplicate agent id {}", a.id)));
            }
        }
        Ok(())
    }

    /// Smallest surface gap between the robot and any pedestrian, `None` without pedestrians.
    pub fn min_pedestrian_surface_distance(&self) -> Option<f64> {
        self.pedestrians
            .iter()
            .map(|p| self.robot.surface_distance(p.position, p.radius))
            .min_by(f64::total_cmp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_copies_observable_fields() {
        let mut a = AgentState::new(3, AgentKind::Pedestrian, Vec2::new(1.0, 2.0), Vec2::new(9.0, 9.0));
        a.velocity = Vec2::new(0.5, 0.0);
        let o = observable_projection(&a);
        assert_eq!(o.position, Vec2::new(1.0, 2.0));
        assert_eq!(o.velocity, Vec2::new(0.5, 0.0));
        assert_eq!(o.radius, 0.3);
        let json = serde_json::to_value(o).unwrap();
        assert!(json.get("goal").is_none() && json.get("v_pref").is_none());
    }

    #[test]
    fn projection_of_stationary_agent_and_idempotence() {
        let a = AgentState::new(3, AgentKind::Pedestrian, Vec2::new(1.0, 2.0), Vec2::new(9.0, 9.0));
        let o = observable_projection(&a);
        assert_eq!(o.velocity, Vec2::zero());
        assert_eq!(o, a.observe());
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip_action(LocalAction::new(0.3, 0.4), 1.0).unwrap(), LocalAction::new(0.3, 0.4));
        let c = clip_action(LocalAction::new(3.0, 4.0), 1.0).unwrap();
        assert!((c.vx - 0.6).abs() < 1e-15 && (c.vy - 0.8).abs() < 1e-15);
        assert_eq!(clip_action(LocalAction::ZERO, 0.7).unwrap(), LocalAction::ZERO);
    }

    #[test]
    fn clip_rejects_non_finite() {
        assert!(matches!(
            clip_action(LocalAction::new(f64::NAN, 0.0), 1.0),
            Err(Error::MalformedAction(_))
        ));
        assert!(clip_action(LocalAction::new(f64::INFINITY, 0.0), 1.0).is_err());
    }

    #[test]
    fn heading_kept_when_stopping() {
        let mut a = AgentState::new(0, AgentKind::Robot, Vec2::zero(), Vec2::new(0.0, 5.0));
        a.set_velocity(Vec2::new(1.0, 0.0));
        assert_eq!(a.heading, 0.0);
        a.set_velocity(Vec2::zero());
        assert_eq!(a.heading, 0.0);
    }

    #[test]
    fn macro_action_consistency() {
        assert!(MacroAction::waypoint(Vec2::new(1.0, 1.0), "wp").is_consistent());
        assert!(MacroAction::stop().is_consistent());
        let bad = MacroAction { kind: MacroKind::Stop, waypoint: Some(Vec2::zero()), label: String::new() };
        assert!(!bad.is_consistent());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clip_is_idempotent_and_direction_preserving(vx in -50.0f64..50.0, vy in -50.0f64..50.0, vp in 0.1f64..3.0) {
                let a = LocalAction::new(vx, vy);
                let c = clip_action(a, vp).unwrap();
                prop_assert!(c.speed() <= vp * (1.0 + 1e-12));
                let cc = clip_action(c, vp).unwrap();
                prop_assert!((cc.vx - c.vx).abs() <= 1e-12 && (cc.vy - c.vy).abs() <= 1e-12);
                if a.speed() > 1e-9 {
                    // cross product zero, dot positive
                    prop_assert!((a.as_vec().det(c.as_vec())).abs() <= 1e-9 * a.speed());
                    prop_assert!(a.as_vec().dot(c.as_vec()) > 0.0);
                }
            }
        }
    }
}
