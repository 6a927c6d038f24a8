//! Task targets, the social-norm gate, rewards and termination.

use serde::{Deserialize, Serialize};

use crate::guidance::{GlobalGuidance, Norm};
use crate::sim::detect_collisions;
use crate::types::{LocalAction, TaskKind, WorldState};
use crate::Vec2;

pub const SUCCESS_RADIUS: f64 = 0.3;
pub const SUCCESS_BONUS: f64 = 10.0;
pub const COLLISION_PENALTY: f64 = -10.0;
pub const DISCOMFORT_SCALE: f64 = 2.0;
/// Below this speed the user counts as stationary for heading purposes.
const STATIONARY_SPEED: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    Success,
    Collision,
    Timeout,
}

impl EpisodeStatus {
    pub fn is_terminal(self) -> bool {
        self != EpisodeStatus::Running
    }
}

/// Where the robot should be heading now.
pub fn current_target(g: &GlobalGuidance, w: &WorldState) -> Vec2 {
    match g.task {
        TaskKind::P2p => g.target.unwrap_or(w.robot.goal),
        TaskKind::Hf => {
            let user = &w.user;
            let heading = if user.speed() > STATIONARY_SPEED {
                user.velocity.normalize_or_zero()
            } else if user.heading.is_finite() {
                Vec2::from_angle(user.heading)
            } else {
                (user.goal - user.position).normalize_or_zero()
            };
            user.position - heading * g.follow_offset()
        }
    }
}

/// Forces a full stop under the pedestrian-first norm when a pedestrian is inside the stop distance.
pub fn apply_norm_gate(a: LocalAction, w: &WorldState, g: &GlobalGuidance) -> LocalAction {
    if g.norm == Norm::PedestrianFirst && norm_gate_active(w, g) {
        LocalAction::ZERO
    } else {
        a
    }
}

pub fn norm_gate_active(w: &WorldState, g: &GlobalGuidance) -> bool {
    g.norm == Norm::PedestrianFirst && w.min_pedestrian_surface_distance().is_some_and(|d| d < g.stop_distance)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub progress: f64,
    pub collision_penalty: f64,
    pub discomfort_penalty: f64,
    pub success_bonus: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn parts_sum(&self) -> f64 {
        self.progress + self.collision_penalty + self.discomfort_penalty + self.success_bonus
    }
}

/// Robot sits at the target (point-to-point) or the user finished with the robot close by (following).
pub fn task_complete(w: &WorldState, g: &GlobalGuidance) -> bool {
    match g.task {
        TaskKind::P2p => w.robot.position.distance(current_target(g, w)) <= SUCCESS_RADIUS,
        TaskKind::Hf => {
            let user_done = w.user_route.is_empty() && w.user.position.distance(w.user_final_goal()) <= SUCCESS_RADIUS;
            let gap = w.robot.surface_distance(w.user.position, w.user.radius);
            user_done && gap <= 1.5 * g.follow_offset()
        }
    }
}

/// Hand-crafted per-step reward. Progress is measured toward the target in force at `w_before`.
pub fn local_reward(w_before: &WorldState, _a: LocalAction, w_after: &WorldState, g: &GlobalGuidance) -> RewardBreakdown {
    let target = current_target(g, w_before);
    let progress = w_before.robot.position.distance(target) - w_after.robot.position.distance(target);
    let report = detect_collisions(w_after, g.social_distance);
    let collision_penalty = if report.collided() { COLLISION_PENALTY } else { 0.0 };
    let discomfort_penalty = if g.social_distance > 0.0 {
        w_after
            .pedestrians
            .iter()
            .zip(&report.discomfort_flags)
            .filter(|(_, flagged)| **flagged)
            .map(|(p, _)| {
                let sep = w_after.robot.surface_distance(p.position, p.radius);
                -DISCOMFORT_SCALE * (g.social_distance - sep) / g.social_distance
            })
            .sum()
    } else {
        0.0
    };
    let success_bonus = if !report.collided() && task_complete(w_after, g) { SUCCESS_BONUS } else { 0.0 };
    let mut r = RewardBreakdown { progress, collision_penalty, discomfort_penalty, success_bonus, total: 0.0 };
    r.total = r.parts_sum();
    r
}

/// Discounted sum of totals over a window; zero for an empty window.
pub fn macro_reward(window: &[RewardBreakdown], gamma: f64) -> f64 {
    let mut discount = 1.0;
    let mut sum = 0.0;
    for r in window {
        sum += discount * r.total;
        discount *= gamma;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AgentKind, AgentState};

    fn world() -> WorldState {
        let robot = AgentState::new(0, AgentKind::Robot, Vec2::zero(), Vec2::new(0.0, 5.0));
        let user = AgentState::new(1, AgentKind::User, Vec2::new(2.0, 0.0), Vec2::new(2.0, 0.0));
        WorldState { time_step: 0, dt: 0.25, robot, user, pedestrians: vec![], arena_radius: 6.0, user_route: vec![] }
    }

    fn with_ped(mut w: WorldState, p: Vec2) -> WorldState {
        w.pedestrians.push(AgentState::new(2, AgentKind::Pedestrian, p, p));
        w
    }

    #[test]
    fn p2p_target_is_fixed() {
        let g = GlobalGuidance::point_to_point(Vec2::new(4.0, 4.0));
        assert_eq!(current_target(&g, &world()), Vec2::new(4.0, 4.0));
        let mut w = world();
        w.robot.position = Vec2::new(-3.0, 1.0);
        assert_eq!(current_target(&g, &w), Vec2::new(4.0, 4.0));
    }

    #[test]
    fn hf_target_sits_behind_moving_user() {
        let mut w = world();
        w.user.velocity = Vec2::new(0.8, 0.0);
        let g = GlobalGuidance::human_following().with_social_distance(1.0);
        assert_eq!(current_target(&g, &w), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn hf_target_for_user_still_at_spawn_uses_goal_direction() {
        // freshly spawned agents face their goal
        let user = AgentState::new(1, AgentKind::User, Vec2::new(0.5, -4.0), Vec2::new(0.5, 0.0));
        let mut w = world();
        w.user = user;
        let g = GlobalGuidance::human_following();
        let t = current_target(&g, &w);
        // offset max(0.4, 0.5) = 0.5 against the +y goal direction
        assert!((t - Vec2::new(0.5, -4.5)).length() < 1e-12, "{t:?}");
    }

    #[test]
    fn norm_gate_cases() {
        let a = LocalAction::new(1.0, 0.0);
        let near = with_ped(world(), Vec2::new(0.7, 0.0)); // surface gap 0.1
        let robot_first = GlobalGuidance::point_to_point(Vec2::new(0.0, 5.0));
        assert_eq!(apply_norm_gate(a, &near, &robot_first), a);

        let ped_first = robot_first.clone().with_norm(Norm::PedestrianFirst);
        let at_08 = with_ped(world(), Vec2::new(0.6 + 0.8, 0.0));
        assert_eq!(apply_norm_gate(a, &at_08, &ped_first), LocalAction::ZERO);
        let at_12 = with_ped(world(), Vec2::new(0.6 + 1.2, 0.0));
        assert_eq!(apply_norm_gate(a, &at_12, &ped_first), a);
    }

    #[test]
    fn user_never_triggers_gate() {
        let mut w = world();
        w.user.position = Vec2::new(0.65, 0.0);
        let g = GlobalGuidance::point_to_point(Vec2::new(0.0, 5.0)).with_norm(Norm::PedestrianFirst);
        assert_eq!(apply_norm_gate(LocalAction::new(1.0, 0.0), &w, &g), LocalAction::new(1.0, 0.0));
    }

    #[test]
    fn reaching_target_earns_bonus() {
        let g = GlobalGuidance::point_to_point(Vec2::new(0.0, 0.5));
        let before = world();
        let mut after = world();
        after.robot.position = Vec2::new(0.0, 0.25);
        let r = local_reward(&before, LocalAction::new(0.0, 1.0), &after, &g);
        assert_eq!(r.success_bonus, 10.0);
        assert!((r.progress - 0.25).abs() < 1e-12);
        assert_eq!(r.total, r.parts_sum());
    }

    #[test]
    fn collision_penalty() {
        let g = GlobalGuidance::point_to_point(Vec2::new(0.0, 5.0));
        let before = with_ped(world(), Vec2::new(0.5, 0.0));
        let r = local_reward(&before, LocalAction::ZERO, &before, &g);
        assert_eq!(r.collision_penalty, -10.0);
        assert!(r.total <= -10.0);
    }

    #[test]
    fn discomfort_penalty_by_hand() {
        // sep 0.2, d 0.4: -2 * (0.4 - 0.2) / 0.4 = -1.0
        let g = GlobalGuidance::point_to_point(Vec2::new(0.0, 5.0)).with_social_distance(0.4);
        let w = with_ped(world(), Vec2::new(0.8, 0.0));
        let r = local_reward(&w, LocalAction::ZERO, &w, &g);
        assert!((r.discomfort_penalty + 1.0).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn macro_reward_examples() {
        let r = |t: f64| RewardBreakdown { total: t, ..Default::default() };
        assert_eq!(macro_reward(&[r(1.0), r(1.0), r(1.0)], 1.0), 3.0);
        assert!((macro_reward(&[r(1.0), r(1.0)], 0.9) - 1.9).abs() < 1e-15);
        assert_eq!(macro_reward(&[r(2.0), r(5.0)], 0.0), 2.0);
        assert_eq!(macro_reward(&[], 0.9), 0.0);
    }

    #[test]
    fn hf_success_needs_user_done_and_robot_close() {
        let g = GlobalGuidance::human_following();
        let mut w = world();
        w.user.goal = w.user.position;
        w.robot.position = Vec2::new(1.2, 0.0); // gap 0.2
        assert!(task_complete(&w, &g));
        w.robot.position = Vec2::new(-1.0, 0.0); // gap 2.4
        assert!(!task_complete(&w, &g));
        w.robot.position = Vec2::new(1.2, 0.0);
        w.user_route = vec![Vec2::new(5.0, 5.0)];
        assert!(!task_complete(&w, &g));
    }
}
