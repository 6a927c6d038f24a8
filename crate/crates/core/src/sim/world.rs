//! Deterministic world stepping.

use super::orca::{orca_velocity, OrcaParams};
use crate::types::{AgentState, LocalAction, ObservableState, WorldState};
use crate::Vec2;

/// Distance at which the user moves on to the next waypoint of its route.
pub const ROUTE_ADVANCE_RADIUS: f64 = 0.2;

fn neighbors_of(w: &WorldState, self_id: u32, robot_visible: bool) -> Vec<ObservableState> {
    w.agents()
        .filter(|a| a.id != self_id)
        .filter(|a| robot_visible || a.id != w.robot.id)
        .map(AgentState::observe)
        .collect()
}

/// Advances every agent by one `dt`: the user and pedestrians by ORCA, the robot by `robot_action`.
pub fn step_world(w: &WorldState, robot_action: LocalAction, params: &OrcaParams) -> WorldState {
    let dt = w.dt;
    let user_velocity = orca_velocity(&w.user, &neighbors_of(w, w.user.id, params.robot_visible), params, dt);
    let ped_velocities: Vec<LocalAction> = w
        .pedestrians
        .iter()
        .map(|p| orca_velocity(p, &neighbors_of(w, p.id, params.robot_visible), params, dt))
        .collect();

    let mut next = w.clone();
    next.time_step += 1;

    integrate(&mut next.robot, robot_action.as_vec(), dt);
    integrate(&mut next.user, user_velocity.as_vec(), dt);
    for (p, v) in next.pedestrians.iter_mut().zip(ped_velocities) {
        integrate(p, v.as_vec(), dt);
    }

    if !next.user_route.is_empty() && next.user.position.distance(next.user.goal) <= ROUTE_ADVANCE_RADIUS {
        next.user.goal = next.user_route.remove(0);
    }
    next
}

fn integrate(agent: &mut AgentState, velocity: Vec2, dt: f64) {
    agent.set_velocity(velocity);
    agent.position += velocity * dt;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::{spawn_scenario, TaskKind};
    use crate::types::{AgentKind, AgentState};

    fn lone_robot_world() -> WorldState {
        let robot = AgentState::new(0, AgentKind::Robot, Vec2::new(0.0, 0.0), Vec2::new(5.0, 0.0));
        let mut user = AgentState::new(1, AgentKind::User, Vec2::new(-3.0, -3.0), Vec2::new(-3.0, -3.0));
        user.heading = 0.0;
        WorldState { time_step: 0, dt: 0.25, robot, user, pedestrians: vec![], arena_radius: 6.0, user_route: vec![] }
    }

    #[test]
    fn euler_step_for_robot() {
        let w = lone_robot_world();
        let n = step_world(&w, LocalAction::new(1.0, 0.0), &OrcaParams::default());
        assert_eq!(n.robot.position, Vec2::new(0.25, 0.0));
        assert_eq!(n.time_step, 1);
    }

    #[test]
    fn all_at_goal_is_fixed_point() {
        let mut w = spawn_scenario(3, 4, TaskKind::P2p).unwrap();
        for a in std::iter::once(&mut w.robot).chain(std::iter::once(&mut w.user)).chain(w.pedestrians.iter_mut()) {
            a.goal = a.position;
        }
        let n = step_world(&w, LocalAction::ZERO, &OrcaParams::default());
        let mut expect = w.clone();
        expect.time_step = 1;
        assert_eq!(n, expect);
    }

    #[test]
    fn stepping_is_deterministic_and_bounded() {
        let w0 = spawn_scenario(11, 10, TaskKind::Hf).unwrap();
        let params = OrcaParams::default();
        let mut a = w0.clone();
        let mut b = w0.clone();
        for _ in 0..60 {
            let na = step_world(&a, LocalAction::new(0.0, 0.5), &params);
            let nb = step_world(&b, LocalAction::new(0.0, 0.5), &params);
            assert_eq!(na, nb);
            for (before, after) in a.agents().zip(na.agents()) {
                let disp = before.position.distance(after.position);
                assert!(disp <= before.v_pref * a.dt + 1e-9, "agent {} jumped {disp}", before.id);
                assert!(after.position.is_finite());
            }
            a = na;
            b = nb;
        }
    }

    #[test]
    fn user_advances_along_route() {
        let mut w = lone_robot_world();
        w.user.position = Vec2::new(0.0, 3.0);
        w.user.goal = Vec2::new(0.1, 3.0);
        w.user_route = vec![Vec2::new(3.0, 3.0)];
        let n = step_world(&w, LocalAction::ZERO, &OrcaParams::default());
        assert_eq!(n.user.goal, Vec2::new(3.0, 3.0));
        assert!(n.user_route.is_empty());
    }
}
