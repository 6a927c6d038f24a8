//! Optimal reciprocal collision avoidance for a single agent.

use serde::{Deserialize, Serialize};

use super::lp::{solve_2d, solve_3d, Line};
use crate::types::{AgentState, LocalAction, ObservableState};
use crate::{Real, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrcaParams {
    pub neighbor_dist: f64,
    pub time_horizon: f64,
    /// Unused: there are no static obstacles.
    pub time_horizon_obst: f64,
    pub max_neighbors: usize,
    /// Pedestrians and the user include the robot among their neighbors.
    #[serde(default = "default_true")]
    pub robot_visible: bool,
}

fn default_true() -> bool {
    true
}

impl Default for OrcaParams {
    fn default() -> Self {
        Self { neighbor_dist: 10.0, time_horizon: 5.0, time_horizon_obst: 5.0, max_neighbors: 10, robot_visible: true }
    }
}

impl OrcaParams {
    pub fn is_valid(&self) -> bool {
        self.neighbor_dist > 0.0 && self.time_horizon > 0.0 && self.time_horizon_obst > 0.0 && self.max_neighbors > 0
    }
}

/// Velocity toward the goal at `v_pref`, slowed so the agent lands on the goal instead of overshooting.
pub fn preferred_velocity(position: Vec2, goal: Vec2, v_pref: f64, dt: f64) -> Vec2 {
    let to_goal = goal - position;
    let dist = to_goal.length();
    if dist <= 1e-9 {
        return Vec2::zero();
    }
    let speed = v_pref.min(dist / dt);
    to_goal * (speed / dist)
}

/// Result of one velocity selection, kept for constraint checks.
#[derive(Debug, Clone)]
pub struct OrcaSolution {
    pub velocity: Vec2,
    pub lines: Vec<Line<f64>>,
    /// False when the half-planes had no common point inside the speed disc.
    pub feasible: bool,
}

impl OrcaSolution {
    pub fn max_violation(&self) -> f64 {
        self.lines.iter().map(|l| l.violation(self.velocity)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Half-plane of velocities for `velocity` (radius `radius`) that avoid `other` for `time_horizon`,
/// taking half of the avoidance effort.
pub fn reciprocal_constraint<T: Real>(
    position: crate::geometry::Vector2<T>,
    velocity: crate::geometry::Vector2<T>,
    radius: T,
    other_position: crate::geometry::Vector2<T>,
    other_velocity: crate::geometry::Vector2<T>,
    other_radius: T,
    time_horizon: T,
    dt: T,
) -> Line<T> {
    use crate::geometry::Vector2;

    let rel_pos = other_position - position;
    let rel_vel = velocity - other_velocity;
    let dist_sq = rel_pos.length_squared();
    let combined_radius = radius + other_radius;
    let combined_radius_sq = combined_radius * combined_radius;
    let inv_horizon = T::one() / time_horizon;

    let (direction, u) = if dist_sq > combined_radius_sq {
        // cutoff center of the truncated cone
        let w = rel_vel - rel_pos * inv_horizon;
        let w_len_sq = w.length_squared();
        let dot1 = w.dot(rel_pos);
        if dot1 < T::zero() && dot1 * dot1 > combined_radius_sq * w_len_sq {
            // project on the cutoff circle
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            (Vector2::new(unit_w.y, -unit_w.x), unit_w * (combined_radius * inv_horizon - w_len))
        } else {
            // project on a leg; collinear ties resolve to the right leg, which both agents pick in their own frame
            let leg = (dist_sq - combined_radius_sq).sqrt();
            let direction = if rel_pos.det(w) > T::zero() {
                Vector2::new(
                    rel_pos.x * leg - rel_pos.y * combined_radius,
                    rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vector2::new(
                    rel_pos.x * leg + rel_pos.y * combined_radius,
                    -rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            };
            let dot2 = rel_vel.dot(direction);
            (direction, direction * dot2 - rel_vel)
        }
    } else {
        // already overlapping: resolve within one time step
        let inv_step = T::one() / dt;
        let w = rel_vel - rel_pos * inv_step;
        let w_len = w.length();
        let unit_w = if w_len > T::zero() {
            w / w_len
        } else if dist_sq > T::zero() {
            -rel_pos.normalize_or_zero()
        } else {
            Vector2::new(T::one(), T::zero())
        };
        (Vector2::new(unit_w.y, -unit_w.x), unit_w * (combined_radius * inv_step - w_len))
    };

    Line { point: velocity + u * T::lit(0.5), direction }
}

/// Picks the neighbors ORCA reacts to: within `neighbor_dist`, nearest first, at most `max_neighbors`.
fn select_neighbors<'a>(agent: &AgentState, neighbors: &'a [ObservableState], params: &OrcaParams) -> Vec<&'a ObservableState> {
    let range_sq = params.neighbor_dist * params.neighbor_dist;
    let mut near: Vec<(f64, usize)> = neighbors
        .iter()
        .enumerate()
        .map(|(i, n)| ((n.position - agent.position).length_squared(), i))
        .filter(|(d, _)| *d < range_sq)
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    near.truncate(params.max_neighbors);
    near.into_iter().map(|(_, i)| &neighbors[i]).collect()
}

/// Full ORCA solve toward an explicit preferred velocity.
pub fn orca_solve(
    agent: &AgentState,
    pref_velocity: Vec2,
    neighbors: &[ObservableState],
    params: &OrcaParams,
    dt: f64,
) -> OrcaSolution {
    let lines: Vec<Line<f64>> = select_neighbors(agent, neighbors, params)
        .into_iter()
        .map(|n| {
            reciprocal_constraint(
                agent.position,
                agent.velocity,
                agent.radius,
                n.position,
                n.velocity,
                n.radius,
                params.time_horizon,
                dt,
            )
        })
        .collect();

    let mut velocity = Vec2::zero();
    let fail = solve_2d(&lines, agent.v_pref, pref_velocity, false, &mut velocity);
    let feasible = fail == lines.len();
    if !feasible {
        solve_3d(&lines, fail, agent.v_pref, &mut velocity);
    }
    // rounding can leave the result a hair outside the disc
    let speed = velocity.length();
    if speed > agent.v_pref {
        velocity = velocity * (agent.v_pref / speed);
    }
    OrcaSolution { velocity, lines, feasible }
}

/// ORCA velocity of `agent` heading for its own goal.
pub fn orca_velocity(agent: &AgentState, neighbors: &[ObservableState], params: &OrcaParams, dt: f64) -> LocalAction {
    let pref = preferred_velocity(agent.position, agent.goal, agent.v_pref, dt);
    LocalAction::from_vec(orca_solve(agent, pref, neighbors, params, dt).velocity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::AgentKind;

    fn agent(id: u32, p: (f64, f64), g: (f64, f64)) -> AgentState {
        AgentState::new(id, AgentKind::Pedestrian, Vec2::new(p.0, p.1), Vec2::new(g.0, g.1))
    }

    #[test]
    fn no_neighbors_gives_preferred_velocity() {
        let a = agent(0, (0.0, 0.0), (10.0, 0.0));
        let v = orca_velocity(&a, &[], &OrcaParams::default(), 0.25);
        assert_eq!(v, LocalAction::new(1.0, 0.0));
    }

    #[test]
    fn neighbor_behind_does_not_constrain_preferred_velocity() {
        let mut a = agent(0, (0.0, 0.0), (10.0, 0.0));
        a.velocity = Vec2::new(1.0, 0.0);
        let mut b = agent(1, (-2.0, 0.0), (-10.0, 0.0));
        b.velocity = Vec2::new(-1.0, 0.0);
        let sol = orca_solve(&a, Vec2::new(1.0, 0.0), &[b.observe()], &OrcaParams::default(), 0.25);
        assert_eq!(sol.lines.len(), 1);
        // the preferred velocity lies strictly inside the admitted half-plane
        assert!(sol.lines[0].violation(Vec2::new(1.0, 0.0)) < 0.0);
        assert_eq!(sol.velocity, Vec2::new(1.0, 0.0));
    }

    #[test]
    fn neighbors_beyond_range_are_ignored() {
        let a = agent(0, (0.0, 0.0), (10.0, 0.0));
        let b = agent(1, (11.0, 0.0), (0.0, 0.0));
        let params = OrcaParams::default();
        let sol = orca_solve(&a, Vec2::new(1.0, 0.0), &[b.observe()], &params, 0.25);
        assert!(sol.lines.is_empty());
    }

    #[test]
    fn max_neighbors_keeps_nearest() {
        let a = agent(0, (0.0, 0.0), (10.0, 0.0));
        let ns: Vec<ObservableState> =
            (1..=5).map(|i| agent(i, (0.0, 1.0 + i as f64), (0.0, 0.0)).observe()).collect();
        let params = OrcaParams { max_neighbors: 2, ..Default::default() };
        let picked = select_neighbors(&a, &ns, &params);
        assert_eq!(picked.len(), 2);
        assert_eq!(picked[0].position, Vec2::new(0.0, 2.0));
        assert_eq!(picked[1].position, Vec2::new(0.0, 3.0));
    }

    #[test]
    fn overlapping_agents_get_separating_constraint() {
        let a = agent(0, (0.0, 0.0), (10.0, 0.0));
        let b = agent(1, (0.4, 0.0), (10.0, 0.0));
        let sol = orca_solve(&a, Vec2::new(1.0, 0.0), &[b.observe()], &OrcaParams::default(), 0.25);
        // must move away from b (negative x) to resolve the overlap
        assert!(sol.velocity.x < 0.0, "{:?}", sol.velocity);
    }

    #[test]
    fn coincident_agents_do_not_produce_nan() {
        let a = agent(0, (1.0, 1.0), (10.0, 0.0));
        let b = agent(1, (1.0, 1.0), (10.0, 0.0));
        let sol = orca_solve(&a, Vec2::new(1.0, 0.0), &[b.observe()], &OrcaParams::default(), 0.25);
        assert!(sol.velocity.is_finite());
    }

    #[test]
    fn constraint_is_scalar_generic() {
        use crate::geometry::Vector2;
        let l64 = reciprocal_constraint(
            Vector2::new(0.0f64, 0.0),
            Vector2::new(1.0, 0.0),
            0.3,
            Vector2::new(3.0, 0.1),
            Vector2::new(-1.0, 0.0),
            0.3,
            5.0,
            0.25,
        );
        let l32 = reciprocal_constraint(
            Vector2::new(0.0f32, 0.0),
            Vector2::new(1.0, 0.0),
            0.3,
            Vector2::new(3.0, 0.1),
            Vector2::new(-1.0, 0.0),
            0.3,
            5.0,
            0.25,
        );
        assert!((l64.direction.x - l32.direction.x as f64).abs() < 1e-5);
        assert!((l64.point.y - l32.point.y as f64).abs() < 1e-5);
    }
}
