//! State-to-text encoding.

use std::fmt::Write;

use crate::episode::current_target;
use crate::guidance::GlobalGuidance;
use crate::types::{TaskKind, WorldState};
use crate::Vec2;

/// One decimal, never "-0.0".
pub(crate) fn num1(x: f64) -> String {
    let r = (x * 10.0).round() / 10.0;
    format!("{:.1}", r + 0.0)
}

pub(crate) fn pair(v: Vec2) -> String {
    format!("({}, {})", num1(v.x), num1(v.y))
}

/// Text rendering of what the robot observes, one agent per line, numbers at one decimal.
pub fn encode_state_to_text(w: &WorldState, g: &GlobalGuidance) -> String {
    let mut out = String::new();
    let r = &w.robot;
    writeln!(
        out,
        "Robot: position {}, velocity {}, radius {}, preferred speed {}",
        pair(r.position),
        pair(r.velocity),
        num1(r.radius),
        num1(r.v_pref)
    )
    .unwrap();
    writeln!(out, "Target: {}, social distance {}", pair(current_target(g, w)), num1(g.social_distance)).unwrap();
    if g.task == TaskKind::Hf {
        let u = &w.user;
        writeln!(out, "User: position {}, velocity {}, radius {}", pair(u.position), pair(u.velocity), num1(u.radius)).unwrap();
    }
    let mut peds: Vec<_> = w.pedestrians.iter().collect();
    peds.sort_by_key(|p| p.id);
    for p in peds {
        writeln!(
            out,
            "Pedestrian {}: position {}, velocity {}, radius {}",
            p.id,
            pair(p.position),
            pair(p.velocity),
            num1(p.radius)
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::spawn_scenario;

    #[test]
    fn empty_crowd_has_robot_and_target_only() {
        let w = spawn_scenario(7, 0, TaskKind::P2p).unwrap();
        let g = GlobalGuidance::point_to_point(w.robot.goal);
        let t = encode_state_to_text(&w, &g);
        assert_eq!(
            t,
            "Robot: position (0.0, -6.0), velocity (0.0, 0.0), radius 0.3, preferred speed 1.0\n\
Target: (0.0, 6.0), social distance 0.4\n"
        );
    }

    #[test]
    fn negative_zero_is_not_rendered() {
        assert_eq!(pair(Vec2::new(-0.01, -0.0)), "(0.0, 0.0)");
    }

    #[test]
    fn deterministic() {
        let w = spawn_scenario(7, 10, TaskKind::P2p).unwrap();
        let g = GlobalGuidance::point_to_point(w.robot.goal);
        assert_eq!(encode_state_to_text(&w, &g), encode_state_to_text(&w, &g));
    }

    #[test]
    fn hf_lists_user() {
        let w = spawn_scenario(7, 0, TaskKind::Hf).unwrap();
        let g = GlobalGuidance::human_following();
        assert!(encode_state_to_text(&w, &g).contains("User: position"));
    }
}
