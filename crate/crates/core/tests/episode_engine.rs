use salm_core::episode::{EpisodeLog, EventKind, FeedbackItem, PlannerConfig, PlannerKind};
use salm_core::eval::{run_spec, EpisodeSpec};
use salm_core::guidance::Norm;
use salm_core::sim::{spawn_scenario, ScenarioFile};
use salm_core::types::{AgentKind, AgentState, TaskKind};
use salm_core::Vec2;

fn run(kind: PlannerKind, spec: &EpisodeSpec) -> EpisodeLog {
    let r = run_spec(spec, &PlannerConfig::new(kind).prepare().unwrap());
    assert!(!r.crashed(), "{:?}", r.log.outcome.error);
    r.log
}

fn goto(seed: u64, extra: &str) -> String {
    let g = spawn_scenario(seed, 0, TaskKind::P2p).unwrap().robot.goal;
    format!("go to ({:.3}, {:.3}){extra}", g.x, g.y)
}

#[test]
fn feedback_lands_on_its_step_as_version_two() {
    let mut spec = EpisodeSpec::new(TaskKind::P2p, 21);
    spec.pedestrians = 0;
    spec.feedback = vec![FeedbackItem::new(10, "keep 1.5 meters")];
    let log = run(PlannerKind::Salm, &spec);
    for s in &log.steps {
        let (v, d) = if s.step < 10 { (1, log.header.initial_guidance.social_distance) } else { (2, 1.5) };
        assert_eq!((s.guidance_version, s.social_distance), (v, d), "step {}", s.step);
    }
    let at10 = log.steps.iter().find(|s| s.step == 10).unwrap();
    assert!(at10.events.iter().any(|e| e.kind == EventKind::GuidanceUpdate));
    assert_eq!(log.outcome.final_guidance_version, 2);
    assert_eq!(log.outcome.feedback_events, 1);
    assert!(log.steps.iter().filter(|s| s.step >= 12).all(|s| s.discomfort == 0));
}

#[test]
fn guidance_versions_never_decrease() {
    let mut spec = EpisodeSpec::new(TaskKind::P2p, 22);
    spec.feedback = vec![
        FeedbackItem::new(3, "keep 1.0 meters"),
        FeedbackItem::new(6, "this is not a command"),
        FeedbackItem::new(9, "keep 0.8 meters from people"),
    ];
    let log = run(PlannerKind::Salm, &spec);
    assert!(log.steps.windows(2).all(|p| p[1].guidance_version >= p[0].guidance_version));
    assert_eq!(log.steps.last().unwrap().guidance_version, log.outcome.final_guidance_version);
}

/// Empty crowd plus one standing pedestrian 1.0 m to the side of the straight path.
fn off_path_scene(seed: u64) -> ScenarioFile {
    let mut w = spawn_scenario(seed, 0, TaskKind::P2p).unwrap();
    let (a, b) = (w.robot.position, w.robot.goal);
    let dir = (b - a) * (1.0 / (b - a).length());
    let spot = (a + b) * 0.5 + Vec2::new(-dir.y, dir.x);
    w.pedestrians.push(AgentState::new(2, AgentKind::Pedestrian, spot, spot));
    ScenarioFile::from_world(&w, Some(TaskKind::P2p), Some(seed))
}

#[test]
fn discomfort_flags_grow_with_the_distance() {
    let seed = 23;
    let mut spec = EpisodeSpec::new(TaskKind::P2p, seed);
    spec.scenario = Some(off_path_scene(seed));
    spec.request = Some(goto(seed, " and keep 0.4 meters from people"));
    let near = run(PlannerKind::Salm, &spec);
    assert_eq!(near.header.initial_guidance.social_distance, 0.4);
    assert_eq!(near.outcome.discomfort_steps as usize, near.discomfort_steps_at(0.4));
    // same trajectory, two thresholds
    assert!(near.discomfort_steps_at(0.4) < near.discomfort_steps_at(1.5));
    for d in [0.2, 0.4, 0.8, 1.5, 3.0].windows(2) {
        assert!(near.discomfort_steps_at(d[0]) <= near.discomfort_steps_at(d[1]));
    }
    spec.request = Some(goto(seed, " and keep 1.5 meters from people"));
    let far = run(PlannerKind::Salm, &spec);
    assert!(near.outcome.discomfort_steps < far.outcome.discomfort_steps);
}

#[test]
fn pedestrian_first_stops_inside_the_stop_distance() {
    let mut gated = 0;
    for seed in 30..36 {
        let mut spec = EpisodeSpec::new(TaskKind::P2p, seed);
        spec.request = Some(goto(seed, ", pedestrian first"));
        let log = run(PlannerKind::Salm, &spec);
        let g = &log.header.initial_guidance;
        assert_eq!(g.norm, Norm::PedestrianFirst);
        for s in &log.steps {
            if s.min_separation_before.is_some_and(|d| d < g.stop_distance) {
                gated += 1;
                assert_eq!((s.a_r.vx, s.a_r.vy), (0.0, 0.0), "seed {seed} step {}", s.step);
                assert!(s.events.iter().any(|e| e.kind == EventKind::NormGate));
            }
        }
    }
    assert!(gated > 0, "no step came inside the stop distance");
}
