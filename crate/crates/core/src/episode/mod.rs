//! Episode loop: feedback delivery, planning, norm gate, stepping, rewards and logging.

pub mod log;
pub mod planners;
mod rules;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::guidance::{replan_guidance, GlobalGuidance, UserUtterance};
use crate::lfm::{FusionWeights, GotGraph};
use crate::llm::LlmClient;
use crate::lnm::LmAction;
use crate::sim::{detect_collisions, step_world, OrcaParams};
use crate::types::{clip_action, LocalAction, MacroAction, TaskKind, WorldState};
use crate::Vec2;

pub use log::{EpisodeHeader, EpisodeLog, EpisodeOutcome, Event, EventKind, LogLine, StepRecord, LOG_SCHEMA};
pub use planners::{PlannerConfig, PlannerKind};
pub use rules::*;

pub const DEFAULT_MAX_STEPS: u64 = 120;
pub const DEFAULT_GAMMA: f64 = 0.9;
pub const DEFAULT_STEP_BUDGET_SECS: f64 = 30.0;
/// Half-angle of the cone in which the user counts as in view while following.
pub const FOV_HALF_ANGLE: f64 = std::f64::consts::PI / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub max_steps: u64,
    pub gamma: f64,
    pub step_budget_secs: f64,
    pub orca: OrcaParams,
    /// Attach the full thought graph to each step record.
    pub log_graphs: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            gamma: DEFAULT_GAMMA,
            step_budget_secs: DEFAULT_STEP_BUDGET_SECS,
            orca: OrcaParams::default(),
            log_graphs: true,
        }
    }
}

/// Scheduled user feedback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub step: u64,
    pub text: String,
}

impl FeedbackItem {
    pub fn new(step: u64, text: impl Into<String>) -> Self {
        Self { step, text: text.into() }
    }
}

/// Guidance a scenario starts with when no request is given: go to the robot's goal, or follow the user.
pub fn initial_guidance(task: TaskKind, w: &WorldState) -> GlobalGuidance {
    let mut g = match task {
        TaskKind::P2p => GlobalGuidance::point_to_point(w.robot.goal),
        TaskKind::Hf => GlobalGuidance::human_following(),
    };
    g.raw_text = format!("scenario default ({task})");
    g
}

/// What the engine hands a planner each step.
pub struct PlanContext<'a> {
    pub step: u64,
    pub world: &'a WorldState,
    pub guidance: &'a GlobalGuidance,
}

/// A planner's proposal before the norm gate.
#[derive(Debug, Clone, Default)]
pub struct PlanOutput {
    pub action: LocalAction,
    pub a_rl: Option<LocalAction>,
    pub a_lm: Option<LmAction>,
    pub weights: Option<FusionWeights>,
    pub macro_action: Option<MacroAction>,
    pub got: Option<GotGraph>,
    /// True when the feedback model ran this step (as opposed to holding weights).
    pub lfm_ran: bool,
    pub events: Vec<Event>,
}

/// Executed-step summary fed back to the planner (memory).
#[derive(Debug, Clone)]
pub struct StepFeedback<'a> {
    pub step: u64,
    pub world_before: &'a WorldState,
    pub guidance: &'a GlobalGuidance,
    pub executed: LocalAction,
    pub weights: Option<FusionWeights>,
    pub reward: f64,
}

pub trait Planner: Send {
    fn name(&self) -> &str;
    fn plan(&mut self, ctx: &PlanContext<'_>) -> crate::Result<PlanOutput>;
    fn observe(&mut self, _feedback: &StepFeedback<'_>) {}
}

/// Observer for live consumers (the session server); called after every step.
pub trait StepSink {
    fn on_step(&mut self, _record: &StepRecord, _world: &WorldState, _guidance: &GlobalGuidance) {}
}

impl StepSink for () {}

fn user_in_view(w: &WorldState) -> bool {
    let to_user = w.user.position - w.robot.position;
    if to_user.length() < 1e-9 {
        return true;
    }
    let facing = if w.robot.speed() > 1e-9 { w.robot.velocity.normalize_or_zero() } else { Vec2::from_angle(w.robot.heading) };
    let cos = facing.dot(to_user) / to_user.length();
    cos >= FOV_HALF_ANGLE.cos() - 1e-12
}

/// Incrementally stepped episode; [`run_episode`] drives it to the end.
pub struct Episode {
    pub world: WorldState,
    pub guidance: GlobalGuidance,
    pub status: EpisodeStatus,
    planner: Box<dyn Planner>,
    llm: LlmClient,
    config: EpisodeConfig,
    pending: Vec<FeedbackItem>,
    steps: Vec<StepRecord>,
    header: EpisodeHeader,
    start_position: Vec2,
    path_length: f64,
    fov_steps: u64,
}

impl Episode {
    pub fn new(
        header: EpisodeHeader,
        world: WorldState,
        guidance: GlobalGuidance,
        planner: Box<dyn Planner>,
        llm: LlmClient,
        feedback: Vec<FeedbackItem>,
        config: EpisodeConfig,
    ) -> Self {
        let mut pending = feedback;
        pending.sort_by_key(|f| f.step);
        let start_position = world.robot.position;
        Self {
            world,
            guidance,
            status: EpisodeStatus::Running,
            planner,
            llm,
            config,
            pending,
            steps: Vec::new(),
            header,
            start_position,
            path_length: 0.0,
            fov_steps: 0,
        }
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn llm(&self) -> &LlmClient {
        &self.llm
    }

    pub fn header(&self) -> &EpisodeHeader {
        &self.header
    }

    /// Queues feedback for the next step boundary (live sessions).
    pub fn push_feedback(&mut self, text: impl Into<String>) {
        let step = self.world.time_step;
        self.pending.push(FeedbackItem::new(step, text));
        self.pending.sort_by_key(|f| f.step);
    }

    fn apply_feedback(&mut self, events: &mut Vec<Event>) {
        let step = self.world.time_step;
        let due: Vec<FeedbackItem> = {
            let (due, rest): (Vec<_>, Vec<_>) = self.pending.drain(..).partition(|f| f.step <= step);
            self.pending = rest;
            due
        };
        for item in due {
            let u = UserUtterance::feedback(item.text.clone(), step);
            match replan_guidance(&self.guidance, &u, &self.llm) {
                Ok(parsed) => {
                    for w in parsed.warnings {
                        events.push(Event::new(EventKind::GuidanceWarning, w));
                    }
                    self.guidance = parsed.guidance;
                    if let (TaskKind::P2p, Some(t)) = (self.guidance.task, self.guidance.target) {
                        self.world.robot.goal = t;
                    }
                    events.push(Event::new(
                        EventKind::GuidanceUpdate,
                        format!("version {} from \"{}\"", self.guidance.version, item.text),
                    ));
                }
                Err(e) => events.push(Event::new(EventKind::GuidanceError, e.to_string())),
            }
        }
    }

    /// Advances one step; returns `None` once the episode has ended.
    pub fn step(&mut self, sink: &mut dyn StepSink) -> Option<&StepRecord> {
        if self.status.is_terminal() {
            return None;
        }
        let step = self.world.time_step;
        self.llm.set_step(step);
        let mut events = Vec::new();
        self.apply_feedback(&mut events);

        let started = Instant::now();
        let planned = self.planner.plan(&PlanContext { step, world: &self.world, guidance: &self.guidance });
        let elapsed = started.elapsed();
        let mut out = match planned {
            Ok(o) => o,
            Err(e) => {
                events.push(Event::new(EventKind::PlannerError, e.to_string()));
                PlanOutput::default()
            }
        };
        events.append(&mut out.events);
        let mut proposed = out.action;
        if elapsed > Duration::from_secs_f64(self.config.step_budget_secs) {
            events.push(Event::new(
                EventKind::StepBudgetExceeded,
                format!("planner took {:.1} s, budget {:.1} s", elapsed.as_secs_f64(), self.config.step_budget_secs),
            ));
            proposed = LocalAction::ZERO;
        }
        let min_sep_before = self.world.min_pedestrian_surface_distance();
        let gated = apply_norm_gate(proposed, &self.world, &self.guidance);
        let norm_gate = gated != proposed || norm_gate_active(&self.world, &self.guidance);
        if norm_gate {
            events.push(Event::new(EventKind::NormGate, "pedestrian inside stop distance"));
        }
        let executed = match clip_action(gated, self.world.robot.v_pref) {
            Ok(a) => a,
            Err(e) => {
                events.push(Event::new(EventKind::PlannerError, e.to_string()));
                LocalAction::ZERO
            }
        };

        let before = self.world.clone();
        let after = step_world(&before, executed, &self.config.orca);
        let reward = local_reward(&before, executed, &after, &self.guidance);
        let report = detect_collisions(&after, self.guidance.social_distance);
        self.path_length += after.robot.position.distance(before.robot.position);

        self.status = if report.collided() {
            events.push(Event::new(EventKind::Collision, format!("{:?}", report.robot_pedestrian_hits)));
            EpisodeStatus::Collision
        } else if task_complete(&after, &self.guidance) {
            events.push(Event::new(EventKind::Success, "task complete"));
            EpisodeStatus::Success
        } else if after.time_step >= self.config.max_steps {
            events.push(Event::new(EventKind::Timeout, format!("{} steps", after.time_step)));
            EpisodeStatus::Timeout
        } else {
            EpisodeStatus::Running
        };
        if self.guidance.task == TaskKind::Hf && user_in_view(&after) {
            self.fov_steps += 1;
        }

        self.planner.observe(&StepFeedback {
            step,
            world_before: &before,
            guidance: &self.guidance,
            executed,
            weights: out.weights,
            reward: reward.total,
        });

        let record = StepRecord {
            step,
            guidance_version: self.guidance.version,
            social_distance: self.guidance.social_distance,
            target: current_target(&self.guidance, &before),
            world: crate::sim::trajectory::TrajectoryRecord::of(&after, vec![]),
            a_rl: out.a_rl,
            a_lm: out.a_lm,
            weights: out.weights,
            proposed,
            a_r: executed,
            macro_action: out.macro_action,
            min_separation_before: min_sep_before,
            min_separation: report.min_separation.is_finite().then_some(report.min_separation),
            discomfort: report.discomfort_count(),
            reward,
            status: self.status,
            lfm_ran: out.lfm_ran,
            got: if self.config.log_graphs { out.got } else { None },
            events,
        };
        self.world = after;
        sink.on_step(&record, &self.world, &self.guidance);
        self.steps.push(record);
        self.steps.last()
    }

    /// Ends a running episode early (aborted live sessions); the outcome is a timeout.
    pub fn abort(&mut self, reason: &str) {
        if !self.status.is_terminal() {
            self.status = EpisodeStatus::Timeout;
            if let Some(last) = self.steps.last_mut() {
                last.events.push(Event::new(EventKind::Aborted, reason));
                last.status = EpisodeStatus::Timeout;
            }
        }
    }

    pub fn outcome(&self) -> EpisodeOutcome {
        let n = self.steps.len() as u64;
        let dt = self.world.dt;
        let discomfort_steps = self.steps.iter().filter(|s| s.discomfort > 0).count() as u64;
        let min_sep = self.steps.iter().filter_map(|s| s.min_separation).fold(f64::INFINITY, f64::min);
        let failures = self.steps.iter().flat_map(|s| &s.events).filter(|e| e.kind.is_failure()).count() as u64;
        let feedback_events = self
            .steps
            .iter()
            .flat_map(|s| &s.events)
            .filter(|e| matches!(e.kind, EventKind::GuidanceUpdate | EventKind::GuidanceError))
            .count() as u64;
        let goal_distance = match self.header.task {
            TaskKind::P2p => self.start_position.distance(self.header.initial_target.unwrap_or(self.start_position)),
            TaskKind::Hf => self.start_position.distance(self.world.user_final_goal()),
        };
        EpisodeOutcome {
            status: self.status,
            steps: n,
            nav_time: n as f64 * dt,
            t_opt: goal_distance / self.world.robot.v_pref,
            t_timeout: self.config.max_steps as f64 * dt,
            path_length: self.path_length,
            discomfort_steps,
            discomfort_fraction: if n == 0 { 0.0 } else { discomfort_steps as f64 / n as f64 },
            min_separation: min_sep.is_finite().then_some(min_sep),
            fov_fraction: (self.header.task == TaskKind::Hf && n > 0).then(|| self.fov_steps as f64 / n as f64),
            feedback_events,
            failures,
            llm_calls: self.llm.call_count() as u64,
            final_guidance_version: self.guidance.version,
            error: None,
        }
    }

    pub fn into_log(self) -> EpisodeLog {
        let outcome = self.outcome();
        EpisodeLog { header: self.header, steps: self.steps, outcome }
    }
}

/// Runs an episode to completion.
pub fn run_episode(
    header: EpisodeHeader,
    world: WorldState,
    guidance: GlobalGuidance,
    planner: Box<dyn Planner>,
    llm: LlmClient,
    feedback: Vec<FeedbackItem>,
    config: EpisodeConfig,
) -> EpisodeLog {
    let mut ep = Episode::new(header, world, guidance, planner, llm, feedback, config);
    while ep.step(&mut ()).is_some() {}
    ep.into_log()
}
