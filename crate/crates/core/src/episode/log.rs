//! Episode logs as JSON lines: one header, one line per step, one outcome.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpisodeConfig, EpisodeStatus, FeedbackItem, RewardBreakdown};
use crate::error::{Error, Result};
use crate::guidance::GlobalGuidance;
use crate::lfm::{FusionWeights, GotGraph};
use crate::lnm::LmAction;
use crate::sim::trajectory::TrajectoryRecord;
use crate::sim::ScenarioFile;
use crate::types::{LocalAction, MacroAction, TaskKind};
use crate::Vec2;

pub const LOG_SCHEMA: &str = "salm-episode/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    GuidanceUpdate,
    GuidanceWarning,
    GuidanceError,
    LnmFailure,
    /// The first reply was unusable and the retry succeeded.
    LnmRetry,
    LnmClipped,
    LfmFlag,
    PlannerError,
    StepBudgetExceeded,
    NormGate,
    Collision,
    Success,
    Timeout,
    Aborted,
}

impl EventKind {
    /// Degradations, as opposed to ordinary bookkeeping.
    pub fn is_failure(self) -> bool {
        matches!(
            self,
            EventKind::GuidanceWarning
                | EventKind::GuidanceError
                | EventKind::LnmFailure
                | EventKind::LnmRetry
                | EventKind::LnmClipped
                | EventKind::LfmFlag
                | EventKind::PlannerError
                | EventKind::StepBudgetExceeded
                | EventKind::Aborted
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub detail: String,
}

impl Event {
    pub fn new(kind: EventKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub schema: String,
    pub seed: u64,
    pub task: TaskKind,
    pub planner: String,
    pub backend: String,
    pub rl_slot: String,
    pub config: EpisodeConfig,
    pub scenario: ScenarioFile,
    pub initial_guidance: GlobalGuidance,
    /// Point-to-point destination at the start, for the optimal-time normalizer.
    pub initial_target: Option<Vec2>,
    pub feedback_script: Vec<FeedbackItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub guidance_version: u64,
    pub social_distance: f64,
    pub target: Vec2,
    /// World after the step.
    pub world: TrajectoryRecord,
    pub a_rl: Option<LocalAction>,
    pub a_lm: Option<LmAction>,
    pub weights: Option<FusionWeights>,
    /// Planner output before the norm gate.
    pub proposed: LocalAction,
    /// Executed action.
    pub a_r: LocalAction,
    pub macro_action: Option<MacroAction>,
    /// Smallest pedestrian surface gap when the action was chosen.
    pub min_separation_before: Option<f64>,
    pub min_separation: Option<f64>,
    pub discomfort: usize,
    pub reward: RewardBreakdown,
    pub status: EpisodeStatus,
    #[serde(default)]
    pub lfm_ran: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub got: Option<GotGraph>,
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub status: EpisodeStatus,
    pub steps: u64,
    pub nav_time: f64,
    pub t_opt: f64,
    pub t_timeout: f64,
    pub path_length: f64,
    pub discomfort_steps: u64,
    pub discomfort_fraction: f64,
    pub min_separation: Option<f64>,
    /// Following tasks only: share of steps with the user inside the robot's view cone.
    pub fov_fraction: Option<f64>,
    pub feedback_events: u64,
    pub failures: u64,
    pub llm_calls: u64,
    pub final_guidance_version: u64,
    /// Set when the episode could not run at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeOutcome {
    /// Outcome of an episode that failed before or during setup.
    pub fn crashed(error: impl Into<String>, t_timeout: f64) -> Self {
        Self {
            status: EpisodeStatus::Timeout,
            steps: 0,
            nav_time: 0.0,
            t_opt: 0.0,
            t_timeout,
            path_length: 0.0,
            discomfort_steps: 0,
            discomfort_fraction: 0.0,
            min_separation: None,
            fov_fraction: None,
            feedback_events: 0,
            failures: 1,
            llm_calls: 0,
            final_guidance_version: 0,
            error: Some(error.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(Box<EpisodeHeader>),
    Step(Box<StepRecord>),
    Outcome(Box<EpisodeOutcome>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub steps: Vec<StepRecord>,
    pub outcome: EpisodeOutcome,
}

impl EpisodeLog {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: LogLine| {
            out.push_str(&serde_json::to_string(&line).expect("log line serializes"));
            out.push('\n');
        };
        push(LogLine::Header(Box::new(self.header.clone())));
        for s in &self.steps {
            push(LogLine::Step(Box::new(s.clone())));
        }
        push(LogLine::Outcome(Box::new(self.outcome.clone())));
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_jsonl().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn from_reader(r: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut outcome = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogLine>(&line)
                .map_err(|e| Error::Scenario(format!("log line {}: {e}", i + 1)))?
            {
                LogLine::Header(h) => header = Some(*h),
                LogLine::Step(s) => steps.push(*s),
                LogLine::Outcome(o) => outcome = Some(*o),
            }
        }
        let header = header.ok_or_else(|| Error::Scenario("log has no header".into()))?;
        if header.schema != LOG_SCHEMA {
            return Err(Error::Scenario(format!("unsupported log schema `{}`", header.schema)));
        }
        let outcome = outcome.ok_or_else(|| Error::Scenario("log has no outcome line".into()))?;
        Ok(Self { header, steps, outcome })
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Steps flagged for discomfort at threshold `d`, recomputed from the logged positions.
    pub fn discomfort_steps_at(&self, d: f64) -> usize {
        self.steps
            .iter()
            .filter(|s| {
                let r = &s.world.robot;
                s.world.pedestrians.iter().any(|p| {
                    let center = r.pos.distance(p.pos);
                    let combined = r.radius + p.radius;
                    center >= combined && center - combined < d
                })
            })
            .count()
    }
}
