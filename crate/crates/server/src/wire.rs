//! `salm-wire/1` messages. Every frame is one JSON object with `schema`,
//! `session`, `seq` and a `type` tag; server sequence numbers count up from 1
//! per session with no gaps.

use serde::{Deserialize, Serialize};

use salm_core::episode::{EpisodeOutcome, EpisodeStatus, Event};
use salm_core::guidance::GlobalGuidance;
use salm_core::lfm::{FusionWeights, GotSummary};
use salm_core::sim::trajectory::TrajectoryRecord;
use salm_core::sim::ScenarioFile;
use salm_core::types::{LocalAction, TaskKind};
use salm_core::Vec2;

pub const WIRE_SCHEMA: &str = "salm-wire/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub schema: String,
    pub session: String,
    pub seq: u64,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    StateUpdate(Box<StateUpdate>),
    GuidanceUpdate { step: u64, guidance: GlobalGuidance },
    GotSummary { step: u64, summary: GotSummary },
    EpisodeEnd { outcome: Box<EpisodeOutcome> },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub step: u64,
    pub status: EpisodeStatus,
    pub world: TrajectoryRecord,
    pub a_r: LocalAction,
    pub a_rl: Option<LocalAction>,
    pub a_lm: Option<LocalAction>,
    pub weights: Option<FusionWeights>,
    pub target: Vec2,
    pub guidance_version: u64,
    pub social_distance: f64,
    pub events: Vec<Event>,
}

/// Parameters of `start`; anything missing takes the session's or server's default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartParams {
    #[serde(default)]
    pub scenario: Option<ScenarioFile>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub planner: Option<String>,
    /// `mock`, or `http` when the server was started with an HTTP backend.
    #[serde(default)]
    pub backend: Option<String>,
    #[serde(default)]
    pub pedestrians: Option<usize>,
    /// Initial request in plain words, e.g. "go to (2, 3)".
    #[serde(default)]
    pub request: Option<String>,
    /// Steps per second.
    #[serde(default)]
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Start(StartParams),
    Command { text: String },
    Pause,
    Resume,
    SetRate { rate: f64 },
}

/// Client frame; `session` and `seq` are optional but checked when present.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ClientFrame {
    #[serde(default)]
    pub schema: Option<String>,
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub message: ClientMessage,
}
