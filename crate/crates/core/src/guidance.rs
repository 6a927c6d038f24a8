//! User requests and feedback turned into global guidance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{markers, Caller, LlmClient};
use crate::types::TaskKind;
use crate::Vec2;

pub const DEFAULT_SOCIAL_DISTANCE: f64 = 0.4;
pub const DEFAULT_STOP_DISTANCE: f64 = 1.0;
pub const MAX_SOCIAL_DISTANCE: f64 = 5.0;
/// Minimum distance kept behind the user when following.
pub const MIN_FOLLOW_OFFSET: f64 = 0.5;
const PARSE_RETRIES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    PedestrianFirst,
    RobotFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    InitialRequest,
    Feedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserUtterance {
    pub text: String,
    pub step: u64,
    pub channel: Channel,
}

impl UserUtterance {
    pub fn request(text: impl Into<String>) -> Self {
        Self { text: text.into(), step: 0, channel: Channel::InitialRequest }
    }

    pub fn feedback(text: impl Into<String>, step: u64) -> Self {
        Self { text: text.into(), step, channel: Channel::Feedback }
    }
}

/// Task objective, user preferences and social norm steering every planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalGuidance {
    pub task: TaskKind,
    /// Destination for point-to-point tasks; unused when following.
    pub target: Option<Vec2>,
    pub social_distance: f64,
    pub norm: Norm,
    pub stop_distance: f64,
    pub version: u64,
    pub raw_text: String,
}

impl GlobalGuidance {
    pub fn point_to_point(target: Vec2) -> Self {
        Self {
            task: TaskKind::P2p,
            target: Some(target),
            social_distance: DEFAULT_SOCIAL_DISTANCE,
            norm: Norm::RobotFirst,
            stop_distance: DEFAULT_STOP_DISTANCE,
            version: 1,
            raw_text: String::new(),
        }
    }

    pub fn human_following() -> Self {
        Self { task: TaskKind::Hf, target: None, ..Self::point_to_point(Vec2::zero()) }
    }

    pub fn with_social_distance(mut self, d: f64) -> Self {
        self.social_distance = d;
        self
    }

    pub fn with_norm(mut self, norm: Norm) -> Self {
        self.norm = norm;
        self
    }

    /// Distance kept behind the user in human-following.
    pub fn follow_offset(&self) -> f64 {
        self.social_distance.max(MIN_FOLLOW_OFFSET)
    }

    pub fn to_wire(&self) -> GuidanceJson {
        GuidanceJson {
            task: Some(self.task),
            target: self.target.map(Into::into),
            social_distance: Some(self.social_distance),
            norm: Some(self.norm),
            stop_distance: Some(self.stop_distance),
        }
    }
}

/// Wire form the language model must answer with. Absent fields keep their current value on replans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceJson {
    #[serde(default)]
    pub task: Option<TaskKind>,
    #[serde(default)]
    pub target: Option<[f64; 2]>,
    #[serde(default)]
    pub social_distance: Option<f64>,
    #[serde(default)]
    pub norm: Option<Norm>,
    #[serde(default)]
    pub stop_distance: Option<f64>,
}

/// A validated guidance plus any corrections made while accepting it.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub guidance: GlobalGuidance,
    pub warnings: Vec<String>,
}

/// Strict JSON object, optionally inside a code fence. Prose is rejected.
fn strict_json(reply: &str) -> Option<&str> {
    let mut t = reply.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.strip_prefix("json").unwrap_or(rest);
        t = rest.strip_suffix("```")?.trim();
    }
    (t.starts_with('{') && t.ends_with('}')).then_some(t)
}

fn accept(wire: GuidanceJson, base: Option<&GlobalGuidance>, raw_text: &str) -> std::result::Result<Parsed, String> {
    let mut warnings = Vec::new();
    let task = wire.task.or(base.map(|b| b.task)).ok_or("missing task")?;
    let target = match task {
        TaskKind::Hf => None,
        TaskKind::P2p => {
            let t = match wire.target {
                Some([x, y]) => Vec2::new(x, y),
                None => base.and_then(|b| b.target).ok_or("point-to-point task without a target")?,
            };
            if !t.is_finite() {
                return Err("non-finite target".into());
            }
            Some(t)
        }
    };
    let mut d = wire.social_distance.or(base.map(|b| b.social_distance)).unwrap_or(DEFAULT_SOCIAL_DISTANCE);
    if !d.is_finite() {
        return Err("non-finite social distance".into());
    }
    if !(0.0..=MAX_SOCIAL_DISTANCE).contains(&d) {
        let clamped = d.clamp(0.0, MAX_SOCIAL_DISTANCE);
        let msg = format!("social distance {d} out of range, clamped to {clamped}");
        tracing::warn!("{msg}");
        warnings.push(msg);
        d = clamped;
    }
    let stop = wire.stop_distance.or(base.map(|b| b.stop_distance)).unwrap_or(DEFAULT_STOP_DISTANCE);
    if !stop.is_finite() || stop < 0.0 {
        return Err(format!("invalid stop distance {stop}"));
    }
    let guidance = GlobalGuidance {
        task,
        target,
        social_distance: d,
        norm: wire.norm.or(base.map(|b| b.norm)).unwrap_or(Norm::RobotFirst),
        stop_distance: stop,
        version: base.map_or(1, |b| b.version + 1),
        raw_text: raw_text.to_string(),
    };
    Ok(Parsed { guidance, warnings })
}

fn parse_reply(reply: &str, base: Option<&GlobalGuidance>, raw: &str) -> std::result::Result<Parsed, String> {
    let body = strict_json(reply).ok_or_else(|| format!("reply is not a JSON object: {:.60}", reply))?;
    let wire: GuidanceJson = serde_json::from_str(body).map_err(|e| e.to_string())?;
    accept(wire, base, raw)
}

const GUIDANCE_INSTRUCTIONS: &str = "You convert a user's words to a service robot into navigation guidance.
Tasks: \"p2p\" (drive to a target point [x, y] in meters) or \"hf\" (follow the user).
social_distance is the minimum comfortable gap to pedestrians in meters (0 to 5; default 0.4).
norm is \"pedestrian_first\" (full stop when a pedestrian is within stop_distance) or \"robot_first\".
Answer with one JSON object and nothing else:
{\"task\":\"p2p\"|\"hf\",\"target\":[x,y]|null,\"social_distance\":number,\"norm\":\"pedestrian_first\"|\"robot_first\",\"stop_distance\":number}";

fn request_prompt(u: &UserUtterance, current: Option<&GlobalGuidance>) -> String {
    let mut p = format!("{}\n{}\n", markers::GUIDANCE, GUIDANCE_INSTRUCTIONS);
    if let Some(c) = current {
        p.push_str("Update the current guidance with the user's feedback; keep fields the user did not mention.\n");
        p.push_str(&format!(
            "Current guidance: {}{}{}\n",
            markers::CURRENT_OPEN,
            serde_json::to_string(&c.to_wire()).expect("guidance serializes"),
            markers::CLOSE
        ));
    }
    p.push_str(&format!("User: {}{}{}\n", markers::UTTERANCE_OPEN, u.text.trim(), markers::CLOSE));
    p
}

fn run(u: &UserUtterance, current: Option<&GlobalGuidance>, llm: &LlmClient) -> Result<Parsed> {
    if u.text.trim().is_empty() {
        return Err(Error::GuidanceParse("empty utterance".into()));
    }
    let prompt = request_prompt(u, current);
    let mut failed = Vec::new();
    for _ in 0..=PARSE_RETRIES {
        match llm.call(Caller::Guidance, &prompt) {
            Ok(reply) => match parse_reply(&reply, current, &u.text) {
                Ok(mut p) => {
                    // a recovered attempt is still a degradation worth surfacing
                    let retried = failed.iter().map(|e| format!("retried after: {e}"));
                    p.warnings.splice(0..0, retried);
                    return Ok(p);
                }
                Err(e) => failed.push(e),
            },
            Err(e) => failed.push(e.to_string()),
        }
    }
    Err(Error::GuidanceParse(format!("`{}`: {}", u.text, failed.last().map(String::as_str).unwrap_or_default())))
}

/// Parses an initial request into guidance with version 1.
pub fn parse_request(u: &UserUtterance, llm: &LlmClient) -> Result<Parsed> {
    run(u, None, llm)
}

/// Applies feedback to `current`; the result carries `current.version + 1`.
pub fn replan_guidance(current: &GlobalGuidance, u: &UserUtterance, llm: &LlmClient) -> Result<Parsed> {
    run(u, Some(current), llm)
}

/// Canonical text block for the prompts' guidance section. The version is not rendered.
pub fn guidance_to_text(g: &GlobalGuidance) -> String {
    let task = match (g.task, g.target) {
        (TaskKind::P2p, Some(t)) => format!("Task: point-to-point navigation to target ({:.2}, {:.2}).", t.x, t.y),
        (TaskKind::P2p, None) => "Task: point-to-point navigation (target pending).".to_string(),
        (TaskKind::Hf, _) => format!(
            "Task: human following. Stay behind the user at about {:.2} m with the user in view.",
            g.follow_offset()
        ),
    };
    let norm = match g.norm {
        Norm::PedestrianFirst => format!(
            "Social norm: pedestrian-first. Come to a full stop whenever a pedestrian is within {:.2} m.",
            g.stop_distance
        ),
        Norm::RobotFirst => "Social norm: robot-first. Keep moving while avoiding pedestrians.".to_string(),
    };
    format!(
        "{task}\nUser preference: keep at least {:.2} m of free space between the robot and pedestrians.\n{norm}\n",
        g.social_distance
    )
}
