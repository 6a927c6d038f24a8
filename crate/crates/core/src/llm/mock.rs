//! Deterministic rule-table backend.
//!
//! A rule fires when its marker occurs in the prompt; the first firing rule
//! computes the reply from numbers it extracts from the prompt.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::markers;
use super::{Completion, CompletionParams, LlmBackend, LlmError};

pub const UNRECOGNIZED: &str = "UNRECOGNIZED";
pub const MOCK_RULES_VERSION: &str = "salm-mock-rules/1";

const BUILTIN_RULES: &str = include_str!("mock_rules.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub version: String,
    pub fallback_reply: String,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    pub marker: String,
    #[serde(flatten)]
    pub handler: Handler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "handler", rename_all = "snake_case")]
pub enum Handler {
    /// Unit vector from the robot to its target, scaled by the preferred speed.
    GoalDirection { arrival_radius: f64 },
    /// Scores one candidate action from its next-step clearance.
    CollisionLookahead {
        collision_score: f64,
        tight_score: f64,
        clear_score: f64,
        on_target_score: f64,
        on_target_alignment: f64,
    },
    /// Echoes the individual scores back as the final pair.
    RelativeScores,
    /// Small command grammar producing guidance JSON.
    GuidanceGrammar(GrammarConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarConfig {
    pub default_social_distance: f64,
    pub default_stop_distance: f64,
    pub too_close_distance: f64,
    pub handover_phrases: Vec<String>,
    pub follow_phrases: Vec<String>,
    pub too_close_phrases: Vec<String>,
    pub pedestrian_first_phrases: Vec<String>,
    pub robot_first_phrases: Vec<String>,
}

impl RuleTable {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_RULES).expect("builtin mock rules parse")
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("reading rule table {}: {e}", path.display())))?;
        let table: RuleTable =
            serde_json::from_str(&text).map_err(|e| LlmError::Config(format!("parsing rule table: {e}")))?;
        if table.version != MOCK_RULES_VERSION {
            return Err(LlmError::Config(format!("unsupported rule table version `{}`", table.version)));
        }
        Ok(table)
    }

    pub fn reply(&self, prompt: &str) -> String {
        self.rules
            .iter()
            .find(|r| prompt.contains(&r.marker))
            .and_then(|r| r.handler.apply(prompt))
            .unwrap_or_else(|| self.fallback_reply.clone())
    }
}

fn num() -> &'static str {
    r"(-?\d+(?:\.\d+)?)"
}

fn re(cell: &'static OnceLock<Regex>, pattern: impl FnOnce() -> String) -> &'static Regex {
    cell.get_or_init(|| Regex::new(&pattern()).expect("valid regex"))
}

fn robot_line(prompt: &str) -> Option<(f64, f64, f64)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let n = num();
    let re = re(&RE, || format!(r"Robot: position \({n}, {n}\)[^\n]*preferred speed {n}"));
    let c = re.captures_iter(prompt).last()?;
    Some((c[1].parse().ok()?, c[2].parse().ok()?, c[3].parse().ok()?))
}

fn target_line(prompt: &str) -> Option<(f64, f64)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let n = num();
    let re = re(&RE, || format!(r"Target: \({n}, {n}\)"));
    let c = re.captures_iter(prompt).last()?;
    Some((c[1].parse().ok()?, c[2].parse().ok()?))
}

fn labeled(block: &str, label: &str) -> Option<f64> {
    let pat = format!(r"{}: {}", regex::escape(label), num());
    let c = Regex::new(&pat).ok()?.captures(block)?;
    c[1].parse().ok()
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

impl Handler {
    fn apply(&self, prompt: &str) -> Option<String> {
        match self {
            Handler::GoalDirection { arrival_radius } => {
                let (rx, ry, v_pref) = robot_line(prompt)?;
                let (tx, ty) = target_line(prompt)?;
                let (dx, dy) = (tx - rx, ty - ry);
                let dist = dx.hypot(dy);
                let (vx, vy) =
                    if dist <= *arrival_radius { (0.0, 0.0) } else { (dx / dist * v_pref, dy / dist * v_pref) };
                Some(json!({ "vx": round3(vx), "vy": round3(vy) }).to_string())
            }
            Handler::CollisionLookahead { collision_score, tight_score, clear_score, on_target_score, on_target_alignment } => {
                let block = markers::last_block(prompt, markers::CANDIDATE_OPEN)?;
                let combined = labeled(block, "combined radius")?;
                let d = labeled(block, "social distance")?;
                let alignment = labeled(block, "target alignment").unwrap_or(0.0);
                let score = match labeled(block, "next-step min center distance") {
                    Some(c) if c < combined => *collision_score,
                    Some(c) if c - combined < d => *tight_score,
                    _ if alignment >= *on_target_alignment => *on_target_score,
                    _ => *clear_score,
                };
                Some(format!("{score:.2}"))
            }
            Handler::RelativeScores => {
                let block = markers::last_block(prompt, markers::SCORES_OPEN)?;
                let s1 = labeled(block, "s1")?;
                let s2 = labeled(block, "s2")?;
                Some(json!({ "s1": s1, "s2": s2 }).to_string())
            }
            Handler::GuidanceGrammar(g) => g.apply(prompt),
        }
    }
}

impl GrammarConfig {
    fn apply(&self, prompt: &str) -> Option<String> {
        let utterance = markers::last_block(prompt, markers::UTTERANCE_OPEN)?.trim().to_lowercase();
        let current: Option<serde_json::Value> =
            markers::last_block(prompt, markers::CURRENT_OPEN).and_then(|c| serde_json::from_str(c.trim()).ok());

        let mut task = current.as_ref().and_then(|c| c["task"].as_str().map(str::to_string));
        let mut target = current.as_ref().map(|c| c["target"].clone()).unwrap_or(serde_json::Value::Null);
        let cur_d = current.as_ref().and_then(|c| c["social_distance"].as_f64());
        let mut d = cur_d.unwrap_or(self.default_social_distance);
        let mut norm = current
            .as_ref()
            .and_then(|c| c["norm"].as_str().map(str::to_string))
            .unwrap_or_else(|| "robot_first".into());
        let mut stop = current.as_ref().and_then(|c| c["stop_distance"].as_f64()).unwrap_or(self.default_stop_distance);
        let mut matched = false;
        let has = |phrases: &[String]| phrases.iter().any(|p| utterance.contains(p.as_str()));

        static COORD: OnceLock<Regex> = OnceLock::new();
        let n = num();
        let coord = re(&COORD, || format!(r"\(\s*{n}\s*,\s*{n}\s*\)"));
        if let Some(c) = coord.captures(&utterance) {
            let x: f64 = c[1].parse().ok()?;
            let y: f64 = c[2].parse().ok()?;
            task = Some("p2p".into());
            target = json!([x, y]);
            matched = true;
        } else if has(&self.follow_phrases) {
            task = Some("hf".into());
            target = serde_json::Value::Null;
            matched = true;
        }

        static STOP: OnceLock<Regex> = OnceLock::new();
        let stop_re = re(&STOP, || format!(r"stop(?:ping)? distance (?:of |to )?{n}"));
        let without_stop = if let Some(c) = stop_re.captures(&utterance) {
            stop = c[1].parse().ok()?;
            matched = true;
            stop_re.replace_all(&utterance, "").into_owned()
        } else {
            utterance.clone()
        };

        static DIST: OnceLock<Regex> = OnceLock::new();
        let dist_re = re(&DIST, || format!(r"{n}\s*(?:m\b|meters?\b|metres?\b)"));
        if has(&self.handover_phrases) {
            d = 0.0;
            matched = true;
        } else if let Some(c) = dist_re.captures(&without_stop) {
            d = c[1].parse().ok()?;
            matched = true;
        } else if has(&self.too_close_phrases) {
            d = self.too_close_distance.max(cur_d.unwrap_or(self.default_social_distance) + 0.5);
            matched = true;
        }

        if has(&self.pedestrian_first_phrases) {
            norm = "pedestrian_first".into();
            matched = true;
        } else if has(&self.robot_first_phrases) {
            norm = "robot_first".into();
            matched = true;
        }

        let task = task?;
        if !matched {
            return None;
        }
        Some(
            json!({
                "task": task,
                "target": target,
                "social_distance": d,
                "norm": norm,
                "stop_distance": stop,
            })
            .to_string(),
        )
    }
}

/// Backend answering from a [`RuleTable`]. Same table and prompt always give the same reply.
#[derive(Debug, Clone)]
pub struct MockBackend {
    rules: RuleTable,
}

impl MockBackend {
    pub fn new(rules: RuleTable) -> Self {
        Self { rules }
    }

    pub fn builtin() -> Self {
        Self::new(RuleTable::builtin())
    }
}

impl LlmBackend for MockBackend {
    fn identity(&self) -> String {
        format!("mock:{}", self.rules.version)
    }

    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<Completion, LlmError> {
        Ok(Completion { text: self.rules.reply(prompt), retries: 0, latency_ms: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reply(prompt: &str) -> String {
        RuleTable::builtin().reply(prompt)
    }

    fn guidance_prompt(utterance: &str, current: Option<&str>) -> String {
        let mut p = format!("{}\n{}{}{}\n", markers::GUIDANCE, markers::UTTERANCE_OPEN, utterance, markers::CLOSE);
        if let Some(c) = current {
            p.push_str(&format!("{}{}{}\n", markers::CURRENT_OPEN, c, markers::CLOSE));
        }
        p
    }

    #[test]
    fn unknown_prompt_gets_fallback() {
        assert_eq!(reply("hello there"), UNRECOGNIZED);
    }

    #[test]
    fn lnm_rule_points_at_target() {
        let p = format!(
            "{}\nRobot: position (0.0, 0.0), velocity (0.0, 0.0), radius 0.3, preferred speed 1.0\nTarget: (5.0, 0.0), social distance 0.4\n",
            markers::LNM_CONTRACT
        );
        assert_eq!(reply(&p), r#"{"vx":1.0,"vy":0.0}"#);
    }

    #[test]
    fn lnm_rule_uses_last_state() {
        let p = format!(
            "{}\nRobot: position (9.0, 9.0), velocity (0.0, 0.0), radius 0.3, preferred speed 1.0\nTarget: (0.0, 0.0), social distance 0.4\nRobot: position (0.0, 0.0), velocity (0.0, 0.0), radius 0.3, preferred speed 0.5\nTarget: (0.0, -2.0), social distance 0.4\n",
            markers::LNM_CONTRACT
        );
        assert_eq!(reply(&p), r#"{"vx":0.0,"vy":-0.5}"#);
    }

    fn score_prompt(evidence: &str) -> String {
        format!("{}\n{}{}{}", markers::LFM_SCORE, markers::CANDIDATE_OPEN, evidence, markers::CLOSE)
    }

    #[test]
    fn lookahead_scores() {
        let collide = score_prompt("next-step min center distance: 0.50 m\ncombined radius: 0.60 m\nsocial distance: 0.40 m\ntarget alignment: 1.000");
        assert_eq!(reply(&collide), "0.00");
        let tight = score_prompt("next-step min center distance: 0.80 m\ncombined radius: 0.60 m\nsocial distance: 0.40 m\ntarget alignment: 1.000");
        assert_eq!(reply(&tight), "0.40");
        let clear = score_prompt("next-step min center distance: 3.00 m\ncombined radius: 0.60 m\nsocial distance: 0.40 m\ntarget alignment: 0.500");
        assert_eq!(reply(&clear), "0.90");
        let on_target = score_prompt("next-step min center distance: none\ncombined radius: 0.60 m\nsocial distance: 0.40 m\ntarget alignment: 1.000");
        assert_eq!(reply(&on_target), "1.00");
    }

    #[test]
    fn final_scores_echo() {
        let p = format!("{}\n{}s1: 0.8\ns2: 0.2{}", markers::LFM_FINAL, markers::SCORES_OPEN, markers::CLOSE);
        assert_eq!(reply(&p), r#"{"s1":0.8,"s2":0.2}"#);
    }

    #[test]
    fn grammar_examples() {
        let v: serde_json::Value =
            serde_json::from_str(&reply(&guidance_prompt("go to (4, -2) and keep 1.5 meters from people", None))).unwrap();
        assert_eq!(v["task"], "p2p");
        assert_eq!(v["target"], json!([4.0, -2.0]));
        assert_eq!(v["social_distance"], 1.5);

        let v: serde_json::Value = serde_json::from_str(&reply(&guidance_prompt("Follow me", None))).unwrap();
        assert_eq!(v["task"], "hf");
        assert_eq!(v["social_distance"], 0.4);

        let v: serde_json::Value = serde_json::from_str(&reply(&guidance_prompt("Pick up my bag to me", None))).unwrap();
        assert_eq!(v["task"], "hf");

        assert_eq!(reply(&guidance_prompt("blorp zzz", None)), UNRECOGNIZED);
    }

    #[test]
    fn grammar_replans_from_current() {
        let cur = r#"{"task":"p2p","target":[1.0,1.0],"social_distance":0.4,"norm":"robot_first","stop_distance":1.0}"#;
        let v: serde_json::Value =
            serde_json::from_str(&reply(&guidance_prompt("you're too close to people", Some(cur)))).unwrap();
        assert_eq!(v["social_distance"], 1.5);
        assert_eq!(v["target"], json!([1.0, 1.0]));
        let v: serde_json::Value =
            serde_json::from_str(&reply(&guidance_prompt("come right up to me to take the package", Some(cur)))).unwrap();
        assert_eq!(v["social_distance"], 0.0);
        let v: serde_json::Value =
            serde_json::from_str(&reply(&guidance_prompt("pedestrian first please, stop distance 2", Some(cur)))).unwrap();
        assert_eq!(v["norm"], "pedestrian_first");
        assert_eq!(v["stop_distance"], 2.0);
        assert_eq!(v["social_distance"], 0.4);
        assert_eq!(reply(&guidance_prompt("asdf", Some(cur))), UNRECOGNIZED);
    }

    #[test]
    fn rule_table_loads_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rules.json");
        std::fs::write(&p, BUILTIN_RULES).unwrap();
        assert_eq!(RuleTable::load(&p).unwrap(), RuleTable::builtin());
        std::fs::write(&p, BUILTIN_RULES.replace(MOCK_RULES_VERSION, "v0")).unwrap();
        assert!(RuleTable::load(&p).is_err());
    }
}
