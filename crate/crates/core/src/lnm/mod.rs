//! Language navigation model: prompt assembly, memory and action parsing.

pub mod encoder;
pub mod memory;

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guidance::{guidance_to_text, GlobalGuidance};
use crate::llm::{markers, Caller, LlmClient};
use crate::types::{clip_action, LocalAction, WorldState};

pub use encoder::encode_state_to_text;
pub use memory::{update_memory, MemoryBuffer, MemoryPhase, MemoryRecord, DEFAULT_CAPACITY, DEMONSTRATION_RECORDS};

/// Exact reply contract stated in the data-annotation section.
pub const REPLY_CONTRACT: &str = r#"{"vx":number,"vy":number,"why":string?}"#;

const PLACEHOLDERS: [&str; 4] = ["arena_radius", "dt", "robot_radius", "v_pref"];
const TEMPLATE_FILES: [&str; 3] = ["task.txt", "annotation.txt", "additional.txt"];

/// The three static prompt sections, with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub task: String,
    pub annotation: String,
    pub additional: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"))
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            task: include_str!("../../templates/task.txt").to_string(),
            annotation: include_str!("../../templates/annotation.txt").to_string(),
            additional: include_str!("../../templates/additional.txt").to_string(),
        }
    }

    /// Loads `task.txt`, `annotation.txt` and `additional.txt` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut texts = Vec::with_capacity(3);
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| Error::Config(format!("prompt template {}: {e}", path.display())))?;
            texts.push(text);
        }
        let additional = texts.pop().unwrap();
        let annotation = texts.pop().unwrap();
        let task = texts.pop().unwrap();
        let t = Self { task, annotation, additional };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, text) in [("task", &self.task), ("annotation", &self.annotation), ("additional", &self.additional)] {
            if text.trim().is_empty() {
                return Err(Error::Config(format!("prompt template {name} is empty")));
            }
            for c in placeholder_re().captures_iter(text) {
                if !PLACEHOLDERS.contains(&&c[1]) {
                    return Err(Error::Config(format!("prompt template {name}: unknown placeholder {{{}}}", &c[1])));
                }
            }
        }
        Ok(())
    }

    fn render(text: &str, w: &WorldState) -> String {
        placeholder_re()
            .replace_all(text, |c: &regex::Captures| match &c[1] {
                "arena_radius" => format!("{}", w.arena_radius),
                "dt" => format!("{}", w.dt),
                "robot_radius" => format!("{}", w.robot.radius),
                "v_pref" => format!("{}", w.robot.v_pref),
                other => format!("{{{other}}}"),
            })
            .into_owned()
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

/// The five prompt sections plus the encoded state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task: String,
    pub guidance: String,
    pub annotation: String,
    pub history: String,
    pub additional: String,
    pub state_text: String,
}

impl PromptBundle {
    pub fn sections(&self) -> [(&'static str, &str); 6] {
        [
            ("Task description", &self.task),
            ("Global guidance", &self.guidance),
            ("Data annotation", &self.annotation),
            ("Initialization and history", &self.history),
            ("Additional information", &self.additional),
            ("Current state", &self.state_text),
        ]
    }

    /// Full prompt text, sections in fixed order.
    pub fn concat(&self) -> String {
        let mut out = String::new();
        for (title, body) in self.sections() {
            out.push_str("### ");
            out.push_str(title);
            out.push('\n');
            out.push_str(body.trim_end());
            out.push_str("\n\n");
        }
        out
    }
}

pub fn assemble_prompt(g: &GlobalGuidance, memory: &MemoryBuffer, w: &WorldState, templates: &Templates) -> PromptBundle {
    let mut annotation = Templates::render(&templates.annotation, w);
    if !annotation.ends_with('\n') {
        annotation.push('\n');
    }
    annotation.push_str(&format!("{} Reply format: {}\n", markers::LNM_CONTRACT, REPLY_CONTRACT));
    PromptBundle {
        task: Templates::render(&templates.task, w),
        guidance: guidance_to_text(g),
        annotation,
        history: memory.render(),
        additional: Templates::render(&templates.additional, w),
        state_text: encode_state_to_text(w, g),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmAction {
    pub action: LocalAction,
    pub rationale: Option<String>,
    pub parse_ok: bool,
    /// Set when the reply asked for more than `v_pref` and was scaled down.
    #[serde(default)]
    pub clipped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl LmAction {
    pub fn failed(error: impl Into<String>) -> Self {
        Self { action: LocalAction::ZERO, rationale: None, parse_ok: false, clipped: false, error: Some(error.into()) }
    }
}

#[derive(Deserialize)]
struct ReplyJson {
    vx: f64,
    vy: f64,
    #[serde(default)]
    why: Option<String>,
}

/// Pulls the `{vx, vy}` object out of a reply: bare JSON, a fenced block, or the
/// outermost braces inside prose.
pub fn parse_action_reply(reply: &str) -> Option<(LocalAction, Option<String>)> {
    let t = reply.trim();
    let t = t.strip_prefix("```json").or_else(|| t.strip_prefix("```")).unwrap_or(t);
    let t = t.strip_suffix("```").unwrap_or(t).trim();
    let parsed: ReplyJson = serde_json::from_str(t).ok().or_else(|| {
        let start = t.find('{')?;
        let end = t.rfind('}')?;
        (end > start).then(|| serde_json::from_str(&t[start..=end]).ok()).flatten()
    })?;
    let a = LocalAction::new(parsed.vx, parsed.vy);
    a.is_finite().then_some((a, parsed.why))
}

/// Asks the backend for a velocity. Never fails: problems degrade to `(0, 0)` with `parse_ok = false`.
pub fn query_action(p: &PromptBundle, llm: &LlmClient, v_pref: f64) -> LmAction {
    let prompt = p.concat();
    let mut last_err = String::new();
    for _ in 0..2 {
        match llm.call(Caller::Lnm, &prompt) {
            Err(e) => return LmAction::failed(format!("backend: {e}")),
            Ok(reply) => match parse_action_reply(&reply) {
                Some((a, why)) => {
                    let clipped = a.speed() > v_pref + 1e-3;
                    return match clip_action(a, v_pref) {
                        Ok(action) => {
                            // a first unusable reply is kept as the error of an otherwise good action
                            let error = (!last_err.is_empty()).then(|| format!("recovered on retry after {last_err}"));
                            LmAction { action, rationale: why, parse_ok: true, clipped, error }
                        }
                        Err(e) => LmAction::failed(e.to_string()),
                    };
                }
                None => {
                    let excerpt: String = reply.chars().take(80).collect();
                    last_err = format!("unparseable reply: {excerpt:?}");
                }
            },
        }
    }
    LmAction::failed(last_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CompletionParams, LlmError, MockBackend, ScriptedBackend};
    use crate::sim::scenario::spawn_scenario;
    use crate::types::TaskKind;
    use std::sync::Arc;

    fn scripted(replies: Vec<Result<String, LlmError>>) -> LlmClient {
        LlmClient::new(Arc::new(ScriptedBackend::new(replies)), CompletionParams::default())
    }

    fn bundle() -> (PromptBundle, WorldState, GlobalGuidance) {
        let mut w = spawn_scenario(7, 0, TaskKind::P2p).unwrap();
        w.robot.position = crate::Vec2::new(0.0, 0.0);
        let g = GlobalGuidance::point_to_point(crate::Vec2::new(4.0, 0.0));
        let m = MemoryBuffer::with_demonstrations(DEFAULT_CAPACITY, &w, &g);
        (assemble_prompt(&g, &m, &w, &Templates::builtin()), w, g)
    }

    #[test]
    fn sections_are_non_empty_and_ordered() {
        let (p, _, _) = bundle();
        assert!(p.sections().iter().all(|(_, s)| !s.trim().is_empty()));
        let text = p.concat();
        let idx: Vec<usize> = p.sections().iter().map(|(t, _)| text.find(t).unwrap()).collect();
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(p.annotation.contains(REPLY_CONTRACT));
        assert!(!text.contains("{v_pref}"));
    }

    #[test]
    fn assembly_is_deterministic() {
        assert_eq!(bundle().0, bundle().0);
        assert_eq!(bundle().0.concat(), bundle().0.concat());
    }

    #[test]
    fn fresh_memory_shows_demonstrations() {
        let (p, _, _) = bundle();
        assert_eq!(p.history.matches("[demo]").count(), DEMONSTRATION_RECORDS);
    }

    #[test]
    fn full_memory_shows_only_history() {
        let (_, w, g) = bundle();
        let mut m = MemoryBuffer::with_demonstrations(DEFAULT_CAPACITY, &w, &g);
        for s in 0..(DEFAULT_CAPACITY as u64 + 1) {
            m.update(MemoryRecord {
                step: Some(s),
                state_text: MemoryRecord::summary(&w, &g),
                action: LocalAction::new(1.0, 0.0),
                weights: None,
                reward: Some(0.1),
            });
        }
        let p = assemble_prompt(&g, &m, &w, &Templates::builtin());
        assert!(!p.history.contains("[demo]"));
        assert!(p.history.contains("[step 8]"));
        assert!(!p.history.contains("[step 0]"));
    }

    #[test]
    fn mock_points_along_plus_x() {
        let (p, _, _) = bundle();
        let llm = LlmClient::new(Arc::new(MockBackend::builtin()), CompletionParams::default());
        let a = query_action(&p, &llm, 1.0);
        assert!(a.parse_ok);
        assert!((a.action.vx - 1.0).abs() < 1e-9 && a.action.vy.abs() < 1e-9, "{a:?}");
    }

    #[test]
    fn prose_reply_falls_back_after_one_retry() {
        let (p, _, _) = bundle();
        let llm = scripted(vec![Ok("I would go right.".into())]);
        let a = query_action(&p, &llm, 1.0);
        assert!(!a.parse_ok);
        assert_eq!(a.action, LocalAction::ZERO);
        assert_eq!(llm.call_count(), 2);
    }

    #[test]
    fn retry_can_recover() {
        let (p, _, _) = bundle();
        let llm = scripted(vec![Ok("hmm".into()), Ok(r#"{"vx":0.1,"vy":0.2,"why":"slow"}"#.into())]);
        let a = query_action(&p, &llm, 1.0);
        assert!(a.parse_ok);
        assert_eq!(a.rationale.as_deref(), Some("slow"));
        assert!(a.error.unwrap().starts_with("recovered on retry"));
    }

    #[test]
    fn oversized_reply_is_clipped() {
        let (p, _, _) = bundle();
        let a = query_action(&p, &scripted(vec![Ok(r#"{"vx":3,"vy":4}"#.into())]), 1.0);
        assert!(a.parse_ok && a.clipped);
        assert!((a.action.vx - 0.6).abs() < 1e-12 && (a.action.vy - 0.8).abs() < 1e-12);
    }

    #[test]
    fn backend_error_is_contained() {
        let (p, _, _) = bundle();
        let a = query_action(&p, &scripted(vec![Err(LlmError::Timeout { after_ms: 10 })]), 1.0);
        assert!(!a.parse_ok);
        assert!(a.error.unwrap().contains("backend"));
    }

    #[test]
    fn reply_extraction_variants() {
        assert!(parse_action_reply("```json\n{\"vx\":1,\"vy\":0}\n```").is_some());
        assert!(parse_action_reply("Sure: {\"vx\":1,\"vy\":0} done").is_some());
        assert!(parse_action_reply("{\"vx\":1}").is_none());
        assert!(parse_action_reply("UNRECOGNIZED").is_none());
    }

    #[test]
    fn template_errors_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Templates::load_dir(dir.path()), Err(Error::Config(_))));
        for f in TEMPLATE_FILES {
            std::fs::write(dir.path().join(f), "speed {v_pref}").unwrap();
        }
        assert!(Templates::load_dir(dir.path()).is_ok());
        std::fs::write(dir.path().join("task.txt"), "{bogus}").unwrap();
        assert!(matches!(Templates::load_dir(dir.path()), Err(Error::Config(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn any_numeric_reply_respects_v_pref(vx in -1e6f64..1e6, vy in -1e6f64..1e6, v_pref in 0.1f64..3.0) {
                let (p, _, _) = bundle();
                let reply = serde_json::json!({"vx": vx, "vy": vy}).to_string();
                let a = query_action(&p, &scripted(vec![Ok(reply)]), v_pref);
                prop_assert!(a.action.speed() <= v_pref + 1e-9);
            }
        }
    }
}
