//! Feedback model: scores both candidate actions through a thought graph and blends them.

pub mod got;

use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::episode::current_target;
use crate::guidance::GlobalGuidance;
use crate::llm::{markers, Caller, LlmClient};
use crate::lnm::{LmAction, MemoryBuffer, PromptBundle};
use crate::types::{clip_action, defaults, LocalAction, WorldState};

pub use got::{GotGraph, Thought, ThoughtId, ThoughtRole};

/// Relative weights of the RL action (`s1`) and the language-model action (`s2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub s1: f64,
    pub s2: f64,
}

impl FusionWeights {
    pub const RL_ONLY: FusionWeights = FusionWeights { s1: 1.0, s2: 0.0 };
    pub const LM_ONLY: FusionWeights = FusionWeights { s1: 0.0, s2: 1.0 };
    pub const EVEN: FusionWeights = FusionWeights { s1: 0.5, s2: 0.5 };

    /// Clamps both scores to `[0, 1]` and rescales them to sum to one; `(0.5, 0.5)` when both are zero.
    pub fn normalized(s1: f64, s2: f64) -> Self {
        let c = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        let (a, b) = (c(s1), c(s2));
        let sum = a + b;
        if sum <= 0.0 {
            return Self::EVEN;
        }
        let s1 = a / sum;
        Self { s1, s2: 1.0 - s1 }
    }
}

/// Weighted blend of the two actions, clipped to `v_pref`.
pub fn fuse(a_rl: LocalAction, a_lm: LocalAction, w: FusionWeights, v_pref: f64) -> LocalAction {
    let blended = if w.s2 == 0.0 {
        a_rl.as_vec() * w.s1
    } else if w.s1 == 0.0 {
        a_lm.as_vec() * w.s2
    } else {
        a_rl.as_vec() * w.s1 + a_lm.as_vec() * w.s2
    };
    // (1, 0) must reproduce the RL action bit for bit
    let blended = if w == FusionWeights::RL_ONLY { a_rl.as_vec() } else { blended };
    clip_action(LocalAction::from_vec(blended), v_pref).unwrap_or(LocalAction::ZERO)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreParsing {
    /// First standalone number in `[0, 1]` anywhere in the reply.
    #[default]
    FirstNumber,
    /// The reply must be `{"score": x}`.
    StrictJson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LfmConfig {
    pub score_parsing: ScoreParsing,
    /// Run the evaluator every k steps and hold the weights in between.
    pub every_k_steps: u64,
}

impl Default for LfmConfig {
    fn default() -> Self {
        Self { score_parsing: ScoreParsing::FirstNumber, every_k_steps: 1 }
    }
}

pub const NEUTRAL_SCORE: f64 = 0.5;

pub fn parse_score(reply: &str, mode: ScoreParsing) -> Option<f64> {
    match mode {
        ScoreParsing::StrictJson => {
            let v: serde_json::Value = serde_json::from_str(reply.trim()).ok()?;
            v.get("score")?.as_f64().filter(|x| (0.0..=1.0).contains(x))
        }
        ScoreParsing::FirstNumber => {
            static RE: OnceLock<Regex> = OnceLock::new();
            let re = RE.get_or_init(|| Regex::new(r"(?:^|[^\w.\-])(-?\d+(?:\.\d+)?)").expect("valid regex"));
            re.captures_iter(reply)
                .filter_map(|c| c[1].parse::<f64>().ok())
                .find(|x| (0.0..=1.0).contains(x))
        }
    }
}

fn parse_final(reply: &str) -> Option<(f64, f64)> {
    let t = reply.trim();
    let body = match (t.find('{'), t.rfind('}')) {
        (Some(a), Some(b)) if b > a => &t[a..=b],
        _ => return None,
    };
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    let s1 = v.get("s1")?.as_f64()?;
    let s2 = v.get("s2")?.as_f64()?;
    let ok = |x: f64| (0.0..=1.0).contains(&x);
    (ok(s1) && ok(s2)).then_some((s1, s2))
}

/// Outcome of scoring one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexScore {
    pub score: f64,
    /// Set when the neutral prior was used instead of a parsed reply.
    pub flag: Option<String>,
    /// Set when the first reply was unusable and the retry parsed.
    pub retried: Option<String>,
}

/// Prompts the backend with `v` and the contents of `subgraph`, stores the parsed score on `v`.
/// Unparseable twice, or a backend error, gives the neutral score and a flag.
pub fn score_vertex(
    g: &mut GotGraph,
    v: ThoughtId,
    subgraph: &[ThoughtId],
    context: &str,
    llm: &LlmClient,
    mode: ScoreParsing,
) -> crate::Result<VertexScore> {
    let t = g.get(v).ok_or_else(|| crate::Error::Graph(format!("vertex {v} not in graph")))?;
    let mut evidence = String::new();
    for &s in subgraph {
        let st = g.get(s).ok_or_else(|| crate::Error::Graph(format!("vertex {s} not in graph")))?;
        writeln!(evidence, "{}", st.content.trim_end()).unwrap();
    }
    let reply_rule = match mode {
        ScoreParsing::FirstNumber => "Reply with a single number between 0 and 1.",
        ScoreParsing::StrictJson => r#"Reply with {"score": number} and nothing else, number between 0 and 1."#,
    };
    let prompt = format!(
        "{}\nRate how safe and goal-directed the candidate robot velocity is, from 0 (collision or wrong way) to 1 (clear and on target). {reply_rule}\n{context}\n{}\n{}\n{}{}\n",
        markers::LFM_SCORE,
        markers::CANDIDATE_OPEN,
        t.content.trim_end(),
        evidence,
        markers::CLOSE
    );
    let mut flag = None;
    let mut retried = None;
    let mut score = None;
    for attempt in 0..2 {
        match llm.call(Caller::Lfm, &prompt) {
            Err(e) => {
                flag = Some(format!("score backend error: {e}"));
                break;
            }
            Ok(reply) => match parse_score(&reply, mode) {
                Some(s) => {
                    score = Some(s);
                    break;
                }
                None if attempt == 1 => flag = Some(format!("unparseable score {:?}", excerpt(&reply))),
                None => retried = Some(format!("retried after unparseable score {:?}", excerpt(&reply))),
            },
        }
    }
    if score.is_none() {
        retried = None;
    }
    let vs = VertexScore { score: score.unwrap_or(NEUTRAL_SCORE), flag, retried };
    let t = g.get_mut(v).expect("checked above");
    t.score = Some(vs.score);
    t.flags.extend(vs.flag.iter().chain(&vs.retried).cloned());
    Ok(vs)
}

fn excerpt(s: &str) -> String {
    s.chars().take(60).collect()
}

/// One-step constant-velocity lookahead of a candidate action.
pub fn candidate_evidence(label: &str, a: LocalAction, w: &WorldState, g: &GlobalGuidance) -> String {
    let target = current_target(g, w);
    let p = w.robot.position;
    let next = p + a.as_vec() * w.dt;
    let mut s = String::new();
    writeln!(s, "candidate: {label}").unwrap();
    writeln!(s, "proposed velocity: ({:.3}, {:.3}) m/s", a.vx, a.vy).unwrap();
    writeln!(s, "distance to target now: {:.2} m", p.distance(target)).unwrap();
    writeln!(s, "distance to target after one step: {:.2} m", next.distance(target)).unwrap();
    let nearest = w
        .pedestrians
        .iter()
        .map(|q| {
            let qn = q.position + q.velocity * w.dt;
            let center = next.distance(qn);
            let combined = w.robot.radius + q.radius;
            (center - combined, center, combined)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    match nearest {
        Some((_, center, combined)) => {
            writeln!(s, "next-step min center distance: {center:.2} m").unwrap();
            writeln!(s, "combined radius: {combined:.2} m").unwrap();
        }
        None => {
            writeln!(s, "next-step min center distance: none").unwrap();
            writeln!(s, "combined radius: {:.2} m", w.robot.radius + defaults::PEDESTRIAN_RADIUS).unwrap();
        }
    }
    writeln!(s, "social distance: {:.2} m", g.social_distance).unwrap();
    let to_target = target - p;
    let alignment = if to_target.length() <= 0.05 {
        1.0
    } else if a.speed() < 1e-9 {
        0.0
    } else {
        a.as_vec().dot(to_target) / (a.speed() * to_target.length())
    };
    write!(s, "target alignment: {alignment:.3}").unwrap();
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LfmOutcome {
    pub weights: FusionWeights,
    pub graph: GotGraph,
    /// Degradations that happened on the way (neutral scores, skipped calls, fallbacks).
    pub flags: Vec<String>,
}

impl LfmOutcome {
    pub fn summary(&self) -> GotSummary {
        GotSummary { s1: self.weights.s1, s2: self.weights.s2, vertices: self.graph.vertices.len(), flags: self.flags.len() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GotSummary {
    pub s1: f64,
    pub s2: f64,
    pub vertices: usize,
    pub flags: usize,
}

/// Inputs of one evaluation.
pub struct EvalInput<'a> {
    pub a_rl: LocalAction,
    pub a_lm: &'a LmAction,
    pub memory: &'a MemoryBuffer,
    pub prompt: &'a PromptBundle,
    pub world: &'a WorldState,
    pub guidance: &'a GlobalGuidance,
}

fn action_text(a: LocalAction) -> String {
    format!("({:.3}, {:.3})", a.vx, a.vy)
}

/// Builds the four-layer graph and returns normalized weights.
///
/// L1 verifies the RL action, the LM action and the pair, each with a checklist
/// child. L2 scores each action from its checklist and the pair checklist. L3
/// aggregates both scores with the two verification vertices, and L4 is a final
/// vertex generated from L3 and refined by the backend.
pub fn evaluate(input: &EvalInput<'_>, llm: &LlmClient, cfg: &LfmConfig) -> crate::Result<LfmOutcome> {
    let EvalInput { a_rl, a_lm, memory, prompt, world: w, guidance: g } = *input;
    let mut graph = GotGraph::new();
    let mut flags = Vec::new();
    let skip = !a_lm.parse_ok;
    if skip {
        flags.push("lnm parse failure: weights forced to (1, 0)".to_string());
    }

    // L1
    let v_rl = graph.add_vertex(
        Thought::new(1, ThoughtRole::VerifyRl, format!("verify a_rl = {}", action_text(a_rl)))
            .with_payload(json!([a_rl.vx, a_rl.vy])),
    );
    let lm_text = if a_lm.parse_ok {
        format!("verify a_lm = {}", action_text(a_lm.action))
    } else {
        format!("verify a_lm = {} (parse failure: {})", action_text(a_lm.action), a_lm.error.as_deref().unwrap_or("unknown"))
    };
    let v_lm = graph.add_vertex(
        Thought::new(1, ThoughtRole::VerifyLm, lm_text).with_payload(json!([a_lm.action.vx, a_lm.action.vy])),
    );
    let recent = memory.recent_actions(3);
    let recent_text = if recent.is_empty() {
        "none".to_string()
    } else {
        recent.iter().map(|a| action_text(*a)).collect::<Vec<_>>().join(", ")
    };
    let v_pair = graph.add_vertex(Thought::new(
        1,
        ThoughtRole::VerifyPair,
        format!(
            "verify the pair a_rl = {}, a_lm = {}; recent executed actions: {recent_text}",
            action_text(a_rl),
            action_text(a_lm.action)
        ),
    ));
    let c_rl = graph.apply_generation(v_rl, 1, |_, _| {
        Thought::new(1, ThoughtRole::Checklist, candidate_evidence("a_rl", a_rl, w, g))
    })?[0];
    let c_lm = graph.apply_generation(v_lm, 1, |_, _| {
        Thought::new(1, ThoughtRole::Checklist, candidate_evidence("a_lm", a_lm.action, w, g))
    })?[0];
    let gap = (a_rl.as_vec() - a_lm.action.as_vec()).length();
    let c_pair = graph.apply_generation(v_pair, 1, |_, _| {
        Thought::new(1, ThoughtRole::Checklist, format!("pair: |a_rl - a_lm| = {gap:.3} m/s"))
            .with_payload(json!({ "gap": gap }))
    })?[0];

    // L2
    let score_node = |graph: &mut GotGraph, verify: ThoughtId, check: ThoughtId, name: &str| {
        graph.apply_aggregation(&[verify, check, c_pair], |_| {
            Thought::new(2, ThoughtRole::ScoreIndividual, format!("individual score {name}"))
        })
    };
    let s1_v = score_node(&mut graph, v_rl, c_rl, "s1")?;
    let s2_v = score_node(&mut graph, v_lm, c_lm, "s2")?;
    let context = format!("Guidance:\n{}Scene:\n{}", prompt.guidance, prompt.state_text);
    let (s1, s2, all_failed) = if skip {
        for v in [s1_v, s2_v] {
            let t = graph.get_mut(v).expect("just added");
            t.flags.push("skipped".into());
        }
        (1.0, 0.0, false)
    } else {
        let r1 = score_vertex(&mut graph, s1_v, &[c_rl, c_pair], &context, llm, cfg.score_parsing)?;
        let r2 = score_vertex(&mut graph, s2_v, &[c_lm, c_pair], &context, llm, cfg.score_parsing)?;
        for (name, r) in [("s1", &r1), ("s2", &r2)] {
            if let Some(f) = &r.flag {
                flags.push(format!("{name}: {f}; neutral {NEUTRAL_SCORE}"));
            }
            if let Some(f) = &r.retried {
                flags.push(format!("{name}: {f}"));
            }
        }
        let all_failed = r1.flag.is_some() && r2.flag.is_some();
        (r1.score, r2.score, all_failed)
    };

    // L3
    let l3 = graph.apply_aggregation(&[s1_v, s2_v, v_rl, v_lm], |_| {
        Thought::new(3, ThoughtRole::Aggregate, format!("s1 = {s1:.2} for a_rl, s2 = {s2:.2} for a_lm"))
            .with_payload(json!({ "s1": s1, "s2": s2 }))
    })?;

    // L4
    let l4 = graph.apply_generation(l3, 1, |_, _| {
        Thought::new(4, ThoughtRole::FinalScores, format!("final s1 = {s1:.2}, s2 = {s2:.2}"))
    })?[0];
    let weights = if skip {
        FusionWeights::RL_ONLY
    } else if all_failed {
        flags.push("all scoring failed: weights forced to (1, 0)".into());
        FusionWeights::RL_ONLY
    } else {
        let final_prompt = format!(
            "{}\nTurn the individual scores into relative weights for the learned policy (s1) and the language model (s2). Reply with {{\"s1\": number, \"s2\": number}}.\n{}\n{}s1: {s1:.2}\ns2: {s2:.2}\n{}\n",
            markers::LFM_FINAL,
            graph.get(l3).map(|t| t.content.as_str()).unwrap_or_default(),
            markers::SCORES_OPEN,
            markers::CLOSE
        );
        match llm.call(Caller::Lfm, &final_prompt) {
            Ok(reply) => match parse_final(&reply) {
                Some((f1, f2)) => FusionWeights::normalized(f1, f2),
                None => {
                    flags.push(format!("final scores unusable {:?}; using individual scores", excerpt(&reply)));
                    FusionWeights::normalized(s1, s2)
                }
            },
            Err(e) => {
                flags.push(format!("final scores backend error: {e}; using individual scores"));
                FusionWeights::normalized(s1, s2)
            }
        }
    };
    graph.apply_refine(l4, |t| {
        let mut t = t.clone();
        t.content = format!("final s1 = {:.4}, s2 = {:.4}", weights.s1, weights.s2);
        t.payload = Some(json!({ "s1": weights.s1, "s2": weights.s2 }));
        t.score = Some(weights.s1);
        t
    })?;
    debug_assert!(graph.is_acyclic());
    Ok(LfmOutcome { weights, graph, flags })
}
