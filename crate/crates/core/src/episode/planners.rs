//! The baseline, the three ablations and the full hybrid planner.

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{current_target, Event, EventKind, PlanContext, PlanOutput, Planner, StepFeedback};
use crate::error::{Error, Result};
use crate::lfm::{evaluate, fuse, EvalInput, FusionWeights, LfmConfig};
use crate::llm::{BackendConfig, LlmClient};
use crate::lnm::{assemble_prompt, query_action, MemoryBuffer, MemoryRecord, Templates, DEFAULT_CAPACITY};
use crate::rlnm::{RlRunner, RlSlot};
use crate::sim::{orca_solve, preferred_velocity, OrcaParams};
use crate::types::{LocalAction, ObservableState};
use crate::PolicyWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlannerKind {
    #[serde(rename = "ORCA_baseline")]
    OrcaBaseline,
    #[serde(rename = "SA-RLNM")]
    SaRlnm,
    #[serde(rename = "SA-LNM")]
    SaLnm,
    #[serde(rename = "SA-LFM-fixed")]
    SaLfmFixed,
    #[serde(rename = "SALM")]
    Salm,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] =
        [PlannerKind::OrcaBaseline, PlannerKind::SaRlnm, PlannerKind::SaLnm, PlannerKind::SaLfmFixed, PlannerKind::Salm];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::OrcaBaseline => "ORCA_baseline",
            PlannerKind::SaRlnm => "SA-RLNM",
            PlannerKind::SaLnm => "SA-LNM",
            PlannerKind::SaLfmFixed => "SA-LFM-fixed",
            PlannerKind::Salm => "SALM",
        }
    }

    pub fn uses_rl(self) -> bool {
        matches!(self, PlannerKind::SaRlnm | PlannerKind::SaLfmFixed | PlannerKind::Salm)
    }

    pub fn uses_lnm(self) -> bool {
        matches!(self, PlannerKind::SaLnm | PlannerKind::SaLfmFixed | PlannerKind::Salm)
    }

    pub fn uses_lfm(self) -> bool {
        self == PlannerKind::Salm
    }
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        let kind = match key.as_str() {
            "orca-baseline" | "orca" => PlannerKind::OrcaBaseline,
            "sa-rlnm" => PlannerKind::SaRlnm,
            "sa-lnm" => PlannerKind::SaLnm,
            "sa-lfm-fixed" | "sa-lfm" => PlannerKind::SaLfmFixed,
            "salm" => PlannerKind::Salm,
            _ => {
                let names: Vec<&str> = PlannerKind::ALL.iter().map(|k| k.name()).collect();
                return Err(Error::Config(format!("unknown planner `{s}` (expected one of {})", names.join(", "))));
            }
        };
        Ok(kind)
    }
}

/// Serializable choice for the RL slot.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RlSlotConfig {
    #[default]
    Fallback,
    Weights {
        path: PathBuf,
        #[serde(default)]
        sample_seed: Option<u64>,
    },
    /// Untrained network with seeded initial weights.
    Seeded {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub kind: PlannerKind,
    pub backend: BackendConfig,
    pub rl_slot: RlSlotConfig,
    /// SA-LFM-fixed only.
    pub fixed_weights: Option<FusionWeights>,
    pub lfm: LfmConfig,
    pub memory_capacity: usize,
    /// Directory with prompt templates; built-in text when absent.
    pub templates: Option<PathBuf>,
}

impl PlannerConfig {
    pub fn new(kind: PlannerKind) -> Self {
        Self {
            kind,
            backend: BackendConfig::mock(),
            rl_slot: RlSlotConfig::Fallback,
            fixed_weights: (kind == PlannerKind::SaLfmFixed).then_some(FusionWeights::EVEN),
            lfm: LfmConfig::default(),
            memory_capacity: DEFAULT_CAPACITY,
            templates: None,
        }
    }

    pub fn with_backend(mut self, backend: BackendConfig) -> Self {
        self.backend = backend;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.fixed_weights) {
            (PlannerKind::SaLfmFixed, None) => return Err(Error::Config("SA-LFM-fixed needs fixed weights".into())),
            (PlannerKind::SaLfmFixed, Some(_)) => {}
            (_, Some(_)) => return Err(Error::Config(format!("{} does not take fixed weights", self.kind))),
            _ => {}
        }
        if self.memory_capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        if self.lfm.every_k_steps == 0 {
            return Err(Error::Config("lfm_every_k_steps must be at least 1".into()));
        }
        Ok(())
    }

    /// Loads templates and weights once; configuration problems surface here, never mid-episode.
    pub fn prepare(&self) -> Result<PlannerFactory> {
        self.validate()?;
        let templates = match &self.templates {
            Some(dir) => Templates::load_dir(dir)?,
            None => Templates::builtin(),
        };
        let rl = match &self.rl_slot {
            RlSlotConfig::Fallback => RlSlot::Fallback,
            RlSlotConfig::Weights { path, sample_seed } => {
                RlSlot::Network { weights: Arc::new(PolicyWeights::load_json(path)?), sample_seed: *sample_seed }
            }
            RlSlotConfig::Seeded { seed } => RlSlot::Network { weights: Arc::new(PolicyWeights::seeded(*seed)), sample_seed: None },
        };
        Ok(PlannerFactory { config: self.clone(), templates: Arc::new(templates), rl })
    }
}

/// Ready-to-instantiate planner configuration.
#[derive(Debug, Clone)]
pub struct PlannerFactory {
    pub config: PlannerConfig,
    templates: Arc<Templates>,
    rl: RlSlot,
}

impl PlannerFactory {
    pub fn rl_description(&self) -> String {
        if self.config.kind.uses_rl() {
            self.rl.describe()
        } else {
            "none".into()
        }
    }

    pub fn build(&self, llm: LlmClient, episode_seed: u64) -> Box<dyn Planner> {
        let kind = self.config.kind;
        if kind == PlannerKind::OrcaBaseline {
            return Box::new(OrcaBaseline { params: OrcaParams::default() });
        }
        Box::new(HybridPlanner {
            kind,
            rl: kind.uses_rl().then(|| RlRunner::new(self.rl.clone(), episode_seed)),
            lnm: kind.uses_lnm().then(|| LnmSlot { templates: self.templates.clone(), memory: None, capacity: self.config.memory_capacity }),
            llm,
            lfm: self.config.lfm,
            fixed: self.config.fixed_weights.unwrap_or(FusionWeights::EVEN),
            held: None,
        })
    }
}

/// The robot runs plain ORCA toward its current target.
pub struct OrcaBaseline {
    params: OrcaParams,
}

impl Planner for OrcaBaseline {
    fn name(&self) -> &str {
        PlannerKind::OrcaBaseline.name()
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Result<PlanOutput> {
        let w = ctx.world;
        let target = current_target(ctx.guidance, w);
        let mut robot = w.robot.clone();
        robot.goal = target;
        let mut neighbors: Vec<ObservableState> = w.pedestrians.iter().map(|p| p.observe()).collect();
        neighbors.push(w.user.observe());
        let pref = preferred_velocity(robot.position, target, robot.v_pref, w.dt);
        let v = orca_solve(&robot, pref, &neighbors, &self.params, w.dt).velocity;
        Ok(PlanOutput { action: LocalAction::from_vec(v), ..PlanOutput::default() })
    }
}

struct LnmSlot {
    templates: Arc<Templates>,
    memory: Option<MemoryBuffer>,
    capacity: usize,
}

/// RL slot, language model and the weighting between them, per planner kind.
pub struct HybridPlanner {
    kind: PlannerKind,
    rl: Option<RlRunner>,
    lnm: Option<LnmSlot>,
    llm: LlmClient,
    lfm: LfmConfig,
    fixed: FusionWeights,
    held: Option<FusionWeights>,
}

impl Planner for HybridPlanner {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn plan(&mut self, ctx: &PlanContext<'_>) -> Result<PlanOutput> {
        let (w, g) = (ctx.world, ctx.guidance);
        let v_pref = w.robot.v_pref;
        let mut out = PlanOutput::default();

        if let Some(rl) = self.rl.as_mut() {
            let d = rl.act(w, g)?;
            out.a_rl = Some(d.action);
            out.macro_action = d.macro_action;
        }

        let mut prompt = None;
        if let Some(slot) = self.lnm.as_mut() {
            let memory = slot.memory.get_or_insert_with(|| MemoryBuffer::with_demonstrations(slot.capacity, w, g));
            let p = assemble_prompt(g, memory, w, &slot.templates);
            let a = query_action(&p, &self.llm, v_pref);
            if !a.parse_ok {
                out.events.push(Event::new(EventKind::LnmFailure, a.error.clone().unwrap_or_default()));
            } else if let Some(e) = &a.error {
                out.events.push(Event::new(EventKind::LnmRetry, e.clone()));
            }
            if a.parse_ok && a.clipped {
                out.events.push(Event::new(EventKind::LnmClipped, "reply exceeded the speed limit"));
            }
            out.a_lm = Some(a);
            prompt = Some(p);
        }

        match self.kind {
            PlannerKind::OrcaBaseline => unreachable!("baseline has its own planner"),
            PlannerKind::SaRlnm => out.action = out.a_rl.unwrap_or_default(),
            PlannerKind::SaLnm => out.action = out.a_lm.as_ref().map(|a| a.action).unwrap_or_default(),
            PlannerKind::SaLfmFixed => {
                let (a_rl, a_lm) = (out.a_rl.unwrap_or_default(), out.a_lm.as_ref().map(|a| a.action).unwrap_or_default());
                out.weights = Some(self.fixed);
                out.action = fuse(a_rl, a_lm, self.fixed, v_pref);
            }
            PlannerKind::Salm => {
                let a_rl = out.a_rl.unwrap_or_default();
                let a_lm = out.a_lm.clone().expect("SALM runs the language model");
                let due = self.held.is_none() || ctx.step.is_multiple_of(self.lfm.every_k_steps);
                let weights = if !a_lm.parse_ok && !due {
                    FusionWeights::RL_ONLY
                } else if due {
                    let slot = self.lnm.as_ref().expect("SALM runs the language model");
                    let input = EvalInput {
                        a_rl,
                        a_lm: &a_lm,
                        memory: slot.memory.as_ref().expect("memory initialised above"),
                        prompt: prompt.as_ref().expect("prompt assembled above"),
                        world: w,
                        guidance: g,
                    };
                    match evaluate(&input, &self.llm, &self.lfm) {
                        Ok(o) => {
                            for f in &o.flags {
                                out.events.push(Event::new(EventKind::LfmFlag, f.clone()));
                            }
                            out.lfm_ran = true;
                            out.got = Some(o.graph);
                            self.held = Some(o.weights);
                            o.weights
                        }
                        Err(e) => {
                            out.events.push(Event::new(EventKind::PlannerError, format!("feedback model: {e}")));
                            FusionWeights::RL_ONLY
                        }
                    }
                } else {
                    self.held.unwrap_or(FusionWeights::RL_ONLY)
                };
                out.weights = Some(weights);
                out.action = fuse(a_rl, a_lm.action, weights, v_pref);
            }
        }
        Ok(out)
    }

    fn observe(&mut self, f: &StepFeedback<'_>) {
        if let Some(m) = self.lnm.as_mut().and_then(|s| s.memory.as_mut()) {
            m.update(MemoryRecord {
                step: Some(f.step),
                state_text: MemoryRecord::summary(f.world_before, f.guidance),
                action: f.executed,
                weights: f.weights,
                reward: Some(f.reward),
            });
        }
    }
}
