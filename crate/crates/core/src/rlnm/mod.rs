//! Learned-policy slot: ST-graph transformer policy, heuristic fallback and a small trainer.

pub mod graph;
pub mod network;
pub mod tensor;
pub mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::episode::current_target;
use crate::guidance::GlobalGuidance;
use crate::sim::{orca_solve, preferred_velocity, OrcaParams, OrcaSolution};
use crate::types::{LocalAction, MacroAction, ObservableState, WorldState};

pub use graph::{build_st_graph, StGraph, DEFAULT_HISTORY, FEATURE_DIM};
pub use network::{cross_modal_fuse, policy_forward, st_forward, ActionDistribution, WeightsManifest};
pub use tensor::{attention, multi_head, MultiHeadWeights};

/// ORCA solve toward the current target with pedestrians inflated by the social distance.
pub fn fallback_solution(w: &WorldState, g: &GlobalGuidance, params: &OrcaParams) -> OrcaSolution {
    let target = current_target(g, w);
    let pref = preferred_velocity(w.robot.position, target, w.robot.v_pref, w.dt);
    let mut neighbors: Vec<ObservableState> = w
        .pedestrians
        .iter()
        .map(|p| {
            let mut o = p.observe();
            o.radius += g.social_distance;
            o
        })
        .collect();
    neighbors.push(w.user.observe());
    let mut robot = w.robot.clone();
    robot.goal = target;
    orca_solve(&robot, pref, &neighbors, params, w.dt)
}

/// Deterministic stand-in for a trained policy.
pub fn fallback_policy(w: &WorldState, g: &GlobalGuidance) -> LocalAction {
    LocalAction::from_vec(fallback_solution(w, g, &OrcaParams::default()).velocity)
}

/// What fills the RL slot of a planner.
#[derive(Debug, Clone, Default)]
pub enum RlSlot {
    #[default]
    Fallback,
    Network {
        weights: Arc<crate::PolicyWeights>,
        /// `None` takes the distribution mean; `Some(seed)` samples with a per-episode RNG.
        sample_seed: Option<u64>,
    },
}

impl RlSlot {
    pub fn describe(&self) -> String {
        match self {
            RlSlot::Fallback => "fallback".into(),
            RlSlot::Network { weights, sample_seed } => {
                format!("network:{}:{}", &weights.hash()[..12], sample_seed.map_or("mean".into(), |s| format!("sample{s}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlDecision {
    pub action: LocalAction,
    pub macro_action: Option<MacroAction>,
}

/// Per-episode runtime of an [`RlSlot`]; keeps the observation history.
pub struct RlRunner {
    slot: RlSlot,
    history: Vec<WorldState>,
    rng: rand_chacha::ChaCha8Rng,
}

impl RlRunner {
    pub fn new(slot: RlSlot, episode_seed: u64) -> Self {
        use rand::SeedableRng;
        let seed = match &slot {
            RlSlot::Network { sample_seed: Some(s), .. } => s ^ episode_seed.rotate_left(17),
            _ => episode_seed,
        };
        Self { slot, history: Vec::new(), rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn act(&mut self, w: &WorldState, g: &GlobalGuidance) -> crate::Result<RlDecision> {
        self.history.push(w.clone());
        if self.history.len() > DEFAULT_HISTORY {
            self.history.remove(0);
        }
        match &self.slot {
            RlSlot::Fallback => Ok(RlDecision { action: fallback_policy(w, g), macro_action: None }),
            RlSlot::Network { weights, sample_seed } => {
                let graph = build_st_graph(&self.history, g, weights.manifest.history);
                let x_e = network::encode(&graph, weights.as_ref())?;
                let (mut macro_action, dist) = policy_forward(&x_e, weights.as_ref())?;
                if let Some(p) = macro_action.waypoint.as_mut() {
                    *p += w.robot.position;
                    macro_action.label = "waypoint".into();
                }
                let action = match sample_seed {
                    Some(_) => dist.sample(&mut self.rng, w.robot.v_pref),
                    None => dist.mode(w.robot.v_pref),
                };
                Ok(RlDecision { action, macro_action: Some(macro_action) })
            }
        }
    }
}
