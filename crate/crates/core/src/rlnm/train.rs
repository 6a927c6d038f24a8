//! REINFORCE on the Gaussian action head with the transformer encoder frozen.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::build_st_graph;
use super::network::{encode, pooled_features, ActionDistribution};
use super::tensor::Matrix;
use crate::episode::{local_reward, task_complete};
use crate::error::{Error, Result};
use crate::geometry::Vector2;
use crate::guidance::GlobalGuidance;
use crate::sim::{detect_collisions, spawn_scenario, step_world, OrcaParams};
use crate::types::{clip_action, LocalAction, TaskKind, WorldState};
use crate::PolicyWeights;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub weights_seed: u64,
    pub iterations: usize,
    pub episodes_per_iteration: usize,
    pub horizon: usize,
    /// Pedestrian count is drawn uniformly from this inclusive range per episode.
    pub pedestrians: (usize, usize),
    pub learning_rate: f64,
    pub gamma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            weights_seed: 0,
            iterations: 200,
            episodes_per_iteration: 8,
            horizon: 40,
            pedestrians: (2, 4),
            learning_rate: 0.02,
            gamma: 0.99,
        }
    }
}

/// The trainable part of the policy: mean head and log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub mean_w: Matrix<f64>,
    pub mean_b: Matrix<f64>,
    pub log_std: Matrix<f64>,
}

impl HeadParams {
    pub fn of(w: &PolicyWeights) -> Self {
        Self { mean_w: w.mean_w.clone(), mean_b: w.mean_b.clone(), log_std: w.log_std.clone() }
    }

    pub fn write_into(&self, w: &mut PolicyWeights) {
        w.mean_w = self.mean_w.clone();
        w.mean_b = self.mean_b.clone();
        w.log_std = self.log_std.clone();
    }

    pub fn len(&self) -> usize {
        self.mean_w.as_slice().len() + 4
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.mean_w.as_slice().to_vec();
        v.extend_from_slice(self.mean_b.as_slice());
        v.extend_from_slice(self.log_std.as_slice());
        v
    }

    pub fn from_flat(&self, v: &[f64]) -> Self {
        let n = self.mean_w.as_slice().len();
        let mut out = self.clone();
        out.mean_w.as_mut_slice().copy_from_slice(&v[..n]);
        out.mean_b.as_mut_slice().copy_from_slice(&v[n..n + 2]);
        out.log_std.as_mut_slice().copy_from_slice(&v[n + 2..n + 4]);
        out
    }

    pub fn distribution(&self, h: &[f64]) -> ActionDistribution<f64> {
        let mut mu = [self.mean_b[(0, 0)], self.mean_b[(0, 1)]];
        for (j, &x) in h.iter().enumerate() {
            mu[0] += x * self.mean_w[(j, 0)];
            mu[1] += x * self.mean_w[(j, 1)];
        }
        ActionDistribution::new(Vector2::new(mu[0], mu[1]), Vector2::new(self.log_std[(0, 0)], self.log_std[(0, 1)]))
    }
}

/// One decision: encoder features, the raw (unclipped) sample and its advantage.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub action: Vector2<f64>,
    pub advantage: f64,
}

/// `Σ advantage · log π(action | features)`.
pub fn surrogate(p: &HeadParams, batch: &[Sample]) -> f64 {
    batch.iter().map(|s| s.advantage * p.distribution(&s.features).log_prob(s.action)).sum()
}

/// Analytic gradient of [`surrogate`], laid out like [`HeadParams::flat`].
pub fn surrogate_grad(p: &HeadParams, batch: &[Sample]) -> Vec<f64> {
    let d = p.mean_w.rows();
    let mut g = vec![0.0; p.len()];
    for s in batch {
        let dist = p.distribution(&s.features);
        let std = dist.std();
        let z = [(s.action.x - dist.mean.x) / std.x, (s.action.y - dist.mean.y) / std.y];
        let dmu = [z[0] / std.x, z[1] / std.y];
        for (j, &h) in s.features.iter().enumerate() {
            g[j * 2] += s.advantage * h * dmu[0];
            g[j * 2 + 1] += s.advantage * h * dmu[1];
        }
        g[d * 2] += s.advantage * dmu[0];
        g[d * 2 + 1] += s.advantage * dmu[1];
        g[d * 2 + 2] += s.advantage * (z[0] * z[0] - 1.0);
        g[d * 2 + 3] += s.advantage * (z[1] * z[1] - 1.0);
    }
    g
}

/// Central finite-difference gradient of [`surrogate`].
pub fn finite_difference_grad(p: &HeadParams, batch: &[Sample], h: f64) -> Vec<f64> {
    let base = p.flat();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += h;
            minus[i] -= h;
            (surrogate(&p.from_flat(&plus), batch) - surrogate(&p.from_flat(&minus), batch)) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub features: Vec<Vec<f64>>,
    pub actions: Vec<Vector2<f64>>,
    pub rewards: Vec<f64>,
}

impl Rollout {
    pub fn total(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

fn world_for(cfg: &TrainConfig, episode_seed: u64) -> Result<WorldState> {
    let (lo, hi) = cfg.pedestrians;
    let n = if hi > lo { ChaCha8Rng::seed_from_u64(episode_seed ^ 0x5eed).gen_range(lo..=hi) } else { lo };
    spawn_scenario(episode_seed, n, TaskKind::P2p)
}

/// Plays one episode with the frozen encoder and sampled head actions.
pub fn rollout(weights: &PolicyWeights, head: &HeadParams, cfg: &TrainConfig, episode_seed: u64) -> Result<Rollout> {
    let mut w = world_for(cfg, episode_seed)?;
    let g = GlobalGuidance::point_to_point(w.robot.goal);
    let params = OrcaParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut history = vec![w.clone()];
    let mut out = Rollout { features: vec![], actions: vec![], rewards: vec![] };
    for _ in 0..cfg.horizon {
        let graph = build_st_graph(&history, &g, weights.manifest.history);
        let h = pooled_features(&encode(&graph, weights)?).as_slice().to_vec();
        let raw = head.distribution(&h).sample_raw(&mut rng);
        let a = clip_action(LocalAction::from_vec(raw), w.robot.v_pref)?;
        let next = step_world(&w, a, &params);
        let r = local_reward(&w, a, &next, &g).total;
        out.features.push(h);
        out.actions.push(raw);
        out.rewards.push(r);
        let done = detect_collisions(&next, g.social_distance).collided() || task_complete(&next, &g);
        w = next;
        history.push(w.clone());
        if history.len() > weights.manifest.history {
            history.remove(0);
        }
        if done {
            break;
        }
    }
    Ok(out)
}

fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

/// Reward-to-go minus a per-timestep batch mean baseline.
pub fn to_samples(rollouts: &[Rollout], gamma: f64) -> Vec<Sample> {
    let rtg: Vec<Vec<f64>> = rollouts.iter().map(|r| reward_to_go(&r.rewards, gamma)).collect();
    let longest = rtg.iter().map(Vec::len).max().unwrap_or(0);
    let baseline: Vec<f64> = (0..longest)
        .map(|t| {
            let vals: Vec<f64> = rtg.iter().filter_map(|g| g.get(t).copied()).collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        })
        .collect();
    let mut out = Vec::new();
    for (r, g) in rollouts.iter().zip(&rtg) {
        for t in 0..r.rewards.len() {
            out.push(Sample { features: r.features[t].clone(), action: r.actions[t], advantage: g[t] - baseline[t] });
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: PolicyWeights,
    pub curve: Vec<CurvePoint>,
}

impl TrainOutcome {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("iteration,mean_return\n");
        for p in &self.curve {
            writeln!(s, "{},{:.6}", p.iteration, p.mean_return).unwrap();
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.weights.save_json(&dir.join("weights.json"))?;
        std::fs::write(dir.join("training_curve.csv"), self.curve_csv())?;
        Ok(())
    }
}

pub fn mean_return(weights: &PolicyWeights, cfg: &TrainConfig, seeds: &[u64]) -> Result<f64> {
    let head = HeadParams::of(weights);
    let mut total = 0.0;
    for &s in seeds {
        total += rollout(weights, &head, cfg, s)?.total();
    }
    Ok(total / seeds.len().max(1) as f64)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let mh = self.m[i] / (1.0 - B1.powi(self.t));
            let vh = self.v[i] / (1.0 - B2.powi(self.t));
            params[i] += lr * mh / (vh.sqrt() + 1e-8);
        }
    }
}

/// Gradient ascent on the policy-gradient surrogate. Zero iterations returns the initialization.
pub fn train_policy(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut weights = PolicyWeights::seeded(cfg.weights_seed);
    let mut head = HeadParams::of(&weights);
    let mut flat = head.flat();
    let mut opt = Adam { m: vec![0.0; flat.len()], v: vec![0.0; flat.len()], t: 0 };
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let rollouts = (0..cfg.episodes_per_iteration)
            .map(|e| rollout(&weights, &head, cfg, cfg.seed.wrapping_add((it * cfg.episodes_per_iteration + e) as u64)))
            .collect::<Result<Vec<_>>>()?;
        let mean = rollouts.iter().map(Rollout::total).sum::<f64>() / rollouts.len().max(1) as f64;
        let samples = to_samples(&rollouts, cfg.gamma);
        let n = samples.len().max(1) as f64;
        let grad: Vec<f64> = surrogate_grad(&head, &samples).into_iter().map(|g| g / n).collect();
        if !mean.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged(format!(
                "iteration {it}: mean return {mean}, non-finite gradient entries {}",
                grad.iter().filter(|g| !g.is_finite()).count()
            )));
        }
        opt.step(&mut flat, &grad, cfg.learning_rate);
        head = head.from_flat(&flat);
        head.write_into(&mut weights);
        curve.push(CurvePoint { iteration: it, mean_return: mean });
    }
    Ok(TrainOutcome { weights, curve })
}
