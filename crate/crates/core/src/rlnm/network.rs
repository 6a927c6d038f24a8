//! Spatial-temporal transformer, cross-modal fusion and policy heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{StGraph, DEFAULT_HISTORY, FEATURE_DIM};
use super::tensor::{multi_head, Matrix, MultiHeadWeights};
use crate::error::{Error, Result};
use crate::geometry::Vector2;
use crate::types::{clip_action, LocalAction, MacroAction};
use crate::{Real, Vec2};

pub const DEFAULT_MODEL_DIM: usize = 32;
pub const DEFAULT_HEADS: usize = 4;
pub const INIT_RANGE: f64 = 0.1;
pub const INIT_LOG_STD: f64 = -0.5;
pub const LOG_STD_FLOOR: f64 = -5.0;
/// Macro waypoint offsets are squashed into a box of this half-width (m).
pub const MACRO_REACH: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub seed: u64,
    pub model_dim: usize,
    pub heads: usize,
    pub feature_dim: usize,
    pub history: usize,
    pub shapes: Vec<ShapeEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyWeights<T> {
    pub manifest: WeightsManifest,
    pub embed_w: Matrix<T>,
    pub embed_b: Matrix<T>,
    pub spatial: MultiHeadWeights<T>,
    pub temporal: MultiHeadWeights<T>,
    pub cross: MultiHeadWeights<T>,
    pub fuse_w: Matrix<T>,
    pub fuse_b: Matrix<T>,
    pub macro_w: Matrix<T>,
    pub macro_b: Matrix<T>,
    pub mean_w: Matrix<T>,
    pub mean_b: Matrix<T>,
    pub log_std: Matrix<T>,
}

impl<T: Real> PolicyWeights<T> {
    pub fn init(seed: u64, model_dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(Error::Config(format!("model dim {model_dim} not divisible by {heads} heads")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| T::lit(rng.gen_range(-INIT_RANGE..INIT_RANGE)));
        let d = model_dim;
        let embed_w = u(FEATURE_DIM, d);
        let embed_b = u(1, d);
        let mh = |u: &mut dyn FnMut(usize, usize) -> Matrix<T>| MultiHeadWeights {
            w_q: u(d, d),
            w_k: u(d, d),
            w_v: u(d, d),
            w_o: u(d, d),
            b_o: u(1, d),
        };
        let spatial = mh(&mut u);
        let temporal = mh(&mut u);
        let cross = mh(&mut u);
        let fuse_w = u(2 * d, d);
        let fuse_b = u(1, d);
        let macro_w = u(d, 2);
        let macro_b = u(1, 2);
        let mean_w = u(d, 2);
        let mean_b = u(1, 2);
        let log_std = Matrix::from_fn(1, 2, |_, _| T::lit(INIT_LOG_STD));
        let mut w = Self {
            manifest: WeightsManifest {
                seed,
                model_dim,
                heads,
                feature_dim: FEATURE_DIM,
                history: DEFAULT_HISTORY,
                shapes: vec![],
            },
            embed_w,
            embed_b,
            spatial,
            temporal,
            cross,
            fuse_w,
            fuse_b,
            macro_w,
            macro_b,
            mean_w,
            mean_b,
            log_std,
        };
        w.manifest.shapes = w
            .named()
            .into_iter()
            .map(|(name, m)| ShapeEntry { name, rows: m.rows(), cols: m.cols() })
            .collect();
        Ok(w)
    }

    pub fn seeded(seed: u64) -> Self {
        Self::init(seed, DEFAULT_MODEL_DIM, DEFAULT_HEADS).expect("default dims are consistent")
    }

    /// Every tensor with a stable name, in manifest order.
    pub fn named(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out: Vec<(String, &Matrix<T>)> = vec![("embed_w".into(), &self.embed_w), ("embed_b".into(), &self.embed_b)];
        for (block, mh) in [("spatial", &self.spatial), ("temporal", &self.temporal), ("cross", &self.cross)] {
            for (n, m) in mh.matrices() {
                out.push((format!("{block}.{n}"), m));
            }
        }
        out.extend([
            ("fuse_w".into(), &self.fuse_w),
            ("fuse_b".into(), &self.fuse_b),
            ("macro_w".into(), &self.macro_w),
            ("macro_b".into(), &self.macro_b),
            ("mean_w".into(), &self.mean_w),
            ("mean_b".into(), &self.mean_b),
            ("log_std".into(), &self.log_std),
        ]);
        out
    }

    /// Checks every tensor against the manifest and the block dimensions against each other.
    pub fn validate(&self) -> Result<()> {
        let named = self.named();
        if named.len() != self.manifest.shapes.len() {
            return Err(Error::Config(format!("manifest lists {} tensors, weights have {}", self.manifest.shapes.len(), named.len())));
        }
        for ((name, m), s) in named.iter().zip(&self.manifest.shapes) {
            if *name != s.name || m.shape() != (s.rows, s.cols) {
                return Err(Error::Shape { op: "weights manifest", left: m.shape(), right: (s.rows, s.cols) });
            }
        }
        let d = self.manifest.model_dim;
        if self.manifest.heads == 0 || !d.is_multiple_of(self.manifest.heads) {
            return Err(Error::Config("heads must divide model dim".into()));
        }
        let expect = |m: &Matrix<T>, shape: (usize, usize), op| {
            if m.shape() != shape {
                Err(Error::Shape { op, left: m.shape(), right: shape })
            } else {
                Ok(())
            }
        };
        expect(&self.embed_w, (FEATURE_DIM, d), "embed_w")?;
        expect(&self.fuse_w, (2 * d, d), "fuse_w")?;
        expect(&self.mean_w, (d, 2), "mean_w")?;
        expect(&self.macro_w, (d, 2), "macro_w")?;
        for mh in [&self.spatial, &self.temporal, &self.cross] {
            for (n, m) in mh.matrices() {
                expect(m, if n == "b_o" { (1, d) } else { (d, d) }, "attention block")?;
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values (as little-endian f64).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest.seed.to_le_bytes());
        for (name, m) in self.named() {
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for x in m.as_slice() {
                h.update(x.to_f64_lossy().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn cast<U: Real>(&self) -> PolicyWeights<U> {
        let mh = |m: &MultiHeadWeights<T>| MultiHeadWeights {
            w_q: m.w_q.cast(),
            w_k: m.w_k.cast(),
            w_v: m.w_v.cast(),
            w_o: m.w_o.cast(),
            b_o: m.b_o.cast(),
        };
        PolicyWeights {
            manifest: self.manifest.clone(),
            embed_w: self.embed_w.cast(),
            embed_b: self.embed_b.cast(),
            spatial: mh(&self.spatial),
            temporal: mh(&self.temporal),
            cross: mh(&self.cross),
            fuse_w: self.fuse_w.cast(),
            fuse_b: self.fuse_b.cast(),
            macro_w: self.macro_w.cast(),
            macro_b: self.macro_b.cast(),
            mean_w: self.mean_w.cast(),
            mean_b: self.mean_b.cast(),
            log_std: self.log_std.cast(),
        }
    }
}

impl PolicyWeights<f64> {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let w: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        w.validate()?;
        Ok(w)
    }
}

/// Spatial and temporal encodings of the latest frame, one row per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct StOutput<T> {
    pub x_s: Matrix<T>,
    pub x_t: Matrix<T>,
    /// Full temporal encoding per agent, `H × D`, oldest first.
    pub temporal: Vec<Matrix<T>>,
}

fn embed<T: Real>(frame: &Matrix<T>, w: &PolicyWeights<T>) -> Result<Matrix<T>> {
    frame.matmul(&w.embed_w)?.add_row_bias(&w.embed_b)
}

fn residual_block<T: Real>(x: &Matrix<T>, kv: &Matrix<T>, mh: &MultiHeadWeights<T>, heads: usize) -> Result<Matrix<T>> {
    Ok(x.add(&multi_head(x, kv, kv, mh, heads)?)?.layer_norm_rows())
}

/// Spatial self-attention across agents in the newest frame and temporal
/// self-attention along each agent's own history, each with residual + layer norm.
pub fn st_forward<T: Real>(graph: &StGraph, w: &PolicyWeights<T>) -> Result<StOutput<T>> {
    let heads = w.manifest.heads;
    let frames: Vec<Matrix<T>> = graph.frames_as::<T>();
    let embedded = frames.iter().map(|f| embed(f, w)).collect::<Result<Vec<_>>>()?;
    let last = embedded.last().ok_or_else(|| Error::Config("empty st-graph".into()))?;
    let x_s = residual_block(last, last, &w.spatial, heads)?;

    let mut temporal = Vec::with_capacity(graph.agents());
    let mut last_rows = Vec::with_capacity(graph.agents());
    for a in 0..graph.agents() {
        let chain = Matrix::concat_rows(&embedded.iter().map(|e| e.row_matrix(a)).collect::<Vec<_>>())?;
        let t = residual_block(&chain, &chain, &w.temporal, heads)?;
        last_rows.push(t.row_matrix(t.rows() - 1));
        temporal.push(t);
    }
    let x_t = Matrix::concat_rows(&last_rows)?;
    Ok(StOutput { x_s, x_t, temporal })
}

/// The two cross-attention streams: spatial queries over temporal keys/values, and the reverse.
pub fn cross_streams<T: Real>(x_s: &Matrix<T>, x_t: &Matrix<T>, w: &PolicyWeights<T>) -> Result<(Matrix<T>, Matrix<T>)> {
    if x_s.shape() != x_t.shape() {
        return Err(Error::Shape { op: "cross_modal_fuse", left: x_s.shape(), right: x_t.shape() });
    }
    let heads = w.manifest.heads;
    Ok((multi_head(x_s, x_t, x_t, &w.cross, heads)?, multi_head(x_t, x_s, x_s, &w.cross, heads)?))
}

/// Concatenates both cross streams and projects back to the model dimension.
pub fn cross_modal_fuse<T: Real>(x_s: &Matrix<T>, x_t: &Matrix<T>, w: &PolicyWeights<T>) -> Result<Matrix<T>> {
    let (s1, s2) = cross_streams(x_s, x_t, w)?;
    let fused = Matrix::concat_cols(&[s1, s2])?.matmul(&w.fuse_w)?.add_row_bias(&w.fuse_b)?;
    Ok(x_s.add(&fused)?.layer_norm_rows())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionDistribution<T> {
    pub mean: Vector2<T>,
    pub log_std: Vector2<T>,
}

impl<T: Real> ActionDistribution<T> {
    pub fn new(mean: Vector2<T>, log_std: Vector2<T>) -> Self {
        let floor = T::lit(LOG_STD_FLOOR);
        Self { mean, log_std: Vector2::new(log_std.x.max(floor), log_std.y.max(floor)) }
    }

    pub fn std(&self) -> Vector2<T> {
        Vector2::new(self.log_std.x.exp(), self.log_std.y.exp())
    }

    /// Unclipped Gaussian sample.
    pub fn sample_raw<R: Rng>(&self, rng: &mut R) -> Vector2<T> {
        let s = self.std();
        let n: (f64, f64) = (rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
        Vector2::new(self.mean.x + s.x * T::lit(n.0), self.mean.y + s.y * T::lit(n.1))
    }

    pub fn log_prob(&self, a: Vector2<T>) -> T {
        let s = self.std();
        let half = T::lit(0.5);
        let ln_2pi = (T::lit(2.0) * T::PI()).ln();
        let zx = (a.x - self.mean.x) / s.x;
        let zy = (a.y - self.mean.y) / s.y;
        -(half * (zx * zx + zy * zy)) - self.log_std.x - self.log_std.y - ln_2pi
    }
}

impl ActionDistribution<f64> {
    pub fn mode(&self, v_pref: f64) -> LocalAction {
        clip_action(LocalAction::from_vec(self.mean), v_pref).unwrap_or(LocalAction::ZERO)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, v_pref: f64) -> LocalAction {
        clip_action(LocalAction::from_vec(self.sample_raw(rng)), v_pref).unwrap_or(LocalAction::ZERO)
    }
}

/// Pooled robot embedding feeding both heads.
pub fn pooled_features<T: Real>(x_e: &Matrix<T>) -> Matrix<T> {
    x_e.row_matrix(0)
}

/// Macro head (robot-relative waypoint) and Gaussian local-action head.
pub fn policy_forward<T: Real>(x_e: &Matrix<T>, w: &PolicyWeights<T>) -> Result<(MacroAction, ActionDistribution<T>)> {
    let h = pooled_features(x_e);
    let m = h.matmul(&w.macro_w)?.add_row_bias(&w.macro_b)?;
    let reach = MACRO_REACH;
    let offset = Vec2::new(reach * m[(0, 0)].to_f64_lossy().tanh(), reach * m[(0, 1)].to_f64_lossy().tanh());
    let mu = h.matmul(&w.mean_w)?.add_row_bias(&w.mean_b)?;
    let dist = ActionDistribution::new(
        Vector2::new(mu[(0, 0)], mu[(0, 1)]),
        Vector2::new(w.log_std[(0, 0)], w.log_std[(0, 1)]),
    );
    Ok((MacroAction::waypoint(offset, "robot-relative"), dist))
}

/// Graph to fused embedding.
pub fn encode<T: Real>(graph: &StGraph, w: &PolicyWeights<T>) -> Result<Matrix<T>> {
    let st = st_forward(graph, w)?;
    cross_modal_fuse(&st.x_s, &st.x_t, w)
}

pub fn output_hash<T: Real>(m: &Matrix<T>) -> String {
    let mut h = Sha256::new();
    for x in m.as_slice() {
        h.update(format!("{:.9e};", x.to_f64_lossy()).as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}
