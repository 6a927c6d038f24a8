//! Generic graph-of-thoughts container and its three operations.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ThoughtId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThoughtRole {
    VerifyRl,
    VerifyLm,
    VerifyPair,
    Checklist,
    ScoreIndividual,
    Aggregate,
    FinalScores,
    /// Free-form vertex for uses of the engine outside the evaluation pipeline.
    Note,
}

impl ThoughtRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ThoughtRole::VerifyRl => "verify_rl",
            ThoughtRole::VerifyLm => "verify_lm",
            ThoughtRole::VerifyPair => "verify_pair",
            ThoughtRole::Checklist => "checklist",
            ThoughtRole::ScoreIndividual => "score_individual",
            ThoughtRole::Aggregate => "aggregate",
            ThoughtRole::FinalScores => "final_scores",
            ThoughtRole::Note => "note",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    pub id: ThoughtId,
    pub layer: u32,
    pub role: ThoughtRole,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl Thought {
    /// A vertex not yet in a graph; the id is assigned on insertion.
    pub fn new(layer: u32, role: ThoughtRole, content: impl Into<String>) -> Self {
        Self { id: usize::MAX, layer, role, content: content.into(), payload: None, score: None, flags: vec![] }
    }

    pub fn with_payload(mut self, payload: serde_json::Value) -> Self {
        self.payload = Some(payload);
        self
    }
}

/// Directed thought graph. Edges form a multiset so repeated refinements are counted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GotGraph {
    pub vertices: Vec<Thought>,
    pub edges: Vec<(ThoughtId, ThoughtId)>,
}

impl GotGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_vertex(&mut self, mut t: Thought) -> ThoughtId {
        t.id = self.vertices.len();
        self.vertices.push(t);
        self.vertices.len() - 1
    }

    pub fn contains(&self, v: ThoughtId) -> bool {
        v < self.vertices.len()
    }

    fn require(&self, v: ThoughtId) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::Graph(format!("vertex {v} not in graph of {} vertices", self.vertices.len())))
        }
    }

    pub fn get(&self, v: ThoughtId) -> Option<&Thought> {
        self.vertices.get(v)
    }

    pub fn get_mut(&mut self, v: ThoughtId) -> Option<&mut Thought> {
        self.vertices.get_mut(v)
    }

    /// Adds `k` children of `v` made by `producer(parent, i)`.
    pub fn apply_generation(
        &mut self,
        v: ThoughtId,
        k: usize,
        mut producer: impl FnMut(&Thought, usize) -> Thought,
    ) -> Result<Vec<ThoughtId>> {
        self.require(v)?;
        let mut ids = Vec::with_capacity(k);
        for i in 0..k {
            let child = producer(&self.vertices[v], i);
            let id = self.add_vertex(child);
            self.edges.push((v, id));
            ids.push(id);
        }
        Ok(ids)
    }

    /// Adds one vertex combining `sources`, with an edge from each.
    pub fn apply_aggregation(
        &mut self,
        sources: &[ThoughtId],
        combiner: impl FnOnce(&[&Thought]) -> Thought,
    ) -> Result<ThoughtId> {
        if sources.is_empty() {
            return Err(Error::Graph("aggregation needs at least one source".into()));
        }
        for &s in sources {
            self.require(s)?;
        }
        let refs: Vec<&Thought> = sources.iter().map(|&s| &self.vertices[s]).collect();
        let t = combiner(&refs);
        let id = self.add_vertex(t);
        for &s in sources {
            self.edges.push((s, id));
        }
        Ok(id)
    }

    /// Rewrites `v` in place and records a self-loop.
    pub fn apply_refine(&mut self, v: ThoughtId, refiner: impl FnOnce(&Thought) -> Thought) -> Result<()> {
        self.require(v)?;
        let mut next = refiner(&self.vertices[v]);
        next.id = v;
        self.vertices[v] = next;
        self.edges.push((v, v));
        Ok(())
    }

    pub fn self_loops(&self, v: ThoughtId) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v && b == v).count()
    }

    pub fn out_degree(&self, v: ThoughtId) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v && b != v).count()
    }

    pub fn in_degree(&self, v: ThoughtId) -> usize {
        self.edges.iter().filter(|&&(a, b)| b == v && a != v).count()
    }

    pub fn proper_edges(&self) -> impl Iterator<Item = (ThoughtId, ThoughtId)> + '_ {
        self.edges.iter().copied().filter(|(a, b)| a != b)
    }

    /// Kahn's algorithm over the edges that are not self-loops.
    pub fn is_acyclic(&self) -> bool {
        let n = self.vertices.len();
        let mut indeg = vec![0usize; n];
        let mut out: Vec<Vec<ThoughtId>> = vec![vec![]; n];
        for (a, b) in self.proper_edges() {
            indeg[b] += 1;
            out[a].push(b);
        }
        let mut ready: Vec<ThoughtId> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = ready.pop() {
            seen += 1;
            for &w in &out[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    ready.push(w);
                }
            }
        }
        seen == n
    }

    pub fn count(&self, layer: u32, role: ThoughtRole) -> usize {
        self.vertices.iter().filter(|t| t.layer == layer && t.role == role).count()
    }

    pub fn layers(&self) -> BTreeSet<u32> {
        self.vertices.iter().map(|t| t.layer).collect()
    }

    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph got {\n  rankdir=LR;\n");
        for t in &self.vertices {
            let score = t.score.map(|x| format!("\\n{x:.2}")).unwrap_or_default();
            writeln!(s, "  v{} [label=\"L{} {}{}\"];", t.id, t.layer, t.role.as_str(), score).unwrap();
        }
        for (a, b) in &self.edges {
            writeln!(s, "  v{a} -> v{b};").unwrap();
        }
        s.push_str("}\n");
        s
    }
}
