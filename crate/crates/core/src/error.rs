use thiserror::Error;

use crate::llm::LlmError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("invalid agent: {0}")]
    InvalidAgent(String),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("scenario generation failed for seed {seed}: placed {placed} of {requested} pedestrians")]
    ScenarioGeneration { seed: u64, placed: usize, requested: usize },
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("graph error: {0}")]
    Graph(String),
    #[error("guidance parse failed: {0}")]
    GuidanceParse(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
