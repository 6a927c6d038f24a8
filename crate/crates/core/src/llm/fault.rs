//! Backend wrapper that injects timeouts, garbage and out-of-range replies.

use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Completion, CompletionParams, LlmBackend, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultConfig {
    /// Probability that a call is corrupted.
    pub probability: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Fault {
    Timeout,
    Garbage,
    OutOfRange,
}

pub struct FaultInjectingBackend {
    inner: Arc<dyn LlmBackend>,
    probability: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl FaultInjectingBackend {
    pub fn new(inner: Arc<dyn LlmBackend>, cfg: FaultConfig, episode_seed: u64) -> Self {
        let seed = cfg.seed ^ episode_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self { inner, probability: cfg.probability.clamp(0.0, 1.0), rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    fn draw(&self) -> Option<Fault> {
        let mut rng = self.rng.lock().expect("fault rng lock");
        if rng.gen_bool(self.probability) {
            Some(match rng.gen_range(0..3) {
                0 => Fault::Timeout,
                1 => Fault::Garbage,
                _ => Fault::OutOfRange,
            })
        } else {
            None
        }
    }
}

impl LlmBackend for FaultInjectingBackend {
    fn identity(&self) -> String {
        format!("faulty({:.2}):{}", self.probability, self.inner.identity())
    }

    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<Completion, LlmError> {
        match self.draw() {
            None => self.inner.complete(prompt, params),
            Some(Fault::Timeout) => Err(LlmError::Timeout { after_ms: 30_000 }),
            Some(Fault::Garbage) => Ok(Completion { text: "\u{fffd}#@!~ lorem {{[".into(), retries: 0, latency_ms: 0 }),
            Some(Fault::OutOfRange) => Ok(Completion {
                text: r#"{"vx": 31.0, "vy": -45.5, "s1": 12.0, "s2": -3.0, "score": 7.5}"#.into(),
                retries: 0,
                latency_ms: 0,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;

    #[test]
    fn fault_rate_roughly_matches_and_is_reproducible() {
        let run = || {
            let b = FaultInjectingBackend::new(
                Arc::new(ScriptedBackend::always("fine")),
                FaultConfig { probability: 0.3, seed: 1 },
                42,
            );
            (0..1000)
                .map(|_| matches!(b.complete("p", &CompletionParams::default()), Ok(c) if c.text == "fine"))
                .collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        let faults = a.iter().filter(|ok| !**ok).count();
        assert!((240..=360).contains(&faults), "{faults}");
    }
}
