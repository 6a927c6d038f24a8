use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Caller;

pub const TRANSCRIPT_SCHEMA: &str = "salm-transcript/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: u64,
    pub caller: Caller,
    pub prompt: String,
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub retries: u32,
}

/// Append-only log of backend calls for one episode.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn record(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// JSON-lines: one header object, then one line per entry.
    pub fn to_jsonl(&self, episode: &str) -> String {
        let mut out = serde_json::json!({ "schema": TRANSCRIPT_SCHEMA, "episode": episode, "entries": self.len() })
            .to_string();
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path, episode: &str) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl(episode).as_bytes())?;
        f.flush()
    }
}
