//! Per-run call log, written as JSONL.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, BackendError, GenerationRequest, GenerationResult, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub call: usize,
    pub backend: String,
    pub request: GenerationRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    // timing is left out for deterministic backends so replays are byte-identical
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
}

/// Collects every backend call of one run. Safe to share across threads.
#[derive(Debug, Default)]
pub struct Transcript {
    header: Option<Value>,
    records: Mutex<Vec<TranscriptRecord>>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// The header becomes the first JSONL line (typically the run config).
    pub fn with_header(header: Value) -> Self {
        Transcript {
            header: Some(header),
            records: Mutex::new(Vec::new()),
        }
    }

    /// Performs one call and logs it, success or failure.
    pub fn call(&self, backend: &dyn Backend, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let desc = backend.descriptor();
        let started = chrono::Utc::now();
        let result = super::complete(backend, request);
        let finished = chrono::Utc::now();
        let timed = !desc.deterministic;
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        let (response, usage, error, latency) = match &result {
            Ok(r) => (Some(r.text.clone()), r.usage, None, r.latency.as_millis() as u64),
            Err(e) => (None, None, Some(e.to_string()), (finished - started).num_milliseconds().max(0) as u64),
        };
        let call = records.len();
        records.push(TranscriptRecord {
            call,
            backend: desc.id,
            request: request.clone(),
            response,
            usage,
            error,
            latency_ms: timed.then_some(latency),
            started_at: timed.then(|| started.to_rfc3339()),
            finished_at: timed.then(|| finished.to_rfc3339()),
        });
        result
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(&serde_json::json!({ "header": h }).to_string());
            out.push('\n');
        }
        for r in self.records() {
            out.push_str(&serde_json::to_string(&r).expect("transcript record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{RequestParams, ScriptEntry, ScriptedBackend};

    #[test]
    fn scripted_transcripts_replay_identically() {
        let run = || {
            let b = ScriptedBackend::new(vec![ScriptEntry::reply("one"), ScriptEntry::reply("two")]);
            let t = Transcript::new();
            let req = GenerationRequest::new("p", &RequestParams::default());
            t.call(&b, &req).unwrap();
            t.call(&b, &req).unwrap();
            assert!(t.call(&b, &req).is_err());
            t.to_jsonl()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.lines().count(), 3);
        assert!(!a.contains("latency_ms\":"));
    }
}
