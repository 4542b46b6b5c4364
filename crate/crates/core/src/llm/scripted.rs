//! Deterministic in-process backends for tests and offline runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendDescriptor, BackendError, GenerationRequest, GenerationResult};

/// One canned reply plus the checks the incoming prompt must pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect_contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expect_absent: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Simulated hard failure instead of a reply.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptEntry {
    pub fn reply(text: impl Into<String>) -> Self {
        ScriptEntry {
            expect_contains: Vec::new(),
            expect_absent: Vec::new(),
            response: Some(text.into()),
            error: None,
        }
    }

    pub fn fail(message: impl Into<String>) -> Self {
        ScriptEntry {
            error: Some(message.into()),
            response: None,
            ..ScriptEntry::reply("")
        }
    }

    pub fn expecting(mut self, needle: impl Into<String>) -> Self {
        self.expect_contains.push(needle.into());
        self
    }

    pub fn rejecting(mut self, needle: impl Into<String>) -> Self {
        self.expect_absent.push(needle.into());
        self
    }

    fn check(&self, prompt: &str) -> Result<(), String> {
        for needle in &self.expect_contains {
            if !prompt.contains(needle.as_str()) {
                return Err(format!("prompt lacks expected text {needle:?}"));
            }
        }
        for needle in &self.expect_absent {
            if prompt.contains(needle.as_str()) {
                return Err(format!("prompt contains forbidden text {needle:?}"));
            }
        }
        Ok(())
    }
}

/// Replays a fixed script. Every call consumes one entry, even on mismatch.
#[derive(Debug)]
pub struct ScriptedBackend {
    id: String,
    entries: Vec<ScriptEntry>,
    cursor: Mutex<usize>,
    cycle: bool,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedBackend {
            id: "scripted".into(),
            entries,
            cursor: Mutex::new(0),
            cycle: false,
        }
    }

    /// Every call returns `text`, forever.
    pub fn constant(text: impl Into<String>) -> Self {
        ScriptedBackend::new(vec![ScriptEntry::reply(text)]).cycling()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(ScriptedBackend::new(serde_json::from_str(text)?))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Wrap around instead of erroring when the script runs out.
    pub fn cycling(mut self) -> Self {
        self.cycle = true;
        self
    }

    pub fn calls(&self) -> usize {
        *self.cursor.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn remaining(&self) -> usize {
        if self.cycle {
            usize::MAX
        } else {
            self.entries.len().saturating_sub(self.calls())
        }
    }
}

impl Backend for ScriptedBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            id: self.id.clone(),
            single_flight: true,
            deterministic: true,
        }
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        let index = {
            let mut cursor = self.cursor.lock().unwrap_or_else(|e| e.into_inner());
            let i = *cursor;
            if !self.cycle && i >= self.entries.len() {
                return Err(BackendError::ScriptExhausted(i));
            }
            *cursor += 1;
            i
        };
        if self.entries.is_empty() {
            return Err(BackendError::ScriptExhausted(0));
        }
        let entry = &self.entries[index % self.entries.len()];
        entry
            .check(&request.prompt_text())
            .map_err(|reason| BackendError::ScriptMismatch { index, reason })?;
        if let Some(msg) = &entry.error {
            return Err(BackendError::Transport(msg.clone()));
        }
        Ok(GenerationResult {
            text: entry.response.clone().unwrap_or_default(),
            usage: None,
            latency: Duration::ZERO,
            backend_id: self.id.clone(),
        })
    }
}

type ReplyFn = dyn Fn(&GenerationRequest) -> Result<String, BackendError> + Send + Sync;

/// A backend whose reply is computed by a closure.
pub struct FnBackend {
    id: String,
    f: Box<ReplyFn>,
    calls: AtomicUsize,
    deterministic: bool,
}

impl FnBackend {
    pub fn new<F>(id: impl Into<String>, f: F) -> Self
    where
        F: Fn(&GenerationRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        FnBackend {
            id: id.into(),
            f: Box::new(f),
            calls: AtomicUsize::new(0),
            deterministic: true,
        }
    }

    pub fn nondeterministic(mut self) -> Self {
        self.deterministic = false;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl std::fmt::Debug for FnBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnBackend").field("id", &self.id).finish()
    }
}

impl Backend for FnBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            id: self.id.clone(),
            single_flight: false,
            deterministic: self.deterministic,
        }
    }

    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = (self.f)(request)?;
        Ok(GenerationResult {
            text,
            usage: None,
            latency: Duration::ZERO,
            backend_id: self.id.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::RequestParams;

    fn req(p: &str) -> GenerationRequest {
        GenerationRequest::new(p, &RequestParams::default())
    }

    #[test]
    fn consumes_entries_in_order() {
        let b = ScriptedBackend::new(vec![ScriptEntry::reply("a"), ScriptEntry::reply("b")]);
        assert_eq!(b.complete(&req("x")).unwrap().text, "a");
        assert_eq!(b.calls(), 1);
        assert_eq!(b.complete(&req("x")).unwrap().text, "b");
        assert_eq!(b.complete(&req("x")), Err(BackendError::ScriptExhausted(2)));
    }

    #[test]
    fn predicate_mismatch_is_an_error() {
        let b = ScriptedBackend::new(vec![ScriptEntry::reply("ok").expecting("needle")]);
        let err = b.complete(&req("haystack")).unwrap_err();
        assert!(matches!(err, BackendError::ScriptMismatch { index: 0, .. }));
    }

    #[test]
    fn script_json() {
        let b = ScriptedBackend::from_json(r#"[{"expect_contains": ["a"], "response": "r"}]"#).unwrap();
        assert_eq!(b.complete(&req("abc")).unwrap().text, "r");
    }
}
