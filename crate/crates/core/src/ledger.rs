//! Run ledger: one entry per model call with the rendered prompt, the raw
//! reply, the parsed value and token usage. Entries carry no timestamps or
//! latencies so that identical runs produce identical ledgers.

use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::gateway::{CallOutcome, CallRecord, Gateway, GatewayError, ModelProfile};
use crate::promptkit::{repair_then_parse, ParseError, PromptFamily, RenderError, RenderedPrompt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub sample: String,
    pub family: PromptFamily,
    pub stage: String,
    pub provider: String,
    pub model_id: String,
    pub request_digest: String,
    pub system: String,
    pub user: String,
    /// Raw reply, verbatim; absent when the call itself failed.
    pub raw: Option<String>,
    pub parsed: Option<Value>,
    pub error: Option<String>,
    pub repaired: bool,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub attempts: u32,
    pub cached: bool,
    pub outcome: CallOutcome,
}

impl LedgerEntry {
    pub fn record(&self) -> CallRecord {
        CallRecord {
            stage: self.stage.clone(),
            provider: self.provider.clone(),
            model_id: self.model_id.clone(),
            request_digest: self.request_digest.clone(),
            prompt_tokens: self.prompt_tokens,
            completion_tokens: self.completion_tokens,
            latency_ms: 0,
            attempts: self.attempts,
            cached: self.cached,
            outcome: self.outcome,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl StageError {
    pub fn kind(&self) -> &'static str {
        match self {
            StageError::Gateway(e) => e.kind(),
            StageError::Parse(e) => e.kind(),
            StageError::Render(_) => "render_failure",
            StageError::InvalidInput(_) => "invalid_input",
        }
    }
}

/// Collects the calls of one sample in the order they were made.
#[derive(Debug, Default)]
pub struct Recorder {
    sample: String,
    entries: Mutex<Vec<LedgerEntry>>,
}

impl Recorder {
    pub fn new(sample: impl Into<String>) -> Self {
        Self { sample: sample.into(), entries: Mutex::new(Vec::new()) }
    }

    pub fn push(&self, entry: LedgerEntry) {
        self.entries.lock().expect("recorder lock").push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("recorder lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_entries(self) -> Vec<LedgerEntry> {
        self.entries.into_inner().expect("recorder lock")
    }

    pub fn snapshot(&self) -> Vec<LedgerEntry> {
        self.entries.lock().expect("recorder lock").clone()
    }
}

/// Everything a stage needs to make a recorded model call.
#[derive(Clone, Copy)]
pub struct CallCtx<'a> {
    pub gateway: &'a Gateway,
    pub recorder: &'a Recorder,
    pub use_cache: bool,
}

impl<'a> CallCtx<'a> {
    pub fn new(gateway: &'a Gateway, recorder: &'a Recorder, use_cache: bool) -> Self {
        Self { gateway, recorder, use_cache }
    }

    pub fn without_cache(self) -> Self {
        Self { use_cache: false, ..self }
    }

    /// Sends `prompt`, parses the reply (with one repair pass) and records
    /// the call whatever the outcome.
    pub async fn invoke<T, P>(
        &self,
        stage: &str,
        profile: &ModelProfile,
        prompt: &RenderedPrompt,
        parser: P,
    ) -> Result<T, StageError>
    where
        T: Serialize,
        P: Fn(&str) -> Result<T, ParseError>,
    {
        let mut entry = LedgerEntry {
            sample: self.recorder.sample.clone(),
            family: prompt.family,
            stage: stage.to_string(),
            provider: profile.provider_name.clone(),
            model_id: profile.model_id.clone(),
            request_digest: crate::gateway::request_digest(profile, &prompt.system, &prompt.user),
            system: prompt.system.clone(),
            user: prompt.user.clone(),
            raw: None,
            parsed: None,
            error: None,
            repaired: false,
            prompt_tokens: 0,
            completion_tokens: 0,
            attempts: 0,
            cached: false,
            outcome: CallOutcome::TransportFailure,
        };
        let completion = match self
            .gateway
            .call(profile, &prompt.system, &prompt.user, self.use_cache)
            .await
        {
            Ok(c) => c,
            Err(e) => {
                entry.error = Some(e.to_string());
                self.recorder.push(entry);
                return Err(e.into());
            }
        };
        let r = &completion.record;
        entry.prompt_tokens = r.prompt_tokens;
        entry.completion_tokens = r.completion_tokens;
        entry.attempts = r.attempts;
        entry.cached = r.cached;
        let parsed = repair_then_parse(&completion.text, parser);
        entry.raw = Some(completion.text);
        let result = match parsed {
            Ok(p) => {
                entry.outcome = CallOutcome::Success;
                entry.repaired = p.repaired;
                entry.parsed = serde_json::to_value(&p.value).ok();
                Ok(p.value)
            }
            Err(e) => {
                entry.outcome = CallOutcome::ParseFailure;
                entry.error = Some(e.to_string());
                Err(e.into())
            }
        };
        self.recorder.push(entry);
        result
    }
}

/// Writes entries as JSON lines.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<Vec<T>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::from))
        .collect()
}
