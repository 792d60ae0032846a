//! Prompt templates and model-output parsing.
//!
//! Templates live as UTF-8 asset files under `prompts/` and are compiled
//! into the binary. Slot markers are written as in the source material,
//! e.g. `{user_context}` or `{ user_context }`; rendering is a single
//! substitution pass that never touches anything else.

mod parse;
mod repair;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use parse::{
    parse_anonymization, parse_evidence_chains, parse_inferences, parse_intent, parse_scene,
    parse_token_scores, parse_utility_judgment, parse_validation, serialize_anonymization,
    serialize_chains, serialize_inferences, serialize_intent, serialize_utility_judgment,
    serialize_validation, ParseError, Parsed, UtilityJudgment,
};
pub use repair::{repair, repair_then_parse, Repaired};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("slot `{0}` is required but was not bound")]
    MissingSlot(String),
    #[error("binding `{0}` does not correspond to any slot")]
    UnknownSlot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    IntentRecognition,
    PrivacyInference,
    EvidenceChain,
    Anonymization,
    UtilityJudge,
    InferenceValidation,
    SceneClassification,
    TokenContribution,
}

impl PromptFamily {
    pub const ALL: [PromptFamily; 8] = [
        PromptFamily::IntentRecognition,
        PromptFamily::PrivacyInference,
        PromptFamily::EvidenceChain,
        PromptFamily::Anonymization,
        PromptFamily::UtilityJudge,
        PromptFamily::InferenceValidation,
        PromptFamily::SceneClassification,
        PromptFamily::TokenContribution,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptFamily::IntentRecognition => "intent_recognition",
            PromptFamily::PrivacyInference => "privacy_inference",
            PromptFamily::EvidenceChain => "evidence_chain",
            PromptFamily::Anonymization => "anonymization",
            PromptFamily::UtilityJudge => "utility_judge",
            PromptFamily::InferenceValidation => "inference_validation",
            PromptFamily::SceneClassification => "scene_classification",
            PromptFamily::TokenContribution => "token_contribution",
        }
    }

    fn assets(self) -> (&'static str, &'static str) {
        macro_rules! asset {
            ($name:literal) => {
                (
                    include_str!(concat!("../../prompts/", $name, ".system.txt")),
                    include_str!(concat!("../../prompts/", $name, ".user.txt")),
                )
            };
        }
        match self {
            PromptFamily::IntentRecognition => asset!("intent_recognition"),
            PromptFamily::PrivacyInference => asset!("privacy_inference"),
            PromptFamily::EvidenceChain => asset!("evidence_chain"),
            PromptFamily::Anonymization => asset!("anonymization"),
            PromptFamily::UtilityJudge => asset!("utility_judge"),
            PromptFamily::InferenceValidation => asset!("inference_validation"),
            PromptFamily::SceneClassification => asset!("scene_classification"),
            PromptFamily::TokenContribution => asset!("token_contribution"),
        }
    }
}

impl fmt::Display for PromptFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn slot_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\s*([a-z_][a-z0-9_]*)\s*\}").expect("valid slot regex"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub family: PromptFamily,
    pub system_text: String,
    pub user_text: String,
    pub required_slots: BTreeSet<String>,
}

/// A rendered prompt pair, ready for the gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub family: PromptFamily,
    pub system: String,
    pub user: String,
}

impl PromptTemplate {
    pub fn new(family: PromptFamily, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        let system_text = system_text.into();
        let user_text = user_text.into();
        let required_slots = slot_pattern()
            .captures_iter(&system_text)
            .chain(slot_pattern().captures_iter(&user_text))
            .map(|c| c[1].to_string())
            .collect();
        Self { family, system_text, user_text, required_slots }
    }

    /// The shipped template for `family`.
    pub fn builtin(family: PromptFamily) -> &'static PromptTemplate {
        static TEMPLATES: OnceLock<BTreeMap<PromptFamily, PromptTemplate>> = OnceLock::new();
        let all = TEMPLATES.get_or_init(|| {
            PromptFamily::ALL
                .into_iter()
                .map(|f| {
                    let (sys, user) = f.assets();
                    (f, PromptTemplate::new(f, sys, user))
                })
                .collect()
        });
        &all[&family]
    }

    /// Substitutes every slot. Bindings must cover the required slots exactly.
    pub fn render<K, V>(&self, bindings: impl IntoIterator<Item = (K, V)>) -> Result<RenderedPrompt, RenderError>
    where
        K: Into<String>,
        V: Into<String>,
    {
        let bindings: BTreeMap<String, String> =
            bindings.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        if let Some(unknown) = bindings.keys().find(|k| !self.required_slots.contains(*k)) {
            return Err(RenderError::UnknownSlot(unknown.clone()));
        }
        if let Some(missing) = self.required_slots.iter().find(|s| !bindings.contains_key(*s)) {
            return Err(RenderError::MissingSlot(missing.clone()));
        }
        let fill = |text: &str| {
            slot_pattern()
                .replace_all(text, |c: &regex::Captures<'_>| bindings[&c[1]].clone())
                .into_owned()
        };
        Ok(RenderedPrompt {
            family: self.family,
            system: fill(&self.system_text),
            user: fill(&self.user_text),
        })
    }

    /// Recovers slot bindings from a rendered user prompt. Returns `None`
    /// when the text was not produced by this template.
    pub fn extract(&self, rendered_user: &str) -> Option<BTreeMap<String, String>> {
        let mut literals = Vec::new();
        let mut names = Vec::new();
        let mut last = 0;
        for caps in slot_pattern().captures_iter(&self.user_text) {
            let m = caps.get(0).expect("whole match");
            literals.push(&self.user_text[last..m.start()]);
            names.push(caps[1].to_string());
            last = m.end();
        }
        literals.push(&self.user_text[last..]);
        let values = scan_slots(&literals, rendered_user).or_else(|| regex_slots(&literals, rendered_user))?;
        let mut out = BTreeMap::new();
        for (name, value) in names.into_iter().zip(values) {
            if let Some(prev) = out.get(&name) {
                if *prev != value {
                    return None;
                }
            }
            out.insert(name, value);
        }
        Some(out)
    }
}

/// Slot values by taking each slot up to the first occurrence of the
/// following literal.
fn scan_slots(literals: &[&str], text: &str) -> Option<Vec<String>> {
    let (first, rest) = literals.split_first()?;
    let mut cursor = text.strip_prefix(first)?;
    let mut values = Vec::new();
    for (i, lit) in rest.iter().enumerate() {
        if i + 1 == rest.len() {
            values.push(cursor.strip_suffix(lit)?.to_string());
        } else {
            let at = cursor.find(lit)?;
            values.push(cursor[..at].to_string());
            cursor = &cursor[at + lit.len()..];
        }
    }
    Some(values)
}

/// Backtracking fallback for slot values that contain a following literal.
fn regex_slots(literals: &[&str], text: &str) -> Option<Vec<String>> {
    let pattern = format!(
        "(?s)^{}$",
        literals.iter().map(|l| regex::escape(l)).collect::<Vec<_>>().join("(.*?)")
    );
    let caps = Regex::new(&pattern).ok()?.captures(text)?;
    (1..literals.len()).map(|i| caps.get(i).map(|m| m.as_str().to_string())).collect()
}

/// Content hash over every shipped template, recorded in run manifests.
pub fn assets_digest() -> String {
    let mut hasher = Sha256::new();
    for family in PromptFamily::ALL {
        let t = PromptTemplate::builtin(family);
        hasher.update(family.as_str().as_bytes());
        hasher.update([0u8]);
        hasher.update(t.system_text.as_bytes());
        hasher.update([0u8]);
        hasher.update(t.user_text.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}
