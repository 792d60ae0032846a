//! Deterministic rule-based stand-in for every model role, used by tests
//! and `--mock` runs.
//!
//! The simulator knows a [`CueBook`]: for each (attribute, value) a set of
//! tell-tale spans with neutral replacements. The adversary guesses the
//! value when at least half of a group's spans are still present, with a
//! certainty proportional to that fraction; the anonymizer removes chain
//! spans according to the exposure budget.

use std::collections::{BTreeMap, BTreeSet};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::evalsuite::{rouge_text, tokenize};
use crate::gateway::{ChatProvider, ChatRequest, ProviderError, ProviderReply};
use crate::model::{AttributeKind, ExposureLevel, IntentId};
use crate::pipeline::ESCALATION_MARKER;
use crate::promptkit::{PromptFamily, PromptTemplate};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueSpan {
    pub text: String,
    pub neutral: String,
}

/// Spans that together reveal `attribute = value`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CueGroup {
    pub attribute: AttributeKind,
    pub value: String,
    pub spans: Vec<CueSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentCue {
    pub intent: IntentId,
    pub keyword: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneCue {
    pub scene: String,
    pub keyword: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueBook {
    pub groups: Vec<CueGroup>,
    #[serde(default)]
    pub intents: Vec<IntentCue>,
    #[serde(default)]
    pub scenes: Vec<SceneCue>,
}

const BUILTIN_CUES: &str = include_str!("../assets/mock_cues.json");

impl Default for CueBook {
    fn default() -> Self {
        serde_json::from_str(BUILTIN_CUES).expect("builtin cue book parses")
    }
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    !needle.is_empty() && haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Case-insensitive replacement of every occurrence.
fn replace_ci(text: &str, needle: &str, with: &str) -> String {
    if needle.is_empty() {
        return text.to_string();
    }
    let lower = text.to_lowercase();
    let pat = needle.to_lowercase();
    if lower.len() != text.len() {
        return text.replace(needle, with);
    }
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (i, _) in lower.match_indices(&pat) {
        if i < last {
            continue;
        }
        out.push_str(&text[last..i]);
        out.push_str(with);
        last = i + pat.len();
    }
    out.push_str(&text[last..]);
    out
}

/// A cue group matched against a text.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMatch<'a> {
    pub group: &'a CueGroup,
    pub present: Vec<&'a CueSpan>,
}

impl GroupMatch<'_> {
    pub fn retained(&self) -> f64 {
        self.present.len() as f64 / self.group.spans.len().max(1) as f64
    }
}

impl CueBook {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The group for `attribute` with the most evidence left in `text`.
    pub fn best_match(&self, text: &str, attribute: AttributeKind) -> Option<GroupMatch<'_>> {
        self.groups
            .iter()
            .filter(|g| g.attribute == attribute)
            .map(|g| GroupMatch { group: g, present: g.spans.iter().filter(|s| contains_ci(text, &s.text)).collect() })
            .filter(|m| !m.present.is_empty())
            .max_by(|a, b| a.retained().total_cmp(&b.retained()))
    }

    pub fn intents_of(&self, text: &str) -> BTreeMap<IntentId, f64> {
        let mut out: BTreeMap<IntentId, f64> = BTreeMap::new();
        for cue in self.intents.iter().filter(|c| contains_ci(text, &c.keyword)) {
            let w = out.entry(cue.intent).or_default();
            *w = w.max(cue.weight);
        }
        out
    }

    pub fn scene_of(&self, text: &str) -> String {
        self.scenes
            .iter()
            .find(|c| contains_ci(text, &c.keyword))
            .map(|c| c.scene.clone())
            .unwrap_or_else(|| crate::model::SceneId::DEFAULT.to_string())
    }

    fn cue_words(&self, attribute: AttributeKind) -> BTreeSet<String> {
        self.groups
            .iter()
            .filter(|g| g.attribute == attribute)
            .flat_map(|g| g.spans.iter())
            .flat_map(|s| tokenize(&s.text))
            .filter(|w| w.chars().count() >= 3)
            .collect()
    }

    fn neutral_for(&self, span: &str) -> String {
        self.groups
            .iter()
            .flat_map(|g| g.spans.iter())
            .find(|s| s.text == span)
            .map(|s| s.neutral.clone())
            .unwrap_or_else(|| "something".into())
    }
}

fn decoy(attribute: AttributeKind) -> &'static str {
    match attribute {
        AttributeKind::RelationshipStatus => "No relation",
        AttributeKind::Age => "unknown age",
        AttributeKind::Gender => "unknown gender",
        AttributeKind::Pobp => "unknown birthplace",
        AttributeKind::Location => "unknown location",
        AttributeKind::Education => "unknown education",
        AttributeKind::Income => "unknown income",
        AttributeKind::Occupation => "unknown occupation",
    }
}

fn normalize(s: &str) -> String {
    tokenize(s)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rule-based judgment of one ground-truth / prediction pair.
pub fn judge_pair(ground_truth: &str, prediction: &str) -> &'static str {
    let (gt, pred) = (normalize(ground_truth), normalize(prediction));
    if gt.is_empty() || pred.is_empty() {
        "no"
    } else if gt == pred || pred.contains(&gt) {
        "yes"
    } else if gt.contains(&pred) {
        "less precise"
    } else {
        "no"
    }
}

fn requested_attributes(phrase: &str) -> BTreeSet<AttributeKind> {
    if phrase.contains("[All of the above attributes]") {
        return AttributeKind::ALL.into_iter().collect();
    }
    phrase.split(',').filter_map(|p| p.trim().parse().ok()).collect()
}

fn parse_budgets(lines: &str) -> BTreeMap<AttributeKind, (ExposureLevel, f64)> {
    lines
        .split('\n')
        .filter_map(|line| {
            let (attr, rest) = line.trim().split_once(':')?;
            let rest = rest.trim();
            let (level, bound) = rest.split_once(" (risk bound ")?;
            Some((attr.parse().ok()?, (level.parse().ok()?, bound.trim_end_matches(')').parse().ok()?)))
        })
        .collect()
}

fn escalated_attributes(suffix: &str) -> BTreeSet<AttributeKind> {
    let Some((_, tail)) = suffix.split_once("exposure budget:") else {
        return BTreeSet::new();
    };
    let list = tail.split_once('.').map_or(tail, |(l, _)| l);
    list.split(',').filter_map(|a| a.trim().parse().ok()).collect()
}

/// Deterministic simulator for all prompt families.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    book: CueBook,
}

/// Retained fraction at which the simulated adversary guesses right.
pub const RECALL_THRESHOLD: f64 = 0.5;

impl Simulator {
    pub fn new(book: CueBook) -> Self {
        Self { book }
    }

    pub fn book(&self) -> &CueBook {
        &self.book
    }

    fn family(system: &str) -> Option<PromptFamily> {
        PromptFamily::ALL.into_iter().find(|f| PromptTemplate::builtin(*f).system_text == system)
    }

    pub fn respond(&self, system: &str, user: &str) -> Result<String, ProviderError> {
        let family = Self::family(system).ok_or_else(|| ProviderError::Fatal("simulator: unknown prompt".into()))?;
        let (body, suffix) = match family {
            PromptFamily::Anonymization => user.split_once(ESCALATION_MARKER).unwrap_or((user, "")),
            _ => (user, ""),
        };
        let slots = PromptTemplate::builtin(family)
            .extract(body)
            .ok_or_else(|| ProviderError::Fatal(format!("simulator: prompt does not match {family}")))?;
        let slot = |k: &str| slots.get(k).map(String::as_str).unwrap_or_default();
        let reply = match family {
            PromptFamily::IntentRecognition => json!(self.book.intents_of(slot("user_context"))).to_string(),
            PromptFamily::PrivacyInference => self.infer(slot("user_context"), slot("inference_attributes_types")),
            PromptFamily::EvidenceChain => self.chains(slot("user_context"), slot("attribute_inference_results")),
            PromptFamily::Anonymization => self.anonymize(
                slot("user_context"),
                slot("privacy_inference_evidence_chain"),
                slot("exposure_budgets"),
                suffix,
            ),
            PromptFamily::UtilityJudge => judge_utility(slot("original_string"), slot("latest_string")),
            PromptFamily::InferenceValidation => {
                let lines: Vec<&str> = slot("gt_infer_pairs").lines().collect();
                let verdicts: Vec<&str> = lines
                    .chunks(2)
                    .map(|pair| {
                        let gt = pair[0].strip_prefix("Ground truth: ").unwrap_or_default();
                        let pred = pair.get(1).and_then(|p| p.strip_prefix("Prediction: ")).unwrap_or_default();
                        judge_pair(gt, pred)
                    })
                    .collect();
                json!(verdicts).to_string()
            }
            PromptFamily::SceneClassification => json!({"scene": self.book.scene_of(slot("user_context"))}).to_string(),
            PromptFamily::TokenContribution => {
                let words = match slot("attribute").parse::<AttributeKind>() {
                    Ok(a) => self.book.cue_words(a),
                    Err(_) => BTreeSet::new(),
                };
                let scores: Vec<f64> = slot("indexed_tokens")
                    .lines()
                    .map(|line| {
                        let token = line.split_once(": ").map_or(line, |(_, t)| t);
                        let hit = tokenize(token).iter().any(|w| words.contains(w));
                        if hit { 1.0 } else { 0.1 }
                    })
                    .collect();
                json!({ "scores": scores }).to_string()
            }
        };
        Ok(reply)
    }

    fn infer(&self, text: &str, phrase: &str) -> String {
        let mut out = Vec::new();
        for attribute in requested_attributes(phrase) {
            let Some(m) = self.book.best_match(text, attribute) else { continue };
            let f = m.retained();
            let guess = if f >= RECALL_THRESHOLD { m.group.value.as_str() } else { decoy(attribute) };
            let certainty = ((5.0 * f).round() as i64).clamp(1, 5);
            let cues: Vec<&str> = m.present.iter().map(|s| s.text.as_str()).collect();
            out.push(json!({
                "Type": attribute.key(),
                "Inference": format!("Cues: {}", cues.join("; ")),
                "Guess": guess,
                "Certainty": certainty.to_string(),
            }));
        }
        serde_json::to_string_pretty(&Value::Array(out)).expect("json value serializes")
    }

    fn chains(&self, text: &str, inferences: &str) -> String {
        let inferred: Vec<AttributeKind> = serde_json::from_str::<Vec<Value>>(inferences)
            .unwrap_or_default()
            .iter()
            .filter_map(|v| v.get("Type")?.as_str()?.parse().ok())
            .collect();
        let attrs: Vec<Value> = inferred
            .into_iter()
            .filter_map(|attribute| {
                let m = self.book.best_match(text, attribute)?;
                let steps: Vec<Value> = m
                    .present
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        json!({
                            "step": format!("Step {}", i + 1),
                            "evidence": s.text,
                            "explanation": format!("points to {} = {}", attribute.key(), m.group.value),
                        })
                    })
                    .collect();
                Some(json!({"attribute": attribute.key(), "privacy_inference_evidence_chain": steps}))
            })
            .collect();
        json!({ "attributes": attrs }).to_string()
    }

    fn anonymize(&self, text: &str, chains: &str, budgets: &str, suffix: &str) -> String {
        let budgets = parse_budgets(budgets);
        let escalated = escalated_attributes(suffix);
        let chain_spans: BTreeMap<AttributeKind, Vec<String>> = serde_json::from_str::<Value>(chains)
            .ok()
            .and_then(|v| v.get("attributes").cloned())
            .and_then(|a| serde_json::from_value::<Vec<Value>>(a).ok())
            .unwrap_or_default()
            .iter()
            .filter_map(|c| {
                let attribute: AttributeKind = c.get("attribute")?.as_str()?.parse().ok()?;
                let mut spans = Vec::new();
                for step in c.get("privacy_inference_evidence_chain")?.as_array()? {
                    match step.get("evidence") {
                        Some(Value::String(s)) => spans.push(s.clone()),
                        Some(Value::Array(items)) => {
                            spans.extend(items.iter().filter_map(|i| i.as_str().map(str::to_string)))
                        }
                        _ => {}
                    }
                }
                spans.dedup();
                Some((attribute, spans))
            })
            .collect();
        let mut out = text.to_string();
        for (attribute, (level, bound)) in &budgets {
            let mut spans = chain_spans.get(attribute).cloned().unwrap_or_default();
            let remove_all = *level == ExposureLevel::Ban || escalated.contains(attribute);
            if remove_all {
                if let Some(m) = self.book.best_match(text, *attribute) {
                    for s in &m.present {
                        if !spans.contains(&s.text) {
                            spans.push(s.text.clone());
                        }
                    }
                }
            }
            let n = spans.len();
            let k = if remove_all { n } else { ((1.0 - bound) * n as f64 - 1e-9).ceil().max(0.0) as usize };
            for span in spans.iter().take(k) {
                out = replace_ci(&out, span, &self.book.neutral_for(span));
            }
        }
        let dense: BTreeMap<IntentId, f64> = {
            let found = self.book.intents_of(&out);
            IntentId::ALL.into_iter().map(|i| (i, found.get(&i).copied().unwrap_or(0.0))).collect()
        };
        json!({"intent_vector": dense, "anonymized_text": out}).to_string()
    }
}

fn judge_utility(original: &str, latest: &str) -> String {
    let r = rouge_text(latest, original).unwrap_or(0.0);
    let meaning = (1.0 + 9.0 * r).round().clamp(1.0, 10.0);
    let readability = if latest.trim().is_empty() { 1.0 } else { 10.0 };
    let known: BTreeSet<String> = tokenize(original).into_iter().collect();
    let words = tokenize(latest);
    let novel = words.iter().filter(|w| !known.contains(*w)).count();
    let hallucination = u8::from(words.is_empty() || novel * 5 <= words.len());
    json!({
        "readability": {"explanation": "", "score": readability},
        "meaning": {"explanation": "", "score": meaning},
        "hallucinations": {"explanation": "", "score": hallucination},
    })
    .to_string()
}

#[async_trait]
impl ChatProvider for Simulator {
    async fn chat(&self, request: ChatRequest<'_>) -> Result<ProviderReply, ProviderError> {
        let text = self.respond(request.system, request.user)?;
        Ok(ProviderReply::estimated(request, text))
    }
}
