//! Parsers from raw model text into domain types, plus the inverse
//! serializers producing the documented output schemas.
//!
//! Parsers are total: any input yields a value or a [`ParseError`].
//! Malformed list elements are dropped with a warning; a missing top-level
//! structure is a hard error.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use super::repair::balanced_slices;
use crate::adversary::ValidationVerdict;
use crate::model::{
    AttributeInference, AttributeKind, EvidenceChain, EvidenceStep, IntentId, IntentVector,
    SceneId, SceneTaxonomy,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unparseable output: {0}")]
    Unparseable(String),
    #[error("invalid keys: {0:?}")]
    InvalidKeys(Vec<String>),
    #[error("no requested attribute present in output")]
    EmptyResult,
    #[error("missing key `{0}`")]
    MissingKey(String),
    #[error("{field} value {value} out of range")]
    OutOfRange { field: String, value: String },
    #[error("expected {expected} entries, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

impl ParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::Unparseable(_) => "unparseable",
            ParseError::InvalidKeys(_) => "invalid_keys",
            ParseError::EmptyResult => "empty_result",
            ParseError::MissingKey(_) => "missing_key",
            ParseError::OutOfRange { .. } => "out_of_range",
            ParseError::LengthMismatch { .. } => "length_mismatch",
        }
    }
}

/// A parsed value with the warnings raised while producing it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Parsed<T> {
    pub value: T,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl<T> Parsed<T> {
    fn new(value: T, warnings: Vec<String>) -> Self {
        Self { value, warnings }
    }
}

fn first_object(raw: &str) -> Result<Map<String, Value>, ParseError> {
    balanced_slices(raw, b'{')
        .find_map(|s| match serde_json::from_str::<Value>(s) {
            Ok(Value::Object(m)) => Some(m),
            _ => None,
        })
        .ok_or_else(|| ParseError::Unparseable("no JSON object found".into()))
}

fn first_array(raw: &str) -> Result<Vec<Value>, ParseError> {
    balanced_slices(raw, b'[')
        .find_map(|s| match serde_json::from_str::<Value>(s) {
            Ok(Value::Array(a)) => Some(a),
            _ => None,
        })
        .ok_or_else(|| ParseError::Unparseable("no JSON array found".into()))
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
        _ => None,
    }
}

fn get_ci<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key)
        .or_else(|| obj.iter().find(|(k, _)| k.eq_ignore_ascii_case(key)).map(|(_, v)| v))
}

fn intent_weights(
    obj: &Map<String, Value>,
    warnings: &mut Vec<String>,
) -> Result<Vec<(IntentId, f64)>, ParseError> {
    let invalid: Vec<String> = obj
        .keys()
        .filter(|k| k.parse::<IntentId>().is_err())
        .cloned()
        .collect();
    if !invalid.is_empty() {
        return Err(ParseError::InvalidKeys(invalid));
    }
    let mut out = Vec::new();
    for (k, v) in obj {
        let id: IntentId = k.parse().expect("keys checked above");
        let w = as_number(v)
            .ok_or_else(|| ParseError::Unparseable(format!("weight for {id} is not a number")))?;
        if !w.is_finite() {
            return Err(ParseError::Unparseable(format!("weight for {id} is not finite")));
        }
        let clamped = w.clamp(0.0, 1.0);
        if clamped != w {
            warnings.push(format!("weight {w} for {id} clamped to {clamped}"));
        }
        out.push((id, clamped));
    }
    Ok(out)
}

/// Intent-recognition output: a single object mapping I1–I5 to weights.
pub fn parse_intent(raw: &str) -> Result<Parsed<IntentVector>, ParseError> {
    let obj = first_object(raw)?;
    let mut warnings = Vec::new();
    let weights = intent_weights(&obj, &mut warnings)?;
    let v = IntentVector::new(weights).expect("weights clamped into range");
    Ok(Parsed::new(v, warnings))
}

pub fn serialize_intent(v: &IntentVector) -> String {
    serde_json::to_string(v).expect("intent vector serializes")
}

fn certainty_of(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => {
            let f = n.as_f64()?;
            (f.fract() == 0.0).then_some(f as i64)
        }
        Value::String(s) => {
            let digits: String = s.trim().chars().take_while(|c| c.is_ascii_digit()).collect();
            digits.parse().ok()
        }
        _ => None,
    }
}

fn guesses_of(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(s.split(';').map(|g| g.trim().to_string()).filter(|g| !g.is_empty()).collect()),
        Value::Array(items) => Some(
            items
                .iter()
                .filter_map(|i| i.as_str())
                .map(|g| g.trim().to_string())
                .filter(|g| !g.is_empty())
                .collect(),
        ),
        _ => None,
    }
}

/// Attribute-inference output: an array of `{Type, Inference, Guess, Certainty}`.
pub fn parse_inferences(
    raw: &str,
    requested: &BTreeSet<AttributeKind>,
) -> Result<Parsed<Vec<AttributeInference>>, ParseError> {
    if requested.is_empty() {
        return Err(ParseError::EmptyResult);
    }
    let items = first_array(raw)?;
    let mut warnings = Vec::new();
    let mut out: Vec<AttributeInference> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let Some(obj) = item.as_object() else {
            warnings.push(format!("element {i}: not an object, dropped"));
            continue;
        };
        let Some(kind) = get_ci(obj, "Type").and_then(Value::as_str) else {
            warnings.push(format!("element {i}: missing Type, dropped"));
            continue;
        };
        let attribute = match kind.parse::<AttributeKind>() {
            Ok(a) => a,
            Err(_) => {
                warnings.push(format!("element {i}: unknown attribute `{kind}`, dropped"));
                continue;
            }
        };
        if !requested.contains(&attribute) {
            warnings.push(format!("element {i}: {attribute} was not requested, dropped"));
            continue;
        }
        if out.iter().any(|o| o.attribute == attribute) {
            warnings.push(format!("element {i}: duplicate {attribute}, dropped"));
            continue;
        }
        let reasoning = get_ci(obj, "Inference").and_then(Value::as_str).unwrap_or_default();
        let Some(guesses) = get_ci(obj, "Guess").and_then(guesses_of) else {
            warnings.push(format!("element {i}: missing Guess, dropped"));
            continue;
        };
        let Some(certainty) = get_ci(obj, "Certainty").and_then(certainty_of) else {
            warnings.push(format!("element {i}: certainty not an integer, dropped"));
            continue;
        };
        match AttributeInference::new(attribute, reasoning, guesses, certainty) {
            Ok(inf) => out.push(inf),
            Err(e) => warnings.push(format!("element {i}: {e}, dropped")),
        }
    }
    if out.is_empty() {
        return Err(ParseError::EmptyResult);
    }
    Ok(Parsed::new(out, warnings))
}

pub fn serialize_inferences(items: &[AttributeInference]) -> String {
    let arr: Vec<Value> = items
        .iter()
        .map(|i| {
            json!({
                "Type": i.attribute.key(),
                "Inference": i.reasoning,
                "Guess": i.guesses.join("; "),
                "Certainty": i.certainty.to_string(),
            })
        })
        .collect();
    serde_json::to_string_pretty(&Value::Array(arr)).expect("json value serializes")
}

fn spans_of(v: &Value) -> Vec<String> {
    match v {
        Value::String(s) => vec![s.clone()],
        Value::Array(items) => items.iter().filter_map(|i| i.as_str().map(str::to_string)).collect(),
        _ => Vec::new(),
    }
}

/// Evidence-chain output; every quoted span is checked against `source`.
pub fn parse_evidence_chains(raw: &str, source: &str) -> Result<Parsed<Vec<EvidenceChain>>, ParseError> {
    let obj = first_object(raw)?;
    let attrs = match obj.get("attributes") {
        Some(Value::Array(a)) => a,
        Some(_) => return Err(ParseError::Unparseable("`attributes` is not an array".into())),
        None => return Err(ParseError::MissingKey("attributes".into())),
    };
    let mut warnings = Vec::new();
    let mut chains: Vec<EvidenceChain> = Vec::new();
    for (i, entry) in attrs.iter().enumerate() {
        let Some(entry) = entry.as_object() else {
            warnings.push(format!("attributes[{i}]: not an object, dropped"));
            continue;
        };
        let name = entry.get("attribute").and_then(Value::as_str).unwrap_or_default();
        let Ok(attribute) = name.parse::<AttributeKind>() else {
            warnings.push(format!("attributes[{i}]: unknown attribute `{name}`, dropped"));
            continue;
        };
        let steps_raw = entry
            .get("privacy_inference_evidence_chain")
            .and_then(Value::as_array)
            .cloned()
            .unwrap_or_default();
        let mut steps = Vec::new();
        for (j, s) in steps_raw.iter().enumerate() {
            let Some(s) = s.as_object() else {
                warnings.push(format!("{attribute} step {j}: not an object, dropped"));
                continue;
            };
            let text = |k: &str| s.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
            let spans = s.get("evidence").map(spans_of).unwrap_or_default();
            match EvidenceStep::checked(text("step"), spans, text("explanation"), source) {
                Ok(step) => {
                    for e in step.evidence.iter().filter(|e| !e.verbatim) {
                        warnings.push(format!("{attribute} step {j}: span not verbatim: {:?}", e.text));
                    }
                    steps.push(step);
                }
                Err(_) => warnings.push(format!("{attribute} step {j}: no evidence, dropped")),
            }
        }
        match chains.iter_mut().find(|c| c.attribute == attribute) {
            Some(existing) => existing.steps.extend(steps),
            None => chains.push(EvidenceChain { attribute, steps }),
        }
    }
    Ok(Parsed::new(chains, warnings))
}

pub fn serialize_chains(chains: &[EvidenceChain]) -> String {
    let attrs: Vec<Value> = chains
        .iter()
        .map(|c| {
            let steps: Vec<Value> = c
                .steps
                .iter()
                .map(|s| {
                    let spans: Vec<&str> = s.evidence.iter().map(|e| e.text.as_str()).collect();
                    let evidence = if spans.len() == 1 { json!(spans[0]) } else { json!(spans) };
                    json!({"step": s.step, "evidence": evidence, "explanation": s.explanation})
                })
                .collect();
            json!({"attribute": c.attribute.key(), "privacy_inference_evidence_chain": steps})
        })
        .collect();
    serde_json::to_string_pretty(&json!({ "attributes": attrs })).expect("json value serializes")
}

/// Anonymization output: `{"intent_vector": {...}, "anonymized_text": "..."}`.
pub fn parse_anonymization(raw: &str) -> Result<Parsed<(IntentVector, String)>, ParseError> {
    let obj = first_object(raw)?;
    let iv = obj
        .get("intent_vector")
        .ok_or_else(|| ParseError::MissingKey("intent_vector".into()))?
        .as_object()
        .ok_or_else(|| ParseError::Unparseable("`intent_vector` is not an object".into()))?;
    for id in IntentId::ALL {
        if !iv.contains_key(id.as_str()) {
            return Err(ParseError::MissingKey(format!("intent_vector.{id}")));
        }
    }
    let mut warnings = Vec::new();
    let weights = intent_weights(iv, &mut warnings)?;
    let text = obj
        .get("anonymized_text")
        .and_then(Value::as_str)
        .ok_or_else(|| ParseError::MissingKey("anonymized_text".into()))?;
    let vector = IntentVector::new(weights.into_iter().filter(|(_, w)| *w > 0.0))
        .expect("weights clamped into range");
    Ok(Parsed::new((vector, text.to_string()), warnings))
}

pub fn serialize_anonymization(v: &IntentVector, text: &str) -> String {
    json!({"intent_vector": v.dense(), "anonymized_text": text}).to_string()
}

/// Raw utility-judge scores: readability and meaning on 1–10, hallucination 0|1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityJudgment {
    pub readability: f64,
    pub meaning: f64,
    pub hallucination: u8,
}

fn judged_score(obj: &Map<String, Value>, keys: &[&str]) -> Result<f64, ParseError> {
    let v = keys
        .iter()
        .find_map(|k| get_ci(obj, k))
        .ok_or_else(|| ParseError::MissingKey(keys[0].into()))?;
    let score = match v {
        Value::Object(inner) => get_ci(inner, "score")
            .ok_or_else(|| ParseError::MissingKey(format!("{}.score", keys[0])))?,
        other => other,
    };
    as_number(score)
        .filter(|f| f.is_finite())
        .ok_or_else(|| ParseError::Unparseable(format!("{} score is not a number", keys[0])))
}

pub fn parse_utility_judgment(raw: &str) -> Result<Parsed<UtilityJudgment>, ParseError> {
    let obj = first_object(raw)?;
    let readability = judged_score(&obj, &["readability"])?;
    let meaning = judged_score(&obj, &["meaning"])?;
    let halluc = judged_score(&obj, &["hallucinations", "hallucination"])?;
    for (field, v) in [("readability", readability), ("meaning", meaning)] {
        if !(1.0..=10.0).contains(&v) {
            return Err(ParseError::OutOfRange { field: field.into(), value: v.to_string() });
        }
    }
    let hallucination = match halluc {
        h if h == 0.0 => 0,
        h if h == 1.0 => 1,
        h => {
            return Err(ParseError::OutOfRange { field: "hallucinations".into(), value: h.to_string() })
        }
    };
    Ok(Parsed::new(UtilityJudgment { readability, meaning, hallucination }, Vec::new()))
}

pub fn serialize_utility_judgment(j: &UtilityJudgment) -> String {
    json!({
        "readability": {"explanation": "", "score": j.readability},
        "meaning": {"explanation": "", "score": j.meaning},
        "hallucinations": {"explanation": "", "score": j.hallucination},
    })
    .to_string()
}

fn quoted_items(list: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = list.chars();
    while let Some(c) = chars.next() {
        if c == '\'' || c == '"' {
            let item: String = chars.by_ref().take_while(|n| *n != c).collect();
            out.push(item);
        }
    }
    out
}

/// Validation output: a list of `yes` / `no` / `less precise`, one per pair.
pub fn parse_validation(raw: &str, expected_count: usize) -> Result<Parsed<Vec<ValidationVerdict>>, ParseError> {
    let items: Vec<String> = match first_array(raw) {
        Ok(values) => values
            .iter()
            .map(|v| {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ParseError::Unparseable(format!("non-string verdict {v}")))
            })
            .collect::<Result<_, _>>()?,
        Err(e) => {
            // single-quoted Python-style lists
            let Some(start) = raw.find('[') else { return Err(e) };
            let Some(len) = raw[start..].find(']') else { return Err(e) };
            let items = quoted_items(&raw[start + 1..start + len]);
            if items.is_empty() {
                return Err(e);
            }
            items
        }
    };
    let verdicts = items
        .iter()
        .map(|s| {
            s.parse::<ValidationVerdict>()
                .map_err(|_| ParseError::Unparseable(format!("unknown verdict `{s}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if verdicts.len() != expected_count {
        return Err(ParseError::LengthMismatch { expected: expected_count, actual: verdicts.len() });
    }
    Ok(Parsed::new(verdicts, Vec::new()))
}

pub fn serialize_validation(verdicts: &[ValidationVerdict]) -> String {
    let items: Vec<&str> = verdicts.iter().map(|v| v.as_prompt_str()).collect();
    serde_json::to_string(&items).expect("strings serialize")
}

/// Scene output: `{"scene": "<name>"}` or a bare scene name.
pub fn parse_scene(raw: &str, taxonomy: &SceneTaxonomy) -> Result<SceneId, ParseError> {
    if let Ok(obj) = first_object(raw) {
        let name = obj
            .get("scene")
            .and_then(Value::as_str)
            .ok_or_else(|| ParseError::MissingKey("scene".into()))?;
        return taxonomy
            .lookup(name)
            .map_err(|_| ParseError::Unparseable(format!("scene `{name}` not in taxonomy")));
    }
    let bare = raw.trim().trim_matches(|c: char| c == '"' || c == '`' || c == '.');
    taxonomy
        .lookup(bare)
        .map_err(|_| ParseError::Unparseable("no scene found".into()))
}

/// Token-score output: `{"scores": [...]}` with exactly `count` numbers in [0, 1].
pub fn parse_token_scores(raw: &str, count: usize) -> Result<Parsed<Vec<f64>>, ParseError> {
    let values = match first_object(raw) {
        Ok(obj) => obj
            .get("scores")
            .and_then(Value::as_array)
            .cloned()
            .ok_or_else(|| ParseError::MissingKey("scores".into()))?,
        Err(_) => first_array(raw)?,
    };
    let mut warnings = Vec::new();
    let mut scores = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        let s = as_number(v).ok_or_else(|| ParseError::Unparseable(format!("score {i} not a number")))?;
        let c = s.clamp(0.0, 1.0);
        if c != s {
            warnings.push(format!("score {i} clamped from {s}"));
        }
        scores.push(c);
    }
    if scores.len() != count {
        return Err(ParseError::LengthMismatch { expected: count, actual: scores.len() });
    }
    Ok(Parsed::new(scores, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IntentId::*;

    fn all_attrs() -> BTreeSet<AttributeKind> {
        AttributeKind::ALL.into_iter().collect()
    }

    #[test]
    fn intent_example_output() {
        let p = parse_intent(r#"{"I1": 0.5, "I2": 0.8, "I5": 0.7}"#).unwrap();
        assert_eq!(p.value.weight(I1), 0.5);
        assert_eq!(p.value.weight(I2), 0.8);
        assert_eq!(p.value.weight(I5), 0.7);
        assert_eq!(p.value.weight(I3), 0.0);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn intent_fenced_and_prose() {
        let p = parse_intent("```json\n{\"I4\":1.0}\n```").unwrap();
        assert_eq!(p.value.weight(I4), 1.0);
        let p = parse_intent("Sure! Here you go: {\"I3\": 0.25} hope it helps").unwrap();
        assert_eq!(p.value.weight(I3), 0.25);
    }

    #[test]
    fn intent_errors() {
        assert_eq!(parse_intent("no braces here").unwrap_err().kind(), "unparseable");
        assert_eq!(
            parse_intent(r#"{"I1": 0.5, "I9": 0.1}"#).unwrap_err(),
            ParseError::InvalidKeys(vec!["I9".into()])
        );
        assert_eq!(parse_intent(r#"{"I1": "lots"}"#).unwrap_err().kind(), "unparseable");
    }

    #[test]
    fn intent_clamps_with_warning() {
        let p = parse_intent(r#"{"I1": 1.4, "I2": -0.2}"#).unwrap();
        assert_eq!(p.value.weight(I1), 1.0);
        assert_eq!(p.value.weight(I2), 0.0);
        assert_eq!(p.warnings.len(), 2);
    }

    #[test]
    fn inference_example_element() {
        let raw = r#"[{"Type": "relationship_status", "Inference": "mentions a wife",
            "Guess": "Married; In Relation; Divorced", "Certainty": "4"}]"#;
        let p = parse_inferences(raw, &all_attrs()).unwrap();
        let inf = &p.value[0];
        assert_eq!(inf.attribute, AttributeKind::RelationshipStatus);
        assert_eq!(inf.guesses, vec!["Married", "In Relation", "Divorced"]);
        assert_eq!(inf.certainty, 4);
    }

    #[test]
    fn inference_single_guess_and_bad_certainty() {
        let raw = r#"[{"Type": "location", "Inference": "", "Guess": "Oslo", "Certainty": 5},
                      {"Type": "age", "Inference": "", "Guess": "30", "Certainty": "high"}]"#;
        let p = parse_inferences(raw, &all_attrs()).unwrap();
        assert_eq!(p.value.len(), 1);
        assert_eq!(p.value[0].guesses, vec!["Oslo"]);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn inference_unrequested_dropped_and_empty_result() {
        let raw = r#"[{"Type": "age", "Inference": "", "Guess": "30", "Certainty": 3}]"#;
        let req = BTreeSet::from([AttributeKind::Location]);
        assert_eq!(parse_inferences(raw, &req).unwrap_err(), ParseError::EmptyResult);
        assert_eq!(parse_inferences("nothing", &req).unwrap_err().kind(), "unparseable");
    }

    #[test]
    fn chains_structural_mapping_and_flags() {
        let source = "I was born in 1990 and live in Oslo.";
        let raw = r#"{"attributes": [{"attribute": "age", "privacy_inference_evidence_chain": [
            {"step": "birth year", "evidence": "born in 1990", "explanation": "year"},
            {"step": "other", "evidence": ["live in Oslo", "retired"], "explanation": "x"}]}]}"#;
        let p = parse_evidence_chains(raw, source).unwrap();
        assert_eq!(p.value.len(), 1);
        assert_eq!(p.value[0].steps.len(), 2);
        assert!(p.value[0].steps[0].is_verbatim());
        assert!(!p.value[0].steps[1].is_verbatim());
        assert_eq!(p.warnings.len(), 1);
        assert!(parse_evidence_chains(r#"{"attributes": []}"#, source).unwrap().value.is_empty());
    }

    #[test]
    fn anonymization_schema() {
        let raw = r#"{"intent_vector":{"I1":0,"I2":0,"I3":0,"I4":1,"I5":0},"anonymized_text":"t"}"#;
        let p = parse_anonymization(raw).unwrap();
        assert_eq!(p.value.0, IntentVector::new([(I4, 1.0)]).unwrap());
        assert_eq!(p.value.1, "t");
        let missing = r#"{"intent_vector":{"I1":0,"I2":0,"I3":0,"I4":1,"I5":0}}"#;
        assert_eq!(parse_anonymization(missing).unwrap_err(), ParseError::MissingKey("anonymized_text".into()));
        let partial = r#"{"intent_vector":{"I1":0},"anonymized_text":"t"}"#;
        assert_eq!(parse_anonymization(partial).unwrap_err().kind(), "missing_key");
        let prose = format!("Here is the result:\n{raw}");
        assert_eq!(parse_anonymization(&prose).unwrap().value.1, "t");
    }

    #[test]
    fn utility_judgment() {
        let raw = r#"{"readability": {"explanation": "ok", "score": 10},
            "meaning": {"explanation": "same", "score": 10},
            "hallucinations": {"explanation": "none", "score": "1"}}"#;
        let j = parse_utility_judgment(raw).unwrap().value;
        assert_eq!((j.readability, j.meaning, j.hallucination), (10.0, 10.0, 1));
        let bad = raw.replace("\"score\": 10},\n            \"meaning\"", "\"score\": 11},\n            \"meaning\"");
        assert_eq!(parse_utility_judgment(&bad).unwrap_err().kind(), "out_of_range");
        let h2 = raw.replace("\"1\"", "2");
        assert_eq!(parse_utility_judgment(&h2).unwrap_err().kind(), "out_of_range");
    }

    #[test]
    fn validation_lists() {
        use ValidationVerdict::*;
        assert_eq!(parse_validation(r#"["yes"]"#, 1).unwrap().value, vec![Yes]);
        assert_eq!(
            parse_validation(r#"["less precise","no"]"#, 2).unwrap().value,
            vec![LessPrecise, No]
        );
        assert_eq!(
            parse_validation(r#"["yes"]"#, 2).unwrap_err(),
            ParseError::LengthMismatch { expected: 2, actual: 1 }
        );
        assert_eq!(parse_validation("['YES', 'No']", 2).unwrap().value, vec![Yes, No]);
        assert_eq!(parse_validation(r#"["maybe"]"#, 1).unwrap_err().kind(), "unparseable");
    }

    #[test]
    fn scene_parsing() {
        let t = SceneTaxonomy::default();
        assert_eq!(parse_scene(r#"{"scene": "support_community"}"#, &t).unwrap().as_str(), "support_community");
        assert_eq!(parse_scene("private_group", &t).unwrap().as_str(), "private_group");
        assert!(parse_scene("somewhere", &t).is_err());
    }

    #[test]
    fn token_scores() {
        let p = parse_token_scores(r#"{"scores": [0.1, 0.9, 1, 0, 0.5]}"#, 5).unwrap();
        assert_eq!(p.value, vec![0.1, 0.9, 1.0, 0.0, 0.5]);
        assert_eq!(parse_token_scores("[0.1]", 2).unwrap_err().kind(), "length_mismatch");
    }

    #[test]
    fn serializers_round_trip() {
        let inf = AttributeInference::new(AttributeKind::Location, "park", vec!["Oslo, Norway".into(), "Bergen".into()], 5).unwrap();
        let back = parse_inferences(&serialize_inferences(&[inf.clone()]), &all_attrs()).unwrap().value;
        assert_eq!(back, vec![inf]);
        let v = IntentVector::new([(I1, 0.5), (I4, 0.25)]).unwrap();
        assert_eq!(parse_intent(&serialize_intent(&v)).unwrap().value, v);
        let (bv, bt) = parse_anonymization(&serialize_anonymization(&v, "x \"y\"")).unwrap().value;
        assert_eq!((bv, bt.as_str()), (v, "x \"y\""));
    }
}
