//! Dataset ingestion and author-level aggregation.
//!
//! Input is JSONL, one comment per line:
//! `{"author_id": "...", "text": "...", "attributes": {"age": "30"}, "intents": {"I1": 0.5}}`.
//! Any other field is kept as metadata.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{AttributeKind, AuthorSample, IntentVector};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("no valid record among {lines} line(s)")]
    AllLinesMalformed { lines: usize },
    #[error("annotations file invalid: {0}")]
    InvalidAnnotations(String),
}

impl CorpusError {
    pub fn kind(&self) -> &'static str {
        match self {
            CorpusError::Io { .. } => "io_error",
            CorpusError::AllLinesMalformed { .. } => "all_lines_malformed",
            CorpusError::InvalidAnnotations(_) => "invalid_annotations",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawComment {
    pub author_id: String,
    pub text: String,
    #[serde(default)]
    pub attributes: BTreeMap<AttributeKind, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intents: Option<IntentVector>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct IngestReport {
    pub lines: usize,
    pub accepted: usize,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

fn scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.trim().to_string()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn parse_record(line: &str, warnings: &mut Vec<String>, lineno: usize) -> Result<RawComment, String> {
    let mut obj: Map<String, Value> = match serde_json::from_str(line) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return Err("not a JSON object".into()),
        Err(e) => return Err(format!("invalid JSON: {e}")),
    };
    let author_id = obj
        .remove("author_id")
        .as_ref()
        .and_then(scalar_string)
        .filter(|s| !s.is_empty())
        .ok_or("missing author_id")?;
    let text = match obj.remove("text") {
        Some(Value::String(s)) if !s.trim().is_empty() => s,
        _ => return Err("missing or empty text".into()),
    };
    let mut attributes = BTreeMap::new();
    match obj.remove("attributes") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let Ok(kind) = k.parse::<AttributeKind>() else {
                    warnings.push(format!("line {lineno}: unknown attribute `{k}` ignored"));
                    continue;
                };
                match scalar_string(&v) {
                    Some(s) if !s.is_empty() => {
                        attributes.insert(kind, s);
                    }
                    _ => warnings.push(format!("line {lineno}: empty value for {kind} ignored")),
                }
            }
        }
        Some(_) => return Err("attributes is not an object".into()),
    }
    let intents = match obj.remove("intents") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value::<IntentVector>(v).map_err(|e| format!("invalid intents: {e}"))?),
    };
    Ok(RawComment { author_id, text, attributes, intents, metadata: obj.into_iter().collect() })
}

/// Parses JSONL text; malformed lines are skipped with a line-numbered warning.
pub fn ingest_str(text: &str) -> Result<(Vec<RawComment>, IngestReport), CorpusError> {
    let mut report = IngestReport::default();
    let mut comments = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.lines += 1;
        match parse_record(line, &mut report.warnings, i + 1) {
            Ok(c) => comments.push(c),
            Err(e) => {
                report.skipped += 1;
                report.warnings.push(format!("line {}: {e}; skipped", i + 1));
            }
        }
    }
    report.accepted = comments.len();
    if comments.is_empty() {
        return Err(CorpusError::AllLinesMalformed { lines: report.lines });
    }
    Ok((comments, report))
}

pub fn ingest(path: &Path) -> Result<(Vec<RawComment>, IngestReport), CorpusError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    let (comments, report) = ingest_str(&text)?;
    for w in &report.warnings {
        tracing::warn!("{}: {w}", path.display());
    }
    tracing::info!(accepted = report.accepted, skipped = report.skipped, "ingested {}", path.display());
    Ok((comments, report))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeConflict {
    pub author_id: String,
    pub attribute: AttributeKind,
    pub kept: String,
    pub rejected: String,
}

/// Groups comments by author in first-appearance order. Conflicting
/// attribute values flag the author; the first value is kept.
pub fn aggregate_authors(comments: &[RawComment]) -> (Vec<AuthorSample>, Vec<AttributeConflict>) {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<&str, (Vec<String>, BTreeMap<AttributeKind, String>, Option<IntentVector>)> =
        HashMap::new();
    let mut conflicts = Vec::new();
    for c in comments {
        let g = groups.entry(c.author_id.as_str()).or_insert_with(|| {
            order.push(c.author_id.clone());
            Default::default()
        });
        g.0.push(c.text.clone());
        for (a, v) in &c.attributes {
            match g.1.get(a) {
                None => {
                    g.1.insert(*a, v.clone());
                }
                Some(kept) if kept != v => conflicts.push(AttributeConflict {
                    author_id: c.author_id.clone(),
                    attribute: *a,
                    kept: kept.clone(),
                    rejected: v.clone(),
                }),
                Some(_) => {}
            }
        }
        if g.2.is_none() {
            g.2 = c.intents.clone();
        }
    }
    let samples = order
        .into_iter()
        .map(|id| {
            let (comments, gt, intents) = groups.remove(id.as_str()).expect("grouped author");
            let sample = AuthorSample::new(id, comments, gt).expect("ingest guarantees non-empty text and values");
            match intents {
                Some(v) => sample.with_intents(v),
                None => sample,
            }
        })
        .collect();
    (samples, conflicts)
}

/// Manual curation decision for one author.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Annotation {
    Intents(IntentVector),
    Excluded(ExcludedMarker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExcludedMarker {
    Excluded,
}

pub type Annotations = BTreeMap<String, Annotation>;

pub fn load_annotations(path: &Path) -> Result<Annotations, CorpusError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|e| CorpusError::InvalidAnnotations(e.to_string()))
}

/// Drops authors annotated as excluded and attaches annotated intents.
pub fn filter_intent_clarity(
    samples: Vec<AuthorSample>,
    annotations: Option<&Annotations>,
) -> (Vec<AuthorSample>, Vec<String>) {
    let Some(ann) = annotations else {
        return (samples, vec!["no intent annotations supplied; all authors kept".into()]);
    };
    let warnings: Vec<String> = ann
        .keys()
        .filter(|id| !samples.iter().any(|s| &s.author_id == *id))
        .map(|id| format!("annotation for unknown author `{id}` ignored"))
        .collect();
    let kept: Vec<AuthorSample> = samples
        .into_iter()
        .filter_map(|s| match ann.get(&s.author_id) {
            Some(Annotation::Excluded(_)) => None,
            Some(Annotation::Intents(v)) => Some(s.with_intents(v.clone())),
            None => Some(s),
        })
        .collect();
    for w in &warnings {
        tracing::warn!("{w}");
    }
    (kept, warnings)
}

pub const RELATIONSHIP_VOCABULARY: [&str; 4] = ["No relation", "In Relation", "Married", "Divorced"];

/// Warnings for relationship values outside the inference prompt's options.
pub fn vocabulary_report(samples: &[AuthorSample]) -> Vec<String> {
    samples
        .iter()
        .filter_map(|s| {
            let v = s.ground_truth.get(&AttributeKind::RelationshipStatus)?;
            (!RELATIONSHIP_VOCABULARY.iter().any(|o| o.eq_ignore_ascii_case(v.trim())))
                .then(|| format!("author `{}`: relationship_status `{v}` outside vocabulary", s.author_id))
        })
        .collect()
}

/// Content hash of the sample list, order-sensitive.
pub fn fingerprint(samples: &[AuthorSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(serde_json::to_vec(s).expect("samples serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<AuthorSample>,
    pub fingerprint: String,
    pub report: IngestReport,
    pub conflicts: Vec<AttributeConflict>,
}

impl Dataset {
    pub fn from_samples(samples: Vec<AuthorSample>) -> Self {
        Self {
            fingerprint: fingerprint(&samples),
            samples,
            report: IngestReport::default(),
            conflicts: Vec::new(),
        }
    }
}

/// Ingest, aggregate and (optionally) curate in one step.
pub fn load_dataset(path: &Path, annotations: Option<&Path>) -> Result<Dataset, CorpusError> {
    let (comments, mut report) = ingest(path)?;
    let (samples, conflicts) = aggregate_authors(&comments);
    for c in &conflicts {
        report.warnings.push(format!(
            "author `{}`: conflicting {} values `{}` and `{}`; kept the first",
            c.author_id, c.attribute, c.kept, c.rejected
        ));
    }
    let ann = annotations.map(load_annotations).transpose()?;
    let (samples, notes) = filter_intent_clarity(samples, ann.as_ref());
    report.warnings.extend(notes);
    report.warnings.extend(vocabulary_report(&samples));
    Ok(Dataset { fingerprint: fingerprint(&samples), samples, report, conflicts })
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"{"author_id": "a", "text": "one", "attributes": {"age": 30}}
{"author_id": "b", "text": "two", "attributes": {"Sex": "female"}, "subreddit": "x"}
{"author_id": "a", "text": "three", "attributes": {"age": "31", "location": "Oslo, Norway"}}
"#;

    #[test]
    fn happy_path_and_skip_policy() {
        let (c, r) = ingest_str(THREE).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].attributes[&AttributeKind::Age], "30");
        assert_eq!(c[1].attributes[&AttributeKind::Gender], "female");
        assert_eq!(c[1].metadata["subreddit"], "x");
        assert_eq!(r.skipped, 0);
        let broken = THREE.replacen("{\"author_id\": \"b\"", "{author_id: b", 1);
        let (c, r) = ingest_str(&broken).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(r.skipped, 1);
        assert!(r.warnings[0].starts_with("line 2:"));
        assert_eq!(ingest_str("").unwrap_err().kind(), "all_lines_malformed");
    }

    #[test]
    fn grouping_and_conflicts() {
        let (c, _) = ingest_str(THREE).unwrap();
        let (samples, conflicts) = aggregate_authors(&c);
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].author_id, "a");
        assert_eq!(samples[0].comments, vec!["one", "three"]);
        assert_eq!(samples[0].ground_truth[&AttributeKind::Age], "30");
        assert_eq!(samples[0].ground_truth[&AttributeKind::Location], "Oslo, Norway");
        assert_eq!(conflicts.len(), 1);
        assert_eq!((conflicts[0].kept.as_str(), conflicts[0].rejected.as_str()), ("30", "31"));
    }

    #[test]
    fn curation_filter() {
        let (c, _) = ingest_str(THREE).unwrap();
        let (samples, _) = aggregate_authors(&c);
        let ann: Annotations = serde_json::from_str(
            r#"{"a": "excluded", "b": {"I1": 0.5}, "zzz": "excluded"}"#,
        )
        .unwrap();
        let (kept, warnings) = filter_intent_clarity(samples.clone(), Some(&ann));
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].author_id, "b");
        assert!(kept[0].annotated_intents.is_some());
        assert_eq!(warnings.len(), 1);
        let (all, notes) = filter_intent_clarity(samples, None);
        assert_eq!(all.len(), 2);
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn fingerprint_is_order_sensitive() {
        let (c, _) = ingest_str(THREE).unwrap();
        let (mut samples, _) = aggregate_authors(&c);
        let f = fingerprint(&samples);
        assert_eq!(f, fingerprint(&samples));
        samples.reverse();
        assert_ne!(f, fingerprint(&samples));
    }
}
