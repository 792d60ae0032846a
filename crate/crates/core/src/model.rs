//! Shared domain types: intents, attributes, evidence chains, exposure levels
//! and the per-sample anonymization result.
//!
//! Everything here is an immutable value type; validation happens at
//! construction and on deserialization, so a value that exists is valid.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown intent identifier `{0}`")]
    UnknownIntent(String),
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),
    #[error("unknown exposure level `{0}`")]
    UnknownLevel(String),
    #[error("weight for {intent} is {weight}, expected a value in [0, 1]")]
    WeightOutOfRange { intent: IntentId, weight: f64 },
    #[error("certainty {0} outside 1..=5")]
    CertaintyOutOfRange(i64),
    #[error("risk map invalid: {0}")]
    InvalidRiskMap(String),
    #[error("author sample `{0}` has no comments")]
    EmptyComments(String),
    #[error("author sample `{author}` has an empty ground-truth value for {attribute}")]
    EmptyGroundTruth { author: String, attribute: AttributeKind },
    #[error("inference for {0} has no guesses")]
    NoGuesses(AttributeKind),
    #[error("evidence step has no evidence spans")]
    EmptyEvidence,
    #[error("scene `{0}` is not part of the taxonomy")]
    UnknownScene(String),
}

/// The five pragmatic intents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IntentId {
    I1,
    I2,
    I3,
    I4,
    I5,
}

impl IntentId {
    pub const ALL: [IntentId; 5] = [IntentId::I1, IntentId::I2, IntentId::I3, IntentId::I4, IntentId::I5];

    pub fn as_str(self) -> &'static str {
        match self {
            IntentId::I1 => "I1",
            IntentId::I2 => "I2",
            IntentId::I3 => "I3",
            IntentId::I4 => "I4",
            IntentId::I5 => "I5",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            IntentId::I1 => "Self-expression",
            IntentId::I2 => "Social interaction",
            IntentId::I3 => "Professional showcase",
            IntentId::I4 => "Information sharing",
            IntentId::I5 => "Sensitive disclosure",
        }
    }
}

impl fmt::Display for IntentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntentId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "I1" => Ok(IntentId::I1),
            "I2" => Ok(IntentId::I2),
            "I3" => Ok(IntentId::I3),
            "I4" => Ok(IntentId::I4),
            "I5" => Ok(IntentId::I5),
            other => Err(ModelError::UnknownIntent(other.to_string())),
        }
    }
}

/// Weights over the five intents. Absent intents have weight 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<IntentId, f64>", into = "BTreeMap<IntentId, f64>")]
pub struct IntentVector {
    weights: BTreeMap<IntentId, f64>,
}

impl IntentVector {
    pub fn new(weights: impl IntoIterator<Item = (IntentId, f64)>) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for (intent, weight) in weights {
            if !(0.0..=1.0).contains(&weight) {
                return Err(ModelError::WeightOutOfRange { intent, weight });
            }
            map.insert(intent, weight);
        }
        Ok(Self { weights: map })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn weight(&self, intent: IntentId) -> f64 {
        self.weights.get(&intent).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (IntentId, f64)> + '_ {
        self.weights.iter().map(|(k, v)| (*k, *v))
    }

    /// True when no intent carries positive weight.
    pub fn is_empty(&self) -> bool {
        self.weights.values().all(|w| *w <= 0.0)
    }

    /// Intents ordered by weight descending; ties keep identifier order.
    /// Only positive weights are ranked.
    pub fn ranked(&self) -> Vec<IntentId> {
        let mut ids: Vec<IntentId> = IntentId::ALL
            .into_iter()
            .filter(|id| self.weight(*id) > 0.0)
            .collect();
        ids.sort_by(|a, b| {
            self.weight(*b)
                .partial_cmp(&self.weight(*a))
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(b))
        });
        ids
    }

    /// Same weights with every intent written out, zeros included.
    pub fn dense(&self) -> BTreeMap<IntentId, f64> {
        IntentId::ALL.into_iter().map(|id| (id, self.weight(id))).collect()
    }
}

impl TryFrom<BTreeMap<IntentId, f64>> for IntentVector {
    type Error = ModelError;

    fn try_from(value: BTreeMap<IntentId, f64>) -> Result<Self, Self::Error> {
        IntentVector::new(value)
    }
}

impl From<IntentVector> for BTreeMap<IntentId, f64> {
    fn from(value: IntentVector) -> Self {
        value.weights
    }
}

/// Intents whose weight is positive and at least `threshold`.
pub fn active_intents(v: &IntentVector, threshold: f64) -> BTreeSet<IntentId> {
    v.iter()
        .filter(|(_, w)| *w > 0.0 && *w >= threshold)
        .map(|(id, _)| id)
        .collect()
}

/// The eight personal attributes targeted by the adversary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Age,
    Education,
    Gender,
    Income,
    Location,
    RelationshipStatus,
    Occupation,
    Pobp,
}

impl AttributeKind {
    /// Table order: Age, Edu, Gnd, Inc, Loc, Mar, Occ, PoB.
    pub const ALL: [AttributeKind; 8] = [
        AttributeKind::Age,
        AttributeKind::Education,
        AttributeKind::Gender,
        AttributeKind::Income,
        AttributeKind::Location,
        AttributeKind::RelationshipStatus,
        AttributeKind::Occupation,
        AttributeKind::Pobp,
    ];

    /// Key used by the inference prompt and its JSON output.
    pub fn key(self) -> &'static str {
        match self {
            AttributeKind::Age => "age",
            AttributeKind::Education => "education",
            AttributeKind::Gender => "gender",
            AttributeKind::Income => "income",
            AttributeKind::Location => "location",
            AttributeKind::RelationshipStatus => "relationship_status",
            AttributeKind::Occupation => "occupation",
            AttributeKind::Pobp => "pobp",
        }
    }

    /// Short row label used in reports.
    pub fn table_label(self) -> &'static str {
        match self {
            AttributeKind::Age => "Age",
            AttributeKind::Education => "Edu",
            AttributeKind::Gender => "Gnd",
            AttributeKind::Income => "Inc",
            AttributeKind::Location => "Loc",
            AttributeKind::RelationshipStatus => "Mar",
            AttributeKind::Occupation => "Occ",
            AttributeKind::Pobp => "PoB",
        }
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AttributeKind {
    type Err = ModelError;

    /// Accepts the canonical keys plus the spellings that show up in
    /// dataset exports and model output.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        let kind = match norm.as_str() {
            "age" => AttributeKind::Age,
            "education" | "edu" | "education_level" => AttributeKind::Education,
            "gender" | "sex" | "gnd" => AttributeKind::Gender,
            "income" | "inc" | "income_level" | "annual_income" => AttributeKind::Income,
            "location" | "loc" | "city_country" | "current_location" => AttributeKind::Location,
            "relationship_status" | "mar" | "married" | "relationship" => {
                AttributeKind::RelationshipStatus
            }
            "occupation" | "occ" | "job" => AttributeKind::Occupation,
            "pobp" | "pob" | "birth_city_country" | "place_of_birth" => AttributeKind::Pobp,
            _ => return Err(ModelError::UnknownAttribute(s.to_string())),
        };
        Ok(kind)
    }
}

/// Exposure granularity. Strictness increases from `L0` to `Ban`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExposureLevel {
    L0,
    L1,
    L2,
    L3,
    #[serde(rename = "BAN")]
    Ban,
}

impl ExposureLevel {
    pub const ALL: [ExposureLevel; 5] = [
        ExposureLevel::L0,
        ExposureLevel::L1,
        ExposureLevel::L2,
        ExposureLevel::L3,
        ExposureLevel::Ban,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExposureLevel::L0 => "L0",
            ExposureLevel::L1 => "L1",
            ExposureLevel::L2 => "L2",
            ExposureLevel::L3 => "L3",
            ExposureLevel::Ban => "BAN",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ExposureLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExposureLevel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "L0" => Ok(ExposureLevel::L0),
            "L1" => Ok(ExposureLevel::L1),
            "L2" => Ok(ExposureLevel::L2),
            "L3" => Ok(ExposureLevel::L3),
            "BAN" => Ok(ExposureLevel::Ban),
            _ => Err(ModelError::UnknownLevel(s.to_string())),
        }
    }
}

/// Compares strictness: `Less` means `a` is less strict than `b`.
pub fn level_order(a: ExposureLevel, b: ExposureLevel) -> Ordering {
    a.cmp(&b)
}

/// Numeric risk bound attached to each exposure level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<ExposureLevel, f64>", into = "BTreeMap<ExposureLevel, f64>")]
pub struct LevelRiskMap {
    bounds: [f64; 5],
}

impl Default for LevelRiskMap {
    fn default() -> Self {
        Self { bounds: [0.8, 0.6, 0.4, 0.2, 0.0] }
    }
}

impl LevelRiskMap {
    /// Bounds must lie in [0, 1], strictly decrease with strictness, and
    /// `BAN` must map to exactly zero.
    pub fn new(bounds: [f64; 5]) -> Result<Self, ModelError> {
        if let Some(b) = bounds.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(ModelError::InvalidRiskMap(format!("bound {b} outside [0, 1]")));
        }
        for pair in ExposureLevel::ALL.windows(2) {
            let (lo, hi) = (bounds[pair[0].index()], bounds[pair[1].index()]);
            if lo <= hi {
                return Err(ModelError::InvalidRiskMap(format!(
                    "bound for {} ({lo}) must exceed bound for {} ({hi})",
                    pair[0], pair[1]
                )));
            }
        }
        if bounds[ExposureLevel::Ban.index()] != 0.0 {
            return Err(ModelError::InvalidRiskMap("BAN must map to 0".into()));
        }
        Ok(Self { bounds })
    }

    pub fn bound(&self, level: ExposureLevel) -> f64 {
        self.bounds[level.index()]
    }
}

impl TryFrom<BTreeMap<ExposureLevel, f64>> for LevelRiskMap {
    type Error = ModelError;

    fn try_from(value: BTreeMap<ExposureLevel, f64>) -> Result<Self, Self::Error> {
        let mut bounds = [0.0; 5];
        for level in ExposureLevel::ALL {
            bounds[level.index()] = *value
                .get(&level)
                .ok_or_else(|| ModelError::InvalidRiskMap(format!("missing bound for {level}")))?;
        }
        LevelRiskMap::new(bounds)
    }
}

impl From<LevelRiskMap> for BTreeMap<ExposureLevel, f64> {
    fn from(value: LevelRiskMap) -> Self {
        ExposureLevel::ALL.into_iter().map(|l| (l, value.bound(l))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureBudget {
    pub attribute: AttributeKind,
    pub level: ExposureLevel,
    pub risk_bound: f64,
}

impl ExposureBudget {
    pub fn from_level(attribute: AttributeKind, level: ExposureLevel, map: &LevelRiskMap) -> Self {
        Self { attribute, level, risk_bound: map.bound(level) }
    }
}

/// A quoted span offered as evidence, with the outcome of the verbatim check.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub text: String,
    pub verbatim: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceStep {
    pub step: String,
    pub evidence: Vec<EvidenceSpan>,
    pub explanation: String,
}

impl EvidenceStep {
    /// Builds a step and checks each span against `source`.
    pub fn checked(
        step: impl Into<String>,
        spans: impl IntoIterator<Item = String>,
        explanation: impl Into<String>,
        source: &str,
    ) -> Result<Self, ModelError> {
        let evidence: Vec<EvidenceSpan> = spans
            .into_iter()
            .filter(|s| !s.trim().is_empty())
            .map(|text| {
                let verbatim = source.contains(text.as_str());
                EvidenceSpan { text, verbatim }
            })
            .collect();
        if evidence.is_empty() {
            return Err(ModelError::EmptyEvidence);
        }
        Ok(Self { step: step.into(), evidence, explanation: explanation.into() })
    }

    /// A step is validated when every quoted span occurs in the source.
    pub fn is_verbatim(&self) -> bool {
        self.evidence.iter().all(|e| e.verbatim)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceChain {
    pub attribute: AttributeKind,
    pub steps: Vec<EvidenceStep>,
}

impl EvidenceChain {
    pub fn empty(attribute: AttributeKind) -> Self {
        Self { attribute, steps: Vec::new() }
    }

    pub fn validated_steps(&self) -> impl Iterator<Item = &EvidenceStep> {
        self.steps.iter().filter(|s| s.is_verbatim())
    }

    /// Chains with no validated step are not rewriting targets.
    pub fn is_actionable(&self) -> bool {
        self.validated_steps().next().is_some()
    }

    /// Distinct verbatim spans in chain order.
    pub fn verbatim_spans(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.validated_steps()
            .flat_map(|s| s.evidence.iter())
            .map(|e| e.text.as_str())
            .filter(|t| seen.insert(*t))
            .collect()
    }
}

/// Scene identifier, validated against a [`SceneTaxonomy`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneId(String);

impl SceneId {
    pub const DEFAULT: &'static str = "public_forum";

    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn public_forum() -> Self {
        Self(Self::DEFAULT.into())
    }
}

impl fmt::Display for SceneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneTaxonomy {
    scenes: Vec<SceneId>,
}

impl Default for SceneTaxonomy {
    fn default() -> Self {
        Self::new(["public_forum", "support_community", "professional_network", "private_group"])
    }
}

impl SceneTaxonomy {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        Self { scenes: names.into_iter().map(|n| SceneId::new(n)).collect() }
    }

    pub fn contains(&self, scene: &SceneId) -> bool {
        self.scenes.contains(scene)
    }

    pub fn lookup(&self, name: &str) -> Result<SceneId, ModelError> {
        let name = name.trim();
        self.scenes
            .iter()
            .find(|s| s.as_str().eq_ignore_ascii_case(name))
            .cloned()
            .ok_or_else(|| ModelError::UnknownScene(name.to_string()))
    }

    pub fn scenes(&self) -> &[SceneId] {
        &self.scenes
    }
}

/// All comments of one author plus whatever labels the dataset carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorSample {
    pub author_id: String,
    pub comments: Vec<String>,
    #[serde(default)]
    pub ground_truth: BTreeMap<AttributeKind, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotated_intents: Option<IntentVector>,
}

impl AuthorSample {
    pub fn new(
        author_id: impl Into<String>,
        comments: Vec<String>,
        ground_truth: BTreeMap<AttributeKind, String>,
    ) -> Result<Self, ModelError> {
        let author_id = author_id.into();
        if comments.is_empty() {
            return Err(ModelError::EmptyComments(author_id));
        }
        if let Some((attribute, _)) = ground_truth.iter().find(|(_, v)| v.trim().is_empty()) {
            return Err(ModelError::EmptyGroundTruth { author: author_id, attribute: *attribute });
        }
        Ok(Self { author_id, comments, ground_truth, annotated_intents: None })
    }

    pub fn with_intents(mut self, intents: IntentVector) -> Self {
        self.annotated_intents = Some(intents);
        self
    }

    /// Comments joined into the single text handed to every prompt.
    pub fn text(&self) -> String {
        self.comments.join("\n\n")
    }
}

/// Adversary output for one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeInference {
    pub attribute: AttributeKind,
    pub reasoning: String,
    pub guesses: Vec<String>,
    pub certainty: u8,
}

impl AttributeInference {
    pub fn new(
        attribute: AttributeKind,
        reasoning: impl Into<String>,
        guesses: Vec<String>,
        certainty: i64,
    ) -> Result<Self, ModelError> {
        if !(1..=5).contains(&certainty) {
            return Err(ModelError::CertaintyOutOfRange(certainty));
        }
        let guesses: Vec<String> = guesses
            .into_iter()
            .map(|g| g.trim().to_string())
            .filter(|g| !g.is_empty())
            .take(3)
            .collect();
        if guesses.is_empty() {
            return Err(ModelError::NoGuesses(attribute));
        }
        Ok(Self { attribute, reasoning: reasoning.into(), guesses, certainty: certainty as u8 })
    }

    pub fn top1(&self) -> &str {
        &self.guesses[0]
    }
}

/// Whether the measured residual risk respects the attribute's bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetCheck {
    Satisfied,
    Violated,
    /// Risk could not be measured (adversary call failed).
    Unverified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SampleStatus {
    Completed,
    Failed { stage: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnonymizationResult {
    pub author_id: String,
    pub original: String,
    pub anonymized: String,
    pub intent_vector: IntentVector,
    pub scene: SceneId,
    pub budgets: Vec<ExposureBudget>,
    /// Anonymization rounds performed. The no-op path counts as one round.
    /// Samples that fail before rewriting report zero.
    pub rounds_used: u32,
    pub residual_risk: BTreeMap<AttributeKind, f64>,
    pub budget_satisfied: BTreeMap<AttributeKind, BudgetCheck>,
    #[serde(flatten)]
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl AnonymizationResult {
    pub fn is_failed(&self) -> bool {
        matches!(self.status, SampleStatus::Failed { .. })
    }

    pub fn all_budgets_satisfied(&self) -> bool {
        self.budget_satisfied.values().all(|c| *c == BudgetCheck::Satisfied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(pairs: &[(IntentId, f64)]) -> IntentVector {
        IntentVector::new(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn active_intents_examples() {
        use IntentId::*;
        let v = iv(&[(I1, 0.5), (I2, 0.8), (I5, 0.7)]);
        assert_eq!(active_intents(&v, 0.0), BTreeSet::from([I1, I2, I5]));
        assert!(active_intents(&IntentVector::empty(), 0.0).is_empty());
        let v = iv(&[(I1, 0.5), (I2, 0.1)]);
        assert_eq!(active_intents(&v, 0.3), BTreeSet::from([I1]));
    }

    #[test]
    fn zero_weight_is_never_active() {
        let v = iv(&[(IntentId::I3, 0.0)]);
        assert!(active_intents(&v, 0.0).is_empty());
        assert!(v.is_empty());
    }

    #[test]
    fn weights_outside_unit_interval_rejected() {
        assert!(IntentVector::new([(IntentId::I1, 1.2)]).is_err());
        assert!(IntentVector::new([(IntentId::I1, -0.1)]).is_err());
        let parsed: Result<IntentVector, _> = serde_json::from_str(r#"{"I2": 3}"#);
        assert!(parsed.is_err());
        let parsed: Result<IntentVector, _> = serde_json::from_str(r#"{"I6": 0.3}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn level_order_examples() {
        use ExposureLevel::*;
        assert_eq!(level_order(L0, Ban), Ordering::Less);
        assert_eq!(level_order(L2, L2), Ordering::Equal);
        assert_eq!(level_order(L3, L1), Ordering::Greater);
        assert_eq!(ExposureLevel::ALL.iter().max(), Some(&Ban));
    }

    #[test]
    fn level_serde_names() {
        assert_eq!(serde_json::to_string(&ExposureLevel::Ban).unwrap(), "\"BAN\"");
        assert_eq!("ban".parse::<ExposureLevel>().unwrap(), ExposureLevel::Ban);
        assert!("L4".parse::<ExposureLevel>().is_err());
    }

    #[test]
    fn default_risk_map() {
        let m = LevelRiskMap::default();
        assert_eq!(m.bound(ExposureLevel::L0), 0.8);
        assert_eq!(m.bound(ExposureLevel::L1), 0.6);
        assert_eq!(m.bound(ExposureLevel::L2), 0.4);
        assert_eq!(m.bound(ExposureLevel::L3), 0.2);
        assert_eq!(m.bound(ExposureLevel::Ban), 0.0);
    }

    #[test]
    fn risk_map_rejects_non_monotone_and_nonzero_ban() {
        assert!(LevelRiskMap::new([0.8, 0.8, 0.4, 0.2, 0.0]).is_err());
        assert!(LevelRiskMap::new([0.8, 0.6, 0.7, 0.2, 0.0]).is_err());
        assert!(LevelRiskMap::new([0.8, 0.6, 0.4, 0.2, 0.1]).is_err());
        assert!(LevelRiskMap::new([1.5, 0.6, 0.4, 0.2, 0.0]).is_err());
        let json = r#"{"L0":0.9,"L1":0.5,"L2":0.3,"L3":0.1,"BAN":0}"#;
        let m: LevelRiskMap = serde_json::from_str(json).unwrap();
        assert_eq!(m.bound(ExposureLevel::L0), 0.9);
        assert!(serde_json::from_str::<LevelRiskMap>(r#"{"L0":0.9}"#).is_err());
    }

    #[test]
    fn attribute_aliases() {
        assert_eq!("sex".parse::<AttributeKind>().unwrap(), AttributeKind::Gender);
        assert_eq!("city_country".parse::<AttributeKind>().unwrap(), AttributeKind::Location);
        assert_eq!(
            "birth_city_country".parse::<AttributeKind>().unwrap(),
            AttributeKind::Pobp
        );
        assert_eq!(
            "Relationship Status".parse::<AttributeKind>().unwrap(),
            AttributeKind::RelationshipStatus
        );
        assert!("shoe_size".parse::<AttributeKind>().is_err());
        assert_eq!(AttributeKind::ALL.len(), 8);
    }

    #[test]
    fn evidence_spans_checked_against_source() {
        let src = "over here in Oslo we picnic in Frogner Park";
        let step = EvidenceStep::checked(
            "city",
            vec!["Oslo".to_string(), "Bergen".to_string()],
            "names a city",
            src,
        )
        .unwrap();
        assert!(step.evidence[0].verbatim);
        assert!(!step.evidence[1].verbatim);
        assert!(!step.is_verbatim());
        assert!(EvidenceStep::checked("x", vec![" ".to_string()], "", src).is_err());
    }

    #[test]
    fn chain_actionability() {
        let src = "Frogner Park in Oslo";
        let good = EvidenceStep::checked("a", vec!["Oslo".into()], "", src).unwrap();
        let bad = EvidenceStep::checked("b", vec!["Paris".into()], "", src).unwrap();
        let chain = EvidenceChain { attribute: AttributeKind::Location, steps: vec![bad.clone()] };
        assert!(!chain.is_actionable());
        let chain = EvidenceChain {
            attribute: AttributeKind::Location,
            steps: vec![bad, good.clone(), good],
        };
        assert!(chain.is_actionable());
        assert_eq!(chain.verbatim_spans(), vec!["Oslo"]);
    }

    #[test]
    fn author_sample_validation() {
        assert!(AuthorSample::new("a", vec![], BTreeMap::new()).is_err());
        let gt = BTreeMap::from([(AttributeKind::Age, "  ".to_string())]);
        assert!(AuthorSample::new("a", vec!["hi".into()], gt).is_err());
        let s = AuthorSample::new("a", vec!["one".into(), "two".into()], BTreeMap::new()).unwrap();
        assert_eq!(s.text(), "one\n\ntwo");
    }

    #[test]
    fn inference_validation() {
        assert!(AttributeInference::new(AttributeKind::Age, "", vec!["30".into()], 0).is_err());
        assert!(AttributeInference::new(AttributeKind::Age, "", vec!["30".into()], 6).is_err());
        assert!(AttributeInference::new(AttributeKind::Age, "", vec![" ".into()], 3).is_err());
        let inf = AttributeInference::new(
            AttributeKind::Age,
            "",
            vec!["30".into(), "31".into(), "32".into(), "33".into()],
            3,
        )
        .unwrap();
        assert_eq!(inf.guesses.len(), 3);
        assert_eq!(inf.top1(), "30");
    }

    #[test]
    fn ranked_breaks_ties_by_id() {
        use IntentId::*;
        let v = iv(&[(I3, 0.5), (I1, 0.5), (I2, 0.9), (I4, 0.0)]);
        assert_eq!(v.ranked(), vec![I2, I1, I3]);
    }

    #[test]
    fn scene_taxonomy_lookup() {
        let t = SceneTaxonomy::default();
        assert_eq!(t.lookup("Support_Community").unwrap().as_str(), "support_community");
        assert!(t.lookup("dark_web").is_err());
        assert!(t.contains(&SceneId::public_forum()));
    }
}
