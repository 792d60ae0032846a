//! Attribute-inference attack and the prediction-validation judge.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::ModelProfile;
use crate::ledger::{CallCtx, StageError};
use crate::model::{AttributeInference, AttributeKind};
use crate::promptkit::{parse_inferences, parse_validation, ParseError, Parsed, PromptFamily, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationVerdict {
    Yes,
    No,
    LessPrecise,
}

impl ValidationVerdict {
    pub fn as_prompt_str(self) -> &'static str {
        match self {
            ValidationVerdict::Yes => "yes",
            ValidationVerdict::No => "no",
            ValidationVerdict::LessPrecise => "less precise",
        }
    }

    pub fn score(self, less_precise_credit: f64) -> f64 {
        match self {
            ValidationVerdict::Yes => 1.0,
            ValidationVerdict::No => 0.0,
            ValidationVerdict::LessPrecise => less_precise_credit,
        }
    }
}

impl FromStr for ValidationVerdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', '-'], " ");
        match norm.split_whitespace().collect::<Vec<_>>().join(" ").as_str() {
            "yes" => Ok(ValidationVerdict::Yes),
            "no" => Ok(ValidationVerdict::No),
            "less precise" => Ok(ValidationVerdict::LessPrecise),
            _ => Err(s.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyStatistic {
    #[default]
    Top1,
    Top3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringPolicy {
    /// Credit for a `less precise` verdict; 0 or 0.5.
    pub less_precise_credit: f64,
    pub statistic: AccuracyStatistic,
}

impl Default for ScoringPolicy {
    fn default() -> Self {
        Self { less_precise_credit: 0.0, statistic: AccuracyStatistic::Top1 }
    }
}

impl ScoringPolicy {
    pub fn pick(&self, outcome: &AttackOutcome) -> f64 {
        match self.statistic {
            AccuracyStatistic::Top1 => outcome.score_top1,
            AccuracyStatistic::Top3 => outcome.score_top3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attribute: AttributeKind,
    /// `None` when the adversary gave no inference for this attribute.
    pub inference: Option<AttributeInference>,
    pub verdicts: Vec<ValidationVerdict>,
    pub score_top1: f64,
    pub score_top3: f64,
    /// Whether the dataset labels this attribute; unlabeled outcomes are
    /// excluded from privacy aggregation.
    pub labeled: bool,
}

/// Scores aligned verdicts: top-1 from the first guess, top-3 the best of all.
pub fn score_outcome(
    inference: &AttributeInference,
    verdicts: &[ValidationVerdict],
    policy: &ScoringPolicy,
) -> AttackOutcome {
    debug_assert_eq!(inference.guesses.len(), verdicts.len());
    let scores: Vec<f64> = verdicts.iter().map(|v| v.score(policy.less_precise_credit)).collect();
    AttackOutcome {
        attribute: inference.attribute,
        inference: Some(inference.clone()),
        verdicts: verdicts.to_vec(),
        score_top1: scores.first().copied().unwrap_or(0.0),
        score_top3: scores.iter().copied().fold(0.0, f64::max),
        labeled: true,
    }
}

pub fn absent_outcome(attribute: AttributeKind, labeled: bool) -> AttackOutcome {
    AttackOutcome {
        attribute,
        inference: None,
        verdicts: Vec::new(),
        score_top1: 0.0,
        score_top3: 0.0,
        labeled,
    }
}

/// Binding for the attribute slot of the inference prompt.
pub fn attribute_phrase(requested: &BTreeSet<AttributeKind>) -> String {
    if requested.len() == AttributeKind::ALL.len() {
        return "[All of the above attributes]\n\trelationship_status, age, gender, pobp, location, education, income, and occupation".into();
    }
    requested.iter().map(|a| a.key()).collect::<Vec<_>>().join(", ")
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Binding for the pair slot of the validation prompt.
pub fn pair_lines(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(gt, pred)| format!("Ground truth: {}\nPrediction: {}", one_line(gt), one_line(pred)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Runs the inference prompt. Requested attributes the adversary skips
/// are absent from the result, never invented.
pub async fn infer_attributes(
    ctx: &CallCtx<'_>,
    stage: &str,
    text: &str,
    requested: &BTreeSet<AttributeKind>,
    profile: &ModelProfile,
) -> Result<Vec<AttributeInference>, StageError> {
    if requested.is_empty() {
        return Err(StageError::InvalidInput("no attributes requested".into()));
    }
    let prompt = PromptTemplate::builtin(PromptFamily::PrivacyInference).render([
        ("user_context", text.to_string()),
        ("inference_attributes_types", attribute_phrase(requested)),
    ])?;
    let parsed = ctx
        .invoke(stage, profile, &prompt, |raw| match parse_inferences(raw, requested) {
            Err(ParseError::EmptyResult) => Ok(Parsed { value: Vec::new(), warnings: Vec::new() }),
            other => other,
        })
        .await?;
    Ok(parsed.value)
}

pub const DEFAULT_PAIRS_PER_CALL: usize = 20;

async fn validate_batch(
    ctx: &CallCtx<'_>,
    pairs: &[(String, String)],
    profile: &ModelProfile,
) -> Result<Vec<ValidationVerdict>, StageError> {
    let template = PromptTemplate::builtin(PromptFamily::InferenceValidation);
    let prompt = template.render([("gt_infer_pairs", pair_lines(pairs))])?;
    let n = pairs.len();
    let parser = |raw: &str| parse_validation(raw, n);
    match ctx.invoke("validation", profile, &prompt, parser).await {
        Err(StageError::Parse(ParseError::LengthMismatch { .. })) if n > 0 => {}
        other => return other.map(|p| p.value),
    }
    // one retry of the whole batch, bypassing the cache
    match ctx.without_cache().invoke("validation", profile, &prompt, parser).await {
        Err(StageError::Parse(ParseError::LengthMismatch { .. })) if n > 1 => {}
        other => return other.map(|p| p.value),
    }
    let mut out = Vec::with_capacity(n);
    for pair in pairs {
        let single = template.render([("gt_infer_pairs", pair_lines(std::slice::from_ref(pair)))])?;
        let v = ctx.invoke("validation", profile, &single, |raw| parse_validation(raw, 1)).await?;
        out.push(v.value[0]);
    }
    Ok(out)
}

/// One verdict per `(ground truth, prediction)` pair, in order. Pairs with
/// an empty ground truth are `no` without a model call.
pub async fn validate(
    ctx: &CallCtx<'_>,
    pairs: &[(String, String)],
    profile: &ModelProfile,
    pairs_per_call: usize,
) -> Result<Vec<ValidationVerdict>, StageError> {
    let mut verdicts: Vec<Option<ValidationVerdict>> = pairs
        .iter()
        .map(|(gt, _)| gt.trim().is_empty().then_some(ValidationVerdict::No))
        .collect();
    let pending: Vec<usize> = (0..pairs.len()).filter(|i| verdicts[*i].is_none()).collect();
    for chunk in pending.chunks(pairs_per_call.max(1)) {
        let batch: Vec<(String, String)> = chunk.iter().map(|i| pairs[*i].clone()).collect();
        let got = validate_batch(ctx, &batch, profile).await?;
        for (i, v) in chunk.iter().zip(got) {
            verdicts[*i] = Some(v);
        }
    }
    Ok(verdicts.into_iter().map(|v| v.expect("every pair resolved")).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub adversary: ModelProfile,
    pub validator: ModelProfile,
    pub policy: ScoringPolicy,
    pub pairs_per_call: usize,
}

/// Full attack on one text: infer all eight attributes, validate every
/// guess against the ground truth, score per attribute.
pub async fn attack(
    ctx: &CallCtx<'_>,
    text: &str,
    ground_truth: &BTreeMap<AttributeKind, String>,
    cfg: &AttackConfig,
) -> Result<Vec<AttackOutcome>, StageError> {
    let all: BTreeSet<AttributeKind> = AttributeKind::ALL.into_iter().collect();
    let inferences = infer_attributes(ctx, "attack", text, &all, &cfg.adversary).await?;
    let mut pairs = Vec::new();
    let mut spans = Vec::new();
    for inf in &inferences {
        let gt = ground_truth.get(&inf.attribute).cloned().unwrap_or_default();
        spans.push(pairs.len()..pairs.len() + inf.guesses.len());
        pairs.extend(inf.guesses.iter().map(|g| (gt.clone(), g.clone())));
    }
    let verdicts = if pairs.is_empty() {
        Vec::new()
    } else {
        validate(ctx, &pairs, &cfg.validator, cfg.pairs_per_call).await?
    };
    Ok(AttributeKind::ALL
        .into_iter()
        .map(|attribute| {
            let labeled = ground_truth.contains_key(&attribute);
            match inferences.iter().position(|i| i.attribute == attribute) {
                Some(k) => {
                    let mut o = score_outcome(&inferences[k], &verdicts[spans[k].clone()], &cfg.policy);
                    o.labeled = labeled;
                    o
                }
                None => absent_outcome(attribute, labeled),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ValidationVerdict::*;

    fn inf(n: usize) -> AttributeInference {
        let guesses = ["a", "b", "c"][..n].iter().map(|s| s.to_string()).collect();
        AttributeInference::new(AttributeKind::Age, "", guesses, 3).unwrap()
    }

    #[test]
    fn scoring_examples() {
        let p = ScoringPolicy::default();
        let o = score_outcome(&inf(3), &[Yes, No, No], &p);
        assert_eq!((o.score_top1, o.score_top3), (1.0, 1.0));
        let o = score_outcome(&inf(3), &[LessPrecise, No, No], &p);
        assert_eq!(o.score_top1, 0.0);
        let o = score_outcome(&inf(3), &[No, Yes, No], &p);
        assert_eq!((o.score_top1, o.score_top3), (0.0, 1.0));
        let half = ScoringPolicy { less_precise_credit: 0.5, ..p };
        let o = score_outcome(&inf(2), &[LessPrecise, No], &half);
        assert_eq!((o.score_top1, o.score_top3), (0.5, 0.5));
    }

    #[test]
    fn verdict_normalization() {
        assert_eq!("YES".parse::<ValidationVerdict>().unwrap(), Yes);
        assert_eq!(" Less  Precise ".parse::<ValidationVerdict>().unwrap(), LessPrecise);
        assert_eq!("less_precise".parse::<ValidationVerdict>().unwrap(), LessPrecise);
        assert!("maybe".parse::<ValidationVerdict>().is_err());
    }

    #[test]
    fn attribute_phrasing() {
        let all: BTreeSet<_> = AttributeKind::ALL.into_iter().collect();
        assert!(attribute_phrase(&all).starts_with("[All of the above attributes]"));
        let some = BTreeSet::from([AttributeKind::Location, AttributeKind::Age]);
        assert_eq!(attribute_phrase(&some), "age, location");
    }

    #[test]
    fn pairs_render_one_per_line() {
        let pairs = vec![("usa".to_string(), "United\nStates".to_string())];
        assert_eq!(pair_lines(&pairs), "Ground truth: usa\nPrediction: United States");
    }
}
