//! Metric kernels: lexical overlap, judged utility, privacy aggregation,
//! the Overall trade-off score, intent-preservation metrics, similarity
//! histograms and token-level privacy contribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{infer_attributes, AttackOutcome, ScoringPolicy};
use crate::gateway::ModelProfile;
use crate::ledger::{CallCtx, StageError};
use crate::model::{active_intents, AttributeKind, IntentId, IntentVector};
use crate::promptkit::{parse_token_scores, parse_utility_judgment, PromptFamily, PromptTemplate, UtilityJudgment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("reference is empty")]
    EmptyReference,
    #[error("input is empty")]
    EmptyInput,
    #[error("original privacy must be positive")]
    ZeroOriginalPrivacy,
    #[error("gold intent vector has no positive weight")]
    EmptyGold,
    #[error("weights must be non-negative and sum to 1")]
    InvalidWeights,
}

/// Lowercases, splits on whitespace and emits every punctuation character
/// as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for c in word.chars() {
            if c.is_alphanumeric() {
                current.extend(c.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_lowercase().collect());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// Integer ingredients of sentence BLEU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuCounts {
    /// Clipped n-gram matches, orders 1 to 4.
    pub matches: [u64; 4],
    /// Candidate n-gram counts, orders 1 to 4.
    pub totals: [u64; 4],
    pub candidate_len: u64,
    pub reference_len: u64,
}

fn ngram_counts<'a>(tokens: &'a [String], n: usize) -> HashMap<&'a [String], u64> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn bleu_counts(candidate: &[String], reference: &[String]) -> BleuCounts {
    let mut matches = [0; 4];
    let mut totals = [0; 4];
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        totals[n - 1] = cand.values().sum();
        matches[n - 1] = cand
            .iter()
            .map(|(g, c)| (*c).min(refc.get(g).copied().unwrap_or(0)))
            .sum();
    }
    BleuCounts {
        matches,
        totals,
        candidate_len: candidate.len() as u64,
        reference_len: reference.len() as u64,
    }
}

impl BleuCounts {
    /// Geometric mean of the four precisions times the brevity penalty.
    /// Orders above one with no match use (m + 1) / (c + 1); a unigram
    /// precision of zero makes the score zero.
    pub fn score(&self) -> f64 {
        if self.matches[0] == 0 || self.candidate_len == 0 {
            return 0.0;
        }
        let log_sum: f64 = (0..4)
            .map(|i| {
                let (m, c) = (self.matches[i], self.totals[i]);
                let p = if m == 0 { 1.0 / (c as f64 + 1.0) } else { m as f64 / c as f64 };
                p.ln()
            })
            .sum();
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * (log_sum / 4.0).exp()
    }
}

/// Sentence-level BLEU-4 over token sequences.
pub fn bleu(candidate: &[String], reference: &[String]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    Ok(bleu_counts(candidate, reference).score())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge(candidate: &[String], reference: &[String]) -> Result<f64, MetricError> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    Ok(2.0 * p * r / (p + r))
}

pub fn bleu_text(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    bleu(&tokenize(candidate), &tokenize(reference))
}

pub fn rouge_text(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    rouge(&tokenize(candidate), &tokenize(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgedUtility {
    pub meaning: f64,
    pub readability: f64,
    /// 1 when the rewrite adds no new information.
    pub hallucination: f64,
}

impl From<UtilityJudgment> for JudgedUtility {
    fn from(j: UtilityJudgment) -> Self {
        Self {
            meaning: j.meaning / 10.0,
            readability: j.readability / 10.0,
            hallucination: f64::from(j.hallucination),
        }
    }
}

pub async fn judge_utility(
    ctx: &CallCtx<'_>,
    original: &str,
    anonymized: &str,
    profile: &ModelProfile,
) -> Result<JudgedUtility, StageError> {
    if original.trim().is_empty() || anonymized.trim().is_empty() {
        return Err(StageError::InvalidInput("utility judgment needs two non-empty texts".into()));
    }
    let prompt = PromptTemplate::builtin(PromptFamily::UtilityJudge)
        .render([("original_string", original), ("latest_string", anonymized)])?;
    let j = ctx.invoke("utility_judge", profile, &prompt, parse_utility_judgment).await?;
    Ok(j.value.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityScores {
    pub meaning: f64,
    pub readability: f64,
    pub hallucination: f64,
    pub bleu: f64,
    pub rouge: f64,
    pub utility_aggregate: f64,
}

impl UtilityScores {
    /// Scores of a text compared with itself.
    pub fn identity() -> Self {
        Self { meaning: 1.0, readability: 1.0, hallucination: 1.0, bleu: 1.0, rouge: 1.0, utility_aggregate: 1.0 }
    }

    /// Component-wise mean; `items` must be non-empty.
    pub fn mean(items: &[UtilityScores]) -> Self {
        let n = items.len() as f64;
        let avg = |f: fn(&UtilityScores) -> f64| items.iter().map(f).sum::<f64>() / n;
        Self {
            meaning: avg(|u| u.meaning),
            readability: avg(|u| u.readability),
            hallucination: avg(|u| u.hallucination),
            bleu: avg(|u| u.bleu),
            rouge: avg(|u| u.rouge),
            utility_aggregate: avg(|u| u.utility_aggregate),
        }
    }
}

/// Weights over (meaning, readability, hallucination, bleu, rouge).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct UtilityWeights([f64; 5]);

impl Default for UtilityWeights {
    fn default() -> Self {
        Self([0.2; 5])
    }
}

impl UtilityWeights {
    pub fn new(w: [f64; 5]) -> Result<Self, MetricError> {
        if w.iter().any(|x| !(*x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MetricError::InvalidWeights);
        }
        Ok(Self(w))
    }
}

impl TryFrom<[f64; 5]> for UtilityWeights {
    type Error = MetricError;

    fn try_from(w: [f64; 5]) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<UtilityWeights> for [f64; 5] {
    fn from(w: UtilityWeights) -> Self {
        w.0
    }
}

pub fn utility_aggregate(j: &JudgedUtility, bleu: f64, rouge: f64, weights: &UtilityWeights) -> f64 {
    let parts = [j.meaning, j.readability, j.hallucination, bleu, rouge];
    parts.iter().zip(weights.0).map(|(x, w)| x * w).sum()
}

pub fn utility_scores(j: &JudgedUtility, bleu: f64, rouge: f64, weights: &UtilityWeights) -> UtilityScores {
    UtilityScores {
        meaning: j.meaning,
        readability: j.readability,
        hallucination: j.hallucination,
        bleu,
        rouge,
        utility_aggregate: utility_aggregate(j, bleu, rouge, weights),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyScores {
    pub per_attribute: BTreeMap<AttributeKind, f64>,
    pub counts: BTreeMap<AttributeKind, usize>,
    pub micro: f64,
    pub macro_avg: f64,
}

/// Accuracy per attribute, pooled (micro) and averaged over attributes (macro).
/// Only labeled outcomes count.
pub fn privacy_aggregate<'a>(
    outcomes: impl IntoIterator<Item = &'a AttackOutcome>,
    policy: &ScoringPolicy,
) -> Result<PrivacyScores, MetricError> {
    let mut sums: BTreeMap<AttributeKind, (f64, usize)> = BTreeMap::new();
    for o in outcomes.into_iter().filter(|o| o.labeled) {
        let e = sums.entry(o.attribute).or_default();
        e.0 += policy.pick(o);
        e.1 += 1;
    }
    if sums.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let total: usize = sums.values().map(|(_, n)| n).sum();
    let micro = sums.values().map(|(s, _)| s).sum::<f64>() / total as f64;
    let per_attribute: BTreeMap<_, _> = sums.iter().map(|(a, (s, n))| (*a, s / *n as f64)).collect();
    let macro_avg = per_attribute.values().sum::<f64>() / per_attribute.len() as f64;
    Ok(PrivacyScores {
        counts: sums.iter().map(|(a, (_, n))| (*a, *n)).collect(),
        per_attribute,
        micro,
        macro_avg,
    })
}

/// Utility minus privacy normalized by the original text's privacy.
pub fn overall_score(utility: f64, privacy: f64, privacy_original: f64) -> Result<f64, MetricError> {
    if !(privacy_original > 0.0) {
        return Err(MetricError::ZeroOriginalPrivacy);
    }
    Ok(utility - privacy / privacy_original)
}

fn jaccard(a: &BTreeSet<IntentId>, b: &BTreeSet<IntentId>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Jaccard similarity of the active sets; 1 when both are empty.
pub fn intent_overlap(before: &IntentVector, after: &IntentVector, threshold: f64) -> f64 {
    jaccard(&active_intents(before, threshold), &active_intents(after, threshold))
}

/// F1 of the rewritten text's active set against the original's.
pub fn stability_f1(before: &IntentVector, after: &IntentVector, threshold: f64) -> f64 {
    let a = active_intents(before, threshold);
    let b = active_intents(after, threshold);
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let inter = a.intersection(&b).count() as f64;
    if inter == 0.0 {
        return 0.0;
    }
    let p = inter / b.len() as f64;
    let r = inter / a.len() as f64;
    2.0 * p * r / (p + r)
}

pub fn jaccard_acc(predicted: &IntentVector, gold: &IntentVector, threshold: f64) -> f64 {
    intent_overlap(predicted, gold, threshold)
}

fn dcg2(rels: &[f64]) -> f64 {
    rels.iter()
        .take(2)
        .enumerate()
        .map(|(i, r)| r / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG@2 with graded relevance taken from the gold weights.
pub fn ndcg_at_2(predicted: &IntentVector, gold: &IntentVector) -> Result<f64, MetricError> {
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    let rels: Vec<f64> = predicted.ranked().iter().map(|id| gold.weight(*id)).collect();
    let ideal: Vec<f64> = gold.ranked().iter().map(|id| gold.weight(*id)).collect();
    Ok(dcg2(&rels) / dcg2(&ideal))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub densities: Vec<f64>,
    pub n: u64,
    /// Inputs outside [0, 1] that were left out.
    pub rejected: u64,
}

impl Histogram {
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

pub const HISTOGRAM_BINS: usize = 10;

/// Ten equal bins over [0, 1], the last one closed; densities integrate to 1.
pub fn similarity_distribution(scores: &[f64]) -> Histogram {
    let width = 1.0 / HISTOGRAM_BINS as f64;
    let edges = (0..=HISTOGRAM_BINS).map(|i| i as f64 / HISTOGRAM_BINS as f64).collect();
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    let mut rejected = 0;
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            rejected += 1;
            continue;
        }
        let bin = ((s * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    let n: u64 = counts.iter().sum();
    let densities = if n == 0 {
        vec![0.0; HISTOGRAM_BINS]
    } else {
        counts.iter().map(|c| *c as f64 / (n as f64 * width)).collect()
    };
    Histogram { edges, counts, densities, n, rejected }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContributionMode {
    #[default]
    Prompt,
    Ablation,
}

/// Token-index ranges of sentences; a sentence ends at a whitespace token
/// ending in `.`, `!` or `?` (ignoring closing quotes and brackets).
pub fn sentence_spans(tokens: &[&str]) -> Vec<std::ops::Range<usize>> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        let core = t.trim_end_matches(['"', '\'', ')', ']', '\u{201D}', '\u{2019}']);
        if core.ends_with(['.', '!', '?']) {
            spans.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        spans.push(start..tokens.len());
    }
    spans
}

/// Per-token contribution scores aligned to the whitespace tokens of `text`.
pub async fn token_contribution(
    ctx: &CallCtx<'_>,
    text: &str,
    attribute: AttributeKind,
    mode: ContributionMode,
    profile: &ModelProfile,
) -> Result<Vec<f64>, StageError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    match mode {
        ContributionMode::Prompt => {
            let indexed = tokens
                .iter()
                .enumerate()
                .map(|(i, t)| format!("{i}: {t}"))
                .collect::<Vec<_>>()
                .join("\n");
            let prompt = PromptTemplate::builtin(PromptFamily::TokenContribution).render([
                ("attribute", attribute.key().to_string()),
                ("indexed_tokens", indexed),
                ("token_count", tokens.len().to_string()),
            ])?;
            let n = tokens.len();
            let scores = ctx
                .invoke("token_contribution", profile, &prompt, |raw| parse_token_scores(raw, n))
                .await?;
            Ok(scores.value)
        }
        ContributionMode::Ablation => {
            let requested = BTreeSet::from([attribute]);
            let certainty = |infs: Vec<crate::model::AttributeInference>| {
                infs.iter().find(|i| i.attribute == attribute).map(|i| i.certainty).unwrap_or(1)
            };
            let base = certainty(infer_attributes(ctx, "token_contribution", text, &requested, profile).await?);
            let mut scores = vec![0.0; tokens.len()];
            for span in sentence_spans(&tokens) {
                let rest: Vec<&str> = tokens
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !span.contains(i))
                    .map(|(_, t)| *t)
                    .collect();
                let without = if rest.is_empty() {
                    1
                } else {
                    certainty(infer_attributes(ctx, "token_contribution", &rest.join(" "), &requested, profile).await?)
                };
                let drop = f64::from(base.saturating_sub(without)) / 4.0;
                for s in &mut scores[span] {
                    *s = drop.clamp(0.0, 1.0);
                }
            }
            Ok(scores)
        }
    }
}
