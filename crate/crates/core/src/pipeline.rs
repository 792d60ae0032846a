//! The four-stage anonymization pipeline: intent recognition, evidence
//! chains, exposure governance and budget-constrained rewriting with
//! adversarial verification.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{self, AccuracyStatistic, ScoringPolicy, ValidationVerdict, DEFAULT_PAIRS_PER_CALL};
use crate::evalsuite::UtilityWeights;
use crate::gateway::{Gateway, ModelProfile};
use crate::ledger::{CallCtx, LedgerEntry, Recorder, StageError};
use crate::model::{
    active_intents, AnonymizationResult, AttributeInference, AttributeKind, AuthorSample, BudgetCheck,
    EvidenceChain, ExposureBudget, ExposureLevel, IntentId, IntentVector, LevelRiskMap, SampleStatus, SceneId,
    SceneTaxonomy,
};
use crate::promptkit::{
    parse_anonymization, parse_evidence_chains, parse_intent, parse_scene, serialize_chains, serialize_inferences,
    PromptFamily, PromptTemplate, RenderedPrompt,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub scene: SceneId,
    pub intent: IntentId,
    pub attribute: AttributeKind,
    pub level: ExposureLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MatrixSpec {
    scenes: SceneTaxonomy,
    default_level: ExposureLevel,
    #[serde(default)]
    entries: Vec<MatrixEntry>,
}

/// Governance table G: (scene, intent, attribute) to the maximum allowed
/// exposure level, with a default for absent entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixSpec", into = "MatrixSpec")]
pub struct ExposureMatrix {
    scenes: SceneTaxonomy,
    default_level: ExposureLevel,
    entries: BTreeMap<(SceneId, IntentId, AttributeKind), ExposureLevel>,
}

impl TryFrom<MatrixSpec> for ExposureMatrix {
    type Error = ConfigError;

    fn try_from(spec: MatrixSpec) -> Result<Self, Self::Error> {
        ExposureMatrix::new(spec.scenes, spec.default_level, spec.entries)
    }
}

impl From<ExposureMatrix> for MatrixSpec {
    fn from(m: ExposureMatrix) -> Self {
        let entries = m.entries();
        MatrixSpec { scenes: m.scenes, default_level: m.default_level, entries }
    }
}

impl ExposureMatrix {
    pub fn new(
        scenes: SceneTaxonomy,
        default_level: ExposureLevel,
        entries: impl IntoIterator<Item = MatrixEntry>,
    ) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for e in entries {
            if !scenes.contains(&e.scene) {
                return Err(ConfigError::Invalid(format!("scene `{}` is not in the taxonomy", e.scene)));
            }
            if map.insert((e.scene.clone(), e.intent, e.attribute), e.level).is_some() {
                return Err(ConfigError::Invalid(format!(
                    "duplicate entry ({}, {}, {})",
                    e.scene, e.intent, e.attribute
                )));
            }
        }
        Ok(Self { scenes, default_level, entries: map })
    }

    /// Shipped defaults. Location and birthplace are banned in public
    /// forums and generalized elsewhere; sensitive disclosure tightens
    /// relationship, income and age; a professional showcase relaxes
    /// occupation and education on professional networks.
    pub fn shipped() -> Self {
        let scenes = SceneTaxonomy::default();
        let mut entries = Vec::new();
        let mut add = |scene: &SceneId, intent, attribute, level| {
            entries.push(MatrixEntry { scene: scene.clone(), intent, attribute, level })
        };
        for scene in scenes.scenes() {
            let geo = if scene.as_str() == SceneId::DEFAULT { ExposureLevel::Ban } else { ExposureLevel::L3 };
            for intent in IntentId::ALL {
                add(scene, intent, AttributeKind::Location, geo);
                add(scene, intent, AttributeKind::Pobp, geo);
            }
            for attribute in [AttributeKind::RelationshipStatus, AttributeKind::Income, AttributeKind::Age] {
                add(scene, IntentId::I5, attribute, ExposureLevel::L2);
            }
            if scene.as_str() == "professional_network" {
                add(scene, IntentId::I3, AttributeKind::Occupation, ExposureLevel::L0);
                add(scene, IntentId::I3, AttributeKind::Education, ExposureLevel::L0);
            }
        }
        Self::new(scenes, ExposureLevel::L1, entries).expect("shipped matrix is consistent")
    }

    pub fn scenes(&self) -> &SceneTaxonomy {
        &self.scenes
    }

    pub fn default_level(&self) -> ExposureLevel {
        self.default_level
    }

    pub fn entries(&self) -> Vec<MatrixEntry> {
        self.entries
            .iter()
            .map(|((scene, intent, attribute), level)| MatrixEntry {
                scene: scene.clone(),
                intent: *intent,
                attribute: *attribute,
                level: *level,
            })
            .collect()
    }
}

/// G(s, I, a): configured entry or the default level.
pub fn govern_exposure(scene: &SceneId, intent: IntentId, attribute: AttributeKind, m: &ExposureMatrix) -> ExposureLevel {
    m.entries
        .get(&(scene.clone(), intent, attribute))
        .copied()
        .unwrap_or(m.default_level)
}

fn default_max_rounds() -> u32 {
    2
}

fn one() -> u32 {
    1
}

fn default_parallelism() -> usize {
    4
}

fn default_pairs() -> usize {
    DEFAULT_PAIRS_PER_CALL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "ModelProfile::deepseek")]
    pub anonymizer_profile: ModelProfile,
    #[serde(default = "ModelProfile::deepseek")]
    pub judge_profile: ModelProfile,
    #[serde(default = "ModelProfile::deepseek")]
    pub adversary_profile: ModelProfile,
    #[serde(default = "ModelProfile::deepseek_validator")]
    pub validator_profile: ModelProfile,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
    #[serde(default = "one")]
    pub risk_samples: u32,
    #[serde(default)]
    pub intent_threshold: f64,
    #[serde(flatten)]
    pub exposure_matrix: ExposureMatrix,
    #[serde(default)]
    pub level_risk: LevelRiskMap,
    #[serde(default)]
    pub global_level_override: Option<ExposureLevel>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_pairs")]
    pub pairs_per_call: usize,
    #[serde(default)]
    pub scoring: ScoringPolicy,
    #[serde(default)]
    pub utility_weights: UtilityWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            anonymizer_profile: ModelProfile::deepseek(),
            judge_profile: ModelProfile::deepseek(),
            adversary_profile: ModelProfile::deepseek(),
            validator_profile: ModelProfile::deepseek_validator(),
            max_rounds: 2,
            risk_samples: 1,
            intent_threshold: 0.0,
            exposure_matrix: ExposureMatrix::shipped(),
            level_risk: LevelRiskMap::default(),
            global_level_override: None,
            parallelism: 4,
            pairs_per_call: DEFAULT_PAIRS_PER_CALL,
            scoring: ScoringPolicy::default(),
            utility_weights: UtilityWeights::default(),
        }
    }
}

/// The default configuration as shipped in `assets/default_config.json`.
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../assets/default_config.json");

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for p in [&self.anonymizer_profile, &self.judge_profile, &self.adversary_profile, &self.validator_profile] {
            p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if self.max_rounds < 1 {
            return Err(ConfigError::Invalid("max_rounds must be at least 1".into()));
        }
        if self.risk_samples < 1 {
            return Err(ConfigError::Invalid("risk_samples must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.intent_threshold) {
            return Err(ConfigError::Invalid("intent_threshold must lie in [0, 1]".into()));
        }
        if self.parallelism < 1 || self.pairs_per_call < 1 {
            return Err(ConfigError::Invalid("parallelism and pairs_per_call must be positive".into()));
        }
        let credit = self.scoring.less_precise_credit;
        if credit != 0.0 && credit != 0.5 {
            return Err(ConfigError::Invalid("less_precise_credit must be 0 or 0.5".into()));
        }
        Ok(())
    }

    pub fn with_override(&self, level: Option<ExposureLevel>) -> Self {
        Self { global_level_override: level, ..self.clone() }
    }

    /// Every profile points at `provider`; used for mock runs.
    pub fn with_provider(&self, provider: &str) -> Self {
        let mut c = self.clone();
        for p in [
            &mut c.anonymizer_profile,
            &mut c.judge_profile,
            &mut c.adversary_profile,
            &mut c.validator_profile,
        ] {
            p.provider_name = provider.to_string();
        }
        c
    }

    pub fn attack_config(&self) -> adversary::AttackConfig {
        adversary::AttackConfig {
            adversary: self.adversary_profile.clone(),
            validator: self.validator_profile.clone(),
            policy: self.scoring,
            pairs_per_call: self.pairs_per_call,
        }
    }

    pub fn statistic(&self) -> AccuracyStatistic {
        self.scoring.statistic
    }
}

/// Effective budget: the strictest G over the active intents; the
/// matrix default when none is active; the override when set.
pub fn aggregate_budget(
    scene: &SceneId,
    intents: &BTreeSet<IntentId>,
    attribute: AttributeKind,
    cfg: &PipelineConfig,
) -> ExposureBudget {
    let m = &cfg.exposure_matrix;
    let level = match cfg.global_level_override {
        Some(level) => level,
        None => intents
            .iter()
            .map(|i| govern_exposure(scene, *i, attribute, m))
            .max()
            .unwrap_or(m.default_level),
    };
    ExposureBudget::from_level(attribute, level, &cfg.level_risk)
}

pub async fn recognize_intents(ctx: &CallCtx<'_>, x: &AuthorSample, cfg: &PipelineConfig) -> Result<IntentVector, StageError> {
    let prompt = PromptTemplate::builtin(PromptFamily::IntentRecognition).render([("user_context", x.text())])?;
    Ok(ctx.invoke("intent_recognition", &cfg.anonymizer_profile, &prompt, parse_intent).await?.value)
}

/// Recognizes intents of an arbitrary text, e.g. a rewrite.
pub async fn recognize_text_intents(
    ctx: &CallCtx<'_>,
    text: &str,
    profile: &ModelProfile,
) -> Result<IntentVector, StageError> {
    let prompt = PromptTemplate::builtin(PromptFamily::IntentRecognition).render([("user_context", text)])?;
    Ok(ctx.invoke("intent_recognition", profile, &prompt, parse_intent).await?.value)
}

/// Falls back to the default scene, with a warning, when the reply does
/// not name a taxonomy member.
pub async fn classify_scene(
    ctx: &CallCtx<'_>,
    x: &AuthorSample,
    cfg: &PipelineConfig,
) -> Result<(SceneId, Option<String>), StageError> {
    let taxonomy = cfg.exposure_matrix.scenes();
    let options = taxonomy
        .scenes()
        .iter()
        .map(|s| format!("- {s}"))
        .collect::<Vec<_>>()
        .join("\n");
    let prompt = PromptTemplate::builtin(PromptFamily::SceneClassification)
        .render([("scene_options", options), ("user_context", x.text())])?;
    match ctx.invoke("scene_classification", &cfg.judge_profile, &prompt, |raw| parse_scene(raw, taxonomy)).await {
        Ok(scene) => Ok((scene, None)),
        Err(StageError::Parse(e)) => {
            let warning = format!("scene classification unparseable ({e}); using {}", SceneId::DEFAULT);
            tracing::warn!(sample = %x.author_id, "{warning}");
            Ok((SceneId::public_forum(), Some(warning)))
        }
        Err(e) => Err(e),
    }
}

/// One chain per inferred attribute, empty when the reply offers none.
pub async fn build_evidence_chains(
    ctx: &CallCtx<'_>,
    x: &AuthorSample,
    inferences: &[AttributeInference],
    cfg: &PipelineConfig,
) -> Result<Vec<EvidenceChain>, StageError> {
    if inferences.is_empty() {
        return Err(StageError::InvalidInput("evidence chains need at least one inference".into()));
    }
    let source = x.text();
    let prompt = PromptTemplate::builtin(PromptFamily::EvidenceChain).render([
        ("user_context", source.clone()),
        ("attribute_inference_results", serialize_inferences(inferences)),
    ])?;
    let parsed = ctx
        .invoke("evidence_chain", &cfg.anonymizer_profile, &prompt, |raw| parse_evidence_chains(raw, &source))
        .await?;
    Ok(inferences
        .iter()
        .map(|inf| {
            parsed
                .value
                .iter()
                .find(|c| c.attribute == inf.attribute)
                .cloned()
                .unwrap_or_else(|| EvidenceChain::empty(inf.attribute))
        })
        .collect())
}

/// Separates the retry instruction from the templated prompt body.
pub const ESCALATION_MARKER: &str = "\n\n[Stricter Instruction]\n";

pub fn escalation_suffix(round: u32, violated: &[AttributeKind]) -> String {
    let names = violated.iter().map(|a| a.key()).collect::<Vec<_>>().join(", ");
    format!(
        "{ESCALATION_MARKER}    Round {round}: the previous anonymization still allowed the following attribute(s) to be inferred beyond their exposure budget: {names}.\n    Neutralize every remaining evidence span for these attribute(s). Keep all other constraints and the output format unchanged."
    )
}

fn intent_lines(v: &IntentVector) -> String {
    let ranked = v.ranked();
    if ranked.is_empty() {
        return "none detected".into();
    }
    ranked
        .iter()
        .map(|id| format!("{id} {}: {}", id.label(), v.weight(*id)))
        .collect::<Vec<_>>()
        .join("\n\t")
}

pub fn budget_lines(budgets: &[ExposureBudget]) -> String {
    budgets
        .iter()
        .map(|b| format!("{}: {} (risk bound {})", b.attribute.key(), b.level, b.risk_bound))
        .collect::<Vec<_>>()
        .join("\n\t")
}

pub fn render_anonymization(
    x: &AuthorSample,
    v: &IntentVector,
    inferences: &[AttributeInference],
    chains: &[EvidenceChain],
    budgets: &[ExposureBudget],
    round: u32,
    violated: &[AttributeKind],
) -> Result<RenderedPrompt, StageError> {
    let validated: Vec<EvidenceChain> = chains
        .iter()
        .filter(|c| c.is_actionable())
        .map(|c| EvidenceChain { attribute: c.attribute, steps: c.validated_steps().cloned().collect() })
        .collect();
    let mut prompt = PromptTemplate::builtin(PromptFamily::Anonymization).render([
        ("user_context", x.text()),
        ("attribute_inference_results", serialize_inferences(inferences)),
        ("privacy_inference_evidence_chain", serialize_chains(&validated)),
        ("pragmatic_intent", intent_lines(v)),
        ("exposure_budgets", budget_lines(budgets)),
    ])?;
    if round > 1 && !violated.is_empty() {
        prompt.user.push_str(&escalation_suffix(round, violated));
    }
    Ok(prompt)
}

#[allow(clippy::too_many_arguments)]
pub async fn anonymize_once(
    ctx: &CallCtx<'_>,
    x: &AuthorSample,
    v: &IntentVector,
    inferences: &[AttributeInference],
    chains: &[EvidenceChain],
    budgets: &[ExposureBudget],
    round: u32,
    violated: &[AttributeKind],
    cfg: &PipelineConfig,
) -> Result<(IntentVector, String), StageError> {
    if round < 1 {
        return Err(StageError::InvalidInput("rounds are numbered from 1".into()));
    }
    let has_target = chains.iter().any(EvidenceChain::is_actionable) || budgets.iter().any(|b| b.level == ExposureLevel::Ban);
    if !has_target {
        return Ok((v.clone(), x.text()));
    }
    let prompt = render_anonymization(x, v, inferences, chains, budgets, round, violated)?;
    Ok(ctx.invoke("anonymization", &cfg.anonymizer_profile, &prompt, parse_anonymization).await?.value)
}

/// Fraction of adversary draws whose top-1 guess validates `yes` against
/// `reference`.
pub async fn measure_risk(
    ctx: &CallCtx<'_>,
    anonymized: &str,
    attribute: AttributeKind,
    reference: &str,
    cfg: &PipelineConfig,
) -> Result<f64, StageError> {
    if reference.trim().is_empty() {
        return Err(StageError::InvalidInput("risk reference is empty".into()));
    }
    let requested = BTreeSet::from([attribute]);
    let mut hits = 0u32;
    for draw in 0..cfg.risk_samples {
        // repeated draws must reach the model, not the cache
        let draw_ctx = if draw == 0 { *ctx } else { ctx.without_cache() };
        let infs =
            adversary::infer_attributes(&draw_ctx, "risk_measurement", anonymized, &requested, &cfg.adversary_profile)
                .await?;
        let Some(top1) = infs.iter().find(|i| i.attribute == attribute).map(|i| i.top1().to_string()) else {
            continue;
        };
        let verdicts = adversary::validate(
            &draw_ctx,
            &[(reference.to_string(), top1)],
            &cfg.validator_profile,
            cfg.pairs_per_call,
        )
        .await?;
        if verdicts[0] == ValidationVerdict::Yes {
            hits += 1;
        }
    }
    Ok(f64::from(hits) / f64::from(cfg.risk_samples))
}

/// Shared machinery for running the pipeline.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub gateway: Arc<Gateway>,
    pub config: PipelineConfig,
    pub use_cache: bool,
}

/// Output of one sample: the result and the calls it made, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRun {
    pub result: AnonymizationResult,
    pub ledger: Vec<LedgerEntry>,
}

fn failed(x: &AuthorSample, stage: &str, err: &StageError, rounds: u32, warnings: Vec<String>) -> AnonymizationResult {
    tracing::warn!(sample = %x.author_id, stage, error = %err, "sample failed");
    AnonymizationResult {
        author_id: x.author_id.clone(),
        original: x.text(),
        anonymized: x.text(),
        intent_vector: IntentVector::empty(),
        scene: SceneId::public_forum(),
        budgets: Vec::new(),
        rounds_used: rounds,
        residual_risk: BTreeMap::new(),
        budget_satisfied: BTreeMap::new(),
        status: SampleStatus::Failed { stage: stage.to_string(), reason: err.to_string() },
        warnings,
    }
}

impl Pipeline {
    pub fn new(gateway: Arc<Gateway>, config: PipelineConfig, use_cache: bool) -> Self {
        Self { gateway, config, use_cache }
    }

    pub async fn run_sample(&self, x: &AuthorSample) -> SampleRun {
        let recorder = Recorder::new(x.author_id.clone());
        let result = self.run_recorded(&CallCtx::new(&self.gateway, &recorder, self.use_cache), x).await;
        SampleRun { result, ledger: recorder.into_entries() }
    }

    async fn run_recorded(&self, ctx: &CallCtx<'_>, x: &AuthorSample) -> AnonymizationResult {
        let cfg = &self.config;
        let mut warnings = Vec::new();
        let intents = match recognize_intents(ctx, x, cfg).await {
            Ok(v) => v,
            Err(e) => return failed(x, "intent_recognition", &e, 0, warnings),
        };
        let all: BTreeSet<AttributeKind> = AttributeKind::ALL.into_iter().collect();
        let inferences =
            match adversary::infer_attributes(ctx, "privacy_inference", &x.text(), &all, &cfg.anonymizer_profile).await {
                Ok(v) => v,
                Err(e) => return failed(x, "privacy_inference", &e, 0, warnings),
            };
        let chains = if inferences.is_empty() {
            Vec::new()
        } else {
            match build_evidence_chains(ctx, x, &inferences, cfg).await {
                Ok(c) => c,
                Err(e) => return failed(x, "evidence_chain", &e, 0, warnings),
            }
        };
        let scene = match classify_scene(ctx, x, cfg).await {
            Ok((scene, warning)) => {
                warnings.extend(warning);
                scene
            }
            Err(e) => return failed(x, "scene_classification", &e, 0, warnings),
        };
        let active = active_intents(&intents, cfg.intent_threshold);
        let budgets: Vec<ExposureBudget> =
            AttributeKind::ALL.into_iter().map(|a| aggregate_budget(&scene, &active, a, cfg)).collect();

        let mut result = AnonymizationResult {
            author_id: x.author_id.clone(),
            original: x.text(),
            anonymized: x.text(),
            intent_vector: intents.clone(),
            scene,
            budgets: budgets.clone(),
            rounds_used: 1,
            residual_risk: BTreeMap::new(),
            budget_satisfied: BTreeMap::new(),
            status: SampleStatus::Completed,
            warnings: Vec::new(),
        };

        let actionable: BTreeSet<AttributeKind> =
            chains.iter().filter(|c| c.is_actionable()).map(|c| c.attribute).collect();
        let banned: BTreeSet<AttributeKind> =
            budgets.iter().filter(|b| b.level == ExposureLevel::Ban).map(|b| b.attribute).collect();
        if actionable.is_empty() && banned.is_empty() {
            result.warnings = warnings;
            return result;
        }

        // attributes whose risk is measured, with their reference values
        let references: BTreeMap<AttributeKind, String> = actionable
            .union(&banned)
            .filter_map(|a| {
                let reference = x
                    .ground_truth
                    .get(a)
                    .cloned()
                    .or_else(|| inferences.iter().find(|i| i.attribute == *a).map(|i| i.top1().to_string()))?;
                Some((*a, reference))
            })
            .collect();

        let mut violated: Vec<AttributeKind> = Vec::new();
        for round in 1..=cfg.max_rounds {
            let rewrite = anonymize_once(ctx, x, &intents, &inferences, &chains, &budgets, round, &violated, cfg).await;
            let text = match rewrite {
                Ok((_, text)) => text,
                Err(e) => {
                    let mut f = failed(x, "anonymization", &e, round - 1, warnings);
                    f.intent_vector = intents;
                    f.scene = result.scene;
                    f.budgets = budgets;
                    return f;
                }
            };
            result.rounds_used = round;
            result.anonymized = text;
            result.residual_risk.clear();
            result.budget_satisfied.clear();
            violated.clear();
            for (attribute, reference) in &references {
                let bound = budgets.iter().find(|b| b.attribute == *attribute).expect("budget per attribute").risk_bound;
                match measure_risk(ctx, &result.anonymized, *attribute, reference, cfg).await {
                    Ok(risk) => {
                        result.residual_risk.insert(*attribute, risk);
                        let check = if risk <= bound { BudgetCheck::Satisfied } else { BudgetCheck::Violated };
                        if check == BudgetCheck::Violated {
                            violated.push(*attribute);
                        }
                        result.budget_satisfied.insert(*attribute, check);
                    }
                    Err(e) => {
                        warnings.push(format!("risk for {attribute} unmeasured: {e}"));
                        result.budget_satisfied.insert(*attribute, BudgetCheck::Unverified);
                    }
                }
            }
            if violated.is_empty() {
                break;
            }
        }
        result.warnings = warnings;
        result
    }

    /// Runs samples concurrently; results and ledger entries come back in
    /// input order.
    pub async fn run_batch(&self, samples: &[AuthorSample]) -> Vec<SampleRun> {
        stream::iter(samples.iter().map(|x| self.run_sample(x)))
            .buffered(self.config.parallelism.max(1))
            .collect()
            .await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> PipelineConfig {
        PipelineConfig::default()
    }

    #[test]
    fn governance_lookup() {
        let m = ExposureMatrix::shipped();
        let forum = SceneId::public_forum();
        assert_eq!(govern_exposure(&forum, IntentId::I5, AttributeKind::Location, &m), ExposureLevel::Ban);
        assert_eq!(govern_exposure(&forum, IntentId::I4, AttributeKind::Gender, &m), ExposureLevel::L1);
        let custom = ExposureMatrix::new(
            SceneTaxonomy::default(),
            ExposureLevel::L1,
            [MatrixEntry {
                scene: SceneId::new("professional_network"),
                intent: IntentId::I3,
                attribute: AttributeKind::Occupation,
                level: ExposureLevel::L3,
            }],
        )
        .unwrap();
        let pro = SceneId::new("professional_network");
        assert_eq!(govern_exposure(&pro, IntentId::I3, AttributeKind::Occupation, &custom), ExposureLevel::L3);
    }

    #[test]
    fn matrix_rejects_unknown_scene() {
        let bad = ExposureMatrix::new(
            SceneTaxonomy::default(),
            ExposureLevel::L1,
            [MatrixEntry {
                scene: SceneId::new("dark_web"),
                intent: IntentId::I1,
                attribute: AttributeKind::Age,
                level: ExposureLevel::L0,
            }],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn budget_aggregation_examples() {
        let mut c = cfg();
        c.exposure_matrix = ExposureMatrix::new(
            SceneTaxonomy::default(),
            ExposureLevel::L1,
            [
                MatrixEntry {
                    scene: SceneId::public_forum(),
                    intent: IntentId::I1,
                    attribute: AttributeKind::Location,
                    level: ExposureLevel::L2,
                },
                MatrixEntry {
                    scene: SceneId::public_forum(),
                    intent: IntentId::I5,
                    attribute: AttributeKind::Location,
                    level: ExposureLevel::Ban,
                },
            ],
        )
        .unwrap();
        let forum = SceneId::public_forum();
        let b = aggregate_budget(&forum, &BTreeSet::from([IntentId::I1, IntentId::I5]), AttributeKind::Location, &c);
        assert_eq!((b.level, b.risk_bound), (ExposureLevel::Ban, 0.0));
        let b = aggregate_budget(&forum, &BTreeSet::from([IntentId::I4]), AttributeKind::Location, &c);
        assert_eq!((b.level, b.risk_bound), (ExposureLevel::L1, 0.6));
        let b = aggregate_budget(&forum, &BTreeSet::new(), AttributeKind::Location, &c);
        assert_eq!(b.level, ExposureLevel::L1);
        let o = c.with_override(Some(ExposureLevel::L0));
        let b = aggregate_budget(&forum, &BTreeSet::from([IntentId::I5]), AttributeKind::Location, &o);
        assert_eq!(b.level, ExposureLevel::L0);
    }

    #[test]
    fn shipped_config_asset_matches_default() {
        let shipped = PipelineConfig::from_json(DEFAULT_CONFIG_JSON).unwrap();
        assert_eq!(shipped, PipelineConfig::default());
    }

    #[test]
    fn config_validation_first() {
        let bad = DEFAULT_CONFIG_JSON.replace("\"L2\": 0.4", "\"L2\": 0.7");
        assert!(PipelineConfig::from_json(&bad).is_err());
        let mut c = cfg();
        c.max_rounds = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn escalation_lists_attributes() {
        let s = escalation_suffix(2, &[AttributeKind::Age]);
        assert!(s.starts_with(ESCALATION_MARKER));
        assert!(s.contains(": age."));
    }

    fn level() -> impl Strategy<Value = ExposureLevel> {
        prop::sample::select(ExposureLevel::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn adding_an_intent_never_weakens(
            levels in prop::collection::vec(level(), 5),
            base in prop::collection::btree_set(0usize..5, 0..5),
            extra in 0usize..5,
            default in level(),
        ) {
            let forum = SceneId::public_forum();
            let entries = IntentId::ALL.iter().zip(&levels).map(|(i, l)| MatrixEntry {
                scene: forum.clone(), intent: *i, attribute: AttributeKind::Age, level: *l,
            });
            let mut c = cfg();
            c.exposure_matrix = ExposureMatrix::new(SceneTaxonomy::default(), default, entries).unwrap();
            let small: BTreeSet<IntentId> = base.iter().map(|k| IntentId::ALL[*k]).collect();
            let mut large = small.clone();
            large.insert(IntentId::ALL[extra]);
            let a = aggregate_budget(&forum, &small, AttributeKind::Age, &c);
            let b = aggregate_budget(&forum, &large, AttributeKind::Age, &c);
            if !small.is_empty() {
                prop_assert!(b.level >= a.level);
                prop_assert!(b.risk_bound <= a.risk_bound);
            }
        }
    }
}
