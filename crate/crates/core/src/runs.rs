//! Run directories and the commands that produce and evaluate them.
//!
//! An anonymization run directory holds `manifest.json`, `config.json`,
//! `results.jsonl` and `ledger.jsonl`. An attack adds `attack.json`,
//! `attack.jsonl` and `attack_ledger.jsonl`. Evaluation reads attack
//! files only and writes report files that depend on nothing else.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{self, AttackOutcome, ScoringPolicy};
use crate::corpus::Dataset;
use crate::evalsuite::{
    bleu_text, jaccard_acc, judge_utility, ndcg_at_2, privacy_aggregate, rouge_text, similarity_distribution,
    stability_f1, intent_overlap, utility_scores, Histogram, PrivacyScores, UtilityScores, UtilityWeights,
};
use crate::gateway::{Gateway, ModelProfile};
use crate::ledger::{read_jsonl, write_jsonl, CallCtx, LedgerEntry, Recorder, StageError};
use crate::model::{AnonymizationResult, AttributeKind, AuthorSample, ExposureLevel, IntentVector};
use crate::pipeline::{recognize_text_intents, Pipeline, PipelineConfig};
use crate::promptkit::assets_digest;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG: &str = "config.json";
pub const RESULTS: &str = "results.jsonl";
pub const LEDGER: &str = "ledger.jsonl";
pub const ATTACK_MANIFEST: &str = "attack.json";
pub const ATTACK: &str = "attack.jsonl";
pub const ATTACK_LEDGER: &str = "attack_ledger.jsonl";
pub const REPORT: &str = "report.tsv";
pub const SUMMARY: &str = "summary.json";
pub const HISTOGRAMS: &str = "histograms.json";
pub const RECORDS: &str = "records.jsonl";
pub const CURVE_TSV: &str = "curve.tsv";
pub const CURVE_JSON: &str = "curve.json";

/// Method label of the unmodified-text reference run.
pub const ORIGINAL: &str = "original";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config invalid: {0}")]
    ConfigInvalid(String),
    #[error("dataset invalid: {0}")]
    DatasetInvalid(String),
    #[error("missing texts for authors: {}", .0.join(", "))]
    MissingTexts(Vec<String>),
    #[error("incompatible runs: {0}")]
    IncompatibleRuns(String),
    #[error("no levels given")]
    EmptyLevels,
    #[error("missing run file {}", .0.display())]
    MissingRunFile(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    pub fn kind(&self) -> &'static str {
        match self {
            RunError::ConfigInvalid(_) => "config_invalid",
            RunError::DatasetInvalid(_) => "dataset_invalid",
            RunError::MissingTexts(_) => "missing_texts",
            RunError::IncompatibleRuns(_) => "incompatible_runs",
            RunError::EmptyLevels => "empty_levels",
            RunError::MissingRunFile(_) => "missing_run_file",
            RunError::Io { .. } => "io_error",
        }
    }
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("run files serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(io(format!("writing {}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    if !path.exists() {
        return Err(RunError::MissingRunFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(io(format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| RunError::Io {
        context: format!("parsing {}", path.display()),
        source: e.into(),
    })
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, RunError> {
    if !path.exists() {
        return Err(RunError::MissingRunFile(path.to_path_buf()));
    }
    read_jsonl(path).map_err(io(format!("reading {}", path.display())))
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    write_jsonl(path, items).map_err(io(format!("writing {}", path.display())))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    pub samples: usize,
    pub failures: usize,
    pub calls: usize,
    pub cached_calls: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl RunTotals {
    fn add_ledger(&mut self, entries: &[LedgerEntry]) {
        self.calls += entries.len();
        self.cached_calls += entries.iter().filter(|e| e.cached).count();
        self.prompt_tokens += entries.iter().map(|e| e.prompt_tokens).sum::<u64>();
        self.completion_tokens += entries.iter().map(|e| e.completion_tokens).sum::<u64>();
    }

    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

fn profiles(cfg: &PipelineConfig) -> BTreeMap<String, ModelProfile> {
    BTreeMap::from([
        ("anonymizer".to_string(), cfg.anonymizer_profile.clone()),
        ("judge".to_string(), cfg.judge_profile.clone()),
        ("adversary".to_string(), cfg.adversary_profile.clone()),
        ("validator".to_string(), cfg.validator_profile.clone()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub method: String,
    pub config: PipelineConfig,
    pub dataset_fingerprint: String,
    pub prompt_assets_digest: String,
    pub profiles: BTreeMap<String, ModelProfile>,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub totals: RunTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackManifest {
    pub run_id: String,
    pub method: String,
    /// `original`, `anonymized:<dir>` or `external:<dir>`.
    pub source: String,
    pub dataset_fingerprint: String,
    pub prompt_assets_digest: String,
    pub scoring: ScoringPolicy,
    pub utility_weights: UtilityWeights,
    pub intent_threshold: f64,
    pub profiles: BTreeMap<String, ModelProfile>,
    pub started_at: u64,
    pub finished_at: Option<u64>,
    pub totals: RunTotals,
}

/// Attack and utility outcome for one author's evaluated text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub author_id: String,
    pub text: String,
    pub outcomes: Vec<AttackOutcome>,
    pub utility: Option<UtilityScores>,
    /// Intents of the original text.
    pub intents_before: Option<IntentVector>,
    /// Intents of the evaluated text.
    pub intents_after: Option<IntentVector>,
    pub gold_intents: Option<IntentVector>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TextSource {
    Original,
    /// An anonymization run directory.
    Anonymized(PathBuf),
    /// A directory of `<author_id>.txt` files, e.g. a baseline's outputs.
    External(PathBuf),
}

impl TextSource {
    fn describe(&self) -> String {
        match self {
            TextSource::Original => ORIGINAL.into(),
            TextSource::Anonymized(d) => format!("anonymized:{}", d.display()),
            TextSource::External(d) => format!("external:{}", d.display()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnonymizeOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
    pub results: Vec<AnonymizationResult>,
}

#[derive(Debug, Clone)]
pub struct AttackRun {
    pub manifest: AttackManifest,
    pub records: Vec<AttackRecord>,
}

/// Executes commands against one gateway.
#[derive(Debug, Clone)]
pub struct Runner {
    pub gateway: Arc<Gateway>,
    pub use_cache: bool,
}

struct TextJob<'a> {
    sample: &'a AuthorSample,
    text: String,
    intents_before: Option<IntentVector>,
}

impl Runner {
    pub fn new(gateway: Arc<Gateway>, use_cache: bool) -> Self {
        Self { gateway, use_cache }
    }

    pub async fn cmd_anonymize(
        &self,
        dataset: &Dataset,
        cfg: &PipelineConfig,
        out: &Path,
        method: &str,
    ) -> Result<AnonymizeOutcome, RunError> {
        cfg.validate().map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        if dataset.samples.is_empty() {
            return Err(RunError::DatasetInvalid("no samples".into()));
        }
        std::fs::create_dir_all(out).map_err(io(format!("creating {}", out.display())))?;
        let mut manifest = RunManifest {
            run_id: uuid::Uuid::new_v4().to_string(),
            method: method.to_string(),
            config: cfg.clone(),
            dataset_fingerprint: dataset.fingerprint.clone(),
            prompt_assets_digest: assets_digest(),
            profiles: profiles(cfg),
            started_at: now(),
            finished_at: None,
            totals: RunTotals { samples: dataset.samples.len(), ..Default::default() },
        };
        write_json(&out.join(CONFIG), cfg)?;
        write_json(&out.join(MANIFEST), &manifest)?;

        let pipeline = Pipeline::new(self.gateway.clone(), cfg.clone(), self.use_cache);
        let runs = pipeline.run_batch(&dataset.samples).await;
        let results: Vec<AnonymizationResult> = runs.iter().map(|r| r.result.clone()).collect();
        let ledger: Vec<LedgerEntry> = runs.into_iter().flat_map(|r| r.ledger).collect();
        write_lines(&out.join(RESULTS), &results)?;
        write_lines(&out.join(LEDGER), &ledger)?;

        manifest.totals.failures = results.iter().filter(|r| r.is_failed()).count();
        manifest.totals.add_ledger(&ledger);
        manifest.finished_at = Some(now());
        write_json(&out.join(MANIFEST), &manifest)?;
        tracing::info!(run = %manifest.run_id, samples = results.len(), failures = manifest.totals.failures, "anonymization run finished");
        Ok(AnonymizeOutcome { run_dir: out.to_path_buf(), manifest, results })
    }

    fn resolve_texts<'a>(&self, dataset: &'a Dataset, source: &TextSource) -> Result<(String, Vec<TextJob<'a>>), RunError> {
        match source {
            TextSource::Original => Ok((
                ORIGINAL.to_string(),
                dataset
                    .samples
                    .iter()
                    .map(|s| TextJob { sample: s, text: s.text(), intents_before: None })
                    .collect(),
            )),
            TextSource::Anonymized(dir) => {
                let manifest: RunManifest = read_json(&dir.join(MANIFEST))?;
                if manifest.dataset_fingerprint != dataset.fingerprint {
                    return Err(RunError::IncompatibleRuns(format!(
                        "{} was produced from a different dataset",
                        dir.display()
                    )));
                }
                let results: Vec<AnonymizationResult> = read_lines(&dir.join(RESULTS))?;
                let by_id: BTreeMap<&str, &AnonymizationResult> =
                    results.iter().map(|r| (r.author_id.as_str(), r)).collect();
                let missing: Vec<String> = dataset
                    .samples
                    .iter()
                    .filter(|s| !by_id.contains_key(s.author_id.as_str()))
                    .map(|s| s.author_id.clone())
                    .collect();
                if !missing.is_empty() {
                    return Err(RunError::MissingTexts(missing));
                }
                let jobs = dataset
                    .samples
                    .iter()
                    .map(|s| {
                        let r = by_id[s.author_id.as_str()];
                        let before = (!r.is_failed()).then(|| r.intent_vector.clone());
                        TextJob { sample: s, text: r.anonymized.clone(), intents_before: before }
                    })
                    .collect();
                Ok((manifest.method, jobs))
            }
            TextSource::External(dir) => {
                let mut jobs = Vec::new();
                let mut missing = Vec::new();
                for s in &dataset.samples {
                    match std::fs::read_to_string(dir.join(format!("{}.txt", s.author_id))) {
                        Ok(text) => jobs.push(TextJob { sample: s, text, intents_before: None }),
                        Err(_) => missing.push(s.author_id.clone()),
                    }
                }
                if !missing.is_empty() {
                    return Err(RunError::MissingTexts(missing));
                }
                let method = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "external".into());
                Ok((method, jobs))
            }
        }
    }

    async fn attack_one(&self, cfg: &PipelineConfig, job: TextJob<'_>, original_source: bool) -> (AttackRecord, Vec<LedgerEntry>) {
        let recorder = Recorder::new(job.sample.author_id.clone());
        let ctx = CallCtx::new(&self.gateway, &recorder, self.use_cache);
        let original = job.sample.text();
        let mut record = AttackRecord {
            author_id: job.sample.author_id.clone(),
            text: job.text.clone(),
            outcomes: Vec::new(),
            utility: None,
            intents_before: job.intents_before,
            intents_after: None,
            gold_intents: job.sample.annotated_intents.clone(),
            error: None,
        };
        let outcome: Result<(), StageError> = async {
            record.outcomes = adversary::attack(&ctx, &job.text, &job.sample.ground_truth, &cfg.attack_config()).await?;
            record.utility = Some(if original_source {
                UtilityScores::identity()
            } else {
                let judged = judge_utility(&ctx, &original, &job.text, &cfg.judge_profile).await?;
                let bleu = bleu_text(&job.text, &original).unwrap_or(0.0);
                let rouge = rouge_text(&job.text, &original).unwrap_or(0.0);
                utility_scores(&judged, bleu, rouge, &cfg.utility_weights)
            });
            let after = recognize_text_intents(&ctx, &job.text, &cfg.anonymizer_profile).await?;
            if record.intents_before.is_none() {
                record.intents_before = Some(if original_source {
                    after.clone()
                } else {
                    recognize_text_intents(&ctx, &original, &cfg.anonymizer_profile).await?
                });
            }
            record.intents_after = Some(after);
            Ok(())
        }
        .await;
        if let Err(e) = outcome {
            tracing::warn!(sample = %record.author_id, error = %e, "attack failed");
            record.error = Some(format!("{}: {e}", e.kind()));
        }
        (record, recorder.into_entries())
    }

    /// Attacks every author's text from `source` and scores its utility
    /// against the original.
    pub async fn cmd_attack(
        &self,
        dataset: &Dataset,
        cfg: &PipelineConfig,
        source: &TextSource,
        out: &Path,
    ) -> Result<AttackRun, RunError> {
        cfg.validate().map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        let (method, jobs) = self.resolve_texts(dataset, source)?;
        std::fs::create_dir_all(out).map_err(io(format!("creating {}", out.display())))?;
        let mut manifest = AttackManifest {
            run_id: uuid::Uuid::new_v4().to_string(),
            method,
            source: source.describe(),
            dataset_fingerprint: dataset.fingerprint.clone(),
            prompt_assets_digest: assets_digest(),
            scoring: cfg.scoring,
            utility_weights: cfg.utility_weights,
            intent_threshold: cfg.intent_threshold,
            profiles: profiles(cfg),
            started_at: now(),
            finished_at: None,
            totals: RunTotals { samples: jobs.len(), ..Default::default() },
        };
        write_json(&out.join(ATTACK_MANIFEST), &manifest)?;
        let original_source = *source == TextSource::Original;
        let done: Vec<(AttackRecord, Vec<LedgerEntry>)> = stream::iter(jobs.into_iter().map(|j| self.attack_one(cfg, j, original_source)))
            .buffered(cfg.parallelism.max(1))
            .collect()
            .await;
        let records: Vec<AttackRecord> = done.iter().map(|(r, _)| r.clone()).collect();
        let ledger: Vec<LedgerEntry> = done.into_iter().flat_map(|(_, l)| l).collect();
        write_lines(&out.join(ATTACK), &records)?;
        write_lines(&out.join(ATTACK_LEDGER), &ledger)?;
        manifest.totals.failures = records.iter().filter(|r| r.error.is_some()).count();
        manifest.totals.add_ledger(&ledger);
        manifest.finished_at = Some(now());
        write_json(&out.join(ATTACK_MANIFEST), &manifest)?;
        Ok(AttackRun { manifest, records })
    }

    /// Anonymizes, attacks and summarizes once per level, from the most
    /// permissive to the strictest.
    pub async fn cmd_sweep(
        &self,
        dataset: &Dataset,
        cfg: &PipelineConfig,
        levels: &[ExposureLevel],
        out: &Path,
    ) -> Result<Vec<CurveRow>, RunError> {
        if levels.is_empty() {
            return Err(RunError::EmptyLevels);
        }
        cfg.validate().map_err(|e| RunError::ConfigInvalid(e.to_string()))?;
        let mut levels = levels.to_vec();
        levels.sort();
        levels.dedup();
        let mut rows = Vec::new();
        for level in levels {
            let dir = out.join(level.as_str());
            let level_cfg = cfg.with_override(Some(level));
            self.cmd_anonymize(dataset, &level_cfg, &dir, level.as_str()).await?;
            let attack = self.cmd_attack(dataset, &level_cfg, &TextSource::Anonymized(dir.clone()), &dir).await?;
            let summary = summarize_method(&attack.manifest, &attack.records);
            rows.push(CurveRow {
                level,
                backbone: cfg.anonymizer_profile.model_id.clone(),
                privacy: summary.privacy.as_ref().map_or(0.0, |p| p.micro),
                utility: summary.utility.map_or(0.0, |u| u.utility_aggregate),
                samples: summary.sample_privacy,
            });
        }
        let mut tsv = String::from("level\tbackbone\tprivacy\tutility\n");
        for r in &rows {
            let _ = writeln!(tsv, "{}\t{}\t{:.3}\t{:.3}", r.level, r.backbone, r.privacy, r.utility);
        }
        std::fs::write(out.join(CURVE_TSV), tsv).map_err(io("writing curve"))?;
        write_json(&out.join(CURVE_JSON), &rows)?;
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub level: ExposureLevel,
    pub backbone: String,
    pub privacy: f64,
    pub utility: f64,
    /// Per-author privacy under this level.
    pub samples: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentSummary {
    pub intent_overlap: f64,
    pub stability_f1: f64,
    pub ndcg_at_2: Option<f64>,
    pub jaccard_acc: Option<f64>,
    pub evaluated: usize,
    pub with_gold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub samples: usize,
    pub errors: usize,
    pub privacy: Option<PrivacyScores>,
    pub utility: Option<UtilityScores>,
    pub overall: Option<f64>,
    pub intents: Option<IntentSummary>,
    pub similarity: Histogram,
    /// Per-author mean score over labeled attributes.
    pub sample_privacy: BTreeMap<String, f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn sample_privacy(record: &AttackRecord, policy: &ScoringPolicy) -> Option<f64> {
    mean(record.outcomes.iter().filter(|o| o.labeled).map(|o| policy.pick(o)))
}

struct SampleIntents {
    overlap: f64,
    stability: f64,
    ndcg: Option<f64>,
    jaccard: Option<f64>,
}

fn sample_intents(r: &AttackRecord, threshold: f64) -> Option<SampleIntents> {
    let (before, after) = (r.intents_before.as_ref()?, r.intents_after.as_ref()?);
    let gold = r.gold_intents.as_ref();
    Some(SampleIntents {
        overlap: intent_overlap(before, after, threshold),
        stability: stability_f1(before, after, threshold),
        ndcg: gold.and_then(|g| ndcg_at_2(before, g).ok()),
        jaccard: gold.map(|g| jaccard_acc(before, g, threshold)),
    })
}

pub fn summarize_method(manifest: &AttackManifest, records: &[AttackRecord]) -> MethodSummary {
    let ok: Vec<&AttackRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let policy = &manifest.scoring;
    let privacy = privacy_aggregate(ok.iter().flat_map(|r| r.outcomes.iter()), policy).ok();
    let utilities: Vec<UtilityScores> = ok.iter().filter_map(|r| r.utility).collect();
    let utility = (!utilities.is_empty()).then(|| UtilityScores::mean(&utilities));
    let intents: Vec<SampleIntents> = ok.iter().filter_map(|r| sample_intents(r, manifest.intent_threshold)).collect();
    let intent_summary = (!intents.is_empty()).then(|| IntentSummary {
        intent_overlap: mean(intents.iter().map(|i| i.overlap)).unwrap_or(0.0),
        stability_f1: mean(intents.iter().map(|i| i.stability)).unwrap_or(0.0),
        ndcg_at_2: mean(intents.iter().filter_map(|i| i.ndcg)),
        jaccard_acc: mean(intents.iter().filter_map(|i| i.jaccard)),
        evaluated: intents.len(),
        with_gold: intents.iter().filter(|i| i.jaccard.is_some()).count(),
    });
    MethodSummary {
        method: manifest.method.clone(),
        samples: records.len(),
        errors: records.len() - ok.len(),
        privacy,
        utility,
        overall: None,
        intents: intent_summary,
        similarity: similarity_distribution(&utilities.iter().map(|u| u.meaning).collect::<Vec<_>>()),
        sample_privacy: ok
            .iter()
            .filter_map(|r| Some((r.author_id.clone(), sample_privacy(r, policy)?)))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub dataset_fingerprint: String,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Better {
    Higher,
    Lower,
    Unranked,
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => {
            let s = format!("{x:.3}");
            // avoid "-0.000"
            if s == "-0.000" { "0.000".into() } else { s }
        }
        None => "-".into(),
    }
}

/// Table-1-style TSV: one row per metric, one column per method; best
/// value bold (`**x**`), second best underlined (`_x_`), original excluded.
pub fn render_report(eval: &Evaluation) -> String {
    let methods = &eval.methods;
    let mut rows: Vec<(String, Vec<Option<f64>>, Better)> = Vec::new();
    let col = |f: &dyn Fn(&MethodSummary) -> Option<f64>| methods.iter().map(f).collect::<Vec<_>>();
    for a in AttributeKind::ALL {
        if methods.iter().any(|m| m.privacy.as_ref().is_some_and(|p| p.per_attribute.contains_key(&a))) {
            rows.push((
                a.table_label().to_string(),
                col(&|m| m.privacy.as_ref().and_then(|p| p.per_attribute.get(&a).copied())),
                Better::Unranked,
            ));
        }
    }
    rows.push(("Privacy".into(), col(&|m| m.privacy.as_ref().map(|p| p.micro)), Better::Lower));
    rows.push(("Privacy (macro)".into(), col(&|m| m.privacy.as_ref().map(|p| p.macro_avg)), Better::Unranked));
    rows.push(("Mean".into(), col(&|m| m.utility.map(|u| u.meaning)), Better::Unranked));
    rows.push(("Read".into(), col(&|m| m.utility.map(|u| u.readability)), Better::Unranked));
    rows.push(("Hall".into(), col(&|m| m.utility.map(|u| u.hallucination)), Better::Unranked));
    rows.push(("BLEU".into(), col(&|m| m.utility.map(|u| u.bleu)), Better::Unranked));
    rows.push(("ROUGE".into(), col(&|m| m.utility.map(|u| u.rouge)), Better::Unranked));
    rows.push(("Utility".into(), col(&|m| m.utility.map(|u| u.utility_aggregate)), Better::Higher));
    rows.push(("Overall".into(), col(&|m| m.overall), Better::Higher));
    rows.push(("Intent Overlap".into(), col(&|m| m.intents.map(|i| i.intent_overlap)), Better::Higher));
    rows.push(("Stability F1".into(), col(&|m| m.intents.map(|i| i.stability_f1)), Better::Higher));
    rows.push(("NDCG@2".into(), col(&|m| m.intents.and_then(|i| i.ndcg_at_2)), Better::Higher));
    rows.push(("J-Acc".into(), col(&|m| m.intents.and_then(|i| i.jaccard_acc)), Better::Higher));

    let mut out = String::from("metric");
    for m in methods {
        out.push('\t');
        out.push_str(&m.method);
    }
    out.push('\n');
    for (label, values, better) in rows {
        let cells: Vec<String> = values.iter().map(|v| fmt_cell(*v)).collect();
        let mut ranked: Vec<String> = cells
            .iter()
            .zip(methods)
            .filter(|(c, m)| m.method != ORIGINAL && *c != "-")
            .map(|(c, _)| c.clone())
            .collect();
        ranked.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap_or(0.0), b.parse::<f64>().unwrap_or(0.0));
            match better {
                Better::Lower => x.total_cmp(&y),
                _ => y.total_cmp(&x),
            }
        });
        ranked.dedup();
        out.push_str(&label);
        for (cell, m) in cells.iter().zip(methods) {
            out.push('\t');
            let eligible = better != Better::Unranked && m.method != ORIGINAL && cell != "-";
            if eligible && ranked.first() == Some(cell) {
                let _ = write!(out, "**{cell}**");
            } else if eligible && ranked.get(1) == Some(cell) {
                let _ = write!(out, "_{cell}_");
            } else {
                out.push_str(cell);
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricRecord<'a> {
    method: &'a str,
    author_id: &'a str,
    metric: &'static str,
    value: f64,
}

/// Pure function of the run directories: identical inputs give
/// byte-identical outputs.
pub fn cmd_evaluate(run_dirs: &[PathBuf], out: &Path) -> Result<Evaluation, RunError> {
    if run_dirs.is_empty() {
        return Err(RunError::IncompatibleRuns("no run directories".into()));
    }
    let mut loaded = Vec::new();
    for dir in run_dirs {
        let manifest: AttackManifest = read_json(&dir.join(ATTACK_MANIFEST))?;
        let records: Vec<AttackRecord> = read_lines(&dir.join(ATTACK))?;
        loaded.push((manifest, records));
    }
    let fingerprint = loaded[0].0.dataset_fingerprint.clone();
    if let Some((m, _)) = loaded.iter().find(|(m, _)| m.dataset_fingerprint != fingerprint) {
        return Err(RunError::IncompatibleRuns(format!(
            "{} uses dataset {} but {} uses {}",
            m.method, m.dataset_fingerprint, loaded[0].0.method, fingerprint
        )));
    }
    let mut methods: Vec<MethodSummary> = loaded.iter().map(|(m, r)| summarize_method(m, r)).collect();
    let original_privacy = methods
        .iter()
        .find(|m| m.method == ORIGINAL)
        .and_then(|m| m.privacy.as_ref().map(|p| p.micro));
    for m in &mut methods {
        if let (Some(orig), Some(p), Some(u)) = (original_privacy, m.privacy.as_ref(), m.utility) {
            m.overall = crate::evalsuite::overall_score(u.utility_aggregate, p.micro, orig).ok();
        }
    }
    let eval = Evaluation { dataset_fingerprint: fingerprint, methods };

    std::fs::create_dir_all(out).map_err(io(format!("creating {}", out.display())))?;
    std::fs::write(out.join(REPORT), render_report(&eval)).map_err(io("writing report"))?;
    write_json(&out.join(SUMMARY), &eval)?;
    let hist: BTreeMap<&str, &Histogram> = eval.methods.iter().map(|m| (m.method.as_str(), &m.similarity)).collect();
    write_json(&out.join(HISTOGRAMS), &hist)?;

    let mut records = Vec::new();
    for (manifest, recs) in &loaded {
        for r in recs.iter().filter(|r| r.error.is_none()) {
            let mut push = |metric: &'static str, value: f64| {
                records.push(MetricRecord { method: &manifest.method, author_id: &r.author_id, metric, value })
            };
            if let Some(p) = sample_privacy(r, &manifest.scoring) {
                push("privacy", p);
            }
            if let Some(u) = r.utility {
                push("meaning", u.meaning);
                push("readability", u.readability);
                push("hallucination", u.hallucination);
                push("bleu", u.bleu);
                push("rouge", u.rouge);
                push("utility", u.utility_aggregate);
            }
            if let Some(i) = sample_intents(r, manifest.intent_threshold) {
                push("intent_overlap", i.overlap);
                push("stability_f1", i.stability);
                if let Some(v) = i.ndcg {
                    push("ndcg_at_2", v);
                }
                if let Some(v) = i.jaccard {
                    push("jaccard_acc", v);
                }
            }
        }
    }
    write_lines(&out.join(RECORDS), &records)?;
    Ok(eval)
}

/// The stored report of an evaluation or sweep directory.
pub fn cmd_report(dir: &Path) -> Result<String, RunError> {
    for name in [REPORT, CURVE_TSV] {
        let path = dir.join(name);
        if path.exists() {
            return std::fs::read_to_string(&path).map_err(io(format!("reading {}", path.display())));
        }
    }
    Err(RunError::MissingRunFile(dir.join(REPORT)))
}

pub fn load_results(dir: &Path) -> Result<(RunManifest, Vec<AnonymizationResult>), RunError> {
    Ok((read_json(&dir.join(MANIFEST))?, read_lines(&dir.join(RESULTS))?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_marks_best_and_second() {
        let summary = |method: &str, privacy: f64, utility: f64| MethodSummary {
            method: method.into(),
            samples: 1,
            errors: 0,
            privacy: Some(PrivacyScores {
                per_attribute: BTreeMap::new(),
                counts: BTreeMap::new(),
                micro: privacy,
                macro_avg: privacy,
            }),
            utility: Some(UtilityScores {
                meaning: utility,
                readability: utility,
                hallucination: 1.0,
                bleu: utility,
                rouge: utility,
                utility_aggregate: utility,
            }),
            overall: None,
            intents: None,
            similarity: similarity_distribution(&[]),
            sample_privacy: BTreeMap::new(),
        };
        let eval = Evaluation {
            dataset_fingerprint: "x".into(),
            methods: vec![summary(ORIGINAL, 0.6, 1.0), summary("a", 0.4, 0.8), summary("b", 0.3, 0.9), summary("c", 0.5, 0.7)],
        };
        let report = render_report(&eval);
        let privacy = report.lines().find(|l| l.starts_with("Privacy\t")).unwrap();
        assert_eq!(privacy, "Privacy\t0.600\t_0.400_\t**0.300**\t0.500");
        let utility = report.lines().find(|l| l.starts_with("Utility\t")).unwrap();
        assert_eq!(utility, "Utility\t1.000\t_0.800_\t**0.900**\t0.700");
    }
}
