use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anonkit_client::Client;
use anonkit_core::corpus::{load_dataset, Dataset};
use anonkit_core::gateway::{usage_report, Gateway, ModelProfile, ResponseCache, UsageGrouping};
use anonkit_core::ledger::{read_jsonl, LedgerEntry};
use anonkit_core::model::{AttributeKind, ExposureLevel};
use anonkit_core::pipeline::{Pipeline, PipelineConfig};
use anonkit_core::runs::{cmd_evaluate, cmd_report, render_report, Runner, TextSource, ATTACK_LEDGER, LEDGER};
use anonkit_core::simulate::Simulator;
use anonkit_server::AppState;
use clap::{Args, Parser, Subcommand, ValueEnum};

const MOCK_PROVIDER: &str = "mock";

#[derive(Debug, Parser)]
#[command(name = "anonkit", version, about = "Intent-aware text anonymization and evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Pipeline config (JSON). Defaults to the built-in config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Backbone for the anonymizer stage: glm, deepseek, gpt or gemini.
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Response cache directory.
    #[arg(long, global = true, default_value = ".anonkit-cache")]
    cache_dir: PathBuf,
    #[arg(long, global = true)]
    no_cache: bool,
    /// Abort once this many provider tokens have been spent.
    #[arg(long, global = true)]
    token_ceiling: Option<u64>,
    /// Answer every call with the offline simulator instead of hosted models.
    #[arg(long, global = true)]
    mock: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the anonymization pipeline over a dataset.
    Anonymize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Force one exposure level for every attribute.
        #[arg(long)]
        level: Option<ExposureLevel>,
        #[arg(long, default_value = "intentanony")]
        method: String,
    },
    /// Attack original, anonymized or externally produced texts.
    Attack {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Anonymization run directory to attack.
        #[arg(long, conflicts_with = "external")]
        run: Option<PathBuf>,
        /// Directory of `<author_id>.txt` files.
        #[arg(long)]
        external: Option<PathBuf>,
    },
    /// Aggregate attacked run directories into a comparison report.
    Evaluate {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Privacy/utility curve over forced exposure levels.
    Sweep {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "L0,L1,L2,L3,BAN")]
        levels: Vec<ExposureLevel>,
    },
    /// Serve the blinded review and steering endpoints.
    Serve {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Where sessions and ratings are appended. Defaults to the first run dir.
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Source of ground truth for what-if runs.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Print a report written by `evaluate` or `sweep`.
    Report { dir: PathBuf },
    /// Token usage of run directories relative to a baseline.
    Cost {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        baseline: String,
        #[arg(long, value_enum, default_value = "method")]
        by: Grouping,
    },
    /// Talk to a running review service.
    Remote {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[command(subcommand)]
        action: Remote,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Grouping {
    Method,
    Stage,
}

#[derive(Debug, Subcommand)]
enum Remote {
    Health,
    Aggregate {
        #[arg(long)]
        unblind: bool,
    },
    WhatIf {
        sample_id: String,
        level: ExposureLevel,
    },
    Contribution {
        sample_id: String,
        attribute: AttributeKind,
    },
}

type Res<T> = Result<T, Box<dyn std::error::Error>>;

fn config(g: &Global) -> Res<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(name) = &g.profile {
        cfg.anonymizer_profile = ModelProfile::named(name).ok_or_else(|| format!("unknown profile `{name}`"))?;
    }
    if g.mock {
        cfg = cfg.with_provider(MOCK_PROVIDER);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gateway(g: &Global) -> Res<Arc<Gateway>> {
    let mut gw = if g.mock { Gateway::new().with_provider(MOCK_PROVIDER, Simulator::default()) } else { Gateway::hosted() };
    if !g.no_cache {
        gw = gw.with_cache(ResponseCache::open(&g.cache_dir)?);
    }
    Ok(Arc::new(gw.with_token_ceiling(g.token_ceiling)))
}

fn dataset(path: &Path, annotations: Option<&Path>) -> Res<Dataset> {
    let ds = load_dataset(path, annotations)?;
    for w in &ds.report.warnings {
        tracing::warn!("{w}");
    }
    tracing::info!(authors = ds.samples.len(), skipped = ds.report.skipped, "dataset loaded");
    Ok(ds)
}

fn print_json<T: serde::Serialize>(v: &T) -> Res<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

async fn run(cli: Cli) -> Res<ExitCode> {
    let g = &cli.global;
    match cli.command {
        Command::Anonymize { dataset: ds, annotations, out, level, method } => {
            let cfg = config(g)?.with_override(level);
            let ds = dataset(&ds, annotations.as_deref())?;
            let outcome = Runner::new(gateway(g)?, !g.no_cache).cmd_anonymize(&ds, &cfg, &out, &method).await?;
            let t = &outcome.manifest.totals;
            println!("{}: {} samples, {} failed, {} tokens", out.display(), t.samples, t.failures, t.tokens());
            if t.failures > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Attack { dataset: ds, annotations, out, run, external } => {
            let cfg = config(g)?;
            let ds = dataset(&ds, annotations.as_deref())?;
            let source = match (run, external) {
                (Some(d), _) => TextSource::Anonymized(d),
                (None, Some(d)) => TextSource::External(d),
                (None, None) => TextSource::Original,
            };
            let attack = Runner::new(gateway(g)?, !g.no_cache).cmd_attack(&ds, &cfg, &source, &out).await?;
            let t = &attack.manifest.totals;
            println!("{}: {} samples, {} failed, {} tokens", out.display(), t.samples, t.failures, t.tokens());
            if t.failures > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Evaluate { runs, out } => {
            let eval = cmd_evaluate(&runs, &out)?;
            print!("{}", render_report(&eval));
        }
        Command::Sweep { dataset: ds, annotations, out, levels } => {
            let cfg = config(g)?;
            let ds = dataset(&ds, annotations.as_deref())?;
            let rows = Runner::new(gateway(g)?, !g.no_cache).cmd_sweep(&ds, &cfg, &levels, &out).await?;
            for r in rows {
                println!("{}\t{}\t{:.3}\t{:.3}", r.level, r.backbone, r.privacy, r.utility);
            }
        }
        Command::Serve { runs, bind, state_dir, dataset: ds } => {
            let cfg = config(g)?;
            let samples = match ds {
                Some(p) => Some(dataset(&p, None)?.samples),
                None => None,
            };
            let state_dir = state_dir.unwrap_or_else(|| runs[0].clone());
            let pipeline = Pipeline::new(gateway(g)?, cfg, !g.no_cache);
            let state = AppState::load(&runs, &state_dir, pipeline, samples, None)?;
            anonkit_server::serve(Arc::new(state), bind).await?;
        }
        Command::Report { dir } => print!("{}", cmd_report(&dir)?),
        Command::Cost { runs, baseline, by } => {
            let mut entries: Vec<(String, LedgerEntry)> = Vec::new();
            for dir in &runs {
                let method = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                for name in [LEDGER, ATTACK_LEDGER] {
                    let path = dir.join(name);
                    if path.exists() {
                        entries.extend(read_jsonl::<LedgerEntry>(&path)?.into_iter().map(|e| (method.clone(), e)));
                    }
                }
            }
            let records: Vec<_> = entries.iter().map(|(m, e)| (m.as_str(), e.record())).collect();
            let grouping = match by {
                Grouping::Method => UsageGrouping::Method,
                Grouping::Stage => UsageGrouping::Stage,
            };
            println!("group\tcalls\ttokens\trelative");
            for row in usage_report(records.iter().map(|(m, r)| (*m, r)), grouping, &baseline)? {
                println!("{}\t{}\t{}\t{:.1}x", row.group, row.calls, row.total_tokens, row.relative_cost);
            }
        }
        Command::Remote { url, action } => {
            let client = Client::new(&url)?;
            match action {
                Remote::Health => print_json(&client.health().await?)?,
                Remote::Aggregate { unblind } => print_json(&client.aggregate(unblind).await?)?,
                Remote::WhatIf { sample_id, level } => print_json(&client.what_if(&sample_id, level).await?)?,
                Remote::Contribution { sample_id, attribute } => {
                    print_json(&client.contribution_of(&sample_id, attribute).await?)?
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "anonkit=info,warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
