use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use oracle_forge::beam::audit_tree;
use oracle_forge::config::{BackendKind, ConfigError, Overrides, PipelineConfig};
use oracle_forge::dataset::{read_audit, DatasetManifest};
use oracle_forge::kernel::{render_conclusions, verify_step_text};
use oracle_forge::pipeline::{stats_from_file, Pipeline, PipelineError};

const CONFIG_ERROR: u8 = 2;
const STEP_FAILED: u8 = 3;
const DEFAULT_CONFIG: &str = "oracle-forge.toml";

#[derive(Parser)]
#[command(
    name = "oracle-forge",
    version,
    about = "Synthesize verified step-by-step reasoning data"
)]
struct Cli {
    /// Run configuration (TOML). Defaults to ./oracle-forge.toml when present.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// scripted-oracle, scripted-noisy or http
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Machine-readable output on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample complete responses and keep the conforming, correct ones.
    Stage1,
    /// Beam search with engine verification; writes SFT, DPO and audit data.
    Stage2,
    /// Success rate and failure split from an audit file.
    Stats {
        /// Defaults to <out>/audit.jsonl.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Check the structural invariants of every tree in an audit file.
    Audit {
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Run the engine on one step: premises from --kb, one rule in --step.
    VerifyStep {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        step: PathBuf,
    },
    /// Task corpus utilities.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Write the configured task corpus as JSONL (stdout unless --file).
    Export {
        #[arg(long)]
        file: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None if Path::new(DEFAULT_CONFIG).is_file() => {
            PipelineConfig::load(Path::new(DEFAULT_CONFIG))?
        }
        None => PipelineConfig::default(),
    };
    let backend = cli
        .backend
        .as_deref()
        .map(str::parse::<BackendKind>)
        .transpose()?;
    cfg.apply(&Overrides {
        seed: cli.seed,
        backend,
        output_dir: cli.out.clone(),
    });
    Ok(cfg)
}

fn print_manifest(m: &DatasetManifest, json: bool) -> anyhow::Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(m)?);
        return Ok(());
    }
    let c = &m.counts;
    println!(
        "tasks {}  sft {}  dpo {}  rejected {}  audit nodes {}",
        c.tasks, c.sft, c.dpo, c.rejected, c.audit_nodes
    );
    for (file, hash) in &m.files {
        println!("{hash}  {file}");
    }
    for w in &m.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn audit_path(cli: &Cli, explicit: &Option<PathBuf>) -> Result<PathBuf, ConfigError> {
    Ok(match explicit {
        Some(p) => p.clone(),
        None => load_config(cli)?.output_dir.join("audit.jsonl"),
    })
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    match &cli.command {
        Command::Stage1 => {
            let pipeline = Pipeline::new(load_config(cli)?)?;
            let out = pipeline.config.output_dir.clone();
            print_manifest(&pipeline.run_stage1(&out)?, cli.json)?;
        }
        Command::Stage2 => {
            let pipeline = Pipeline::new(load_config(cli)?)?;
            let out = pipeline.config.output_dir.clone();
            let (manifest, _) = pipeline.run_stage2(&out)?;
            print_manifest(&manifest, cli.json)?;
        }
        Command::Stats { audit } => {
            let stats = stats_from_file(&audit_path(cli, audit)?)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
            } else {
                print!("{}", stats.render_table());
            }
        }
        Command::Audit { audit } => {
            let cfg = load_config(cli)?;
            let path = audit_path(cli, audit)?;
            let file = std::fs::File::open(&path)
                .with_context(|| format!("opening {}", path.display()))?;
            let records = read_audit(std::io::BufReader::new(file))?;
            let summary = audit_tree(&records, &cfg.beam)?;
            println!(
                "{} trees, {} nodes; max layer {}, max expanded per depth {}, max children {}",
                summary.trees,
                summary.nodes,
                summary.max_frontier,
                summary.max_expanded_per_depth,
                summary.max_children
            );
        }
        Command::VerifyStep { kb, step } => {
            let read = |p: &PathBuf| {
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
            };
            let verdict = verify_step_text(&read(kb)?, &read(step)?);
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&verdict)?);
            } else if let Some(f) = verdict.failure() {
                println!("not executed: {f}");
            } else {
                println!("executed: {}", render_conclusions(verdict.conclusions()));
            }
            if !verdict.executed() {
                return Ok(ExitCode::from(STEP_FAILED));
            }
        }
        Command::Corpus {
            command: CorpusCommand::Export { file },
        } => {
            let cfg = load_config(cli)?;
            cfg.corpus.validate()?;
            let tasks = oracle_forge::corpus::generate_corpus(&cfg.corpus, cfg.seed)?;
            match file {
                Some(path) => {
                    let f = std::fs::File::create(path)
                        .with_context(|| format!("creating {}", path.display()))?;
                    oracle_forge::corpus::write_jsonl(&tasks, std::io::BufWriter::new(f))?;
                }
                None => {
                    let stdout = std::io::stdout().lock();
                    oracle_forge::corpus::write_jsonl(&tasks, stdout)?;
                }
            }
        }
    }
    std::io::stdout().flush()?;
    Ok(ExitCode::SUCCESS)
}

fn is_config_error(e: &anyhow::Error) -> bool {
    e.downcast_ref::<ConfigError>().is_some()
        || matches!(
            e.downcast_ref::<PipelineError>(),
            Some(PipelineError::Config(_))
        )
        || e.downcast_ref::<oracle_forge::corpus::CorpusError>()
            .is_some_and(|c| matches!(c, oracle_forge::corpus::CorpusError::InvalidSpec(_)))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_config_error(&e) {
                ExitCode::from(CONFIG_ERROR)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
