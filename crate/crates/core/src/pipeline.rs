//! End-to-end runs: load tasks, build the backend, search, emit.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use thiserror::Error;

use crate::beam::{run_beam, BeamResult};
use crate::config::{BackendKind, ConfigError, PipelineConfig};
use crate::corpus::{self, CorpusError, CorruptionModel, TaskInstance};
use crate::dataset::{
    compute_stats, dpo_records, emit_datasets, emit_stage1, read_audit, sft_records, stage1_filter,
    DatasetManifest, EmitError, RunMeta, RunStats, Stage1Input, StatsError,
};
use crate::gateway::http::{resolve_api_key, HttpBackend, PromptAssets, ReqwestTransport};
use crate::gateway::{
    Gateway, GenerationContext, ScriptedBackend, Telemetry, GENERATION_TEMPERATURE,
};
use crate::seed::{mix, mix_index};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Emit(#[from] EmitError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Backend(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

enum Backend {
    Scripted(CorruptionModel),
    Http(Arc<HttpBackend>),
}

/// A validated configuration with its prompts and backend ready to use.
pub struct Pipeline {
    pub config: PipelineConfig,
    prompts: Arc<PromptAssets>,
    backend: Backend,
    telemetry: Arc<Telemetry>,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// Validates before anything is generated.
    pub fn new(config: PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let prompts = Arc::new(
            PromptAssets::load(&config.prompts_dir)
                .map_err(|e| ConfigError::Invalid(format!("prompt assets: {e}")))?,
        );
        let telemetry = Arc::new(Telemetry::default());
        let backend = match config.backend.kind {
            BackendKind::ScriptedOracle => Backend::Scripted(CorruptionModel::none()),
            BackendKind::ScriptedNoisy => Backend::Scripted(config.backend.corruption),
            BackendKind::Http => {
                let http = &config.backend.http;
                let key = resolve_api_key(http, |v| std::env::var(v).ok())
                    .map_err(ConfigError::Invalid)?;
                let transport = ReqwestTransport::new(
                    &http.endpoint,
                    key,
                    Duration::from_secs(http.timeout_secs),
                )
                .map_err(|e| PipelineError::Backend(e.to_string()))?;
                Backend::Http(Arc::new(HttpBackend::new(
                    Arc::new(transport),
                    http.clone(),
                    prompts.clone(),
                    telemetry.clone(),
                )))
            }
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| PipelineError::Backend(format!("worker pool: {e}")))?;
        Ok(Pipeline {
            config,
            prompts,
            backend,
            telemetry,
            pool,
        })
    }

    pub fn telemetry(&self) -> &Arc<Telemetry> {
        &self.telemetry
    }

    pub fn tasks(&self) -> Result<Vec<TaskInstance>, PipelineError> {
        match &self.config.tasks_file {
            Some(path) => {
                let file = File::open(path).map_err(|source| PipelineError::Io {
                    path: path.clone(),
                    source,
                })?;
                Ok(corpus::read_jsonl(BufReader::new(file))?)
            }
            None => Ok(corpus::generate_corpus(
                &self.config.corpus,
                self.config.seed,
            )?),
        }
    }

    fn gateway_for(&self, task: &Arc<TaskInstance>) -> Gateway {
        match &self.backend {
            Backend::Scripted(model) => Gateway::uniform(
                Arc::new(ScriptedBackend::new(task.clone(), *model)),
                self.telemetry.clone(),
            ),
            Backend::Http(b) => Gateway::uniform(b.clone(), self.telemetry.clone()),
        }
    }

    fn meta(&self, mut warnings: Vec<String>) -> RunMeta {
        let telemetry = self.telemetry.snapshot();
        if telemetry.backend_errors > 0 {
            warnings.push(format!(
                "{} backend calls failed; output is partial",
                telemetry.backend_errors
            ));
        }
        for w in &warnings {
            tracing::warn!("{w}");
        }
        RunMeta {
            seed: self.config.seed,
            config_sha256: self.config.fingerprint(),
            backend: self.config.backend.kind.name().to_string(),
            telemetry,
            warnings,
            partial: telemetry.backend_errors > 0,
        }
    }

    fn corruption_warnings(&self) -> Vec<String> {
        match &self.backend {
            Backend::Scripted(m) if m.expected_success_rate() == 0.0 => {
                vec![
                    "corruption leaves no executable step; no positive examples can be produced"
                        .into(),
                ]
            }
            _ => Vec::new(),
        }
    }

    /// Samples complete responses and keeps the conforming, correct ones.
    pub fn run_stage1(&self, out_dir: &Path) -> Result<DatasetManifest, PipelineError> {
        let tasks = self.tasks()?;
        let task_count = tasks.len();
        let samples = self.config.volume.stage1_samples;
        let few_shot: Arc<str> = self.prompts.stage1.as_str().into();
        let stage_seed = mix(self.config.seed, "stage1");
        let inputs: Vec<Stage1Input> = self.pool.install(|| {
            tasks
                .into_par_iter()
                .flat_map_iter(|task| {
                    let task = Arc::new(task);
                    let gateway = self.gateway_for(&task);
                    let task_seed = mix(stage_seed, &task.id);
                    let few_shot = few_shot.clone();
                    (0..samples)
                        .filter_map(move |i| {
                            let ctx = GenerationContext {
                                task_id: task.id.clone(),
                                question: task.prompt(),
                                prior_steps: Vec::new(),
                                few_shot_asset: few_shot.clone(),
                                temperature: GENERATION_TEMPERATURE,
                                seed: mix_index(task_seed, i as u64),
                            };
                            let raw = gateway
                                .respond(&ctx)
                                .inspect_err(
                                    |e| tracing::warn!(task = %task.id, error = %e, "no response"),
                                )
                                .ok()?;
                            Some(Stage1Input {
                                task_id: task.id.clone(),
                                prompt: ctx.question,
                                raw,
                                gold: task.gold_answer.clone(),
                            })
                        })
                        .collect::<Vec<_>>()
                })
                .collect()
        });
        let (kept, rejected) = stage1_filter(&inputs);
        let mut warnings = self.corruption_warnings();
        if kept.len() < self.config.volume.sft_target {
            warnings.push(format!(
                "kept {} responses, below the target of {}",
                kept.len(),
                self.config.volume.sft_target
            ));
        }
        Ok(emit_stage1(
            &kept,
            &rejected,
            task_count,
            out_dir,
            &self.meta(warnings),
        )?)
    }

    /// Beam search over every task, in task order.
    pub fn search(&self, tasks: &[TaskInstance]) -> Vec<BeamResult> {
        let few_shot: Arc<str> = self.prompts.stage1.as_str().into();
        self.pool.install(|| {
            tasks
                .par_iter()
                .map(|task| {
                    let task = Arc::new(task.clone());
                    run_beam(
                        &task,
                        &self.gateway_for(&task),
                        &self.config.beam,
                        few_shot.clone(),
                    )
                })
                .collect()
        })
    }

    pub fn run_stage2(
        &self,
        out_dir: &Path,
    ) -> Result<(DatasetManifest, Vec<BeamResult>), PipelineError> {
        let tasks = self.tasks()?;
        let results = self.search(&tasks);
        let mut warnings = self.corruption_warnings();
        let missing = results.iter().filter(|r| r.sft_paths.is_empty()).count();
        if missing > 0 {
            warnings.push(format!(
                "{missing} of {} tasks produced no correct path",
                results.len()
            ));
        }
        let volume = self.config.volume;
        let (sft, dpo) = (sft_records(&results)?.len(), dpo_records(&results)?.len());
        if sft < volume.sft_target {
            warnings.push(format!(
                "{sft} SFT records, below the target of {}",
                volume.sft_target
            ));
        }
        if dpo < volume.dpo_target {
            warnings.push(format!(
                "{dpo} DPO records, below the target of {}",
                volume.dpo_target
            ));
        }
        let manifest = emit_datasets(&results, out_dir, &self.meta(warnings))?;
        Ok((manifest, results))
    }
}

/// Statistics of an `audit.jsonl` file.
pub fn stats_from_file(path: &Path) -> Result<RunStats, PipelineError> {
    let file = File::open(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(compute_stats(&read_audit(BufReader::new(file))?))
}
