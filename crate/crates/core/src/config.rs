//! TOML run configuration. Relative paths resolve against the directory
//! of the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::beam::BeamConfig;
use crate::corpus::{CorpusSpec, CorruptionModel};
use crate::gateway::http::{HttpSettings, PromptAssets};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("missing prompt asset {0}")]
    MissingPrompt(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    ScriptedOracle,
    ScriptedNoisy,
    Http,
}

impl BackendKind {
    pub fn name(self) -> &'static str {
        match self {
            BackendKind::ScriptedOracle => "scripted-oracle",
            BackendKind::ScriptedNoisy => "scripted-noisy",
            BackendKind::Http => "http",
        }
    }
}

impl std::str::FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted-oracle" => Ok(BackendKind::ScriptedOracle),
            "scripted-noisy" => Ok(BackendKind::ScriptedNoisy),
            "http" => Ok(BackendKind::Http),
            other => Err(ConfigError::Invalid(format!(
                "unknown backend `{other}` (expected scripted-oracle, scripted-noisy or http)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Only read by `scripted-noisy`.
    pub corruption: CorruptionModel,
    /// Only read by `http`.
    pub http: HttpSettings,
}

/// Output volume the run aims for. Falling short is a warning, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VolumeTargets {
    pub sft_target: usize,
    pub dpo_target: usize,
    /// Complete responses sampled per task in the few-shot stage.
    pub stage1_samples: usize,
}

impl Default for VolumeTargets {
    fn default() -> Self {
        VolumeTargets {
            sft_target: 12_000,
            dpo_target: 2_000,
            stage1_samples: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub prompts_dir: PathBuf,
    /// Task JSONL to load instead of generating from `[corpus]`.
    pub tasks_file: Option<PathBuf>,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
    pub backend: BackendConfig,
    pub beam: BeamConfig,
    pub corpus: CorpusSpec,
    pub volume: VolumeTargets,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            output_dir: "out".into(),
            prompts_dir: "prompts".into(),
            tasks_file: None,
            workers: 0,
            backend: BackendConfig::default(),
            beam: BeamConfig::default(),
            corpus: CorpusSpec::default(),
            volume: VolumeTargets::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub backend: Option<BackendKind>,
    pub output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        for p in [&mut cfg.output_dir, &mut cfg.prompts_dir] {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if let Some(p) = cfg.tasks_file.as_mut().filter(|p| p.is_relative()) {
            *p = base_dir.join(&*p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_toml(&text, base)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(kind) = o.backend {
            self.backend.kind = kind;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
        self.beam.seed = self.seed;
    }

    /// Everything checkable without running: search shape, corpus bounds,
    /// corruption probabilities and presence of the prompt assets.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.beam
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("[beam] {e}")))?;
        self.corpus
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("[corpus] {e}")))?;
        self.backend
            .corruption
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("[backend.corruption] {e}")))?;
        if self.volume.stage1_samples == 0 {
            return Err(ConfigError::Invalid(
                "[volume] stage1_samples must be positive".into(),
            ));
        }
        if self.backend.kind == BackendKind::Http && self.backend.http.max_in_flight == 0 {
            return Err(ConfigError::Invalid(
                "[backend.http] max_in_flight must be positive".into(),
            ));
        }
        for name in PromptAssets::FILES {
            let path = self.prompts_dir.join(name);
            if !path.is_file() {
                return Err(ConfigError::MissingPrompt(path));
            }
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration minus the output directory and
    /// worker count, recorded in manifests.
    pub fn fingerprint(&self) -> String {
        let cfg = PipelineConfig {
            output_dir: PathBuf::new(),
            workers: 0,
            ..self.clone()
        };
        let text = toml::to_string(&cfg).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
