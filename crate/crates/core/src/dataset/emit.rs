//! JSONL writers and the run manifest. Records have a fixed key order and
//! no timestamps, so equal inputs give byte-identical files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{normalize_answer, step_text, RejectReason};
use crate::beam::{AuditRecord, BeamResult};
use crate::gateway::TelemetrySnapshot;
use crate::kernel::RULE_LANGUAGE_VERSION;
use crate::template::{conforms_strictly, parse_response, parse_steps, render_response};

pub const SFT_FILE: &str = "sft.jsonl";
pub const DPO_FILE: &str = "dpo.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const REJECTIONS_FILE: &str = "rejections.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("internal record invariant violated: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub prompt: String,
    pub response: String,
    pub task_id: String,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub task_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionRecord {
    pub task_id: String,
    pub reason: RejectReason,
    pub detail: String,
}

/// Run metadata supplied by the caller.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMeta {
    pub seed: u64,
    pub config_sha256: String,
    pub backend: String,
    pub telemetry: TelemetrySnapshot,
    pub warnings: Vec<String>,
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tasks: usize,
    pub sft: usize,
    pub dpo: usize,
    pub rejected: usize,
    pub audit_nodes: usize,
    pub tasks_without_path: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub stage: Stage,
    pub seed: u64,
    pub config_sha256: String,
    pub rule_language_version: String,
    pub backend: String,
    pub counts: Counts,
    /// File name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
    pub telemetry: TelemetrySnapshot,
    pub warnings: Vec<String>,
    pub partial: bool,
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), EmitError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| EmitError::SchemaViolation(e.to_string()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

fn finish(
    out_dir: &Path,
    stage: Stage,
    files: &[&str],
    counts: Counts,
    meta: &RunMeta,
) -> Result<DatasetManifest, EmitError> {
    let mut hashes = BTreeMap::new();
    for f in files {
        let path = out_dir.join(f);
        hashes.insert(f.to_string(), file_sha256(&path).map_err(io_err(&path))?);
    }
    let manifest = DatasetManifest {
        stage,
        seed: meta.seed,
        config_sha256: meta.config_sha256.clone(),
        rule_language_version: RULE_LANGUAGE_VERSION.to_string(),
        backend: meta.backend.clone(),
        counts,
        files: hashes,
        telemetry: meta.telemetry,
        warnings: meta.warnings.clone(),
        partial: meta.partial,
    };
    let path = out_dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| EmitError::SchemaViolation(e.to_string()))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

/// SFT records of the harvested paths, deduplicated by (task, response
/// hash), each re-checked against the strict template and the gold answer.
pub fn sft_records(results: &[BeamResult]) -> Result<Vec<SftRecord>, EmitError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in results {
        for path in &r.sft_paths {
            let response = render_response(&path.steps, Some(&path.final_answer))
                .map_err(|e| EmitError::SchemaViolation(e.to_string()))?;
            if !seen.insert((
                r.task_id.clone(),
                hex::encode(Sha256::digest(response.as_bytes())),
            )) {
                continue;
            }
            let answer = parse_response(&response).ok().and_then(|p| p.final_answer);
            if !conforms_strictly(&response)
                || answer.map(|a| normalize_answer(&a)) != Some(normalize_answer(&r.gold_answer))
            {
                return Err(EmitError::SchemaViolation(format!(
                    "task {}: harvested path fails the stage-1 check",
                    r.task_id
                )));
            }
            out.push(SftRecord {
                prompt: r.prompt.clone(),
                response,
                task_id: r.task_id.clone(),
                stage: Stage::Stage2,
            });
        }
    }
    Ok(out)
}

pub fn dpo_records(results: &[BeamResult]) -> Result<Vec<DpoRecord>, EmitError> {
    let mut out = Vec::new();
    for r in results {
        for p in &r.pairs {
            let (chosen, rejected) = (step_text(&p.chosen), step_text(&p.rejected));
            let single = |t: &str| parse_steps(t).is_ok_and(|s| s.steps.len() == 1);
            if chosen == rejected || !single(&chosen) || !single(&rejected) {
                return Err(EmitError::SchemaViolation(format!(
                    "task {}: degenerate preference pair",
                    r.task_id
                )));
            }
            out.push(DpoRecord {
                prompt: p.prompt.clone(),
                chosen,
                rejected,
                task_id: r.task_id.clone(),
            });
        }
    }
    Ok(out)
}

/// Writes `sft.jsonl`, `dpo.jsonl`, `audit.jsonl` and `manifest.json`.
pub fn emit_datasets(
    results: &[BeamResult],
    out_dir: &Path,
    meta: &RunMeta,
) -> Result<DatasetManifest, EmitError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let sft = sft_records(results)?;
    let dpo = dpo_records(results)?;
    let audit: Vec<AuditRecord> = results.iter().flat_map(AuditRecord::records).collect();
    write_jsonl(&out_dir.join(SFT_FILE), &sft)?;
    write_jsonl(&out_dir.join(DPO_FILE), &dpo)?;
    write_jsonl(&out_dir.join(AUDIT_FILE), &audit)?;
    let counts = Counts {
        tasks: results.len(),
        sft: sft.len(),
        dpo: dpo.len(),
        rejected: 0,
        audit_nodes: audit.len(),
        tasks_without_path: results.iter().filter(|r| r.sft_paths.is_empty()).count(),
    };
    finish(
        out_dir,
        Stage::Stage2,
        &[SFT_FILE, DPO_FILE, AUDIT_FILE],
        counts,
        meta,
    )
}

/// Writes the filtered few-shot output: `sft.jsonl`, `rejections.jsonl`
/// and `manifest.json`.
pub fn emit_stage1(
    kept: &[SftRecord],
    rejected: &[RejectionRecord],
    tasks: usize,
    out_dir: &Path,
    meta: &RunMeta,
) -> Result<DatasetManifest, EmitError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_jsonl(&out_dir.join(SFT_FILE), kept)?;
    write_jsonl(&out_dir.join(REJECTIONS_FILE), rejected)?;
    let counts = Counts {
        tasks,
        sft: kept.len(),
        rejected: rejected.len(),
        ..Counts::default()
    };
    finish(
        out_dir,
        Stage::Stage1,
        &[SFT_FILE, REJECTIONS_FILE],
        counts,
        meta,
    )
}
