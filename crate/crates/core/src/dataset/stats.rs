//! Step success rates and the failure split, computed from an audit dump.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::FailureClass;
use crate::beam::AuditRecord;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("malformed audit at line {line}: {detail}")]
    MalformedAudit { line: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FamilyStats {
    pub steps_total: u64,
    pub steps_executed: u64,
    pub failures_generation: u64,
    pub failures_translation: u64,
    pub success_rate: f64,
}

impl FamilyStats {
    fn add(&mut self, other: &FamilyStats) {
        self.steps_total += other.steps_total;
        self.steps_executed += other.steps_executed;
        self.failures_generation += other.failures_generation;
        self.failures_translation += other.failures_translation;
    }

    fn seal(&mut self) {
        self.success_rate = if self.steps_total == 0 {
            0.0
        } else {
            self.steps_executed as f64 / self.steps_total as f64
        };
    }
}

/// Totals over every non-root node, plus one row per task family.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunStats {
    pub steps_total: u64,
    pub steps_executed: u64,
    pub failures_generation: u64,
    pub failures_translation: u64,
    pub success_rate: f64,
    pub per_task_breakdown: BTreeMap<String, FamilyStats>,
}

pub fn read_audit<R: BufRead>(input: R) -> Result<Vec<AuditRecord>, StatsError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| StatsError::MalformedAudit {
            line: i + 1,
            detail: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AuditRecord =
            serde_json::from_str(&line).map_err(|e| StatsError::MalformedAudit {
                line: i + 1,
                detail: e.to_string(),
            })?;
        if record.parent.is_some() && record.step.is_none() {
            return Err(StatsError::MalformedAudit {
                line: i + 1,
                detail: "non-root node without a step".into(),
            });
        }
        if record.parent.is_some() && record.executed == record.failure_class.is_some() {
            return Err(StatsError::MalformedAudit {
                line: i + 1,
                detail: "failure class must be present exactly for failed steps".into(),
            });
        }
        out.push(record);
    }
    Ok(out)
}

/// Pure function of the records: per-task tallies merged by family.
pub fn compute_stats(records: &[AuditRecord]) -> RunStats {
    let mut per_task: BTreeMap<(&str, &str), FamilyStats> = BTreeMap::new();
    for r in records.iter().filter(|r| r.parent.is_some()) {
        let s = per_task
            .entry((r.family.name(), r.task_id.as_str()))
            .or_default();
        s.steps_total += 1;
        if r.executed {
            s.steps_executed += 1;
        }
        match r.failure_class {
            Some(FailureClass::GenerationError) => s.failures_generation += 1,
            Some(FailureClass::TranslationError) => s.failures_translation += 1,
            None => {}
        }
    }
    let mut families: BTreeMap<String, FamilyStats> = BTreeMap::new();
    let mut all = FamilyStats::default();
    for ((family, _), s) in &per_task {
        families.entry(family.to_string()).or_default().add(s);
        all.add(s);
    }
    families.values_mut().for_each(FamilyStats::seal);
    all.seal();
    RunStats {
        steps_total: all.steps_total,
        steps_executed: all.steps_executed,
        failures_generation: all.failures_generation,
        failures_translation: all.failures_translation,
        success_rate: all.success_rate,
        per_task_breakdown: families,
    }
}

impl RunStats {
    /// Success-rate table followed by the error split, one row per family
    /// and a total row.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, FamilyStats)> = self
            .per_task_breakdown
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        rows.push((
            "all".into(),
            FamilyStats {
                steps_total: self.steps_total,
                steps_executed: self.steps_executed,
                failures_generation: self.failures_generation,
                failures_translation: self.failures_translation,
                success_rate: self.success_rate,
            },
        ));
        let mut out = String::new();
        writeln!(
            out,
            "{:<10} {:>8} {:>9} {:>9}",
            "family", "steps", "executed", "success"
        )
        .ok();
        for (name, s) in &rows {
            writeln!(
                out,
                "{:<10} {:>8} {:>9} {:>8.1}%",
                name,
                s.steps_total,
                s.steps_executed,
                s.success_rate * 100.0
            )
            .ok();
        }
        writeln!(out).ok();
        writeln!(
            out,
            "{:<10} {:>10} {:>11}",
            "family", "gen_error", "trans_error"
        )
        .ok();
        for (name, s) in &rows {
            writeln!(
                out,
                "{:<10} {:>10} {:>11}",
                name, s.failures_generation, s.failures_translation
            )
            .ok();
        }
        out
    }
}
