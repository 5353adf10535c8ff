//! CSV and JSON emission with provenance lines.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::diagnostics::ResidualProbe;
use crate::error::Result;
use crate::optim::{RunSummary, RunTrace};

pub const TRACE_SCHEMA: &str = "trace-v1";
pub const RESIDUAL_SCHEMA: &str = "residual-v1";

pub const TRACE_HEADER: [&str; 13] = [
    "experiment_id",
    "method",
    "objective",
    "compander",
    "bits",
    "seed",
    "step",
    "loss_quantized",
    "loss_master",
    "est_norm",
    "clip_events",
    "boundary_events",
    "recalibs",
];

pub const RESIDUAL_HEADER: [&str; 12] = [
    "experiment_id",
    "method",
    "objective",
    "compander",
    "bits",
    "seed",
    "probes",
    "residual_sq",
    "normalizer_sq",
    "mean_ratio",
    "log10_ratio",
    "log10_2se",
];

/// What every output file records about where it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub schema: &'static str,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: &'static str,
}

impl Provenance {
    pub fn line(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "# schema={} config_hash={} seeds={} caqzo={}",
            self.schema,
            self.config_hash,
            seeds.join(";"),
            self.version
        )
    }
}

/// Labels shared by every row of one output cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLabels<'a> {
    pub experiment_id: &'a str,
    pub objective: &'a str,
    pub compander: &'a str,
    pub bits: u32,
}

fn writer(path: &Path, prov: &Provenance) -> Result<csv::Writer<std::fs::File>> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", prov.line())?;
    Ok(csv::Writer::from_writer(f))
}

/// Writes one trace CSV; rows are sorted by `(method name, seed, step)`.
/// Failed runs are listed as trailing `# failed` comment lines.
pub fn write_traces(
    path: &Path,
    prov: &Provenance,
    cell: &CellLabels<'_>,
    traces: &[RunTrace],
) -> Result<()> {
    let mut sorted: Vec<&RunTrace> = traces.iter().collect();
    sorted.sort_by(|a, b| (a.method.name(), a.seed).cmp(&(b.method.name(), b.seed)));
    let mut w = writer(path, prov)?;
    w.write_record(TRACE_HEADER)?;
    for tr in &sorted {
        for r in &tr.records {
            w.write_record([
                cell.experiment_id.to_string(),
                tr.method.name().to_string(),
                cell.objective.to_string(),
                cell.compander.to_string(),
                cell.bits.to_string(),
                tr.seed.to_string(),
                r.step.to_string(),
                r.loss_quantized.to_string(),
                r.loss_master.to_string(),
                r.est_norm.to_string(),
                r.clip_events.to_string(),
                r.boundary_events.to_string(),
                r.recalibs.to_string(),
            ])?;
        }
    }
    let mut f = w.into_inner().map_err(|e| e.into_error())?;
    for tr in &sorted {
        if let Some(msg) = &tr.failure {
            writeln!(f, "# failed method={} seed={}: {}", tr.method, tr.seed, msg)?;
        }
    }
    Ok(())
}

/// One residual row per probe result, in the given order.
pub fn write_residuals(
    path: &Path,
    prov: &Provenance,
    rows: &[(CellLabels<'_>, ResidualProbe)],
) -> Result<()> {
    let mut w = writer(path, prov)?;
    w.write_record(RESIDUAL_HEADER)?;
    for (cell, p) in rows {
        w.write_record([
            cell.experiment_id.to_string(),
            p.method.name().to_string(),
            cell.objective.to_string(),
            cell.compander.to_string(),
            cell.bits.to_string(),
            p.seed.to_string(),
            p.probes.to_string(),
            p.residual_sq.to_string(),
            p.normalizer_sq.to_string(),
            p.mean_ratio.to_string(),
            p.log10_ratio.to_string(),
            p.log10_2se.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunEntry {
    pub method: String,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: RunSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub objective: String,
    pub compander: String,
    pub bits: u32,
    pub file: String,
    pub runs: Vec<RunEntry>,
    /// Seed-mean gap ratio per method, by method name.
    pub mean_gap_ratio: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub experiment_id: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub cells: Vec<CellSummary>,
    pub failures: usize,
}

impl CellSummary {
    pub fn new(cell: &CellLabels<'_>, file: String, traces: &[RunTrace]) -> Self {
        let mut runs: Vec<RunEntry> = traces
            .iter()
            .map(|t| RunEntry {
                method: t.method.name().to_string(),
                seed: t.seed,
                summary: t.summary,
                failure: t.failure.clone(),
            })
            .collect();
        runs.sort_by(|a, b| (a.method.as_str(), a.seed).cmp(&(b.method.as_str(), b.seed)));
        let mut sums: std::collections::BTreeMap<String, (f64, usize)> = Default::default();
        for r in &runs {
            let e = sums.entry(r.method.clone()).or_insert((0.0, 0));
            e.0 += r.summary.gap_ratio;
            e.1 += 1;
        }
        CellSummary {
            objective: cell.objective.to_string(),
            compander: cell.compander.to_string(),
            bits: cell.bits,
            file,
            runs,
            mean_gap_ratio: sums
                .into_iter()
                .map(|(k, (s, n))| (k, s / n as f64))
                .collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}
