//! Experiment orchestration: expands a config into independent runs,
//! executes them on a worker pool and writes the outputs from one collector.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::diagnostics::{probe_residual, ProbeSetup, ResidualProbe};
use crate::error::{Error, Result};
use crate::estimators::Method;
use crate::objectives::{Objective, ObjectiveSpec};
use crate::optim::{run, RunTrace};

pub use config::{CompanderCell, ExperimentConfig, ProbeConfig};
pub use output::{
    CellLabels, CellSummary, ExperimentSummary, Provenance, RESIDUAL_HEADER, RESIDUAL_SCHEMA,
    TRACE_HEADER, TRACE_SCHEMA,
};

/// Execution options that do not change results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` from the config.
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    /// Added to every start seed.
    pub seed_offset: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: ExperimentSummary,
    pub files: Vec<PathBuf>,
}

pub fn trace_file_name(objective: Objective, cell: &CompanderCell) -> String {
    format!(
        "trace_{}_{}_{}bit.csv",
        objective.name(),
        cell.label(),
        cell.bits
    )
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

fn out_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn provenance(cfg: &ExperimentConfig, schema: &'static str, seeds: &[u64]) -> Provenance {
    Provenance {
        schema,
        config_hash: cfg.hash(),
        seeds: seeds.to_vec(),
        version: crate::VERSION,
    }
}

/// Runs every `(objective, compander, method, seed)` combination and writes
/// one trace CSV per `(objective, compander)` cell plus `summary.json`.
///
/// Outputs are written even when some runs fail; the failures are then
/// reported as an error after writing.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = out_dir(cfg, opts)?;
    let seeds = cfg.shifted_seeds(opts.seed_offset);
    let mut jobs = Vec::new();
    for (ci, cell) in cfg.companders.iter().enumerate() {
        for &objective in &cfg.objectives {
            for &method in &cfg.methods {
                for &seed in &seeds {
                    jobs.push((ci, *cell, objective, method, seed));
                }
            }
        }
    }
    let traces: Vec<Result<RunTrace>> = pool(opts.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(_, cell, objective, method, seed)| {
                run(
                    &cfg.optimizer(method),
                    &cfg.problem(objective, &cell)?,
                    seed,
                )
            })
            .collect()
    });

    let prov = provenance(cfg, TRACE_SCHEMA, &seeds);
    let mut files = Vec::new();
    let mut cells = Vec::new();
    let mut failures = 0;
    let mut results = jobs.iter().zip(traces);
    for cell in &cfg.companders {
        for &objective in &cfg.objectives {
            let n = cfg.methods.len() * seeds.len();
            let group = results
                .by_ref()
                .take(n)
                .map(|(_, t)| t)
                .collect::<Result<Vec<RunTrace>>>()?;
            failures += group.iter().filter(|t| t.failure.is_some()).count();
            let compander = cell.label();
            let labels = CellLabels {
                experiment_id: &cfg.experiment_id,
                objective: objective.name(),
                compander: &compander,
                bits: cell.bits,
            };
            let name = trace_file_name(objective, cell);
            let path = dir.join(&name);
            output::write_traces(&path, &prov, &labels, &group)?;
            cells.push(CellSummary::new(&labels, name, &group));
            files.push(path);
        }
    }
    let summary = ExperimentSummary {
        experiment_id: cfg.experiment_id.clone(),
        provenance: prov,
        cells,
        failures,
    };
    let path = dir.join("summary.json");
    output::write_json(&path, &summary)?;
    files.push(path);
    if failures > 0 {
        return Err(Error::Config(format!(
            "{failures} run(s) failed; partial traces were written to {}",
            dir.display()
        )));
    }
    Ok(RunOutcome { summary, files })
}

fn probe_methods(cfg: &ExperimentConfig) -> Vec<Method> {
    cfg.probes
        .methods
        .clone()
        .unwrap_or_else(|| cfg.methods.clone())
}

/// One residual probe per `(method, objective, compander, start)`, written to
/// `residual.csv` in that order.
pub fn probe_experiment(
    cfg: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<(Vec<ResidualProbe>, PathBuf)> {
    cfg.validate()?;
    let dir = out_dir(cfg, opts)?;
    let seeds = cfg.shifted_seeds(opts.seed_offset);
    let mut jobs = Vec::new();
    for method in probe_methods(cfg) {
        for &objective in &cfg.objectives {
            for cell in &cfg.companders {
                for &seed in &seeds {
                    jobs.push((method, objective, *cell, seed));
                }
            }
        }
    }
    let n_probes = cfg.probes.n_probes;
    let results: Vec<Result<ResidualProbe>> = pool(opts.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(method, objective, cell, seed)| {
                let setup = ProbeSetup {
                    method,
                    objective: ObjectiveSpec::new(objective, cfg.d)?,
                    noise_std: cfg.sigma,
                    family: cell.family,
                    strength: cell.strength(),
                    bits: cell.bits,
                    block_size: cfg.block_size,
                    k: cfg.k,
                    mu: cfg.probes.mu.unwrap_or(cfg.mu),
                };
                probe_residual(&setup, n_probes, seed)
            })
            .collect()
    });
    let probes = results.into_iter().collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = jobs.iter().map(|j| j.2.label()).collect();
    let rows: Vec<(CellLabels<'_>, ResidualProbe)> = jobs
        .iter()
        .zip(&labels)
        .zip(&probes)
        .map(|((&(_, objective, cell, _), label), p)| {
            (
                CellLabels {
                    experiment_id: &cfg.experiment_id,
                    objective: objective.name(),
                    compander: label,
                    bits: cell.bits,
                },
                p.clone(),
            )
        })
        .collect();
    let path = dir.join("residual.csv");
    output::write_residuals(&path, &provenance(cfg, RESIDUAL_SCHEMA, &seeds), &rows)?;
    Ok((probes, path))
}

/// Loads a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}
