//! Seed sweeps over (circuit mode, rule mode) cells.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::engine::{run_simulation, CircuitSetting, SimError};
use crate::metrics::MetricsReport;
use crate::switch::RuleMode;
use crate::topology::Topology;
use crate::traffic::Trace;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}, {mode}: {source}")]
    Sim {
        seed: u64,
        mode: String,
        source: SimError,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub circuits: CircuitSetting,
    pub rules: RuleMode,
    pub seed: u64,
}

/// Cartesian product of seeds, circuit modes and rule modes, seed-major.
pub fn cells(cfg: &ExperimentConfig, seeds: &[u64]) -> Vec<Cell> {
    let mut out = Vec::new();
    for &seed in seeds {
        for &circuits in &cfg.modes.circuits {
            for &rules in &cfg.modes.rules {
                out.push(Cell { circuits, rules, seed });
            }
        }
    }
    out
}

pub fn run_cell(cfg: &ExperimentConfig, topo: &Topology, trace: &Trace, cell: Cell) -> Result<MetricsReport, ExperimentError> {
    let sim = cfg.sim_config(cell.circuits, cell.rules, cell.seed);
    let mut report = run_simulation(topo, trace, sim).map_err(|source| ExperimentError::Sim {
        seed: cell.seed,
        mode: format!("{}/{}", cell.circuits.as_str(), cell.rules.as_str()),
        source,
    })?;
    report.info.topology = cfg.topology.label();
    Ok(report)
}

/// Runs every cell, at most `jobs` at a time; reports come back in cell order.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: &[u64], jobs: usize) -> Result<Vec<MetricsReport>, ExperimentError> {
    run_cells(cfg, seeds, jobs, |topo, trace, cell| run_cell(cfg, topo, trace, cell))
}

/// Like [`run_experiment`] with a caller-supplied body per cell.
pub fn run_cells<T, F>(cfg: &ExperimentConfig, seeds: &[u64], jobs: usize, body: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(&Topology, &Trace, Cell) -> Result<T, ExperimentError> + Sync,
{
    let topo = cfg.build_topology()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| {
        let traces: Vec<(u64, Trace)> = seeds
            .par_iter()
            .map(|&s| cfg.trace(&topo, s).map(|t| (s, t)))
            .collect::<Result<_, _>>()?;
        let cells = cells(cfg, seeds);
        cells
            .par_iter()
            .map(|&cell| {
                let trace = &traces.iter().find(|(s, _)| *s == cell.seed).expect("trace per seed").1;
                body(&topo, trace, cell)
            })
            .collect()
    })
}
