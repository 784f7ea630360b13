//! Runs every (cell, seed) pair of a grid and collects rows in a fixed order.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::{CellConfig, GridConfig, RunConfig};
use crate::error::Result;
use crate::record::{aggregate, run_record, Record};
use crate::runner::{run_experiment, RunResult, RunStatus};

/// One finished run with its cell index.
#[derive(Clone, Debug)]
pub struct FinishedRun {
    pub cell: usize,
    pub seed: u64,
    pub result: RunResult,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// For each cell: its run rows in seed order, then its aggregate row.
    pub records: Vec<Record>,
    /// Every run in (cell, seed) order.
    pub runs: Vec<FinishedRun>,
}

impl GridOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.result.status != RunStatus::Ok).count()
    }
}

/// Runs all jobs on up to `workers` threads. Output order depends only on the
/// grid, never on scheduling.
pub fn run_grid(grid: &GridConfig, workers: usize, progress: &(dyn Fn(&RunConfig, &RunResult) + Sync)) -> Result<GridOutcome> {
    let jobs: Vec<RunConfig> = grid
        .cells
        .iter()
        .flat_map(|c| {
            grid.seeds.iter().map(|&seed| RunConfig {
                cell: c.clone(),
                seed,
            })
        })
        .collect();
    let slots: Vec<Mutex<Option<RunResult>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = run_experiment(job);
                progress(job, &r);
                *slots[i].lock().expect("result slot poisoned") = Some(r);
            });
        }
    });

    let mut records = Vec::new();
    let mut runs = Vec::new();
    let per_cell = grid.seeds.len();
    let mut results = slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot poisoned").expect("every job ran"));
    for (ci, cell) in grid.cells.iter().enumerate() {
        let mut rows = Vec::with_capacity(per_cell);
        for &seed in &grid.seeds {
            let result = results.next().expect("one result per job");
            rows.push(run_record(cell, seed, &result));
            runs.push(FinishedRun { cell: ci, seed, result });
        }
        let agg = aggregate(&rows)?;
        records.extend(rows);
        records.push(agg);
    }
    Ok(GridOutcome { records, runs })
}

/// A one-cell grid.
pub fn single_cell(cell: CellConfig, seeds: Vec<u64>) -> GridConfig {
    GridConfig {
        betas: cell.betas.clone(),
        cells: vec![cell],
        seeds,
        skipped: Vec::new(),
    }
}
