use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conlearn_harness::config::{ConfigFile, GridConfig, Overrides, RunConfig};
use conlearn_harness::grid::{run_grid, single_cell, GridOutcome};
use conlearn_harness::plot::emit_plots;
use conlearn_harness::record::{read_csv, write_csv};
use conlearn_harness::runner::RunResult;
use conlearn_harness::{selftest, Result};

#[derive(Parser)]
#[command(name = "conlearn", version, about = "Train with declarative constraints and compare integration mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the single cell described by a config file, once per seed.
    Run(RunArgs),
    /// Run every cell of a config file's [grid] section.
    Grid(GridArgs),
    /// Draw Hβ bar charts from a results CSV.
    Plot(PlotArgs),
    /// Run the invariant suite.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Config file (TOML).
    config: PathBuf,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    /// Sample count for the sampling strategy.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mechanism: Option<String>,
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, env = "CONLEARN_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,
    /// Maximum number of runs in flight.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    /// Skip the SVG charts.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Results CSV written by `run` or `grid`.
    csv: PathBuf,
    #[arg(long, env = "CONLEARN_OUT_DIR", default_value = "results")]
    out_dir: PathBuf,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            task: self.task.clone(),
            loss: self.loss.clone(),
            strategy: self.strategy.clone(),
            k: self.k,
            mechanism: self.mechanism.clone(),
            seeds: self.seeds.clone(),
        }
    }

    fn csv_path(&self) -> PathBuf {
        let stem = self.config.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
        self.out_dir.join(format!("{stem}.csv"))
    }
}

fn progress(cfg: &RunConfig, r: &RunResult) {
    let c = &cfg.cell;
    eprintln!(
        "{} {} {} {} seed {}: main {:.4} violation {:.4} ({:.1}s) {}",
        c.task,
        c.method.loss_label(),
        c.method.strategy_label(),
        c.method.mechanism_label(),
        cfg.seed,
        r.main_metric,
        r.violation_rate,
        r.wall_seconds,
        r.status.label()
    );
}

fn execute(grid: &GridConfig, common: &Common) -> Result<(GridOutcome, PathBuf)> {
    for s in &grid.skipped {
        eprintln!("skipping {s}");
    }
    let outcome = run_grid(grid, common.workers, &progress)?;
    std::fs::create_dir_all(&common.out_dir)?;
    let path = common.csv_path();
    write_csv(BufWriter::new(File::create(&path)?), &grid.betas, &outcome.records)?;
    eprintln!("wrote {}", path.display());
    Ok((outcome, path))
}

fn plot(csv: &Path, out_dir: &Path) -> Result<()> {
    let (betas, records) = read_csv(File::open(csv)?)?;
    let paths = emit_plots(&records, &betas, out_dir)?;
    if paths.is_empty() {
        eprintln!("warning: {} has no rows; no charts written", csv.display());
    }
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn exit_for(outcome: &GridOutcome) -> ExitCode {
    match outcome.failures() {
        0 => ExitCode::SUCCESS,
        n => {
            eprintln!("{n} run(s) failed");
            ExitCode::FAILURE
        }
    }
}

fn main_inner(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(a) => {
            let file = ConfigFile::load(&a.common.config)?;
            let (cell, seeds) = file.to_runs(&a.common.overrides())?;
            let (outcome, _) = execute(&single_cell(cell, seeds), &a.common)?;
            Ok(exit_for(&outcome))
        }
        Command::Grid(a) => {
            let file = ConfigFile::load(&a.common.config)?;
            let grid = file.to_grid(&a.common.overrides())?;
            let (outcome, path) = execute(&grid, &a.common)?;
            if !a.no_plots {
                plot(&path, &a.common.out_dir)?;
            }
            Ok(exit_for(&outcome))
        }
        Command::Plot(a) => {
            plot(&a.csv, &a.out_dir)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest => {
            let reports = selftest::run_all();
            for r in &reports {
                println!("{}", r.line());
            }
            Ok(if reports.iter().all(|r| r.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
