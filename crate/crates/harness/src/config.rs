//! Experiment configuration: the TOML file format and its resolution into
//! typed run and grid descriptions. The grammar is documented in CONFIG.md.

use std::ops::RangeInclusive;
use std::path::Path;

use conlearn::constraint::{LossType, Strategy};
use conlearn::integrators::{Mechanism, DEFAULT_LAMBDA_LR};
use conlearn::softlogic::Logic;
use conlearn::tasks::bio::BioParams;
use conlearn::tasks::pairrel::PairParams;
use conlearn::tasks::TaskId;
use serde::Deserialize;

use crate::error::{HarnessError, Result};

pub const DEFAULT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
pub const DEFAULT_BETAS: [f64; 3] = [0.3, 1.0, 3.0];

/// Raw file contents; every field is optional except `task`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub task: String,
    pub seeds: Option<Vec<u64>>,
    pub betas: Option<Vec<f64>>,
    #[serde(default)]
    pub method: MethodSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub data: DataSection,
    pub grid: Option<GridSection>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub loss: Option<String>,
    pub strategy: Option<String>,
    pub mechanism: Option<String>,
    pub lambda_sup: Option<f64>,
    pub lambda_con: Option<f64>,
    pub lambda_lr: Option<f64>,
    pub logic: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub labeled: Option<usize>,
    pub unlabeled: Option<usize>,
    pub test: Option<usize>,
    pub embed: Option<usize>,
    pub hidden: Option<usize>,
}

/// Task-specific data knobs. Keys that do not apply to the task are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub dim: Option<usize>,
    pub sigma: Option<f64>,
    pub noise: Option<f64>,
    pub decoy: Option<f64>,
    pub detail_gap: Option<f64>,
    pub min_len: Option<usize>,
    pub max_len: Option<usize>,
    pub unlabeled_min_chunks: Option<usize>,
    pub unlabeled_max_chunks: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub loss: Option<Vec<String>>,
    pub strategy: Option<Vec<String>>,
    pub mechanism: Option<Vec<String>>,
    /// Add one constraint-free cell.
    #[serde(default)]
    pub baseline: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub embed: usize,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataParams {
    Ste { unlabeled_chunks: RangeInclusive<usize> },
    HierLabel { dim: usize, sigma: f64 },
    Bio(BioParams),
    PairRel(PairParams),
}

/// How a run treats the constraint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Supervised loss only; no constraint machinery is built.
    Baseline,
    Constrained {
        loss: LossType,
        strategy: Strategy,
        mechanism: Mechanism,
        /// Constraint weight for the projection mechanisms.
        lambda_con: f64,
    },
}

impl Method {
    pub fn loss_label(&self) -> String {
        match self {
            Method::Baseline => "none".into(),
            Method::Constrained { loss, .. } => loss.to_string(),
        }
    }

    pub fn strategy_label(&self) -> String {
        match self {
            Method::Baseline => "none".into(),
            Method::Constrained { strategy, .. } => strategy.label().into(),
        }
    }

    /// Candidates per example; 0 when nothing is sampled or decoded.
    pub fn k(&self) -> usize {
        match self {
            Method::Constrained {
                strategy: Strategy::Top1, ..
            } => 1,
            Method::Constrained {
                strategy: Strategy::Sampling(k),
                ..
            } => *k,
            _ => 0,
        }
    }

    pub fn mechanism_label(&self) -> String {
        match self {
            Method::Baseline => "none".into(),
            Method::Constrained { mechanism, .. } => mechanism.to_string(),
        }
    }
}

/// One grid cell: everything but the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct CellConfig {
    pub task: TaskId,
    pub method: Method,
    pub logic: Logic,
    pub train: TrainParams,
    pub data: DataParams,
    pub betas: Vec<f64>,
}

/// A single training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub cell: CellConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub cells: Vec<CellConfig>,
    pub seeds: Vec<u64>,
    pub betas: Vec<f64>,
    /// Axis combinations dropped because they are not legal together.
    pub skipped: Vec<String>,
}

/// Command-line overrides applied on top of a file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub task: Option<String>,
    pub loss: Option<String>,
    pub strategy: Option<String>,
    pub k: Option<usize>,
    pub mechanism: Option<String>,
    pub seeds: Option<Vec<u64>>,
}

fn cfg_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

pub fn default_train(task: TaskId) -> TrainParams {
    match task {
        TaskId::Ste => TrainParams {
            epochs: 2,
            batch_size: 32,
            lr: 0.005,
            labeled: conlearn::tasks::ste::TRAIN_SIZE,
            unlabeled: 0,
            test: 500,
            embed: 32,
            hidden: 64,
        },
        TaskId::HierLabel => TrainParams {
            epochs: 30,
            batch_size: 32,
            lr: 0.01,
            labeled: 300,
            unlabeled: 300,
            test: 1000,
            embed: 0,
            hidden: 64,
        },
        TaskId::Bio => TrainParams {
            epochs: 6,
            batch_size: 32,
            lr: 0.01,
            labeled: 600,
            unlabeled: 300,
            test: 500,
            embed: 32,
            hidden: 64,
        },
        TaskId::PairRel => TrainParams {
            epochs: 20,
            batch_size: 32,
            lr: 0.01,
            labeled: 500,
            unlabeled: 500,
            test: 1000,
            embed: 0,
            hidden: 64,
        },
    }
}

fn resolve_train(task: TaskId, s: &TrainSection) -> Result<TrainParams> {
    let d = default_train(task);
    let t = TrainParams {
        epochs: s.epochs.unwrap_or(d.epochs),
        batch_size: s.batch_size.unwrap_or(d.batch_size),
        lr: s.lr.unwrap_or(d.lr),
        labeled: s.labeled.unwrap_or(d.labeled),
        unlabeled: s.unlabeled.unwrap_or(d.unlabeled),
        test: s.test.unwrap_or(d.test),
        embed: s.embed.unwrap_or(d.embed),
        hidden: s.hidden.unwrap_or(d.hidden),
    };
    if t.batch_size == 0 || t.labeled == 0 || t.test == 0 || t.hidden == 0 {
        return Err(cfg_err("batch_size, labeled, test and hidden must be positive"));
    }
    if task == TaskId::Ste || task == TaskId::Bio {
        if t.embed == 0 {
            return Err(cfg_err("embed must be positive for sequence tasks"));
        }
    } else if s.embed.is_some() {
        return Err(cfg_err(format!("train.embed does not apply to task {task}")));
    }
    if !(t.lr > 0.0 && t.lr.is_finite()) {
        return Err(cfg_err(format!("learning rate {} must be positive", t.lr)));
    }
    Ok(t)
}

fn resolve_data(task: TaskId, s: &DataSection) -> Result<DataParams> {
    let present = [
        ("dim", s.dim.is_some()),
        ("sigma", s.sigma.is_some()),
        ("noise", s.noise.is_some()),
        ("decoy", s.decoy.is_some()),
        ("detail_gap", s.detail_gap.is_some()),
        ("min_len", s.min_len.is_some()),
        ("max_len", s.max_len.is_some()),
        ("unlabeled_min_chunks", s.unlabeled_min_chunks.is_some()),
        ("unlabeled_max_chunks", s.unlabeled_max_chunks.is_some()),
    ];
    let allowed: &[&str] = match task {
        TaskId::Ste => &["unlabeled_min_chunks", "unlabeled_max_chunks"],
        TaskId::HierLabel => &["dim", "sigma"],
        TaskId::Bio => &["noise", "decoy", "min_len", "max_len"],
        TaskId::PairRel => &["dim", "noise", "detail_gap"],
    };
    if let Some((k, _)) = present.iter().find(|(k, p)| *p && !allowed.contains(k)) {
        return Err(cfg_err(format!("data.{k} does not apply to task {task}")));
    }
    let unit = |name: &str, v: f64| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err(cfg_err(format!("data.{name} = {v} must lie in [0, 1]")))
        }
    };
    Ok(match task {
        TaskId::Ste => {
            let lo = s.unlabeled_min_chunks.unwrap_or(*conlearn::tasks::ste::TRAIN_CHUNKS.start());
            let hi = s.unlabeled_max_chunks.unwrap_or(*conlearn::tasks::ste::TRAIN_CHUNKS.end());
            if lo == 0 || lo > hi {
                return Err(cfg_err("unlabeled chunk range must be non-empty and start at 1 or more"));
            }
            DataParams::Ste {
                unlabeled_chunks: lo..=hi,
            }
        }
        TaskId::HierLabel => {
            let dim = s.dim.unwrap_or(10);
            let sigma = s.sigma.unwrap_or(1.2);
            if dim == 0 || !(sigma > 0.0) {
                return Err(cfg_err("hierlabel needs dim >= 1 and sigma > 0"));
            }
            DataParams::HierLabel { dim, sigma }
        }
        TaskId::Bio => {
            let d = BioParams::default();
            let lo = s.min_len.unwrap_or(*d.lengths.start());
            let hi = s.max_len.unwrap_or(*d.lengths.end());
            if lo == 0 || lo > hi {
                return Err(cfg_err("bio lengths need 1 <= min_len <= max_len"));
            }
            DataParams::Bio(BioParams {
                lengths: lo..=hi,
                noise: unit("noise", s.noise.unwrap_or(d.noise))?,
                decoy: unit("decoy", s.decoy.unwrap_or(d.decoy))?,
            })
        }
        TaskId::PairRel => {
            let d = PairParams::default();
            let p = PairParams {
                dim: s.dim.unwrap_or(d.dim),
                noise: s.noise.unwrap_or(d.noise),
                detail_gap: s.detail_gap.unwrap_or(d.detail_gap),
            };
            if p.dim == 0 || !(p.noise >= 0.0) || !p.detail_gap.is_finite() {
                return Err(cfg_err("pairrel needs dim >= 1, noise >= 0 and a finite detail_gap"));
            }
            DataParams::PairRel(p)
        }
    })
}

fn parse_strategy(s: &str, k: Option<usize>) -> Result<Strategy> {
    match (s, k) {
        ("sampling", Some(k)) => Ok(format!("sampling-{k}").parse()?),
        (_, Some(k)) if s.starts_with("sampling-") => Ok(format!("sampling-{k}").parse()?),
        (_, Some(_)) => Err(cfg_err(format!("--k only applies to sampling, not {s:?}"))),
        (s, None) => Ok(s.parse()?),
    }
}

fn resolve_method(task: TaskId, m: &MethodSection, loss: &str, strategy: &str, mechanism: &str, k: Option<usize>) -> Result<Method> {
    match (loss, mechanism) {
        ("none", "none") => return Ok(Method::Baseline),
        ("none", _) | (_, "none") => {
            return Err(cfg_err("loss and mechanism must both be \"none\" for a baseline run"));
        }
        _ => {}
    }
    let loss: LossType = loss.parse()?;
    let strategy = parse_strategy(strategy, k)?;
    check_pair(task, loss, strategy)?;
    let lambda_sup = m.lambda_sup.unwrap_or(1.0);
    let lambda_con = m.lambda_con.unwrap_or(1.0);
    let lr = m.lambda_lr.unwrap_or(DEFAULT_LAMBDA_LR);
    for (name, v) in [("lambda_sup", lambda_sup), ("lambda_con", lambda_con), ("lambda_lr", lr)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(cfg_err(format!("{name} = {v} must be finite and non-negative")));
        }
    }
    let mechanism = match mechanism.parse::<Mechanism>()? {
        Mechanism::Static { .. } => Mechanism::Static { lambda_sup, lambda_con },
        Mechanism::Monotone { .. } => Mechanism::Monotone { lr },
        other => other,
    };
    Ok(Method::Constrained {
        loss,
        strategy,
        mechanism,
        lambda_con,
    })
}

/// Rejects (task, loss, strategy) combinations that cannot run.
pub fn check_pair(task: TaskId, loss: LossType, strategy: Strategy) -> Result<()> {
    if strategy == Strategy::Exhaustive && loss != LossType::Soft {
        return Err(cfg_err(format!(
            "exhaustive exploration needs the soft loss, not {loss}"
        )));
    }
    if task == TaskId::Ste && loss == LossType::Soft {
        return Err(cfg_err("the ste constraint has no soft-logic form; use binary or real"));
    }
    Ok(())
}

fn check_betas(betas: &[f64]) -> Result<()> {
    if betas.is_empty() {
        return Err(cfg_err("betas must not be empty"));
    }
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(cfg_err(format!("beta {b} must be positive")));
    }
    Ok(())
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn task(&self, o: &Overrides) -> Result<TaskId> {
        Ok(o.task.as_deref().unwrap_or(&self.task).parse()?)
    }

    fn seeds(&self, o: &Overrides) -> Result<Vec<u64>> {
        let seeds = o
            .seeds
            .clone()
            .or_else(|| self.seeds.clone())
            .unwrap_or_else(|| DEFAULT_SEEDS.to_vec());
        if seeds.is_empty() {
            return Err(cfg_err("seeds must not be empty"));
        }
        Ok(seeds)
    }

    fn betas(&self) -> Result<Vec<f64>> {
        let b = self.betas.clone().unwrap_or_else(|| DEFAULT_BETAS.to_vec());
        check_betas(&b)?;
        Ok(b)
    }

    fn cell(&self, task: TaskId, method: Method) -> Result<CellConfig> {
        let logic = self.method.logic.as_deref().unwrap_or("goedel").parse()?;
        Ok(CellConfig {
            task,
            method,
            logic,
            train: resolve_train(task, &self.train)?,
            data: resolve_data(task, &self.data)?,
            betas: self.betas()?,
        })
    }

    /// A single cell from `[method]`, one run per seed.
    pub fn to_runs(&self, o: &Overrides) -> Result<(CellConfig, Vec<u64>)> {
        let task = self.task(o)?;
        let loss = o.loss.as_deref().or(self.method.loss.as_deref()).unwrap_or("none");
        let strategy = o
            .strategy
            .as_deref()
            .or(self.method.strategy.as_deref())
            .unwrap_or("top1");
        let mechanism = o
            .mechanism
            .as_deref()
            .or(self.method.mechanism.as_deref())
            .unwrap_or("none");
        let method = resolve_method(task, &self.method, loss, strategy, mechanism, o.k)?;
        Ok((self.cell(task, method)?, self.seeds(o)?))
    }

    /// The cross product of the `[grid]` axes. Command-line overrides
    /// replace whole axes.
    pub fn to_grid(&self, o: &Overrides) -> Result<GridConfig> {
        let grid = self.grid.clone().ok_or_else(|| cfg_err("grid file has no [grid] section"))?;
        let task = self.task(o)?;
        let axis = |over: &Option<String>, file: &Option<Vec<String>>, fallback: Option<&String>, name: &str| {
            let v = match (over, file) {
                (Some(x), _) => vec![x.clone()],
                (None, Some(list)) => list.clone(),
                (None, None) => fallback.map(|f| vec![f.clone()]).unwrap_or_default(),
            };
            if v.is_empty() && !grid.baseline {
                return Err(cfg_err(format!("grid axis {name} is empty")));
            }
            Ok(v)
        };
        let losses = axis(&o.loss, &grid.loss, self.method.loss.as_ref(), "loss")?;
        let strategies = axis(&o.strategy, &grid.strategy, self.method.strategy.as_ref(), "strategy")?;
        let mechanisms = axis(&o.mechanism, &grid.mechanism, self.method.mechanism.as_ref(), "mechanism")?;

        let mut cells = Vec::new();
        let mut skipped = Vec::new();
        if grid.baseline {
            cells.push(self.cell(task, Method::Baseline)?);
        }
        for l in &losses {
            for s in &strategies {
                for m in &mechanisms {
                    match resolve_method(task, &self.method, l, s, m, o.k) {
                        Ok(method) => cells.push(self.cell(task, method)?),
                        Err(HarnessError::Config(msg)) if losses.len() * strategies.len() > 1 => {
                            skipped.push(format!("{l} x {s} x {m}: {msg}"));
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(cfg_err("grid has no legal cells"));
        }
        Ok(GridConfig {
            cells,
            seeds: self.seeds(o)?,
            betas: self.betas()?,
            skipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_is_the_default_method() {
        let f = ConfigFile::parse("task = \"hierlabel\"").unwrap();
        let (cell, seeds) = f.to_runs(&Overrides::default()).unwrap();
        assert_eq!(cell.method, Method::Baseline);
        assert_eq!(seeds, DEFAULT_SEEDS.to_vec());
        assert_eq!(cell.betas, DEFAULT_BETAS.to_vec());
    }

    #[test]
    fn illegal_pairs_are_rejected() {
        let f = ConfigFile::parse(
            "task = \"hierlabel\"\n[method]\nloss = \"binary\"\nstrategy = \"exhaustive\"\nmechanism = \"static\"\n",
        )
        .unwrap();
        assert!(matches!(f.to_runs(&Overrides::default()), Err(HarnessError::Config(_))));
        let f = ConfigFile::parse("task = \"ste\"\n[method]\nloss = \"soft\"\nmechanism = \"static\"\n").unwrap();
        assert!(f.to_runs(&Overrides::default()).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("task = \"ste\"\nepochs = 3\n").is_err());
        let f = ConfigFile::parse("task = \"ste\"\n[data]\nsigma = 1.0\n").unwrap();
        assert!(f.to_runs(&Overrides::default()).is_err());
    }

    #[test]
    fn overrides_apply() {
        let f = ConfigFile::parse("task = \"pairrel\"\n[method]\nloss = \"real\"\nmechanism = \"monotone\"\n").unwrap();
        let o = Overrides {
            strategy: Some("sampling".into()),
            k: Some(7),
            seeds: Some(vec![9]),
            ..Overrides::default()
        };
        let (cell, seeds) = f.to_runs(&o).unwrap();
        assert_eq!(seeds, vec![9]);
        assert_eq!(cell.method.k(), 7);
        assert_eq!(cell.method.mechanism_label(), "monotone");
    }

    #[test]
    fn grid_skips_illegal_combinations() {
        let f = ConfigFile::parse(
            "task = \"hierlabel\"\nseeds = [1, 2]\n[grid]\nbaseline = true\nloss = [\"soft\", \"binary\"]\nstrategy = [\"top1\", \"exhaustive\"]\nmechanism = [\"static\", \"proj-both\"]\n",
        )
        .unwrap();
        let g = f.to_grid(&Overrides::default()).unwrap();
        // baseline + soft x {top1, exhaustive} x 2 + binary x top1 x 2
        assert_eq!(g.cells.len(), 1 + 4 + 2);
        assert_eq!(g.skipped.len(), 2);
        assert_eq!(g.seeds, vec![1, 2]);
    }
}
