//! The training loop shared by every task: supervised gradient, constraint
//! gradient, integration, optimizer step; then evaluation on held-out data.

mod bio;
mod hier;
mod pair;
mod ste;

use std::collections::BTreeMap;
use std::time::Instant;

use conlearn::autodiff::{AdamConfig, AdamState, Graph, Grads, NodeId, ParamSet};
use conlearn::constraint::{ConstraintLoss, LossType, Strategy};
use conlearn::integrators::Integrator;
use conlearn::softlogic::Logic;
use conlearn::tasks::TaskId;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Method, RunConfig};

/// Independent random streams of one run. Keeping them apart means that
/// skipping the constraint pass leaves data order and initialization intact.
#[derive(Clone, Copy, Debug)]
enum Stream {
    Data = 0,
    Init = 1,
    Order = 2,
    Explore = 3,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

/// Indices into a task's labeled training set and unlabeled pool.
#[derive(Clone, Debug, Default)]
pub(crate) struct Batch {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConstraintSettings {
    pub loss: LossType,
    pub strategy: Strategy,
    pub logic: Logic,
}

pub(crate) struct Evaluation {
    pub main_metric: f64,
    pub violation_rate: f64,
}

pub(crate) trait Problem {
    fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> conlearn::Result<()>;

    /// One epoch of batches in training order.
    fn batches(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch>;

    fn supervised(&self, g: &mut Graph, params: &ParamSet, labeled: &[usize]) -> conlearn::Result<NodeId>;

    /// Constraint loss over the batch's labeled inputs (labels unused) plus
    /// its unlabeled inputs.
    fn constraint(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        batch: &Batch,
        settings: ConstraintSettings,
        rng: &mut dyn RngCore,
    ) -> conlearn::Result<ConstraintLoss>;

    fn evaluate(&self, params: &ParamSet) -> conlearn::Result<Evaluation>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

impl RunStatus {
    pub fn label(&self) -> String {
        match self {
            RunStatus::Ok => "ok".into(),
            RunStatus::Failed(msg) => format!("failed: {msg}"),
        }
    }
}

/// Per-step integrator diagnostics kept for inspection.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    /// Constraint weight in force at each step, followed by the final weight.
    pub lambdas: Vec<f64>,
    /// Largest orthogonality residual over all fired projections.
    pub max_residual: f64,
    pub projections_fired: u64,
    pub projections_skipped: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub main_metric: f64,
    pub violation_rate: f64,
    pub lambda_final: f64,
    pub steps: u64,
    pub wall_seconds: f64,
    pub status: RunStatus,
    pub trace: RunTrace,
}

/// Trains and evaluates one configuration. Failures are reported in the
/// result rather than returned, so a grid can continue past them.
pub fn run_experiment(cfg: &RunConfig) -> RunResult {
    let start = Instant::now();
    let mut trace = RunTrace::default();
    let mut steps = 0;
    let outcome = match cfg.cell.task {
        TaskId::Ste => ste::SteProblem::new(cfg).and_then(|p| train(&p, cfg, &mut trace, &mut steps)),
        TaskId::HierLabel => hier::HierProblem::new(cfg).and_then(|p| train(&p, cfg, &mut trace, &mut steps)),
        TaskId::Bio => bio::BioProblem::new(cfg).and_then(|p| train(&p, cfg, &mut trace, &mut steps)),
        TaskId::PairRel => pair::PairProblem::new(cfg).and_then(|p| train(&p, cfg, &mut trace, &mut steps)),
    };
    let wall_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((eval, lambda_final)) => RunResult {
            main_metric: eval.main_metric,
            violation_rate: eval.violation_rate,
            lambda_final,
            steps,
            wall_seconds,
            status: RunStatus::Ok,
            trace,
        },
        Err(e) => RunResult {
            main_metric: f64::NAN,
            violation_rate: f64::NAN,
            lambda_final: trace.lambdas.last().copied().unwrap_or(f64::NAN),
            steps,
            wall_seconds,
            status: RunStatus::Failed(e.to_string()),
            trace,
        },
    }
}

fn train<P: Problem>(
    p: &P,
    cfg: &RunConfig,
    trace: &mut RunTrace,
    steps: &mut u64,
) -> conlearn::Result<(Evaluation, f64)> {
    let t = &cfg.cell.train;
    let mut params = ParamSet::new();
    p.init(&mut params, &mut stream(cfg.seed, Stream::Init))?;
    let mut adam = AdamState::new(&params, AdamConfig::with_lr(t.lr));
    let mut order = stream(cfg.seed, Stream::Order);
    let mut explore = stream(cfg.seed, Stream::Explore);

    let (mut integrator, settings) = match cfg.cell.method {
        Method::Baseline => (None, None),
        Method::Constrained {
            loss,
            strategy,
            mechanism,
            lambda_con,
        } => (
            Some(Integrator::new(mechanism, params.numel()).with_lambda_con(lambda_con)),
            Some(ConstraintSettings {
                loss,
                strategy,
                logic: cfg.cell.logic,
            }),
        ),
    };

    for _ in 0..t.epochs {
        for batch in p.batches(t.batch_size, &mut order) {
            let mut g = Graph::new();
            let sup = p.supervised(&mut g, &params, &batch.labeled)?;
            let g_sup = g.backward(sup, &params)?;
            drop(g);
            let grads = match (&mut integrator, settings) {
                (Some(it), Some(settings)) => {
                    let (g_con, violation) = if it.ignores_constraint() {
                        (vec![0.0; params.numel()], 0.0)
                    } else {
                        let mut g = Graph::new();
                        let c = p.constraint(&mut g, &params, &batch, settings, &mut explore)?;
                        (g.backward(c.node, &params)?.flatten(), c.violation)
                    };
                    let out = it.combine(&g_sup.flatten(), &g_con, violation)?;
                    let d = &out.diagnostics;
                    trace.lambdas.push(d.lambda);
                    trace.projections_fired += u64::from(d.projected_sup) + u64::from(d.projected_con);
                    trace.projections_skipped += u64::from(d.skipped);
                    for &r in &d.residuals {
                        trace.max_residual = trace.max_residual.max(r);
                    }
                    Grads::unflatten(&out.combined, &params)?
                }
                _ => g_sup,
            };
            adam.step(&mut params, &grads)?;
            *steps += 1;
        }
    }
    let lambda_final = integrator.as_ref().map_or(0.0, Integrator::lambda);
    if integrator.is_some() {
        trace.lambdas.push(lambda_final);
    }
    Ok((p.evaluate(&params)?, lambda_final))
}

/// Groups example indices by length, shuffles within groups, cuts batches,
/// and shuffles the batch order.
pub(crate) fn length_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for (_, mut idx) in group_by_length(lengths) {
        idx.shuffle(rng);
        out.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    out.shuffle(rng);
    out
}

/// Unlabeled examples to pair with each labeled batch of `batch_size`.
pub(crate) fn unlabeled_per_batch(batch_size: usize, labeled: usize, unlabeled: usize) -> usize {
    if unlabeled == 0 {
        return 0;
    }
    ((batch_size * unlabeled) as f64 / labeled as f64).round().clamp(1.0, batch_size as f64) as usize
}

/// Draws `n` unlabeled examples sharing one length, picking the length group
/// in proportion to its size.
pub(crate) fn unlabeled_same_length(
    groups: &BTreeMap<usize, Vec<usize>>,
    lengths: &[usize],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    if n == 0 || lengths.is_empty() {
        return Vec::new();
    }
    let pivot = (rng.next_u64() % lengths.len() as u64) as usize;
    let group = &groups[&lengths[pivot]];
    group.choose_multiple(rng, n.min(group.len())).copied().collect()
}

pub(crate) fn group_by_length(lengths: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in lengths.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    groups
}

/// Sums the losses of separately explored groups.
pub(crate) fn sum_losses(g: &mut Graph, parts: Vec<ConstraintLoss>) -> conlearn::Result<ConstraintLoss> {
    let mut iter = parts.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| conlearn::Error::Contract("no constraint groups".into()))?;
    let mut acc = first;
    for p in iter {
        acc.node = g.add(acc.node, p.node);
        acc.violation += p.violation;
    }
    acc.value = g.item(acc.node);
    Ok(acc)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
