use conlearn::autodiff::{Graph, NodeId, ParamSet, Tensor};
use conlearn::constraint::{constraint_loss, ConstraintLoss, ConstraintSpec, Factorized};
use conlearn::metrics::{accuracy, violation_rate};
use conlearn::models::Mlp;
use conlearn::tasks::pairrel::{self, PairItem, CLASSES};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::{argmax, stream, sum_losses, unlabeled_per_batch, Batch, ConstraintSettings, Evaluation, Problem, Stream};
use crate::config::{DataParams, RunConfig};

pub(crate) struct PairProblem {
    mlp: Mlp,
    specs: Vec<ConstraintSpec<()>>,
    train: Vec<PairItem>,
    pool: Vec<PairItem>,
    per_batch: usize,
    test: Vec<PairItem>,
}

/// `[2n, D]` inputs with item `e` on rows `2e` (forward) and `2e + 1` (reverse).
fn stacked<'a>(items: impl Iterator<Item = &'a PairItem>, dim: usize) -> Tensor {
    let data: Vec<f64> = items.flat_map(|e| e.fwd.iter().chain(&e.rev).copied()).collect();
    Tensor::matrix(data.len() / dim, dim, data)
}

impl PairProblem {
    pub fn new(cfg: &RunConfig) -> conlearn::Result<Self> {
        let t = &cfg.cell.train;
        let DataParams::PairRel(params) = &cfg.cell.data else {
            return Err(conlearn::Error::Contract("pairrel run without pairrel data parameters".into()));
        };
        let mut rng = stream(cfg.seed, Stream::Data);
        let train = pairrel::gen_pairrel(t.labeled, params, &mut rng)?;
        let pool = pairrel::gen_pairrel(t.unlabeled, params, &mut rng)?;
        let test = pairrel::gen_pairrel(t.test, params, &mut rng)?;
        Ok(Self {
            mlp: Mlp::new("pair", params.input_dim(), t.hidden, CLASSES),
            specs: pairrel::pair_constraints(),
            train,
            pool,
            per_batch: unlabeled_per_batch(t.batch_size, t.labeled, t.unlabeled),
            test,
        })
    }

    fn logits(&self, g: &mut Graph, params: &ParamSet, x: Tensor) -> conlearn::Result<NodeId> {
        let x = g.constant(x);
        self.mlp.logits(g, params, x)
    }

    fn group_loss<'a>(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        items: impl Iterator<Item = &'a PairItem>,
        s: ConstraintSettings,
        rng: &mut dyn RngCore,
    ) -> conlearn::Result<ConstraintLoss> {
        let x = stacked(items, self.mlp.input);
        let n = x.rows() / 2;
        let z = self.logits(g, params, x)?;
        let ctx = Factorized {
            probs: g.softmax(z),
            log_probs: g.log_softmax(z),
            rows: (0..n).map(|e| vec![2 * e, 2 * e + 1]).collect(),
        };
        constraint_loss(g, &ctx, &self.specs, &vec![(); n], s.loss, s.strategy, s.logic, rng)
    }
}

impl Problem for PairProblem {
    fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> conlearn::Result<()> {
        self.mlp.init(params, rng)
    }

    fn batches(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
        let mut idx: Vec<usize> = (0..self.train.len()).collect();
        idx.shuffle(rng);
        let all: Vec<usize> = (0..self.pool.len()).collect();
        idx.chunks(batch_size)
            .map(|c| Batch {
                labeled: c.to_vec(),
                unlabeled: all.choose_multiple(rng, self.per_batch).copied().collect(),
            })
            .collect()
    }

    /// Cross-entropy summed over both directions of a pair, averaged over pairs.
    fn supervised(&self, g: &mut Graph, params: &ParamSet, labeled: &[usize]) -> conlearn::Result<NodeId> {
        let x = stacked(labeled.iter().map(|&i| &self.train[i]), self.mlp.input);
        let gold: Vec<usize> = labeled.iter().flat_map(|&i| self.train[i].labels).collect();
        let z = self.logits(g, params, x)?;
        let lp = g.log_softmax(z);
        let picked = g.pick_per_row(lp, &gold);
        let s = g.sum(picked);
        Ok(g.scale(s, -1.0 / labeled.len() as f64))
    }

    fn constraint(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        batch: &Batch,
        s: ConstraintSettings,
        rng: &mut dyn RngCore,
    ) -> conlearn::Result<ConstraintLoss> {
        let mut parts = vec![self.group_loss(g, params, batch.labeled.iter().map(|&i| &self.train[i]), s, rng)?];
        if !batch.unlabeled.is_empty() {
            parts.push(self.group_loss(g, params, batch.unlabeled.iter().map(|&i| &self.pool[i]), s, rng)?);
        }
        sum_losses(g, parts)
    }

    fn evaluate(&self, params: &ParamSet) -> conlearn::Result<Evaluation> {
        let mut g = Graph::new();
        let z = self.logits(&mut g, params, stacked(self.test.iter(), self.mlp.input))?;
        let z = g.value(z);
        let preds: Vec<Vec<usize>> = (0..self.test.len())
            .map(|e| vec![argmax(z.row(2 * e)), argmax(z.row(2 * e + 1))])
            .collect();
        let golds: Vec<Vec<usize>> = self.test.iter().map(|e| e.labels.to_vec()).collect();
        Ok(Evaluation {
            main_metric: accuracy(&preds, &golds)?,
            violation_rate: violation_rate(&self.specs, &vec![(); preds.len()], &preds)?,
        })
    }
}
