use conlearn::autodiff::{Graph, NodeId, ParamSet, Tensor};
use conlearn::constraint::{constraint_loss, ConstraintLoss, ConstraintSpec, Factorized};
use conlearn::metrics::{accuracy, violation_rate};
use conlearn::models::{Head, Mlp};
use conlearn::tasks::hierlabel::{self, HierExample, HierTask, LABELS};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::{stream, sum_losses, unlabeled_per_batch, Batch, ConstraintSettings, Evaluation, Problem, Stream};
use crate::config::{DataParams, RunConfig};

pub(crate) struct HierProblem {
    mlp: Mlp,
    specs: Vec<ConstraintSpec<()>>,
    train: Vec<HierExample>,
    pool: Vec<Vec<f64>>,
    per_batch: usize,
    test: Vec<HierExample>,
}

fn features<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Tensor {
    let data: Vec<f64> = rows.flat_map(|r| r.iter().copied()).collect();
    Tensor::matrix(data.len() / dim, dim, data)
}

impl HierProblem {
    pub fn new(cfg: &RunConfig) -> conlearn::Result<Self> {
        let t = &cfg.cell.train;
        let DataParams::HierLabel { dim, sigma } = cfg.cell.data else {
            return Err(conlearn::Error::Contract("hierlabel run without hierlabel data parameters".into()));
        };
        let mut rng = stream(cfg.seed, Stream::Data);
        let task = HierTask::new(dim, sigma, &mut rng)?;
        let train = task.sample(t.labeled, &mut rng);
        let pool = task.sample(t.unlabeled, &mut rng).into_iter().map(|e| e.features).collect();
        let test = task.sample(t.test, &mut rng);
        Ok(Self {
            mlp: Mlp::new("hier", dim, t.hidden, LABELS),
            specs: hierlabel::hier_constraints(),
            train,
            pool,
            per_batch: unlabeled_per_batch(t.batch_size, t.labeled, t.unlabeled),
            test,
        })
    }

    fn probs(&self, g: &mut Graph, params: &ParamSet, x: Tensor) -> conlearn::Result<NodeId> {
        let x = g.constant(x);
        self.mlp.forward(g, params, x, Head::Sigmoid)
    }

    fn group_loss(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        x: Tensor,
        s: ConstraintSettings,
        rng: &mut dyn RngCore,
    ) -> conlearn::Result<ConstraintLoss> {
        let n = x.rows();
        let p = self.probs(g, params, x)?;
        let ctx = Factorized::from_sigmoid(g, p);
        constraint_loss(g, &ctx, &self.specs, &vec![(); n], s.loss, s.strategy, s.logic, rng)
    }
}

impl Problem for HierProblem {
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

    /// Binary cross-entropy summed over labels, averaged over examples.
    fn supervised(&self, g: &mut Graph, params: &ParamSet, labeled: &[usize]) -> conlearn::Result<NodeId> {
        let x = features(labeled.iter().map(|&i| self.train[i].features.as_slice()), self.mlp.input);
        let y: Vec<f64> = labeled
            .iter()
            .flat_map(|&i| self.train[i].labels.iter().map(|&l| l as f64))
            .collect();
        let p = self.probs(g, params, x)?;
        let y = Tensor::matrix(labeled.len(), LABELS, y);
        let not_y = Tensor::matrix(labeled.len(), LABELS, y.data().iter().map(|v| 1.0 - v).collect());
        let y = g.constant(y);
        let not_y = g.constant(not_y);
        let lp = g.log(p);
        let q = g.one_minus(p);
        let lq = g.log(q);
        let a = g.mul(y, lp);
        let b = g.mul(not_y, lq);
        let ll = g.add(a, b);
        let s = g.sum(ll);
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
        let dim = self.mlp.input;
        let mut parts = vec![self.group_loss(
            g,
            params,
            features(batch.labeled.iter().map(|&i| self.train[i].features.as_slice()), dim),
            s,
            rng,
        )?];
        if !batch.unlabeled.is_empty() {
            let x = features(batch.unlabeled.iter().map(|&i| self.pool[i].as_slice()), dim);
            parts.push(self.group_loss(g, params, x, s, rng)?);
        }
        sum_losses(g, parts)
    }

    fn evaluate(&self, params: &ParamSet) -> conlearn::Result<Evaluation> {
        let mut g = Graph::new();
        let x = features(self.test.iter().map(|e| e.features.as_slice()), self.mlp.input);
        let p = self.probs(&mut g, params, x)?;
        let probs = g.value(p);
        let preds: Vec<Vec<usize>> = (0..self.test.len()).map(|r| hierlabel::threshold(probs.row(r))).collect();
        let golds: Vec<Vec<usize>> = self.test.iter().map(|e| e.labels.clone()).collect();
        Ok(Evaluation {
            main_metric: accuracy(&preds, &golds)?,
            violation_rate: violation_rate(&self.specs, &vec![(); preds.len()], &preds)?,
        })
    }
}
