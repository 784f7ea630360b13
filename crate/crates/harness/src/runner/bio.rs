use std::collections::BTreeMap;

use conlearn::autodiff::{Graph, NodeId, ParamSet};
use conlearn::constraint::{constraint_loss, ConstraintLoss, ConstraintSpec, Factorized};
use conlearn::metrics::{tag_f1, violation_rate};
use conlearn::models::Tagger;
use conlearn::tasks::bio::{self, BioExample, OUTSIDE, TAGS, VOCAB};
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::{
    argmax, group_by_length, length_batches, stream, sum_losses, unlabeled_per_batch, unlabeled_same_length, Batch,
    ConstraintSettings, Evaluation, Problem, Stream,
};
use crate::config::{DataParams, RunConfig};

const EVAL_CHUNK: usize = 250;

pub(crate) struct BioProblem {
    tagger: Tagger,
    spec: ConstraintSpec<Vec<usize>>,
    train: Vec<BioExample>,
    pool: Vec<Vec<usize>>,
    pool_lengths: Vec<usize>,
    pool_groups: BTreeMap<usize, Vec<usize>>,
    per_batch: usize,
    test: Vec<BioExample>,
}

impl BioProblem {
    pub fn new(cfg: &RunConfig) -> conlearn::Result<Self> {
        let t = &cfg.cell.train;
        let DataParams::Bio(params) = &cfg.cell.data else {
            return Err(conlearn::Error::Contract("bio run without bio data parameters".into()));
        };
        let mut rng = stream(cfg.seed, Stream::Data);
        let train = bio::gen_bio(t.labeled, params, &mut rng);
        let pool: Vec<Vec<usize>> = bio::gen_bio(t.unlabeled, params, &mut rng)
            .into_iter()
            .map(|e| e.tokens)
            .collect();
        let test = bio::gen_bio(t.test, params, &mut rng);
        let pool_lengths: Vec<usize> = pool.iter().map(Vec::len).collect();
        Ok(Self {
            tagger: Tagger::new(VOCAB, TAGS, t.embed, t.hidden),
            spec: bio::bio_constraint(),
            pool_groups: group_by_length(&pool_lengths),
            per_batch: unlabeled_per_batch(t.batch_size, t.labeled, t.unlabeled),
            train,
            pool,
            pool_lengths,
            test,
        })
    }

    fn group_loss(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        seqs: Vec<&[usize]>,
        s: ConstraintSettings,
        rng: &mut dyn RngCore,
    ) -> conlearn::Result<ConstraintLoss> {
        let out = self.tagger.forward(g, params, &seqs)?;
        let ctx = Factorized {
            probs: out.probs,
            log_probs: out.log_probs,
            rows: out.rows,
        };
        let inputs: Vec<Vec<usize>> = seqs.iter().map(|x| x.to_vec()).collect();
        constraint_loss(g, &ctx, std::slice::from_ref(&self.spec), &inputs, s.loss, s.strategy, s.logic, rng)
    }
}

impl Problem for BioProblem {
    fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> conlearn::Result<()> {
        self.tagger.init(params, rng)
    }

    fn batches(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
        let lengths: Vec<usize> = self.train.iter().map(|e| e.tokens.len()).collect();
        length_batches(&lengths, batch_size, rng)
            .into_iter()
            .map(|labeled| Batch {
                labeled,
                unlabeled: unlabeled_same_length(&self.pool_groups, &self.pool_lengths, self.per_batch, rng),
            })
            .collect()
    }

    /// Tag cross-entropy summed over positions, averaged over sequences.
    fn supervised(&self, g: &mut Graph, params: &ParamSet, labeled: &[usize]) -> conlearn::Result<NodeId> {
        let seqs: Vec<&[usize]> = labeled.iter().map(|&i| self.train[i].tokens.as_slice()).collect();
        let out = self.tagger.forward(g, params, &seqs)?;
        let mut flat = Vec::new();
        for (e, rows) in out.rows.iter().enumerate() {
            for (t, &r) in rows.iter().enumerate() {
                flat.push(r * TAGS + self.train[labeled[e]].tags[t]);
            }
        }
        let picked = g.pick(out.log_probs, &flat);
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
        let labeled = batch.labeled.iter().map(|&i| self.train[i].tokens.as_slice()).collect();
        let mut parts = vec![self.group_loss(g, params, labeled, s, rng)?];
        if !batch.unlabeled.is_empty() {
            let unl = batch.unlabeled.iter().map(|&i| self.pool[i].as_slice()).collect();
            parts.push(self.group_loss(g, params, unl, s, rng)?);
        }
        sum_losses(g, parts)
    }

    fn evaluate(&self, params: &ParamSet) -> conlearn::Result<Evaluation> {
        let lengths: Vec<usize> = self.test.iter().map(|e| e.tokens.len()).collect();
        let mut preds = vec![Vec::new(); self.test.len()];
        for (_, idx) in group_by_length(&lengths) {
            for chunk in idx.chunks(EVAL_CHUNK) {
                let mut g = Graph::new();
                let seqs: Vec<&[usize]> = chunk.iter().map(|&i| self.test[i].tokens.as_slice()).collect();
                let out = self.tagger.forward(&mut g, params, &seqs)?;
                let probs = g.value(out.probs);
                for (&i, rows) in chunk.iter().zip(&out.rows) {
                    preds[i] = rows.iter().map(|&r| argmax(probs.row(r))).collect();
                }
            }
        }
        let golds: Vec<Vec<usize>> = self.test.iter().map(|e| e.tags.clone()).collect();
        let inputs: Vec<Vec<usize>> = self.test.iter().map(|e| e.tokens.clone()).collect();
        Ok(Evaluation {
            main_metric: tag_f1(&preds, &golds, OUTSIDE)?,
            violation_rate: violation_rate(std::slice::from_ref(&self.spec), &inputs, &preds)?,
        })
    }
}
