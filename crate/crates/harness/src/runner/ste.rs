use std::collections::BTreeMap;

use conlearn::autodiff::{Graph, NodeId, ParamSet};
use conlearn::constraint::{constraint_loss, ConstraintLoss, ConstraintSpec, SequenceContext};
use conlearn::metrics::{token_accuracy, violation_rate};
use conlearn::models::{DecodeMode, Seq2Seq};
use conlearn::tasks::ste;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;

use super::{
    group_by_length, length_batches, stream, sum_losses, unlabeled_per_batch, unlabeled_same_length, Batch,
    ConstraintSettings, Evaluation, Problem, Stream,
};
use crate::config::{DataParams, RunConfig};

const EVAL_CHUNK: usize = 250;

pub(crate) struct SteProblem {
    model: Seq2Seq,
    spec: ConstraintSpec<Vec<usize>>,
    src: Vec<Vec<usize>>,
    tgt: Vec<Vec<usize>>,
    pool: Vec<Vec<usize>>,
    pool_lengths: Vec<usize>,
    pool_groups: BTreeMap<usize, Vec<usize>>,
    per_batch: usize,
    test_src: Vec<Vec<usize>>,
    test_tgt: Vec<Vec<usize>>,
}

/// Longest output the decoder may produce for a source of `len` characters.
fn max_len(len: usize) -> usize {
    3 * len / 2 + 2
}

impl SteProblem {
    pub fn new(cfg: &RunConfig) -> conlearn::Result<Self> {
        let t = &cfg.cell.train;
        let DataParams::Ste { unlabeled_chunks } = &cfg.cell.data else {
            return Err(conlearn::Error::Contract("ste run without ste data parameters".into()));
        };
        let model = ste::ste_model(t.embed, t.hidden);
        let v = &model.vocab;
        let mut rng = stream(cfg.seed, Stream::Data);
        let train = ste::gen_ste(true, t.labeled, &mut rng);
        let pool = ste::gen_ste_chunks(unlabeled_chunks.clone(), t.unlabeled, &mut rng);
        let test = ste::gen_ste(false, t.test, &mut rng);
        let enc = |s: &str| v.encode_chars(s);
        let src = train.iter().map(|p| enc(&p.src)).collect::<conlearn::Result<Vec<_>>>()?;
        let tgt = train.iter().map(|p| enc(&p.tgt)).collect::<conlearn::Result<Vec<_>>>()?;
        let pool = pool.iter().map(|p| enc(&p.src)).collect::<conlearn::Result<Vec<_>>>()?;
        let test_src = test.iter().map(|p| enc(&p.src)).collect::<conlearn::Result<Vec<_>>>()?;
        let test_tgt = test.iter().map(|p| enc(&p.tgt)).collect::<conlearn::Result<Vec<_>>>()?;
        let pool_lengths: Vec<usize> = pool.iter().map(Vec::len).collect();
        Ok(Self {
            spec: ste::ste_constraint(),
            pool_groups: group_by_length(&pool_lengths),
            per_batch: unlabeled_per_batch(t.batch_size, t.labeled, t.unlabeled),
            model,
            src,
            tgt,
            pool,
            pool_lengths,
            test_src,
            test_tgt,
        })
    }

    fn group_loss(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        sources: Vec<&[usize]>,
        s: ConstraintSettings,
        rng: &mut dyn RngCore,
    ) -> conlearn::Result<ConstraintLoss> {
        let inputs: Vec<Vec<usize>> = sources.iter().map(|x| x.to_vec()).collect();
        let ctx = SequenceContext {
            model: &self.model,
            params,
            max_len: max_len(sources[0].len()),
            sources,
        };
        constraint_loss(g, &ctx, std::slice::from_ref(&self.spec), &inputs, s.loss, s.strategy, s.logic, rng)
    }
}

impl Problem for SteProblem {
    fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) -> conlearn::Result<()> {
        self.model.init(params, rng)
    }

    fn batches(&self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Batch> {
        let lengths: Vec<usize> = self.src.iter().map(Vec::len).collect();
        length_batches(&lengths, batch_size, rng)
            .into_iter()
            .map(|labeled| Batch {
                labeled,
                unlabeled: unlabeled_same_length(&self.pool_groups, &self.pool_lengths, self.per_batch, rng),
            })
            .collect()
    }

    /// Summed token NLL per sequence (EOS included), averaged over the batch,
    /// so that it lives on the same per-sequence scale as the constraint loss.
    fn supervised(&self, g: &mut Graph, params: &ParamSet, labeled: &[usize]) -> conlearn::Result<NodeId> {
        let srcs: Vec<&[usize]> = labeled.iter().map(|&i| self.src[i].as_slice()).collect();
        let tgts: Vec<&[usize]> = labeled.iter().map(|&i| self.tgt[i].as_slice()).collect();
        let tokens: usize = tgts.iter().map(|t| t.len() + 1).sum();
        let nll = self.model.teacher_forced(g, params, &srcs, &tgts)?.nll;
        Ok(g.scale(nll, tokens as f64 / labeled.len() as f64))
    }

    fn constraint(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        batch: &Batch,
        s: ConstraintSettings,
        rng: &mut dyn RngCore,
    ) -> conlearn::Result<ConstraintLoss> {
        let mut parts = Vec::with_capacity(2);
        let labeled = batch.labeled.iter().map(|&i| self.src[i].as_slice()).collect();
        parts.push(self.group_loss(g, params, labeled, s, rng)?);
        if !batch.unlabeled.is_empty() {
            let unl = batch.unlabeled.iter().map(|&i| self.pool[i].as_slice()).collect();
            parts.push(self.group_loss(g, params, unl, s, rng)?);
        }
        sum_losses(g, parts)
    }

    fn evaluate(&self, params: &ParamSet) -> conlearn::Result<Evaluation> {
        let lengths: Vec<usize> = self.test_src.iter().map(Vec::len).collect();
        let mut preds = vec![Vec::new(); self.test_src.len()];
        for (len, idx) in group_by_length(&lengths) {
            for chunk in idx.chunks(EVAL_CHUNK) {
                let mut g = Graph::new();
                let srcs: Vec<&[usize]> = chunk.iter().map(|&i| self.test_src[i].as_slice()).collect();
                let out = self.model.decode(&mut g, params, &srcs, 1, max_len(len), DecodeMode::Greedy)?;
                for (&i, d) in chunk.iter().zip(out) {
                    preds[i] = d.into_iter().next().map(|d| d.tokens).unwrap_or_default();
                }
            }
        }
        Ok(Evaluation {
            main_metric: token_accuracy(&preds, &self.test_tgt)?,
            violation_rate: violation_rate(std::slice::from_ref(&self.spec), &self.test_src, &preds)?,
        })
    }
}
