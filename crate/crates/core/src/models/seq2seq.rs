use rand::{Rng, RngCore};

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};

use super::lstm::{Lstm, LstmNodes};
use super::{Vocab, INIT_BOUND};

/// How free-running decoding picks each token.
pub enum DecodeMode<'r> {
    /// Per-step argmax (ties go to the lowest class).
    Greedy,
    /// Draw each token from the step distribution.
    Sample(&'r mut dyn RngCore),
}

/// One free-running output.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    /// Emitted vocabulary ids, without the final EOS.
    pub tokens: Vec<usize>,
    /// `max_len` ran out before EOS.
    pub truncated: bool,
    /// Vector node holding per-step log-probabilities for a whole batch.
    pub logp_node: NodeId,
    /// Entries of `logp_node` that belong to this output; their sum is its
    /// log-probability.
    pub logp_indices: Vec<usize>,
    /// Value of that sum.
    pub logp: f64,
}

/// Result of a teacher-forced pass.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    /// Mean token-level negative log-likelihood (EOS included).
    pub nll: NodeId,
    /// Per-step `[B, classes]` log-distributions.
    pub step_log_probs: Vec<NodeId>,
}

/// LSTM encoder-decoder over a shared embedding.
///
/// The decoder predicts over a restricted set of output classes whose first
/// entry is EOS.
#[derive(Clone, Debug)]
pub struct Seq2Seq {
    pub vocab: Vocab,
    outputs: Vec<usize>,
    class_of: Vec<Option<usize>>,
    embed: usize,
    enc: Lstm,
    dec: Lstm,
}

struct Nodes {
    emb: NodeId,
    enc: LstmNodes,
    dec: LstmNodes,
    wo: NodeId,
    bo: NodeId,
}

impl Seq2Seq {
    /// `outputs` lists the vocabulary ids the decoder may emit besides EOS.
    pub fn new(vocab: Vocab, outputs: &[usize], embed: usize, hidden: usize) -> Result<Self> {
        let mut all = vec![Vocab::EOS];
        for &o in outputs {
            if o >= vocab.len() || o == Vocab::PAD || o == Vocab::BOS || all.contains(&o) {
                return Err(Error::Contract(format!("invalid decoder output id {o}")));
            }
            all.push(o);
        }
        let mut class_of = vec![None; vocab.len()];
        for (c, &id) in all.iter().enumerate() {
            class_of[id] = Some(c);
        }
        Ok(Self {
            vocab,
            outputs: all,
            class_of,
            embed,
            enc: Lstm::new("s2s.enc", embed, hidden),
            dec: Lstm::new("s2s.dec", embed, hidden),
        })
    }

    pub fn classes(&self) -> usize {
        self.outputs.len()
    }

    /// Vocabulary id emitted for decoder class `c`.
    pub fn class_token(&self, c: usize) -> usize {
        self.outputs[c]
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        params.insert("s2s.emb", Tensor::uniform(&[self.vocab.len(), self.embed], INIT_BOUND, rng))?;
        self.enc.init(params, rng)?;
        self.dec.init(params, rng)?;
        params.insert("s2s.wo", Tensor::uniform(&[self.dec.hidden, self.classes()], INIT_BOUND, rng))?;
        params.insert("s2s.bo", Tensor::uniform(&[1, self.classes()], INIT_BOUND, rng))?;
        Ok(())
    }

    fn nodes(&self, g: &mut Graph, params: &ParamSet) -> Nodes {
        Nodes {
            emb: g.param(params, "s2s.emb"),
            enc: self.enc.nodes(g, params),
            dec: self.dec.nodes(g, params),
            wo: g.param(params, "s2s.wo"),
            bo: g.param(params, "s2s.bo"),
        }
    }

    fn check_tokens(&self, seq: &[usize]) -> Result<()> {
        match seq.iter().find(|&&t| t >= self.vocab.len() || t < 3) {
            Some(t) => Err(Error::Input(format!("token id {t} is not an input symbol"))),
            None => Ok(()),
        }
    }

    /// Final encoder state for a batch of equal-length sources.
    fn encode(&self, g: &mut Graph, n: &Nodes, srcs: &[&[usize]]) -> Result<(NodeId, NodeId)> {
        let Some(first) = srcs.first() else {
            return Err(Error::Contract("empty batch".into()));
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::Input("empty source sequence".into()));
        }
        for s in srcs {
            if s.len() != len {
                return Err(Error::Contract("sources in one batch must share a length".into()));
            }
            self.check_tokens(s)?;
        }
        let (mut h, mut c) = self.enc.zero_state(g, srcs.len());
        for t in 0..len {
            let ids: Vec<usize> = srcs.iter().map(|s| s[t]).collect();
            let x = g.select_rows(n.emb, &ids);
            (h, c) = self.enc.step(g, n.enc, x, h, c);
        }
        Ok((h, c))
    }

    fn step_log_probs(&self, g: &mut Graph, n: &Nodes, prev: &[usize], h: NodeId, c: NodeId) -> (NodeId, NodeId, NodeId) {
        let x = g.select_rows(n.emb, prev);
        let (h, c) = self.dec.step(g, n.dec, x, h, c);
        let z = g.matmul(h, n.wo);
        let z = g.add_row(z, n.bo);
        (g.log_softmax(z), h, c)
    }

    /// Supervised pass over equal-length sources; targets may differ in length.
    pub fn teacher_forced(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        srcs: &[&[usize]],
        tgts: &[&[usize]],
    ) -> Result<TeacherForced> {
        if srcs.len() != tgts.len() {
            return Err(Error::Contract("sources and targets differ in count".into()));
        }
        let n = self.nodes(g, params);
        let (mut h, mut c) = self.encode(g, &n, srcs)?;
        let mut gold = Vec::with_capacity(tgts.len());
        for t in tgts {
            let classes = t
                .iter()
                .map(|&id| {
                    self.class_of
                        .get(id)
                        .copied()
                        .flatten()
                        .filter(|&c| c != 0)
                        .ok_or_else(|| Error::Input(format!("token id {id} is not a decoder output")))
                })
                .collect::<Result<Vec<_>>>()?;
            gold.push(classes);
        }
        let rows = srcs.len();
        let steps = gold.iter().map(Vec::len).max().unwrap_or(0) + 1;
        let tokens: usize = gold.iter().map(|t| t.len() + 1).sum();
        let mut prev = vec![Vocab::BOS; rows];
        let mut picked = Vec::with_capacity(steps);
        let mut step_log_probs = Vec::with_capacity(steps);
        let mut weights = Vec::with_capacity(steps * rows);
        for t in 0..steps {
            let (lp, h2, c2) = self.step_log_probs(g, &n, &prev, h, c);
            (h, c) = (h2, c2);
            step_log_probs.push(lp);
            let mut target = Vec::with_capacity(rows);
            for (r, seq) in gold.iter().enumerate() {
                let (cls, w) = match t.cmp(&seq.len()) {
                    std::cmp::Ordering::Less => (seq[t], 1.0),
                    std::cmp::Ordering::Equal => (0, 1.0),
                    std::cmp::Ordering::Greater => (0, 0.0),
                };
                target.push(cls);
                weights.push(-w / tokens as f64);
                prev[r] = self.outputs[cls];
            }
            picked.push(g.pick_per_row(lp, &target));
        }
        let all = g.concat(&picked, 0);
        let nll = g.weighted_sum(all, Tensor::vector(weights));
        Ok(TeacherForced { nll, step_log_probs })
    }

    /// Free-running decoding of equal-length sources, each repeated
    /// `repeats` times. The result is indexed `[source][repeat]`.
    pub fn decode(
        &self,
        g: &mut Graph,
        params: &ParamSet,
        srcs: &[&[usize]],
        repeats: usize,
        max_len: usize,
        mut mode: DecodeMode<'_>,
    ) -> Result<Vec<Vec<Decoded>>> {
        if max_len == 0 || repeats == 0 {
            return Err(Error::Contract("max_len and repeats must be positive".into()));
        }
        let n = self.nodes(g, params);
        let (h0, c0) = self.encode(g, &n, srcs)?;
        let b = srcs.len();
        let rows = b * repeats;
        let (mut h, mut c) = if repeats == 1 {
            (h0, c0)
        } else {
            let idx: Vec<usize> = (0..rows).map(|r| r % b).collect();
            (g.select_rows(h0, &idx), g.select_rows(c0, &idx))
        };

        let mut prev = vec![Vocab::BOS; rows];
        let mut alive = vec![true; rows];
        let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); rows];
        let mut lens = vec![0usize; rows];
        let mut sums = vec![0.0; rows];
        let mut picked = Vec::new();
        for _ in 0..max_len {
            let (lp, h2, c2) = self.step_log_probs(g, &n, &prev, h, c);
            (h, c) = (h2, c2);
            let values = g.value(lp);
            let width = self.classes();
            let mut choice = vec![0usize; rows];
            for r in 0..rows {
                if !alive[r] {
                    continue;
                }
                let row = &values.data()[r * width..(r + 1) * width];
                choice[r] = match &mut mode {
                    DecodeMode::Greedy => argmax(row),
                    DecodeMode::Sample(rng) => sample_log_row(row, &mut **rng),
                };
                sums[r] += row[choice[r]];
                lens[r] += 1;
            }
            picked.push(g.pick_per_row(lp, &choice));
            for r in 0..rows {
                if !alive[r] {
                    continue;
                }
                if choice[r] == 0 {
                    alive[r] = false;
                } else {
                    tokens[r].push(self.outputs[choice[r]]);
                }
                prev[r] = self.outputs[choice[r]];
            }
            if !alive.iter().any(|&a| a) {
                break;
            }
        }
        let node = g.concat(&picked, 0);
        let mut out: Vec<Vec<Decoded>> = (0..b).map(|_| Vec::with_capacity(repeats)).collect();
        for (r, toks) in tokens.into_iter().enumerate() {
            out[r % b].push(Decoded {
                tokens: toks,
                truncated: alive[r],
                logp_node: node,
                logp_indices: (0..lens[r]).map(|t| t * rows + r).collect(),
                logp: sums[r],
            });
        }
        Ok(out)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from a row of log-probabilities.
pub(crate) fn sample_log_row(row: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &lp) in row.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    row.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> (Seq2Seq, ParamSet) {
        let vocab = Vocab::new(&["a", "b", "z"]).unwrap();
        let outs = [3, 4, 5];
        let m = Seq2Seq::new(vocab, &outs, 8, 8).unwrap();
        let mut p = ParamSet::new();
        m.init(&mut p, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        (m, p)
    }

    #[test]
    fn zero_weights_are_uniform() {
        let (m, mut p) = model();
        for (_, t) in p.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let src = m.vocab.encode_chars("azbz").unwrap();
        let tgt = m.vocab.encode_chars("zabbb").unwrap();
        let tf = m.teacher_forced(&mut g, &p, &[&src], &[&tgt]).unwrap();
        assert_eq!(tf.step_log_probs.len(), 6);
        for &lp in &tf.step_log_probs {
            for &v in g.value(lp).data() {
                assert!((v.exp() - 0.25).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible_and_logp_consistent() {
        let (m, p) = model();
        let src = m.vocab.encode_chars("bzaz").unwrap();
        let run = || {
            let mut g = Graph::new();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let out = m
                .decode(&mut g, &p, &[&src], 3, 12, DecodeMode::Sample(&mut rng))
                .unwrap();
            let d = out[0].clone();
            for x in &d {
                let v = g.value(x.logp_node);
                let s: f64 = x.logp_indices.iter().map(|&i| v.data()[i]).sum();
                assert!((s - x.logp).abs() < 1e-12);
            }
            d.into_iter().map(|x| (x.tokens, x.logp.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn truncation_is_flagged() {
        let (m, mut p) = model();
        // Bias the output layer hard toward 'b' so EOS never wins.
        let bo = p.get_mut("s2s.bo").unwrap();
        bo.data_mut().copy_from_slice(&[-50.0, 0.0, 50.0, 0.0]);
        let src = m.vocab.encode_chars("az").unwrap();
        let mut g = Graph::new();
        let out = m.decode(&mut g, &p, &[&src], 1, 4, DecodeMode::Greedy).unwrap();
        assert!(out[0][0].truncated);
        assert_eq!(m.vocab.decode_chars(&out[0][0].tokens), "bbbb");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (m, p) = model();
        let mut g = Graph::new();
        assert!(matches!(
            m.decode(&mut g, &p, &[&[]], 1, 4, DecodeMode::Greedy),
            Err(Error::Input(_))
        ));
        assert!(matches!(
            m.decode(&mut g, &p, &[&[9]], 1, 4, DecodeMode::Greedy),
            Err(Error::Input(_))
        ));
    }
}
