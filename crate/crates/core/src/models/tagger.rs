use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::{Error, Result};

use super::lstm::Lstm;
use super::INIT_BOUND;

/// Unidirectional LSTM tagger: one tag distribution per input position.
#[derive(Clone, Debug)]
pub struct Tagger {
    pub vocab_size: usize,
    pub tags: usize,
    embed: usize,
    lstm: Lstm,
}

/// Per-position tag distributions for a batch.
#[derive(Clone, Debug)]
pub struct TagOutput {
    /// `[positions, tags]` probabilities.
    pub probs: NodeId,
    /// `[positions, tags]` log-probabilities.
    pub log_probs: NodeId,
    /// For each sequence, the rows of `probs` holding its positions in order.
    pub rows: Vec<Vec<usize>>,
}

impl Tagger {
    pub fn new(vocab_size: usize, tags: usize, embed: usize, hidden: usize) -> Self {
        Self {
            vocab_size,
            tags,
            embed,
            lstm: Lstm::new("tag.lstm", embed, hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        params.insert("tag.emb", Tensor::uniform(&[self.vocab_size, self.embed], INIT_BOUND, rng))?;
        self.lstm.init(params, rng)?;
        params.insert("tag.wo", Tensor::uniform(&[self.lstm.hidden, self.tags], INIT_BOUND, rng))?;
        params.insert("tag.bo", Tensor::uniform(&[1, self.tags], INIT_BOUND, rng))?;
        Ok(())
    }

    /// Tags a batch of equal-length token sequences.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, seqs: &[&[usize]]) -> Result<TagOutput> {
        let Some(first) = seqs.first() else {
            return Err(Error::Contract("empty batch".into()));
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::Input("empty token sequence".into()));
        }
        for s in seqs {
            if s.len() != len {
                return Err(Error::Contract("sequences in one batch must share a length".into()));
            }
            if let Some(t) = s.iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::Input(format!("token id {t} outside vocabulary of {}", self.vocab_size)));
            }
        }
        let b = seqs.len();
        let emb = g.param(params, "tag.emb");
        let ln = self.lstm.nodes(g, params);
        let (mut h, mut c) = self.lstm.zero_state(g, b);
        let mut states = Vec::with_capacity(len);
        for t in 0..len {
            let ids: Vec<usize> = seqs.iter().map(|s| s[t]).collect();
            let x = g.select_rows(emb, &ids);
            (h, c) = self.lstm.step(g, ln, x, h, c);
            states.push(h);
        }
        let hs = g.concat(&states, 0);
        let wo = g.param(params, "tag.wo");
        let bo = g.param(params, "tag.bo");
        let z = g.matmul(hs, wo);
        let z = g.add_row(z, bo);
        let log_probs = g.log_softmax(z);
        let probs = g.softmax(z);
        let rows = (0..b).map(|e| (0..len).map(|t| t * b + e).collect()).collect();
        Ok(TagOutput { probs, log_probs, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_normalization_and_zero_symmetry() {
        let t = Tagger::new(10, 9, 6, 5);
        let mut p = ParamSet::new();
        t.init(&mut p, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let mut g = Graph::new();
        let out = t.forward(&mut g, &p, &[&[1, 2, 3], &[4, 5, 6]]).unwrap();
        assert_eq!(out.rows, vec![vec![0, 2, 4], vec![1, 3, 5]]);
        assert_eq!(g.shape(out.probs), &[6, 9]);
        for r in 0..6 {
            let s: f64 = g.value(out.probs).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        for (_, v) in p.iter_mut() {
            v.data_mut().fill(0.0);
        }
        let mut g = Graph::new();
        let out = t.forward(&mut g, &p, &[&[1, 2]]).unwrap();
        assert!(g.value(out.probs).data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn empty_sequence_is_input_error() {
        let t = Tagger::new(4, 9, 2, 2);
        let mut p = ParamSet::new();
        t.init(&mut p, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut g = Graph::new();
        assert!(matches!(t.forward(&mut g, &p, &[&[]]), Err(Error::Input(_))));
    }
}
