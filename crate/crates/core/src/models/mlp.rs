use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::{contract, Result};

use super::INIT_BOUND;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// One distribution over all classes per row.
    Softmax,
    /// Independent per-class probabilities.
    Sigmoid,
}

/// One-hidden-layer tanh MLP.
#[derive(Clone, Debug)]
pub struct Mlp {
    prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Mlp {
    pub fn new(prefix: &str, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            input,
            hidden,
            output,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        params.insert(self.name("w1"), Tensor::uniform(&[self.input, self.hidden], INIT_BOUND, rng))?;
        params.insert(self.name("b1"), Tensor::uniform(&[1, self.hidden], INIT_BOUND, rng))?;
        params.insert(self.name("w2"), Tensor::uniform(&[self.hidden, self.output], INIT_BOUND, rng))?;
        params.insert(self.name("b2"), Tensor::uniform(&[1, self.output], INIT_BOUND, rng))?;
        Ok(())
    }

    /// Pre-activation scores `[B, output]` for features `[B, input]`.
    pub fn logits(&self, g: &mut Graph, params: &ParamSet, x: NodeId) -> Result<NodeId> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.input {
            return contract(format!("MLP expects [B, {}] features, got {:?}", self.input, shape));
        }
        let w1 = g.param(params, &self.name("w1"));
        let b1 = g.param(params, &self.name("b1"));
        let w2 = g.param(params, &self.name("w2"));
        let b2 = g.param(params, &self.name("b2"));
        let h = g.matmul(x, w1);
        let h = g.add_row(h, b1);
        let h = g.tanh(h);
        let o = g.matmul(h, w2);
        Ok(g.add_row(o, b2))
    }

    /// Class probabilities under `head`.
    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: NodeId, head: Head) -> Result<NodeId> {
        let z = self.logits(g, params, x)?;
        Ok(match head {
            Head::Softmax => g.softmax(z),
            Head::Sigmoid => g.sigmoid(z),
        })
    }
}
