use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamSet, Tensor};
use crate::error::Result;

use super::INIT_BOUND;

/// Single-layer LSTM cell with gates ordered input, forget, cell, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    prefix: String,
    pub input: usize,
    pub hidden: usize,
}

/// Parameter nodes of one LSTM, fetched once per graph.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
}

impl Lstm {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) -> Result<()> {
        let h4 = 4 * self.hidden;
        params.insert(self.name("wx"), Tensor::uniform(&[self.input, h4], INIT_BOUND, rng))?;
        params.insert(self.name("wh"), Tensor::uniform(&[self.hidden, h4], INIT_BOUND, rng))?;
        params.insert(self.name("b"), Tensor::uniform(&[1, h4], INIT_BOUND, rng))?;
        Ok(())
    }

    pub fn nodes(&self, g: &mut Graph, params: &ParamSet) -> LstmNodes {
        LstmNodes {
            wx: g.param(params, &self.name("wx")),
            wh: g.param(params, &self.name("wh")),
            b: g.param(params, &self.name("b")),
        }
    }

    /// Zero `(h, c)` state for a batch of `rows`.
    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> (NodeId, NodeId) {
        let h = g.constant(Tensor::zeros(&[rows, self.hidden]));
        (h, h)
    }

    /// One step: `x [B, input]`, state `[B, hidden]` each.
    pub fn step(&self, g: &mut Graph, n: LstmNodes, x: NodeId, h: NodeId, c: NodeId) -> (NodeId, NodeId) {
        let hd = self.hidden;
        let zx = g.matmul(x, n.wx);
        let zh = g.matmul(h, n.wh);
        let z = g.add(zx, zh);
        let z = g.add_row(z, n.b);
        let i = g.narrow(z, 1, 0, hd);
        let i = g.sigmoid(i);
        let f = g.narrow(z, 1, hd, hd);
        let f = g.sigmoid(f);
        let cand = g.narrow(z, 1, 2 * hd, hd);
        let cand = g.tanh(cand);
        let o = g.narrow(z, 1, 3 * hd, hd);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c);
        let write = g.mul(i, cand);
        let c2 = g.add(keep, write);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        (h2, c2)
    }
}
