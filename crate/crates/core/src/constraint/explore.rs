use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use crate::autodiff::{Graph, NodeId, ParamSet};
use crate::error::{Error, Result};
use crate::models::{sample_log_row, DecodeMode, Seq2Seq};

/// Upper bound on outcomes materialized by exhaustive exploration, per example.
pub const EXHAUSTIVE_CAP: usize = 4096;

/// How candidate outputs are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    Top1,
    Sampling(usize),
    Exhaustive,
}

impl Strategy {
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Top1 => "top1",
            Strategy::Sampling(_) => "sampling",
            Strategy::Exhaustive => "exhaustive",
        }
    }

    /// Sample count, 1 for top-1 and 0 for exhaustive.
    pub fn k(self) -> usize {
        match self {
            Strategy::Top1 => 1,
            Strategy::Sampling(k) => k,
            Strategy::Exhaustive => 0,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Sampling(k) => write!(f, "sampling-{k}"),
            s => f.write_str(s.label()),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `top1`, `exhaustive`, `sampling-<k>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top1" => Ok(Strategy::Top1),
            "exhaustive" => Ok(Strategy::Exhaustive),
            _ => {
                let k = s
                    .strip_prefix("sampling-")
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))?;
                if k == 0 {
                    return Err(Error::Config("sampling needs k >= 1".into()));
                }
                Ok(Strategy::Sampling(k))
            }
        }
    }
}

/// Entries of a graph vector whose sum is a candidate's log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct LogpRef {
    pub node: NodeId,
    pub indices: Vec<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Class per output position (factorized) or emitted token ids (sequence).
    pub output: Vec<usize>,
    pub logp: Option<LogpRef>,
}

/// Candidates per example; for exhaustive exploration, per-position
/// enumerations with their probabilities instead.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationResult {
    pub strategy: Strategy,
    pub candidates: Vec<Vec<Candidate>>,
    /// `[example][position][class]` probabilities (exhaustive only).
    pub enumeration: Vec<Vec<Vec<f64>>>,
}

/// A model output that candidates can be drawn from.
pub trait Explore {
    fn examples(&self) -> usize;

    fn explore(&self, g: &mut Graph, strategy: Strategy, rng: &mut dyn RngCore) -> Result<ExplorationResult>;

    /// Per-position distributions, when the output factorizes over positions.
    fn factorized(&self) -> Option<&Factorized> {
        None
    }
}

/// Independent categorical distribution per output position.
#[derive(Clone, Debug)]
pub struct Factorized {
    /// `[rows, classes]` probabilities.
    pub probs: NodeId,
    /// `[rows, classes]` log-probabilities.
    pub log_probs: NodeId,
    /// For each example, its positions as rows of `probs`.
    pub rows: Vec<Vec<usize>>,
}

impl Factorized {
    /// Binary factors from `[B, L]` per-label sigmoid probabilities: position
    /// `j` of example `b` has classes {0: off, 1: on}.
    pub fn from_sigmoid(g: &mut Graph, probs: NodeId) -> Self {
        let (b, l) = (g.shape(probs)[0], g.shape(probs)[1]);
        let on = g.reshape(probs, &[b * l, 1]);
        let off = g.one_minus(on);
        let probs2 = g.concat(&[off, on], 1);
        let log_probs = g.log(probs2);
        let rows = (0..b).map(|e| (0..l).map(|j| e * l + j).collect()).collect();
        Self {
            probs: probs2,
            log_probs,
            rows,
        }
    }

    pub fn classes(&self, g: &Graph) -> usize {
        g.shape(self.probs)[1]
    }
}

impl Explore for Factorized {
    fn examples(&self) -> usize {
        self.rows.len()
    }

    fn factorized(&self) -> Option<&Factorized> {
        Some(self)
    }

    fn explore(&self, g: &mut Graph, strategy: Strategy, rng: &mut dyn RngCore) -> Result<ExplorationResult> {
        let c = self.classes(g);
        let probs = g.value(self.probs).clone();
        let log_probs = g.value(self.log_probs).clone();
        let mut result = ExplorationResult {
            strategy,
            candidates: Vec::with_capacity(self.rows.len()),
            enumeration: Vec::new(),
        };
        match strategy {
            Strategy::Exhaustive => {
                for rows in &self.rows {
                    let needed = rows.len() * c;
                    if needed > EXHAUSTIVE_CAP {
                        return Err(Error::Capacity {
                            needed,
                            cap: EXHAUSTIVE_CAP,
                        });
                    }
                    result.enumeration.push(rows.iter().map(|&r| probs.row(r).to_vec()).collect());
                    result.candidates.push(Vec::new());
                }
            }
            Strategy::Top1 | Strategy::Sampling(_) => {
                let draws = strategy.k().max(1);
                for rows in &self.rows {
                    let mut cands = Vec::with_capacity(draws);
                    for _ in 0..draws {
                        let mut output = Vec::with_capacity(rows.len());
                        let mut indices = Vec::with_capacity(rows.len());
                        let mut value = 0.0;
                        for &r in rows {
                            let row = log_probs.row(r);
                            let k = match strategy {
                                Strategy::Top1 => argmax(probs.row(r)),
                                _ => sample_log_row(row, rng),
                            };
                            output.push(k);
                            indices.push(r * c + k);
                            value += row[k];
                        }
                        cands.push(Candidate {
                            output,
                            logp: Some(LogpRef {
                                node: self.log_probs,
                                indices,
                                value,
                            }),
                        });
                    }
                    result.candidates.push(cands);
                }
            }
        }
        Ok(result)
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

/// Free-running decoder outputs for a batch of equal-length sources.
pub struct SequenceContext<'a> {
    pub model: &'a Seq2Seq,
    pub params: &'a ParamSet,
    pub sources: Vec<&'a [usize]>,
    pub max_len: usize,
}

impl Explore for SequenceContext<'_> {
    fn examples(&self) -> usize {
        self.sources.len()
    }

    fn explore(&self, g: &mut Graph, strategy: Strategy, rng: &mut dyn RngCore) -> Result<ExplorationResult> {
        let decoded = match strategy {
            Strategy::Exhaustive => {
                let needed = (self.model.classes() as f64).powi(self.max_len as i32);
                return Err(Error::Capacity {
                    needed: if needed >= usize::MAX as f64 { usize::MAX } else { needed as usize },
                    cap: EXHAUSTIVE_CAP,
                });
            }
            Strategy::Top1 => self
                .model
                .decode(g, self.params, &self.sources, 1, self.max_len, DecodeMode::Greedy)?,
            Strategy::Sampling(k) => {
                self.model
                    .decode(g, self.params, &self.sources, k, self.max_len, DecodeMode::Sample(rng))?
            }
        };
        let candidates = decoded
            .into_iter()
            .map(|per| {
                per.into_iter()
                    .map(|d| Candidate {
                        output: d.tokens,
                        logp: Some(LogpRef {
                            node: d.logp_node,
                            indices: d.logp_indices,
                            value: d.logp,
                        }),
                    })
                    .collect()
            })
            .collect();
        Ok(ExplorationResult {
            strategy,
            candidates,
            enumeration: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx(g: &mut Graph, probs: &[f64]) -> Factorized {
        let p = g.constant(Tensor::matrix(1, probs.len(), probs.to_vec()));
        let lp = g.log(p);
        Factorized {
            probs: p,
            log_probs: lp,
            rows: vec![vec![0]],
        }
    }

    #[test]
    fn top1_picks_argmax() {
        let mut g = Graph::new();
        let c = ctx(&mut g, &[0.2, 0.5, 0.3]);
        let r = c.explore(&mut g, Strategy::Top1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.candidates[0].len(), 1);
        assert_eq!(r.candidates[0][0].output, vec![1]);
        assert!((r.candidates[0][0].logp.as_ref().unwrap().value - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_enumerates_all_classes() {
        let mut g = Graph::new();
        let c = ctx(&mut g, &[0.2, 0.5, 0.3]);
        let r = c
            .explore(&mut g, Strategy::Exhaustive, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let e = &r.enumeration[0][0];
        assert_eq!(e.len(), 3);
        assert!((e.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_is_reproducible() {
        let mut g = Graph::new();
        let c = ctx(&mut g, &[0.2, 0.5, 0.3]);
        let draw = |g: &mut Graph| {
            let r = c
                .explore(g, Strategy::Sampling(10), &mut ChaCha8Rng::seed_from_u64(4))
                .unwrap();
            r.candidates[0].iter().map(|c| c.output[0]).collect::<Vec<_>>()
        };
        let a = draw(&mut g);
        assert_eq!(a.len(), 10);
        assert_eq!(a, draw(&mut g));
    }

    #[test]
    fn exhaustive_cap_enforced() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::full(&[5000, 2], 0.5));
        let lp = g.log(p);
        let c = Factorized {
            probs: p,
            log_probs: lp,
            rows: vec![(0..5000).collect()],
        };
        let e = c
            .explore(&mut g, Strategy::Exhaustive, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap_err();
        assert!(matches!(e, Error::Capacity { needed: 10000, cap: EXHAUSTIVE_CAP }));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("sampling-10".parse::<Strategy>().unwrap(), Strategy::Sampling(10));
        assert_eq!(Strategy::Sampling(3).to_string(), "sampling-3");
        assert!("sampling-0".parse::<Strategy>().is_err());
        assert!("beam".parse::<Strategy>().is_err());
    }
}
