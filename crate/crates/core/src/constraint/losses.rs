use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::RngCore;

use super::explore::{Explore, ExplorationResult, Factorized, Strategy};
use super::spec::{holds, ConstraintSpec, Lit};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::softlogic::{eval_soft_graph, Formula, Logic};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossType {
    /// `1 - soft truth` of each grounded rule.
    Soft,
    /// REINFORCE with reward 1 for any violation.
    Binary,
    /// REINFORCE with the graded violation degree as reward.
    Real,
}

impl LossType {
    pub fn label(self) -> &'static str {
        match self {
            LossType::Soft => "soft",
            LossType::Binary => "binary",
            LossType::Real => "real",
        }
    }
}

impl fmt::Display for LossType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LossType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(LossType::Soft),
            "binary" => Ok(LossType::Binary),
            "real" => Ok(LossType::Real),
            _ => Err(Error::Config(format!("unknown loss type {s:?}"))),
        }
    }
}

/// A scalar constraint loss and the signal that drives monotone weighting.
#[derive(Clone, Copy, Debug)]
pub struct ConstraintLoss {
    pub node: NodeId,
    pub value: f64,
    /// Non-negative constraint measure: the soft loss itself, or the mean
    /// reward (violation) of the explored candidates for REINFORCE.
    pub violation: f64,
}

/// REINFORCE surrogate `mean over candidates of r(y) · log p(y)`, counting
/// only violating candidates in the sum. Rewards are constants.
pub fn reinforce_loss<I>(
    g: &mut Graph,
    result: &ExplorationResult,
    spec: &ConstraintSpec<I>,
    inputs: &[I],
    kind: LossType,
) -> Result<ConstraintLoss> {
    if kind == LossType::Soft {
        return Err(Error::Contract("reinforce_loss needs a Binary or Real loss type".into()));
    }
    if result.strategy == Strategy::Exhaustive {
        return Err(Error::Contract("exhaustive results carry no log-probabilities".into()));
    }
    if result.candidates.len() != inputs.len() {
        return Err(Error::Contract("one input per explored example is required".into()));
    }
    let examples = inputs.len().max(1) as f64;
    let mut weights: IndexMap<NodeId, Vec<f64>> = IndexMap::new();
    let mut reward_sum = 0.0;
    for (input, cands) in inputs.iter().zip(&result.candidates) {
        let k = cands.len() as f64;
        for cand in cands {
            let degree = spec.degree(input, &cand.output)?;
            if degree <= 0.0 {
                continue;
            }
            let r = match kind {
                LossType::Binary => 1.0,
                _ => degree,
            };
            reward_sum += r / k;
            let logp = cand
                .logp
                .as_ref()
                .ok_or_else(|| Error::Contract("candidate has no log-probability node".into()))?;
            let n = g.value(logp.node).numel();
            let w = weights.entry(logp.node).or_insert_with(|| vec![0.0; n]);
            for &i in &logp.indices {
                w[i] += r / (k * examples);
            }
        }
    }
    let violation = reward_sum / examples;
    if weights.is_empty() {
        let node = g.scalar(0.0);
        return Ok(ConstraintLoss {
            node,
            value: 0.0,
            violation,
        });
    }
    let mut node = None;
    for (src, w) in weights {
        let shape = g.shape(src).to_vec();
        let term = g.weighted_sum(src, Tensor::new(shape, w)?);
        node = Some(match node {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    let node = node.expect("non-empty");
    Ok(ConstraintLoss {
        node,
        value: g.item(node),
        violation,
    })
}

/// Soft-logic loss: mean over examples of the mean `1 - soft truth` over an
/// example's groundings. Under top-1/sampling a grounding whose implication
/// antecedent is false at a candidate contributes 0 for that candidate.
pub fn psl_loss<I>(
    g: &mut Graph,
    result: &ExplorationResult,
    ctx: &Factorized,
    spec: &ConstraintSpec<I>,
    inputs: &[I],
    logic: Logic,
) -> Result<ConstraintLoss> {
    if inputs.len() != ctx.rows.len() {
        return Err(Error::Contract("one input per example is required".into()));
    }
    let classes = ctx.classes(g);
    let examples = inputs.len().max(1) as f64;
    // Groundings batched by structure: slot -> flat probability indices, plus weights.
    let mut groups: IndexMap<Formula<usize>, (Vec<Vec<usize>>, Vec<f64>)> = IndexMap::new();
    for (e, input) in inputs.iter().enumerate() {
        let rows = &ctx.rows[e];
        let ground = spec.groundings(input, rows.len())?;
        if ground.is_empty() {
            continue;
        }
        let n = ground.len() as f64;
        for f in &ground {
            let share = match result.strategy {
                Strategy::Exhaustive => 1.0,
                _ => {
                    let cands = &result.candidates[e];
                    let mut active = 0usize;
                    for c in cands {
                        if is_active(f, &c.output)? {
                            active += 1;
                        }
                    }
                    active as f64 / cands.len() as f64
                }
            };
            if share == 0.0 {
                continue;
            }
            let (shape, atoms) = f.slots();
            let entry = groups
                .entry(shape)
                .or_insert_with(|| (vec![Vec::new(); atoms.len()], Vec::new()));
            for (slot, lit) in atoms.iter().enumerate() {
                let row = *rows.get(lit.factor).ok_or_else(|| {
                    Error::Contract(format!("atom {lit} refers past the example's {} positions", rows.len()))
                })?;
                if lit.class >= classes {
                    return Err(Error::Contract(format!("atom {lit} names a class out of {classes}")));
                }
                entry.0[slot].push(row * classes + lit.class);
            }
            entry.1.push(share / (n * examples));
        }
    }
    let mut total_weight = 0.0;
    let mut satisfied = None;
    for (shape, (slots, w)) in groups {
        total_weight += w.iter().sum::<f64>();
        let leaves: Vec<NodeId> = slots.iter().map(|idx| g.pick(ctx.probs, idx)).collect();
        let soft = if leaves.is_empty() {
            // Atom-free structure (e.g. an empty conjunction): constant truth.
            let v = crate::softlogic::eval_soft(&shape, &|_: &usize| None, logic)?;
            g.constant(Tensor::full(&[w.len()], v))
        } else {
            eval_soft_graph(g, &shape, &leaves, logic)
        };
        let term = g.weighted_sum(soft, Tensor::vector(w));
        satisfied = Some(match satisfied {
            None => term,
            Some(acc) => g.add(acc, term),
        });
    }
    let node = match satisfied {
        None => g.scalar(0.0),
        Some(s) => g.affine(s, -1.0, total_weight),
    };
    let value = g.item(node);
    Ok(ConstraintLoss {
        node,
        value,
        violation: value.max(0.0),
    })
}

/// A grounding counts for a candidate unless it is an implication whose
/// antecedent is false there.
fn is_active(f: &Formula<Lit>, output: &[usize]) -> Result<bool> {
    match f.antecedent() {
        Some(a) => holds(a, output),
        None => Ok(true),
    }
}

/// Explores once, then sums the per-spec losses.
#[allow(clippy::too_many_arguments)]
pub fn constraint_loss<I>(
    g: &mut Graph,
    ctx: &dyn Explore,
    specs: &[ConstraintSpec<I>],
    inputs: &[I],
    loss_type: LossType,
    strategy: Strategy,
    logic: Logic,
    rng: &mut dyn RngCore,
) -> Result<ConstraintLoss> {
    if strategy == Strategy::Exhaustive && loss_type != LossType::Soft {
        return Err(Error::Config(
            "exhaustive exploration is only available with the soft loss".into(),
        ));
    }
    if specs.is_empty() {
        return Err(Error::Contract("no constraint specs given".into()));
    }
    if inputs.len() != ctx.examples() {
        return Err(Error::Contract("one input per example is required".into()));
    }
    let result = ctx.explore(g, strategy, rng)?;
    let mut parts = Vec::with_capacity(specs.len());
    for spec in specs {
        let part = match loss_type {
            LossType::Soft => {
                let fac = ctx
                    .factorized()
                    .ok_or_else(|| Error::Contract("soft losses need per-position distributions".into()))?;
                psl_loss(g, &result, fac, spec, inputs, logic)?
            }
            _ => reinforce_loss(g, &result, spec, inputs, loss_type)?,
        };
        parts.push(part);
    }
    let mut node = parts[0].node;
    for p in &parts[1..] {
        node = g.add(node, p.node);
    }
    Ok(ConstraintLoss {
        node,
        value: g.item(node),
        violation: parts.iter().map(|p| p.violation).sum(),
    })
}
