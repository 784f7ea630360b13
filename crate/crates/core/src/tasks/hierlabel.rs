//! Hierarchical multilabel classification: four parent labels, each with
//! one child that may only be on when its parent is on.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::rules::{index, int_arg, Bindings, RuleGrounder};
use crate::constraint::{ConstraintSpec, Lit};
use crate::error::{Error, Result};
use crate::softlogic::{Atom, Domains};

pub const PARENTS: usize = 4;
pub const LABELS: usize = 2 * PARENTS;

/// Label index of parent `p`'s child.
pub fn child_of(p: usize) -> usize {
    PARENTS + p
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierExample {
    pub features: Vec<f64>,
    /// 0/1 per label.
    pub labels: Vec<usize>,
}

/// Cluster layout shared by every split of one task instance.
///
/// Each example picks a parent uniformly and turns its child on with
/// probability 1/2; its features are drawn around the center of that
/// (parent, child) configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct HierTask {
    pub dim: usize,
    pub sigma: f64,
    centers: Vec<Vec<f64>>,
}

impl HierTask {
    pub fn new<R: Rng + ?Sized>(dim: usize, sigma: f64, rng: &mut R) -> Result<Self> {
        if dim == 0 || !(sigma > 0.0) {
            return Err(Error::Config("hierlabel needs dim >= 1 and sigma > 0".into()));
        }
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        let centers = (0..2 * PARENTS)
            .map(|_| (0..dim).map(|_| unit.sample(rng)).collect())
            .collect();
        Ok(Self { dim, sigma, centers })
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<HierExample> {
        let noise = Normal::new(0.0, self.sigma).expect("valid normal");
        (0..count)
            .map(|_| {
                let p = rng.random_range(0..PARENTS);
                let with_child = rng.random_bool(0.5);
                let center = &self.centers[2 * p + usize::from(with_child)];
                let features = center.iter().map(|c| c + noise.sample(rng)).collect();
                let mut labels = vec![0; LABELS];
                labels[p] = 1;
                if with_child {
                    labels[child_of(p)] = 1;
                }
                HierExample { features, labels }
            })
            .collect()
    }
}

/// Convenience generator with a fresh cluster layout.
pub fn gen_hierlabel<R: Rng + ?Sized>(count: usize, dim: usize, sigma: f64, rng: &mut R) -> Result<Vec<HierExample>> {
    Ok(HierTask::new(dim, sigma, rng)?.sample(count, rng))
}

fn on_atom(a: &Atom) -> Result<Lit> {
    if a.name != "on" || a.args.len() != 1 {
        return Err(Error::Semantic(format!("unexpected atom {a} in a hierarchy rule")));
    }
    Ok(Lit::new(index(int_arg(a, 0)?, "label")?, 1))
}

/// One `child ⇒ parent` rule per parent.
pub fn hier_constraints() -> Vec<ConstraintSpec<()>> {
    (0..PARENTS)
        .map(|p| {
            let text = format!("on({}) => on({})", child_of(p), p);
            let g = RuleGrounder::new(&text, Domains::new(), Bindings::Fixed(vec![vec![]]), on_atom)
                .expect("static rule");
            ConstraintSpec::symbolic(format!("child{p}=>parent{p}"), Arc::new(g))
        })
        .collect()
}

/// Thresholds per-label probabilities at 1/2.
pub fn threshold(probs: &[f64]) -> Vec<usize> {
    probs.iter().map(|&p| usize::from(p > 0.5)).collect()
}

pub fn to_lines(examples: &[HierExample]) -> String {
    examples
        .iter()
        .map(|e| {
            let x: Vec<String> = e.features.iter().map(|v| format!("{v:.6}")).collect();
            let y: Vec<String> = e.labels.iter().map(usize::to_string).collect();
            format!("{}\t{}\n", x.join(" "), y.join(""))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gold_labels_satisfy_hierarchy() {
        let data = gen_hierlabel(300, 6, 1.0, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let specs = hier_constraints();
        for e in &data {
            for s in &specs {
                assert_eq!(s.degree(&(), &e.labels).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn child_without_parent_is_violation() {
        let specs = hier_constraints();
        let mut y = vec![0; LABELS];
        y[child_of(2)] = 1;
        assert!(specs[2].violated(&(), &y).unwrap());
        assert!(!specs[1].violated(&(), &y).unwrap());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_hierlabel(20, 4, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = gen_hierlabel(20, 4, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
