//! Three-way pair relation classification (entails / contradicts / neutral)
//! over synthetic sentence vectors.
//!
//! A sentence is a content vector plus one trailing "detail" coordinate. For
//! a premise `p` and hypothesis `h`:
//! - same content, same detail: entails both ways;
//! - same content, `p` more detailed: entails forward, neutral in reverse;
//! - negated content: contradicts both ways;
//! - unrelated content: neutral both ways.
//!
//! Every item carries the ordered pair and its reverse so that symmetry rules
//! can be grounded on the two predictions.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::rules::{index, int_arg, Bindings, RuleGrounder};
use crate::constraint::{ConstraintSpec, Lit};
use crate::error::{Error, Result};
use crate::softlogic::{Atom, Domains};

pub const ENT: usize = 0;
pub const CON: usize = 1;
pub const NEU: usize = 2;
pub const CLASSES: usize = 3;
pub const CLASS_NAMES: [&str; CLASSES] = ["ent", "con", "neu"];

/// Factor index of the forward and reverse prediction.
pub const FWD: usize = 0;
pub const REV: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PairItem {
    /// `[p; h]`.
    pub fwd: Vec<f64>,
    /// `[h; p]`.
    pub rev: Vec<f64>,
    /// Gold class of the forward and reverse pair.
    pub labels: [usize; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairParams {
    /// Content dimension; sentence vectors have one extra detail coordinate.
    pub dim: usize,
    /// Standard deviation of the noise added to the hypothesis.
    pub noise: f64,
    /// Detail gap between a more and a less specific sentence.
    pub detail_gap: f64,
}

impl Default for PairParams {
    fn default() -> Self {
        Self {
            dim: 8,
            noise: 0.6,
            detail_gap: 1.0,
        }
    }
}

impl PairParams {
    /// Width of one model input `[p; h]`.
    pub fn input_dim(&self) -> usize {
        2 * (self.dim + 1)
    }
}

/// Gold (forward, reverse) configurations, drawn uniformly.
const CONFIGS: [[usize; 2]; 5] = [[ENT, ENT], [ENT, NEU], [NEU, ENT], [CON, CON], [NEU, NEU]];

pub fn gen_pairrel<R: Rng + ?Sized>(count: usize, params: &PairParams, rng: &mut R) -> Result<Vec<PairItem>> {
    if params.dim == 0 || !(params.noise >= 0.0) || !params.detail_gap.is_finite() {
        return Err(Error::Config("pairrel needs dim >= 1, noise >= 0 and a finite detail gap".into()));
    }
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, params.noise).expect("valid normal");
    let d = params.dim;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let labels = CONFIGS[rng.random_range(0..CONFIGS.len())];
        let content: Vec<f64> = (0..d).map(|_| unit.sample(rng)).collect();
        let detail = unit.sample(rng);
        let (h_content, p_detail, h_detail) = match labels {
            [ENT, ENT] => (content.clone(), detail, detail),
            [ENT, NEU] => (content.clone(), detail + params.detail_gap, detail),
            [NEU, ENT] => (content.clone(), detail, detail + params.detail_gap),
            [CON, CON] => (content.iter().map(|c| -c).collect(), detail, detail),
            _ => ((0..d).map(|_| unit.sample(rng)).collect(), detail, unit.sample(rng)),
        };
        let mut p = content;
        p.push(p_detail);
        let mut h: Vec<f64> = h_content.iter().map(|c| c + noise.sample(rng)).collect();
        h.push(h_detail + noise.sample(rng));
        let fwd = [p.as_slice(), h.as_slice()].concat();
        let rev = [h.as_slice(), p.as_slice()].concat();
        out.push(PairItem { fwd, rev, labels });
    }
    Ok(out)
}

fn rel_atom(a: &Atom) -> Result<Lit> {
    let class = CLASS_NAMES
        .iter()
        .position(|&n| n == a.name)
        .ok_or_else(|| Error::Semantic(format!("unknown relation in atom {a}")))?;
    if a.args.len() != 2 {
        return Err(Error::Semantic(format!("relation atom {a} needs two arguments")));
    }
    let factor = match (index(int_arg(a, 0)?, "sentence")?, index(int_arg(a, 1)?, "sentence")?) {
        (0, 1) => FWD,
        (1, 0) => REV,
        _ => return Err(Error::Semantic(format!("atom {a} does not name the pair or its reverse"))),
    };
    Ok(Lit::new(factor, class))
}

/// The symmetry rules over a pair and its reverse:
/// contradiction is symmetric, and neither entailment nor neutrality may be
/// reversed into a contradiction.
pub fn pair_constraints() -> Vec<ConstraintSpec<()>> {
    let both = Bindings::Fixed(vec![
        vec![("x1".into(), 0), ("x2".into(), 1)],
        vec![("x1".into(), 1), ("x2".into(), 0)],
    ]);
    [
        ("con-symmetric", "con(x1, x2) => con(x2, x1)"),
        ("ent-not-reversed-con", "ent(x1, x2) => !con(x2, x1)"),
        ("neu-not-reversed-con", "neu(x1, x2) => !con(x2, x1)"),
    ]
    .into_iter()
    .map(|(name, text)| {
        let g = RuleGrounder::new(text, Domains::new(), both.clone(), rel_atom).expect("static rule");
        ConstraintSpec::symbolic(name, Arc::new(g))
    })
    .collect()
}

pub fn to_lines(items: &[PairItem]) -> String {
    items
        .iter()
        .map(|e| {
            let x: Vec<String> = e.fwd.iter().map(|v| format!("{v:.6}")).collect();
            format!(
                "{}\t{} {}\n",
                x.join(" "),
                CLASS_NAMES[e.labels[0]],
                CLASS_NAMES[e.labels[1]]
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};
    use crate::constraint::{psl_loss, ExplorationResult, Factorized, Strategy};
    use crate::softlogic::Logic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gold_labels_satisfy_rules() {
        let items = gen_pairrel(400, &PairParams::default(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let specs = pair_constraints();
        assert_eq!(specs.len(), 3);
        for it in &items {
            assert_eq!(it.fwd.len(), PairParams::default().input_dim());
            for s in &specs {
                assert!(!s.violated(&(), &it.labels).unwrap());
            }
        }
    }

    #[test]
    fn contradiction_must_be_symmetric() {
        let specs = pair_constraints();
        assert!(specs[0].violated(&(), &[CON, NEU]).unwrap());
        assert!(specs[1].violated(&(), &[CON, ENT]).unwrap());
        assert!(specs[2].violated(&(), &[NEU, CON]).unwrap());
        assert!(!specs[1].violated(&(), &[ENT, NEU]).unwrap());
    }

    #[test]
    fn reversed_entailment_soft_value() {
        // Forward entails with 0.8, reverse contradicts with 0.5.
        let mut g = Graph::new();
        let probs = g.constant(Tensor::matrix(2, 3, vec![0.8, 0.1, 0.1, 0.25, 0.5, 0.25]));
        let logp = g.log(probs);
        let fac = Factorized {
            probs,
            log_probs: logp,
            rows: vec![vec![0, 1]],
        };
        let result = ExplorationResult {
            strategy: Strategy::Exhaustive,
            candidates: vec![Vec::new()],
            enumeration: Vec::new(),
        };
        let spec = &pair_constraints()[1];
        let g_all = spec.groundings(&(), 2).unwrap();
        assert_eq!(g_all[0].to_string(), "(y0_0 => !(y1_1))");
        let loss = psl_loss(&mut g, &result, &fac, spec, &[()], Logic::default()).unwrap();
        // Forward grounding: 1 - max(0.2, 0.5) = 0.5; reverse: 1 - max(0.75, 0.9) = 0.1.
        assert!((loss.value - (0.5 + 0.1) / 2.0).abs() < 1e-12);
    }
}
