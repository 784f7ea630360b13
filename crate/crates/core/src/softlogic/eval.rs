use std::fmt;
use std::str::FromStr;

use super::formula::Formula;
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{contract, Error, Result};

/// Family of t-norm / t-conorm pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum TNorm {
    Product,
    #[default]
    Goedel,
    Lukasiewicz,
}

/// How `a => b` is relaxed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Implication {
    /// The residuum of the chosen t-norm.
    Residuated,
    /// `max(1 - a, b)` regardless of t-norm.
    #[default]
    SImplication,
}

/// Soft-logic configuration. The default is Gödel connectives with S-implication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Logic {
    pub tnorm: TNorm,
    pub implication: Implication,
}

impl Logic {
    pub const ALL: [Logic; 6] = [
        Logic::new(TNorm::Product, Implication::Residuated),
        Logic::new(TNorm::Product, Implication::SImplication),
        Logic::new(TNorm::Goedel, Implication::Residuated),
        Logic::new(TNorm::Goedel, Implication::SImplication),
        Logic::new(TNorm::Lukasiewicz, Implication::Residuated),
        Logic::new(TNorm::Lukasiewicz, Implication::SImplication),
    ];

    pub const fn new(tnorm: TNorm, implication: Implication) -> Self {
        Self { tnorm, implication }
    }

    pub fn and(self, a: f64, b: f64) -> f64 {
        match self.tnorm {
            TNorm::Product => a * b,
            TNorm::Goedel => a.min(b),
            TNorm::Lukasiewicz => (a + b - 1.0).max(0.0),
        }
    }

    pub fn or(self, a: f64, b: f64) -> f64 {
        match self.tnorm {
            TNorm::Product => a + b - a * b,
            TNorm::Goedel => a.max(b),
            TNorm::Lukasiewicz => (a + b).min(1.0),
        }
    }

    pub fn implies(self, a: f64, b: f64) -> f64 {
        match (self.implication, self.tnorm) {
            (Implication::SImplication, _) => (1.0 - a).max(b),
            (Implication::Residuated, TNorm::Product) => {
                if a <= b {
                    1.0
                } else {
                    b / a
                }
            }
            (Implication::Residuated, TNorm::Goedel) => {
                if a <= b {
                    1.0
                } else {
                    b
                }
            }
            (Implication::Residuated, TNorm::Lukasiewicz) => (1.0 - a + b).min(1.0),
        }
    }
}

impl fmt::Display for Logic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.tnorm {
            TNorm::Product => "product",
            TNorm::Goedel => "goedel",
            TNorm::Lukasiewicz => "lukasiewicz",
        };
        match self.implication {
            Implication::SImplication => write!(f, "{t}"),
            Implication::Residuated => write!(f, "{t}-residuated"),
        }
    }
}

impl FromStr for Logic {
    type Err = Error;

    /// Accepts `goedel`, `product`, `lukasiewicz`, optionally suffixed with
    /// `-residuated` (default implication is the S-implication).
    fn from_str(s: &str) -> Result<Self> {
        let (name, implication) = match s.strip_suffix("-residuated") {
            Some(n) => (n, Implication::Residuated),
            None => (s, Implication::SImplication),
        };
        let tnorm = match name {
            "product" => TNorm::Product,
            "goedel" | "godel" | "gödel" => TNorm::Goedel,
            "lukasiewicz" | "łukasiewicz" => TNorm::Lukasiewicz,
            _ => return Err(Error::Config(format!("unknown logic {s:?}"))),
        };
        Ok(Logic::new(tnorm, implication))
    }
}

/// Classical truth value; `lookup` returns `None` for unassigned atoms.
pub fn eval_bool<A: fmt::Debug>(f: &Formula<A>, lookup: &impl Fn(&A) -> Option<bool>) -> Result<bool> {
    Ok(match f {
        Formula::Atom(a) => lookup(a).ok_or_else(|| Error::Contract(format!("atom {a:?} is unassigned")))?,
        Formula::Not(x) => !eval_bool(x, lookup)?,
        Formula::And(a, b) => eval_bool(a, lookup)? & eval_bool(b, lookup)?,
        Formula::Or(a, b) => eval_bool(a, lookup)? | eval_bool(b, lookup)?,
        Formula::Implies(a, b) => !eval_bool(a, lookup)? | eval_bool(b, lookup)?,
        Formula::BigAnd(xs) => {
            let mut v = true;
            for x in xs {
                v &= eval_bool(x, lookup)?;
            }
            v
        }
        Formula::BigOr(xs) => {
            let mut v = false;
            for x in xs {
                v |= eval_bool(x, lookup)?;
            }
            v
        }
    })
}

/// Soft truth value in `[0, 1]`.
pub fn eval_soft<A: fmt::Debug>(f: &Formula<A>, lookup: &impl Fn(&A) -> Option<f64>, logic: Logic) -> Result<f64> {
    Ok(match f {
        Formula::Atom(a) => {
            let v = lookup(a).ok_or_else(|| Error::Contract(format!("atom {a:?} is unassigned")))?;
            if !(0.0..=1.0).contains(&v) {
                return contract(format!("atom {a:?} has value {v} outside [0, 1]"));
            }
            v
        }
        Formula::Not(x) => 1.0 - eval_soft(x, lookup, logic)?,
        Formula::And(a, b) => logic.and(eval_soft(a, lookup, logic)?, eval_soft(b, lookup, logic)?),
        Formula::Or(a, b) => logic.or(eval_soft(a, lookup, logic)?, eval_soft(b, lookup, logic)?),
        Formula::Implies(a, b) => logic.implies(eval_soft(a, lookup, logic)?, eval_soft(b, lookup, logic)?),
        Formula::BigAnd(xs) => fold(xs, lookup, logic, 1.0, Logic::and)?,
        Formula::BigOr(xs) => fold(xs, lookup, logic, 0.0, Logic::or)?,
    })
}

fn fold<A: fmt::Debug>(
    xs: &[Formula<A>],
    lookup: &impl Fn(&A) -> Option<f64>,
    logic: Logic,
    empty: f64,
    op: fn(Logic, f64, f64) -> f64,
) -> Result<f64> {
    let Some((first, rest)) = xs.split_first() else {
        return Ok(empty);
    };
    let mut acc = eval_soft(first, lookup, logic)?;
    for x in rest {
        acc = op(logic, acc, eval_soft(x, lookup, logic)?);
    }
    Ok(acc)
}

/// Soft evaluation on graph nodes.
///
/// Atoms are slot indices into `leaves`; all leaves share one shape and the
/// formula is evaluated elementwise, so a batch of structurally identical
/// groundings is evaluated in a single pass.
pub fn eval_soft_graph(g: &mut Graph, f: &Formula<usize>, leaves: &[NodeId], logic: Logic) -> NodeId {
    let shape = g.shape(leaves[0]).to_vec();
    let mut ev = GraphEval {
        g,
        shape,
        logic,
        ones: None,
        zeros: None,
    };
    ev.eval(f, leaves)
}

struct GraphEval<'g> {
    g: &'g mut Graph,
    shape: Vec<usize>,
    logic: Logic,
    ones: Option<NodeId>,
    zeros: Option<NodeId>,
}

impl GraphEval<'_> {
    fn ones(&mut self) -> NodeId {
        let shape = self.shape.clone();
        *self.ones.get_or_insert_with(|| self.g.constant(Tensor::full(&shape, 1.0)))
    }

    fn zeros(&mut self) -> NodeId {
        let shape = self.shape.clone();
        *self.zeros.get_or_insert_with(|| self.g.constant(Tensor::zeros(&shape)))
    }

    fn eval(&mut self, f: &Formula<usize>, leaves: &[NodeId]) -> NodeId {
        match f {
            Formula::Atom(slot) => leaves[*slot],
            Formula::Not(x) => {
                let v = self.eval(x, leaves);
                self.g.one_minus(v)
            }
            Formula::And(a, b) => {
                let (a, b) = (self.eval(a, leaves), self.eval(b, leaves));
                self.and(a, b)
            }
            Formula::Or(a, b) => {
                let (a, b) = (self.eval(a, leaves), self.eval(b, leaves));
                self.or(a, b)
            }
            Formula::Implies(a, b) => {
                let (a, b) = (self.eval(a, leaves), self.eval(b, leaves));
                self.implies(a, b)
            }
            Formula::BigAnd(xs) => self.fold(xs, leaves, true),
            Formula::BigOr(xs) => self.fold(xs, leaves, false),
        }
    }

    fn fold(&mut self, xs: &[Formula<usize>], leaves: &[NodeId], conj: bool) -> NodeId {
        let Some((first, rest)) = xs.split_first() else {
            return if conj { self.ones() } else { self.zeros() };
        };
        let mut acc = self.eval(first, leaves);
        for x in rest {
            let v = self.eval(x, leaves);
            acc = if conj { self.and(acc, v) } else { self.or(acc, v) };
        }
        acc
    }

    fn and(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match self.logic.tnorm {
            TNorm::Product => self.g.mul(a, b),
            TNorm::Goedel => self.g.minimum(a, b),
            TNorm::Lukasiewicz => {
                let s = self.g.add(a, b);
                let s = self.g.affine(s, 1.0, -1.0);
                let z = self.zeros();
                self.g.maximum(s, z)
            }
        }
    }

    fn or(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match self.logic.tnorm {
            TNorm::Product => {
                let s = self.g.add(a, b);
                let p = self.g.mul(a, b);
                self.g.sub(s, p)
            }
            TNorm::Goedel => self.g.maximum(a, b),
            TNorm::Lukasiewicz => {
                let s = self.g.add(a, b);
                let o = self.ones();
                self.g.minimum(s, o)
            }
        }
    }

    fn implies(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.logic.implication, self.logic.tnorm) {
            (Implication::SImplication, _) => {
                let na = self.g.one_minus(a);
                self.g.maximum(na, b)
            }
            (Implication::Residuated, TNorm::Lukasiewicz) => {
                let na = self.g.one_minus(a);
                let s = self.g.add(na, b);
                let o = self.ones();
                self.g.minimum(s, o)
            }
            (Implication::Residuated, tnorm) => {
                // 1 where a <= b, otherwise b / a (Product) or b (Gödel).
                let holds: Vec<f64> = self
                    .g
                    .value(a)
                    .data()
                    .iter()
                    .zip(self.g.value(b).data())
                    .map(|(x, y)| if x <= y { 1.0 } else { 0.0 })
                    .collect();
                let rest: Vec<f64> = holds.iter().map(|h| 1.0 - h).collect();
                let otherwise = if tnorm == TNorm::Product {
                    // The floor only keeps masked-out entries finite; where this branch is
                    // selected a > b >= 0.
                    let floor = self.g.constant(Tensor::full(&self.shape, 1e-12));
                    let safe = self.g.maximum(a, floor);
                    self.g.div(b, safe)
                } else {
                    b
                };
                let rest = self.g.constant(Tensor::raw(self.shape.clone(), rest));
                let gated = self.g.mul(rest, otherwise);
                let holds = self.g.constant(Tensor::raw(self.shape.clone(), holds));
                self.g.add(holds, gated)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::softlogic::{parse_formula, Atom};
    use std::collections::HashMap;

    fn soft(f: &Formula<Atom>, vals: &[(&str, f64)], logic: Logic) -> f64 {
        let m: HashMap<String, f64> = vals.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        eval_soft(f, &|a: &Atom| m.get(&a.to_string()).copied(), logic).unwrap()
    }

    #[test]
    fn lukasiewicz_implication() {
        let f = parse_formula("a => b").unwrap();
        let l = Logic::new(TNorm::Lukasiewicz, Implication::Residuated);
        assert!((soft(&f, &[("a", 0.9), ("b", 0.6)], l) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn t_norm_rows() {
        let f = parse_formula("a & b").unwrap();
        let vals = [("a", 0.3), ("b", 0.8)];
        assert_eq!(soft(&f, &vals, Logic::new(TNorm::Goedel, Implication::SImplication)), 0.3);
        assert!((soft(&f, &vals, Logic::new(TNorm::Product, Implication::SImplication)) - 0.24).abs() < 1e-15);
    }

    #[test]
    fn s_implication_default() {
        let f = parse_formula("a => b").unwrap();
        assert_eq!(soft(&f, &[("a", 0.8), ("b", 0.5)], Logic::default()), 0.5);
        assert!((soft(&f, &[("a", 0.8), ("b", 0.1)], Logic::default()) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn hierarchy_rule_violation() {
        let f = parse_formula("pred_scifi => pred_fiction").unwrap();
        let m = [("pred_scifi", true), ("pred_fiction", false)];
        let v = eval_bool(&f, &|a: &Atom| m.iter().find(|(k, _)| *k == a.name).map(|(_, v)| *v)).unwrap();
        assert!(!v);
    }

    #[test]
    fn missing_atom_and_out_of_range() {
        let f = parse_formula("a & b").unwrap();
        assert!(eval_bool(&f, &|a: &Atom| (a.name == "a").then_some(true)).is_err());
        assert!(eval_soft(&f, &|_: &Atom| Some(1.5), Logic::default()).is_err());
    }

    #[test]
    fn logic_names_round_trip() {
        for l in Logic::ALL {
            assert_eq!(l.to_string().parse::<Logic>().unwrap(), l);
        }
        assert!("fuzzy".parse::<Logic>().is_err());
    }

    #[test]
    fn graph_matches_scalar_evaluation() {
        let f = parse_formula("(a => b | !c) & OR[a, c] & AND[b]").unwrap();
        let (shape, atoms) = f.slots();
        let vals = [("a", 0.7), ("b", 0.35), ("c", 0.2)];
        for logic in Logic::ALL {
            let mut g = Graph::new();
            let leaves: Vec<NodeId> = atoms
                .iter()
                .map(|a| {
                    let v = vals.iter().find(|(k, _)| *k == a.name).unwrap().1;
                    g.scalar(v)
                })
                .collect();
            let out = eval_soft_graph(&mut g, &shape, &leaves, logic);
            assert!((g.item(out) - soft(&f, &vals, logic)).abs() < 1e-12, "{logic}");
        }
    }
}
