use crate::constraint::{Grounder, Lit};
use crate::error::{Error, Result};
use crate::softlogic::{parse_template, Atom, Domains, Formula, Template};

/// How a rule template's free variables are instantiated.
#[derive(Clone, Debug)]
pub enum Bindings {
    /// One grounding per listed assignment.
    Fixed(Vec<Vec<(String, i64)>>),
    /// One grounding per element of the product of the named domains.
    Product(Vec<(String, String)>),
}

/// Grounds a textual rule template over an example.
///
/// The domain `S` is always rebound to the example's positions `0..n`;
/// other domains are fixed at construction.
#[derive(Clone, Debug)]
pub struct RuleGrounder {
    template: Template,
    domains: Domains,
    bindings: Bindings,
    atom: fn(&Atom) -> Result<Lit>,
}

/// Name of the per-example position domain.
pub const POSITIONS: &str = "S";

impl RuleGrounder {
    pub fn new(text: &str, domains: Domains, bindings: Bindings, atom: fn(&Atom) -> Result<Lit>) -> Result<Self> {
        let mut all = domains.clone();
        all.entry(POSITIONS.to_string()).or_default();
        let template = parse_template(text, &all)?;
        Ok(Self {
            template,
            domains,
            bindings,
            atom,
        })
    }

    fn bind_atoms(&self, f: &Formula<Atom>) -> Result<Formula<Lit>> {
        let mut err = None;
        let out = f.map_atoms(&mut |a| match (self.atom)(a) {
            Ok(l) => l,
            Err(e) => {
                err.get_or_insert(e);
                Lit::new(0, 0)
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

impl<I> Grounder<I> for RuleGrounder {
    fn ground(&self, _input: &I, n_factors: usize) -> Result<Vec<Formula<Lit>>> {
        let mut domains = self.domains.clone();
        domains.insert(POSITIONS.to_string(), (0..n_factors as i64).collect());
        let assignments: Vec<Vec<(String, i64)>> = match &self.bindings {
            Bindings::Fixed(list) => list.clone(),
            Bindings::Product(vars) => {
                let mut acc: Vec<Vec<(String, i64)>> = vec![Vec::new()];
                for (var, dom) in vars {
                    let values = domains
                        .get(dom)
                        .ok_or_else(|| Error::Semantic(format!("unknown index domain {dom:?}")))?;
                    acc = acc
                        .into_iter()
                        .flat_map(|prefix| {
                            values.iter().map(move |&v| {
                                let mut next = prefix.clone();
                                next.push((var.clone(), v));
                                next
                            })
                        })
                        .collect();
                }
                acc
            }
        };
        assignments
            .iter()
            .map(|a| {
                let refs: Vec<(&str, i64)> = a.iter().map(|(k, v)| (k.as_str(), *v)).collect();
                let f = self.template.ground(&domains, &refs)?;
                self.bind_atoms(&f)
            })
            .collect()
    }
}

/// Reads an integer argument of an atom.
pub(crate) fn int_arg(a: &Atom, i: usize) -> Result<i64> {
    match a.args.get(i) {
        Some(crate::softlogic::Arg::Int(v)) => Ok(*v),
        _ => Err(Error::Semantic(format!("atom {a} needs an integer argument at position {i}"))),
    }
}

pub(crate) fn index(v: i64, what: &str) -> Result<usize> {
    usize::try_from(v).map_err(|_| Error::Semantic(format!("negative {what} index {v}")))
}
