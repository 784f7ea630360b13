//! Synthetic BIO tagging with four core roles, each of which may start at
//! most once per sequence.

use std::ops::RangeInclusive;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use super::rules::{index, int_arg, Bindings, RuleGrounder};
use crate::constraint::{ConstraintSpec, Lit};
use crate::error::{Error, Result};
use crate::softlogic::{Atom, Domains};

pub const ROLES: usize = 4;
/// O plus B/I per role.
pub const TAGS: usize = 1 + 2 * ROLES;
pub const OUTSIDE: usize = 0;
/// Token ids `0..ROLES` cue a role start, `ROLES..2·ROLES` cue a continuation,
/// the rest are filler.
pub const VOCAB: usize = 20;

pub fn b_tag(role: usize) -> usize {
    1 + 2 * role
}

pub fn i_tag(role: usize) -> usize {
    2 + 2 * role
}

/// Role started by tag `t`, if it is a B tag.
pub fn role_of_b(t: usize) -> Option<usize> {
    (t != OUTSIDE && t % 2 == 1).then(|| (t - 1) / 2)
}

pub fn tag_name(t: usize) -> String {
    match t {
        OUTSIDE => "O".into(),
        t if t % 2 == 1 => format!("B{}", (t - 1) / 2),
        t => format!("I{}", (t - 2) / 2),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BioExample {
    pub tokens: Vec<usize>,
    pub tags: Vec<usize>,
}

/// Generation knobs.
#[derive(Clone, Debug, PartialEq)]
pub struct BioParams {
    pub lengths: RangeInclusive<usize>,
    /// Chance that a role or continuation token is replaced by filler.
    pub noise: f64,
    /// Chance that an outside position shows a role-start cue.
    pub decoy: f64,
}

impl Default for BioParams {
    fn default() -> Self {
        Self {
            lengths: 6..=12,
            noise: 0.15,
            decoy: 0.12,
        }
    }
}

pub fn gen_bio<R: Rng + ?Sized>(count: usize, params: &BioParams, rng: &mut R) -> Vec<BioExample> {
    (0..count).map(|_| gen_one(params, rng)).collect()
}

fn filler<R: Rng + ?Sized>(rng: &mut R) -> usize {
    rng.random_range(2 * ROLES..VOCAB)
}

fn gen_one<R: Rng + ?Sized>(p: &BioParams, rng: &mut R) -> BioExample {
    let len = rng.random_range(p.lengths.clone());
    let mut roles: Vec<usize> = (0..ROLES).collect();
    roles.shuffle(rng);
    let wanted = rng.random_range(1..=ROLES);
    // Spans of one or two positions, interleaved at random with outside positions.
    let mut items: Vec<Option<(usize, usize)>> = Vec::new();
    let mut used = 0;
    for &r in roles.iter().take(wanted) {
        let span = rng.random_range(1..=2);
        if used + span > len {
            break;
        }
        used += span;
        items.push(Some((r, span)));
    }
    items.extend(std::iter::repeat_n(None, len - used));
    items.shuffle(rng);

    let mut tokens = Vec::with_capacity(len);
    let mut tags = Vec::with_capacity(len);
    for item in items {
        match item {
            Some((r, span)) => {
                for k in 0..span {
                    let (tag, cue) = if k == 0 { (b_tag(r), r) } else { (i_tag(r), ROLES + r) };
                    tags.push(tag);
                    tokens.push(if rng.random_bool(p.noise) { filler(rng) } else { cue });
                }
            }
            None => {
                tags.push(OUTSIDE);
                tokens.push(if rng.random_bool(p.decoy) {
                    rng.random_range(0..ROLES)
                } else {
                    filler(rng)
                });
            }
        }
    }
    BioExample { tokens, tags }
}

/// `Σ_X max(count(B-X) − 1, 0) / length`: each repeated role start beyond
/// the first counts once.
pub fn bio_violation(tags: &[usize]) -> f64 {
    if tags.is_empty() {
        return 0.0;
    }
    let mut counts = [0usize; ROLES];
    for &t in tags {
        if let Some(r) = role_of_b(t) {
            counts[r] += 1;
        }
    }
    let extra: usize = counts.iter().map(|&c| c.saturating_sub(1)).sum();
    extra as f64 / tags.len() as f64
}

fn b_atom(a: &Atom) -> Result<Lit> {
    if a.name != "B" || a.args.len() != 2 {
        return Err(Error::Semantic(format!("unexpected atom {a} in the unique-role rule")));
    }
    let role = index(int_arg(a, 0)?, "role")?;
    let pos = index(int_arg(a, 1)?, "position")?;
    Ok(Lit::new(pos, b_tag(role)))
}

/// Unique role starts: for each role `x` and position `i`,
/// `B(x, i) => forall j in S\{i}: !B(x, j)`, with the graded degree above.
pub fn bio_constraint() -> ConstraintSpec<Vec<usize>> {
    let mut domains = Domains::new();
    domains.insert("R".into(), (0..ROLES as i64).collect());
    let g = RuleGrounder::new(
        "B(x, i) => forall j in S\\{i}: !B(x, j)",
        domains,
        Bindings::Product(vec![("x".into(), "R".into()), ("i".into(), "S".into())]),
        b_atom,
    )
    .expect("static rule");
    ConstraintSpec::symbolic("unique-roles", Arc::new(g))
        .with_degree(Arc::new(|_: &Vec<usize>, tags: &[usize]| Ok(bio_violation(tags))))
}

pub fn to_lines(examples: &[BioExample]) -> String {
    examples
        .iter()
        .map(|e| {
            let x: Vec<String> = e.tokens.iter().map(usize::to_string).collect();
            let y: Vec<String> = e.tags.iter().map(|&t| tag_name(t)).collect();
            format!("{}\t{}\n", x.join(" "), y.join(" "))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degree_examples() {
        assert_eq!(bio_violation(&[b_tag(0), i_tag(0), OUTSIDE, b_tag(0)]), 0.25);
        assert_eq!(bio_violation(&[b_tag(1), i_tag(1), b_tag(1), OUTSIDE]), 0.25);
        assert_eq!(bio_violation(&[b_tag(0), b_tag(1), b_tag(2), b_tag(3)]), 0.0);
    }

    #[test]
    fn gold_sequences_satisfy_constraint() {
        let data = gen_bio(300, &BioParams::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let spec = bio_constraint();
        for e in &data {
            assert_eq!(e.tokens.len(), e.tags.len());
            assert!((6..=12).contains(&e.tokens.len()));
            assert!(e.tokens.iter().all(|&t| t < VOCAB));
            assert_eq!(spec.degree(&e.tokens, &e.tags).unwrap(), 0.0);
            // The symbolic rules agree with the graded degree on gold output.
            let g = spec.groundings(&e.tokens, e.tags.len()).unwrap();
            assert_eq!(g.len(), ROLES * e.tags.len());
        }
    }

    #[test]
    fn grounding_shape() {
        let spec = bio_constraint();
        let g = spec.groundings(&vec![0, 0, 0], 3).unwrap();
        assert_eq!(g[1].to_string(), "(y1_1 => AND[!(y0_1), !(y2_1)])");
    }
}
