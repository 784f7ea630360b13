//! Invariant suite run by `conlearn selftest`: gradients against finite
//! differences, soft-logic corner soundness, projection algebra, REINFORCE
//! against exact expectations, and Hβ identities.

use std::time::Instant;

use conlearn::autodiff::check::{numeric_gradient, relative_error};
use conlearn::autodiff::{Graph, NodeId, ParamSet, Tensor};
use conlearn::constraint::{constraint_loss, ConstraintSpec, Factorized, LossType, Strategy};
use conlearn::integrators::{dot, norm, project};
use conlearn::metrics::hbeta;
use conlearn::softlogic::{eval_bool, eval_soft, Formula, Logic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one suite.
#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
    /// Runtime ceiling for the suite.
    pub budget_seconds: f64,
}

impl CheckReport {
    pub fn line(&self) -> String {
        format!(
            "{} {}: {} ({:.2}s of {:.0}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds,
            self.budget_seconds
        )
    }
}

fn timed(name: &'static str, budget_seconds: f64, f: impl FnOnce() -> (bool, String)) -> CheckReport {
    let t = Instant::now();
    let (ok, detail) = f();
    let seconds = t.elapsed().as_secs_f64();
    CheckReport {
        name,
        passed: ok && seconds < budget_seconds,
        detail,
        seconds,
        budget_seconds,
    }
}

pub fn run_all() -> Vec<CheckReport> {
    vec![
        gradient_check(),
        boundary_soundness(),
        projection_algebra(),
        reinforce_oracle(),
        hbeta_exactness(),
    ]
}

// ---------------------------------------------------------------------------
// Gradients

pub const GRAPHS_PER_CLASS: usize = 20;
pub const GRAD_TOLERANCE: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
/// Smallest operand gap accepted at a min/max node.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpClass {
    Binary,
    Unary,
    Linear,
    Softmax,
    ReduceIndex,
}

impl OpClass {
    pub const ALL: [OpClass; 5] = [
        OpClass::Binary,
        OpClass::Unary,
        OpClass::Linear,
        OpClass::Softmax,
        OpClass::ReduceIndex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpClass::Binary => "binary",
            OpClass::Unary => "unary",
            OpClass::Linear => "linear",
            OpClass::Softmax => "softmax",
            OpClass::ReduceIndex => "reduce-index",
        }
    }
}

fn random_params(seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(2..=4);
    let c = rng.random_range(2..=4);
    let mut p = ParamSet::new();
    let t = |shape: &[usize], rng: &mut ChaCha8Rng| Tensor::uniform(shape, 1.5, rng);
    p.insert("a", t(&[r, c], &mut rng)).expect("fresh name");
    p.insert("b", t(&[r, c], &mut rng)).expect("fresh name");
    p.insert("w", t(&[c, c], &mut rng)).expect("fresh name");
    p.insert("bias", t(&[c], &mut rng)).expect("fresh name");
    p
}

/// Builds a random composite graph of `class` ops ending in a scalar. The
/// structure depends only on `seed`, so the same call on perturbed
/// parameters gives the same function. Returns the loss and every
/// (lhs, rhs) pair fed to a min/max node.
fn random_graph(g: &mut Graph, params: &ParamSet, class: OpClass, seed: u64) -> (NodeId, Vec<(NodeId, NodeId)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let a = g.param(params, "a");
    let b = g.param(params, "b");
    let w = g.param(params, "w");
    let bias = g.param(params, "bias");
    let mut kinks = Vec::new();
    let mut x = a;
    let depth = rng.random_range(3..=5);
    for _ in 0..depth {
        x = match class {
            OpClass::Binary => {
                let y = g.tanh(b);
                match rng.random_range(0..6) {
                    0 => g.add(x, y),
                    1 => g.sub(x, y),
                    2 => g.mul(x, y),
                    3 => {
                        let s = g.sigmoid(b);
                        let d = g.affine(s, 1.0, 0.5);
                        g.div(x, d)
                    }
                    4 => {
                        kinks.push((x, y));
                        g.minimum(x, y)
                    }
                    _ => {
                        kinks.push((x, y));
                        g.maximum(x, y)
                    }
                }
            }
            OpClass::Unary => match rng.random_range(0..8) {
                0 => g.affine(x, rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)),
                1 => g.scale(x, rng.random_range(-2.0..2.0)),
                2 => g.neg(x),
                3 => g.one_minus(x),
                4 => g.sigmoid(x),
                5 => g.tanh(x),
                6 => {
                    let t = g.tanh(x);
                    g.exp(t)
                }
                _ => {
                    let s = g.sigmoid(x);
                    let s = g.affine(s, 1.0, 0.1);
                    g.log(s)
                }
            },
            OpClass::Linear => {
                let m = g.matmul(x, w);
                let m = g.add_row(m, bias);
                g.tanh(m)
            }
            OpClass::Softmax => {
                let z = g.mul(x, b);
                if rng.random_bool(0.5) {
                    g.softmax(z)
                } else {
                    g.log_softmax(z)
                }
            }
            OpClass::ReduceIndex => {
                let shape = g.shape(x).to_vec();
                match rng.random_range(0..4) {
                    0 => {
                        let n = rng.random_range(1..=shape[0] + 1);
                        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..shape[0])).collect();
                        g.select_rows(x, &rows)
                    }
                    1 => {
                        let t = g.tanh(x);
                        g.concat(&[x, t], rng.random_range(0..2))
                    }
                    2 => {
                        let axis = rng.random_range(0..2);
                        let len = rng.random_range(1..=shape[axis]);
                        let start = rng.random_range(0..=shape[axis] - len);
                        g.narrow(x, axis, start, len)
                    }
                    _ => {
                        let r = g.reshape(x, &[shape[1], shape[0]]);
                        g.sigmoid(r)
                    }
                }
            }
        };
    }
    let out = match class {
        OpClass::ReduceIndex => {
            let (rows, cols) = (g.shape(x)[0], g.shape(x)[1]);
            match rng.random_range(0..4) {
                0 => {
                    let n = rng.random_range(1..=rows * cols);
                    let flat: Vec<usize> = (0..n).map(|_| rng.random_range(0..rows * cols)).collect();
                    g.pick(x, &flat)
                }
                1 => {
                    let picks: Vec<usize> = (0..rows).map(|_| rng.random_range(0..cols)).collect();
                    g.pick_per_row(x, &picks)
                }
                2 => g.element(x, rng.random_range(0..rows), rng.random_range(0..cols)),
                _ => {
                    let s = g.sum(x);
                    let m = g.mean(x);
                    g.mul(s, m)
                }
            }
        }
        _ => x,
    };
    let shape = g.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = g.weighted_sum(out, Tensor::new(shape, weights).expect("matching length"));
    (loss, kinks)
}

fn clear_of_kinks(g: &Graph, kinks: &[(NodeId, NodeId)]) -> bool {
    kinks.iter().all(|&(a, b)| {
        g.value(a)
            .data()
            .iter()
            .zip(g.value(b).data())
            .all(|(x, y)| (x - y).abs() > KINK_MARGIN)
    })
}

/// Worst relative error over `GRAPHS_PER_CLASS` graphs of one class.
pub fn gradient_class(class: OpClass) -> conlearn::Result<f64> {
    let mut worst: f64 = 0.0;
    let mut accepted = 0;
    let mut seed = class as u64 * 1_000_003;
    while accepted < GRAPHS_PER_CLASS {
        seed += 1;
        let params = random_params(seed);
        let mut g = Graph::new();
        let (loss, kinks) = random_graph(&mut g, &params, class, seed);
        if !clear_of_kinks(&g, &kinks) {
            continue;
        }
        let analytic = g.backward(loss, &params)?;
        let numeric = numeric_gradient(&params, FD_STEP, |p| {
            let mut g = Graph::new();
            let (l, _) = random_graph(&mut g, p, class, seed);
            g.item(l)
        })?;
        worst = worst.max(relative_error(&analytic.flatten(), &numeric.flatten(), 1e-8));
        accepted += 1;
    }
    Ok(worst)
}

pub fn gradient_check() -> CheckReport {
    timed("gradient check", 10.0, || {
        let mut ok = true;
        let mut parts = Vec::new();
        for class in OpClass::ALL {
            match gradient_class(class) {
                Ok(e) => {
                    ok &= e < GRAD_TOLERANCE;
                    parts.push(format!("{} {e:.1e}", class.name()));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("{} error {e}", class.name()));
                }
            }
        }
        (ok, format!("{GRAPHS_PER_CLASS} graphs per class, worst rel err: {}", parts.join(", ")))
    })
}

// ---------------------------------------------------------------------------
// Soft logic at the corners

#[derive(Clone, Debug)]
enum Shape {
    Leaf,
    Node(Box<Shape>, Box<Shape>),
}

fn shapes(internal: usize) -> Vec<Shape> {
    if internal == 0 {
        return vec![Shape::Leaf];
    }
    let mut out = Vec::new();
    for left in 0..internal {
        for l in shapes(left) {
            for r in shapes(internal - 1 - left) {
                out.push(Shape::Node(Box::new(l.clone()), Box::new(r)));
            }
        }
    }
    out
}

/// Atom labelings of `n` leaves up to renaming (restricted growth strings),
/// with at most `max_atoms` distinct atoms.
fn labelings(n: usize, max_atoms: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..n {
        let mut next = Vec::new();
        for l in &out {
            let used = l.iter().copied().max().map_or(0, |m| m + 1);
            for a in 0..=used.min(max_atoms - 1) {
                let mut v = l.clone();
                v.push(a);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

struct Fill<'a> {
    atoms: &'a [usize],
    leaf_neg: u32,
    node_neg: u32,
    ops: &'a [u8],
    leaf: usize,
    node: usize,
}

impl Fill<'_> {
    fn build(&mut self, s: &Shape) -> Formula<usize> {
        match s {
            Shape::Leaf => {
                let i = self.leaf;
                self.leaf += 1;
                let f = Formula::atom(self.atoms[i]);
                if self.leaf_neg >> i & 1 == 1 {
                    Formula::not(f)
                } else {
                    f
                }
            }
            Shape::Node(l, r) => {
                let i = self.node;
                self.node += 1;
                let a = self.build(l);
                let b = self.build(r);
                let f = match self.ops[i] {
                    0 => Formula::and(a, b),
                    1 => Formula::or(a, b),
                    _ => Formula::implies(a, b),
                };
                if self.node_neg >> i & 1 == 1 {
                    Formula::not(f)
                } else {
                    f
                }
            }
        }
    }
}

/// Every formula with up to three binary connectives over up to four
/// atoms, with optional negation on every leaf and connective. Atom names
/// are canonical up to renaming.
pub fn small_formulas() -> Vec<(Formula<usize>, usize)> {
    let mut out = Vec::new();
    for internal in 0..=3 {
        let leaves = internal + 1;
        for shape in shapes(internal) {
            for atoms in labelings(leaves, 4) {
                let distinct = atoms.iter().copied().max().unwrap_or(0) + 1;
                for code in 0..3usize.pow(internal as u32) {
                    let ops: Vec<u8> = (0..internal).map(|i| (code / 3usize.pow(i as u32) % 3) as u8).collect();
                    for leaf_neg in 0..1u32 << leaves {
                        for node_neg in 0..1u32 << internal {
                            let f = Fill {
                                atoms: &atoms,
                                leaf_neg,
                                node_neg,
                                ops: &ops,
                                leaf: 0,
                                node: 0,
                            }
                            .build(&shape);
                            out.push((f, distinct));
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn boundary_soundness() -> CheckReport {
    timed("boundary soundness", 5.0, || {
        let formulas = small_formulas();
        let mut checked = 0u64;
        let mut bad = None;
        'outer: for (f, n) in &formulas {
            for mask in 0..1u32 << n {
                let b = |a: &usize| Some(mask >> a & 1 == 1);
                let s = |a: &usize| Some(if mask >> a & 1 == 1 { 1.0 } else { 0.0 });
                let truth = match eval_bool(f, &b) {
                    Ok(t) => t,
                    Err(e) => {
                        bad = Some(format!("{f}: {e}"));
                        break 'outer;
                    }
                };
                let want = if truth { 1.0 } else { 0.0 };
                for logic in Logic::ALL {
                    checked += 1;
                    match eval_soft(f, &s, logic) {
                        Ok(v) if v == want => {}
                        other => {
                            bad = Some(format!("{f} under {logic} at mask {mask:b}: {other:?}, want {want}"));
                            break 'outer;
                        }
                    }
                }
            }
        }
        match bad {
            None => (
                true,
                format!("{} formulas, {checked} corner evaluations over 3 t-norms x 2 implications", formulas.len()),
            ),
            Some(msg) => (false, msg),
        }
    })
}

// ---------------------------------------------------------------------------
// Projection

pub const PROJECTION_PAIRS: usize = 1000;

pub fn projection_algebra() -> CheckReport {
    timed("projection algebra", 5.0, || {
        let mut problems = Vec::new();
        match project(&[1.0, 0.0], &[-1.0, 1.0]) {
            Ok(p) if (p.vector[0] - 0.5).abs() < 1e-12 && (p.vector[1] - 0.5).abs() < 1e-12 && p.fired => {}
            other => problems.push(format!("hand example gave {other:?}")),
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let (mut worst_orth, mut worst_idem, mut worst_growth) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
        for _ in 0..PROJECTION_PAIRS {
            let d = rng.random_range(2..=40);
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut r: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            if dot(&v, &r) > 0.0 {
                r.iter_mut().for_each(|x| *x = -*x);
            }
            let Ok(p) = project(&v, &r) else {
                problems.push("projection errored".into());
                break;
            };
            worst_orth = worst_orth.max(dot(&p.vector, &r).abs() / (norm(&v) * norm(&r)));
            worst_growth = worst_growth.max(norm(&p.vector) - norm(&v));
            let Ok(again) = project(&p.vector, &r) else {
                problems.push("projection errored".into());
                break;
            };
            let moved: f64 = again
                .vector
                .iter()
                .zip(&p.vector)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst_idem = worst_idem.max(moved);
        }
        if worst_orth >= 1e-9 {
            problems.push(format!("orthogonality residual {worst_orth:.1e}"));
        }
        if worst_idem > 1e-12 {
            problems.push(format!("second projection moved by {worst_idem:.1e}"));
        }
        if worst_growth > 1e-12 {
            problems.push(format!("norm grew by {worst_growth:.1e}"));
        }
        if problems.is_empty() {
            (
                true,
                format!(
                    "(1,0) vs (-1,1) -> (0.5,0.5); {PROJECTION_PAIRS} pairs: residual {worst_orth:.1e}, idempotence {worst_idem:.1e}"
                ),
            )
        } else {
            (false, problems.join("; "))
        }
    })
}

// ---------------------------------------------------------------------------
// REINFORCE against the exact expectation

pub const REINFORCE_DRAWS: usize = 10_000;
pub const REINFORCE_TOLERANCE: f64 = 0.05;
const DRAWS_PER_GRAPH: usize = 10;
const TOY_LOGITS: [f64; 3] = [0.2, -0.3, 0.4];

/// Per-class violation degree of the toy problem for a loss type: class 2
/// violates; under the real loss class 1 is a partial violation.
pub fn toy_degrees(kind: LossType) -> [f64; 3] {
    match kind {
        LossType::Real => [0.0, 0.4, 1.0],
        _ => [0.0, 0.0, 1.0],
    }
}

/// `∂/∂θ Σ_y p(y)·r(y)` for `p = softmax(θ)`, in closed form:
/// `p_j (r_j − Σ_y p_y r_y)`.
pub fn exact_expected_gradient(logits: &[f64], rewards: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|x| x / s).collect();
    let mean: f64 = p.iter().zip(rewards).map(|(a, b)| a * b).sum();
    p.iter().zip(rewards).map(|(pj, rj)| pj * (rj - mean)).collect()
}

/// Mean sampled REINFORCE gradient over `draws` draws, through the library
/// loss, plus the exact gradient it should match.
pub fn reinforce_estimate(kind: LossType, draws: usize, seed: u64) -> conlearn::Result<(Vec<f64>, Vec<f64>)> {
    let degrees = toy_degrees(kind);
    let spec: ConstraintSpec<()> = ConstraintSpec::programmatic(
        "toy",
        std::sync::Arc::new(move |_: &(), out: &[usize]| Ok(degrees[out[0]])),
    );
    let mut params = ParamSet::new();
    params.insert("theta", Tensor::matrix(1, 3, TOY_LOGITS.to_vec()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let graphs = draws / DRAWS_PER_GRAPH;
    let mut acc = vec![0.0; 3];
    for _ in 0..graphs {
        let mut g = Graph::new();
        let z = g.param(&params, "theta");
        let ctx = Factorized {
            probs: g.softmax(z),
            log_probs: g.log_softmax(z),
            rows: vec![vec![0]],
        };
        let loss = constraint_loss(
            &mut g,
            &ctx,
            std::slice::from_ref(&spec),
            &[()],
            kind,
            Strategy::Sampling(DRAWS_PER_GRAPH),
            Logic::default(),
            &mut rng,
        )?;
        let grads = g.backward(loss.node, &params)?;
        for (a, x) in acc.iter_mut().zip(grads.flatten()) {
            *a += x;
        }
    }
    let est = acc.iter().map(|a| a / graphs as f64).collect();
    let rewards: Vec<f64> = match kind {
        LossType::Binary => degrees.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect(),
        _ => degrees.to_vec(),
    };
    Ok((est, exact_expected_gradient(&TOY_LOGITS, &rewards)))
}

pub fn reinforce_oracle() -> CheckReport {
    timed("reinforce vs exhaustive", 30.0, || {
        let mut ok = true;
        let mut parts = Vec::new();
        for (kind, seed) in [(LossType::Binary, 11), (LossType::Real, 12)] {
            match reinforce_estimate(kind, REINFORCE_DRAWS, seed) {
                Ok((est, exact)) => {
                    let e = relative_error(&est, &exact, 1e-12);
                    ok &= e < REINFORCE_TOLERANCE;
                    parts.push(format!("{kind} rel err {e:.4}"));
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("{kind} error {e}"));
                }
            }
        }
        (ok, format!("{REINFORCE_DRAWS} draws: {}", parts.join(", ")))
    })
}

// ---------------------------------------------------------------------------
// Hβ

pub const HBETA_TRIPLES: usize = 1000;

pub fn hbeta_exactness() -> CheckReport {
    timed("hbeta exactness", 5.0, || {
        let mut problems = Vec::new();
        match hbeta(0.8, 0.4, 1.0) {
            Ok(v) if (v - 8.0 / 15.0).abs() < 1e-12 => {}
            other => problems.push(format!("hbeta(0.8, 0.4, 1) = {other:?}")),
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xbe7a);
        let mut worst_sym: f64 = 0.0;
        let mut worst_eq: f64 = 0.0;
        for _ in 0..HBETA_TRIPLES {
            let m1 = rng.random_range(0.01..=1.0);
            let m2 = rng.random_range(0.01..=1.0);
            let beta: f64 = rng.random_range(0.05..20.0);
            match (hbeta(m1, m2, beta), hbeta(m2, m1, 1.0 / beta), hbeta(m1, m1, beta)) {
                (Ok(a), Ok(b), Ok(c)) => {
                    worst_sym = worst_sym.max((a - b).abs() / a.abs().max(1e-300));
                    worst_eq = worst_eq.max((c - m1).abs());
                }
                other => {
                    problems.push(format!("error {other:?}"));
                    break;
                }
            }
        }
        if worst_sym >= 1e-12 {
            problems.push(format!("symmetry off by {worst_sym:.1e}"));
        }
        if worst_eq >= 1e-12 {
            problems.push(format!("equal-argument identity off by {worst_eq:.1e}"));
        }
        if problems.is_empty() {
            (
                true,
                format!("hbeta(0.8,0.4,1)=8/15; {HBETA_TRIPLES} triples: symmetry {worst_sym:.1e}, identity {worst_eq:.1e}"),
            )
        } else {
            (false, problems.join("; "))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_enumeration_counts() {
        assert_eq!(shapes(3).len(), 5);
        assert_eq!(labelings(4, 4).len(), 15);
        assert_eq!(labelings(3, 2).len(), 4);
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let r = [0.0, 0.4, 1.0];
        let f = |z: &[f64]| {
            let s: f64 = z.iter().map(|x| x.exp()).sum();
            z.iter().zip(&r).map(|(x, r)| x.exp() / s * r).sum::<f64>()
        };
        let exact = exact_expected_gradient(&TOY_LOGITS, &r);
        for j in 0..3 {
            let mut up = TOY_LOGITS;
            let mut dn = TOY_LOGITS;
            up[j] += 1e-6;
            dn[j] -= 1e-6;
            let fd = (f(&up) - f(&dn)) / 2e-6;
            assert!((fd - exact[j]).abs() < 1e-8);
        }
    }
}
