//! Task metrics, constraint violation rate, and the H-beta score.

use crate::constraint::ConstraintSpec;
use crate::error::{contract, Result};

/// Weighted harmonic combination of a task metric `m1` and a constraint
/// satisfaction rate `m2`: `(1+β²)·m1·m2 / (m2 + β²·m1)`, 0 when either is 0.
pub fn hbeta(m1: f64, m2: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return contract(format!("beta must be positive, got {beta}"));
    }
    for (name, v) in [("m1", m1), ("m2", m2)] {
        if !(0.0..=1.0).contains(&v) {
            return contract(format!("{name} = {v} is outside [0, 1]"));
        }
    }
    if m1 * m2 == 0.0 {
        return Ok(0.0);
    }
    let b2 = beta * beta;
    Ok((1.0 + b2) * m1 * m2 / (m2 + b2 * m1))
}

/// Fraction of outputs violating at least one of `specs`.
pub fn violation_rate<I>(specs: &[ConstraintSpec<I>], inputs: &[I], outputs: &[Vec<usize>]) -> Result<f64> {
    if inputs.is_empty() {
        return contract("violation rate of an empty dataset");
    }
    if inputs.len() != outputs.len() {
        return contract(format!("{} inputs but {} outputs", inputs.len(), outputs.len()));
    }
    let mut violated = 0usize;
    for (x, y) in inputs.iter().zip(outputs) {
        let mut any = false;
        for s in specs {
            if s.violated(x, y)? {
                any = true;
                break;
            }
        }
        violated += usize::from(any);
    }
    Ok(violated as f64 / inputs.len() as f64)
}

/// Share of examples whose prediction equals the gold output exactly.
pub fn accuracy<T: PartialEq>(predictions: &[T], golds: &[T]) -> Result<f64> {
    check_lengths(predictions.len(), golds.len())?;
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Position-aligned token accuracy over a corpus: positions up to the shorter
/// length are compared, and every position beyond it counts as wrong.
pub fn token_accuracy<T: PartialEq>(predictions: &[Vec<T>], golds: &[Vec<T>]) -> Result<f64> {
    check_lengths(predictions.len(), golds.len())?;
    let (mut correct, mut total) = (0usize, 0usize);
    for (p, g) in predictions.iter().zip(golds) {
        correct += p.iter().zip(g).filter(|(a, b)| a == b).count();
        total += p.len().max(g.len());
    }
    Ok(if total == 0 { 1.0 } else { correct as f64 / total as f64 })
}

/// Token-level micro-F1 over tags other than `outside`. When neither side
/// has any non-`outside` tag the score is 1.
pub fn tag_f1(predictions: &[Vec<usize>], golds: &[Vec<usize>], outside: usize) -> Result<f64> {
    check_lengths(predictions.len(), golds.len())?;
    let (mut tp, mut pred_pos, mut gold_pos) = (0usize, 0usize, 0usize);
    for (p, g) in predictions.iter().zip(golds) {
        check_lengths(p.len(), g.len())?;
        for (&a, &b) in p.iter().zip(g) {
            pred_pos += usize::from(a != outside);
            gold_pos += usize::from(b != outside);
            tp += usize::from(a != outside && a == b);
        }
    }
    if pred_pos == 0 && gold_pos == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (pred_pos + gold_pos) as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return contract(format!("{a} predictions for {b} gold outputs"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn hbeta_values() {
        assert!((hbeta(0.8, 0.4, 1.0).unwrap() - 0.32 * 2.0 / 1.2).abs() < 1e-12);
        assert!((hbeta(0.8, 0.4, 0.01).unwrap() - 0.8).abs() < 1e-3);
        assert_eq!(hbeta(0.0, 0.7, 2.0).unwrap(), 0.0);
        assert!(hbeta(0.5, 0.5, 0.0).is_err());
        assert!(hbeta(1.2, 0.5, 1.0).is_err());
    }

    #[test]
    fn token_accuracy_alignment() {
        let p = vec!["zab".chars().collect::<Vec<_>>()];
        let g = vec!["zabbb".chars().collect::<Vec<_>>()];
        assert!((token_accuracy(&p, &g).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(token_accuracy(&g, &g).unwrap(), 1.0);
    }

    #[test]
    fn f1_cases() {
        let gold = vec![vec![1, 2, 0, 3]];
        assert_eq!(tag_f1(&gold, &gold, 0).unwrap(), 1.0);
        assert_eq!(tag_f1(&[vec![0, 0, 0, 0]], &gold, 0).unwrap(), 0.0);
        assert_eq!(tag_f1(&[vec![0, 0]], &[vec![0, 0]], 0).unwrap(), 1.0);
        assert!(tag_f1(&[vec![0]], &gold, 0).is_err());
    }

    #[test]
    fn violation_rate_counts() {
        let spec: ConstraintSpec<()> = ConstraintSpec::programmatic(
            "odd",
            Arc::new(|_: &(), y: &[usize]| Ok(if y[0] % 2 == 1 { 1.0 } else { 0.0 })),
        );
        let inputs = vec![(); 10];
        let mut outs: Vec<Vec<usize>> = (0..10).map(|_| vec![0]).collect();
        outs[3] = vec![1];
        outs[7] = vec![5];
        assert!((violation_rate(&[spec.clone()], &inputs, &outs).unwrap() - 0.2).abs() < 1e-15);
        outs.reverse();
        assert!((violation_rate(&[spec.clone()], &inputs, &outs).unwrap() - 0.2).abs() < 1e-15);
        assert!(violation_rate(&[spec], &[], &[]).is_err());
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]).unwrap(), 0.5);
        assert!(accuracy(&[1], &[1, 2]).is_err());
    }
}
