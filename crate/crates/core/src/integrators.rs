//! Rules for merging the supervised gradient and the constraint gradient
//! into one update direction.

use std::fmt;
use std::str::FromStr;

use crate::error::{contract, Error, Result};

/// Reference vectors with a squared norm below this are treated as zero.
pub const REF_NORM_FLOOR: f64 = 1e-12;

/// Default step size for the monotone weight.
pub const DEFAULT_LAMBDA_LR: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mechanism {
    /// Fixed weights `λ_sup · g_sup + λ_con · g_con`.
    Static { lambda_sup: f64, lambda_con: f64 },
    /// `g_sup + λ · g_con`, with `λ` starting at 0 and growing by
    /// `lr · violation` after every step.
    Monotone { lr: f64 },
    /// Project `g_con` off the running supervised reference when they conflict.
    ProjSup,
    /// Project `g_sup` off the running constraint reference when they conflict.
    ProjCon,
    /// Both projections.
    ProjBoth,
}

impl Mechanism {
    pub fn label(&self) -> &'static str {
        match self {
            Mechanism::Static { .. } => "static",
            Mechanism::Monotone { .. } => "monotone",
            Mechanism::ProjSup => "proj-sup",
            Mechanism::ProjCon => "proj-con",
            Mechanism::ProjBoth => "proj-both",
        }
    }

    fn projects_con(&self) -> bool {
        matches!(self, Mechanism::ProjSup | Mechanism::ProjBoth)
    }

    fn projects_sup(&self) -> bool {
        matches!(self, Mechanism::ProjCon | Mechanism::ProjBoth)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    /// Parses a mechanism name with default parameters (static uses weights 1, 1).
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "static" => Mechanism::Static {
                lambda_sup: 1.0,
                lambda_con: 1.0,
            },
            "monotone" => Mechanism::Monotone {
                lr: DEFAULT_LAMBDA_LR,
            },
            "proj-sup" => Mechanism::ProjSup,
            "proj-con" => Mechanism::ProjCon,
            "proj-both" => Mechanism::ProjBoth,
            _ => return Err(Error::Config(format!("unknown mechanism {s:?}"))),
        })
    }
}

/// Outcome of projecting one vector against a reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub vector: Vec<f64>,
    /// `v · ref` before projection.
    pub dot: f64,
    pub fired: bool,
    /// The reference was too small to project against.
    pub skipped: bool,
}

/// `v - (v·r)/(r·r) r` when `v·r < 0`, else `v`.
pub fn project(v: &[f64], r: &[f64]) -> Result<Projection> {
    if v.len() != r.len() {
        return contract(format!("projection of length {} against {}", v.len(), r.len()));
    }
    let dot = dot(v, r);
    let rr = dot_self(r);
    if rr < REF_NORM_FLOOR {
        return Ok(Projection {
            vector: v.to_vec(),
            dot,
            fired: false,
            skipped: true,
        });
    }
    if dot >= 0.0 {
        return Ok(Projection {
            vector: v.to_vec(),
            dot,
            fired: false,
            skipped: false,
        });
    }
    let scale = dot / rr;
    let vector = v.iter().zip(r).map(|(a, b)| a - scale * b).collect();
    Ok(Projection {
        vector,
        dot,
        fired: true,
        skipped: false,
    })
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_self(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    dot_self(a).sqrt()
}

/// Per-step record of what the integrator did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// `g_sup · g_con_ref` before projection.
    pub dot_sup_ref: f64,
    /// `g_con · g_sup_ref` before projection.
    pub dot_con_ref: f64,
    pub projected_sup: bool,
    pub projected_con: bool,
    /// A projection was wanted but its reference was near zero.
    pub skipped: bool,
    /// `|projected · ref| / (‖projected‖ ‖ref‖)` for each fired projection.
    pub residuals: Vec<f64>,
    /// Weight on `g_con` used for this step.
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombineOutcome {
    pub combined: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Integration state for one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Integrator {
    pub mechanism: Mechanism,
    /// Constraint weight used by projection mechanisms.
    pub lambda_con: f64,
    lambda: f64,
    sup_ref: Vec<f64>,
    con_ref: Vec<f64>,
    n_sup: u64,
    n_con: u64,
}

impl Integrator {
    pub fn new(mechanism: Mechanism, dim: usize) -> Self {
        let lambda = match mechanism {
            Mechanism::Static { lambda_con, .. } => lambda_con,
            Mechanism::Monotone { .. } => 0.0,
            _ => 1.0,
        };
        Self {
            mechanism,
            lambda_con: 1.0,
            lambda,
            sup_ref: vec![0.0; dim],
            con_ref: vec![0.0; dim],
            n_sup: 0,
            n_con: 0,
        }
    }

    /// Sets the constraint weight for projection mechanisms.
    pub fn with_lambda_con(mut self, w: f64) -> Self {
        self.lambda_con = w;
        if matches!(
            self.mechanism,
            Mechanism::ProjSup | Mechanism::ProjCon | Mechanism::ProjBoth
        ) {
            self.lambda = w;
        }
        self
    }

    /// Current weight on the constraint gradient.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sup_ref(&self) -> &[f64] {
        &self.sup_ref
    }

    pub fn con_ref(&self) -> &[f64] {
        &self.con_ref
    }

    pub fn updates(&self) -> (u64, u64) {
        (self.n_sup, self.n_con)
    }

    /// True when the constraint gradient cannot affect the update, so callers
    /// may skip computing it.
    pub fn ignores_constraint(&self) -> bool {
        matches!(self.mechanism, Mechanism::Static { lambda_con, .. } if lambda_con == 0.0)
    }

    /// Merges one step's gradients. `violation` is the non-negative
    /// constraint measure driving the monotone weight.
    pub fn combine(&mut self, g_sup: &[f64], g_con: &[f64], violation: f64) -> Result<CombineOutcome> {
        let dim = self.sup_ref.len();
        if g_sup.len() != dim || g_con.len() != dim {
            return contract(format!(
                "gradients of length {} and {} for an integrator over {dim} parameters",
                g_sup.len(),
                g_con.len()
            ));
        }
        if !(violation >= 0.0 && violation.is_finite()) {
            return contract(format!("constraint measure {violation} must be finite and non-negative"));
        }
        let mut diag = Diagnostics {
            dot_sup_ref: dot(g_sup, &self.con_ref),
            dot_con_ref: dot(g_con, &self.sup_ref),
            lambda: self.lambda,
            ..Diagnostics::default()
        };

        let mut sup = g_sup.to_vec();
        let mut con = g_con.to_vec();
        if self.mechanism.projects_sup() {
            let p = project(&sup, &self.con_ref)?;
            if p.fired {
                diag.residuals.push(residual(&p.vector, &self.con_ref));
            }
            diag.projected_sup = p.fired;
            diag.skipped |= p.skipped;
            sup = p.vector;
        }
        if self.mechanism.projects_con() {
            let p = project(&con, &self.sup_ref)?;
            if p.fired {
                diag.residuals.push(residual(&p.vector, &self.sup_ref));
            }
            diag.projected_con = p.fired;
            diag.skipped |= p.skipped;
            con = p.vector;
        }

        let combined = match self.mechanism {
            Mechanism::Static { lambda_sup, lambda_con } => weighted(&sup, lambda_sup, &con, lambda_con),
            _ => weighted(&sup, 1.0, &con, self.lambda),
        };
        if let Some(i) = combined.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                node: i,
                op: "combine",
                detail: "non-finite combined gradient".into(),
            });
        }

        running_mean(&mut self.sup_ref, &sup, &mut self.n_sup);
        running_mean(&mut self.con_ref, &con, &mut self.n_con);
        if let Mechanism::Monotone { lr } = self.mechanism {
            self.lambda += lr * violation;
        }
        Ok(CombineOutcome {
            combined,
            diagnostics: diag,
        })
    }
}

/// `a·wa + b·wb`, leaving out a term whose weight is exactly zero so that a
/// zero-weight constraint reproduces the supervised gradient bit for bit.
fn weighted(a: &[f64], wa: f64, b: &[f64], wb: f64) -> Vec<f64> {
    match (wa == 1.0, wb == 0.0) {
        (true, true) => a.to_vec(),
        (_, true) => a.iter().map(|x| wa * x).collect(),
        (true, false) => a.iter().zip(b).map(|(x, y)| x + wb * y).collect(),
        (false, false) => a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect(),
    }
}

fn running_mean(mean: &mut [f64], x: &[f64], n: &mut u64) {
    *n += 1;
    let inv = 1.0 / *n as f64;
    for (m, v) in mean.iter_mut().zip(x) {
        *m += (v - *m) * inv;
    }
}

fn residual(v: &[f64], r: &[f64]) -> f64 {
    let denom = norm(v) * norm(r);
    if denom == 0.0 {
        0.0
    } else {
        dot(v, r).abs() / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_example() {
        let p = project(&[1.0, 0.0], &[-1.0, 1.0]).unwrap();
        assert!(p.fired);
        assert!((p.vector[0] - 0.5).abs() < 1e-12 && (p.vector[1] - 0.5).abs() < 1e-12);
        assert!(dot(&p.vector, &[-1.0, 1.0]).abs() < 1e-12);
    }

    #[test]
    fn projection_noop_and_cancellation() {
        let p = project(&[1.0, 2.0], &[1.0, 0.0]).unwrap();
        assert_eq!(p.vector, vec![1.0, 2.0]);
        assert!(!p.fired);
        let p = project(&[-2.0, 4.0], &[1.0, -2.0]).unwrap();
        assert!(p.vector.iter().all(|v| v.abs() < 1e-15));
        let p = project(&[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(p.skipped && !p.fired);
        assert!(project(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn static_zero_weight_is_supervised_gradient() {
        let mut it = Integrator::new(
            Mechanism::Static {
                lambda_sup: 1.0,
                lambda_con: 0.0,
            },
            3,
        );
        let g = [0.1, -0.0, 3.0];
        let out = it.combine(&g, &[f64::MAX, -1.0, 2.0], 0.5).unwrap();
        assert_eq!(
            out.combined.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            g.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(it.ignores_constraint());
    }

    #[test]
    fn monotone_starts_at_zero_and_grows() {
        let mut it = Integrator::new(Mechanism::Monotone { lr: 0.01 }, 2);
        assert_eq!(it.lambda(), 0.0);
        let out = it.combine(&[1.0, 2.0], &[5.0, 5.0], 0.3).unwrap();
        assert_eq!(out.combined, vec![1.0, 2.0]);
        assert_eq!(out.diagnostics.lambda, 0.0);
        assert!(it.lambda() > 0.0);
        let before = it.lambda();
        it.combine(&[1.0, 2.0], &[5.0, 5.0], 0.0).unwrap();
        assert_eq!(it.lambda(), before);
        assert!(it.combine(&[1.0, 2.0], &[5.0, 5.0], -1.0).is_err());
    }

    #[test]
    fn proj_both_hand_example() {
        let mut it = Integrator::new(Mechanism::ProjBoth, 2);
        // Seed the references with each task's current gradient.
        it.sup_ref = vec![1.0, 0.0];
        it.con_ref = vec![-1.0, 1.0];
        it.n_sup = 1;
        it.n_con = 1;
        let out = it.combine(&[1.0, 0.0], &[-1.0, 1.0], 0.0).unwrap();
        assert!(out.diagnostics.projected_sup && out.diagnostics.projected_con);
        assert!((out.combined[0] - 0.5).abs() < 1e-12);
        assert!((out.combined[1] - 1.5).abs() < 1e-12);
        // References now average in the projected vectors.
        assert!((it.sup_ref()[0] - 0.75).abs() < 1e-12 && (it.sup_ref()[1] - 0.25).abs() < 1e-12);
        assert!((it.con_ref()[0] + 0.5).abs() < 1e-12 && (it.con_ref()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_step_skips_projection() {
        let mut it = Integrator::new(Mechanism::ProjBoth, 2);
        let out = it.combine(&[1.0, 0.0], &[-1.0, 1.0], 0.0).unwrap();
        assert!(out.diagnostics.skipped);
        assert_eq!(out.combined, vec![0.0, 1.0]);
        assert_eq!(it.updates(), (1, 1));
    }

    #[test]
    fn length_mismatch() {
        let mut it = Integrator::new(Mechanism::ProjSup, 2);
        assert!(it.combine(&[1.0], &[1.0, 2.0], 0.0).is_err());
    }
}
