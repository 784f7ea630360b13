use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::softlogic::{eval_bool, Formula};

/// Atom bound to "output position `factor` takes class `class`".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit {
    pub factor: usize,
    pub class: usize,
}

impl Lit {
    pub fn new(factor: usize, class: usize) -> Self {
        Self { factor, class }
    }
}

impl fmt::Display for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "y{}_{}", self.factor, self.class)
    }
}

/// Produces the ground rule instances for one example.
pub trait Grounder<I>: Send + Sync {
    /// `n_factors` is the number of output positions of the example.
    fn ground(&self, input: &I, n_factors: usize) -> Result<Vec<Formula<Lit>>>;
}

/// Violation degree of a discrete output, in `[0, 1]`.
pub type DegreeFn<I> = Arc<dyn Fn(&I, &[usize]) -> Result<f64> + Send + Sync>;

/// One constraint over a task's outputs.
///
/// A spec is symbolic (it has a grounder, so soft losses apply) or
/// programmatic (degree function only), or both: a symbolic spec may carry a
/// task-specific graded degree in place of the default fraction of violated
/// groundings.
pub struct ConstraintSpec<I> {
    pub name: String,
    grounder: Option<Arc<dyn Grounder<I>>>,
    degree: Option<DegreeFn<I>>,
}

impl<I> Clone for ConstraintSpec<I> {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            grounder: self.grounder.clone(),
            degree: self.degree.clone(),
        }
    }
}

impl<I> fmt::Debug for ConstraintSpec<I> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec")
            .field("name", &self.name)
            .field("symbolic", &self.grounder.is_some())
            .field("graded", &self.degree.is_some())
            .finish()
    }
}

impl<I> ConstraintSpec<I> {
    pub fn symbolic(name: impl Into<String>, grounder: Arc<dyn Grounder<I>>) -> Self {
        Self {
            name: name.into(),
            grounder: Some(grounder),
            degree: None,
        }
    }

    pub fn programmatic(name: impl Into<String>, degree: DegreeFn<I>) -> Self {
        Self {
            name: name.into(),
            grounder: None,
            degree: Some(degree),
        }
    }

    /// Replaces the default degree of a symbolic spec.
    pub fn with_degree(mut self, degree: DegreeFn<I>) -> Self {
        self.degree = Some(degree);
        self
    }

    pub fn is_symbolic(&self) -> bool {
        self.grounder.is_some()
    }

    pub fn groundings(&self, input: &I, n_factors: usize) -> Result<Vec<Formula<Lit>>> {
        match &self.grounder {
            Some(g) => g.ground(input, n_factors),
            None => Err(Error::Contract(format!(
                "constraint {:?} is programmatic; use a REINFORCE loss",
                self.name
            ))),
        }
    }

    /// Degree in `[0, 1]`; zero exactly when the output satisfies the constraint.
    pub fn degree(&self, input: &I, output: &[usize]) -> Result<f64> {
        if let Some(f) = &self.degree {
            let d = f(input, output)?;
            if !d.is_finite() {
                return Err(Error::Contract(format!("degree of {:?} is not finite", self.name)));
            }
            return Ok(d.clamp(0.0, 1.0));
        }
        let ground = self.groundings(input, output.len())?;
        if ground.is_empty() {
            return Ok(0.0);
        }
        let mut violated = 0usize;
        for f in &ground {
            if !holds(f, output)? {
                violated += 1;
            }
        }
        Ok(violated as f64 / ground.len() as f64)
    }

    pub fn violated(&self, input: &I, output: &[usize]) -> Result<bool> {
        Ok(self.degree(input, output)? > 0.0)
    }
}

/// Boolean truth of a ground formula at a discrete output.
pub(crate) fn holds(f: &Formula<Lit>, output: &[usize]) -> Result<bool> {
    eval_bool(f, &|l: &Lit| output.get(l.factor).map(|&c| c == l.class))
}
