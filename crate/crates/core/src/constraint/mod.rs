//! Constraint losses: declarative specs, output exploration, and the soft
//! (t-norm) and REINFORCE surrogates built on top of them.

mod explore;
mod losses;
mod spec;

pub use explore::{
    Candidate, Explore, ExplorationResult, Factorized, LogpRef, SequenceContext, Strategy, EXHAUSTIVE_CAP,
};
pub use losses::{constraint_loss, psl_loss, reinforce_loss, ConstraintLoss, LossType};
pub use spec::{ConstraintSpec, DegreeFn, Grounder, Lit};
