//! Data generators and constraint definitions for the bundled tasks.

pub mod bio;
pub mod hierlabel;
pub mod pairrel;
mod rules;
pub mod ste;

pub use rules::{Bindings, RuleGrounder};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Main-task metric attached to a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    Accuracy,
    TokenAccuracy,
    F1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskId {
    Ste,
    HierLabel,
    Bio,
    PairRel,
}

impl TaskId {
    pub fn label(self) -> &'static str {
        match self {
            TaskId::Ste => "ste",
            TaskId::HierLabel => "hierlabel",
            TaskId::Bio => "bio",
            TaskId::PairRel => "pairrel",
        }
    }

    pub fn metric(self) -> MetricKind {
        match self {
            TaskId::Ste => MetricKind::TokenAccuracy,
            TaskId::HierLabel | TaskId::PairRel => MetricKind::Accuracy,
            TaskId::Bio => MetricKind::F1,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "ste" => Ok(TaskId::Ste),
            "hierlabel" => Ok(TaskId::HierLabel),
            "bio" => Ok(TaskId::Bio),
            "pairrel" => Ok(TaskId::PairRel),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}
