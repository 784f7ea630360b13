//! Propositional constraint formulas with boolean and t-norm semantics.

mod eval;
mod formula;
mod parser;

pub use eval::{eval_bool, eval_soft, eval_soft_graph, Implication, Logic, TNorm};
pub use formula::{Arg, Atom, Formula};
pub use parser::{
    parse_constraint_file, parse_formula, parse_formula_with, parse_template, ConstraintFile, Domains,
    Template, Term,
};
