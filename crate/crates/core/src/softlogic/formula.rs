use std::fmt;

/// Ground atom argument.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arg {
    Int(i64),
    Name(String),
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Int(v) => write!(f, "{v}"),
            Arg::Name(n) => f.write_str(n),
        }
    }
}

/// Named atom such as `ent(x1,x2)` or `B_X(3)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub name: String,
    pub args: Vec<Arg>,
}

impl Atom {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            args: Vec::new(),
        }
    }

    pub fn with_args(name: impl Into<String>, args: Vec<Arg>) -> Self {
        Self {
            name: name.into(),
            args,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Propositional formula over atoms of type `A`.
///
/// `BigAnd`/`BigOr` fold left with the binary connective; an empty `BigAnd`
/// is true and an empty `BigOr` is false.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Formula<A = Atom> {
    Atom(A),
    Not(Box<Formula<A>>),
    And(Box<Formula<A>>, Box<Formula<A>>),
    Or(Box<Formula<A>>, Box<Formula<A>>),
    Implies(Box<Formula<A>>, Box<Formula<A>>),
    BigAnd(Vec<Formula<A>>),
    BigOr(Vec<Formula<A>>),
}

impl<A> Formula<A> {
    pub fn atom(a: A) -> Self {
        Formula::Atom(a)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Self) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Self, b: Self) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Self, b: Self) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Self, b: Self) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    /// Atoms in left-to-right order, with repeats.
    pub fn atoms(&self) -> Vec<&A> {
        let mut out = Vec::new();
        self.visit_atoms(&mut |a| out.push(a));
        out
    }

    fn visit_atoms<'a>(&'a self, f: &mut impl FnMut(&'a A)) {
        match self {
            Formula::Atom(a) => f(a),
            Formula::Not(x) => x.visit_atoms(f),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                a.visit_atoms(f);
                b.visit_atoms(f);
            }
            Formula::BigAnd(xs) | Formula::BigOr(xs) => xs.iter().for_each(|x| x.visit_atoms(f)),
        }
    }

    pub fn map_atoms<B>(&self, f: &mut impl FnMut(&A) -> B) -> Formula<B> {
        match self {
            Formula::Atom(a) => Formula::Atom(f(a)),
            Formula::Not(x) => Formula::not(x.map_atoms(f)),
            Formula::And(a, b) => {
                let a = a.map_atoms(f);
                Formula::and(a, b.map_atoms(f))
            }
            Formula::Or(a, b) => {
                let a = a.map_atoms(f);
                Formula::or(a, b.map_atoms(f))
            }
            Formula::Implies(a, b) => {
                let a = a.map_atoms(f);
                Formula::implies(a, b.map_atoms(f))
            }
            Formula::BigAnd(xs) => Formula::BigAnd(xs.iter().map(|x| x.map_atoms(f)).collect()),
            Formula::BigOr(xs) => Formula::BigOr(xs.iter().map(|x| x.map_atoms(f)).collect()),
        }
    }

    /// Replaces every atom occurrence by its ordinal, returning the
    /// structure and the atoms in slot order.
    pub fn slots(&self) -> (Formula<usize>, Vec<&A>) {
        let atoms = self.atoms();
        let mut next = 0;
        let shape = self.map_atoms(&mut |_| {
            next += 1;
            next - 1
        });
        (shape, atoms)
    }

    /// Antecedent of a top-level implication.
    pub fn antecedent(&self) -> Option<&Formula<A>> {
        match self {
            Formula::Implies(a, _) => Some(a),
            _ => None,
        }
    }

    pub fn is_negation_free(&self) -> bool {
        match self {
            Formula::Atom(_) => true,
            Formula::Not(_) | Formula::Implies(..) => false,
            Formula::And(a, b) | Formula::Or(a, b) => a.is_negation_free() && b.is_negation_free(),
            Formula::BigAnd(xs) | Formula::BigOr(xs) => xs.iter().all(Formula::is_negation_free),
        }
    }
}

impl<A: fmt::Display> fmt::Display for Formula<A> {
    /// Fully parenthesized form accepted by the parser.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::Not(x) => write!(f, "!({x})"),
            Formula::And(a, b) => write!(f, "({a} & {b})"),
            Formula::Or(a, b) => write!(f, "({a} | {b})"),
            Formula::Implies(a, b) => write!(f, "({a} => {b})"),
            Formula::BigAnd(xs) => write_list(f, "AND", xs),
            Formula::BigOr(xs) => write_list(f, "OR", xs),
        }
    }
}

fn write_list<A: fmt::Display>(f: &mut fmt::Formatter<'_>, head: &str, xs: &[Formula<A>]) -> fmt::Result {
    write!(f, "{head}[")?;
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{x}")?;
    }
    f.write_str("]")
}
