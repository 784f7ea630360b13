//! Concrete syntax for constraint formulas.
//!
//! ```text
//! formula := implies
//! implies := or ("=>" implies)?
//! or      := and ("|" and)*
//! and     := unary ("&" unary)*
//! unary   := "!" unary | quant | primary
//! quant   := ("forall" | "exists") IDENT "in" IDENT ("\" "{" term ("," term)* "}")? ":" implies
//! primary := "(" formula ")" | ("AND" | "OR") "[" (formula ("," formula)*)? "]" | atom
//! atom    := IDENT ("(" term ("," term)* ")")?
//! term    := IDENT | INT
//! ```
//!
//! Quantifiers range over finite integer domains declared up front and
//! expand to `AND[...]` / `OR[...]` when a template is grounded.

use std::collections::BTreeMap;

use super::formula::{Arg, Atom, Formula};
use crate::error::{Error, Result};

/// Named finite integer domains.
pub type Domains = BTreeMap<String, Vec<i64>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Term {
    Var(String),
    Int(i64),
}

/// Formula with unexpanded quantifiers and free variables.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Template {
    Atom { name: String, args: Vec<Term> },
    Not(Box<Template>),
    And(Box<Template>, Box<Template>),
    Or(Box<Template>, Box<Template>),
    Implies(Box<Template>, Box<Template>),
    BigAnd(Vec<Template>),
    BigOr(Vec<Template>),
    Quant {
        forall: bool,
        var: String,
        domain: String,
        exclude: Vec<Term>,
        body: Box<Template>,
    },
}

impl Template {
    /// Expands quantifiers over `domains` and substitutes `bindings` for free
    /// variables. Identifiers that are neither bound nor quantified stay
    /// symbolic names.
    pub fn ground(&self, domains: &Domains, bindings: &[(&str, i64)]) -> Result<Formula<Atom>> {
        let mut env: Vec<(String, i64)> = bindings.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        self.ground_in(domains, &mut env)
    }

    fn ground_in(&self, domains: &Domains, env: &mut Vec<(String, i64)>) -> Result<Formula<Atom>> {
        Ok(match self {
            Template::Atom { name, args } => {
                let args = args.iter().map(|t| resolve(t, env)).collect();
                Formula::Atom(Atom::with_args(name.clone(), args))
            }
            Template::Not(x) => Formula::not(x.ground_in(domains, env)?),
            Template::And(a, b) => Formula::and(a.ground_in(domains, env)?, b.ground_in(domains, env)?),
            Template::Or(a, b) => Formula::or(a.ground_in(domains, env)?, b.ground_in(domains, env)?),
            Template::Implies(a, b) => {
                Formula::implies(a.ground_in(domains, env)?, b.ground_in(domains, env)?)
            }
            Template::BigAnd(xs) => Formula::BigAnd(
                xs.iter().map(|x| x.ground_in(domains, env)).collect::<Result<_>>()?,
            ),
            Template::BigOr(xs) => Formula::BigOr(
                xs.iter().map(|x| x.ground_in(domains, env)).collect::<Result<_>>()?,
            ),
            Template::Quant {
                forall,
                var,
                domain,
                exclude,
                body,
            } => {
                let values = domains
                    .get(domain)
                    .ok_or_else(|| Error::Semantic(format!("unknown index domain {domain:?}")))?;
                let mut skip = Vec::with_capacity(exclude.len());
                for t in exclude {
                    match resolve(t, env) {
                        Arg::Int(v) => skip.push(v),
                        Arg::Name(n) => {
                            return Err(Error::Semantic(format!(
                                "excluded index {n:?} is not bound to a value"
                            )))
                        }
                    }
                }
                let mut parts = Vec::new();
                for &v in values.iter().filter(|v| !skip.contains(v)) {
                    env.push((var.clone(), v));
                    let part = body.ground_in(domains, env);
                    env.pop();
                    parts.push(part?);
                }
                if *forall {
                    Formula::BigAnd(parts)
                } else {
                    Formula::BigOr(parts)
                }
            }
        })
    }
}

fn resolve(t: &Term, env: &[(String, i64)]) -> Arg {
    match t {
        Term::Int(v) => Arg::Int(*v),
        Term::Var(name) => env
            .iter()
            .rev()
            .find(|(k, _)| k == name)
            .map(|(_, v)| Arg::Int(*v))
            .unwrap_or_else(|| Arg::Name(name.clone())),
    }
}

/// Parses a quantifier-free formula (quantifiers are rejected since no
/// domains are declared).
pub fn parse_formula(text: &str) -> Result<Formula<Atom>> {
    parse_formula_with(text, &Domains::new(), &[])
}

/// Parses and grounds in one go.
pub fn parse_formula_with(text: &str, domains: &Domains, bindings: &[(&str, i64)]) -> Result<Formula<Atom>> {
    parse_template(text, domains)?.ground(domains, bindings)
}

/// Parses a formula template; every quantifier domain must be declared.
pub fn parse_template(text: &str, domains: &Domains) -> Result<Template> {
    let tokens = lex(text, 1)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        domains,
    };
    let t = p.implies()?;
    p.expect_end()?;
    Ok(t)
}

/// A constraint file: domain declarations followed by one formula per line.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintFile {
    pub domains: Domains,
    pub formulas: Vec<Template>,
}

/// Reads the constraint file format:
///
/// ```text
/// # comment
/// domain S = {1, 2, 3}
/// B_X(i) => forall j in S\{i}: !B_X(j)
/// ```
pub fn parse_constraint_file(text: &str) -> Result<ConstraintFile> {
    let mut domains = Domains::new();
    let mut formulas = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("");
        if line.trim().is_empty() {
            continue;
        }
        let tokens = lex(line, line_no)?;
        if matches!(tokens.first(), Some((Tok::Ident(k), _)) if k == "domain") {
            if !formulas.is_empty() {
                return Err(syntax(tokens[0].1, "domain declarations must precede formulas"));
            }
            let (name, values) = parse_domain(&tokens)?;
            if domains.insert(name.clone(), values).is_some() {
                return Err(Error::Semantic(format!("domain {name:?} declared twice")));
            }
        } else {
            let mut p = Parser {
                tokens,
                pos: 0,
                domains: &domains,
            };
            let t = p.implies()?;
            p.expect_end()?;
            formulas.push(t);
        }
    }
    Ok(ConstraintFile { domains, formulas })
}

fn parse_domain(tokens: &[(Tok, Pos)]) -> Result<(String, Vec<i64>)> {
    let empty = Domains::new();
    let mut p = Parser {
        tokens: tokens.to_vec(),
        pos: 1,
        domains: &empty,
    };
    let name = p.ident()?;
    p.eat(&Tok::Eq, "'='")?;
    p.eat(&Tok::LBrace, "'{'")?;
    let mut values = Vec::new();
    loop {
        match p.next() {
            (Tok::Int(v), _) => values.push(v),
            (Tok::RBrace, _) if values.is_empty() => break,
            (t, pos) => return Err(syntax(pos, format!("expected integer, found {}", t.describe()))),
        }
        match p.next() {
            (Tok::Comma, _) => continue,
            (Tok::RBrace, _) => break,
            (t, pos) => return Err(syntax(pos, format!("expected ',' or '}}', found {}", t.describe()))),
        }
    }
    p.expect_end()?;
    Ok((name, values))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

fn syntax(pos: Pos, message: impl Into<String>) -> Error {
    Error::Syntax {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Backslash,
    Bang,
    Amp,
    Pipe,
    Arrow,
    Eq,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::End => "end of input".into(),
            other => format!("{other:?}"),
        }
    }
}

fn lex(text: &str, line: usize) -> Result<Vec<(Tok, Pos)>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, line, 1);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ',' => Some(Tok::Comma),
            ':' => Some(Tok::Colon),
            '\\' => Some(Tok::Backslash),
            '!' => Some(Tok::Bang),
            '&' => Some(Tok::Amp),
            '|' => Some(Tok::Pipe),
            _ => None,
        };
        if let Some(t) = single {
            out.push((t, pos));
            i += 1;
            col += 1;
        } else if c == '=' {
            if chars.get(i + 1) == Some(&'>') {
                out.push((Tok::Arrow, pos));
                i += 2;
                col += 2;
            } else {
                out.push((Tok::Eq, pos));
                i += 1;
                col += 1;
            }
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse().map_err(|_| syntax(pos, format!("integer {s} out of range")))?;
            col += i - start;
            out.push((Tok::Int(v), pos));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
        } else {
            return Err(syntax(pos, format!("unexpected character {c:?}")));
        }
    }
    out.push((Tok::End, Pos { line, column: col }));
    Ok(out)
}

struct Parser<'d> {
    tokens: Vec<(Tok, Pos)>,
    pos: usize,
    domains: &'d Domains,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn next(&mut self) -> (Tok, Pos) {
        let t = self.tokens[self.pos].clone();
        if t.0 != Tok::End {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, want: &Tok, what: &str) -> Result<Pos> {
        let (t, pos) = self.next();
        if &t == want {
            Ok(pos)
        } else {
            Err(syntax(pos, format!("expected {what}, found {}", t.describe())))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.next() {
            (Tok::Ident(s), _) => Ok(s),
            (t, pos) => Err(syntax(pos, format!("expected identifier, found {}", t.describe()))),
        }
    }

    fn expect_end(&mut self) -> Result<()> {
        match self.next() {
            (Tok::End, _) => Ok(()),
            (t, pos) => Err(syntax(pos, format!("unexpected {}", t.describe()))),
        }
    }

    fn implies(&mut self) -> Result<Template> {
        let lhs = self.or()?;
        if self.peek() == &Tok::Arrow {
            self.next();
            let rhs = self.implies()?;
            return Ok(Template::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Template> {
        let mut lhs = self.and()?;
        while self.peek() == &Tok::Pipe {
            self.next();
            let rhs = self.and()?;
            lhs = Template::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Template> {
        let mut lhs = self.unary()?;
        while self.peek() == &Tok::Amp {
            self.next();
            let rhs = self.unary()?;
            lhs = Template::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Template> {
        match self.peek().clone() {
            Tok::Bang => {
                self.next();
                Ok(Template::Not(Box::new(self.unary()?)))
            }
            Tok::Ident(k) if k == "forall" || k == "exists" => self.quant(k == "forall"),
            _ => self.primary(),
        }
    }

    fn quant(&mut self, forall: bool) -> Result<Template> {
        self.next();
        let var = self.ident()?;
        match self.next() {
            (Tok::Ident(k), _) if k == "in" => {}
            (t, pos) => return Err(syntax(pos, format!("expected 'in', found {}", t.describe()))),
        }
        let domain = self.ident()?;
        if !self.domains.contains_key(&domain) {
            return Err(Error::Semantic(format!("unknown index domain {domain:?}")));
        }
        let mut exclude = Vec::new();
        if self.peek() == &Tok::Backslash {
            self.next();
            self.eat(&Tok::LBrace, "'{'")?;
            loop {
                exclude.push(self.term()?);
                match self.next() {
                    (Tok::Comma, _) => continue,
                    (Tok::RBrace, _) => break,
                    (t, pos) => return Err(syntax(pos, format!("expected ',' or '}}', found {}", t.describe()))),
                }
            }
        }
        self.eat(&Tok::Colon, "':'")?;
        let body = self.implies()?;
        Ok(Template::Quant {
            forall,
            var,
            domain,
            exclude,
            body: Box::new(body),
        })
    }

    fn term(&mut self) -> Result<Term> {
        match self.next() {
            (Tok::Ident(s), _) => Ok(Term::Var(s)),
            (Tok::Int(v), _) => Ok(Term::Int(v)),
            (t, pos) => Err(syntax(pos, format!("expected index, found {}", t.describe()))),
        }
    }

    fn primary(&mut self) -> Result<Template> {
        match self.next() {
            (Tok::LParen, _) => {
                let inner = self.implies()?;
                self.eat(&Tok::RParen, "')'")?;
                Ok(inner)
            }
            (Tok::Ident(k), _) if (k == "AND" || k == "OR") && self.peek() == &Tok::LBracket => {
                self.next();
                let mut parts = Vec::new();
                if self.peek() == &Tok::RBracket {
                    self.next();
                } else {
                    loop {
                        parts.push(self.implies()?);
                        match self.next() {
                            (Tok::Comma, _) => continue,
                            (Tok::RBracket, _) => break,
                            (t, pos) => {
                                return Err(syntax(pos, format!("expected ',' or ']', found {}", t.describe())))
                            }
                        }
                    }
                }
                Ok(if k == "AND" {
                    Template::BigAnd(parts)
                } else {
                    Template::BigOr(parts)
                })
            }
            (Tok::Ident(name), pos) => {
                if ["forall", "exists", "in", "domain"].contains(&name.as_str()) {
                    return Err(syntax(pos, format!("keyword {name:?} cannot name an atom")));
                }
                let mut args = Vec::new();
                if self.peek() == &Tok::LParen {
                    self.next();
                    loop {
                        args.push(self.term()?);
                        match self.next() {
                            (Tok::Comma, _) => continue,
                            (Tok::RParen, _) => break,
                            (t, pos) => {
                                return Err(syntax(pos, format!("expected ',' or ')', found {}", t.describe())))
                            }
                        }
                    }
                }
                Ok(Template::Atom { name, args })
            }
            (t, pos) => Err(syntax(pos, format!("expected formula, found {}", t.describe()))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atom(name: &str, args: &[&str]) -> Formula<Atom> {
        Formula::Atom(Atom::with_args(
            name,
            args.iter().map(|a| Arg::Name(a.to_string())).collect(),
        ))
    }

    fn indexed(name: &str, i: i64) -> Formula<Atom> {
        Formula::Atom(Atom::with_args(name, vec![Arg::Int(i)]))
    }

    #[test]
    fn parses_implication_with_negation() {
        let f = parse_formula("ent(x1,x2) => !con(x2,x1)").unwrap();
        assert_eq!(
            f,
            Formula::implies(atom("ent", &["x1", "x2"]), Formula::not(atom("con", &["x2", "x1"])))
        );
    }

    #[test]
    fn parses_single_atom() {
        assert_eq!(parse_formula("a").unwrap(), Formula::Atom(Atom::new("a")));
    }

    #[test]
    fn expands_quantifier_with_exclusion() {
        let mut d = Domains::new();
        d.insert("S".into(), vec![1, 2, 3]);
        let f = parse_formula_with("forall j in S\\{i}: !B_X(j)", &d, &[("i", 2)]).unwrap();
        assert_eq!(
            f,
            Formula::BigAnd(vec![
                Formula::not(indexed("B_X", 1)),
                Formula::not(indexed("B_X", 3))
            ])
        );
    }

    #[test]
    fn unknown_domain_is_semantic_error() {
        let e = parse_formula("forall j in T: a(j)").unwrap_err();
        assert!(matches!(e, Error::Semantic(_)));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_formula("a & (b | ").unwrap_err() {
            Error::Syntax { line, column, .. } => assert_eq!((line, column), (1, 10)),
            e => panic!("{e:?}"),
        }
        match parse_formula("a $ b").unwrap_err() {
            Error::Syntax { column, .. } => assert_eq!(column, 3),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        let f = parse_formula("a | b & !c => d => e").unwrap();
        let a = Formula::Atom(Atom::new("a"));
        let b = Formula::Atom(Atom::new("b"));
        let c = Formula::Atom(Atom::new("c"));
        let d = Formula::Atom(Atom::new("d"));
        let e = Formula::Atom(Atom::new("e"));
        let expect = Formula::implies(
            Formula::or(a, Formula::and(b, Formula::not(c))),
            Formula::implies(d, e),
        );
        assert_eq!(f, expect);
    }

    #[test]
    fn empty_lists_and_round_trip() {
        let f = parse_formula("AND[] | OR[a, b => c]").unwrap();
        assert_eq!(parse_formula(&f.to_string()).unwrap(), f);
    }

    #[test]
    fn constraint_file_with_domains() {
        let text = "# unique roles\ndomain S = {1, 2, 3}\n\nB(i) => forall j in S\\{i}: !B(j)\n";
        let cf = parse_constraint_file(text).unwrap();
        assert_eq!(cf.domains["S"], vec![1, 2, 3]);
        assert_eq!(cf.formulas.len(), 1);
        let g = cf.formulas[0].ground(&cf.domains, &[("i", 1)]).unwrap();
        assert_eq!(
            g,
            Formula::implies(
                indexed("B", 1),
                Formula::BigAnd(vec![Formula::not(indexed("B", 2)), Formula::not(indexed("B", 3))])
            )
        );
    }

    #[test]
    fn constraint_file_error_reports_line() {
        match parse_constraint_file("domain S = {1}\n\na & & b\n").unwrap_err() {
            Error::Syntax { line, column, .. } => assert_eq!((line, column), (3, 5)),
            e => panic!("{e:?}"),
        }
    }
}
