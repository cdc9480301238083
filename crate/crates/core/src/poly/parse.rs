//! Parser for the system DSL.
//!
//! ```text
//! # optional headers
//! states 2
//! controls 1
//! x1' = x1^2*x2 + x2 + 2*x1*x2^2
//! x2' = -x1 + u1;
//! ```
//!
//! Equations are separated by newlines or `;`. Multiplication is explicit,
//! `^` takes a non-negative integer literal, and division is only allowed by
//! constants.

use super::{Polynomial, VectorField};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64, String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Prime,
    Equals,
    Sep,
    End,
}

fn syntax(pos: Pos, message: impl Into<String>) -> Error {
    Error::Syntax {
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn tokenize(text: &str) -> Result<Vec<(Tok, Pos)>> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let pos = Pos {
                line: li + 1,
                column: i + 1,
            };
            match c {
                '#' => break,
                ' ' | '\t' | '\r' => {
                    i += 1;
                }
                '0'..='9' | '.' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                        i += 1;
                    }
                    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                        let mut j = i + 1;
                        if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                            j += 1;
                        }
                        if j < chars.len() && chars[j].is_ascii_digit() {
                            i = j;
                            while i < chars.len() && chars[i].is_ascii_digit() {
                                i += 1;
                            }
                        }
                    }
                    let s: String = chars[start..i].iter().collect();
                    let v: f64 = s
                        .parse()
                        .map_err(|_| syntax(pos, format!("malformed number `{s}`")))?;
                    out.push((Tok::Num(v, s), pos));
                }
                c if c.is_alphabetic() || c == '_' => {
                    let start = i;
                    while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                        i += 1;
                    }
                    out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
                }
                _ => {
                    let t = match c {
                        '+' => Tok::Plus,
                        '-' => Tok::Minus,
                        '*' => Tok::Star,
                        '/' => Tok::Slash,
                        '^' => Tok::Caret,
                        '(' => Tok::LParen,
                        ')' => Tok::RParen,
                        '\'' => Tok::Prime,
                        '=' => Tok::Equals,
                        ';' => Tok::Sep,
                        other => return Err(syntax(pos, format!("unexpected character `{other}`"))),
                    };
                    out.push((t, pos));
                    i += 1;
                }
            }
        }
        out.push((
            Tok::Sep,
            Pos {
                line: li + 1,
                column: chars.len() + 1,
            },
        ));
    }
    let end = out.last().map(|(_, p)| *p).unwrap_or(Pos { line: 1, column: 1 });
    out.push((Tok::End, end));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarKind {
    State,
    Control,
}

#[derive(Debug)]
enum Expr {
    Num(f64),
    Var(VarKind, usize, Pos),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>, Pos),
    Pow(Box<Expr>, u32),
}

struct Equation {
    target: usize,
    pos: Pos,
    rhs: Expr,
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

fn parse_var_name(name: &str) -> Option<(VarKind, usize)> {
    let (kind, digits) = match name.chars().next()? {
        'x' => (VarKind::State, &name[1..]),
        'u' => (VarKind::Control, &name[1..]),
        _ => return None,
    };
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let idx: usize = digits.parse().ok()?;
    (idx >= 1).then_some((kind, idx))
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        let (t, pos) = self.bump();
        if t == want {
            Ok(())
        } else {
            Err(syntax(pos, format!("expected {what}")))
        }
    }

    fn header_value(&mut self, name: &str) -> Result<usize> {
        let (t, pos) = self.bump();
        match t {
            Tok::Num(v, _) if v.fract() == 0.0 && v >= 0.0 => Ok(v as usize),
            _ => Err(syntax(pos, format!("`{name}` expects a non-negative integer"))),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    let pos = self.pos();
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?), pos);
                }
                Tok::Num(..) | Tok::Ident(_) | Tok::LParen => {
                    return Err(syntax(self.pos(), "expected operator (multiplication must be written with `*`)"));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let pos = self.pos();
        let (t, _) = self.bump();
        let non_poly = |msg: &str| Error::NonPolynomial {
            line: pos.line,
            column: pos.column,
            message: msg.to_string(),
        };
        match t {
            Tok::Num(v, _) if v.fract() == 0.0 && v <= u32::MAX as f64 => Ok(Expr::Pow(Box::new(base), v as u32)),
            Tok::Num(..) => Err(non_poly("exponent must be a non-negative integer")),
            Tok::Minus => Err(non_poly("negative exponents are not polynomial")),
            Tok::Ident(_) | Tok::LParen => Err(non_poly("exponent must be an integer literal")),
            _ => Err(syntax(pos, "expected exponent")),
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        let (t, pos) = self.bump();
        match t {
            Tok::Num(v, _) => Ok(Expr::Num(v)),
            Tok::Ident(name) => match parse_var_name(&name) {
                Some((kind, idx)) => Ok(Expr::Var(kind, idx, pos)),
                None => Err(Error::UndeclaredVariable {
                    name,
                    line: pos.line,
                    column: pos.column,
                }),
            },
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            _ => Err(syntax(pos, "expected number, variable or `(`")),
        }
    }
}

fn lower(e: &Expr, n: usize, r: usize) -> Result<Polynomial> {
    let nv = n + r;
    Ok(match e {
        Expr::Num(v) => Polynomial::constant(nv, *v),
        Expr::Var(kind, idx, pos) => {
            let (limit, offset, prefix) = match kind {
                VarKind::State => (n, 0, 'x'),
                VarKind::Control => (r, n, 'u'),
            };
            if *idx > limit {
                return Err(Error::UndeclaredVariable {
                    name: format!("{prefix}{idx}"),
                    line: pos.line,
                    column: pos.column,
                });
            }
            Polynomial::var(nv, offset + idx - 1)
        }
        Expr::Neg(a) => -&lower(a, n, r)?,
        Expr::Add(a, b) => &lower(a, n, r)? + &lower(b, n, r)?,
        Expr::Sub(a, b) => &lower(a, n, r)? - &lower(b, n, r)?,
        Expr::Mul(a, b) => &lower(a, n, r)? * &lower(b, n, r)?,
        Expr::Div(a, b, pos) => {
            let den = lower(b, n, r)?;
            if den.degree() > 0 {
                return Err(Error::NonPolynomial {
                    line: pos.line,
                    column: pos.column,
                    message: "division by a variable".into(),
                });
            }
            let d = den.constant_term();
            if d == 0.0 {
                return Err(syntax(*pos, "division by zero"));
            }
            lower(a, n, r)?.scale(1.0 / d)
        }
        Expr::Pow(a, k) => lower(a, n, r)?.pow(*k),
    })
}

fn max_index(e: &Expr, kind: VarKind) -> usize {
    match e {
        Expr::Num(_) => 0,
        Expr::Var(k, i, _) => {
            if *k == kind {
                *i
            } else {
                0
            }
        }
        Expr::Neg(a) | Expr::Pow(a, _) => max_index(a, kind),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b, _) => {
            max_index(a, kind).max(max_index(b, kind))
        }
    }
}

/// Parses a single expression in `x1..xn` and `u1..ur` into a polynomial
/// over `n + r` variables (states first).
pub fn parse_polynomial(text: &str, n: usize, r: usize) -> Result<Polynomial> {
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
    };
    while *p.peek() == Tok::Sep {
        p.bump();
    }
    let e = p.expr()?;
    while *p.peek() == Tok::Sep {
        p.bump();
    }
    if *p.peek() != Tok::End {
        return Err(syntax(p.pos(), "unexpected token after expression"));
    }
    lower(&e, n, r)
}

/// Parses a system description into a [`VectorField`].
///
/// Without a `states` header the dimension is the number of equations;
/// without a `controls` header it is the largest control index used.
pub fn parse_system(text: &str) -> Result<VectorField> {
    let mut p = Parser {
        toks: tokenize(text)?,
        at: 0,
    };
    let mut states: Option<usize> = None;
    let mut controls: Option<usize> = None;
    let mut eqs: Vec<Equation> = Vec::new();

    loop {
        let (t, pos) = p.bump();
        match t {
            Tok::End => break,
            Tok::Sep => continue,
            Tok::Ident(name) if name == "states" => {
                states = Some(p.header_value("states")?);
            }
            Tok::Ident(name) if name == "controls" => {
                controls = Some(p.header_value("controls")?);
            }
            Tok::Ident(name) => {
                let target = match parse_var_name(&name) {
                    Some((VarKind::State, idx)) => idx,
                    _ => {
                        return Err(syntax(pos, format!("expected an equation `xk' = ...`, found `{name}`")));
                    }
                };
                p.expect(Tok::Prime, "`'` after the state variable")?;
                p.expect(Tok::Equals, "`=`")?;
                let rhs = p.expr()?;
                match p.peek() {
                    Tok::Sep | Tok::End => {}
                    _ => return Err(syntax(p.pos(), "unexpected token after expression")),
                }
                eqs.push(Equation { target, pos, rhs });
            }
            _ => return Err(syntax(pos, "expected a header or an equation")),
        }
    }

    if eqs.is_empty() {
        return Err(syntax(Pos { line: 1, column: 1 }, "no equations"));
    }
    let n = states.unwrap_or(eqs.len());
    if n == 0 {
        return Err(syntax(Pos { line: 1, column: 1 }, "state dimension must be positive"));
    }
    let r = controls.unwrap_or_else(|| {
        eqs.iter()
            .map(|e| max_index(&e.rhs, VarKind::Control))
            .max()
            .unwrap_or(0)
    });

    let mut comps: Vec<Option<Polynomial>> = vec![None; n];
    for eq in &eqs {
        if eq.target > n {
            return Err(Error::UndeclaredVariable {
                name: format!("x{}", eq.target),
                line: eq.pos.line,
                column: eq.pos.column,
            });
        }
        if comps[eq.target - 1].is_some() {
            return Err(syntax(eq.pos, format!("duplicate equation for x{}", eq.target)));
        }
        comps[eq.target - 1] = Some(lower(&eq.rhs, n, r)?);
    }
    let mut components = Vec::with_capacity(n);
    for (i, c) in comps.into_iter().enumerate() {
        let c = c.ok_or_else(|| syntax(Pos { line: 1, column: 1 }, format!("missing equation for x{}", i + 1)))?;
        let c0 = c.constant_term();
        if c0 != 0.0 {
            return Err(Error::ConstantTerm {
                component: i + 1,
                value: c0,
            });
        }
        components.push(c);
    }
    VectorField::new(n, r, components)
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED_EXAMPLE: &str = "x1' = x1^2*x2 + x2 + 2*x1*x2^2; x2' = -x1 + 3*x1^2*x2 - 2*x1*x2^2";

    #[test]
    fn parses_two_dimensional_example() {
        let f = parse_system(WORKED_EXAMPLE).unwrap();
        assert_eq!(f.dim(), 2);
        assert_eq!(f.component(0).len(), 3);
        assert_eq!(f.component(1).len(), 3);
        assert_eq!(f.eval(&[1.0, 1.0], None).unwrap(), vec![4.0, 0.0]);
        assert_eq!(f.degree().x, 3);
    }

    #[test]
    fn zero_equation() {
        let f = parse_system("x1' = 0").unwrap();
        assert_eq!(f.dim(), 1);
        assert!(f.component(0).is_zero());
    }

    #[test]
    fn merges_repeated_terms() {
        let f = parse_system("x1' = x2 + x2\nx2' = -x1").unwrap();
        assert_eq!(f.component(0).len(), 1);
        assert_eq!(f.component(0).coefficient(&[0, 1]), 2.0);
    }

    #[test]
    fn headers_and_controls() {
        let f = parse_system("states 2\ncontrols 1\nx1' = x2\nx2' = u1 # input\n").unwrap();
        assert_eq!((f.dim(), f.controls()), (2, 1));
        assert_eq!(f.eval(&[0.0, 0.0], Some(&[3.0])).unwrap(), vec![0.0, 3.0]);
    }

    #[test]
    fn expands_parentheses_and_powers() {
        let f = parse_system("x1' = (x1 + x2)^2 / 2 - x1; x2' = -x2").unwrap();
        let v = f.eval(&[1.0, 2.0], None).unwrap();
        assert!((v[0] - 3.5).abs() < 1e-15);
    }

    #[test]
    fn reports_position_of_syntax_errors() {
        let err = parse_system("x1' = x1 +\nx2' = x1 * * x2").unwrap_err();
        match err {
            Error::Syntax { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_system("x1' = x2\nx2' = x1 * * x2").unwrap_err();
        assert_eq!(
            err,
            Error::Syntax {
                line: 2,
                column: 12,
                message: "expected number, variable or `(`".into()
            }
        );
    }

    #[test]
    fn rejects_undeclared_variables() {
        let err = parse_system("x1' = x3\nx2' = x1").unwrap_err();
        assert!(matches!(err, Error::UndeclaredVariable { ref name, line: 1, column: 7 } if name == "x3"));
        let err = parse_system("x1' = y").unwrap_err();
        assert!(matches!(err, Error::UndeclaredVariable { .. }));
        let err = parse_system("controls 1\nx1' = u2").unwrap_err();
        assert!(matches!(err, Error::UndeclaredVariable { ref name, .. } if name == "u2"));
    }

    #[test]
    fn rejects_non_polynomial_constructs() {
        for text in ["x1' = 1 / x1", "x1' = x1^0.5", "x1' = x1^-1", "x1' = x1^x1"] {
            let err = parse_system(text).unwrap_err();
            assert!(matches!(err, Error::NonPolynomial { .. }), "{text}: {err:?}");
        }
    }

    #[test]
    fn rejects_constant_terms() {
        let err = parse_system("x1' = x1 + 1").unwrap_err();
        assert!(matches!(err, Error::ConstantTerm { component: 1, .. }));
    }

    #[test]
    fn implicit_multiplication_is_an_error() {
        assert!(matches!(parse_system("x1' = 2 x1"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn missing_and_duplicate_equations() {
        assert!(parse_system("states 2\nx1' = x1").is_err());
        assert!(parse_system("x1' = x1\nx1' = -x1").is_err());
    }

    #[test]
    fn single_expressions() {
        let p = parse_polynomial("-2*x1 + x2^2", 2, 0).unwrap();
        assert_eq!(p.coefficient(&[1, 0]), -2.0);
        assert_eq!(p.coefficient(&[0, 2]), 1.0);
        let q = parse_polynomial("u1^2", 0, 1).unwrap();
        assert_eq!(q.coefficient(&[2]), 1.0);
        assert!(parse_polynomial("x1 x2", 2, 0).is_err());
        assert!(parse_polynomial("x3", 2, 0).is_err());
    }
}
