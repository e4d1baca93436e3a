//! Tiny expression language for field specifications.
//!
//! Grammar: numbers, named variables, `pi`, `e`, the binary operators
//! `+ - * / ^`, unary minus and the functions `sin`, `cos`, `exp`.
//! Expressions are differentiated symbolically, which gives every field
//! built from a config string exact partial derivatives.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
}

impl Expr {
    pub fn num(x: f64) -> Expr {
        Expr::Num(x)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(x) if *x == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Num(x) if *x == 1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Num(x) => Some(*x),
            _ => None,
        }
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        match self {
            Expr::Num(x) => *x,
            Expr::Var(i) => p[*i],
            Expr::Neg(a) => -a.eval(p),
            Expr::Add(a, b) => a.eval(p) + b.eval(p),
            Expr::Sub(a, b) => a.eval(p) - b.eval(p),
            Expr::Mul(a, b) => a.eval(p) * b.eval(p),
            Expr::Div(a, b) => a.eval(p) / b.eval(p),
            Expr::Pow(a, b) => {
                let base = a.eval(p);
                match b.as_ref() {
                    Expr::Num(k) if k.fract() == 0.0 && k.abs() < 64.0 => base.powi(*k as i32),
                    other => base.powf(other.eval(p)),
                }
            }
            Expr::Sin(a) => a.eval(p).sin(),
            Expr::Cos(a) => a.eval(p).cos(),
            Expr::Exp(a) => a.eval(p).exp(),
            Expr::Ln(a) => a.eval(p).ln(),
        }
    }

    /// Bitmask of variables the expression mentions.
    pub fn dependencies(&self) -> u64 {
        match self {
            Expr::Num(_) => 0,
            Expr::Var(i) => 1u64 << i,
            Expr::Neg(a) | Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Ln(a) => {
                a.dependencies()
            }
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.dependencies() | b.dependencies(),
        }
    }

    pub fn diff(&self, var: usize) -> Expr {
        if self.dependencies() & (1u64 << var) == 0 {
            return Expr::Num(0.0);
        }
        match self {
            Expr::Num(_) => Expr::Num(0.0),
            Expr::Var(i) => Expr::Num(if *i == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.diff(var)),
            Expr::Add(a, b) => add(a.diff(var), b.diff(var)),
            Expr::Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Expr::Mul(a, b) => add(
                mul(a.diff(var), (**b).clone()),
                mul((**a).clone(), b.diff(var)),
            ),
            Expr::Div(a, b) => {
                // (a/b)' = a'/b - a b' / b^2
                let t1 = div(a.diff(var), (**b).clone());
                let t2 = div(
                    mul((**a).clone(), b.diff(var)),
                    pow((**b).clone(), Expr::Num(2.0)),
                );
                sub(t1, t2)
            }
            Expr::Pow(a, b) => {
                if let Some(k) = b.as_const() {
                    mul(
                        mul(Expr::Num(k), pow((**a).clone(), Expr::Num(k - 1.0))),
                        a.diff(var),
                    )
                } else {
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    let lna = Expr::Ln(a.clone());
                    let inner = add(
                        mul(b.diff(var), lna),
                        div(mul((**b).clone(), a.diff(var)), (**a).clone()),
                    );
                    mul(self.clone(), inner)
                }
            }
            Expr::Sin(a) => mul(Expr::Cos(a.clone()), a.diff(var)),
            Expr::Cos(a) => neg(mul(Expr::Sin(a.clone()), a.diff(var))),
            Expr::Exp(a) => mul(self.clone(), a.diff(var)),
            Expr::Ln(a) => div(a.diff(var), (**a).clone()),
        }
    }

    /// Replace every variable index `i` by `map[i]`.
    pub fn remap(&self, map: &[usize]) -> Expr {
        match self {
            Expr::Num(x) => Expr::Num(*x),
            Expr::Var(i) => Expr::Var(map[*i]),
            Expr::Neg(a) => Expr::Neg(Box::new(a.remap(map))),
            Expr::Add(a, b) => Expr::Add(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Div(a, b) => Expr::Div(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Pow(a, b) => Expr::Pow(Box::new(a.remap(map)), Box::new(b.remap(map))),
            Expr::Sin(a) => Expr::Sin(Box::new(a.remap(map))),
            Expr::Cos(a) => Expr::Cos(Box::new(a.remap(map))),
            Expr::Exp(a) => Expr::Exp(Box::new(a.remap(map))),
            Expr::Ln(a) => Expr::Ln(Box::new(a.remap(map))),
        }
    }

    pub fn display<'a>(&'a self, names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names }
    }
}

// Smart constructors fold constants so derivative trees stay small.

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(x) => Expr::Num(-x),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ if a.is_zero() || b.is_zero() => Expr::Num(0.0),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x / y),
        _ if a.is_zero() => Expr::Num(0.0),
        _ if b.is_one() => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x.powf(*y)),
        _ if b.is_zero() => Expr::Num(1.0),
        _ if b.is_one() => a,
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self.expr, self.names, f)
    }
}

fn write_expr(e: &Expr, names: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Num(x) => {
            if *x < 0.0 {
                write!(f, "({})", x)
            } else {
                write!(f, "{}", x)
            }
        }
        Expr::Var(i) => match names.get(*i) {
            Some(n) => write!(f, "{}", n),
            None => write!(f, "#{}", i),
        },
        Expr::Neg(a) => {
            write!(f, "(-")?;
            write_expr(a, names, f)?;
            write!(f, ")")
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
            let op = match e {
                Expr::Add(..) => "+",
                Expr::Sub(..) => "-",
                Expr::Mul(..) => "*",
                Expr::Div(..) => "/",
                _ => "^",
            };
            write!(f, "(")?;
            write_expr(a, names, f)?;
            write!(f, "{}", op)?;
            write_expr(b, names, f)?;
            write!(f, ")")
        }
        Expr::Sin(a) | Expr::Cos(a) | Expr::Exp(a) | Expr::Ln(a) => {
            let name = match e {
                Expr::Sin(_) => "sin",
                Expr::Cos(_) => "cos",
                Expr::Exp(_) => "exp",
                _ => "ln",
            };
            write!(f, "{}(", name)?;
            write_expr(a, names, f)?;
            write!(f, ")")
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> std::result::Result<Vec<(usize, Token)>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text: String = chars[start..i].iter().collect();
            let x: f64 = text
                .parse()
                .map_err(|_| format!("bad number '{}' at column {}", text, start + 1))?;
            out.push((start, Token::Num(x)));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((start, Token::Ident(chars[start..i].iter().collect())));
        } else if "+-*/^".contains(c) {
            out.push((i, Token::Op(c)));
            i += 1;
        } else if c == '(' {
            out.push((i, Token::LParen));
            i += 1;
        } else if c == ')' {
            out.push((i, Token::RParen));
            i += 1;
        } else {
            return Err(format!("unexpected character '{}' at column {}", c, i + 1));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Token)>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0 + 1).unwrap_or(0)
    }

    fn expr(&mut self) -> std::result::Result<Expr, String> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c)) = self.peek() {
            let c = *c;
            if c != '+' && c != '-' {
                break;
            }
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' { add(lhs, rhs) } else { sub(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> std::result::Result<Expr, String> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c)) = self.peek() {
            let c = *c;
            if c != '*' && c != '/' {
                break;
            }
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' { mul(lhs, rhs) } else { div(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> std::result::Result<Expr, String> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(neg(self.unary()?))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> std::result::Result<Expr, String> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(pow(base, exponent));
        }
        Ok(base)
    }

    fn atom(&mut self) -> std::result::Result<Expr, String> {
        let col = self.column();
        let tok = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or_else(|| "unexpected end of expression".to_string())?;
        self.pos += 1;
        match tok.1 {
            Token::Num(x) => Ok(Expr::Num(x)),
            Token::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Token::Ident(name) => {
                if let Some(Token::LParen) = self.peek() {
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_rparen()?;
                    return match name.as_str() {
                        "sin" => Ok(Expr::Sin(Box::new(arg))),
                        "cos" => Ok(Expr::Cos(Box::new(arg))),
                        "exp" => Ok(Expr::Exp(Box::new(arg))),
                        _ => Err(format!("unknown function '{}' at column {}", name, col)),
                    };
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Expr::Var(i));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                    "e" => Ok(Expr::Num(std::f64::consts::E)),
                    _ => Err(format!("unknown variable '{}' at column {}", name, col)),
                }
            }
            other => Err(format!("unexpected token {:?} at column {}", other, col)),
        }
    }

    fn expect_rparen(&mut self) -> std::result::Result<(), String> {
        match self.peek() {
            Some(Token::RParen) => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(format!("expected ')' at column {}", self.column())),
        }
    }
}

/// Parse `src` with variables named by `vars` (index = position in the slice).
pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
    parse_at(src, vars, "")
}

/// Like [`parse`] but errors carry the config key path of the string.
pub fn parse_at(src: &str, vars: &[&str], path: &str) -> Result<Expr> {
    let wrap = |message: String| Error::Parse {
        path: path.to_string(),
        message: format!("{} in '{}'", message, src),
    };
    let toks = tokenize(src).map_err(wrap)?;
    if toks.is_empty() {
        return Err(wrap("empty expression".into()));
    }
    let mut p = Parser { toks, pos: 0, vars };
    let e = p.expr().map_err(wrap)?;
    if p.pos != p.toks.len() {
        let col = p.column();
        return Err(wrap(format!("trailing input at column {}", col)));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    const V: &[&str] = &["u", "v", "x1", "x2"];

    #[test]
    fn precedence_and_unary_minus() {
        let e = parse("-x1^2 + 3*u/2", V).unwrap();
        assert_eq!(e.eval(&[2.0, 0.0, 3.0, 0.0]), -9.0 + 3.0);
        let e = parse("2^3^2", V).unwrap();
        assert_eq!(e.eval(&[0.0; 4]), 512.0);
    }

    #[test]
    fn constants_and_functions() {
        let e = parse("sin(pi/2) + cos(0) + exp(1) - e", V).unwrap();
        assert!((e.eval(&[0.0; 4]) - 2.0).abs() < 1e-15);
        let e = parse("1.5e-1 * 2E1", V).unwrap();
        assert!((e.eval(&[0.0; 4]) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_product_of_trig() {
        let e = parse("sin(x1)*sin(x2)", V).unwrap();
        let d = e.diff(2);
        let p = [0.0, 0.0, 0.4, 1.1];
        assert!((d.eval(&p) - 0.4f64.cos() * 1.1f64.sin()).abs() < 1e-15);
        assert!(e.diff(0).is_zero());
    }

    #[test]
    fn derivative_of_quotient_and_power() {
        let e = parse("exp(x1)/(2+cos(u))^2", V).unwrap();
        let p = [0.7, 0.0, 0.3, 0.0];
        let h = 1e-6;
        let mut pp = p;
        pp[0] += h;
        let mut pm = p;
        pm[0] -= h;
        let fd = (e.eval(&pp) - e.eval(&pm)) / (2.0 * h);
        assert!((e.diff(0).eval(&p) - fd).abs() < 1e-8);
    }

    #[test]
    fn errors_name_the_problem() {
        let err = parse_at("sin(q)", V, "raw.f").unwrap_err().to_string();
        assert!(err.contains("raw.f") && err.contains("'q'"), "{}", err);
        assert!(parse("(x1", V).is_err());
        assert!(parse("x1 x2", V).is_err());
        assert!(parse("tan(x1)", V).is_err());
        assert!(parse("", V).is_err());
    }
}
