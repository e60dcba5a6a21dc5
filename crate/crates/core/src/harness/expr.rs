//! Tiny arithmetic language for right-hand sides.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | x1 | x2 | pi | sin '(' expr ')' | cos '(' expr ')' | '(' expr ')'
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    X1,
    X2,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens: &tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != tokens.len() {
            return Err(Error::Expression(format!("unexpected {:?} in {src:?}", tokens[p.pos])));
        }
        Ok(e)
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::X1 => x[0],
            Expr::X2 => x[1],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, b) => match **b {
                Expr::Num(p) if p.fract() == 0.0 && p.abs() <= 64.0 => a.eval(x).powi(p as i32),
                _ => a.eval(x).powf(b.eval(x)),
            },
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
        }
    }

    /// Whether the expression is the constant zero everywhere (syntactically).
    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
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
            // exponent part, e.g. 1e-3
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
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse()
                .map_err(|_| Error::Expression(format!("bad number {text:?}")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character {c:?}")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Tok],
    pos: usize,
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_op() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expression(format!("expected '{c}'")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if c == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if c == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(match self.unary()? {
                Expr::Num(v) => Expr::Num(-v),
                e => Expr::Neg(Box::new(e)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Expression("unexpected end of input".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => match name.as_str() {
                "x1" => Ok(Expr::X1),
                "x2" => Ok(Expr::X2),
                "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                "sin" | "cos" => {
                    self.expect('(')?;
                    let e = Box::new(self.expr()?);
                    self.expect(')')?;
                    Ok(if name == "sin" { Expr::Sin(e) } else { Expr::Cos(e) })
                }
                _ => Err(Error::Expression(format!("unknown identifier {name:?}"))),
            },
            Tok::Op(c) => Err(Error::Expression(format!("unexpected '{c}'"))),
        }
    }
}

/// Right-hand side selector: two named cases or a free expression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RhsSpec {
    ConstMinusOne,
    PolyX1p4X2p3,
    Expression(String),
}

impl RhsSpec {
    pub fn source(&self) -> &str {
        match self {
            RhsSpec::ConstMinusOne => "-1",
            RhsSpec::PolyX1p4X2p3 => "x1^4 - x2^3 + 1",
            RhsSpec::Expression(s) => s,
        }
    }

    pub fn compile(&self) -> Result<Expr> {
        Expr::parse(self.source())
    }
}

impl FromStr for RhsSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = match s.trim() {
            "const_minus_one" => RhsSpec::ConstMinusOne,
            "poly_x1p4_x2p3" => RhsSpec::PolyX1p4X2p3,
            other => RhsSpec::Expression(other.to_string()),
        };
        spec.compile()?;
        Ok(spec)
    }
}

impl TryFrom<String> for RhsSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RhsSpec> for String {
    fn from(r: RhsSpec) -> String {
        r.to_string()
    }
}

impl fmt::Display for RhsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RhsSpec::ConstMinusOne => f.write_str("const_minus_one"),
            RhsSpec::PolyX1p4X2p3 => f.write_str("poly_x1p4_x2p3"),
            RhsSpec::Expression(s) => f.write_str(s),
        }
    }
}
