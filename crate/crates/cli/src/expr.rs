//! A small arithmetic language for perturbation terms and custom systems.
//!
//! Grammar, loosest binding first: `+ -`, `* /`, unary `-`, `^` with an
//! integer exponent. All binary operators associate to the left.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    /// Chart coordinate `y_{i+1}`.
    Y(usize),
    /// Ambient coordinate `x_{i+1}`.
    X(usize),
    /// Leaf value `c_{i+1}`.
    C(usize),
    /// Modulus `k_{i+1}`.
    K(usize),
    Pi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Sqrt(Box<Expr>),
}

/// Which variables an expression may reference, as counts per family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Scope {
    pub y: usize,
    pub x: usize,
    pub c: usize,
    pub k: usize,
}

/// Variable values for evaluation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Env<'a> {
    pub y: &'a [f64],
    pub x: &'a [f64],
    pub c: &'a [f64],
    pub k: &'a [f64],
}

pub fn parse_expression(src: &str) -> Result<Expr, ExprError> {
    if src.trim().is_empty() {
        return Err(ExprError::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

/// Parses and checks every variable against `scope`.
pub fn parse_in(src: &str, scope: &Scope) -> Result<Expr, ExprError> {
    let e = parse_expression(src)?;
    e.check(scope)?;
    Ok(e)
}

impl Expr {
    pub fn check(&self, scope: &Scope) -> Result<(), ExprError> {
        match self {
            Expr::Num(_) => Ok(()),
            Expr::Var(v) => {
                let ok = match *v {
                    Var::Y(i) => i < scope.y,
                    Var::X(i) => i < scope.x,
                    Var::C(i) => i < scope.c,
                    Var::K(i) => i < scope.k,
                    Var::Pi => true,
                };
                if ok {
                    Ok(())
                } else {
                    Err(ExprError::UnknownVariable(var_name(*v)))
                }
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sqrt(a) => a.check(scope),
            Expr::Bin(_, a, b) => {
                a.check(scope)?;
                b.check(scope)
            }
        }
    }

    /// Evaluates the expression; variables out of range read as NaN, so
    /// unchecked expressions surface as non-finite values.
    pub fn eval(&self, env: &Env<'_>) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => {
                let get = |s: &[f64], i: usize| s.get(i).copied().unwrap_or(f64::NAN);
                match *v {
                    Var::Y(i) => get(env.y, i),
                    Var::X(i) => get(env.x, i),
                    Var::C(i) => get(env.c, i),
                    Var::K(i) => get(env.k, i),
                    Var::Pi => std::f64::consts::PI,
                }
            }
            Expr::Neg(a) => -a.eval(env),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(env), b.eval(env));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Pow(a, e) => a.eval(env).powi(*e),
            Expr::Sqrt(a) => a.eval(env).sqrt(),
        }
    }

    /// True when some referenced variable satisfies `pred`.
    pub fn uses(&self, pred: &dyn Fn(Var) -> bool) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => pred(*v),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sqrt(a) => a.uses(pred),
            Expr::Bin(_, a, b) => a.uses(pred) || b.uses(pred),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Num(_) | Expr::Var(_) | Expr::Sqrt(_) => 5,
        }
    }
}

fn var_name(v: Var) -> String {
    match v {
        Var::Y(i) => format!("y{}", i + 1),
        Var::X(i) => format!("x{}", i + 1),
        Var::C(i) => format!("c{}", i + 1),
        Var::K(i) => format!("k{}", i + 1),
        Var::Pi => "pi".into(),
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints with the fewest parentheses that reparse to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(v) => f.write_str(&var_name(*v)),
            Expr::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, a.precedence() < 3)
            }
            Expr::Bin(op, a, b) => {
                let p = self.precedence();
                write_child(f, a, a.precedence() < p)?;
                f.write_str(match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                })?;
                write_child(f, b, b.precedence() <= p)
            }
            Expr::Pow(a, e) => {
                write_child(f, a, a.precedence() < 4)?;
                write!(f, "^{e}")
            }
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(b'-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let mut base = self.atom()?;
        while self.eat(b'^') {
            let negative = self.eat(b'-');
            self.skip_ws();
            let start = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.error("exponent must be an integer literal"));
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
            let mut e: i32 = text.parse().map_err(|_| ExprError::Syntax {
                offset: start,
                message: "exponent out of range".into(),
            })?;
            if negative {
                e = -e;
            }
            base = Expr::Pow(Box::new(base), e);
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if exp_start == self.pos {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii number");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => Err(ExprError::Syntax {
                offset: start,
                message: format!("invalid number `{text}`"),
            }),
        }
    }

    fn ident(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii ident");
        if name == "sqrt" {
            if !self.eat(b'(') {
                return Err(self.error("expected `(` after sqrt"));
            }
            let e = self.expr()?;
            if !self.eat(b')') {
                return Err(self.error("expected `)`"));
            }
            return Ok(Expr::Sqrt(Box::new(e)));
        }
        if name == "pi" {
            return Ok(Expr::Var(Var::Pi));
        }
        let (family, index) = name.split_at(1);
        let idx = match index.parse::<usize>() {
            Ok(i) if i >= 1 && !index.starts_with('0') => i - 1,
            _ => return Err(ExprError::UnknownVariable(name.into())),
        };
        let v = match family {
            "y" => Var::Y(idx),
            "x" => Var::X(idx),
            "c" => Var::C(idx),
            "k" => Var::K(idx),
            _ => return Err(ExprError::UnknownVariable(name.into())),
        };
        Ok(Expr::Var(v))
    }
}
