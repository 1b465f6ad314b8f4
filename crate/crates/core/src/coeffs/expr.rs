//! Arithmetic expressions in a single variable.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          // right associative
//! atom   := number | variable | func '(' expr (',' expr)? ')' | '(' expr ')'
//! ```
//!
//! so `-2^2` is `-(2^2)` and `2^3^2` is `2^(3^2)`. The exponent may carry its
//! own sign (`2^-1`).

use std::fmt;

use thiserror::Error;

/// The single free symbol an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Variable {
    /// `t`, used by the time coefficients.
    Time,
    /// `x`, used by the state perturbation.
    State,
}

impl Variable {
    pub fn symbol(self) -> &'static str {
        match self {
            Variable::Time => "t",
            Variable::State => "x",
        }
    }

    fn other(self) -> Variable {
        match self {
            Variable::Time => Variable::State,
            Variable::State => Variable::Time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Exp,
    Ln,
    Abs,
    Sin,
    Cos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Subtract,
    Multiply,
    Divide,
    Power,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Constant(f64),
    Variable,
    Negate(Box<Expr>),
    Call(UnaryFn, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character '{0}'")]
    UnexpectedChar(char),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("expected '{0}'")]
    Expected(char),
    #[error("unknown identifier '{0}'")]
    UnknownIdentifier(String),
    #[error("variable '{found}' is not allowed here (expected '{expected}')")]
    WrongVariable {
        found: &'static str,
        expected: &'static str,
    },
    #[error("function '{name}' takes {expected} argument(s)")]
    Arity { name: String, expected: usize },
    #[error("invalid number literal '{0}'")]
    BadNumber(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at offset {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("logarithm of a nonpositive number ({0})")]
    LogDomain(f64),
    #[error("power {0}^{1} is undefined")]
    PowerDomain(f64, f64),
    #[error("non-finite result")]
    NonFinite,
}

impl Expr {
    pub fn constant(value: f64) -> Expr {
        Expr::Constant(value)
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn call(f: UnaryFn, arg: Expr) -> Expr {
        Expr::Call(f, Box::new(arg))
    }

    pub fn negate(inner: Expr) -> Expr {
        Expr::Negate(Box::new(inner))
    }

    /// True when the tree never references the variable.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Constant(_) => true,
            Expr::Variable => false,
            Expr::Negate(e) | Expr::Call(_, e) => e.is_constant(),
            Expr::Binary(_, a, b) => a.is_constant() && b.is_constant(),
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Constant(c) => *c,
            Expr::Variable => x,
            Expr::Negate(e) => -e.eval(x)?,
            Expr::Call(f, e) => {
                let a = e.eval(x)?;
                match f {
                    UnaryFn::Exp => a.exp(),
                    UnaryFn::Ln => {
                        if a <= 0.0 {
                            return Err(EvalError::LogDomain(a));
                        }
                        a.ln()
                    }
                    UnaryFn::Abs => a.abs(),
                    UnaryFn::Sin => a.sin(),
                    UnaryFn::Cos => a.cos(),
                }
            }
            Expr::Binary(op, l, r) => {
                let a = l.eval(x)?;
                let b = r.eval(x)?;
                match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Subtract => a - b,
                    BinaryOp::Multiply => a * b,
                    BinaryOp::Divide => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                    BinaryOp::Power => {
                        if a == 0.0 && b < 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        let p = a.powf(b);
                        if p.is_nan() {
                            return Err(EvalError::PowerDomain(a, b));
                        }
                        p
                    }
                    BinaryOp::Min => a.min(b),
                    BinaryOp::Max => a.max(b),
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    /// Writes the expression with an explicit variable symbol. The output
    /// parses back to a tree that evaluates identically.
    pub fn display(&self, var: Variable) -> ExprDisplay<'_> {
        ExprDisplay { expr: self, var }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    var: Variable,
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(self.expr, self.var, f)
    }
}

fn write_expr(e: &Expr, var: Variable, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match e {
        Expr::Constant(c) => {
            if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                write!(f, "(-{:?})", -c)
            } else {
                write!(f, "{:?}", c)
            }
        }
        Expr::Variable => f.write_str(var.symbol()),
        Expr::Negate(inner) => {
            f.write_str("(-")?;
            write_expr(inner, var, f)?;
            f.write_str(")")
        }
        Expr::Call(func, arg) => {
            let name = match func {
                UnaryFn::Exp => "exp",
                UnaryFn::Ln => "ln",
                UnaryFn::Abs => "abs",
                UnaryFn::Sin => "sin",
                UnaryFn::Cos => "cos",
            };
            write!(f, "{}(", name)?;
            write_expr(arg, var, f)?;
            f.write_str(")")
        }
        Expr::Binary(op, a, b) => {
            let infix = match op {
                BinaryOp::Add => Some(" + "),
                BinaryOp::Subtract => Some(" - "),
                BinaryOp::Multiply => Some(" * "),
                BinaryOp::Divide => Some(" / "),
                BinaryOp::Power => Some(" ^ "),
                BinaryOp::Min | BinaryOp::Max => None,
            };
            match infix {
                Some(sym) => {
                    f.write_str("(")?;
                    write_expr(a, var, f)?;
                    f.write_str(sym)?;
                    write_expr(b, var, f)?;
                    f.write_str(")")
                }
                None => {
                    f.write_str(if *op == BinaryOp::Min { "min(" } else { "max(" })?;
                    write_expr(a, var, f)?;
                    f.write_str(", ")?;
                    write_expr(b, var, f)?;
                    f.write_str(")")
                }
            }
        }
    }
}

/// Parses `text` as an expression in `var`.
pub fn parse_expr(text: &str, var: Variable) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        var,
    };
    p.skip_ws();
    if p.pos == p.src.len() {
        return Err(p.error(ParseErrorKind::Empty));
    }
    let e = p.expr()?;
    p.skip_ws();
    if let Some(c) = p.peek() {
        return Err(p.error(ParseErrorKind::UnexpectedChar(c as char)));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    var: Variable,
}

impl Parser<'_> {
    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { offset: self.pos, kind }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(ParseErrorKind::Expected(c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat(b'+') {
                BinaryOp::Add
            } else if self.eat(b'-') {
                BinaryOp::Subtract
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat(b'*') {
                BinaryOp::Multiply
            } else if self.eat(b'/') {
                BinaryOp::Divide
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            Ok(Expr::negate(self.unary()?))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            Ok(Expr::binary(BinaryOp::Power, base, exponent))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error(ParseErrorKind::UnexpectedEnd)),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(c) => Err(self.error(ParseErrorKind::UnexpectedChar(c as char))),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == b'.') {
            self.pos += 1;
        }
        // Exponent only when a digit follows, so `2e` is rejected below.
        if matches!(self.peek(), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Constant(v)),
            _ => Err(ParseError {
                offset: start,
                kind: ParseErrorKind::BadNumber(text.to_string()),
            }),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        if name == self.var.symbol() {
            return Ok(Expr::Variable);
        }
        if name == self.var.other().symbol() {
            return Err(ParseError {
                offset: start,
                kind: ParseErrorKind::WrongVariable {
                    found: self.var.other().symbol(),
                    expected: self.var.symbol(),
                },
            });
        }
        enum Callee {
            Unary(UnaryFn),
            Binary(BinaryOp),
        }
        let callee = match name {
            "exp" => Callee::Unary(UnaryFn::Exp),
            "ln" => Callee::Unary(UnaryFn::Ln),
            "abs" => Callee::Unary(UnaryFn::Abs),
            "sin" => Callee::Unary(UnaryFn::Sin),
            "cos" => Callee::Unary(UnaryFn::Cos),
            "min" => Callee::Binary(BinaryOp::Min),
            "max" => Callee::Binary(BinaryOp::Max),
            _ => {
                return Err(ParseError {
                    offset: start,
                    kind: ParseErrorKind::UnknownIdentifier(name.to_string()),
                })
            }
        };
        let name = name.to_string();
        self.expect(b'(')?;
        let first = self.expr()?;
        let second = if self.eat(b',') { Some(self.expr()?) } else { None };
        let arity_error = |expected| ParseError {
            offset: start,
            kind: ParseErrorKind::Arity {
                name: name.clone(),
                expected,
            },
        };
        let out = match (callee, second) {
            (Callee::Unary(f), None) => Expr::call(f, first),
            (Callee::Binary(op), Some(b)) => Expr::binary(op, first, b),
            (Callee::Unary(_), Some(_)) => return Err(arity_error(1)),
            (Callee::Binary(_), None) => return Err(arity_error(2)),
        };
        self.expect(b')')?;
        Ok(out)
    }
}
