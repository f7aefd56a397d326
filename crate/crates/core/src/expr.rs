//! Arithmetic expressions over the covariate `x` and the confounder `u`.
//!
//! The grammar covers real literals, the variables `x` and `u`, the binary
//! operators `+ - * / ^`, unary minus, parentheses, and the functions
//! `min(a,b)`, `max(a,b)`, `clamp(v,lo,hi)`, `abs(v)`, `exp(v)`. Precedence is
//! `^` > unary `-` > `* /` > `+ -`, all left-associative except `^`. The
//! exponent of `^` must be a nonnegative integer literal so that expressions
//! stay total on their support.

use std::fmt;

/// A variable an expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    U,
}

/// Binary arithmetic operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }
}

/// Built-in functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Clamp,
    Abs,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Clamp => "clamp",
            Func::Abs => "abs",
            Func::Exp => "exp",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            Func::Clamp => 3,
            Func::Abs | Func::Exp => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            "clamp" => Some(Func::Clamp),
            "abs" => Some(Func::Abs),
            "exp" => Some(Func::Exp),
            _ => None,
        }
    }
}

/// Abstract syntax tree of a parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// Exponentiation with a constant nonnegative integer exponent.
    Pow(Box<Expr>, u32),
    Call(Func, Vec<Expr>),
}

/// Parse failure with the byte offset it occurred at.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{kind} at byte {offset}")]
pub struct ExprError {
    pub offset: usize,
    pub kind: ExprErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprErrorKind {
    Syntax {
        expected: Vec<&'static str>,
        found: String,
    },
    UnknownIdentifier {
        name: String,
    },
    NonConstantExponent,
    LiteralOverflow,
}

impl fmt::Display for ExprErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExprErrorKind::Syntax { expected, found } => {
                write!(f, "syntax error: expected {}, found {}", expected.join(" or "), found)
            }
            ExprErrorKind::UnknownIdentifier { name } => {
                write!(f, "unknown identifier `{name}` (only `x`, `u`, and the built-in functions are defined)")
            }
            ExprErrorKind::NonConstantExponent => {
                write!(f, "exponent must be a nonnegative integer literal")
            }
            ExprErrorKind::LiteralOverflow => write!(f, "number literal does not fit in a finite float"),
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Number(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src: src.as_bytes(), pos: 0 }
    }

    fn tokenize(mut self) -> Result<Vec<(Tok, usize)>, ExprError> {
        let mut out = Vec::new();
        loop {
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            let start = self.pos;
            if self.pos >= self.src.len() {
                out.push((Tok::Eof, start));
                return Ok(out);
            }
            let c = self.src[self.pos];
            let tok = match c {
                b'+' => {
                    self.pos += 1;
                    Tok::Plus
                }
                b'-' => {
                    self.pos += 1;
                    Tok::Minus
                }
                b'*' => {
                    self.pos += 1;
                    Tok::Star
                }
                b'/' => {
                    self.pos += 1;
                    Tok::Slash
                }
                b'^' => {
                    self.pos += 1;
                    Tok::Caret
                }
                b'(' => {
                    self.pos += 1;
                    Tok::LParen
                }
                b')' => {
                    self.pos += 1;
                    Tok::RParen
                }
                b',' => {
                    self.pos += 1;
                    Tok::Comma
                }
                b'0'..=b'9' => self.lex_number(start)?,
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    while self.pos < self.src.len()
                        && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                    {
                        self.pos += 1;
                    }
                    Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
                }
                other => {
                    return Err(ExprError {
                        offset: start,
                        kind: ExprErrorKind::Syntax {
                            expected: vec!["number", "identifier", "operator", "`(`"],
                            found: format!("`{}`", other as char),
                        },
                    })
                }
            };
            out.push((tok, start));
        }
    }

    fn lex_number(&mut self, start: usize) -> Result<Tok, ExprError> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos + 1 < self.src.len()
            && self.src[self.pos] == b'.'
            && self.src[self.pos + 1].is_ascii_digit()
        {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let mut probe = self.pos + 1;
            if probe < self.src.len() && (self.src[probe] == b'+' || self.src[probe] == b'-') {
                probe += 1;
            }
            if probe < self.src.len() && self.src[probe].is_ascii_digit() {
                self.pos = probe;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        let value: f64 = text.parse().expect("lexed number parses");
        if !value.is_finite() {
            return Err(ExprError { offset: start, kind: ExprErrorKind::LiteralOverflow });
        }
        Ok(Tok::Number(value))
    }
}

// ---------------------------------------------------------------------------
// Parser (recursive descent)
// ---------------------------------------------------------------------------

struct Parser {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &(Tok, usize) {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: Vec<&'static str>) -> ExprError {
        let (tok, offset) = self.peek();
        ExprError {
            offset: *offset,
            kind: ExprErrorKind::Syntax { expected, found: tok.describe() },
        }
    }

    fn expect(&mut self, want: Tok, label: &'static str) -> Result<(), ExprError> {
        if self.peek().0 == want {
            self.bump();
            Ok(())
        } else {
            Err(self.err(vec![label]))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().0 {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().0 {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek().0 == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            Ok(Expr::Neg(Box::new(inner)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek().0 != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let (tok, offset) = self.peek().clone();
        match tok {
            Tok::Number(v) if v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 => {
                self.bump();
                Ok(Expr::Pow(Box::new(base), v as u32))
            }
            _ => Err(ExprError { offset, kind: ExprErrorKind::NonConstantExponent }),
        }
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let (tok, offset) = self.peek().clone();
        match tok {
            Tok::Number(v) => {
                self.bump();
                Ok(Expr::Literal(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek().0 == Tok::LParen {
                    let func = Func::from_name(&name).ok_or(ExprError {
                        offset,
                        kind: ExprErrorKind::UnknownIdentifier { name: name.clone() },
                    })?;
                    self.bump();
                    let mut args = vec![self.expr()?];
                    for _ in 1..func.arity() {
                        self.expect(Tok::Comma, "`,`")?;
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::Call(func, args))
                } else {
                    match name.as_str() {
                        "x" => Ok(Expr::Var(Var::X)),
                        "u" => Ok(Expr::Var(Var::U)),
                        _ => Err(ExprError { offset, kind: ExprErrorKind::UnknownIdentifier { name } }),
                    }
                }
            }
            _ => Err(self.err(vec!["number", "identifier", "`(`", "`-`"])),
        }
    }
}

/// Parse `source` into an expression AST.
pub fn parse(source: &str) -> Result<Expr, ExprError> {
    let tokens = Lexer::new(source).tokenize()?;
    let mut parser = Parser { tokens, pos: 0 };
    let expr = parser.expr()?;
    if parser.peek().0 != Tok::Eof {
        return Err(parser.err(vec!["operator", "end of input"]));
    }
    Ok(expr)
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Integer power by repeated squaring; `powi(x, 0) == 1` including `x == 0`.
fn powi(base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

impl Expr {
    /// Evaluate at covariate `x` and confounder `u`. Referencing `u` when it
    /// is absent yields NaN; scenario validation rejects such expressions
    /// before they can reach any numeric path.
    pub fn eval(&self, x: f64, u: Option<f64>) -> f64 {
        match self {
            Expr::Literal(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::U) => u.unwrap_or(f64::NAN),
            Expr::Neg(e) => -e.eval(x, u),
            Expr::Binary(op, l, r) => {
                let a = l.eval(x, u);
                let b = r.eval(x, u);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Pow(base, e) => powi(base.eval(x, u), *e),
            Expr::Call(func, args) => {
                let v: Vec<f64> = args.iter().map(|a| a.eval(x, u)).collect();
                match func {
                    Func::Min => v[0].min(v[1]),
                    Func::Max => v[0].max(v[1]),
                    Func::Clamp => v[0].min(v[2]).max(v[1]),
                    Func::Abs => v[0].abs(),
                    Func::Exp => v[0].exp(),
                }
            }
        }
    }

    /// Whether the expression reads the confounder variable `u`.
    pub fn references_u(&self) -> bool {
        match self {
            Expr::Literal(_) => false,
            Expr::Var(v) => *v == Var::U,
            Expr::Neg(e) => e.references_u(),
            Expr::Binary(_, l, r) => l.references_u() || r.references_u(),
            Expr::Pow(b, _) => b.references_u(),
            Expr::Call(_, args) => args.iter().any(Expr::references_u),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Neg(_) => 3,
            Expr::Pow(..) => 4,
            Expr::Literal(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical printing
// ---------------------------------------------------------------------------

impl fmt::Display for Expr {
    /// Canonical form: minimal parentheses, shortest round-trip literals,
    /// spaces around `+`/`-`, tight `*`, `/`, and `^`. Reparsing the output
    /// reproduces the AST structurally.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::Var(Var::X) => write!(f, "x"),
            Expr::Var(Var::U) => write!(f, "u"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                if e.precedence() < 3 {
                    write!(f, "({e})")
                } else {
                    write!(f, "{e}")
                }
            }
            Expr::Binary(op, l, r) => {
                let prec = self.precedence();
                if l.precedence() < prec {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                match op {
                    BinOp::Add | BinOp::Sub => write!(f, " {} ", op.symbol())?,
                    BinOp::Mul | BinOp::Div => write!(f, "{}", op.symbol())?,
                }
                if r.precedence() <= prec {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Pow(base, e) => {
                if base.precedence() < 5 {
                    write!(f, "({base})^{e}")
                } else {
                    write!(f, "{base}^{e}")
                }
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}
